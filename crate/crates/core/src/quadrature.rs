//! Adaptive Gauss–Kronrod (7, 15) quadrature.
//!
//! Not used by any evaluator on a hot path; it is the independent route that
//! closed forms elsewhere in the crate are checked against.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Upper limit on the number of subintervals kept by [`integrate`].
const MAX_PIECES: usize = 4000;

/// `∫_a^b f` by global adaptive bisection: the piece with the largest error
/// estimate is split until the summed estimate is below `abs_tol`, the
/// estimate reaches rounding level, or `MAX_PIECES` pieces are in use.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -integrate(f, b, a, abs_tol);
    }
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        let scale: f64 = pieces.iter().map(|p| p.2.abs()).sum();
        if err <= abs_tol.max(50.0 * f64::EPSILON * scale) || pieces.len() >= MAX_PIECES {
            return total;
        }
        let k = (0..pieces.len()).max_by(|&x, &y| pieces[x].3.total_cmp(&pieces[y].3)).unwrap_or(0);
        let (lo, hi, _, _) = pieces[k];
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return total;
        }
        let (l, le) = gk15(&f, lo, mid);
        let (r, re) = gk15(&f, mid, hi);
        pieces[k] = (lo, mid, l, le);
        pieces.push((mid, hi, r, re));
    }
}

/// Integrates over consecutive pieces `[p_k, p_{k+1}]`, so kinks at the
/// listed points do not slow convergence.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, points: &[f64], abs_tol: f64) -> f64 {
    let tol = abs_tol / points.len().max(1) as f64;
    points.windows(2).map(|w| integrate(&f, w[0], w[1], tol)).sum()
}
