//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundEnvelope, GeneralParams, Theorem};
use crate::combperm::{center_normalize, gaussian_projected_means, latin_square_means, CellNoise, PermArrayModel};
use crate::error::{Error, Result};
use crate::law::Law;
use crate::localdep::{build_mdep_field, Boundary, LocalFieldModel, MomentCertificate};
use crate::mc::{substream, McPlan};
use crate::model::SteinModel;
use crate::tailmc::MIN_PLAIN_SAMPLES;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    #[serde(default)]
    pub estimation: EstimationSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub bound: BoundSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Model sizes to sweep: `n` for comb models, the extent of a 1-D local
    /// model. Absent means the model as written.
    pub sizes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Local {
        id: Option<String>,
        shape: Vec<usize>,
        #[serde(default)]
        m: usize,
        #[serde(default = "default_boundary")]
        boundary: Boundary,
        innovation: Law,
        weights: Option<Vec<f64>>,
    },
    Comb {
        id: Option<String>,
        n: usize,
        means: MeansSpec,
        noise: Option<NoiseSpec>,
    },
}

fn default_boundary() -> Boundary {
    Boundary::Open
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeansSpec {
    GaussianProjected { seed: u64 },
    LatinSquare,
    Explicit { rows: Vec<Vec<f64>> },
    /// Whitespace- or comma-separated rows of numbers.
    File { path: PathBuf },
}

/// Cell noise with a common standardized law and a single scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub law: Law,
    pub sd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    /// Tilting when the model is a linear form, plain otherwise.
    Auto,
    Plain,
    Tilt,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSpec {
    pub method: MethodSpec,
    pub samples: u64,
    /// Explicit grid; when absent, `0, z_step, ...` up to `z_max`.
    pub z_grid: Option<Vec<f64>>,
    pub z_step: f64,
    /// Defaults to `n^{1/6}`.
    pub z_max: Option<f64>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EstimationSpec {
    fn default() -> Self {
        Self { method: MethodSpec::Auto, samples: 100_000, z_grid: None, z_step: 0.5, z_max: None, seed: 1, workers: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    Enumerate,
    Mc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionSet {
    Stock,
    Library,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub mode: VerifyMode,
    pub samples: u64,
    pub functions: FunctionSet,
    pub betas: Vec<f64>,
    pub ts: Vec<f64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            mode: VerifyMode::Enumerate,
            samples: 100_000,
            functions: FunctionSet::Library,
            betas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ts: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralSpec {
    /// Derive `(r, τ, m₀, ρ)` from an application preset instead of listing them.
    pub preset: Option<Theorem>,
    pub r: Option<[f64; 5]>,
    pub tau: Option<[f64; 5]>,
    pub m0: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    /// Defaults to the theorem matching the model kind.
    pub theorem: Option<Theorem>,
    pub c_abs: f64,
    pub c_range: f64,
    /// `a_n` (local) or `α_n` (comb). Local defaults to `√n`; comb to the
    /// value minimizing `δ_n` among certifiable ones.
    pub a_n: Option<f64>,
    /// Defaults to the model's moment certificate at `a_n`.
    pub b: Option<f64>,
    pub kappa: Option<f64>,
    pub general: Option<GeneralSpec>,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self { theorem: None, c_abs: 1.0, c_range: 1.0, a_n: None, b: None, kappa: None, general: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] }
    }
}

impl ExperimentConfig {
    /// Parses and validates. Parse errors carry the TOML line and column.
    /// Relative `file` paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let (Some(base), ModelSpec::Comb { means: MeansSpec::File { path }, .. }) = (base, &mut cfg.model) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent()).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})", self.schema_version));
        }
        match &self.model {
            ModelSpec::Local { shape, innovation, .. } => {
                if shape.is_empty() || shape.contains(&0) {
                    return bad("model.shape must be non-empty with positive extents".into());
                }
                innovation.validate().map_err(|e| Error::Config(format!("model.innovation: {e}")))?;
            }
            ModelSpec::Comb { n, means, noise, .. } => {
                if *n < 2 {
                    return bad("model.n must be at least 2".into());
                }
                if let MeansSpec::File { path } = means {
                    if !path.is_file() {
                        return bad(format!("model.means.path {} does not exist", path.display()));
                    }
                }
                if let Some(ns) = noise {
                    ns.law.validate().map_err(|e| Error::Config(format!("model.noise.law: {e}")))?;
                    if !(ns.sd >= 0.0 && ns.sd.is_finite()) {
                        return bad("model.noise.sd must be finite and non-negative".into());
                    }
                }
            }
        }
        let est = &self.estimation;
        if est.samples < MIN_PLAIN_SAMPLES {
            return bad(format!("estimation.samples must be at least {MIN_PLAIN_SAMPLES}"));
        }
        if est.workers == 0 {
            return bad("estimation.workers must be positive".into());
        }
        if let Some(g) = &est.z_grid {
            if g.is_empty() || g.iter().any(|z| !z.is_finite() || *z < 0.0) {
                return bad("estimation.z_grid must be non-empty, finite and non-negative".into());
            }
            if g.windows(2).any(|w| w[1] <= w[0]) {
                return bad("estimation.z_grid must be sorted ascending".into());
            }
        }
        if !(est.z_step > 0.0 && est.z_step.is_finite()) {
            return bad("estimation.z_step must be positive".into());
        }
        if est.z_max.is_some_and(|z| !(z >= 0.0 && z.is_finite())) {
            return bad("estimation.z_max must be finite and non-negative".into());
        }
        if self.verify.mode == VerifyMode::Mc && self.verify.samples < MIN_PLAIN_SAMPLES {
            return bad(format!("verify.samples must be at least {MIN_PLAIN_SAMPLES}"));
        }
        for (name, g) in [("verify.betas", &self.verify.betas), ("verify.ts", &self.verify.ts)] {
            if g.is_empty() || g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("{name} must be non-empty, finite and non-negative"));
            }
        }
        let b = &self.bound;
        if !(b.c_abs > 0.0 && b.c_range > 0.0) {
            return bad("bound.c_abs and bound.c_range must be positive".into());
        }
        if let Some(sizes) = &self.experiment.sizes {
            if sizes.is_empty() || sizes.contains(&0) {
                return bad("experiment.sizes must be non-empty and positive".into());
            }
            if let ModelSpec::Local { shape, .. } = &self.model {
                if shape.len() != 1 {
                    return bad("experiment.sizes applies to one-dimensional local models only".into());
                }
            }
        }
        if self.output.formats.is_empty() {
            return bad("output.formats must not be empty".into());
        }
        Ok(())
    }

    pub fn plan(&self, salt: u64) -> McPlan {
        McPlan::new(self.estimation.samples, self.estimation.seed).with_workers(self.estimation.workers).derived(salt)
    }
}

/// A model built from its spec.
#[derive(Clone, Debug)]
pub enum BuiltModel {
    Local(LocalFieldModel),
    Comb(PermArrayModel),
}

impl BuiltModel {
    pub fn as_model(&self) -> &dyn SteinModel {
        match self {
            BuiltModel::Local(m) => m,
            BuiltModel::Comb(m) => m,
        }
    }

    /// Number of summands.
    pub fn n(&self) -> usize {
        match self {
            BuiltModel::Local(m) => m.n(),
            BuiltModel::Comb(m) => m.n(),
        }
    }

    pub fn default_theorem(&self) -> Theorem {
        match self {
            BuiltModel::Local(_) => Theorem::Local,
            BuiltModel::Comb(_) => Theorem::Comb,
        }
    }

    pub fn certify(&self, a_n: f64) -> Result<MomentCertificate> {
        match self {
            BuiltModel::Local(m) => m.certify_moments(a_n),
            BuiltModel::Comb(m) => m.certify_moments(a_n),
        }
    }
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(k, l)| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), k + 1))))
                .collect()
        })
        .collect()
}

impl ModelSpec {
    /// The same spec at size `n`.
    pub fn with_size(&self, size: usize) -> ModelSpec {
        let mut spec = self.clone();
        match &mut spec {
            ModelSpec::Local { shape, id, .. } => {
                shape[0] = size;
                if let Some(id) = id {
                    *id = format!("{id}-{size}");
                }
            }
            ModelSpec::Comb { n, id, .. } => {
                *n = size;
                if let Some(id) = id {
                    *id = format!("{id}-{size}");
                }
            }
        }
        spec
    }

    pub fn build(&self) -> Result<BuiltModel> {
        match self {
            ModelSpec::Local { shape, m, boundary, innovation, weights, .. } => Ok(BuiltModel::Local(build_mdep_field(
                shape.clone(),
                *m,
                innovation.clone(),
                weights.clone(),
                *boundary,
            )?)),
            ModelSpec::Comb { n, means, noise, .. } => {
                let noise_for = |n: usize| -> Result<Option<CellNoise>> {
                    noise
                        .as_ref()
                        .map(|ns| Ok(CellNoise { law: ns.law.standardized()?, sd: vec![ns.sd; n * n] }))
                        .transpose()
                };
                let model = match means {
                    MeansSpec::GaussianProjected { seed } => {
                        let base = gaussian_projected_means(*n, &mut substream(*seed, 0))?;
                        match noise_for(*n)? {
                            None => base,
                            Some(cn) => center_normalize(&base.means(), Some(cn))?,
                        }
                    }
                    MeansSpec::LatinSquare => {
                        let base = latin_square_means(*n)?;
                        match noise_for(*n)? {
                            None => base,
                            Some(cn) => center_normalize(&base.means(), Some(cn))?,
                        }
                    }
                    MeansSpec::Explicit { rows } => center_normalize(rows, noise_for(*n)?)?,
                    MeansSpec::File { path } => center_normalize(&read_matrix(path)?, noise_for(*n)?)?,
                };
                if model.n() != *n {
                    return Err(Error::Config(format!("means matrix is {0}x{0}, model.n is {n}", model.n())));
                }
                Ok(BuiltModel::Comb(model))
            }
        }
    }

    pub fn id(&self) -> String {
        match self {
            ModelSpec::Local { id: Some(id), .. } | ModelSpec::Comb { id: Some(id), .. } => id.clone(),
            ModelSpec::Local { shape, m, .. } => {
                let dims: Vec<String> = shape.iter().map(|s| s.to_string()).collect();
                format!("local-{}-m{m}", dims.join("x"))
            }
            ModelSpec::Comb { n, .. } => format!("comb-{n}"),
        }
    }
}

/// Everything needed to evaluate a theorem envelope for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBound {
    pub theorem: Theorem,
    pub n: f64,
    pub kappa: f64,
    pub a_n: f64,
    pub b: f64,
    pub certificate: Option<MomentCertificate>,
    pub c_abs: f64,
    pub c_range: f64,
    pub general: Option<GeneralParams>,
    /// Always true: unspecified constants are set to 1.
    pub shape_only: bool,
}

impl ResolvedBound {
    pub fn envelope(&self, z: f64) -> Result<BoundEnvelope> {
        match self.theorem {
            Theorem::Local => bounds::theorem21_bound(self.kappa, self.a_n, self.b, self.n, z, self.c_abs, self.c_range),
            Theorem::Comb => bounds::theorem41_bound(self.a_n, self.b, self.n, z, self.c_abs, self.c_range),
            Theorem::Heinrich => bounds::heinrich_bound(self.n, self.a_n, z, self.c_abs, self.c_range),
            Theorem::General => {
                bounds::general_bound(self.general.as_ref().expect("general params resolved"), z)
            }
        }
    }
}

/// Geometric grid of candidate `α_n` values in `[1, n]`.
fn alpha_candidates(n: usize) -> Vec<f64> {
    let top = (n as f64).max(1.0);
    let k = 200;
    (0..=k).map(|i| top.powf(i as f64 / k as f64)).collect()
}

/// `α_n` minimizing `δ_n` over certifiable candidates, with its certificate.
pub fn best_comb_alpha(model: &PermArrayModel) -> Result<(f64, MomentCertificate)> {
    let n = model.n() as f64;
    let mut best: Option<(f64, f64, MomentCertificate)> = None;
    for a in alpha_candidates(model.n()) {
        let Ok(cert) = model.certify_moments(a) else { continue };
        let Ok(env) = bounds::theorem41_bound(a, cert.b.max(1.0), n, 0.0, 1.0, 1.0) else { continue };
        if best.as_ref().is_none_or(|b| env.delta < b.1) {
            best = Some((a, env.delta, cert));
        }
    }
    best.map(|(a, _, c)| (a, c)).ok_or_else(|| Error::Certificate("no certifiable alpha_n in [1, n]".into()))
}

impl BoundSpec {
    pub fn resolve(&self, model: &BuiltModel) -> Result<ResolvedBound> {
        let theorem = self.theorem.unwrap_or_else(|| model.default_theorem());
        let n = model.n() as f64;
        let kappa = self.kappa.unwrap_or(match model {
            BuiltModel::Local(m) => m.kappa() as f64,
            BuiltModel::Comb(_) => 1.0,
        });
        let comb_like = matches!(model, BuiltModel::Comb(_));
        let (a_n, certificate) = match (self.a_n, model) {
            (Some(a), _) => (a, if self.b.is_none() { Some(model.certify(a)?) } else { None }),
            (None, BuiltModel::Comb(m)) => {
                let (a, c) = best_comb_alpha(m)?;
                (a, Some(c))
            }
            (None, BuiltModel::Local(_)) => {
                let a = n.sqrt().max(1.0);
                (a, if self.b.is_none() { Some(model.certify(a)?) } else { None })
            }
        };
        let b = self.b.unwrap_or_else(|| certificate.map_or(1.0, |c| c.b)).max(1.0);
        let general = if theorem == Theorem::General {
            let g = self
                .general
                .as_ref()
                .ok_or_else(|| Error::Config("bound.theorem = general needs a [bound.general] table".into()))?;
            let params = match g.preset {
                Some(Theorem::Local) => bounds::preset_local(kappa, a_n, b, n, self.c_abs)?,
                Some(Theorem::Comb) => bounds::preset_comb(a_n, b, n, self.c_abs)?,
                Some(other) => return Err(Error::Config(format!("no general preset for {other:?}"))),
                None => {
                    let need = |name: &str| Error::Config(format!("bound.general.{name} is required without a preset"));
                    GeneralParams::new(
                        g.r.ok_or_else(|| need("r"))?,
                        g.tau.ok_or_else(|| need("tau"))?,
                        g.m0.ok_or_else(|| need("m0"))?,
                        g.rho.unwrap_or(0.0),
                        self.c_abs,
                    )?
                }
            };
            Some(params)
        } else {
            None
        };
        if theorem == Theorem::Comb && !comb_like && self.a_n.is_none() {
            return Err(Error::Config("bound.theorem = comb on a local model needs bound.a_n".into()));
        }
        Ok(ResolvedBound { theorem, n, kappa, a_n, b, certificate, c_abs: self.c_abs, c_range: self.c_range, general, shape_only: true })
    }
}

impl EstimationSpec {
    /// The configured grid, or `0, z_step, ...` up to `z_max` (default `n^{1/6}`).
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if let Some(g) = &self.z_grid {
            return g.clone();
        }
        let top = self.z_max.unwrap_or((n as f64).powf(1.0 / 6.0));
        let steps = (top / self.z_step + 1e-9).floor() as usize;
        (0..=steps).map(|k| k as f64 * self.z_step).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOCAL: &str = r#"
schema_version = 1

[model]
kind = "local"
shape = [8]
m = 1
innovation = { law = "discrete", atoms = [[-1.0, 0.5], [1.0, 0.5]] }

[estimation]
samples = 20000
z_grid = [0.0, 1.0, 2.0]
seed = 7
"#;

    #[test]
    fn parses_local_config() {
        let cfg = ExperimentConfig::from_toml_str(LOCAL, None).unwrap();
        assert_eq!(cfg.estimation.seed, 7);
        assert_eq!(cfg.verify, VerifySpec::default());
        let built = cfg.model.build().unwrap();
        assert_eq!(built.n(), 8);
        assert_eq!(cfg.model.id(), "local-8-m1");
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string(), None).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let broken = LOCAL.replace("m = 1", "m = = 1");
        let err = ExperimentConfig::from_toml_str(&broken, None).unwrap_err().to_string();
        assert!(err.contains("line 7"), "{err}");
        let unknown = LOCAL.replace("m = 1", "mm = 1");
        assert!(ExperimentConfig::from_toml_str(&unknown, None).is_err());
    }

    #[test]
    fn validation_rules() {
        let unsorted = LOCAL.replace("[0.0, 1.0, 2.0]", "[1.0, 0.0]");
        assert!(ExperimentConfig::from_toml_str(&unsorted, None).unwrap_err().to_string().contains("ascending"));
        let few = LOCAL.replace("samples = 20000", "samples = 10");
        assert!(ExperimentConfig::from_toml_str(&few, None).is_err());
        let version = LOCAL.replace("schema_version = 1", "schema_version = 9");
        assert!(ExperimentConfig::from_toml_str(&version, None).is_err());
        let comb = r#"
schema_version = 1
[model]
kind = "comb"
n = 4
means = { source = "file", path = "/nonexistent/means.csv" }
"#;
        assert!(ExperimentConfig::from_toml_str(comb, None).unwrap_err().to_string().contains("does not exist"));
    }

    #[test]
    fn comb_means_from_file_and_grid_default() {
        let dir = std::env::temp_dir().join(format!("steinmd-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("m.csv"), "1,2,3\n4,5,7\n# note\n0,1,0\n").unwrap();
        let text = r#"
schema_version = 1
[model]
kind = "comb"
n = 3
means = { source = "file", path = "m.csv" }
"#;
        let cfg = ExperimentConfig::from_toml_str(text, Some(&dir)).unwrap();
        let built = cfg.model.build().unwrap();
        assert_eq!(built.n(), 3);
        assert_eq!(cfg.estimation.grid(64), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let rb = cfg.bound.resolve(&built).unwrap();
        assert_eq!(rb.theorem, Theorem::Comb);
        assert!(rb.a_n >= 1.0 && rb.b >= 1.0);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn general_preset_local_has_tau_three() {
        let text = format!("{LOCAL}\n[bound]\ntheorem = \"general\"\ngeneral = {{ preset = \"local\" }}\n");
        let cfg = ExperimentConfig::from_toml_str(&text, None).unwrap();
        let rb = cfg.bound.resolve(&cfg.model.build().unwrap()).unwrap();
        assert_eq!(bounds::tau_of(rb.general.as_ref().unwrap()), 3.0);
    }

    #[test]
    fn best_alpha_is_certifiable_minimum() {
        let m = latin_square_means(8).unwrap();
        let (a, cert) = best_comb_alpha(&m).unwrap();
        let d = |a: f64| bounds::theorem41_bound(a, m.certify_moments(a).unwrap().b.max(1.0), 8.0, 0.0, 1.0, 1.0).unwrap().delta;
        for other in alpha_candidates(8) {
            assert!(d(a) <= d(other) + 1e-12);
        }
        assert_eq!(cert.a_n, a);
    }
}
