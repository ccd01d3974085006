//! Versioned CSV/JSON output. Every CSV starts with a `# schema=<name> v<N>`
//! line followed by the header; every JSON document carries `schema` and
//! `schema_version`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{self, Theorem};
use crate::config::ResolvedBound;
use crate::error::{Error, Result};
use crate::stein::CheckRecord;
use crate::tailmc::TailRow;

pub const TAIL_SCHEMA: &str = "steinmd.tail";
pub const TAIL_SCHEMA_VERSION: u32 = 1;
pub const TAIL_COLUMNS: [&str; 13] = [
    "model_id", "n", "z", "method", "p_hat", "stderr", "ratio", "ratio_lo", "ratio_hi", "envelope", "in_range", "samples",
    "seed",
];

pub const BOUND_SCHEMA: &str = "steinmd.bound";
pub const BOUND_SCHEMA_VERSION: u32 = 1;
pub const BOUND_COLUMNS: [&str; 16] = [
    "theorem", "z", "envelope", "delta", "in_range", "range_upper", "c_abs", "c_range", "n", "kappa", "a_n", "b", "tau",
    "z0", "rho", "shape_only",
];

pub const VERIFY_SCHEMA: &str = "steinmd.verify";
pub const VERIFY_SCHEMA_VERSION: u32 = 1;

pub const FIT_SCHEMA: &str = "steinmd.envelope_fit";
pub const FIT_SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_SCHEMA: &str = "steinmd.manifest";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("output error: {e}"))
}

/// Envelope evaluation at one `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub theorem: Theorem,
    pub z: f64,
    pub envelope: f64,
    pub delta: f64,
    pub in_range: bool,
    pub range_upper: f64,
    pub c_abs: f64,
    pub c_range: f64,
    pub n: f64,
    pub kappa: f64,
    pub a_n: f64,
    pub b: f64,
    /// General bound only.
    pub tau: Option<f64>,
    pub z0: Option<f64>,
    pub rho: Option<f64>,
    pub shape_only: bool,
}

impl BoundRow {
    pub fn evaluate(rb: &ResolvedBound, z: f64) -> Result<Self> {
        let env = rb.envelope(z)?;
        let g = rb.general.as_ref();
        Ok(BoundRow {
            theorem: env.theorem,
            z,
            envelope: env.envelope,
            delta: env.delta,
            in_range: env.in_range,
            range_upper: env.range_upper,
            c_abs: rb.c_abs,
            c_range: rb.c_range,
            n: rb.n,
            kappa: rb.kappa,
            a_n: rb.a_n,
            b: rb.b,
            tau: g.map(bounds::tau_of),
            z0: g.map(bounds::z0_of),
            rho: g.map(|p| p.rho),
            shape_only: rb.shape_only,
        })
    }
}

fn write_csv<T: Serialize>(mut out: impl Write, schema: &str, version: u32, columns: &[&str], rows: &[T]) -> Result<()> {
    writeln!(out, "# schema={schema} v{version}").map_err(io_err)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(columns).map_err(io_err)?;
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn tail_csv(rows: &[TailRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, TAIL_SCHEMA, TAIL_SCHEMA_VERSION, &TAIL_COLUMNS, rows)?;
    Ok(buf)
}

pub fn bound_csv(rows: &[BoundRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, BOUND_SCHEMA, BOUND_SCHEMA_VERSION, &BOUND_COLUMNS, rows)?;
    Ok(buf)
}

/// Reads rows written by [`tail_csv`], checking the schema line and header.
pub fn read_tail_csv(bytes: &[u8]) -> Result<Vec<TailRow>> {
    let text = std::str::from_utf8(bytes).map_err(io_err)?;
    let (first, rest) = text.split_once('\n').ok_or_else(|| io_err("empty tail CSV"))?;
    if first != format!("# schema={TAIL_SCHEMA} v{TAIL_SCHEMA_VERSION}") {
        return Err(io_err(format!("unexpected schema line {first:?}")));
    }
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header: Vec<String> = r.headers().map_err(io_err)?.iter().map(String::from).collect();
    if header != TAIL_COLUMNS {
        return Err(io_err("tail CSV header mismatch"));
    }
    r.deserialize().map(|row| row.map_err(io_err)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema: String,
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(schema: &str, version: u32, body: T) -> Self {
        Self { schema: schema.into(), schema_version: version, body }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowsBody<T> {
    pub rows: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyBody {
    pub model_id: String,
    pub mode: String,
    pub samples: Option<u64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
}

pub type VerifyReport = Versioned<VerifyBody>;

pub fn verify_report(body: VerifyBody) -> VerifyReport {
    Versioned::new(VERIFY_SCHEMA, VERIFY_SCHEMA_VERSION, body)
}

pub fn tail_json(rows: &[TailRow]) -> Result<Vec<u8>> {
    to_json(&Versioned::new(TAIL_SCHEMA, TAIL_SCHEMA_VERSION, RowsBody { rows: rows.to_vec() }))
}

pub fn bound_json(rows: &[BoundRow]) -> Result<Vec<u8>> {
    to_json(&Versioned::new(BOUND_SCHEMA, BOUND_SCHEMA_VERSION, RowsBody { rows: rows.to_vec() }))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(io_err)?;
    v.push(b'\n');
    Ok(v)
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let name = path.file_name().ok_or_else(|| io_err("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tailmc::TailMethod;

    fn row() -> TailRow {
        TailRow {
            model_id: "iid".into(),
            n: 64,
            z: 0.5,
            method: TailMethod::Tilt,
            p_hat: 0.25,
            stderr: 0.001,
            ratio: 1.01,
            ratio_lo: 1.0,
            ratio_hi: 1.02,
            envelope: 0.2,
            in_range: true,
            samples: 10000,
            seed: 3,
        }
    }

    #[test]
    fn tail_csv_golden() {
        let text = String::from_utf8(tail_csv(&[row()]).unwrap()).unwrap();
        assert_eq!(
            text,
            "# schema=steinmd.tail v1\n\
             model_id,n,z,method,p_hat,stderr,ratio,ratio_lo,ratio_hi,envelope,in_range,samples,seed\n\
             iid,64,0.5,tilt,0.25,0.001,1.01,1.0,1.02,0.2,true,10000,3\n"
        );
        assert_eq!(read_tail_csv(text.as_bytes()).unwrap(), vec![row()]);
    }

    #[test]
    fn bound_csv_header_golden() {
        let text = String::from_utf8(bound_csv(&[]).unwrap()).unwrap();
        assert_eq!(
            text,
            "# schema=steinmd.bound v1\n\
             theorem,z,envelope,delta,in_range,range_upper,c_abs,c_range,n,kappa,a_n,b,tau,z0,rho,shape_only\n"
        );
    }

    #[test]
    fn verify_json_fields() {
        let rec = CheckRecord { name: "identity w^1".into(), mode: "mc".into(), value: 0.1, bound: 0.2, stderr: Some(0.05), pass: true };
        let report = verify_report(VerifyBody {
            model_id: "x".into(),
            mode: "mc".into(),
            samples: Some(10),
            seed: Some(1),
            workers: Some(1),
            checks: vec![rec],
            pass: true,
        });
        let v: serde_json::Value = serde_json::from_slice(&to_json(&report).unwrap()).unwrap();
        assert_eq!(v["schema"], "steinmd.verify");
        assert_eq!(v["schema_version"], 1);
        let check = &v["checks"][0];
        for key in ["name", "mode", "value", "bound", "stderr", "pass"] {
            assert!(check.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("steinmd-report-{}", std::process::id()));
        let p = dir.join("a.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
