//! JSON and CSV persistence for instances, filters, and optimizer runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::model::Filter;
use crate::optimize::{RunResult, Termination};

pub const RUN_CSV_HEADER: &str =
    "iter,loss_oe,loss_reg,loss_total,grad_norm,step,sigma_min_12,sigma_min_22,subopt_norm";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: "serialize".into(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Shortest round-trip decimal (exponent form for very large or small
/// magnitudes), `inf`/`-inf`/`nan` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

pub fn fmt_ext(x: ExtReal) -> String {
    fmt_f64(x.to_f64())
}

pub fn run_csv(run: &RunResult) -> String {
    let mut out = String::with_capacity(64 * (run.records.len() + 1));
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for r in &run.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            fmt_ext(r.loss_oe),
            fmt_ext(r.loss_reg),
            fmt_ext(r.loss_total),
            fmt_f64(r.grad_norm),
            fmt_f64(r.step),
            fmt_f64(r.sigma_min_12),
            fmt_f64(r.sigma_min_22),
            fmt_f64(r.subopt_norm),
        );
    }
    out
}

/// JSON summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub iters: usize,
    /// `null` when the final filter is not stable.
    pub final_subopt: Option<f64>,
    pub final_filter: Filter,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl RunSummary {
    pub fn new(run: &RunResult, final_subopt: f64, seed: Option<u64>) -> Self {
        RunSummary {
            termination: run.termination,
            iters: run.iters(),
            final_subopt: final_subopt.is_finite().then_some(final_subopt),
            final_filter: run.final_filter.clone(),
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1e-300), "1e-300");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt_ext(ExtReal::Infinite), "inf");
    }

    #[test]
    fn json_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/k.json");
        let k = crate::examples::peril_k0();
        write_json(&path, &k).unwrap();
        let back: Filter = read_json(&path).unwrap();
        assert_eq!(back, k);
        let missing: Result<Filter> = read_json(&dir.path().join("nope.json"));
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
