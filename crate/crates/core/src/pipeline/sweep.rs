use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, RunConfig, RunOutput};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Distance,
    Heading,
    Seed,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(Self::Distance),
            "heading" => Ok(Self::Heading),
            "seed" => Ok(Self::Seed),
            _ => Err(Error::InvalidArgument(format!("unknown sweep axis `{s}` (distance|heading|seed)"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Distance => "distance_m",
            Self::Heading => "heading_deg",
            Self::Seed => "seed",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            Self::Distance => cfg.distance_m = value,
            Self::Heading => cfg.heading_deg = value,
            Self::Seed => {
                if !(value >= 0.0 && value.fract() == 0.0 && value <= u64::MAX as f64) {
                    return Err(Error::InvalidArgument(format!("seed must be a non-negative integer, got {value}")));
                }
                cfg.seed = value as u64;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub config_hash: String,
    pub final_rmse: f64,
    pub abs_error_mean: f64,
    pub abs_error_std: f64,
    pub posterior_std_mean: f64,
    pub n_selected: usize,
    pub defect_estimate: Option<f64>,
}

/// Lower quartile, median or upper quartile of the RMSE across runs at one
/// iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub k: usize,
    pub statistic: String,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunOutput>,
    /// Present for seed sweeps.
    pub quartiles: Option<Vec<QuartileRow>>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-iteration lower quartile, median and upper quartile of several RMSE
/// traces of equal length.
pub fn quartiles(traces: &[&[f64]]) -> Result<Vec<QuartileRow>> {
    let Some(first) = traces.first() else {
        return Ok(Vec::new());
    };
    if let Some(t) = traces.iter().find(|t| t.len() != first.len()) {
        return Err(Error::LengthMismatch {
            expected: first.len(),
            actual: t.len(),
        });
    }
    let mut rows = Vec::with_capacity(3 * first.len());
    for k in 0..first.len() {
        let mut col: Vec<f64> = traces.iter().map(|t| t[k]).collect();
        col.sort_by(f64::total_cmp);
        for (name, q) in [("q1", 0.25), ("median", 0.5), ("q3", 0.75)] {
            rows.push(QuartileRow {
                k: k + 1,
                statistic: name.into(),
                rmse: quantile(&col, q),
            });
        }
    }
    Ok(rows)
}

/// Runs the pipeline once per value of `axis`. With `out`, each run's
/// report is written to `out/run_<i>/report.json`.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], out: Option<&Path>) -> Result<SweepResult> {
    let mut rows = Vec::with_capacity(values.len());
    let mut runs = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let cfg = axis.apply(base, v)?;
        let run = run_pipeline(&cfg, None)?;
        if let Some(o) = out {
            let d = o.join(format!("run_{i:03}"));
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            let p = d.join("report.json");
            std::fs::write(&p, serde_json::to_string_pretty(&run.report)?).map_err(|e| Error::io(&p, e))?;
        }
        let r = &run.report;
        rows.push(SweepRow {
            value: v,
            config_hash: cfg.hash(),
            final_rmse: r.rmse_trace.last().copied().unwrap_or(r.initial_rmse),
            abs_error_mean: r.abs_error_mean,
            abs_error_std: r.abs_error_std,
            posterior_std_mean: r.posterior_std_mean,
            n_selected: r.n_selected,
            defect_estimate: r.defect_estimate,
        });
        log::info!("sweep {} = {v}: final rmse {:.3e}", axis.name(), rows.last().unwrap().final_rmse);
        runs.push(run);
    }
    let quartiles = if axis == SweepAxis::Seed && !runs.is_empty() {
        let traces: Vec<&[f64]> = runs.iter().map(|r| r.report.rmse_trace.as_slice()).collect();
        Some(quartiles(&traces)?)
    } else {
        None
    };
    Ok(SweepResult {
        axis,
        rows,
        runs,
        quartiles,
    })
}

pub fn write_sweep_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let mut s = format!(
        "{},config_hash,final_rmse,abs_error_mean,abs_error_std,posterior_std_mean,n_selected,defect_estimate\n",
        result.axis.name()
    );
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.value,
            r.config_hash,
            r.final_rmse,
            r.abs_error_mean,
            r.abs_error_std,
            r.posterior_std_mean,
            r.n_selected,
            r.defect_estimate.map_or(String::new(), |v| v.to_string())
        );
    }
    let path = path.as_ref();
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_quartiles_csv(rows: &[QuartileRow], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("k,statistic,rmse\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.k, r.statistic, r.rmse);
    }
    let path = path.as_ref();
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
