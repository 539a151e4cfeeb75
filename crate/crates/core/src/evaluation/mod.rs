//! Scoring an estimate against ground truth.
//!
//! The reference state is the per-face signed distance from the nominal mesh
//! to the defective one. Errors are restricted to a [`SelectionMask`]: faces
//! that were observed at least once and lie away from the mesh boundary.

mod export;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mesh::TriMesh;
use crate::raycast::{ray_cast, Bvh};

pub use export::{export_error_map, read_error_map, ErrorMapRow};

/// Per-face ground-truth deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceState {
    pub x: Vec<f64>,
    /// Faces whose probe rays hit nothing; their `x` is 0.
    pub missed: Vec<bool>,
}

/// Casts rays from every nominal face centroid along `+n̂` and `−n̂` onto the
/// defective mesh and keeps the nearer hit as a signed distance.
pub fn reference_state(nominal: &TriMesh, defective: &TriMesh, bvh_defective: &Bvh) -> Result<ReferenceState> {
    if nominal.is_empty() || defective.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let normals = nominal.face_normals();
    let mut out = ReferenceState {
        x: vec![0.0; nominal.n_faces()],
        missed: vec![false; nominal.n_faces()],
    };
    for j in 0..nominal.n_faces() {
        let Some(n) = normals[j] else {
            out.missed[j] = true;
            continue;
        };
        let c = nominal.centroid(j);
        let up = ray_cast(bvh_defective, defective, &c, &n).map(|h| h.t);
        let down = ray_cast(bvh_defective, defective, &c, &-n).map(|h| -h.t);
        out.x[j] = match (up, down) {
            (Some(u), Some(d)) => {
                if u <= -d {
                    u
                } else {
                    d
                }
            }
            (Some(u), None) => u,
            (None, Some(d)) => d,
            (None, None) => {
                out.missed[j] = true;
                0.0
            }
        };
    }
    Ok(out)
}

/// Faces entering the error metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMask {
    pub included: Vec<bool>,
    pub n_selected: usize,
}

impl SelectionMask {
    pub fn from_included(included: Vec<bool>) -> Self {
        let n_selected = included.iter().filter(|b| **b).count();
        Self {
            included,
            n_selected,
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.included.iter().enumerate().filter(|(_, b)| **b).map(|(j, _)| j)
    }
}

/// Slack on the border comparison so vertices lying exactly `border` away
/// are not lost to round-off.
const BORDER_SLACK: f64 = 1e-12;

/// Faces whose three vertices all lie at least `border` from the boundary.
pub fn border_mask(mesh: &TriMesh, border: f64) -> SelectionMask {
    let vd: Vec<f64> = mesh.vertices().iter().map(|v| mesh.distance_to_boundary(v)).collect();
    SelectionMask::from_included(
        mesh.faces()
            .iter()
            .map(|f| f.iter().all(|&v| vd[v] >= border - BORDER_SLACK))
            .collect(),
    )
}

/// Faces hit at least once and clear of the border band.
pub fn selection_mask(mesh: &TriMesh, hits: &[u64], border: f64) -> Result<SelectionMask> {
    if hits.len() != mesh.n_faces() {
        return Err(Error::LengthMismatch {
            expected: mesh.n_faces(),
            actual: hits.len(),
        });
    }
    let b = border_mask(mesh, border);
    Ok(SelectionMask::from_included(
        b.included.iter().zip(hits).map(|(inc, h)| *inc && *h > 0).collect(),
    ))
}

fn check(x_hat: &[f64], x: &[f64], mask: &SelectionMask) -> Result<()> {
    for len in [x.len(), mask.included.len()] {
        if len != x_hat.len() {
            return Err(Error::LengthMismatch {
                expected: x_hat.len(),
                actual: len,
            });
        }
    }
    if mask.n_selected == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(())
}

/// `√(eᵀe / n_{f,v})` over selected faces, `e = x̂ − x`.
pub fn rmse(x_hat: &[f64], x: &[f64], mask: &SelectionMask) -> Result<f64> {
    check(x_hat, x, mask)?;
    let ss: f64 = mask.indices().map(|j| (x_hat[j] - x[j]).powi(2)).sum();
    Ok((ss / mask.n_selected as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub abs_error_mean: f64,
    /// Population standard deviation of `|e|`.
    pub abs_error_std: f64,
    /// Mean of `√P_jj`.
    pub posterior_std_mean: f64,
}

pub fn error_stats(x_hat: &[f64], x: &[f64], variance: &[f64], mask: &SelectionMask) -> Result<ErrorStats> {
    check(x_hat, x, mask)?;
    if variance.len() != x_hat.len() {
        return Err(Error::LengthMismatch {
            expected: x_hat.len(),
            actual: variance.len(),
        });
    }
    let n = mask.n_selected as f64;
    let abs: Vec<f64> = mask.indices().map(|j| (x_hat[j] - x[j]).abs()).collect();
    let mean = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let post = mask.indices().map(|j| variance[j].sqrt()).sum::<f64>() / n;
    Ok(ErrorStats {
        abs_error_mean: mean,
        abs_error_std: var.sqrt(),
        posterior_std_mean: post,
    })
}

/// `|x̂_j| > threshold` and `|x̂_j| / √P_jj > z_score`.
pub fn flag_defects(x_hat: &[f64], variance: &[f64], threshold: f64, z_score: f64) -> Vec<bool> {
    x_hat
        .iter()
        .zip(variance)
        .map(|(x, v)| x.abs() > threshold && x.abs() / v.sqrt() > z_score)
        .collect()
}

/// Edge-connected components of the flagged faces, each sorted, ordered by
/// smallest face index.
pub fn flagged_components(mesh: &TriMesh, flags: &[bool]) -> Vec<Vec<usize>> {
    let mut by_edge: std::collections::HashMap<[usize; 2], Vec<usize>> = Default::default();
    for (j, f) in mesh.faces().iter().enumerate().filter(|(j, _)| flags[*j]) {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            by_edge.entry([a.min(b), a.max(b)]).or_default().push(j);
        }
    }
    let mut seen = vec![false; mesh.n_faces()];
    let mut out = Vec::new();
    for start in (0..mesh.n_faces()).filter(|&j| flags[j]) {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(j) = queue.pop_front() {
            let f = mesh.faces()[j];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                for &m in &by_edge[&[a.min(b), a.max(b)]] {
                    if !seen[m] {
                        seen[m] = true;
                        comp.push(m);
                        queue.push_back(m);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Face whose centroid is nearest to `(x, y)` in the plane, lowest index on
/// ties.
pub fn defect_center_face(mesh: &TriMesh, center_xy: [f64; 2]) -> Option<usize> {
    let p = Point::new(center_xy[0], center_xy[1], 0.0);
    let mut best: Option<(usize, f64)> = None;
    for j in 0..mesh.n_faces() {
        let c = mesh.centroid(j);
        let d = (c.x - p.x).hypot(c.y - p.y);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|b| b.0)
}

/// Normalized estimation error `Σ (x̂_j − x_j)² / P_jj` over selected faces.
pub fn nees(x_hat: &[f64], x: &[f64], variance: &[f64], mask: &SelectionMask) -> Result<f64> {
    check(x_hat, x, mask)?;
    Ok(mask.indices().map(|j| (x_hat[j] - x[j]).powi(2) / variance[j]).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// RMSE after each processed cloud.
    pub rmse_trace: Vec<f64>,
    /// RMSE of the prior (`x̂ = 0`).
    pub initial_rmse: f64,
    pub abs_error_mean: f64,
    pub abs_error_std: f64,
    pub posterior_std_mean: f64,
    pub n_selected: usize,
    pub selected: Vec<bool>,
    pub per_face_error: Vec<f64>,
    pub flags: Vec<bool>,
    pub defect_face: Option<usize>,
    pub defect_estimate: Option<f64>,
    pub defect_reference: Option<f64>,
    #[serde(default)]
    pub clouds: Vec<CloudDiagnostics>,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

/// What happened to the points of one cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudDiagnostics {
    pub seq: u64,
    pub points: usize,
    pub used: usize,
    /// No correspondence on the nominal mesh.
    pub dropped: usize,
    /// Footpoint inside the border band.
    pub excluded: usize,
    pub faces_observed: usize,
    #[serde(default)]
    pub icp_rms_before: Option<f64>,
    #[serde(default)]
    pub icp_rms_after: Option<f64>,
}

/// Thresholds for [`flag_defects`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagOptions {
    pub threshold: f64,
    pub z_score: f64,
}

impl Default for FlagOptions {
    fn default() -> Self {
        Self {
            threshold: 0.001,
            z_score: 3.0,
        }
    }
}

/// Builds a report for the final estimate; `trace` holds the estimates
/// after every cloud.
pub fn evaluate(
    trace: &[Vec<f64>],
    x_hat: &[f64],
    variance: &[f64],
    reference: &[f64],
    mask: &SelectionMask,
    defect_face: Option<usize>,
    flag: FlagOptions,
) -> Result<EvalReport> {
    let stats = error_stats(x_hat, reference, variance, mask)?;
    let rmse_trace = trace.iter().map(|x| rmse(x, reference, mask)).collect::<Result<Vec<_>>>()?;
    let zeros = vec![0.0; x_hat.len()];
    Ok(EvalReport {
        rmse_trace,
        initial_rmse: rmse(&zeros, reference, mask)?,
        abs_error_mean: stats.abs_error_mean,
        abs_error_std: stats.abs_error_std,
        posterior_std_mean: stats.posterior_std_mean,
        n_selected: mask.n_selected,
        selected: mask.included.clone(),
        per_face_error: x_hat.iter().zip(reference).map(|(a, b)| a - b).collect(),
        flags: flag_defects(x_hat, variance, flag.threshold, flag.z_score),
        defect_face,
        defect_estimate: defect_face.map(|j| x_hat[j]),
        defect_reference: defect_face.map(|j| reference[j]),
        clouds: Vec::new(),
        config_hash: None,
        config: None,
    })
}
