use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::state::{EstimatorState, Precision, Representation};
use crate::error::{Error, Result};

/// JSON snapshot of an [`EstimatorState`]. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub k: u64,
    pub n_f: usize,
    pub representation: String,
    pub x_hat: Vec<f64>,
    #[serde(rename = "diag_P")]
    pub diag_p: Vec<f64>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    pub hits: Vec<u64>,
    pub mesh_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(n: usize, v: &[f64]) -> Result<DMatrix<f64>> {
    if v.len() != n * n {
        return Err(Error::LengthMismatch {
            expected: n * n,
            actual: v.len(),
        });
    }
    Ok(DMatrix::from_row_slice(n, n, v))
}

impl Checkpoint {
    pub fn from_state(state: &EstimatorState, config_hash: Option<&str>) -> Result<Self> {
        let (x, var) = state.mean_and_variance()?;
        let mut c = Checkpoint {
            k: state.k,
            n_f: state.n_faces(),
            representation: state.representation_name().to_string(),
            x_hat: x.as_slice().to_vec(),
            diag_p: var.as_slice().to_vec(),
            p: None,
            xi: None,
            omega_diag: None,
            omega: None,
            hits: state.hits.clone(),
            mesh_fingerprint: state.mesh_fingerprint.clone(),
            config_hash: config_hash.map(str::to_string),
        };
        match &state.repr {
            Representation::Covariance { p, .. } => c.p = Some(row_major(p)),
            Representation::Information { xi, omega } => {
                c.xi = Some(xi.as_slice().to_vec());
                match omega {
                    Precision::Diagonal(d) => c.omega_diag = Some(d.as_slice().to_vec()),
                    Precision::Dense(o) => c.omega = Some(row_major(o)),
                }
            }
        }
        Ok(c)
    }

    /// Rebuilds the exact state the checkpoint was taken from.
    pub fn to_state(&self) -> Result<EstimatorState> {
        let n = self.n_f;
        let vec = |v: &[f64]| -> Result<DVector<f64>> {
            if v.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: v.len(),
                });
            }
            Ok(DVector::from_column_slice(v))
        };
        let missing = |f: &str| Error::InvalidArgument(format!("checkpoint lacks `{f}` for {}", self.representation));
        let repr = match self.representation.as_str() {
            "covariance" => Representation::Covariance {
                x: vec(&self.x_hat)?,
                p: from_row_major(n, self.p.as_deref().ok_or_else(|| missing("P"))?)?,
            },
            "information-diagonal" => Representation::Information {
                xi: vec(self.xi.as_deref().ok_or_else(|| missing("xi"))?)?,
                omega: Precision::Diagonal(vec(self.omega_diag.as_deref().ok_or_else(|| missing("omega_diag"))?)?),
            },
            "information-dense" => Representation::Information {
                xi: vec(self.xi.as_deref().ok_or_else(|| missing("xi"))?)?,
                omega: Precision::Dense(from_row_major(n, self.omega.as_deref().ok_or_else(|| missing("omega"))?)?),
            },
            other => return Err(Error::InvalidArgument(format!("unknown representation `{other}`"))),
        };
        if self.hits.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: self.hits.len(),
            });
        }
        Ok(EstimatorState {
            repr,
            k: self.k,
            hits: self.hits.clone(),
            mesh_fingerprint: self.mesh_fingerprint.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
