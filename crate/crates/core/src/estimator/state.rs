use nalgebra::{DMatrix, DVector};

use super::batch::{CompressedBatch, MeasurementBatch};
use crate::error::{Error, Result};

/// Precision matrix `Ω` of the information form.
#[derive(Debug, Clone, PartialEq)]
pub enum Precision {
    /// Diagonal `Ω`, stored as its diagonal.
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Covariance { x: DVector<f64>, p: DMatrix<f64> },
    Information { xi: DVector<f64>, omega: Precision },
}

/// Per-face deviation estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub repr: Representation,
    /// Number of updates applied.
    pub k: u64,
    /// Raw measurements absorbed per face.
    pub hits: Vec<u64>,
    pub mesh_fingerprint: String,
}

fn check_sigma0(sigma0: f64) -> Result<()> {
    if sigma0 > 0.0 && sigma0.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("prior sigma must be positive, got {sigma0}")))
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

impl EstimatorState {
    /// `x̂₀ = 0`, `P₀ = σ₀² I`.
    pub fn covariance_prior(n_faces: usize, sigma0: f64, mesh_fingerprint: &str) -> Result<Self> {
        check_sigma0(sigma0)?;
        Ok(Self {
            repr: Representation::Covariance {
                x: DVector::zeros(n_faces),
                p: DMatrix::from_diagonal_element(n_faces, n_faces, sigma0 * sigma0),
            },
            k: 0,
            hits: vec![0; n_faces],
            mesh_fingerprint: mesh_fingerprint.to_string(),
        })
    }

    /// `ξ₀ = 0`, `Ω₀ = σ₀⁻² I`, diagonal or dense storage.
    pub fn information_prior(n_faces: usize, sigma0: f64, mesh_fingerprint: &str, dense: bool) -> Result<Self> {
        check_sigma0(sigma0)?;
        let w = 1.0 / (sigma0 * sigma0);
        let omega = if dense {
            Precision::Dense(DMatrix::from_diagonal_element(n_faces, n_faces, w))
        } else {
            Precision::Diagonal(DVector::from_element(n_faces, w))
        };
        Ok(Self {
            repr: Representation::Information {
                xi: DVector::zeros(n_faces),
                omega,
            },
            k: 0,
            hits: vec![0; n_faces],
            mesh_fingerprint: mesh_fingerprint.to_string(),
        })
    }

    pub fn n_faces(&self) -> usize {
        self.hits.len()
    }

    pub fn is_information(&self) -> bool {
        matches!(self.repr, Representation::Information { .. })
    }

    pub fn representation_name(&self) -> &'static str {
        match &self.repr {
            Representation::Covariance { .. } => "covariance",
            Representation::Information {
                omega: Precision::Diagonal(_),
                ..
            } => "information-diagonal",
            Representation::Information { .. } => "information-dense",
        }
    }

    fn count_hits(&mut self, c: &CompressedBatch) {
        for (j, n) in c.faces.iter().zip(&c.counts) {
            self.hits[*j] += n;
        }
    }

    /// Sequential update in covariance form with the per-face compressed
    /// observations of `batch`.
    pub fn rwls_update_mut(&mut self, batch: &MeasurementBatch) -> Result<()> {
        let c = batch.compress(self.n_faces())?;
        let Representation::Covariance { x, p } = &mut self.repr else {
            return Err(Error::InvalidArgument("rwls_update needs a covariance-form state".into()));
        };
        if !c.is_empty() {
            let m = c.len();
            let f = &c.faces;
            let p_ht = p.select_columns(f);
            let mut s = p_ht.select_rows(f);
            for a in 0..m {
                s[(a, a)] += c.variance(a);
            }
            let chol = s.cholesky().ok_or(Error::NotPositiveDefinite("innovation covariance S"))?;
            let innov = DVector::from_fn(m, |a, _| c.value(a) - x[f[a]]);
            *x += &p_ht * chol.solve(&innov);
            let wt = chol.solve(&p_ht.transpose());
            *p -= &p_ht * wt;
            symmetrize(p);
            if !x.iter().chain(p.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("covariance update"));
            }
        }
        self.count_hits(&c);
        self.k += 1;
        Ok(())
    }

    /// Literal update with the stacked `3n_p × n_f` observation matrix and
    /// block-diagonal `R`. Cubic in the number of points; reference only.
    pub fn rwls_update_stacked_mut(&mut self, batch: &MeasurementBatch) -> Result<()> {
        let n_f = self.n_faces();
        batch.validate(n_f)?;
        let c = batch.compress(n_f)?;
        let Representation::Covariance { x, p } = &mut self.repr else {
            return Err(Error::InvalidArgument("rwls_update needs a covariance-form state".into()));
        };
        let rows = 3 * batch.len();
        if rows > 0 {
            let mut h = DMatrix::zeros(rows, n_f);
            let mut delta = DVector::zeros(rows);
            let mut r = DMatrix::zeros(rows, rows);
            for i in 0..batch.len() {
                for a in 0..3 {
                    h[(3 * i + a, batch.face_of[i])] = batch.normals[i][a];
                    delta[3 * i + a] = batch.residuals[i][a];
                    r[(3 * i + a, 3 * i + a)] = batch.sigma_of[i] * batch.sigma_of[i];
                }
            }
            let ph_t = &*p * h.transpose();
            let s = &h * &ph_t + r;
            let chol = s.cholesky().ok_or(Error::NotPositiveDefinite("innovation covariance S"))?;
            let w = chol.solve(&ph_t.transpose()).transpose();
            *x += &w * (delta - &h * &*x);
            let i_wh = DMatrix::identity(n_f, n_f) - &w * &h;
            *p = i_wh * &*p;
            symmetrize(p);
        }
        self.count_hits(&c);
        self.k += 1;
        Ok(())
    }

    /// Additive update in information form: `Ω += HᵀR⁻¹H`, `ξ += HᵀR⁻¹Δ`.
    pub fn info_update_mut(&mut self, batch: &MeasurementBatch) -> Result<()> {
        let c = batch.compress(self.n_faces())?;
        let Representation::Information { xi, omega } = &mut self.repr else {
            return Err(Error::InvalidArgument("info_update needs an information-form state".into()));
        };
        for (m, &j) in c.faces.iter().enumerate() {
            xi[j] += c.weighted[m];
            match omega {
                Precision::Diagonal(d) => d[j] += c.information[m],
                Precision::Dense(o) => o[(j, j)] += c.information[m],
            }
        }
        self.count_hits(&c);
        self.k += 1;
        Ok(())
    }

    /// `x̂` and the diagonal of `P` without materializing a dense inverse on
    /// the diagonal fast path.
    pub fn mean_and_variance(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        match &self.repr {
            Representation::Covariance { x, p } => Ok((x.clone(), p.diagonal())),
            Representation::Information {
                xi,
                omega: Precision::Diagonal(d),
            } => {
                if d.iter().any(|w| !(*w > 0.0)) {
                    return Err(Error::NotPositiveDefinite("information matrix"));
                }
                Ok((xi.component_div(d), d.map(|w| 1.0 / w)))
            }
            Representation::Information {
                xi,
                omega: Precision::Dense(o),
            } => {
                let chol = o.clone().cholesky().ok_or(Error::NotPositiveDefinite("information matrix"))?;
                Ok((chol.solve(xi), chol.inverse().diagonal()))
            }
        }
    }

    /// Checks symmetry (1e-10 relative) and positive definiteness of `P`
    /// or `Ω`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_faces();
        let check = |m: &DMatrix<f64>, what: &'static str| -> Result<()> {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: m.nrows(),
                });
            }
            let scale = m.amax().max(f64::MIN_POSITIVE);
            if (m - m.transpose()).amax() > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
            }
            m.clone().cholesky().map(|_| ()).ok_or(Error::NotPositiveDefinite(what))
        };
        match &self.repr {
            Representation::Covariance { x, p } => {
                if x.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: x.len(),
                    });
                }
                check(p, "covariance matrix")
            }
            Representation::Information { xi, omega } => {
                if xi.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: xi.len(),
                    });
                }
                match omega {
                    Precision::Diagonal(d) => {
                        if d.len() != n {
                            return Err(Error::LengthMismatch {
                                expected: n,
                                actual: d.len(),
                            });
                        }
                        if d.iter().all(|w| *w > 0.0 && w.is_finite()) {
                            Ok(())
                        } else {
                            Err(Error::NotPositiveDefinite("information matrix"))
                        }
                    }
                    Precision::Dense(o) => check(o, "information matrix"),
                }
            }
        }
    }
}

pub fn rwls_update(state: &EstimatorState, batch: &MeasurementBatch) -> Result<EstimatorState> {
    let mut s = state.clone();
    s.rwls_update_mut(batch)?;
    Ok(s)
}

pub fn rwls_update_stacked(state: &EstimatorState, batch: &MeasurementBatch) -> Result<EstimatorState> {
    let mut s = state.clone();
    s.rwls_update_stacked_mut(batch)?;
    Ok(s)
}

pub fn info_update(state: &EstimatorState, batch: &MeasurementBatch) -> Result<EstimatorState> {
    let mut s = state.clone();
    s.info_update_mut(batch)?;
    Ok(s)
}

/// Covariance form of an information-form state: `P = Ω⁻¹`, `x̂ = Ω⁻¹ξ`.
/// Covariance-form input is returned unchanged.
pub fn recover(state: &EstimatorState) -> Result<EstimatorState> {
    let repr = match &state.repr {
        Representation::Covariance { .. } => return Ok(state.clone()),
        Representation::Information {
            xi,
            omega: Precision::Diagonal(d),
        } => {
            if d.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::NotPositiveDefinite("information matrix"));
            }
            Representation::Covariance {
                x: xi.component_div(d),
                p: DMatrix::from_diagonal(&d.map(|w| 1.0 / w)),
            }
        }
        Representation::Information {
            xi,
            omega: Precision::Dense(o),
        } => {
            let chol = o.clone().cholesky().ok_or(Error::NotPositiveDefinite("information matrix"))?;
            let mut p = chol.inverse();
            symmetrize(&mut p);
            Representation::Covariance { x: chol.solve(xi), p }
        }
    };
    Ok(EstimatorState {
        repr,
        ..state.clone()
    })
}

/// Information form of a covariance-form state: `Ω = P⁻¹`, `ξ = Ωx̂`.
pub fn to_information(state: &EstimatorState) -> Result<EstimatorState> {
    let Representation::Covariance { x, p } = &state.repr else {
        return Ok(state.clone());
    };
    let chol = p.clone().cholesky().ok_or(Error::NotPositiveDefinite("covariance matrix"))?;
    let mut omega = chol.inverse();
    symmetrize(&mut omega);
    let xi = &omega * x;
    Ok(EstimatorState {
        repr: Representation::Information {
            xi,
            omega: Precision::Dense(omega),
        },
        ..state.clone()
    })
}

/// Solves `(Σ HᵀR⁻¹H + P₀⁻¹) x̂ = Σ HᵀR⁻¹Δ + P₀⁻¹x̂₀` over every stacked
/// measurement row of every batch at once. `prior` must be in covariance
/// form.
pub fn batch_wls_oracle(batches: &[MeasurementBatch], prior: &EstimatorState) -> Result<EstimatorState> {
    let Representation::Covariance { x: x0, p: p0 } = &prior.repr else {
        return Err(Error::InvalidArgument("oracle prior must be in covariance form".into()));
    };
    let n_f = prior.n_faces();
    let p0_inv = p0.clone().lu().try_inverse().ok_or(Error::NotPositiveDefinite("prior covariance"))?;
    let mut a = p0_inv.clone();
    let mut b = &p0_inv * x0;
    let mut hits = prior.hits.clone();
    for batch in batches {
        batch.validate(n_f)?;
        for i in 0..batch.len() {
            let j = batch.face_of[i];
            let w = 1.0 / (batch.sigma_of[i] * batch.sigma_of[i]);
            for r in 0..3 {
                let h = batch.normals[i][r];
                a[(j, j)] += h * w * h;
                b[j] += h * w * batch.residuals[i][r];
            }
            hits[j] += 1;
        }
    }
    let lu = a.lu();
    let x = lu.solve(&b).ok_or(Error::NotPositiveDefinite("normal equations"))?;
    let mut p = lu.try_inverse().ok_or(Error::NotPositiveDefinite("normal equations"))?;
    symmetrize(&mut p);
    Ok(EstimatorState {
        repr: Representation::Covariance { x, p },
        k: prior.k + batches.len() as u64,
        hits,
        mesh_fingerprint: prior.mesh_fingerprint.clone(),
    })
}
