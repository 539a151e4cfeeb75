use std::sync::Arc;

use super::batch::MeasurementBatch;
use super::state::EstimatorState;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// A recursive estimator of the per-face deviation state.
pub trait DeviationFilter: Send + Sync {
    fn name(&self) -> &'static str;

    /// Zero-mean prior with standard deviation `sigma0` on every face.
    fn prior(&self, n_faces: usize, sigma0: f64, mesh_fingerprint: &str) -> Result<EstimatorState>;

    fn update(&self, state: &mut EstimatorState, batch: &MeasurementBatch) -> Result<()>;
}

/// Information form with diagonal `Ω`: linear in the number of faces.
#[derive(Debug, Default, Clone, Copy)]
pub struct InformationFilter;

impl DeviationFilter for InformationFilter {
    fn name(&self) -> &'static str {
        "info"
    }

    fn prior(&self, n_faces: usize, sigma0: f64, mesh_fingerprint: &str) -> Result<EstimatorState> {
        EstimatorState::information_prior(n_faces, sigma0, mesh_fingerprint, false)
    }

    fn update(&self, state: &mut EstimatorState, batch: &MeasurementBatch) -> Result<()> {
        state.info_update_mut(batch)
    }
}

/// Covariance-form RWLS with a dense `P`; refuses meshes above `max_faces`.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceFilter {
    pub max_faces: usize,
}

impl Default for CovarianceFilter {
    fn default() -> Self {
        Self { max_faces: 2000 }
    }
}

impl DeviationFilter for CovarianceFilter {
    fn name(&self) -> &'static str {
        "covariance"
    }

    fn prior(&self, n_faces: usize, sigma0: f64, mesh_fingerprint: &str) -> Result<EstimatorState> {
        if n_faces > self.max_faces {
            return Err(Error::InvalidArgument(format!(
                "covariance filter is limited to {} faces, mesh has {n_faces}",
                self.max_faces
            )));
        }
        EstimatorState::covariance_prior(n_faces, sigma0, mesh_fingerprint)
    }

    fn update(&self, state: &mut EstimatorState, batch: &MeasurementBatch) -> Result<()> {
        state.rwls_update_mut(batch)
    }
}

pub type FilterRegistry = Registry<Arc<dyn DeviationFilter>>;

/// Registry holding `info` and `covariance`.
pub fn filters() -> FilterRegistry {
    let mut reg: FilterRegistry = Registry::new("filter");
    for f in [
        Arc::new(InformationFilter) as Arc<dyn DeviationFilter>,
        Arc::new(CovarianceFilter::default()),
    ] {
        reg.register(f.name(), f);
    }
    reg
}
