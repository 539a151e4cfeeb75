//! Per-face deviation estimation.
//!
//! The state `x ∈ Rⁿᶠ` holds one signed offset per face along its unit
//! normal. A point on face `j` observes it through `δ = x_j n̂_j + ε`, so the
//! observation matrix has one non-zero column per 3-row block and `R` is
//! block-diagonal `σ²I₃`. The state is static, so filtering reduces to
//! sequential Bayesian fusion in either covariance form (`x̂`, `P`) or
//! information form (`ξ`, `Ω`); with a diagonal prior `Ω` stays diagonal.

mod batch;
mod checkpoint;
mod filter;
mod state;

pub use batch::{assemble_batch, CompressedBatch, MeasurementBatch};
pub use checkpoint::Checkpoint;
pub use filter::{filters, CovarianceFilter, DeviationFilter, FilterRegistry, InformationFilter};
pub use state::{
    batch_wls_oracle, info_update, recover, rwls_update, rwls_update_stacked, to_information, EstimatorState,
    Precision, Representation,
};
