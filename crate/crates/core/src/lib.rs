//! Sparse precision matrix estimation by partial correlation screening (PCS),
//! a forward-backward baseline, Higher-Criticism thresholding classifiers built
//! on the estimates, and the simulation harness used to benchmark them.

pub mod covsource;
pub mod error;
pub mod foba;
pub mod hct;
pub mod io;
pub mod pcs;
pub mod simlab;
pub mod sparse;
pub mod tuning;

pub use covsource::{
    build_store, empirical_covariance, open_store, pooled_correlation, read_store_meta, write_store,
    CovarianceSource, CovarianceStore, DataMatrix, DenseCovariance, LabeledData, StoreMeta,
};
pub use error::{PcsError, Result};
pub use foba::{foba_estimate, foba_row, FobaConfig};
pub use hct::{HctModel, OmegaMethod};
pub use pcs::{
    clean_row, estimate_precision, estimate_precision_grid, partial_correlation, ridge_inverse,
    screen_row, OrderedIndexSet, PcsConfig, PcsEstimate, RowEstimate, ScreenOutcome, Termination,
};
pub use sparse::SparseSymmetricMatrix;
