//! Shallow detectors on PCA-reduced, flattened view stacks.

pub mod grid;
pub mod iforest;
pub mod kde;
pub mod ocsvm;
pub mod pca;

pub use grid::{
    fit_baseline, flatten_split, grid_search_baseline, kde_grid, ocsvm_grid, param_grid, run_baseline,
    BaselineMethod, BaselineParams, FittedBaseline, GridPoint, GridResult, Selection,
};
pub use iforest::{c_factor, iforest_fit, iforest_score, IsoForest};
pub use kde::{kde_score, Kde};
pub use ocsvm::{ocsvm_fit, ocsvm_score, OcSvmModel};
pub use pca::{pca_fit, pca_inverse, pca_transform, PcaModel};
