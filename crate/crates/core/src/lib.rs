//! Gradient boosted decision trees that keep working when only a handful of
//! labelled rows are available.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: CSV ingestion, column typing and histogram binning.
//! - [`tree`]: histogram split search with the `min_data_in_leaf` gate,
//!   extremely randomized thresholds, categorical splits and leaf-wise growth.
//! - [`booster`]: parameters, losses, the boosting loop and model serialization.
//! - [`fsl`]: default and few-shot parameter presets, stratified k-shot
//!   sampling and the benchmark grid.
//! - [`metrics`]: AUC with midrank ties, MAE, MSE and R2.
//! - [`stacking`]: disjoint few-shot level-0 models, an MLP blender and
//!   action-threshold calibration.
//! - [`cli`]: the `fewboost` command line.
//!
//! ```
//! use fewboost::{booster, dataset::Dataset, fsl};
//!
//! let x: Vec<f64> = (0..16).map(f64::from).collect();
//! let y: Vec<f64> = (0..16).map(|i| if i < 8 { 0.0 } else { 1.0 }).collect();
//! let ds = Dataset::from_numeric(vec![("x".into(), x)], y).unwrap();
//!
//! let params = fsl::fsl_preset();
//! let bds = fewboost::dataset::bin_features(&ds, params.max_bin, params.min_data_in_bin);
//! let model = booster::train(&bds, &params).unwrap();
//! let p = model.predict(&[vec![15.0]]).unwrap();
//! assert!(p[0] > 0.5);
//! ```

pub mod booster;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fsl;
pub mod metrics;
pub mod stacking;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
