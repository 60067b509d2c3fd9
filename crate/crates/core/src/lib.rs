//! From-scratch toolkit for benchmarking machine-learning models on
//! regional hourly rainfall forecasting.
//!
//! The pipeline ingests ASOS-style weather station CSVs, grids them to
//! hourly intervals, imputes gaps, joins regions, and builds next-hour
//! precipitation targets (binary at a 0.01-inch threshold, or raw inches
//! for regression). Seven model families are implemented from first
//! principles — KNN, linear/wide models, multi-layer perceptrons, a joint
//! deep-and-wide model, echo-state reservoir classifiers, SMO-trained
//! SVM/SVR, and LSTM/GRU/BiLSTM sequence models — and ranked by accuracy
//! or R²/MSE/RMSE/PCC through a reproducible experiment grid runner.

pub mod data;
pub mod error;
pub mod harness;
pub mod knn;
pub mod linalg;
pub mod linear;
pub mod metrics;
pub mod neural;
pub mod normalize;
pub mod recurrent;
pub mod reservoir;
pub mod svm;

pub use error::{Error, Result};
