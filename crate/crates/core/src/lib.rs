//! Per-pixel optimal interpolation of fine-resolution reflectance time
//! series from two priors — a monthly climatology and a linear fusion of a
//! coarse sensor — and gappy fine observations.
//!
//! ```
//! use oifuse::{filter_step, GaussianBelief, Observation, ObservationModel};
//!
//! let clim = GaussianBelief::new(0.1, 0.01);
//! let fusion = GaussianBelief::new(0.3, 0.03);
//! let obs = ObservationModel::new(1.0, 0.0075).unwrap();
//! let step = filter_step(clim, Some(fusion), Observation::valid(0.2), &obs);
//! assert!((step.posterior.mean() - 0.175).abs() < 1e-12);
//! assert!((step.posterior.variance() - 0.00375).abs() < 1e-12);
//! ```

pub mod climatology;
pub mod error;
pub mod evaluate;
pub mod fusion;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod types;

pub use climatology::{build_climatology, Climatology, ClimatologyOptions, PixelArchive};
pub use error::{Error, Result};
pub use evaluate::{leave_one_out, metrics, Metrics, MetricsReport, PixelInputs, Site};
pub use fusion::{
    apply_fusion, fit_fusion_model, CollocatedPair, FusionModel, FusionModels, FusionOptions,
};
pub use ingest::{GridGeometry, QualityPolicy, SceneGrid};
pub use model::{
    filter_series, filter_step, kalman_gain, predict, update, FilteredStep, GaussianBelief,
    ObservationModel, R_FLOOR, VAR_FLOOR,
};
pub use synth::{generate_site, SyntheticConfig, SyntheticSite};
pub use types::{Observation, PixelId, PixelSeries, YearMonth};
