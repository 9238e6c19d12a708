//! Scalar optimal interpolation for one pixel and one band.
//!
//! The hidden reflectance `x` of month `k` carries two independent Gaussian
//! priors: the climatology `N(u1, P1)` and the fusion prediction
//! `u2 = x + xi` with `xi ~ N(0, P2)`. The observation is `y = H x + v`,
//! `v ~ N(0, R)`. Each step is
//!
//! ```text
//! x-  = u1 * P2 / (P1 + P2) + u2 * P1 / (P1 + P2)
//! P-  = (1/P1 + 1/P2)^-1
//! K   = H P- / (H^2 P- + R)
//! x^  = x- + K (y - H x-)
//! P   = (1 - K H) P-
//! ```
//!
//! No state is carried from one month to the next: every step is
//! conditioned only on its own priors and observation.

use crate::error::{Error, Result};
use crate::types::{Observation, PixelSeries};

/// Lower bound applied to every variance (reflectance²).
pub const VAR_FLOOR: f64 = 1e-8;

/// Lower bound applied to the observation-noise variance.
pub const R_FLOOR: f64 = 1e-10;

/// A reflectance estimate and its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    mean: f64,
    variance: f64,
}

impl GaussianBelief {
    /// Builds a belief, raising `variance` to [`VAR_FLOOR`].
    ///
    /// Panics on a non-finite mean or variance; use
    /// [`GaussianBelief::try_new`] for untrusted input.
    pub fn new(mean: f64, variance: f64) -> Self {
        match Self::try_new(mean, variance) {
            Ok(b) => b,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn try_new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "belief needs a finite mean and a finite non-negative variance, got ({mean}, {variance})"
            )));
        }
        Ok(Self {
            mean,
            variance: variance.max(VAR_FLOOR),
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }

    /// Symmetric interval `mean ± z·sd`.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        let half = z * self.std_dev();
        (self.mean - half, self.mean + half)
    }
}

/// The linear observation operator `y = H x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationModel {
    h: f64,
    r: f64,
}

impl ObservationModel {
    /// `h` must be finite and non-zero; `r` must be finite and non-negative
    /// and is raised to [`R_FLOOR`].
    pub fn new(h: f64, r: f64) -> Result<Self> {
        if !h.is_finite() || h == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "observation scale H must be finite and non-zero, got {h}"
            )));
        }
        if !r.is_finite() || r < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "observation noise R must be finite and non-negative, got {r}"
            )));
        }
        Ok(Self {
            h,
            r: r.max(R_FLOOR),
        })
    }

    /// `H = 1` with the given noise.
    pub fn identity(r: f64) -> Result<Self> {
        Self::new(1.0, r)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

/// Everything computed for one month of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredStep {
    pub prior_clim: GaussianBelief,
    /// `None` when no coarse observation existed that month.
    pub prior_fusion: Option<GaussianBelief>,
    pub predicted: GaussianBelief,
    pub posterior: GaussianBelief,
    /// Zero when no update was applied.
    pub gain: f64,
    pub observed: bool,
}

/// Precision-weighted combination of the climatology and fusion priors.
pub fn predict(prior_clim: GaussianBelief, prior_fusion: GaussianBelief) -> GaussianBelief {
    let (u1, p1) = (prior_clim.mean, prior_clim.variance);
    let (u2, p2) = (prior_fusion.mean, prior_fusion.variance);
    let total = p1 + p2;
    let mean = u1 * (p2 / total) + u2 * (p1 / total);
    let variance = 1.0 / (1.0 / p1 + 1.0 / p2);
    GaussianBelief::new(mean, variance)
}

pub fn kalman_gain(predicted_variance: f64, obs: &ObservationModel) -> f64 {
    let hp = obs.h * predicted_variance;
    hp / (obs.h * hp + obs.r)
}

/// Conditions `predicted` on `y`. Invalid observations return the
/// prediction untouched with a zero gain.
pub fn update(
    predicted: GaussianBelief,
    y: Observation,
    obs: &ObservationModel,
) -> (GaussianBelief, f64) {
    if !y.valid {
        return (predicted, 0.0);
    }
    let gain = kalman_gain(predicted.variance, obs);
    let innovation = y.value - obs.h * predicted.mean;
    let mean = predicted.mean + gain * innovation;
    let variance = (1.0 - gain * obs.h) * predicted.variance;
    (GaussianBelief::new(mean, variance), gain)
}

pub fn filter_step(
    clim: GaussianBelief,
    fusion: Option<GaussianBelief>,
    y: Observation,
    obs: &ObservationModel,
) -> FilteredStep {
    let predicted = match fusion {
        Some(f) => predict(clim, f),
        None => clim,
    };
    let (posterior, gain) = update(predicted, y, obs);
    FilteredStep {
        prior_clim: clim,
        prior_fusion: fusion,
        predicted,
        posterior,
        gain,
        observed: y.valid,
    }
}

/// Runs [`filter_step`] over every month of `observations`, reading the
/// climatology prior from the calendar month of each slot.
pub fn filter_series(
    clim_by_month: &[GaussianBelief; 12],
    fusion_by_step: &[Option<GaussianBelief>],
    observations: &PixelSeries,
    obs: &ObservationModel,
) -> Result<Vec<FilteredStep>> {
    if fusion_by_step.len() != observations.len() {
        return Err(Error::LengthMismatch {
            what: "fusion priors",
            expected: observations.len(),
            found: fusion_by_step.len(),
        });
    }
    Ok(observations
        .observations
        .iter()
        .zip(fusion_by_step)
        .enumerate()
        .map(|(step, (&y, &fusion))| {
            let month = observations.period_of(step).month_index();
            filter_step(clim_by_month[month], fusion, y, obs)
        })
        .collect())
}
