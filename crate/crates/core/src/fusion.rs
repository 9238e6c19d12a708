//! Per-pixel linear map from coarse-sensor to fine-sensor reflectance.
//!
//! Each fine pixel gets its own ordinary least squares fit of its
//! composites against the collocated coarse composites of the same months.
//! The fit's residual variance is the variance of the fusion prior.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_grid_raw, write_grid, GridGeometry, SceneGrid};
use crate::model::{GaussianBelief, VAR_FLOOR};

/// Regressor variance below which a fit is treated as vertical.
pub const MIN_REGRESSOR_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionOptions {
    pub min_pairs: usize,
    /// Variance returned by degenerate models (reflectance²).
    pub degenerate_variance: f64,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self {
            min_pairs: 6,
            degenerate_variance: 0.05,
        }
    }
}

/// A training sample: coarse and fine composites of the same pixel and month.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollocatedPair {
    pub coarse_value: f64,
    pub fine_value: f64,
    pub month_index: i64,
}

/// Linear fusion model of one pixel and band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionModel {
    pub slope: f64,
    pub intercept: f64,
    pub residual_variance: f64,
    pub n_pairs: usize,
    pub degenerate: bool,
}

impl FusionModel {
    pub fn degenerate(n_pairs: usize, options: &FusionOptions) -> Self {
        Self {
            slope: 1.0,
            intercept: 0.0,
            residual_variance: options.degenerate_variance,
            n_pairs,
            degenerate: true,
        }
    }
}

/// Ordinary least squares of fine on coarse, with the residual variance
/// `SSR / max(n - 2, 1)`. Too few pairs or a (near) constant regressor give
/// a degenerate identity model.
pub fn fit_fusion_model(pairs: &[CollocatedPair], options: &FusionOptions) -> FusionModel {
    let n = pairs.len();
    if n < options.min_pairs || n == 0 {
        return FusionModel::degenerate(n, options);
    }
    let nf = n as f64;
    let mean_x = pairs.iter().map(|p| p.coarse_value).sum::<f64>() / nf;
    let mean_y = pairs.iter().map(|p| p.fine_value).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for p in pairs {
        let dx = p.coarse_value - mean_x;
        sxx += dx * dx;
        sxy += dx * (p.fine_value - mean_y);
    }
    let spread = sxx / nf;
    if spread.is_nan() || spread < MIN_REGRESSOR_VARIANCE {
        return FusionModel::degenerate(n, options);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = pairs
        .iter()
        .map(|p| {
            let r = p.fine_value - (slope * p.coarse_value + intercept);
            r * r
        })
        .sum();
    let dof = n.saturating_sub(2).max(1) as f64;
    FusionModel {
        slope,
        intercept,
        residual_variance: ssr / dof,
        n_pairs: n,
        degenerate: false,
    }
}

/// Fusion prior for one coarse value. Degenerate or corrupt models pass the
/// coarse value through.
pub fn apply_fusion(model: &FusionModel, coarse_value: f64) -> GaussianBelief {
    let variance = usable_variance(model.residual_variance);
    let mean = model.slope * coarse_value + model.intercept;
    if model.degenerate || !mean.is_finite() {
        return GaussianBelief::new(coarse_value, variance);
    }
    GaussianBelief::new(mean, variance)
}

fn usable_variance(v: f64) -> f64 {
    if v.is_nan() {
        f64::MAX
    } else {
        v.clamp(VAR_FLOOR, f64::MAX)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandFusion {
    pub band: String,
    /// Indexed by pixel.
    pub models: Vec<FusionModel>,
}

impl BandFusion {
    pub fn degenerate_count(&self) -> usize {
        self.models.iter().filter(|m| m.degenerate).count()
    }
}

/// Fusion models of every pixel of a fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModels {
    pub geometry: GridGeometry,
    pub options: FusionOptions,
    pub bands: Vec<BandFusion>,
}

impl FusionModels {
    pub fn band(&self, band: &str) -> Option<&BandFusion> {
        self.bands.iter().find(|b| b.band == band)
    }

    /// Copy with parameters rounded to `f32`, the precision of the
    /// persisted grids.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.bands {
            for m in &mut b.models {
                m.slope = f64::from(m.slope as f32);
                m.intercept = f64::from(m.intercept as f32);
                m.residual_variance = f64::from(m.residual_variance as f32);
            }
        }
        out
    }
}

/// Fits every pixel independently. `fine` and `coarse_on_fine` are monthly
/// planes over the same months, the coarse ones already collocated onto the
/// fine grid; months where either value is `NaN` are skipped.
pub fn fit_band(
    band: &str,
    months: &[i64],
    fine: &[&[f32]],
    coarse_on_fine: &[&[f32]],
    pixel_count: usize,
    options: &FusionOptions,
) -> Result<BandFusion> {
    if fine.len() != months.len() || coarse_on_fine.len() != months.len() {
        return Err(Error::LengthMismatch {
            what: "fusion training months",
            expected: months.len(),
            found: fine.len().min(coarse_on_fine.len()),
        });
    }
    if let Some(bad) = fine
        .iter()
        .chain(coarse_on_fine)
        .find(|p| p.len() != pixel_count)
    {
        return Err(Error::LengthMismatch {
            what: "fusion training plane",
            expected: pixel_count,
            found: bad.len(),
        });
    }
    let models = (0..pixel_count)
        .into_par_iter()
        .map(|p| {
            let pairs: Vec<CollocatedPair> = months
                .iter()
                .enumerate()
                .filter_map(|(i, &month_index)| {
                    let (c, f) = (coarse_on_fine[i][p], fine[i][p]);
                    (!c.is_nan() && !f.is_nan()).then(|| CollocatedPair {
                        coarse_value: f64::from(c),
                        fine_value: f64::from(f),
                        month_index,
                    })
                })
                .collect();
            fit_fusion_model(&pairs, options)
        })
        .collect();
    Ok(BandFusion {
        band: band.to_string(),
        models,
    })
}

const MANIFEST: &str = "fusion.json";
const PARAMETERS: [&str; 5] = [
    "slope",
    "intercept",
    "residual_variance",
    "n_pairs",
    "degenerate",
];

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    geometry: GridGeometry,
    options: FusionOptions,
    min_regressor_variance: f64,
    bands: Vec<String>,
}

pub fn write_fusion(dir: &Path, models: &FusionModels) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for b in &models.bands {
        for param in PARAMETERS {
            let values: Vec<f32> = b
                .models
                .iter()
                .map(|m| match param {
                    "slope" => m.slope as f32,
                    "intercept" => m.intercept as f32,
                    "residual_variance" => m.residual_variance as f32,
                    "n_pairs" => m.n_pairs as f32,
                    _ => f32::from(u8::from(m.degenerate)),
                })
                .collect();
            let grid = SceneGrid::new(models.geometry, b.band.clone(), values)?;
            let mut attrs = BTreeMap::new();
            attrs.insert("parameter".into(), param.into());
            write_grid(&dir.join(format!("{}_{param}", b.band)), &grid, attrs)?;
        }
    }
    let manifest = Manifest {
        geometry: models.geometry,
        options: models.options,
        min_regressor_variance: MIN_REGRESSOR_VARIANCE,
        bands: models.bands.iter().map(|b| b.band.clone()).collect(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_fusion(dir: &Path) -> Result<FusionModels> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    let mut bands = Vec::new();
    for band in manifest.bands {
        let mut planes = Vec::new();
        for param in PARAMETERS {
            let (grid, _) = read_grid_raw(&dir.join(format!("{band}_{param}")))?;
            if grid.geometry != manifest.geometry {
                return Err(Error::format(
                    dir,
                    format!("{band}_{param} has the wrong shape"),
                ));
            }
            planes.push(grid.values);
        }
        let models = (0..manifest.geometry.len())
            .map(|p| FusionModel {
                slope: f64::from(planes[0][p]),
                intercept: f64::from(planes[1][p]),
                residual_variance: f64::from(planes[2][p]),
                n_pairs: planes[3][p] as usize,
                degenerate: planes[4][p] != 0.0,
            })
            .collect();
        bands.push(BandFusion { band, models });
    }
    Ok(FusionModels {
        geometry: manifest.geometry,
        options: manifest.options,
        bands,
    })
}
