//! Seeded synthetic sites with known ground truth.
//!
//! Truth for pixel `p`, band `b`, month `m` of year `y`:
//!
//! ```text
//! baseline_b + amplitude_b * sin(2π (m - phase_b) / 12)
//!     + offset_p                  ~ N(0, heterogeneity_sd²), fixed per pixel
//!     + regional(block(p), y, m)  ~ N(0, regional_anomaly_sd²), shared by a coarse block
//!     + local(p, y, m)            ~ N(0, local_anomaly_sd²)
//!     + optional spike
//! ```
//!
//! Fine observations add `N(0, fine_noise_sd²)` and lose a Bernoulli
//! fraction of slots to clouds. Coarse observations are block means of the
//! truth pushed through the inverse fusion map `(truth - intercept) / slope`
//! plus `N(0, coarse_noise_sd²)`.
//!
//! Every fine pixel and every coarse block draws from its own ChaCha
//! stream keyed by the seed, so output does not depend on thread count or
//! generation order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::Site;
use crate::ingest::{extract_series, write_grid, write_series_csv, GridGeometry, SceneGrid};
use crate::types::{PixelId, YearMonth};

/// Added to the truth of cloud-covered fine pixels in the raw scenes.
pub const CLOUD_BRIGHTENING: f32 = 0.25;
/// QA code of clear pixels.
pub const QA_CLEAR: u16 = 0;
/// QA code of cloudy or missing pixels.
pub const QA_CLOUD: u16 = 1;

const FINE_STREAM: u64 = 1 << 56;
const COARSE_STREAM: u64 = 2 << 56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSignal {
    pub name: String,
    pub baseline: f64,
    pub amplitude: f64,
    /// Month offset of the sinusoid, in months.
    pub phase: f64,
    pub fusion_slope: f64,
    pub fusion_intercept: f64,
}

/// Additive disturbance (snow, say) hitting a pixel-month with some
/// probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeConfig {
    pub months: Vec<u8>,
    pub magnitude: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Archive years preceding the target year.
    pub years: usize,
    pub first_year: i32,
    pub bands: Vec<BandSignal>,
    /// Fine pixels per coarse pixel side.
    pub coarse_block: usize,
    pub fine_pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub fine_noise_sd: f64,
    pub coarse_noise_sd: f64,
    pub cloud_gap_fraction: f64,
    pub coarse_gap_fraction: f64,
    pub heterogeneity_sd: f64,
    pub regional_anomaly_sd: f64,
    pub local_anomaly_sd: f64,
    pub spike: Option<SpikeConfig>,
    /// Target-year months (1..=12) whose fine observations are removed
    /// for every pixel.
    pub forced_gap_months: Vec<u8>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            width: 100,
            height: 100,
            years: 10,
            first_year: 2000,
            bands: vec![
                BandSignal {
                    name: "B3".into(),
                    baseline: 0.08,
                    amplitude: 0.03,
                    phase: 10.0,
                    fusion_slope: 0.9,
                    fusion_intercept: 0.01,
                },
                BandSignal {
                    name: "B4".into(),
                    baseline: 0.28,
                    amplitude: 0.12,
                    phase: 4.0,
                    fusion_slope: 0.85,
                    fusion_intercept: 0.03,
                },
            ],
            coarse_block: 16,
            fine_pixel_size: 30.0,
            origin_x: 500_000.0,
            origin_y: 5_200_000.0,
            fine_noise_sd: 0.02,
            coarse_noise_sd: 0.01,
            cloud_gap_fraction: 0.3,
            coarse_gap_fraction: 0.05,
            heterogeneity_sd: 0.02,
            regional_anomaly_sd: 0.04,
            local_anomaly_sd: 0.02,
            spike: None,
            forced_gap_months: Vec::new(),
        }
    }
}

impl SyntheticConfig {
    /// No noise, anomalies, heterogeneity or gaps.
    pub fn noiseless(mut self) -> Self {
        self.fine_noise_sd = 0.0;
        self.coarse_noise_sd = 0.0;
        self.cloud_gap_fraction = 0.0;
        self.coarse_gap_fraction = 0.0;
        self.heterogeneity_sd = 0.0;
        self.regional_anomaly_sd = 0.0;
        self.local_anomaly_sd = 0.0;
        self
    }

    pub fn target_year(&self) -> i32 {
        self.first_year + self.years as i32
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid must be at least 1x1".into());
        }
        if self.years == 0 {
            return bad("at least one archive year is needed".into());
        }
        if self.bands.is_empty() {
            return bad("at least one band is needed".into());
        }
        if self.coarse_block < 1 {
            return bad("coarse_block must be >= 1".into());
        }
        if !(self.fine_pixel_size.is_finite() && self.fine_pixel_size > 0.0) {
            return bad("fine_pixel_size must be positive".into());
        }
        for (name, sd) in [
            ("fine_noise_sd", self.fine_noise_sd),
            ("coarse_noise_sd", self.coarse_noise_sd),
            ("heterogeneity_sd", self.heterogeneity_sd),
            ("regional_anomaly_sd", self.regional_anomaly_sd),
            ("local_anomaly_sd", self.local_anomaly_sd),
        ] {
            if !(sd.is_finite() && sd >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {sd}"));
            }
        }
        if !(0.0..1.0).contains(&self.cloud_gap_fraction) {
            return bad(format!(
                "cloud_gap_fraction must be in [0, 1), got {}",
                self.cloud_gap_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.coarse_gap_fraction) {
            return bad(format!(
                "coarse_gap_fraction must be in [0, 1], got {}",
                self.coarse_gap_fraction
            ));
        }
        for b in &self.bands {
            if b.fusion_slope == 0.0 || !b.fusion_slope.is_finite() {
                return bad(format!(
                    "band {} needs a finite non-zero fusion slope",
                    b.name
                ));
            }
            if ![b.baseline, b.amplitude, b.phase, b.fusion_intercept]
                .iter()
                .all(|v| v.is_finite())
            {
                return bad(format!("band {} has non-finite parameters", b.name));
            }
        }
        if self.forced_gap_months.iter().any(|m| !(1..=12).contains(m)) {
            return bad("forced_gap_months must be in 1..=12".into());
        }
        if let Some(s) = &self.spike {
            if !(0.0..=1.0).contains(&s.probability)
                || s.months.iter().any(|m| !(1..=12).contains(m))
            {
                return bad("spike needs a probability in [0, 1] and months in 1..=12".into());
            }
        }
        Ok(())
    }

    pub fn fine_geometry(&self) -> GridGeometry {
        GridGeometry {
            width: self.width,
            height: self.height,
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_size: self.fine_pixel_size,
        }
    }

    pub fn coarse_geometry(&self) -> GridGeometry {
        GridGeometry {
            width: self.width.div_ceil(self.coarse_block),
            height: self.height.div_ceil(self.coarse_block),
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_size: self.fine_pixel_size * self.coarse_block as f64,
        }
    }

    /// Archive months followed by the twelve target months.
    pub fn months(&self) -> Vec<YearMonth> {
        let start = YearMonth::new(self.first_year, 1);
        let end = YearMonth::new(self.target_year(), 12);
        start.range_inclusive(end).collect()
    }
}

/// A generated site. Grids are ordered by month, then band.
#[derive(Debug, Clone)]
pub struct SyntheticSite {
    pub config: SyntheticConfig,
    pub fine_geometry: GridGeometry,
    pub coarse_geometry: GridGeometry,
    pub months: Vec<YearMonth>,
    pub truth: Vec<SceneGrid>,
    /// Quality-masked fine composites; `qa` marks the cloudy slots.
    pub fine_obs: Vec<SceneGrid>,
    pub coarse_obs: Vec<SceneGrid>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sd * z
}

struct FinePixel {
    truth: Vec<f32>,
    obs: Vec<f32>,
}

pub fn generate_site(config: &SyntheticConfig) -> Result<SyntheticSite> {
    config.validate()?;
    let fine_geometry = config.fine_geometry();
    let coarse_geometry = config.coarse_geometry();
    let months = config.months();
    let n_bands = config.bands.len();
    let slots = months.len() * n_bands;
    let target_year = config.target_year();

    // regional anomalies and coarse noise, one stream per coarse block
    let blocks: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..coarse_geometry.len())
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(config.seed, COARSE_STREAM | c as u64);
            let mut anomaly = Vec::with_capacity(slots);
            let mut noise = Vec::with_capacity(slots);
            let mut gap = Vec::with_capacity(slots);
            for _ in 0..slots {
                anomaly.push(normal(&mut rng, config.regional_anomaly_sd));
                noise.push(normal(&mut rng, config.coarse_noise_sd));
                gap.push(rng.random::<f64>() < config.coarse_gap_fraction);
            }
            (anomaly, noise, gap)
        })
        .collect();

    let block_of = |p: usize| {
        let (col, row) = fine_geometry.col_row(p);
        coarse_geometry.index(col / config.coarse_block, row / config.coarse_block)
    };

    let pixels: Vec<FinePixel> = (0..fine_geometry.len())
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(config.seed, FINE_STREAM | p as u64);
            let offsets: Vec<f64> = (0..n_bands)
                .map(|_| normal(&mut rng, config.heterogeneity_sd))
                .collect();
            let regional = &blocks[block_of(p)].0;
            let mut truth = Vec::with_capacity(slots);
            let mut obs = Vec::with_capacity(slots);
            for (t, ym) in months.iter().enumerate() {
                for (b, signal) in config.bands.iter().enumerate() {
                    let slot = t * n_bands + b;
                    let local = normal(&mut rng, config.local_anomaly_sd);
                    let noise = normal(&mut rng, config.fine_noise_sd);
                    let cloudy = rng.random::<f64>() < config.cloud_gap_fraction;
                    let mut spike = 0.0;
                    if let Some(s) = &config.spike {
                        let hit = rng.random::<f64>() < s.probability;
                        if hit && s.months.contains(&ym.month()) {
                            spike = s.magnitude;
                        }
                    }
                    let seasonal = signal.baseline
                        + signal.amplitude
                            * (2.0 * PI * (f64::from(ym.month()) - signal.phase) / 12.0).sin();
                    let value = seasonal + offsets[b] + regional[slot] + local + spike;
                    let forced =
                        ym.year == target_year && config.forced_gap_months.contains(&ym.month());
                    truth.push(value as f32);
                    obs.push(if cloudy || forced {
                        f32::NAN
                    } else {
                        (value + noise) as f32
                    });
                }
            }
            FinePixel { truth, obs }
        })
        .collect();

    // block sums of the inverse-mapped truth
    let mut block_sum = vec![0.0f64; coarse_geometry.len() * slots];
    let mut block_count = vec![0usize; coarse_geometry.len()];
    for (p, px) in pixels.iter().enumerate() {
        let c = block_of(p);
        block_count[c] += 1;
        for (slot, &t) in px.truth.iter().enumerate() {
            let signal = &config.bands[slot % n_bands];
            block_sum[c * slots + slot] +=
                (f64::from(t) - signal.fusion_intercept) / signal.fusion_slope;
        }
    }

    let mut truth = Vec::with_capacity(slots);
    let mut fine_obs = Vec::with_capacity(slots);
    let mut coarse_obs = Vec::with_capacity(slots);
    for (t, &ym) in months.iter().enumerate() {
        for (b, signal) in config.bands.iter().enumerate() {
            let slot = t * n_bands + b;
            let tv: Vec<f32> = pixels.iter().map(|px| px.truth[slot]).collect();
            let ov: Vec<f32> = pixels.iter().map(|px| px.obs[slot]).collect();
            let qa: Vec<u16> = ov
                .iter()
                .map(|v| if v.is_nan() { QA_CLOUD } else { QA_CLEAR })
                .collect();
            truth.push(SceneGrid::new(fine_geometry, signal.name.clone(), tv)?.with_period(ym));
            fine_obs.push(
                SceneGrid::new(fine_geometry, signal.name.clone(), ov)?
                    .with_period(ym)
                    .with_qa(qa)?,
            );

            let cv: Vec<f32> = (0..coarse_geometry.len())
                .map(|c| {
                    let (_, noise, gap) = &blocks[c];
                    if block_count[c] == 0 || gap[slot] {
                        return f32::NAN;
                    }
                    let mean = block_sum[c * slots + slot] / block_count[c] as f64;
                    (mean + noise[slot]) as f32
                })
                .collect();
            let cqa = cv
                .iter()
                .map(|v| if v.is_nan() { QA_CLOUD } else { QA_CLEAR })
                .collect();
            coarse_obs.push(
                SceneGrid::new(coarse_geometry, signal.name.clone(), cv)?
                    .with_period(ym)
                    .with_qa(cqa)?,
            );
        }
    }

    Ok(SyntheticSite {
        config: config.clone(),
        fine_geometry,
        coarse_geometry,
        months,
        truth,
        fine_obs,
        coarse_obs,
    })
}

impl SyntheticSite {
    pub fn target_year(&self) -> i32 {
        self.config.target_year()
    }

    pub fn band_names(&self) -> Vec<String> {
        self.config.bands.iter().map(|b| b.name.clone()).collect()
    }

    /// Raw fine scene as a sensor would deliver it: cloudy pixels carry a
    /// brightened value and `QA_CLOUD`.
    pub fn raw_fine_scene(&self, index: usize) -> SceneGrid {
        let mut scene = self.fine_obs[index].clone();
        let truth = &self.truth[index];
        for (v, t) in scene.values.iter_mut().zip(&truth.values) {
            if v.is_nan() {
                *v = t + CLOUD_BRIGHTENING;
            }
        }
        scene.qa_policy = None;
        scene
    }

    /// Default evaluation sites: five horizontal strips.
    pub fn default_sites(&self) -> Vec<Site> {
        Site::strips(&self.fine_geometry, 5)
    }

    /// Writes `fine/`, `coarse/` and `truth/` grids, target-year series
    /// CSVs, the generating config and the default site list.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let name = |g: &SceneGrid| {
            format!(
                "{}_{}",
                g.band,
                g.period.expect("synthetic grids have periods")
            )
        };
        for i in 0..self.fine_obs.len() {
            let raw = self.raw_fine_scene(i);
            write_grid(&dir.join("fine").join(name(&raw)), &raw, BTreeMap::new())?;
        }
        for g in &self.coarse_obs {
            write_grid(&dir.join("coarse").join(name(g)), g, BTreeMap::new())?;
        }
        for g in &self.truth {
            write_grid(&dir.join("truth").join(name(g)), g, BTreeMap::new())?;
        }

        let pixels: Vec<PixelId> = (0..self.fine_geometry.len() as PixelId).collect();
        let start = YearMonth::new(self.target_year(), 1);
        let end = YearMonth::new(self.target_year(), 12);
        for (file, grids) in [
            ("truth_target.csv", &self.truth),
            ("fine_target.csv", &self.fine_obs),
        ] {
            let series = extract_series(grids, &pixels, start, end)?;
            let path = dir.join(file);
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_series_csv(std::io::BufWriter::new(f), &series)?;
        }

        let write_json = |file: &str, value: serde_json::Value| -> Result<()> {
            let path = dir.join(file);
            let mut text = serde_json::to_string_pretty(&value).expect("json serializes");
            text.push('\n');
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write_json(
            "synthetic.json",
            serde_json::to_value(&self.config).expect("config serializes"),
        )?;
        write_json(
            "sites.json",
            serde_json::to_value(self.default_sites()).expect("sites serialize"),
        )
    }
}
