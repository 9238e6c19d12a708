//! End-to-end plumbing: load composites, build the archive, fit fusion
//! models, assemble per-pixel filter inputs, run the filter, cross-validate
//! and score against truth.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::climatology::{Climatology, PixelArchive};
use crate::error::{Error, Result};
use crate::evaluate::{self, leave_one_out_pixels, HeldOut, Metrics, PixelInputs, Site};
use crate::fusion::{apply_fusion, fit_band, FusionModels, FusionOptions};
use crate::ingest::{
    collocation_map, composite_by_month, extract_series, read_scene_dir, GridGeometry, GridSidecar,
    QualityPolicy, SceneGrid,
};
use crate::model::{filter_series, FilteredStep, ObservationModel};
use crate::synth::SyntheticSite;
use crate::types::{PixelId, YearMonth};

/// Monthly composites of both sensors, sorted by period then band.
#[derive(Debug, Clone)]
pub struct SiteData {
    pub fine_geometry: GridGeometry,
    pub coarse_geometry: GridGeometry,
    pub fine: Vec<SceneGrid>,
    pub coarse: Vec<SceneGrid>,
}

fn sort_composites(grids: &mut [SceneGrid]) {
    grids.sort_by(|a, b| (a.period, &a.band).cmp(&(b.period, &b.band)));
}

fn common_geometry(grids: &[SceneGrid], what: &str) -> Result<GridGeometry> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidParameter(format!("no {what} composites")))?;
    if let Some(bad) = grids.iter().find(|g| g.geometry != first.geometry) {
        return Err(Error::GeometryMismatch(format!(
            "{what} composite {} {:?} differs from {:?}",
            bad.band, bad.period, first.geometry
        )));
    }
    Ok(first.geometry)
}

/// Band names found in the sidecars of a scene directory.
pub fn discover_bands(dir: &Path) -> Result<Vec<String>> {
    let mut bands = BTreeSet::new();
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if let Ok(sidecar) = serde_json::from_str::<GridSidecar>(&text) {
                bands.insert(sidecar.band);
            }
        }
    }
    Ok(bands.into_iter().collect())
}

/// Monthly composites of every band in `dir`, sorted by period then band.
/// A missing directory holds no scenes.
pub fn load_composites(
    dir: &Path,
    bands: &[String],
    policy: &QualityPolicy,
) -> Result<Vec<SceneGrid>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for band in bands {
        let scenes = read_scene_dir(dir, band)?;
        if scenes.is_empty() {
            log::warn!("{}: no scenes for band {band}", dir.display());
        }
        out.extend(composite_by_month(scenes, policy)?);
    }
    sort_composites(&mut out);
    Ok(out)
}

impl SiteData {
    pub fn new(mut fine: Vec<SceneGrid>, mut coarse: Vec<SceneGrid>) -> Result<Self> {
        sort_composites(&mut fine);
        sort_composites(&mut coarse);
        Ok(Self {
            fine_geometry: common_geometry(&fine, "fine")?,
            coarse_geometry: common_geometry(&coarse, "coarse")?,
            fine,
            coarse,
        })
    }

    pub fn from_synthetic(site: &SyntheticSite) -> Result<Self> {
        Self::new(site.fine_obs.clone(), site.coarse_obs.clone())
    }

    /// Reads `dir/fine` and `dir/coarse`, masks every scene with `policy`
    /// and composites each month.
    pub fn load(dir: &Path, bands: &[String], policy: &QualityPolicy) -> Result<Self> {
        let fine = load_composites(&dir.join("fine"), bands, policy)?;
        for band in bands {
            if !fine.iter().any(|g| &g.band == band) {
                return Err(Error::EmptyArchive { band: band.clone() });
            }
        }
        let coarse = load_composites(&dir.join("coarse"), bands, policy)?;
        if coarse.is_empty() {
            return Err(Error::EmptyInput("no coarse scenes"));
        }
        Self::new(fine, coarse)
    }

    pub fn bands(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in &self.fine {
            if !out.contains(&g.band) {
                out.push(g.band.clone());
            }
        }
        out
    }

    fn find<'a>(grids: &'a [SceneGrid], band: &str, period: YearMonth) -> Option<&'a SceneGrid> {
        grids
            .iter()
            .find(|g| g.band == band && g.period == Some(period))
    }

    pub fn fine_at(&self, band: &str, period: YearMonth) -> Option<&SceneGrid> {
        Self::find(&self.fine, band, period)
    }

    pub fn coarse_at(&self, band: &str, period: YearMonth) -> Option<&SceneGrid> {
        Self::find(&self.coarse, band, period)
    }

    pub fn archive(&self, years: (i32, i32)) -> Result<PixelArchive> {
        PixelArchive::from_composites(self.fine_geometry, &self.fine, years)
    }
}

/// Nearest-neighbor coarse values on the fine grid.
fn collocated(map: &[Option<usize>], coarse: &SceneGrid) -> Vec<f32> {
    map.iter()
        .map(|c| c.map_or(f32::NAN, |c| coarse.values[c]))
        .collect()
}

/// Fits one model per fine pixel and band on every month within `years`
/// where both sensors have a composite.
pub fn fit_fusion(
    data: &SiteData,
    years: (i32, i32),
    options: &FusionOptions,
) -> Result<FusionModels> {
    let map = collocation_map(&data.coarse_geometry, &data.fine_geometry)?;
    let n = data.fine_geometry.len();
    let mut bands = Vec::new();
    for band in data.bands() {
        let mut months = Vec::new();
        let mut fine = Vec::new();
        let mut coarse = Vec::new();
        for f in data.fine.iter().filter(|g| g.band == band) {
            let period = f.period.expect("composites have periods");
            if period.year < years.0 || period.year > years.1 {
                continue;
            }
            if let Some(c) = data.coarse_at(&band, period) {
                months.push(period.ordinal());
                fine.push(f.values.as_slice());
                coarse.push(collocated(&map, c));
            }
        }
        let coarse_refs: Vec<&[f32]> = coarse.iter().map(Vec::as_slice).collect();
        let fitted = fit_band(&band, &months, &fine, &coarse_refs, n, options)?;
        let degenerate = fitted.degenerate_count();
        if degenerate == n {
            log::warn!("band {band}: every pixel has a degenerate fusion model");
        } else if degenerate > 0 {
            log::info!("band {band}: {degenerate} of {n} fusion models are degenerate");
        }
        bands.push(fitted);
    }
    Ok(FusionModels {
        geometry: data.fine_geometry,
        options: *options,
        bands,
    })
}

/// Filter inputs for every pixel in `pixels` over the twelve months of
/// `year`.
pub fn target_inputs(
    data: &SiteData,
    clim: &Climatology,
    fusion: &FusionModels,
    band: &str,
    year: i32,
    pixels: &[PixelId],
) -> Result<Vec<PixelInputs>> {
    let missing = |what: &str| Error::InvalidParameter(format!("{what} has no band {band}"));
    clim.band(band).ok_or_else(|| missing("climatology"))?;
    let band_fusion = fusion
        .band(band)
        .ok_or_else(|| missing("fusion model set"))?;
    if clim.geometry != data.fine_geometry || fusion.geometry != data.fine_geometry {
        return Err(Error::GeometryMismatch(
            "climatology, fusion models and fine composites must share one grid".into(),
        ));
    }

    let start = YearMonth::new(year, 1);
    let end = YearMonth::new(year, 12);
    let target: Vec<SceneGrid> = YearMonth::range_inclusive(start, end)
        .filter_map(|ym| data.fine_at(band, ym).cloned())
        .collect();
    let series = extract_series(&target, pixels, start, end)?;
    let series = if series.is_empty() {
        // no fine composite at all in the target year
        pixels
            .iter()
            .map(|&pixel| crate::types::PixelSeries {
                pixel,
                band: band.to_string(),
                start,
                observations: vec![crate::types::Observation::missing(); 12],
            })
            .collect()
    } else {
        series
    };

    let map = collocation_map(&data.coarse_geometry, &data.fine_geometry)?;
    let coarse: Vec<Option<Vec<f32>>> = YearMonth::range_inclusive(start, end)
        .map(|ym| data.coarse_at(band, ym).map(|c| collocated(&map, c)))
        .collect();

    series
        .into_par_iter()
        .map(|series| {
            let p = series.pixel as usize;
            let clim_by_month = clim
                .monthly_priors(series.pixel, band)
                .ok_or_else(|| missing("climatology"))?;
            let model = &band_fusion.models[p];
            let fusion_by_step = coarse
                .iter()
                .map(|plane| {
                    plane
                        .as_ref()
                        .map(|v| v[p])
                        .filter(|v| !v.is_nan())
                        .map(|v| apply_fusion(model, f64::from(v)))
                })
                .collect();
            Ok(PixelInputs {
                series,
                clim_by_month,
                fusion_by_step,
            })
        })
        .collect()
}

pub fn run_filter(
    inputs: &[PixelInputs],
    obs: &ObservationModel,
) -> Result<Vec<Vec<FilteredStep>>> {
    inputs
        .par_iter()
        .map(|i| filter_series(&i.clim_by_month, &i.fusion_by_step, &i.series, obs))
        .collect()
}

/// How the observation model is configured per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationSettings {
    pub h: f64,
    /// Fixed noise variance; estimated from the archive when absent.
    pub r: Option<f64>,
    pub r_factor: f64,
}

impl Default for ObservationSettings {
    fn default() -> Self {
        Self {
            h: 1.0,
            r: None,
            r_factor: evaluate::DEFAULT_R_FACTOR,
        }
    }
}

impl ObservationSettings {
    pub fn resolve(
        &self,
        archive: &PixelArchive,
        clim: &Climatology,
    ) -> Result<BTreeMap<String, ObservationModel>> {
        let rs = match self.r {
            Some(r) => clim.bands().iter().map(|b| (b.band.clone(), r)).collect(),
            None => evaluate::estimate_r(archive, clim, self.r_factor)?,
        };
        rs.into_iter()
            .map(|(band, r)| Ok((band, ObservationModel::new(self.h, r)?)))
            .collect()
    }
}

pub const FILTERED_CSV_HEADER: [&str; 9] = [
    "pixel_id", "band", "year", "month", "estimate", "variance", "ci_low", "ci_high", "observed",
];

/// Half-width multiplier of the reported interval.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredRow {
    pub pixel: PixelId,
    pub band: String,
    pub period: YearMonth,
    pub estimate: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub observed: bool,
}

impl FilteredRow {
    pub fn new(pixel: PixelId, band: &str, period: YearMonth, step: &FilteredStep) -> Self {
        let (ci_low, ci_high) = step.posterior.interval(CI_Z);
        Self {
            pixel,
            band: band.to_string(),
            period,
            estimate: step.posterior.mean(),
            variance: step.posterior.variance(),
            ci_low,
            ci_high,
            observed: step.observed,
        }
    }

    pub fn rows(inputs: &[PixelInputs], steps: &[Vec<FilteredStep>]) -> Vec<FilteredRow> {
        inputs
            .iter()
            .zip(steps)
            .flat_map(|(i, s)| {
                s.iter().enumerate().map(|(t, step)| {
                    FilteredRow::new(i.series.pixel, &i.series.band, i.series.period_of(t), step)
                })
            })
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(PathBuf::from("<csv>"), e)
}

pub fn write_filtered_csv<W: Write>(writer: W, rows: &[FilteredRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(FILTERED_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.pixel.to_string(),
            r.band.clone(),
            r.period.year.to_string(),
            r.period.month().to_string(),
            r.estimate.to_string(),
            r.variance.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.observed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(PathBuf::from("<csv>"), e))
}

pub fn read_filtered_csv<R: Read>(reader: R) -> Result<Vec<FilteredRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(FILTERED_CSV_HEADER) {
        return Err(Error::format(
            "<csv>",
            format!("unexpected header {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad = |what: &str| Error::format("<csv>", format!("row {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| record[i].parse::<f64>().map_err(|_| bad(what));
        let year = record[2].parse().map_err(|_| bad("year"))?;
        let month = record[3].parse().map_err(|_| bad("month"))?;
        out.push(FilteredRow {
            pixel: record[0].parse().map_err(|_| bad("pixel_id"))?,
            band: record[1].to_string(),
            period: YearMonth::try_new(year, month).map_err(|_| bad("month"))?,
            estimate: num(4, "estimate")?,
            variance: num(5, "variance")?,
            ci_low: num(6, "ci_low")?,
            ci_high: num(7, "ci_high")?,
            observed: record[8].parse().map_err(|_| bad("observed"))?,
        });
    }
    Ok(out)
}

/// Cross-validation results of one site and band.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteValidation {
    pub site: String,
    pub band: String,
    pub metrics: Metrics,
    pub rho: Vec<(PixelId, f64)>,
}

/// Leave-one-out over every pixel of every site. Sites without a single
/// held-out pair are skipped with a warning.
pub fn cross_validate(
    inputs: &[PixelInputs],
    obs: &ObservationModel,
    sites: &[Site],
    geometry: &GridGeometry,
) -> Result<Vec<SiteValidation>> {
    let Some(band) = inputs.first().map(|i| i.series.band.clone()) else {
        return Ok(Vec::new());
    };
    let (pairs, _) = leave_one_out_pixels(inputs, obs)?;
    let mut by_pixel: BTreeMap<PixelId, Vec<HeldOut>> = BTreeMap::new();
    for p in pairs {
        by_pixel.entry(p.pixel).or_default().push(p);
    }
    let mut out = Vec::new();
    for site in sites {
        let site_pairs: Vec<HeldOut> = site
            .pixels(geometry)?
            .iter()
            .filter_map(|p| by_pixel.get(p))
            .flatten()
            .copied()
            .collect();
        if site_pairs.is_empty() {
            log::warn!("site {} band {band}: nothing to cross-validate", site.name);
            continue;
        }
        out.push(SiteValidation {
            site: site.name.clone(),
            band: band.clone(),
            metrics: evaluate::metrics(&site_pairs)?,
            rho: evaluate::per_pixel_rho(&site_pairs),
        });
    }
    Ok(out)
}

/// RMSE against truth of the filter and of the two priors alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skill {
    pub band: String,
    pub filtered_rmse: f64,
    pub climatology_rmse: f64,
    /// Fusion prediction where coarse data exist, climatology elsewhere.
    pub fusion_rmse: f64,
    /// Raw fine observations on observed months.
    pub raw_rmse_observed: f64,
    pub filtered_rmse_observed: f64,
    pub climatology_rmse_gaps: f64,
    pub filtered_rmse_gaps: f64,
    pub n: usize,
    pub n_gaps: usize,
}

pub const SKILL_CSV_HEADER: &str = "band,filtered_rmse,climatology_rmse,fusion_rmse,raw_rmse_observed,filtered_rmse_observed,climatology_rmse_gaps,filtered_rmse_gaps,n,n_gaps";

impl Skill {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.band,
            self.filtered_rmse,
            self.climatology_rmse,
            self.fusion_rmse,
            self.raw_rmse_observed,
            self.filtered_rmse_observed,
            self.climatology_rmse_gaps,
            self.filtered_rmse_gaps,
            self.n,
            self.n_gaps
        )
    }
}

/// Scores filter output against `truth`, a grid per target month of the
/// same band (missing months are skipped).
pub fn skill(
    inputs: &[PixelInputs],
    steps: &[Vec<FilteredStep>],
    truth: &[SceneGrid],
) -> Result<Skill> {
    let first = inputs
        .first()
        .ok_or(Error::EmptyInput("no pixels to score"))?;
    let band = first.series.band.clone();
    let start = first.series.start;
    let end = first.series.period_of(first.series.len().saturating_sub(1));
    let pixels: Vec<PixelId> = inputs.iter().map(|i| i.series.pixel).collect();
    let mut truth: Vec<SceneGrid> = truth.iter().filter(|g| g.band == band).cloned().collect();
    sort_composites(&mut truth);
    let truths = extract_series(&truth, &pixels, start, end)?;

    let mut filtered = Vec::new();
    let mut clim = Vec::new();
    let mut fusion = Vec::new();
    let mut raw_obs = Vec::new();
    let mut filtered_obs = Vec::new();
    let mut clim_gap = Vec::new();
    let mut filtered_gap = Vec::new();
    for ((input, steps), t) in inputs.iter().zip(steps).zip(&truths) {
        for (k, step) in steps.iter().enumerate() {
            let Some(truth) = t.observations[k].get() else {
                continue;
            };
            let c = step.prior_clim.mean();
            let f = step.prior_fusion.map_or(c, |b| b.mean());
            let x = step.posterior.mean();
            filtered.push((x, truth));
            clim.push((c, truth));
            fusion.push((f, truth));
            match input.series.observations[k].get() {
                Some(y) => {
                    raw_obs.push((y, truth));
                    filtered_obs.push((x, truth));
                }
                None => {
                    clim_gap.push((c, truth));
                    filtered_gap.push((x, truth));
                }
            }
        }
    }
    let r = |v: &[(f64, f64)]| evaluate::rmse(v.iter().copied()).unwrap_or(f64::NAN);
    if filtered.is_empty() {
        return Err(Error::EmptyInput("no truth overlaps the filtered period"));
    }
    Ok(Skill {
        band,
        filtered_rmse: r(&filtered),
        climatology_rmse: r(&clim),
        fusion_rmse: r(&fusion),
        raw_rmse_observed: r(&raw_obs),
        filtered_rmse_observed: r(&filtered_obs),
        climatology_rmse_gaps: r(&clim_gap),
        filtered_rmse_gaps: r(&filtered_gap),
        n: filtered.len(),
        n_gaps: filtered_gap.len(),
    })
}
