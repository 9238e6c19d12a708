//! Leave-one-out cross-validation, error metrics and the observation-noise
//! estimator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::climatology::{Climatology, PixelArchive};
use crate::error::{Error, Result};
use crate::ingest::GridGeometry;
use crate::model::{filter_series, GaussianBelief, ObservationModel, R_FLOOR};
use crate::stats;
use crate::types::{Observation, PixelId, PixelSeries};

/// Default multiplier applied by [`estimate_r`].
pub const DEFAULT_R_FACTOR: f64 = 0.25;

/// Everything the filter needs for one pixel and band over the target
/// period.
#[derive(Debug, Clone)]
pub struct PixelInputs {
    pub series: PixelSeries,
    pub clim_by_month: [GaussianBelief; 12],
    pub fusion_by_step: Vec<Option<GaussianBelief>>,
}

/// A held-out observation and the filter's estimate without it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOut {
    pub pixel: PixelId,
    pub step: usize,
    pub prediction: f64,
    pub truth: f64,
}

/// Withholds each valid observation in turn, reruns the series filter and
/// pairs the posterior mean at the withheld step with the withheld value.
/// Climatology and fusion priors stay fixed across folds.
pub fn leave_one_out(inputs: &PixelInputs, obs: &ObservationModel) -> Result<Vec<HeldOut>> {
    let series = &inputs.series;
    let valid = series.valid_count();
    if valid < 2 {
        return Err(Error::InsufficientData {
            pixel: series.pixel,
            valid,
        });
    }
    let mut folds = Vec::with_capacity(valid);
    let mut fold = series.clone();
    for (step, o) in series.observations.iter().enumerate() {
        let Some(truth) = o.get() else { continue };
        fold.observations[step] = Observation::missing();
        let steps = filter_series(&inputs.clim_by_month, &inputs.fusion_by_step, &fold, obs)?;
        fold.observations[step] = *o;
        folds.push(HeldOut {
            pixel: series.pixel,
            step,
            prediction: steps[step].posterior.mean(),
            truth,
        });
    }
    Ok(folds)
}

/// Cross-validates many pixels of one band. Pixels with fewer than two
/// valid observations are skipped; their count is returned alongside.
pub fn leave_one_out_pixels(
    inputs: &[PixelInputs],
    obs: &ObservationModel,
) -> Result<(Vec<HeldOut>, usize)> {
    let per_pixel: Vec<Result<Vec<HeldOut>>> =
        inputs.par_iter().map(|p| leave_one_out(p, obs)).collect();
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for r in per_pixel {
        match r {
            Ok(folds) => pairs.extend(folds),
            Err(Error::InsufficientData { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} pixels with fewer than 2 valid observations");
    }
    Ok((pairs, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub me: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Mean per-pixel Pearson correlation; `None` when no pixel qualifies.
    pub mean_rho: Option<f64>,
    pub n_heldout: usize,
    /// Pixels contributing to `mean_rho`.
    pub rho_pixels: usize,
}

fn sorted_pairs(pairs: &[HeldOut]) -> Vec<HeldOut> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by_key(|p| (p.pixel, p.step));
    sorted
}

/// Per-pixel Pearson correlation between predictions and truths. Pixels
/// with fewer than three pairs or a constant series are left out.
pub fn per_pixel_rho(pairs: &[HeldOut]) -> Vec<(PixelId, f64)> {
    let sorted = sorted_pairs(pairs);
    sorted
        .chunk_by(|a, b| a.pixel == b.pixel)
        .filter(|g| g.len() >= 3)
        .filter_map(|g| {
            let pred: Vec<f64> = g.iter().map(|p| p.prediction).collect();
            let truth: Vec<f64> = g.iter().map(|p| p.truth).collect();
            stats::pearson(&pred, &truth).map(|r| (g[0].pixel, r))
        })
        .collect()
}

/// Summation runs in (pixel, step) order regardless of the input order.
pub fn metrics(pairs: &[HeldOut]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no held-out pairs"));
    }
    let sorted = sorted_pairs(pairs);
    let n = sorted.len() as f64;
    let (mut se, mut sse, mut sae) = (0.0, 0.0, 0.0);
    for p in &sorted {
        let e = p.prediction - p.truth;
        se += e;
        sse += e * e;
        sae += e.abs();
    }
    let rhos = per_pixel_rho(&sorted);
    let mean_rho =
        (!rhos.is_empty()).then(|| rhos.iter().map(|(_, r)| r).sum::<f64>() / rhos.len() as f64);
    Ok(Metrics {
        me: se / n,
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        mean_rho,
        n_heldout: sorted.len(),
        rho_pixels: rhos.len(),
    })
}

/// Root mean square difference over paired values.
pub fn rmse(pairs: impl IntoIterator<Item = (f64, f64)>) -> Option<f64> {
    let (mut sse, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        sse += (a - b) * (a - b);
        n += 1;
    }
    (n > 0).then(|| (sse / n as f64).sqrt())
}

/// A named rectangular window of the fine grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub name: String,
    pub col: usize,
    pub row: usize,
    pub width: usize,
    pub height: usize,
}

impl Site {
    pub fn pixels(&self, geometry: &GridGeometry) -> Result<Vec<PixelId>> {
        if self.width == 0
            || self.height == 0
            || self.col + self.width > geometry.width
            || self.row + self.height > geometry.height
        {
            return Err(Error::ConfigInvalid(format!(
                "site {} does not fit the {}x{} grid",
                self.name, geometry.width, geometry.height
            )));
        }
        Ok((self.row..self.row + self.height)
            .flat_map(|r| {
                (self.col..self.col + self.width).map(move |c| (r * geometry.width + c) as PixelId)
            })
            .collect())
    }

    /// `count` full-width horizontal strips covering the grid, named 1..=count.
    pub fn strips(geometry: &GridGeometry, count: usize) -> Vec<Site> {
        let count = count.clamp(1, geometry.height);
        (0..count)
            .map(|i| {
                let row = i * geometry.height / count;
                let end = (i + 1) * geometry.height / count;
                Site {
                    name: (i + 1).to_string(),
                    col: 0,
                    row,
                    width: geometry.width,
                    height: end - row,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub site: String,
    pub band: String,
    pub metrics: Metrics,
}

/// Cross-validation metrics per site and band.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_CSV_HEADER: &str = "site,band,me,rmse,mae,mean_rho,n_heldout";

fn band_heading(band: &str) -> String {
    match band.strip_prefix('B') {
        Some(num) if !num.is_empty() && num.chars().all(|c| c.is_ascii_digit()) => {
            format!("Band {num}")
        }
        _ => format!("Band {band}"),
    }
}

impl MetricsReport {
    pub fn push(&mut self, site: &str, band: &str, metrics: Metrics) {
        self.rows.push(ReportRow {
            site: site.to_string(),
            band: band.to_string(),
            metrics,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let rho = m
                .mean_rho
                .map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.site, r.band, m.me, m.rmse, m.mae, rho, m.n_heldout
            );
        }
        out
    }

    /// Plain-text table with one block of site rows per band.
    pub fn to_table(&self) -> String {
        const COLS: [&str; 5] = ["Site", "ME", "RMSE", "MAE", "Mean ρ"];
        let rule = format!(
            "+{:-<8}+{}\n",
            "",
            ["-"; 4].map(|d| d.repeat(10)).join("+") + "+"
        );
        let inner = rule.chars().count() - 3;
        let mut out = String::new();
        out.push_str(&rule);
        let _ = writeln!(
            out,
            "| {:<6} |{:>9} |{:>9} |{:>9} |{:>9} |",
            COLS[0], COLS[1], COLS[2], COLS[3], COLS[4]
        );
        out.push_str(&rule);

        let mut bands: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !bands.contains(&r.band.as_str()) {
                bands.push(&r.band);
            }
        }
        for band in bands {
            let _ = writeln!(out, "|{:^inner$}|", band_heading(band));
            out.push_str(&rule);
            for r in self.rows.iter().filter(|r| r.band == band) {
                let m = &r.metrics;
                let rho = m
                    .mean_rho
                    .map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(
                    out,
                    "| {:<6} |{:>9.4} |{:>9.4} |{:>9.4} |{:>9} |",
                    r.site, m.me, m.rmse, m.mae, rho
                );
            }
            out.push_str(&rule);
        }
        out
    }
}

/// Observation-noise variance per band: `factor` times the variance of the
/// archive's departures from their climatology median, floored at
/// [`R_FLOOR`].
pub fn estimate_r(
    archive: &PixelArchive,
    clim: &Climatology,
    factor: f64,
) -> Result<BTreeMap<String, f64>> {
    if !(factor.is_finite() && factor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "R factor must be >= 0, got {factor}"
        )));
    }
    let (y0, y1) = clim.options.period;
    let mut out = BTreeMap::new();
    for band in archive.bands() {
        let bc = clim.band(&band.band).ok_or_else(|| {
            Error::InvalidParameter(format!("climatology has no band {}", band.band))
        })?;
        let mut residuals = Vec::new();
        for pixel in 0..archive.pixel_count() as PixelId {
            for r in band.records(pixel) {
                if !r.valid || r.period.year < y0 || r.period.year > y1 {
                    continue;
                }
                let cell = bc.cell(pixel, r.period.month());
                if !cell.is_absent() {
                    residuals.push(r.value - cell.median);
                }
            }
        }
        let variance =
            stats::population_variance(&residuals).ok_or_else(|| Error::EmptyArchive {
                band: band.band.clone(),
            })?;
        out.insert(band.band.clone(), (factor * variance).max(R_FLOOR));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::climatology::{build_climatology, ArchiveRecord, ClimatologyOptions};
    use crate::model::filter_step;
    use crate::types::YearMonth;

    fn inputs(valid_steps: &[usize]) -> PixelInputs {
        let observations = (0..12)
            .map(|i| {
                if valid_steps.contains(&i) {
                    Observation::valid(0.2 + 0.01 * i as f64)
                } else {
                    Observation::missing()
                }
            })
            .collect();
        PixelInputs {
            series: PixelSeries {
                pixel: 5,
                band: "B3".into(),
                start: YearMonth::new(2010, 1),
                observations,
            },
            clim_by_month: std::array::from_fn(|m| {
                GaussianBelief::new(0.2 + 0.005 * m as f64, 0.002)
            }),
            fusion_by_step: (0..12)
                .map(|i| (i % 4 != 0).then(|| GaussianBelief::new(0.25, 0.001)))
                .collect(),
        }
    }

    fn obs() -> ObservationModel {
        ObservationModel::identity(0.0005).unwrap()
    }

    #[test]
    fn one_fold_per_valid_observation() {
        let folds = leave_one_out(&inputs(&[3, 7]), &obs()).unwrap();
        assert_eq!(folds.len(), 2);
        assert_eq!((folds[0].step, folds[1].step), (3, 7));
    }

    #[test]
    fn pixels_without_data_are_skipped() {
        assert!(matches!(
            leave_one_out(&inputs(&[]), &obs()),
            Err(Error::InsufficientData { valid: 0, .. })
        ));
        let (pairs, skipped) =
            leave_one_out_pixels(&[inputs(&[]), inputs(&[1, 2])], &obs()).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn folds_match_manual_recomputation() {
        let inp = inputs(&[0, 2, 5, 6, 11]);
        let folds = leave_one_out(&inp, &obs()).unwrap();
        for f in &folds {
            let m = inp.series.period_of(f.step).month_index();
            let manual = filter_step(
                inp.clim_by_month[m],
                inp.fusion_by_step[f.step],
                Observation::missing(),
                &obs(),
            );
            assert_eq!(f.prediction, manual.posterior.mean());
            assert_eq!(f.truth, inp.series.observations[f.step].value);
        }
    }

    fn pair(pixel: PixelId, step: usize, prediction: f64, truth: f64) -> HeldOut {
        HeldOut {
            pixel,
            step,
            prediction,
            truth,
        }
    }

    #[test]
    fn perfect_prediction() {
        let m = metrics(&[pair(0, 0, 1.0, 1.0), pair(0, 1, 2.0, 2.0)]).unwrap();
        assert_eq!((m.me, m.rmse, m.mae), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_computed_metrics() {
        let m = metrics(&[pair(0, 0, 0.0, 3.0), pair(0, 1, 0.0, 4.0)]).unwrap();
        assert_eq!(m.me, -3.5);
        assert!((m.rmse - (12.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(m.mae, 3.5);
        assert_eq!(m.mean_rho, None);
        assert!(matches!(metrics(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn constant_truth_contributes_no_rho() {
        let pairs = [
            pair(0, 0, 0.1, 0.5),
            pair(0, 1, 0.2, 0.5),
            pair(0, 2, 0.3, 0.5),
            pair(1, 0, 0.1, 0.1),
            pair(1, 1, 0.2, 0.25),
            pair(1, 2, 0.3, 0.3),
        ];
        let m = metrics(&pairs).unwrap();
        assert_eq!(m.rho_pixels, 1);
        assert!(m.mean_rho.unwrap().is_finite());
    }

    #[test]
    fn table_layout() {
        let mut report = MetricsReport::default();
        let m = Metrics {
            me: 0.0014,
            rmse: 0.010,
            mae: 0.008,
            mean_rho: Some(0.04),
            n_heldout: 10,
            rho_pixels: 2,
        };
        for band in ["B3", "B4"] {
            for site in 1..=5 {
                report.push(&site.to_string(), band, m);
            }
        }
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        let width = lines[0].chars().count();
        assert!(lines.iter().all(|l| l.chars().count() == width), "{table}");
        assert!(table.contains("Band 3") && table.contains("Band 4"));
        assert!(
            table.contains("| 5      |   0.0014 |   0.0100 |   0.0080 |   0.0400 |"),
            "{table}"
        );
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with(REPORT_CSV_HEADER));
    }

    #[test]
    fn estimate_r_examples() {
        let geometry = GridGeometry::new(1, 1, 0.0, 30.0, 30.0).unwrap();
        let mut a = PixelArchive::new(geometry, &["B3"]);
        for y in 2000..2005 {
            a.push(
                0,
                "B3",
                ArchiveRecord {
                    period: YearMonth::new(y, 3),
                    value: 0.2,
                    valid: true,
                },
            )
            .unwrap();
        }
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        assert_eq!(estimate_r(&a, &c, 0.25).unwrap()["B3"], R_FLOOR);

        let mut b = PixelArchive::new(geometry, &["B3"]);
        for (i, y) in (2000..2006).enumerate() {
            b.push(
                0,
                "B3",
                ArchiveRecord {
                    period: YearMonth::new(y, 3),
                    value: 0.2 + 0.01 * i as f64,
                    valid: true,
                },
            )
            .unwrap();
        }
        let c = build_climatology(&b, &ClimatologyOptions::default()).unwrap();
        assert_eq!(estimate_r(&b, &c, 0.0).unwrap()["B3"], R_FLOOR);
        assert!(estimate_r(&b, &c, 0.25).unwrap()["B3"] > R_FLOOR);
    }

    #[test]
    fn strips_cover_the_grid() {
        let g = GridGeometry::new(10, 12, 0.0, 360.0, 30.0).unwrap();
        let sites = Site::strips(&g, 5);
        assert_eq!(sites.len(), 5);
        let total: usize = sites.iter().map(|s| s.pixels(&g).unwrap().len()).sum();
        assert_eq!(total, 120);
    }
}
