//! Per-pixel, per-calendar-month climatology of the fine-sensor archive.
//!
//! Each (pixel, month, band) cell holds the median and the population
//! standard deviation of the valid composites of that calendar month across
//! the archive years. The median and the squared deviation are the
//! climatology prior of the filter.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_grid_raw, write_grid, GridGeometry, SceneGrid};
use crate::model::{GaussianBelief, VAR_FLOOR};
use crate::stats;
use crate::types::{PixelId, YearMonth};

/// One monthly composite value of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchiveRecord {
    pub period: YearMonth,
    pub value: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct BandArchive {
    pub band: String,
    /// Indexed by pixel.
    records: Vec<Vec<ArchiveRecord>>,
}

impl BandArchive {
    pub fn records(&self, pixel: PixelId) -> &[ArchiveRecord] {
        &self.records[pixel as usize]
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.records
            .iter()
            .flatten()
            .filter(|r| r.valid)
            .map(|r| r.value)
    }
}

/// Multi-year monthly composites of the fine sensor, one record per
/// (pixel, band, year, month) at most.
#[derive(Debug, Clone)]
pub struct PixelArchive {
    pub geometry: GridGeometry,
    bands: Vec<BandArchive>,
}

impl PixelArchive {
    pub fn new(geometry: GridGeometry, bands: &[&str]) -> Self {
        Self {
            geometry,
            bands: bands
                .iter()
                .map(|b| BandArchive {
                    band: b.to_string(),
                    records: vec![Vec::new(); geometry.len()],
                })
                .collect(),
        }
    }

    /// Builds an archive from monthly composites, keeping those whose year
    /// lies in `years` (inclusive).
    pub fn from_composites(
        geometry: GridGeometry,
        composites: &[SceneGrid],
        years: (i32, i32),
    ) -> Result<Self> {
        let mut band_names: Vec<&str> = Vec::new();
        let mut seen = BTreeSet::new();
        for c in composites {
            if c.geometry != geometry {
                return Err(Error::GeometryMismatch(format!(
                    "composite of band {} does not match the archive grid",
                    c.band
                )));
            }
            let period = c.period.ok_or_else(|| {
                Error::InvalidParameter(format!("composite of band {} has no period", c.band))
            })?;
            if !seen.insert((c.band.as_str(), period)) {
                return Err(Error::DuplicateRecord {
                    pixel: 0,
                    band: c.band.clone(),
                    period,
                });
            }
            if !band_names.contains(&c.band.as_str()) {
                band_names.push(&c.band);
            }
        }
        let mut archive = Self::new(geometry, &band_names);
        for c in composites {
            let period = c.period.expect("checked above");
            if period.year < years.0 || period.year > years.1 {
                continue;
            }
            let b = archive.band_index(&c.band).expect("registered above");
            for (pixel, &v) in c.values.iter().enumerate() {
                let value = f64::from(v);
                archive.bands[b].records[pixel].push(ArchiveRecord {
                    period,
                    value,
                    valid: !v.is_nan(),
                });
            }
        }
        Ok(archive)
    }

    pub fn push(&mut self, pixel: PixelId, band: &str, record: ArchiveRecord) -> Result<()> {
        let b = self
            .band_index(band)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown band {band}")))?;
        let records = self.bands[b]
            .records
            .get_mut(pixel as usize)
            .ok_or_else(|| Error::InvalidParameter(format!("pixel {pixel} outside archive")))?;
        if records.iter().any(|r| r.period == record.period) {
            return Err(Error::DuplicateRecord {
                pixel,
                band: band.to_string(),
                period: record.period,
            });
        }
        records.push(record);
        Ok(())
    }

    fn band_index(&self, band: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.band == band)
    }

    pub fn band(&self, band: &str) -> Option<&BandArchive> {
        self.bands.iter().find(|b| b.band == band)
    }

    pub fn bands(&self) -> &[BandArchive] {
        &self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.geometry.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClimatologyOptions {
    /// Inclusive year range of archive records used.
    pub period: (i32, i32),
    /// Cells with fewer valid samples get their variance inflated.
    pub min_samples: u32,
    pub low_count_inflation: f64,
}

impl Default for ClimatologyOptions {
    fn default() -> Self {
        Self {
            period: (1999, 2009),
            min_samples: 3,
            low_count_inflation: 4.0,
        }
    }
}

/// Statistics of one (pixel, month, band) cell. Absent cells have
/// `sample_count == 0` and `NaN` statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClimatologyCell {
    pub median: f64,
    pub std: f64,
    pub sample_count: u32,
}

impl ClimatologyCell {
    pub const ABSENT: Self = Self {
        median: f64::NAN,
        std: f64::NAN,
        sample_count: 0,
    };

    pub fn is_absent(&self) -> bool {
        self.sample_count == 0
    }

    /// Computed from the valid values of the cell; `values` is sorted in place.
    pub fn from_values(values: &mut [f64]) -> Self {
        if values.is_empty() {
            return Self::ABSENT;
        }
        values.sort_unstable_by(f64::total_cmp);
        let median = stats::median_sorted(values);
        let std = stats::population_variance(values)
            .expect("non-empty")
            .sqrt();
        Self {
            median,
            std,
            sample_count: values.len() as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandClimatology {
    pub band: String,
    /// `pixel * 12 + month_index`
    cells: Vec<ClimatologyCell>,
    /// Prior used for absent cells: band-wide archive median and variance.
    pub fallback: GaussianBelief,
}

impl BandClimatology {
    pub fn cell(&self, pixel: PixelId, month: u8) -> &ClimatologyCell {
        assert!((1..=12).contains(&month), "month {month} outside 1..=12");
        &self.cells[pixel as usize * 12 + usize::from(month - 1)]
    }

    pub fn cells(&self) -> &[ClimatologyCell] {
        &self.cells
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub geometry: GridGeometry,
    pub options: ClimatologyOptions,
    bands: Vec<BandClimatology>,
}

impl Climatology {
    pub fn band(&self, band: &str) -> Option<&BandClimatology> {
        self.bands.iter().find(|b| b.band == band)
    }

    pub fn bands(&self) -> &[BandClimatology] {
        &self.bands
    }

    /// Climatology prior of a cell: `(median, max(std², VAR_FLOOR))`,
    /// inflated for sparsely sampled cells, or the band fallback when the
    /// cell is absent. `None` for an unknown band.
    pub fn lookup(&self, pixel: PixelId, month: u8, band: &str) -> Option<GaussianBelief> {
        let b = self.band(band)?;
        Some(self.prior_from(b, b.cell(pixel, month)))
    }

    /// The twelve monthly priors of one pixel.
    pub fn monthly_priors(&self, pixel: PixelId, band: &str) -> Option<[GaussianBelief; 12]> {
        let b = self.band(band)?;
        Some(std::array::from_fn(|m| {
            self.prior_from(b, b.cell(pixel, m as u8 + 1))
        }))
    }

    fn prior_from(&self, band: &BandClimatology, cell: &ClimatologyCell) -> GaussianBelief {
        if cell.is_absent() {
            return band.fallback;
        }
        let mut variance = (cell.std * cell.std).max(VAR_FLOOR);
        if cell.sample_count < self.options.min_samples {
            variance *= self.options.low_count_inflation;
        }
        GaussianBelief::new(cell.median, variance)
    }

    /// Copy with every cell statistic rounded to `f32`, the precision of
    /// the persisted grids.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.bands {
            for c in &mut b.cells {
                c.median = f64::from(c.median as f32);
                c.std = f64::from(c.std as f32);
            }
        }
        out
    }
}

pub fn build_climatology(
    archive: &PixelArchive,
    options: &ClimatologyOptions,
) -> Result<Climatology> {
    let (y0, y1) = options.period;
    let in_period = |r: &&ArchiveRecord| r.valid && r.period.year >= y0 && r.period.year <= y1;

    let mut bands = Vec::with_capacity(archive.bands.len());
    for band in &archive.bands {
        let mut all: Vec<f64> = band
            .records
            .iter()
            .flatten()
            .filter(in_period)
            .map(|r| r.value)
            .collect();
        let Some(median) = stats::median_in_place(&mut all) else {
            return Err(Error::EmptyArchive {
                band: band.band.clone(),
            });
        };
        let variance = stats::population_variance(&all).expect("non-empty");
        let fallback = GaussianBelief::new(median, variance);

        let cells: Vec<ClimatologyCell> = band
            .records
            .par_iter()
            .flat_map_iter(|records| {
                let mut by_month: [Vec<f64>; 12] = Default::default();
                for r in records.iter().filter(in_period) {
                    by_month[r.period.month_index()].push(r.value);
                }
                by_month
                    .into_iter()
                    .map(|mut v| ClimatologyCell::from_values(&mut v))
            })
            .collect();

        bands.push(BandClimatology {
            band: band.band.clone(),
            cells,
            fallback,
        });
    }
    if bands.is_empty() {
        return Err(Error::EmptyArchive {
            band: "<none>".into(),
        });
    }
    Ok(Climatology {
        geometry: archive.geometry,
        options: *options,
        bands,
    })
}

const MANIFEST: &str = "climatology.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    geometry: GridGeometry,
    options: ClimatologyOptions,
    bands: Vec<BandManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BandManifest {
    band: String,
    fallback_mean: f64,
    fallback_variance: f64,
    /// `[month_index][pixel]`
    sample_counts: Vec<Vec<u32>>,
}

fn cell_grid_name(band: &str, month: usize, statistic: &str) -> String {
    format!("{band}_m{:02}_{statistic}", month + 1)
}

/// Writes one grid per (band, month, statistic) plus `climatology.json`.
/// Statistics are stored as `f32`.
pub fn write_climatology(dir: &Path, clim: &Climatology) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = clim.geometry.len();
    let mut manifest = Manifest {
        geometry: clim.geometry,
        options: clim.options,
        bands: Vec::new(),
    };
    for b in &clim.bands {
        let mut sample_counts = Vec::with_capacity(12);
        for m in 0..12 {
            let column = |f: &dyn Fn(&ClimatologyCell) -> f64| -> Vec<f32> {
                (0..n).map(|p| f(&b.cells[p * 12 + m]) as f32).collect()
            };
            for (statistic, values) in [
                ("median", column(&|c| c.median)),
                ("std", column(&|c| c.std)),
            ] {
                let grid = SceneGrid::new(clim.geometry, b.band.clone(), values)?;
                let mut attrs = BTreeMap::new();
                attrs.insert("statistic".into(), statistic.into());
                attrs.insert("month".into(), (m + 1).into());
                write_grid(
                    &dir.join(cell_grid_name(&b.band, m, statistic)),
                    &grid,
                    attrs,
                )?;
            }
            sample_counts.push((0..n).map(|p| b.cells[p * 12 + m].sample_count).collect());
        }
        manifest.bands.push(BandManifest {
            band: b.band.clone(),
            fallback_mean: b.fallback.mean(),
            fallback_variance: b.fallback.variance(),
            sample_counts,
        });
    }
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_climatology(dir: &Path) -> Result<Climatology> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    let n = manifest.geometry.len();
    let mut bands = Vec::new();
    for bm in manifest.bands {
        if bm.sample_counts.len() != 12 || bm.sample_counts.iter().any(|c| c.len() != n) {
            return Err(Error::format(
                &path,
                format!("bad sample counts for band {}", bm.band),
            ));
        }
        let mut cells = vec![ClimatologyCell::ABSENT; n * 12];
        for m in 0..12 {
            let (median, _) = read_grid_raw(&dir.join(cell_grid_name(&bm.band, m, "median")))?;
            let (std, _) = read_grid_raw(&dir.join(cell_grid_name(&bm.band, m, "std")))?;
            for (field, grid) in [("median", &median), ("std", &std)] {
                if grid.geometry != manifest.geometry {
                    return Err(Error::format(
                        dir,
                        format!(
                            "{field} grid of {} month {} has the wrong shape",
                            bm.band,
                            m + 1
                        ),
                    ));
                }
            }
            for p in 0..n {
                cells[p * 12 + m] = ClimatologyCell {
                    median: f64::from(median.values[p]),
                    std: f64::from(std.values[p]),
                    sample_count: bm.sample_counts[m][p],
                };
            }
        }
        let fallback = GaussianBelief::try_new(bm.fallback_mean, bm.fallback_variance)
            .map_err(|e| Error::format(&path, e))?;
        bands.push(BandClimatology {
            band: bm.band,
            cells,
            fallback,
        });
    }
    Ok(Climatology {
        geometry: manifest.geometry,
        options: manifest.options,
        bands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::new(n, 1, 0.0, 30.0, 30.0).unwrap()
    }

    fn archive_with(values: &[(i32, u8, f64)]) -> PixelArchive {
        let mut a = PixelArchive::new(geom(1), &["B3"]);
        for &(y, m, v) in values {
            a.push(
                0,
                "B3",
                ArchiveRecord {
                    period: YearMonth::new(y, m),
                    value: v,
                    valid: true,
                },
            )
            .unwrap();
        }
        a
    }

    #[test]
    fn three_year_cell() {
        let a = archive_with(&[(2000, 4, 0.1), (2001, 4, 0.3), (2002, 4, 0.2)]);
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        let cell = c.band("B3").unwrap().cell(0, 4);
        assert_eq!(cell.median, 0.2);
        assert!((cell.std - 0.081_649_658_092_772_6).abs() < 1e-12);
        assert_eq!(cell.sample_count, 3);
        assert!(c.band("B3").unwrap().cell(0, 5).is_absent());
    }

    #[test]
    fn lookup_squares_std_and_floors() {
        let a = archive_with(&[
            (2000, 1, 0.1),
            (2001, 1, 0.3),
            (2002, 1, 0.1),
            (2003, 1, 0.3),
            (2000, 2, 0.25),
            (2001, 2, 0.25),
            (2002, 2, 0.25),
        ]);
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        // median 0.2, std 0.1
        let jan = c.lookup(0, 1, "B3").unwrap();
        assert!((jan.mean() - 0.2).abs() < 1e-15);
        assert!((jan.variance() - 0.01).abs() < 1e-15);
        let feb = c.lookup(0, 2, "B3").unwrap();
        assert_eq!(feb.variance(), VAR_FLOOR);
    }

    #[test]
    fn absent_cell_uses_band_fallback() {
        let a = archive_with(&[(2000, 1, 0.1), (2001, 1, 0.3), (2002, 6, 0.5)]);
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        let absent = c.lookup(0, 3, "B3").unwrap();
        let all = [0.1, 0.3, 0.5];
        let mean = all.iter().sum::<f64>() / 3.0;
        let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert_eq!(absent.mean(), 0.3);
        assert!((absent.variance() - var).abs() < 1e-15);
    }

    #[test]
    fn sparse_cells_are_inflated() {
        let a = archive_with(&[(2000, 1, 0.1), (2001, 1, 0.3)]);
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        let jan = c.lookup(0, 1, "B3").unwrap();
        assert!((jan.variance() - 4.0 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn empty_archive_is_an_error() {
        let mut a = PixelArchive::new(geom(2), &["B4"]);
        a.push(
            1,
            "B4",
            ArchiveRecord {
                period: YearMonth::new(2001, 1),
                value: f64::NAN,
                valid: false,
            },
        )
        .unwrap();
        assert!(matches!(
            build_climatology(&a, &ClimatologyOptions::default()),
            Err(Error::EmptyArchive { .. })
        ));
    }

    #[test]
    fn records_outside_period_are_ignored() {
        let a = archive_with(&[(1990, 1, 0.9), (2000, 1, 0.1)]);
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        assert_eq!(c.band("B3").unwrap().cell(0, 1).median, 0.1);
        assert_eq!(c.band("B3").unwrap().cell(0, 1).sample_count, 1);
    }

    #[test]
    fn duplicate_records_are_rejected() {
        let mut a = archive_with(&[(2000, 1, 0.1)]);
        let err = a.push(
            0,
            "B3",
            ArchiveRecord {
                period: YearMonth::new(2000, 1),
                value: 0.2,
                valid: true,
            },
        );
        assert!(matches!(err, Err(Error::DuplicateRecord { .. })));
    }

    #[test]
    fn replayed_climatology_is_a_fixed_point() {
        let values: Vec<_> = (1..=12).map(|m| (2005, m, 0.05 * f64::from(m))).collect();
        let a = archive_with(&values);
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        for &(_, m, v) in &values {
            let cell = c.band("B3").unwrap().cell(0, m);
            assert_eq!(cell.median, v);
            assert_eq!(cell.std, 0.0);
        }
    }

    #[test]
    fn median_resists_minority_corruption() {
        let clean = [0.20, 0.21, 0.22, 0.23, 0.24, 0.25, 0.26];
        let mut corrupted = clean.to_vec();
        corrupted[0] = 50.0;
        corrupted[3] = -50.0;
        corrupted[6] = 1e6;
        let a = ClimatologyCell::from_values(&mut clean.to_vec());
        let b = ClimatologyCell::from_values(&mut corrupted);
        assert!((a.median - b.median).abs() <= 0.26 - 0.20);
    }

    #[test]
    fn persistence_round_trips_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let a = archive_with(&[
            (2000, 1, 0.1),
            (2001, 1, 0.3),
            (2002, 1, 0.17),
            (2003, 7, 0.4),
        ]);
        let c = build_climatology(&a, &ClimatologyOptions::default()).unwrap();
        write_climatology(dir.path(), &c).unwrap();
        let back = read_climatology(dir.path()).unwrap();
        let q = c.quantized();
        for (x, y) in back
            .band("B3")
            .unwrap()
            .cells()
            .iter()
            .zip(q.band("B3").unwrap().cells())
        {
            assert_eq!(x.sample_count, y.sample_count);
            assert_eq!(x.median.to_bits(), y.median.to_bits());
            assert_eq!(x.std.to_bits(), y.std.to_bits());
        }
        assert_eq!(
            back.band("B3").unwrap().fallback,
            c.band("B3").unwrap().fallback
        );
        assert_eq!(back.options, c.options);

        // a second round trip is exact
        let dir2 = tempfile::tempdir().unwrap();
        write_climatology(dir2.path(), &back).unwrap();
        let again = read_climatology(dir2.path()).unwrap();
        assert_eq!(
            format!("{:?}", again.band("B3").unwrap().cells()),
            format!("{:?}", back.band("B3").unwrap().cells())
        );
    }
}
