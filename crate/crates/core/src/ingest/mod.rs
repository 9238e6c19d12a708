//! Scene grids, quality masking, monthly compositing, coarse-to-fine
//! collocation and per-pixel series extraction.
//!
//! Invalid pixels are `NaN` in every value plane.

mod grid_file;
mod series_csv;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::types::{Observation, PixelId, PixelSeries, YearMonth};

pub use grid_file::{
    grid_paths, read_grid, read_grid_raw, read_scene_dir, write_grid, GridSidecar, GRID_FORMAT,
};
pub use series_csv::{read_series_csv, write_series_csv, SERIES_CSV_HEADER};

/// Reflectance values outside this range are masked as implausible.
pub const PLAUSIBLE_RANGE: (f32, f32) = (-0.2, 1.2);

/// Default divisor for integer-scaled surface reflectance.
pub const DEFAULT_SCALE_FACTOR: f64 = 10_000.0;

/// Axis-aligned, north-up grid with square pixels. `(origin_x, origin_y)`
/// is the outer corner of the top-left pixel; rows grow southwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GridGeometry {
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        pixel_size: f64,
    ) -> Result<Self> {
        let g = Self {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("grid has zero extent".into()));
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0)
            || !self.origin_x.is_finite()
            || !self.origin_y.is_finite()
        {
            return Err(Error::InvalidParameter(
                "grid georeference must be finite with a positive pixel size".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn pixel_center(&self, index: usize) -> (f64, f64) {
        let (col, row) = self.col_row(index);
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Pixel containing the point. Each pixel owns the half-open interval
    /// `[edge, edge + size)` measured from the origin along each axis.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let fc = ((x - self.origin_x) / self.pixel_size).floor();
        let fr = ((self.origin_y - y) / self.pixel_size).floor();
        if fc < 0.0 || fr < 0.0 || fc >= self.width as f64 || fr >= self.height as f64 {
            return None;
        }
        Some(self.index(fc as usize, fr as usize))
    }

    /// `(min_x, max_x, min_y, max_y)`
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_y,
        )
    }

    pub fn overlaps(&self, other: &GridGeometry) -> bool {
        let (ax0, ax1, ay0, ay1) = self.bounds();
        let (bx0, bx1, by0, by1) = other.bounds();
        ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1
    }
}

/// Set of quality codes accepted as maximum quality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityPolicy {
    pub accepted: BTreeSet<u16>,
}

impl QualityPolicy {
    pub fn accepting(codes: impl IntoIterator<Item = u16>) -> Self {
        Self {
            accepted: codes.into_iter().collect(),
        }
    }

    pub fn accepts(&self, code: u16) -> bool {
        self.accepted.contains(&code)
    }
}

impl Default for QualityPolicy {
    /// Accepts code 0, the "clear, highest quality" value of the
    /// synthetic generator.
    fn default() -> Self {
        Self::accepting([0])
    }
}

/// One band of one scene or composite on a georeferenced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrid {
    pub geometry: GridGeometry,
    pub band: String,
    pub period: Option<YearMonth>,
    pub values: Vec<f32>,
    pub qa: Option<Vec<u16>>,
    /// Quality policy already applied to `values`, if any.
    pub qa_policy: Option<QualityPolicy>,
}

impl SceneGrid {
    pub fn new(geometry: GridGeometry, band: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::LengthMismatch {
                what: "grid values",
                expected: geometry.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            geometry,
            band: band.into(),
            period: None,
            values,
            qa: None,
            qa_policy: None,
        })
    }

    /// All-invalid grid.
    pub fn empty(geometry: GridGeometry, band: impl Into<String>) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            band: band.into(),
            period: None,
            values: vec![f32::NAN; n],
            qa: None,
            qa_policy: None,
        }
    }

    pub fn with_period(mut self, period: YearMonth) -> Self {
        self.period = Some(period);
        self
    }

    pub fn with_qa(mut self, qa: Vec<u16>) -> Result<Self> {
        if qa.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                what: "qa plane",
                expected: self.values.len(),
                found: qa.len(),
            });
        }
        self.qa = Some(qa);
        Ok(self)
    }

    pub fn value(&self, index: usize) -> Option<f32> {
        let v = self.values[index];
        (!v.is_nan()).then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    /// Masks values outside [`PLAUSIBLE_RANGE`]. Returns how many were masked.
    pub fn mask_implausible(&mut self) -> usize {
        let (lo, hi) = PLAUSIBLE_RANGE;
        let mut masked = 0;
        for v in &mut self.values {
            if !v.is_nan() && !(lo..=hi).contains(v) {
                *v = f32::NAN;
                masked += 1;
            }
        }
        masked
    }
}

/// Invalidates every pixel whose qa code is not accepted by `policy`.
/// Scenes without a qa plane pass through unchanged.
pub fn apply_quality_mask(scene: &SceneGrid, policy: &QualityPolicy) -> SceneGrid {
    let mut out = scene.clone();
    if let Some(qa) = &scene.qa {
        for (v, &code) in out.values.iter_mut().zip(qa) {
            if !policy.accepts(code) {
                *v = f32::NAN;
            }
        }
        out.qa_policy = Some(policy.clone());
    }
    out
}

/// Per-pixel median of the valid values of already-masked scenes.
pub fn monthly_composite(scenes: &[SceneGrid]) -> Result<SceneGrid> {
    let first = scenes
        .first()
        .ok_or(Error::EmptyInput("no scenes to composite"))?;
    for s in &scenes[1..] {
        if s.geometry != first.geometry {
            return Err(Error::GeometryMismatch(format!(
                "{:?} vs {:?}",
                s.geometry, first.geometry
            )));
        }
        if s.band != first.band {
            return Err(Error::GeometryMismatch(format!(
                "band {} composited with band {}",
                s.band, first.band
            )));
        }
    }

    let mut buf = Vec::with_capacity(scenes.len());
    let values = (0..first.geometry.len())
        .map(|i| {
            buf.clear();
            buf.extend(
                scenes
                    .iter()
                    .map(|s| s.values[i])
                    .filter(|v| !v.is_nan())
                    .map(f64::from),
            );
            match stats::median_in_place(&mut buf) {
                Some(m) => m as f32,
                None => f32::NAN,
            }
        })
        .collect();

    Ok(SceneGrid {
        geometry: first.geometry,
        band: first.band.clone(),
        period: first.period,
        values,
        qa: None,
        qa_policy: first.qa_policy.clone(),
    })
}

/// Value of the coarse pixel containing each fine pixel's center, `NaN`
/// outside the coarse footprint.
pub fn collocate(coarse: &SceneGrid, fine: &GridGeometry) -> Result<Vec<f32>> {
    let map = collocation_map(&coarse.geometry, fine)?;
    Ok(map
        .iter()
        .map(|idx| idx.map_or(f32::NAN, |c| coarse.values[c]))
        .collect())
}

/// For each fine pixel, the index of the coarse pixel containing its center.
pub fn collocation_map(coarse: &GridGeometry, fine: &GridGeometry) -> Result<Vec<Option<usize>>> {
    if !coarse.overlaps(fine) {
        return Err(Error::NoOverlap);
    }
    if fine.pixel_size > coarse.pixel_size {
        return Err(Error::GeometryMismatch(format!(
            "fine pixel size {} exceeds coarse pixel size {}",
            fine.pixel_size, coarse.pixel_size
        )));
    }
    Ok((0..fine.len())
        .map(|i| {
            let (x, y) = fine.pixel_center(i);
            coarse.locate(x, y)
        })
        .collect())
}

/// One series per (band, pixel) covering every month of `start..=end`.
///
/// `composites` must be sorted by (year, month); several bands may be
/// interleaved. Months without a composite become invalid observations and
/// composites outside the period are ignored.
pub fn extract_series(
    composites: &[SceneGrid],
    pixels: &[PixelId],
    start: YearMonth,
    end: YearMonth,
) -> Result<Vec<PixelSeries>> {
    if end < start {
        return Err(Error::InvalidParameter(format!(
            "period {start}..{end} is empty"
        )));
    }
    let n_months = (end.ordinal() - start.ordinal() + 1) as usize;

    // band -> slot -> composite
    let mut bands: Vec<&str> = Vec::new();
    let mut slots: BTreeMap<&str, Vec<Option<&SceneGrid>>> = BTreeMap::new();
    let mut last: Option<YearMonth> = None;
    for c in composites {
        let period = c.period.ok_or_else(|| {
            Error::UnsortedInput(format!("composite of band {} has no period", c.band))
        })?;
        if last.is_some_and(|l| period < l) {
            return Err(Error::UnsortedInput(format!(
                "{period} follows {}",
                last.unwrap()
            )));
        }
        last = Some(period);
        if !bands.contains(&c.band.as_str()) {
            bands.push(&c.band);
        }
        if period < start || period > end {
            continue;
        }
        let slot = (period.ordinal() - start.ordinal()) as usize;
        let band_slots = slots.entry(&c.band).or_insert_with(|| vec![None; n_months]);
        if band_slots[slot].is_some() {
            return Err(Error::UnsortedInput(format!(
                "two composites for band {} at {period}",
                c.band
            )));
        }
        band_slots[slot] = Some(c);
    }

    let mut out = Vec::with_capacity(bands.len() * pixels.len());
    for band in bands {
        let empty = vec![None; n_months];
        let band_slots = slots.get(band).unwrap_or(&empty);
        for &pixel in pixels {
            let observations = band_slots
                .iter()
                .map(|slot| match slot {
                    Some(grid) => {
                        let idx = pixel as usize;
                        if idx >= grid.values.len() {
                            return Err(Error::InvalidParameter(format!(
                                "pixel {pixel} outside grid of {} pixels",
                                grid.values.len()
                            )));
                        }
                        Ok(Observation::from_value(f64::from(grid.values[idx])))
                    }
                    None => Ok(Observation::missing()),
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(PixelSeries {
                pixel,
                band: band.to_string(),
                start,
                observations,
            });
        }
    }
    Ok(out)
}

/// Groups `scenes` by period, masks them with `policy` and composites each
/// month. Output is sorted by period.
pub fn composite_by_month(
    scenes: Vec<SceneGrid>,
    policy: &QualityPolicy,
) -> Result<Vec<SceneGrid>> {
    let mut by_month: BTreeMap<YearMonth, Vec<SceneGrid>> = BTreeMap::new();
    for s in scenes {
        let period = s.period.ok_or_else(|| {
            Error::InvalidParameter(format!("scene of band {} has no period", s.band))
        })?;
        by_month.entry(period).or_default().push(s);
    }
    by_month
        .into_par_iter()
        .map(|(_, scenes)| {
            let masked: Vec<_> = scenes
                .iter()
                .map(|s| apply_quality_mask(s, policy))
                .collect();
            monthly_composite(&masked)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(w: usize, h: usize, size: f64) -> GridGeometry {
        GridGeometry::new(w, h, 0.0, h as f64 * size, size).unwrap()
    }

    fn grid(values: Vec<f32>) -> SceneGrid {
        let n = values.len();
        SceneGrid::new(geom(n, 1, 30.0), "B3", values).unwrap()
    }

    #[test]
    fn quality_mask_all_accepted_is_identity() {
        let s = grid(vec![0.1, 0.2, 0.3]).with_qa(vec![0, 0, 0]).unwrap();
        let m = apply_quality_mask(&s, &QualityPolicy::accepting([0]));
        assert_eq!(m.values, s.values);
    }

    #[test]
    fn quality_mask_none_accepted_invalidates_all() {
        let s = grid(vec![0.1, 0.2, 0.3]).with_qa(vec![1, 2, 3]).unwrap();
        let m = apply_quality_mask(&s, &QualityPolicy::accepting([0]));
        assert_eq!(m.valid_count(), 0);
    }

    #[test]
    fn quality_mask_checkerboard() {
        let g = geom(8, 8, 30.0);
        let qa: Vec<u16> = (0..64).map(|i| ((i % 8 + i / 8) % 2) as u16).collect();
        let s = SceneGrid::new(g, "B4", vec![0.25; 64])
            .unwrap()
            .with_qa(qa.clone())
            .unwrap();
        let m = apply_quality_mask(&s, &QualityPolicy::accepting([0]));
        assert_eq!(m.valid_count(), 32);
        for (v, q) in m.values.iter().zip(&qa) {
            assert_eq!(v.is_nan(), *q == 1);
        }
    }

    #[test]
    fn composite_examples() {
        let one = grid(vec![0.1, f32::NAN]).with_period(YearMonth::new(2010, 1));
        assert_eq!(
            monthly_composite(std::slice::from_ref(&one))
                .unwrap()
                .values
                .len(),
            2
        );
        let c = monthly_composite(std::slice::from_ref(&one)).unwrap();
        assert_eq!(c.values[0], 0.1);
        assert!(c.values[1].is_nan());

        let c = monthly_composite(&[grid(vec![0.1]), grid(vec![0.3]), grid(vec![0.2])]).unwrap();
        assert_eq!(c.values[0], 0.2);

        let c =
            monthly_composite(&[grid(vec![0.1]), grid(vec![f32::NAN]), grid(vec![0.3])]).unwrap();
        assert!((c.values[0] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn composite_rejects_mismatched_geometry() {
        let a = grid(vec![0.1, 0.2]);
        let b = grid(vec![0.1, 0.2, 0.3]);
        assert!(matches!(
            monthly_composite(&[a, b]),
            Err(Error::GeometryMismatch(_))
        ));
        assert!(matches!(monthly_composite(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn masking_then_compositing_matches_invalid_aware_median() {
        let qa = [0u16, 1, 0, 1];
        let scenes: Vec<_> = (0..5)
            .map(|k| {
                let vals = (0..4).map(|i| 0.05 * (i + k) as f32).collect();
                let qa_k = qa.iter().map(|q| (q + k as u16) % 2).collect();
                grid(vals).with_qa(qa_k).unwrap()
            })
            .collect();
        let policy = QualityPolicy::accepting([0]);
        let masked: Vec<_> = scenes
            .iter()
            .map(|s| apply_quality_mask(s, &policy))
            .collect();
        let composite = monthly_composite(&masked).unwrap();
        for i in 0..4 {
            let mut valid: Vec<f64> = scenes
                .iter()
                .filter(|s| s.qa.as_ref().unwrap()[i] == 0)
                .map(|s| f64::from(s.values[i]))
                .collect();
            let m = stats::median_in_place(&mut valid).unwrap() as f32;
            assert_eq!(composite.values[i], m);
        }
    }

    #[test]
    fn collocate_same_geometry_is_identity() {
        let s = grid(vec![0.1, 0.2, 0.3]);
        assert_eq!(collocate(&s, &s.geometry).unwrap(), s.values);
    }

    #[test]
    fn collocate_block() {
        let coarse = SceneGrid::new(geom(1, 1, 480.0), "B3", vec![0.42]).unwrap();
        let fine = geom(16, 16, 30.0);
        let v = collocate(&coarse, &fine).unwrap();
        assert_eq!(v.len(), 256);
        assert!(v.iter().all(|&x| x == 0.42));
    }

    #[test]
    fn collocate_boundary_goes_to_half_open_owner() {
        // fine centers fall exactly on coarse edges at x = 0, 2, 4
        let coarse = SceneGrid::new(
            GridGeometry::new(3, 1, 0.0, 2.0, 2.0).unwrap(),
            "B3",
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let fine = GridGeometry::new(3, 1, -1.0, 2.0, 2.0).unwrap();
        let v = collocate(&coarse, &fine).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn collocate_partial_and_disjoint() {
        let coarse = SceneGrid::new(
            GridGeometry::new(1, 1, 0.0, 60.0, 60.0).unwrap(),
            "B3",
            vec![0.5],
        )
        .unwrap();
        let fine = GridGeometry::new(4, 1, 30.0, 60.0, 30.0).unwrap();
        let v = collocate(&coarse, &fine).unwrap();
        assert_eq!(v[0], 0.5);
        assert!(v[1..].iter().all(|x| x.is_nan()));

        let far = GridGeometry::new(4, 4, 1e6, 1e6, 30.0).unwrap();
        assert!(matches!(collocate(&coarse, &far), Err(Error::NoOverlap)));
        // repeated collocation is stable
        assert_eq!(
            collocation_map(&coarse.geometry, &fine).unwrap(),
            collocation_map(&coarse.geometry, &fine).unwrap()
        );
    }

    #[test]
    fn extract_series_fills_missing_months() {
        let months: Vec<_> = YearMonth::year_months(2010).collect();
        let composites: Vec<_> = months
            .iter()
            .filter(|m| m.month() != 5)
            .map(|&m| grid(vec![0.1 * f32::from(m.month()), f32::NAN]).with_period(m))
            .collect();
        let series = extract_series(&composites, &[0, 1], months[0], months[11]).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].valid_count(), 11);
        assert!(!series[0].observations[4].valid);
        assert_eq!(series[1].valid_count(), 0);
        assert_eq!(series[0].observations.len(), 12);
    }

    #[test]
    fn extract_series_rejects_unsorted() {
        let a = grid(vec![0.1]).with_period(YearMonth::new(2010, 2));
        let b = grid(vec![0.1]).with_period(YearMonth::new(2010, 1));
        let err = extract_series(
            &[a, b],
            &[0],
            YearMonth::new(2010, 1),
            YearMonth::new(2010, 12),
        );
        assert!(matches!(err, Err(Error::UnsortedInput(_))));
    }

    #[test]
    fn implausible_values_are_masked_not_clamped() {
        let mut g = grid(vec![-0.5, -0.2, 0.5, 1.2, 1.3]);
        assert_eq!(g.mask_implausible(), 2);
        assert!(g.values[0].is_nan());
        assert_eq!(g.values[1], -0.2);
        assert_eq!(g.values[3], 1.2);
        assert!(g.values[4].is_nan());
    }
}
