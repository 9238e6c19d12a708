//! Per-pixel monthly series as CSV: `pixel_id,band,year,month,value,valid`.

use std::io::{Read, Write};
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::types::{Observation, PixelSeries, YearMonth};

pub const SERIES_CSV_HEADER: [&str; 6] = ["pixel_id", "band", "year", "month", "value", "valid"];

fn csv_err(e: csv::Error) -> Error {
    Error::format(PathBuf::from("<csv>"), e)
}

pub fn write_series_csv<W: Write>(writer: W, series: &[PixelSeries]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(SERIES_CSV_HEADER).map_err(csv_err)?;
    for s in series {
        for (step, obs) in s.observations.iter().enumerate() {
            let period = s.period_of(step);
            let value = if obs.valid {
                obs.value.to_string()
            } else {
                "NaN".to_string()
            };
            w.write_record([
                s.pixel.to_string(),
                s.band.clone(),
                period.year.to_string(),
                period.month().to_string(),
                value,
                obs.valid.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(PathBuf::from("<csv>"), e))
}

/// Rows of one (pixel, band) must be consecutive and contiguous in time.
pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<PixelSeries>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(SERIES_CSV_HEADER) {
        return Err(Error::format(
            "<csv>",
            format!("unexpected header {headers:?}"),
        ));
    }

    let mut out: Vec<PixelSeries> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad = |what: &str| Error::format("<csv>", format!("row {}: bad {what}", line + 2));
        let pixel = record[0].parse().map_err(|_| bad("pixel_id"))?;
        let band = &record[1];
        let year = record[2].parse().map_err(|_| bad("year"))?;
        let month = record[3].parse().map_err(|_| bad("month"))?;
        let period = YearMonth::try_new(year, month).map_err(|_| bad("month"))?;
        let valid: bool = record[5].parse().map_err(|_| bad("valid"))?;
        let obs = if valid {
            let v: f64 = record[4].parse().map_err(|_| bad("value"))?;
            if !v.is_finite() {
                return Err(bad("value"));
            }
            Observation::valid(v)
        } else {
            Observation::missing()
        };

        match out.last_mut() {
            Some(s) if s.pixel == pixel && s.band == band => {
                if s.period_of(s.observations.len()) != period {
                    return Err(bad("month sequence"));
                }
                s.observations.push(obs);
            }
            _ => out.push(PixelSeries {
                pixel,
                band: band.to_string(),
                start: period,
                observations: vec![obs],
            }),
        }
    }
    Ok(out)
}
