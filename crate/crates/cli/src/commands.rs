use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use oifuse::climatology::{read_climatology, write_climatology};
use oifuse::fusion::{read_fusion, write_fusion};
use oifuse::pipeline::{
    cross_validate, fit_fusion, load_composites, run_filter, skill, target_inputs,
    write_filtered_csv, FilteredRow, SiteData, SKILL_CSV_HEADER,
};
use oifuse::{
    build_climatology, generate_site, Climatology, Error, FusionModels, MetricsReport,
    ObservationModel, PixelArchive, PixelId,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut synthetic = cfg.synthetic.clone();
    if !cfg.bands.is_empty() {
        if let Some(unknown) = cfg
            .bands
            .iter()
            .find(|b| !synthetic.bands.iter().any(|s| &s.name == *b))
        {
            return Err(CliError::Config(format!(
                "synthetic config has no band {unknown}"
            )));
        }
        synthetic.bands.retain(|s| cfg.bands.contains(&s.name));
    }
    let site = generate_site(&synthetic)?;
    site.write(&cfg.out)?;
    log::info!(
        "simulated {}x{} site, {} months, bands {:?} -> {}",
        synthetic.width,
        synthetic.height,
        site.months.len(),
        site.band_names(),
        cfg.out.display()
    );
    Ok(())
}

pub fn build_climatology_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let data = cfg.require_data()?;
    let bands = cfg.resolve_bands()?;
    let fine = load_composites(&data.join("fine"), &bands, &cfg.quality_policy())?;
    for band in &bands {
        if !fine.iter().any(|g| &g.band == band) {
            return Err(Error::EmptyArchive { band: band.clone() }.into());
        }
    }
    let archive = PixelArchive::from_composites(fine[0].geometry, &fine, cfg.climatology.period)?;
    let clim = build_climatology(&archive, &cfg.climatology)?;
    write_climatology(&cfg.climatology_dir(), &clim)?;
    log::info!(
        "climatology for {:?} over {:?} -> {}",
        bands,
        cfg.climatology.period,
        cfg.climatology_dir().display()
    );
    Ok(())
}

pub fn fit_fusion_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let data = cfg.require_data()?;
    let bands = cfg.resolve_bands()?;
    let site = SiteData::load(data, &bands, &cfg.quality_policy())?;
    let models = fit_fusion(&site, cfg.climatology.period, &cfg.fusion)?;
    write_fusion(&cfg.fusion_dir(), &models)?;
    for b in &models.bands {
        log::info!(
            "band {}: {} of {} pixels degenerate",
            b.band,
            b.degenerate_count(),
            b.models.len()
        );
    }
    Ok(())
}

/// Inputs shared by `filter` and `evaluate`.
struct Prepared {
    site: SiteData,
    bands: Vec<String>,
    clim: Climatology,
    fusion: FusionModels,
    models: BTreeMap<String, ObservationModel>,
    pixels: Vec<PixelId>,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let data = cfg.require_data()?;
    let bands = cfg.resolve_bands()?;
    for (dir, cmd) in [
        (cfg.climatology_dir(), "build-climatology"),
        (cfg.fusion_dir(), "fit-fusion"),
    ] {
        if !dir.is_dir() {
            return Err(CliError::Config(format!(
                "{} is missing; run `oifuse {cmd}` first",
                dir.display()
            )));
        }
    }
    let clim = read_climatology(&cfg.climatology_dir())?;
    let fusion = read_fusion(&cfg.fusion_dir())?;
    let site = SiteData::load(data, &bands, &cfg.quality_policy())?;
    let models = {
        let archive = if cfg.observation.r.is_none() {
            site.archive(clim.options.period)?
        } else {
            PixelArchive::new(site.fine_geometry, &[])
        };
        cfg.observation.resolve(&archive, &clim)?
    };
    let summary: BTreeMap<&String, serde_json::Value> = models
        .iter()
        .map(|(b, m)| (b, json!({ "h": m.h(), "r": m.r() })))
        .collect();
    let mut text = serde_json::to_string_pretty(&summary).expect("json");
    text.push('\n');
    write_file(&cfg.out.join("observation.json"), text.as_bytes())?;

    let pixels = (0..site.fine_geometry.len() as PixelId).collect();
    Ok(Prepared {
        site,
        bands,
        clim,
        fusion,
        models,
        pixels,
    })
}

impl Prepared {
    fn model(&self, band: &str) -> Result<&ObservationModel, CliError> {
        self.models
            .get(band)
            .ok_or_else(|| CliError::Config(format!("climatology has no band {band}")))
    }

    fn inputs(&self, cfg: &RunConfig, band: &str) -> Result<Vec<oifuse::PixelInputs>, CliError> {
        Ok(target_inputs(
            &self.site,
            &self.clim,
            &self.fusion,
            band,
            cfg.target_year(),
            &self.pixels,
        )?)
    }
}

pub fn filter_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let p = prepare(cfg)?;
    let mut rows = Vec::new();
    for band in &p.bands {
        let inputs = p.inputs(cfg, band)?;
        let steps = run_filter(&inputs, p.model(band)?)?;
        rows.extend(FilteredRow::rows(&inputs, &steps));
    }
    let mut buf = Vec::new();
    write_filtered_csv(&mut buf, &rows)?;
    let path = cfg.out.join("filtered.csv");
    write_file(&path, &buf)?;
    log::info!("{} filtered rows -> {}", rows.len(), path.display());
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let p = prepare(cfg)?;
    let sites = cfg.resolve_sites(&p.site.fine_geometry)?;
    let truth_dir = cfg.data_dir().join("truth");
    let truth = if truth_dir.is_dir() {
        Some(load_composites(
            &truth_dir,
            &p.bands,
            &cfg.quality_policy(),
        )?)
    } else {
        None
    };

    let mut report = MetricsReport::default();
    let mut rho = String::from("site,band,pixel_id,rho\n");
    let mut skill_csv = format!("{SKILL_CSV_HEADER}\n");
    for band in &p.bands {
        let inputs = p.inputs(cfg, band)?;
        let obs = p.model(band)?;
        for v in cross_validate(&inputs, obs, &sites, &p.site.fine_geometry)? {
            for (pixel, r) in &v.rho {
                let _ = writeln!(rho, "{},{},{pixel},{r}", v.site, v.band);
            }
            report.push(&v.site, &v.band, v.metrics);
        }
        if let Some(truth) = &truth {
            let steps = run_filter(&inputs, obs)?;
            let s = skill(&inputs, &steps, truth)?;
            log::info!(
                "band {band}: RMSE vs truth filtered {:.5}, climatology-only {:.5}, fusion-only {:.5}",
                s.filtered_rmse,
                s.climatology_rmse,
                s.fusion_rmse
            );
            skill_csv.push_str(&s.csv_row());
            skill_csv.push('\n');
        }
    }
    if report.rows.is_empty() {
        return Err(Error::EmptyInput("no site produced held-out pairs").into());
    }
    let table = report.to_table();
    write_file(&cfg.out.join("metrics.csv"), report.to_csv().as_bytes())?;
    write_file(&cfg.out.join("metrics.txt"), table.as_bytes())?;
    write_file(&cfg.out.join("rho_per_pixel.csv"), rho.as_bytes())?;
    if truth.is_some() {
        write_file(&cfg.out.join("skill.csv"), skill_csv.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}
