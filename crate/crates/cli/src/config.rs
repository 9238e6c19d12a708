use std::fs;
use std::path::{Path, PathBuf};

use oifuse::pipeline::{discover_bands, ObservationSettings};
use oifuse::{ClimatologyOptions, FusionOptions, QualityPolicy, Site, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs. Loaded from a JSON file; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `fine/`, `coarse/` and optionally `truth/` scenes.
    /// Defaults to `out`.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Empty means every band found under `data/fine`.
    pub bands: Vec<String>,
    pub climatology: ClimatologyOptions,
    /// Defaults to the year after the climatology period.
    pub target_year: Option<i32>,
    pub fusion: FusionOptions,
    pub observation: ObservationSettings,
    /// QA codes treated as maximum quality.
    pub qa_accept: Vec<u16>,
    /// Evaluation sites; defaults to `data/sites.json`, then five strips.
    pub sites: Option<Vec<Site>>,
    pub threads: Option<usize>,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("oifuse-out"),
            bands: Vec::new(),
            climatology: ClimatologyOptions::default(),
            target_year: None,
            fusion: FusionOptions::default(),
            observation: ObservationSettings::default(),
            qa_accept: vec![0],
            sites: None,
            threads: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let (y0, y1) = self.climatology.period;
        if y0 > y1 {
            return Err(CliError::Config(format!(
                "climatology period {y0}..{y1} is empty"
            )));
        }
        if self.qa_accept.is_empty() {
            return Err(CliError::Config(
                "qa_accept must list at least one code".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.fusion.min_pairs < 2 {
            return Err(CliError::Config(
                "fusion.min_pairs must be at least 2".into(),
            ));
        }
        if !(self.fusion.degenerate_variance.is_finite() && self.fusion.degenerate_variance > 0.0) {
            return Err(CliError::Config(
                "fusion.degenerate_variance must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> &Path {
        self.data.as_deref().unwrap_or(&self.out)
    }

    /// The data directory must exist for every command but `simulate`.
    pub fn require_data(&self) -> Result<&Path, CliError> {
        let dir = self.data_dir();
        if !dir.is_dir() {
            return Err(CliError::Config(format!(
                "data directory {} does not exist",
                dir.display()
            )));
        }
        Ok(dir)
    }

    pub fn target_year(&self) -> i32 {
        self.target_year.unwrap_or(self.climatology.period.1 + 1)
    }

    pub fn quality_policy(&self) -> QualityPolicy {
        QualityPolicy::accepting(self.qa_accept.iter().copied())
    }

    pub fn resolve_bands(&self) -> Result<Vec<String>, CliError> {
        if !self.bands.is_empty() {
            return Ok(self.bands.clone());
        }
        let found = discover_bands(&self.data_dir().join("fine"))?;
        if found.is_empty() {
            return Err(oifuse::Error::EmptyArchive { band: "*".into() }.into());
        }
        Ok(found)
    }

    pub fn resolve_sites(&self, geometry: &oifuse::GridGeometry) -> Result<Vec<Site>, CliError> {
        if let Some(sites) = &self.sites {
            return Ok(sites.clone());
        }
        let path = self.data_dir().join("sites.json");
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            return serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
        }
        Ok(Site::strips(geometry, 5))
    }

    pub fn climatology_dir(&self) -> PathBuf {
        self.out.join("climatology")
    }

    pub fn fusion_dir(&self) -> PathBuf {
        self.out.join("fusion")
    }
}
