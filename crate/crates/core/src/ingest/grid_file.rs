//! Binary grid format: `<name>.grid` holds a row-major little-endian `f32`
//! plane with `NaN` marking invalid pixels; `<name>.json` is the sidecar
//! describing it. An optional `<name>.qa` holds little-endian `u16`
//! quality codes with the same layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridGeometry, QualityPolicy, SceneGrid};
use crate::error::{Error, Result};
use crate::types::YearMonth;

pub const GRID_FORMAT: &str = "oifuse-grid/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub band: String,
    pub dtype: String,
    pub byte_order: String,
    pub nodata: String,
    /// Stored values are divided by this on load.
    pub scale_factor: f64,
    pub qa_policy: Option<Vec<u16>>,
    pub period: Option<YearMonth>,
    /// File name of the qa plane, relative to the sidecar.
    pub qa_plane: Option<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
}

impl GridSidecar {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            width: self.width,
            height: self.height,
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_size: self.pixel_size,
        }
    }
}

/// `(values, sidecar, qa)` paths for a grid given any of them or the bare
/// stem.
pub fn grid_paths(path: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("grid" | "json" | "qa") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("grid"), with("json"), with("qa"))
}

/// Writes `scene` with scale factor 1.
pub fn write_grid(
    path: &Path,
    scene: &SceneGrid,
    attributes: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let (grid_path, json_path, qa_path) = grid_paths(path);
    if let Some(parent) = grid_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }

    let mut bytes = Vec::with_capacity(scene.values.len() * 4);
    for v in &scene.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&grid_path, bytes).map_err(|e| Error::io(&grid_path, e))?;

    let qa_plane = match &scene.qa {
        Some(qa) => {
            let mut bytes = Vec::with_capacity(qa.len() * 2);
            for q in qa {
                bytes.extend_from_slice(&q.to_le_bytes());
            }
            fs::write(&qa_path, bytes).map_err(|e| Error::io(&qa_path, e))?;
            qa_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
        }
        None => None,
    };

    let g = scene.geometry;
    let sidecar = GridSidecar {
        format: GRID_FORMAT.to_string(),
        width: g.width,
        height: g.height,
        origin_x: g.origin_x,
        origin_y: g.origin_y,
        pixel_size: g.pixel_size,
        band: scene.band.clone(),
        dtype: "float32".into(),
        byte_order: "little".into(),
        nodata: "NaN".into(),
        scale_factor: 1.0,
        qa_policy: scene
            .qa_policy
            .as_ref()
            .map(|p| p.accepted.iter().copied().collect()),
        period: scene.period,
        qa_plane,
        attributes,
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}

/// Reads a grid exactly as stored: no scaling, no masking.
pub fn read_grid_raw(path: &Path) -> Result<(SceneGrid, GridSidecar)> {
    let (grid_path, json_path, _) = grid_paths(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: GridSidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e))?;
    if sidecar.format != GRID_FORMAT {
        return Err(Error::format(
            &json_path,
            format!("unknown format {:?}", sidecar.format),
        ));
    }
    if sidecar.dtype != "float32" || sidecar.byte_order != "little" {
        return Err(Error::format(
            &json_path,
            format!(
                "unsupported layout {} / {}",
                sidecar.dtype, sidecar.byte_order
            ),
        ));
    }
    if !(sidecar.scale_factor.is_finite() && sidecar.scale_factor > 0.0) {
        return Err(Error::format(&json_path, "scale_factor must be positive"));
    }
    let geometry = sidecar.geometry();
    geometry
        .validate()
        .map_err(|e| Error::format(&json_path, e))?;

    let bytes = fs::read(&grid_path).map_err(|e| Error::io(&grid_path, e))?;
    if bytes.len() != geometry.len() * 4 {
        return Err(Error::format(
            &grid_path,
            format!(
                "expected {} bytes, found {}",
                geometry.len() * 4,
                bytes.len()
            ),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let qa = match &sidecar.qa_plane {
        Some(name) => {
            let qa_path = json_path.with_file_name(name);
            let bytes = fs::read(&qa_path).map_err(|e| Error::io(&qa_path, e))?;
            if bytes.len() != geometry.len() * 2 {
                return Err(Error::format(&qa_path, "qa plane size does not match grid"));
            }
            Some(
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            )
        }
        None => None,
    };

    let scene = SceneGrid {
        geometry,
        band: sidecar.band.clone(),
        period: sidecar.period,
        values,
        qa,
        qa_policy: sidecar
            .qa_policy
            .as_ref()
            .map(|codes| QualityPolicy::accepting(codes.iter().copied())),
    };
    Ok((scene, sidecar))
}

/// Reads a reflectance scene: divides by the sidecar scale factor and masks
/// physically implausible values.
pub fn read_grid(path: &Path) -> Result<SceneGrid> {
    let (mut scene, sidecar) = read_grid_raw(path)?;
    if sidecar.scale_factor != 1.0 {
        for v in &mut scene.values {
            *v = (f64::from(*v) / sidecar.scale_factor) as f32;
        }
    }
    let masked = scene.mask_implausible();
    if masked > 0 {
        log::warn!(
            "{}: masked {masked} implausible reflectance values",
            path.display()
        );
    }
    Ok(scene)
}

/// Every reflectance scene of `band` in `dir`, in file-name order.
pub fn read_scene_dir(dir: &Path, band: &str) -> Result<Vec<SceneGrid>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "grid") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut scenes = Vec::new();
    for p in paths {
        let (_, json_path, _) = grid_paths(&p);
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: GridSidecar =
            serde_json::from_str(&text).map_err(|e| Error::format(&json_path, e))?;
        if sidecar.band == band {
            scenes.push(read_grid(&p)?);
        }
    }
    Ok(scenes)
}
