//! On-disk form of a trained field: `field.json` plus a tensor checkpoint.

use std::path::Path;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::model::{FieldConfig, FieldFrame, RadianceField};
use super::render::Background;
use crate::error::{Error, Result};
use crate::field::{load_checkpoint, save_checkpoint};

pub const FIELD_JSON: &str = "field.json";
pub const FIELD_PARAMS: &str = "field.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMeta {
    pub config: FieldConfig,
    pub frame: FieldFrame,
    pub num_classes: usize,
    pub sky_class: Option<u32>,
    pub background: [f64; 3],
    pub bounds: [f64; 6],
}

impl FieldMeta {
    pub fn background(&self) -> Background {
        Background { color: DVec3::from_array(self.background), sky_class: self.sky_class }
    }
}

pub fn save_field(field: &RadianceField, meta: &FieldMeta, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(FIELD_JSON);
    std::fs::write(&json, serde_json::to_vec_pretty(meta)?).map_err(|e| Error::io(&json, e))?;
    save_checkpoint(&field.params, &dir.join(FIELD_PARAMS))
}

pub fn load_field(dir: &Path) -> Result<(RadianceField, FieldMeta)> {
    let json = dir.join(FIELD_JSON);
    let bytes = std::fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let meta: FieldMeta = serde_json::from_slice(&bytes).map_err(|e| Error::format(&json, e.to_string()))?;
    let params = load_checkpoint(&dir.join(FIELD_PARAMS))?;
    let field = RadianceField::from_params(meta.config.clone(), meta.frame, meta.num_classes, &params)?;
    Ok((field, meta))
}
