//! Versioned model serialization.
//!
//! The file carries the architecture spec and every parameter block as
//! JSON; f64 values use shortest round-trip formatting, so save -> load ->
//! save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DenseLayerParams;

use super::{plan_shapes, ArchitectureSpec, EarlyExitBlock, LateInputBlock, SeeCnnModel, TrunkStage};

pub const MODEL_FORMAT: &str = "see-cnn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    spec: ArchitectureSpec,
    trunk: Vec<TrunkStage>,
    trunk_fc1: DenseLayerParams,
    trunk_fc2: DenseLayerParams,
    exit_blocks: Vec<EarlyExitBlock>,
    late_blocks: Vec<LateInputBlock>,
}

pub fn model_to_json(model: &SeeCnnModel) -> Result<String> {
    if !model.all_finite() {
        return Err(Error::Serialize("model contains non-finite parameters".into()));
    }
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        spec: model.spec().clone(),
        trunk: model.trunk.clone(),
        trunk_fc1: model.trunk_fc1.clone(),
        trunk_fc2: model.trunk_fc2.clone(),
        exit_blocks: model.exit_blocks.clone(),
        late_blocks: model.late_blocks.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json(json: &str) -> Result<SeeCnnModel> {
    let file: ModelFile = serde_json::from_str(json)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Serialize(format!(
            "expected format `{MODEL_FORMAT}`, found `{}`",
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Serialize(format!(
            "unsupported model version {} (supported: {MODEL_VERSION})",
            file.version
        )));
    }
    let plan = plan_shapes(&file.spec)?;
    let model = SeeCnnModel {
        spec: file.spec,
        plan,
        trunk: file.trunk,
        trunk_fc1: file.trunk_fc1,
        trunk_fc2: file.trunk_fc2,
        exit_blocks: file.exit_blocks,
        late_blocks: file.late_blocks,
    };
    if !model.all_finite() {
        return Err(Error::Serialize("model file contains non-finite parameters".into()));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &SeeCnnModel) -> Result<()> {
    fs::write(path, model_to_json(model)? + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SeeCnnModel> {
    model_from_json(fs::read_to_string(path)?.trim_end())
}
