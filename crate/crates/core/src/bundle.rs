//! On-disk model bundle: a directory holding `base.json`, `selector.json`,
//! `collaborator.json` and `config.json`.

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::basemodel::BaseClassifier;
use crate::collab::{CollaborationModule, LecoduModel, SelectionModule, TrainConfig};
use crate::numerics::Checkpoint;
use crate::{Error, Result};

pub const BASE_FILE: &str = "base.json";
pub const SELECTOR_FILE: &str = "selector.json";
pub const COLLABORATOR_FILE: &str = "collaborator.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn save_bundle(model: &LecoduModel, config: &TrainConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    model.base.save(&dir.join(BASE_FILE))?;
    Checkpoint::new(
        &model.selector.params,
        json!({
            "role": "selector",
            "m": model.m,
            "gumbel_temperature": model.selector.gumbel_temperature,
        }),
    )
    .save(&dir.join(SELECTOR_FILE))?;
    Checkpoint::new(
        &model.collaborator.params,
        json!({
            "role": "collaborator",
            "m": model.m,
            "num_classes": model.num_classes(),
        }),
    )
    .save(&dir.join(COLLABORATOR_FILE))?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<(LecoduModel, TrainConfig)> {
    let base = BaseClassifier::load(&dir.join(BASE_FILE))?;
    let config: TrainConfig = serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let selector = Checkpoint::load(&dir.join(SELECTOR_FILE))?;
    let collaborator = Checkpoint::load(&dir.join(COLLABORATOR_FILE))?;
    let m = selector
        .meta
        .get("m")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Input(format!("{SELECTOR_FILE} lacks the pool size \"m\"")))? as usize;
    let gumbel_temperature = selector
        .meta
        .get("gumbel_temperature")
        .and_then(|v| v.as_f64())
        .unwrap_or(config.selection_temperature);
    let model = LecoduModel::new(
        base,
        SelectionModule {
            params: selector.to_mlp()?,
            gumbel_temperature,
        },
        CollaborationModule {
            params: collaborator.to_mlp()?,
        },
        m,
        config.ai_norm_temperature,
    )?;
    Ok((model, config))
}
