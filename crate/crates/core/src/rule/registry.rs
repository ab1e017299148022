//! On-disk rule registry.
//!
//! Layout: `<registry>/<rule_id>/rule.src` holds the source verbatim and
//! `<registry>/<rule_id>/meta.json` holds every other artifact field.
//! Names starting with `_` are reserved for registry metadata (bundles).

use std::fs;
use std::io::ErrorKind as IoKind;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dialect, Provenance, RuleArtifact};
use crate::error::{Error, Result};
use crate::eval::EvaluationReport;

pub const SOURCE_FILE: &str = "rule.src";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    rule_id: String,
    dialect: Dialect,
    created_from: Provenance,
    trial: u32,
    iteration: u32,
    validation_scores: Option<EvaluationReport>,
    comments_extracted: Vec<String>,
}

pub fn validate_rule_id(id: &str) -> Result<()> {
    let ok_chars = id
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if id.is_empty() || !ok_chars || id.starts_with('.') || id.starts_with('_') {
        return Err(Error::Validation(format!(
            "invalid rule id {id:?}: use [A-Za-z0-9._-], not starting with '.' or '_'"
        )));
    }
    Ok(())
}

pub fn save_rule(registry: &Path, rule: &RuleArtifact) -> Result<()> {
    validate_rule_id(&rule.rule_id)?;
    fs::create_dir_all(registry).map_err(|e| Error::io(registry, e))?;
    let dir = registry.join(&rule.rule_id);
    match fs::create_dir(&dir) {
        Ok(()) => {}
        Err(e) if e.kind() == IoKind::AlreadyExists => {
            return Err(Error::RuleCollision(rule.rule_id.clone()))
        }
        Err(e) => return Err(Error::io(&dir, e)),
    }
    let meta = Meta {
        rule_id: rule.rule_id.clone(),
        dialect: rule.dialect,
        created_from: rule.created_from.clone(),
        trial: rule.trial,
        iteration: rule.iteration,
        validation_scores: rule.validation_scores,
        comments_extracted: rule.comments_extracted.clone(),
    };
    let src_path = dir.join(SOURCE_FILE);
    fs::write(&src_path, &rule.source).map_err(|e| Error::io(&src_path, e))?;
    let meta_path = dir.join(META_FILE);
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

pub fn load_rule(registry: &Path, rule_id: &str) -> Result<RuleArtifact> {
    validate_rule_id(rule_id)?;
    let dir = registry.join(rule_id);
    if !dir.is_dir() {
        return Err(Error::RuleNotFound(rule_id.to_string()));
    }
    let src_path = dir.join(SOURCE_FILE);
    let source = fs::read_to_string(&src_path).map_err(|e| Error::io(&src_path, e))?;
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)?;
    if meta.rule_id != rule_id {
        return Err(Error::Validation(format!(
            "{}: meta.json names rule {:?}",
            meta_path.display(),
            meta.rule_id
        )));
    }
    Ok(RuleArtifact {
        rule_id: meta.rule_id,
        dialect: meta.dialect,
        source,
        created_from: meta.created_from,
        trial: meta.trial,
        iteration: meta.iteration,
        validation_scores: meta.validation_scores,
        comments_extracted: meta.comments_extracted,
    })
}

/// Rule ids present in the registry, sorted.
pub fn list_rules(registry: &Path) -> Result<Vec<String>> {
    if !registry.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(registry).map_err(|e| Error::io(registry, e))? {
        let entry = entry.map_err(|e| Error::io(registry, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && validate_rule_id(&name).is_ok() {
            ids.push(name);
        }
    }
    ids.sort();
    Ok(ids)
}
