use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prompts::render;
use super::{DatagenError, PairStatus, PromptTemplates, RawPair};
use crate::config::RunHeader;

/// One exported pair: the planning prompt, the task and its environment,
/// the safe plan, the unsafe plan, and how the pair came about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub prompt: String,
    #[serde(flatten)]
    pub pair: RawPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub header: Option<RunHeader>,
    pub records: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub needs_review: usize,
    /// Violations per hazard code over accepted unsafe plans.
    pub hazard_histogram: BTreeMap<String, usize>,
}

/// `pairs.jsonl` → `pairs.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

/// Writes the dataset JSONL and its manifest next to it.
pub fn export_dataset(
    pairs: &[RawPair],
    path: &Path,
    header: Option<&RunHeader>,
    templates: &PromptTemplates,
    categories: &[String],
) -> Result<Manifest, DatagenError> {
    let prompt = render(
        &format!(
            "{}\n\n{}",
            templates.planner_system.trim_end(),
            templates.planner_safety
        ),
        &[],
    );
    let records: Vec<DatasetRecord> = pairs
        .iter()
        .map(|p| DatasetRecord {
            prompt: prompt.clone(),
            pair: p.clone(),
        })
        .collect();
    crate::io::write_jsonl(path, header, &records)
        .map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;

    let mut hazard_histogram: BTreeMap<String, usize> =
        categories.iter().map(|c| (c.clone(), 0)).collect();
    let (mut accepted, mut rejected, mut needs_review) = (0, 0, 0);
    for p in pairs {
        match p.status {
            PairStatus::Accepted => {
                accepted += 1;
                for h in &p.hazards {
                    *hazard_histogram.entry(h.clone()).or_default() += 1;
                }
            }
            PairStatus::Rejected { .. } => rejected += 1,
            PairStatus::NeedsReview { .. } => needs_review += 1,
        }
    }
    let manifest = Manifest {
        header: header.cloned(),
        records: pairs.len(),
        accepted,
        rejected,
        needs_review,
        hazard_histogram,
    };
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mpath, text + "\n")
        .map_err(|e| DatagenError::Io(format!("{}: {e}", mpath.display())))?;
    Ok(manifest)
}

pub fn import_dataset(path: &Path) -> Result<Vec<RawPair>, DatagenError> {
    let records: Vec<DatasetRecord> = crate::io::read_jsonl(path)
        .map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
    Ok(records.into_iter().map(|r| r.pair).collect())
}
