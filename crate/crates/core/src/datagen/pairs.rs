use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::prompts::render;
use super::{ChatMessage, DatagenError, LlmClient, PromptTemplates};
use crate::harness::{SceneCache, SceneSource, ScriptText};
use crate::safety::{is_safe, SafetyRuleSet};
use crate::script::{parse_script, PlanScript};
use crate::world::{SceneGraph, Simulator};

/// One task with its safe ground-truth plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSeed {
    pub id: String,
    pub task: String,
    pub scene: SceneSource,
    pub y_w: ScriptText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairStatus {
    Accepted,
    Rejected { reason: String },
    NeedsReview { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPair {
    pub id: String,
    pub task: String,
    pub scene: SceneSource,
    pub y_w: Option<PlanScript>,
    /// The accepted unsafe plan, or the last candidate that parsed.
    pub y_l: Option<PlanScript>,
    pub status: PairStatus,
    /// Generation requests spent on this pair.
    pub attempts: usize,
    /// Hazard code of every violation of an accepted `y_l`, sorted.
    pub hazards: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGenConfig {
    /// Total generation attempts per pair.
    pub max_attempts: usize,
    pub min_unsafe_len: usize,
}

struct Judge<'a> {
    sim: &'a Simulator,
    rules: &'a SafetyRuleSet,
    scene: &'a SceneGraph,
    min_len: usize,
}

impl Judge<'_> {
    /// Accepts an executable, unsafe plan of at least the minimum length.
    fn judge(&self, reply: &str) -> (Option<PlanScript>, Result<Vec<String>, String>) {
        let text: Vec<&str> = reply
            .lines()
            .map(str::trim)
            .filter(|l| l.starts_with('['))
            .collect();
        let plan = match parse_script(&text.join("\n")) {
            Ok(p) if !p.is_empty() => p,
            Ok(_) => return (None, Err("no actions found".into())),
            Err(e) => return (None, Err(format!("does not parse: {e}"))),
        };
        let trace = self.sim.run_plan(self.scene, &plan);
        let result = if let Some(f) = &trace.failure {
            Err(format!(
                "not executable: action {} {}: {}",
                f.index + 1,
                f.action,
                f.error
            ))
        } else if plan.len() < self.min_len {
            Err(format!(
                "too short: {} actions, need at least {}",
                plan.len(),
                self.min_len
            ))
        } else {
            let v = is_safe(&trace, self.rules);
            if v.safe {
                Err("the plan contains no hazard".into())
            } else {
                let mut h: Vec<String> = v
                    .violations
                    .iter()
                    .filter_map(|x| x.hazard.clone())
                    .collect();
                h.sort();
                Ok(h)
            }
        };
        (Some(plan), result)
    }
}

fn rejected(seed: &PairSeed, y_w: Option<PlanScript>, reason: String) -> RawPair {
    RawPair {
        id: seed.id.clone(),
        task: seed.task.clone(),
        scene: seed.scene.clone(),
        y_w,
        y_l: None,
        status: PairStatus::Rejected { reason },
        attempts: 0,
        hazards: Vec::new(),
    }
}

/// Asks for an unsafe counterpart of every safe plan.
///
/// A ground truth that does not execute safely is rejected without asking.
/// Otherwise up to `max_attempts` candidates are requested, each retry
/// carrying the reason the previous one failed; a pair that never passes is
/// kept as NEEDS_REVIEW.
pub fn build_pairs(
    corpus: &[PairSeed],
    client: &LlmClient,
    rules: &SafetyRuleSet,
    sim: &Simulator,
    scenes: &SceneCache,
    templates: &PromptTemplates,
    cfg: &PairGenConfig,
) -> Result<Vec<RawPair>, DatagenError> {
    if cfg.max_attempts == 0 {
        return Err(DatagenError::InvalidInput(
            "max_attempts must be at least 1".into(),
        ));
    }
    let system = [
        &templates.pair_system,
        &templates.pair_safety,
        &templates.pair_examples,
    ]
    .map(|t| t.trim_end())
    .join("\n\n");
    corpus
        .par_iter()
        .map(|seed| {
            let scene = match scenes.resolve(&seed.scene) {
                Ok(s) => s,
                Err(e) => return Ok(rejected(seed, None, format!("scene: {e}"))),
            };
            let y_w = match seed.y_w.parse() {
                Ok(p) => p,
                Err(e) => return Ok(rejected(seed, None, format!("bad_ground_truth: {e}"))),
            };
            let trace = sim.run_plan(&scene, &y_w);
            if let Some(f) = &trace.failure {
                return Ok(rejected(
                    seed,
                    Some(y_w),
                    format!(
                        "bad_ground_truth: action {} fails: {}",
                        f.index + 1,
                        f.error
                    ),
                ));
            }
            let verdict = is_safe(&trace, rules);
            if !verdict.safe {
                let ids: Vec<&str> = verdict
                    .violations
                    .iter()
                    .map(|v| v.rule_id.as_str())
                    .collect();
                return Ok(rejected(
                    seed,
                    Some(y_w),
                    format!("bad_ground_truth: unsafe ({})", ids.join(", ")),
                ));
            }

            let judge = Judge {
                sim,
                rules,
                scene: &scene,
                min_len: cfg.min_unsafe_len,
            };
            let min_len = cfg.min_unsafe_len.to_string();
            let question = render(
                &templates.pair_question,
                &[
                    ("id", &seed.id),
                    ("task", &seed.task),
                    ("scene", scene.describe().trim_end()),
                    ("safe_plan", y_w.to_string().trim_end()),
                    ("min_len", &min_len),
                ],
            );
            let mut messages = vec![
                ChatMessage::system(system.clone()),
                ChatMessage::user(question),
            ];
            let mut last_plan = None;
            let mut last_reason = String::new();
            for attempt in 1..=cfg.max_attempts {
                let reply = client.complete(messages.clone())?;
                let (plan, verdict) = judge.judge(&reply);
                match verdict {
                    Ok(hazards) => {
                        return Ok(RawPair {
                            id: seed.id.clone(),
                            task: seed.task.clone(),
                            scene: seed.scene.clone(),
                            y_w: Some(y_w),
                            y_l: plan,
                            status: PairStatus::Accepted,
                            attempts: attempt,
                            hazards,
                        });
                    }
                    Err(reason) => {
                        log::info!("{}: attempt {attempt} rejected: {reason}", seed.id);
                        messages.push(ChatMessage::assistant(reply));
                        messages.push(ChatMessage::user(render(
                            &templates.pair_feedback,
                            &[("reason", &reason), ("min_len", &min_len)],
                        )));
                        if plan.is_some() {
                            last_plan = plan;
                        }
                        last_reason = reason;
                    }
                }
            }
            Ok(RawPair {
                id: seed.id.clone(),
                task: seed.task.clone(),
                scene: seed.scene.clone(),
                y_w: Some(y_w),
                y_l: last_plan,
                status: PairStatus::NeedsReview {
                    reason: last_reason,
                },
                attempts: cfg.max_attempts,
                hazards: Vec::new(),
            })
        })
        .collect()
}
