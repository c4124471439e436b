use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::prompts::render;
use super::{
    json_object, AgentRole, ChatMessage, DatagenError, GeneratedTask, LlmClient, PromptTemplates,
    Provenance,
};
use crate::harness::{SceneCache, SceneSource};
use crate::metrics::rouge_l_text;
use crate::world::SceneGraph;

/// A seed line: like a generated task, but the scene may be a bundled name
/// or a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTask {
    pub id: String,
    pub task_text: String,
    pub scene: SceneSource,
    #[serde(default)]
    pub hazard_tags: Vec<String>,
}

/// Reads seed tasks from JSONL and resolves their scenes.
pub fn load_seeds(
    reader: impl BufRead,
    scenes: &SceneCache,
) -> Result<Vec<GeneratedTask>, DatagenError> {
    let raw: Vec<SeedTask> =
        crate::io::parse_jsonl(reader).map_err(|e| DatagenError::Io(e.to_string()))?;
    raw.into_iter()
        .map(|s| {
            let scene = scenes
                .resolve(&s.scene)
                .map_err(|e| DatagenError::InvalidInput(format!("seed {}: {e}", s.id)))?;
            Ok(GeneratedTask {
                provenance: Provenance {
                    roles: Vec::new(),
                    round: 0,
                    seed_ids: vec![s.id.clone()],
                },
                id: s.id,
                task_text: s.task_text,
                scene: (*scene).clone(),
                hazard_tags: s.hazard_tags,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGenConfig {
    pub rounds: usize,
    pub dedup_tau: f64,
    /// Follow-up requests after a reply that does not parse.
    pub schema_retries: usize,
    /// Hazard codes a reply may tag.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub role: String,
    pub round: usize,
    pub task_text: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGenOutput {
    pub tasks: Vec<GeneratedTask>,
    pub dropped: Vec<DroppedCandidate>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskReply {
    task: String,
    #[serde(default)]
    hazard_tags: Vec<String>,
    scene: SceneGraph,
}

fn parse_reply(reply: &str, categories: &[String]) -> Result<TaskReply, String> {
    let body = json_object(reply).ok_or("no JSON object in reply")?;
    let mut t: TaskReply = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    if t.task.trim().is_empty() {
        return Err("empty task".into());
    }
    t.scene
        .validate()
        .map_err(|e| format!("invalid scene: {e}"))?;
    for tag in &mut t.hazard_tags {
        *tag = tag.to_ascii_uppercase();
        if !categories.contains(tag) {
            return Err(format!("unknown hazard tag {tag}"));
        }
    }
    Ok(t)
}

/// Case-insensitive Rouge-L over whitespace tokens.
pub(crate) fn similarity(a: &str, b: &str) -> f64 {
    rouge_l_text(&a.to_lowercase(), &b.to_lowercase())
}

fn listing(tasks: &[(String, String)]) -> String {
    if tasks.is_empty() {
        return "(none yet)".into();
    }
    tasks
        .iter()
        .map(|(who, t)| format!("- [{who}] {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs `rounds` rounds in which every role proposes one task.
///
/// Proposals within a round are requested concurrently and see the group's
/// accepted ideas from earlier rounds. They then pass one at a time, in role
/// order, through a gate that keeps a task only if its similarity to every
/// seed and every task accepted before it is below `dedup_tau`.
pub fn generate_tasks(
    seeds: &[GeneratedTask],
    roles: &[AgentRole],
    cfg: &TaskGenConfig,
    client: &LlmClient,
    templates: &PromptTemplates,
) -> Result<TaskGenOutput, DatagenError> {
    if roles.len() < 2 {
        return Err(DatagenError::InvalidInput(
            "at least two roles are needed".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(DatagenError::InvalidInput("no seed tasks".into()));
    }
    if !(cfg.dedup_tau > 0.0 && cfg.dedup_tau <= 1.0) {
        return Err(DatagenError::InvalidInput(format!(
            "dedup threshold {} outside (0, 1]",
            cfg.dedup_tau
        )));
    }
    roles.iter().try_for_each(AgentRole::validate)?;

    let seed_ids: Vec<String> = seeds.iter().map(|s| s.id.clone()).collect();
    let seed_list = listing(
        &seeds
            .iter()
            .map(|s| ("seed".to_string(), s.task_text.clone()))
            .collect::<Vec<_>>(),
    );
    let system = render(
        &templates.task_system,
        &[("categories", &cfg.categories.join(", "))],
    );
    let mut accepted: Vec<GeneratedTask> = Vec::new();
    let mut dropped = Vec::new();
    for round in 1..=cfg.rounds {
        let history = listing(
            &accepted
                .iter()
                .map(|t| (t.provenance.roles.join(","), t.task_text.clone()))
                .collect::<Vec<_>>(),
        );
        let proposals: Vec<Result<Result<TaskReply, String>, DatagenError>> = roles
            .par_iter()
            .map(|role| {
                let question = render(
                    &templates.task_question,
                    &[
                        ("role", &role.name),
                        ("persona", &role.persona_prompt),
                        ("focus", &role.focus_categories.join(", ")),
                        ("round", &round.to_string()),
                        ("seeds", &seed_list),
                        ("history", &history),
                    ],
                );
                let mut messages = vec![
                    ChatMessage::system(system.clone()),
                    ChatMessage::user(question),
                ];
                let mut last = String::new();
                for _ in 0..=cfg.schema_retries {
                    let reply = client.complete(messages.clone())?;
                    match parse_reply(&reply, &cfg.categories) {
                        Ok(t) => return Ok(Ok(t)),
                        Err(reason) => {
                            messages.push(ChatMessage::assistant(reply));
                            messages.push(ChatMessage::user(render(
                                &templates.task_feedback,
                                &[("reason", &reason)],
                            )));
                            last = reason;
                        }
                    }
                }
                Ok(Err(format!("schema: {last}")))
            })
            .collect();

        // the gate: strictly sequential, in role order
        for (role, proposal) in roles.iter().zip(proposals) {
            let reply = match proposal? {
                Ok(r) => r,
                Err(reason) => {
                    log::warn!("round {round}: dropping {}'s proposal: {reason}", role.name);
                    dropped.push(DroppedCandidate {
                        role: role.name.clone(),
                        round,
                        task_text: None,
                        reason,
                    });
                    continue;
                }
            };
            let closest = seeds
                .iter()
                .chain(&accepted)
                .map(|t| (similarity(&reply.task, &t.task_text), t.id.as_str()))
                .fold((0.0f64, ""), |a, b| if b.0 > a.0 { b } else { a });
            if closest.0 >= cfg.dedup_tau {
                let reason = format!("too similar to {} (rouge-l {:.3})", closest.1, closest.0);
                log::info!("round {round}: dropping {}'s proposal: {reason}", role.name);
                dropped.push(DroppedCandidate {
                    role: role.name.clone(),
                    round,
                    task_text: Some(reply.task),
                    reason,
                });
                continue;
            }
            accepted.push(GeneratedTask {
                id: format!("gen-r{round}-{}", role.name),
                task_text: reply.task,
                scene: reply.scene,
                hazard_tags: reply.hazard_tags,
                provenance: Provenance {
                    roles: vec![role.name.clone()],
                    round,
                    seed_ids: seed_ids.clone(),
                },
            });
        }
    }
    Ok(TaskGenOutput {
        tasks: accepted,
        dropped,
    })
}
