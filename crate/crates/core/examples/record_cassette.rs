//! Records the bundled datagen cassette from hand-written replies.
//!
//! `assets/datagen/responses.json` maps `task:<role>:<round>:<try>` and
//! `pair:<id>:<attempt>` to reply text. This example runs both pipelines in
//! RECORD mode against a transport that answers from that map, then writes
//! `assets/datagen/cassette.json`.
//!
//! cargo run -p safeplan-core --example record_cassette

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use safeplan_core::config::{LlmMode, LlmSettings, RunConfig};
use safeplan_core::datagen::{
    build_pairs, completion_body, generate_tasks, load_seeds, AgentRole, Cassette, LlmClient,
    PairGenConfig, PairSeed, PromptTemplates, TaskGenConfig, Transport,
};
use safeplan_core::harness::SceneCache;
use safeplan_core::{SafetyRuleSet, Simulator};
use serde_json::Value;

struct Scripted(BTreeMap<String, String>);

fn field<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(label))
        .map(str::trim)
}

impl Transport for Scripted {
    fn post_json(
        &self,
        _: &str,
        _: Option<&str>,
        body: &Value,
        _: Duration,
    ) -> Result<Value, String> {
        let users: Vec<&str> = body["messages"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|m| m["role"] == "user")
            .map(|m| m["content"].as_str().unwrap())
            .collect();
        let first = users[0];
        let key = if let Some(id) = field(first, "Task id:") {
            format!("pair:{id}:{}", users.len())
        } else {
            format!(
                "task:{}:{}:{}",
                field(first, "Role:").unwrap(),
                field(first, "Round:").unwrap(),
                users.len()
            )
        };
        let reply = self
            .0
            .get(&key)
            .ok_or_else(|| format!("no scripted reply for {key}"))?;
        Ok(completion_body(reply))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/datagen");
    let replies: BTreeMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("responses.json"))?)?;
    let cfg = RunConfig::default();
    let settings = LlmSettings {
        mode: LlmMode::Record,
        ..cfg.llm.clone()
    };
    let client =
        LlmClient::with_transport(settings, Box::new(Scripted(replies)), Cassette::default());

    let rules = SafetyRuleSet::builtin();
    let scenes = SceneCache::new(Some(dir.clone()));
    let templates = PromptTemplates::builtin();
    let seeds = load_seeds(
        std::io::BufReader::new(std::fs::File::open(dir.join("seeds.jsonl"))?),
        &scenes,
    )?;
    let roles: Vec<AgentRole> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("roles.json"))?)?;
    let task_cfg = TaskGenConfig {
        rounds: cfg.datagen.rounds,
        dedup_tau: cfg.datagen.dedup_tau,
        schema_retries: cfg.datagen.schema_retries,
        categories: rules.categories().iter().map(|c| c.code.clone()).collect(),
    };
    let tasks = generate_tasks(&seeds, &roles, &task_cfg, &client, &templates)?;
    println!(
        "tasks: {} accepted, {} dropped",
        tasks.tasks.len(),
        tasks.dropped.len()
    );

    let corpus: Vec<PairSeed> = safeplan_core::io::read_jsonl(&dir.join("pairs_corpus.jsonl"))?;
    let pair_cfg = PairGenConfig {
        max_attempts: cfg.datagen.max_attempts,
        min_unsafe_len: cfg.datagen.min_unsafe_len,
    };
    let pairs = build_pairs(
        &corpus,
        &client,
        &rules,
        &Simulator::default(),
        &scenes,
        &templates,
        &pair_cfg,
    )?;
    for p in &pairs {
        println!("{} {:?} attempts={}", p.id, p.status, p.attempts);
    }
    let out = dir.join("cassette.json");
    client.cassette().save(&out)?;
    println!(
        "{} entries -> {}",
        client.cassette().entries.len(),
        out.display()
    );
    Ok(())
}
