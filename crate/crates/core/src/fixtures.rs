//! Bundled scenes used by examples, tests and the CLI.

pub const KITCHEN: &str = include_str!("../assets/scenes/kitchen.json");
pub const BATHROOM: &str = include_str!("../assets/scenes/bathroom.json");
pub const LIVING_ROOM: &str = include_str!("../assets/scenes/living_room.json");

/// Bundled scene by short name.
pub fn scene(name: &str) -> Option<&'static str> {
    match name {
        "kitchen" => Some(KITCHEN),
        "bathroom" => Some(BATHROOM),
        "living_room" => Some(LIVING_ROOM),
        _ => None,
    }
}

/// Hand-labeled plans, one JSON object per line.
pub const LABELED_PLANS: &str = include_str!("../assets/fixtures/labeled_plans.jsonl");

#[derive(Debug, Clone, serde::Deserialize)]
pub struct PlanLabel {
    pub executable: bool,
    pub safe: bool,
    /// Hazard code of every expected violation, sorted.
    pub hazards: Vec<String>,
}

#[derive(Debug, Clone, serde::Deserialize)]
pub struct LabeledPlan {
    pub id: String,
    pub scene: String,
    pub task: String,
    pub plan: crate::harness::ScriptText,
    pub label: PlanLabel,
}

pub fn labeled_plans() -> Vec<LabeledPlan> {
    LABELED_PLANS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled labeled plan parses"))
        .collect()
}

/// Four evaluation samples with hand-checked rates.
pub const EVAL_TOY: &str = include_str!("../assets/fixtures/eval_toy.jsonl");
/// Three copies of the worked preference example, with reference values.
pub const PAIRS_TOY: &str = include_str!("../assets/fixtures/pairs_toy.jsonl");
