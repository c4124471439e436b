use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Object identifier, unique within a scene.
pub type ObjectId = u32;

/// Well-known property and state tags. Tags are open strings; these are the
/// ones the shipped verb table and ruleset rely on.
pub mod tags {
    pub const GRABBABLE: &str = "GRABBABLE";
    pub const HEAT_SOURCE: &str = "HEAT_SOURCE";
    pub const SURFACE: &str = "SURFACE";
    pub const CONTAINER: &str = "CONTAINER";
    pub const HAS_SWITCH: &str = "HAS_SWITCH";
    pub const LIQUID: &str = "LIQUID";
    pub const SHARP: &str = "SHARP";
    pub const FRAGILE: &str = "FRAGILE";
    pub const ELECTRICAL: &str = "ELECTRICAL";
    pub const ROOM: &str = "ROOM";

    pub const ON: &str = "ON";
    pub const OFF: &str = "OFF";
    pub const OPEN: &str = "OPEN";
    pub const CLOSED: &str = "CLOSED";
    pub const WET: &str = "WET";
    pub const DIRTY: &str = "DIRTY";
    pub const CLEAN: &str = "CLEAN";
    pub const BROKEN: &str = "BROKEN";
    pub const PLUGGED_IN: &str = "PLUGGED_IN";
    pub const PLUGGED_OUT: &str = "PLUGGED_OUT";

    /// Pairs of states that can never be held at the same time. Setting one
    /// clears the other.
    pub const EXCLUSIVE: &[(&str, &str)] = &[
        (ON, OFF),
        (OPEN, CLOSED),
        (PLUGGED_IN, PLUGGED_OUT),
        (CLEAN, DIRTY),
    ];

    /// The state that `state` excludes, if any.
    pub fn counterpart(state: &str) -> Option<&'static str> {
        EXCLUSIVE.iter().find_map(|&(a, b)| {
            if a == state {
                Some(b)
            } else if b == state {
                Some(a)
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading scene {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub name: String,
    pub class_name: String,
    #[serde(default)]
    pub properties: BTreeSet<String>,
    #[serde(default)]
    pub states: BTreeSet<String>,
}

impl SceneObject {
    pub fn new(id: ObjectId, name: &str, class_name: &str) -> Self {
        Self {
            id,
            name: name.to_ascii_lowercase(),
            class_name: class_name.to_ascii_lowercase(),
            properties: BTreeSet::new(),
            states: BTreeSet::new(),
        }
    }

    pub fn with_properties(mut self, props: &[&str]) -> Self {
        self.properties
            .extend(props.iter().map(|p| p.to_ascii_uppercase()));
        self
    }

    pub fn with_states(mut self, states: &[&str]) -> Self {
        self.states
            .extend(states.iter().map(|s| s.to_ascii_uppercase()));
        self
    }

    pub fn has_property(&self, p: &str) -> bool {
        self.properties.contains(p)
    }

    pub fn has_state(&self, s: &str) -> bool {
        self.states.contains(s)
    }

    /// True if `label` is this object's name or class.
    pub fn is_a(&self, label: &str) -> bool {
        self.name == label || self.class_name == label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Predicate {
    OnTop,
    Inside,
    Holds,
    CloseTo,
    Facing,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Predicate::OnTop => "ON_TOP",
            Predicate::Inside => "INSIDE",
            Predicate::Holds => "HOLDS",
            Predicate::CloseTo => "CLOSE_TO",
            Predicate::Facing => "FACING",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    #[serde(rename = "subject")]
    pub subject_id: ObjectId,
    pub predicate: Predicate,
    #[serde(rename = "object")]
    pub object_id: ObjectId,
}

impl Relation {
    pub fn new(subject_id: ObjectId, predicate: Predicate, object_id: ObjectId) -> Self {
        Self {
            subject_id,
            predicate,
            object_id,
        }
    }
}

/// Symbolic world state: objects plus typed relations between them.
///
/// Construct through [`SceneGraph::new`] or deserialization; both validate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile", into = "SceneFile")]
pub struct SceneGraph {
    pub nodes: BTreeMap<ObjectId, SceneObject>,
    pub edges: BTreeSet<Relation>,
    pub agent_id: ObjectId,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    nodes: Vec<SceneObject>,
    #[serde(default)]
    edges: Vec<Relation>,
    agent_id: ObjectId,
}

impl TryFrom<SceneFile> for SceneGraph {
    type Error = SceneError;

    fn try_from(file: SceneFile) -> Result<Self, Self::Error> {
        let mut nodes = BTreeMap::new();
        for mut node in file.nodes {
            node.name = node.name.to_ascii_lowercase();
            node.class_name = node.class_name.to_ascii_lowercase();
            node.properties = node
                .properties
                .iter()
                .map(|p| p.to_ascii_uppercase())
                .collect();
            node.states = node.states.iter().map(|s| s.to_ascii_uppercase()).collect();
            let id = node.id;
            if nodes.insert(id, node).is_some() {
                return Err(SceneError::Invalid(format!("duplicate node id {id}")));
            }
        }
        SceneGraph::new(nodes.into_values(), file.edges, file.agent_id)
    }
}

impl From<SceneGraph> for SceneFile {
    fn from(g: SceneGraph) -> Self {
        SceneFile {
            nodes: g.nodes.into_values().collect(),
            edges: g.edges.into_iter().collect(),
            agent_id: g.agent_id,
        }
    }
}

impl SceneGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = SceneObject>,
        edges: impl IntoIterator<Item = Relation>,
        agent_id: ObjectId,
    ) -> Result<Self, SceneError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            let id = node.id;
            if map.insert(id, node).is_some() {
                return Err(SceneError::Invalid(format!("duplicate node id {id}")));
            }
        }
        let graph = SceneGraph {
            nodes: map,
            edges: edges.into_iter().collect(),
            agent_id,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks every structural invariant of the graph.
    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |m: String| Err(SceneError::Invalid(m));
        if !self.nodes.contains_key(&self.agent_id) {
            return invalid(format!("agent id {} is not a node", self.agent_id));
        }
        for (&id, node) in &self.nodes {
            if id != node.id {
                return invalid(format!("node keyed {id} has id {}", node.id));
            }
            if node.name.is_empty() || node.class_name.is_empty() {
                return invalid(format!("node {id} has an empty name or class"));
            }
            for &(a, b) in tags::EXCLUSIVE {
                if node.has_state(a) && node.has_state(b) {
                    return invalid(format!("node {id} ({}) is both {a} and {b}", node.name));
                }
            }
        }
        let mut inside_parent: BTreeMap<ObjectId, ObjectId> = BTreeMap::new();
        for e in &self.edges {
            if e.subject_id == e.object_id {
                return invalid(format!(
                    "self-relation {} on node {}",
                    e.predicate, e.subject_id
                ));
            }
            for id in [e.subject_id, e.object_id] {
                if !self.nodes.contains_key(&id) {
                    return invalid(format!("edge {} references unknown node {id}", e.predicate));
                }
            }
            if e.predicate == Predicate::Inside {
                if let Some(prev) = inside_parent.insert(e.subject_id, e.object_id) {
                    return invalid(format!(
                        "node {} is INSIDE both {prev} and {}",
                        e.subject_id, e.object_id
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn node(&self, id: ObjectId) -> Option<&SceneObject> {
        self.nodes.get(&id)
    }

    pub fn agent(&self) -> &SceneObject {
        &self.nodes[&self.agent_id]
    }

    pub fn has_edge(&self, subject: ObjectId, predicate: Predicate, object: ObjectId) -> bool {
        self.edges
            .contains(&Relation::new(subject, predicate, object))
    }

    /// Edges whose subject is `id`.
    pub fn edges_from(&self, id: ObjectId) -> impl Iterator<Item = &Relation> {
        let lo = Relation::new(id, Predicate::OnTop, 0);
        self.edges
            .range(lo..)
            .take_while(move |e| e.subject_id == id)
    }

    /// Objects the agent currently holds.
    pub fn held_by_agent(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.edges_from(self.agent_id)
            .filter(|e| e.predicate == Predicate::Holds)
            .map(|e| e.object_id)
    }

    /// The objects `id` rests on or in, following ON_TOP and INSIDE upward.
    pub fn supports(&self, id: ObjectId) -> Vec<ObjectId> {
        let mut out = Vec::new();
        let mut frontier = vec![id];
        while let Some(cur) = frontier.pop() {
            for e in self.edges_from(cur) {
                if matches!(e.predicate, Predicate::OnTop | Predicate::Inside)
                    && e.object_id != id
                    && !out.contains(&e.object_id)
                {
                    out.push(e.object_id);
                    frontier.push(e.object_id);
                }
            }
        }
        out
    }

    /// Ids whose state set differs between two graphs over the same nodes.
    pub fn state_diff(&self, other: &SceneGraph) -> BTreeSet<ObjectId> {
        self.nodes
            .iter()
            .filter(|(id, n)| other.nodes.get(id).is_none_or(|o| o.states != n.states))
            .map(|(&id, _)| id)
            .collect()
    }

    /// Compact human-readable listing used in prompts and diagnostics.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for n in self.nodes.values() {
            let props: Vec<&str> = n.properties.iter().map(String::as_str).collect();
            let states: Vec<&str> = n.states.iter().map(String::as_str).collect();
            out.push_str(&format!("- {} ({}) class={}", n.name, n.id, n.class_name));
            if !props.is_empty() {
                out.push_str(&format!(" properties=[{}]", props.join(", ")));
            }
            if !states.is_empty() {
                out.push_str(&format!(" states=[{}]", states.join(", ")));
            }
            out.push('\n');
        }
        for e in &self.edges {
            let name = |id: ObjectId| self.nodes.get(&id).map_or("?", |n| n.name.as_str());
            out.push_str(&format!(
                "- {} {} {}\n",
                name(e.subject_id),
                e.predicate,
                name(e.object_id)
            ));
        }
        out
    }
}
