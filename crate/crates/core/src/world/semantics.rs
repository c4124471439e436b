//! Data-driven verb semantics.
//!
//! Each verb entry lists an arity, preconditions and effects written in a
//! small fixed vocabulary. Slots are addressed as `"agent"`, `"arg0"` and
//! `"arg1"`; relation effects additionally accept `"any"` as a wildcard.
//!
//! Preconditions (`"pred"` tag):
//!
//! | pred | fields | holds when |
//! |---|---|---|
//! | `has_property` | target, property | target has the property |
//! | `has_any_property` | target, properties | target has at least one |
//! | `lacks_property` | target, property | target lacks the property |
//! | `has_state` | target, state | target is in the state |
//! | `lacks_state` | target, state | target is not in the state |
//! | `related` | subject, relation, object | such an edge exists |
//! | `not_related` | subject, relation, object | no such edge exists |
//! | `reachable` | target | agent holds it, is CLOSE_TO it, or is CLOSE_TO a non-room object it rests on (directly or transitively); and it is not inside a CLOSED container |
//! | `hands_free` | | agent holds fewer than two objects |
//! | `holds_with_property` | property | agent holds an object with the property |
//! | `supported_by` | target, property, state? | some object below target (via ON_TOP / INSIDE, transitively) has the property (and state) |
//!
//! Effects (`"op"` tag):
//!
//! | op | fields | effect |
//! |---|---|---|
//! | `set_state` | target, state | adds the state, removing its exclusive counterpart |
//! | `clear_state` | target, state | removes the state |
//! | `add_relation` | subject, relation, object | adds the edge |
//! | `remove_relations` | subject, relation, object | removes matching edges |
//! | `move_agent` | target, exclusive | agent becomes CLOSE_TO target; `exclusive` first drops its other CLOSE_TO edges |
//! | `when` | conditions, then | applies `then` if every condition holds in the pre-state |

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::{tags, ObjectId, Predicate, SceneGraph};

pub const BUILTIN_VERBS: &str = include_str!("../../assets/verbs.json");

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("verb table JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading verb table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("verb {verb}: {reason}")]
    Invalid { verb: String, reason: String },
}

/// An action slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Agent,
    Arg0,
    Arg1,
}

impl Slot {
    fn arg_index(self) -> Option<usize> {
        match self {
            Slot::Agent => None,
            Slot::Arg0 => Some(0),
            Slot::Arg1 => Some(1),
        }
    }
}

/// A slot or the `any` wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotOrAny {
    Agent,
    Arg0,
    Arg1,
    Any,
}

impl SlotOrAny {
    fn slot(self) -> Option<Slot> {
        match self {
            SlotOrAny::Agent => Some(Slot::Agent),
            SlotOrAny::Arg0 => Some(Slot::Arg0),
            SlotOrAny::Arg1 => Some(Slot::Arg1),
            SlotOrAny::Any => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pred", rename_all = "snake_case", deny_unknown_fields)]
pub enum Precondition {
    HasProperty {
        target: Slot,
        property: String,
    },
    HasAnyProperty {
        target: Slot,
        properties: Vec<String>,
    },
    LacksProperty {
        target: Slot,
        property: String,
    },
    HasState {
        target: Slot,
        state: String,
    },
    LacksState {
        target: Slot,
        state: String,
    },
    Related {
        subject: SlotOrAny,
        relation: Predicate,
        object: SlotOrAny,
    },
    NotRelated {
        subject: SlotOrAny,
        relation: Predicate,
        object: SlotOrAny,
    },
    Reachable {
        target: Slot,
    },
    HandsFree,
    HoldsWithProperty {
        property: String,
    },
    SupportedBy {
        target: Slot,
        property: String,
        #[serde(default)]
        state: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effect {
    SetState {
        target: Slot,
        state: String,
    },
    ClearState {
        target: Slot,
        state: String,
    },
    AddRelation {
        subject: Slot,
        relation: Predicate,
        object: Slot,
    },
    RemoveRelations {
        subject: SlotOrAny,
        relation: Predicate,
        object: SlotOrAny,
    },
    MoveAgent {
        target: Slot,
        #[serde(default)]
        exclusive: bool,
    },
    When {
        conditions: Vec<Precondition>,
        then: Vec<Effect>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerbSpec {
    pub verb: String,
    pub arity: usize,
    #[serde(default)]
    pub preconditions: Vec<Precondition>,
    #[serde(default)]
    pub effects: Vec<Effect>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

/// Lookup table from verb to its semantics.
#[derive(Debug, Clone)]
pub struct VerbTable {
    verbs: BTreeMap<String, VerbSpec>,
}

impl Default for VerbTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl VerbTable {
    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_VERBS).expect("builtin verb table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, SemanticsError> {
        let specs: Vec<VerbSpec> = serde_json::from_str(text)?;
        Self::from_specs(specs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SemanticsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SemanticsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_specs(specs: Vec<VerbSpec>) -> Result<Self, SemanticsError> {
        let mut verbs = BTreeMap::new();
        for mut spec in specs {
            spec.verb = spec.verb.to_ascii_uppercase();
            validate_spec(&spec)?;
            let verb = spec.verb.clone();
            if verbs.insert(verb.clone(), spec).is_some() {
                return Err(SemanticsError::Invalid {
                    verb,
                    reason: "duplicate entry".into(),
                });
            }
        }
        Ok(Self { verbs })
    }

    pub fn get(&self, verb: &str) -> Option<&VerbSpec> {
        self.verbs.get(verb)
    }

    pub fn verbs(&self) -> impl Iterator<Item = &VerbSpec> {
        self.verbs.values()
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }
}

fn validate_spec(spec: &VerbSpec) -> Result<(), SemanticsError> {
    let invalid = |reason: String| SemanticsError::Invalid {
        verb: spec.verb.clone(),
        reason,
    };
    if spec.verb.is_empty()
        || !spec
            .verb
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b == b'_')
    {
        return Err(invalid("verb must match [A-Z_]+".into()));
    }
    if spec.arity > crate::script::MAX_ARGS {
        return Err(invalid(format!(
            "arity {} exceeds {}",
            spec.arity,
            crate::script::MAX_ARGS
        )));
    }
    let check = |slot: Slot| match slot.arg_index() {
        Some(i) if i >= spec.arity => Err(invalid(format!(
            "references arg{i} but arity is {}",
            spec.arity
        ))),
        _ => Ok(()),
    };
    let check_any = |s: SlotOrAny| s.slot().map_or(Ok(()), check);
    fn walk_pre(
        p: &Precondition,
        check: &dyn Fn(Slot) -> Result<(), SemanticsError>,
        check_any: &dyn Fn(SlotOrAny) -> Result<(), SemanticsError>,
    ) -> Result<(), SemanticsError> {
        match p {
            Precondition::HasProperty { target, .. }
            | Precondition::HasAnyProperty { target, .. }
            | Precondition::LacksProperty { target, .. }
            | Precondition::HasState { target, .. }
            | Precondition::LacksState { target, .. }
            | Precondition::Reachable { target }
            | Precondition::SupportedBy { target, .. } => check(*target),
            Precondition::Related {
                subject, object, ..
            }
            | Precondition::NotRelated {
                subject, object, ..
            } => {
                check_any(*subject)?;
                check_any(*object)
            }
            Precondition::HandsFree | Precondition::HoldsWithProperty { .. } => Ok(()),
        }
    }
    fn walk_eff(
        e: &Effect,
        check: &dyn Fn(Slot) -> Result<(), SemanticsError>,
        check_any: &dyn Fn(SlotOrAny) -> Result<(), SemanticsError>,
    ) -> Result<(), SemanticsError> {
        match e {
            Effect::SetState { target, .. }
            | Effect::ClearState { target, .. }
            | Effect::MoveAgent { target, .. } => check(*target),
            Effect::AddRelation {
                subject, object, ..
            } => {
                check(*subject)?;
                check(*object)
            }
            Effect::RemoveRelations {
                subject, object, ..
            } => {
                check_any(*subject)?;
                check_any(*object)
            }
            Effect::When { conditions, then } => {
                conditions
                    .iter()
                    .try_for_each(|c| walk_pre(c, check, check_any))?;
                then.iter().try_for_each(|t| walk_eff(t, check, check_any))
            }
        }
    }
    spec.preconditions
        .iter()
        .try_for_each(|p| walk_pre(p, &check, &check_any))?;
    spec.effects
        .iter()
        .try_for_each(|e| walk_eff(e, &check, &check_any))
}

/// Object ids bound to an action's slots.
#[derive(Debug, Clone, Copy)]
pub struct Binding<'a> {
    pub agent: ObjectId,
    pub args: &'a [ObjectId],
}

impl Binding<'_> {
    pub fn get(&self, slot: Slot) -> ObjectId {
        match slot.arg_index() {
            None => self.agent,
            Some(i) => self.args[i],
        }
    }

    fn get_any(&self, slot: SlotOrAny) -> Option<ObjectId> {
        slot.slot().map(|s| self.get(s))
    }
}

fn name_of(state: &SceneGraph, id: ObjectId) -> &str {
    state.node(id).map_or("?", |n| n.name.as_str())
}

fn edge_matches(
    state: &SceneGraph,
    b: &Binding<'_>,
    subject: SlotOrAny,
    relation: Predicate,
    object: SlotOrAny,
) -> bool {
    let s = b.get_any(subject);
    let o = b.get_any(object);
    match (s, o) {
        (Some(s), Some(o)) => state.has_edge(s, relation, o),
        (Some(s), None) => state.edges_from(s).any(|e| e.predicate == relation),
        (None, o) => state
            .edges
            .iter()
            .any(|e| e.predicate == relation && o.is_none_or(|o| e.object_id == o)),
    }
}

/// True if the agent can act on `id` in `state`.
pub fn is_reachable(state: &SceneGraph, id: ObjectId) -> bool {
    let agent = state.agent_id;
    if id == agent {
        return true;
    }
    let supports = state.supports(id);
    let enclosed = state
        .edges_from(id)
        .chain(supports.iter().flat_map(|&s| state.edges_from(s)))
        .any(|e| {
            e.predicate == Predicate::Inside
                && state
                    .node(e.object_id)
                    .is_some_and(|n| n.has_state(tags::CLOSED))
        });
    if enclosed {
        return false;
    }
    if state.has_edge(agent, Predicate::Holds, id) || state.has_edge(agent, Predicate::CloseTo, id)
    {
        return true;
    }
    // close to any support counts: near the stove reaches the food in the pan on it
    supports.iter().any(|&s| {
        state.has_edge(agent, Predicate::CloseTo, s)
            && state.node(s).is_some_and(|n| !n.has_property(tags::ROOM))
    })
}

impl Precondition {
    /// `Ok(())` if the condition holds, otherwise a reason.
    pub fn check(&self, state: &SceneGraph, b: &Binding<'_>) -> Result<(), String> {
        let node = |slot: Slot| &state.nodes[&b.get(slot)];
        let ok =
            |cond: bool, reason: &dyn Fn() -> String| if cond { Ok(()) } else { Err(reason()) };
        match self {
            Precondition::HasProperty { target, property } => {
                let n = node(*target);
                ok(n.has_property(property), &|| {
                    format!("{} lacks property {property}", n.name)
                })
            }
            Precondition::HasAnyProperty { target, properties } => {
                let n = node(*target);
                ok(properties.iter().any(|p| n.has_property(p)), &|| {
                    format!("{} has none of [{}]", n.name, properties.join(", "))
                })
            }
            Precondition::LacksProperty { target, property } => {
                let n = node(*target);
                ok(!n.has_property(property), &|| {
                    format!("{} has property {property}", n.name)
                })
            }
            Precondition::HasState { target, state: s } => {
                let n = node(*target);
                ok(n.has_state(s), &|| format!("{} is not {s}", n.name))
            }
            Precondition::LacksState { target, state: s } => {
                let n = node(*target);
                ok(!n.has_state(s), &|| format!("{} is already {s}", n.name))
            }
            Precondition::Related {
                subject,
                relation,
                object,
            } => ok(
                edge_matches(state, b, *subject, *relation, *object),
                &|| {
                    format!(
                        "missing {} {relation} {}",
                        describe_slot(state, b, *subject),
                        describe_slot(state, b, *object)
                    )
                },
            ),
            Precondition::NotRelated {
                subject,
                relation,
                object,
            } => ok(
                !edge_matches(state, b, *subject, *relation, *object),
                &|| {
                    format!(
                        "unexpected {} {relation} {}",
                        describe_slot(state, b, *subject),
                        describe_slot(state, b, *object)
                    )
                },
            ),
            Precondition::Reachable { target } => {
                let id = b.get(*target);
                ok(is_reachable(state, id), &|| {
                    format!("agent cannot reach {}", name_of(state, id))
                })
            }
            Precondition::HandsFree => ok(state.held_by_agent().count() < 2, &|| {
                "agent's hands are full".to_string()
            }),
            Precondition::HoldsWithProperty { property } => ok(
                state
                    .held_by_agent()
                    .any(|id| state.nodes[&id].has_property(property)),
                &|| format!("agent holds nothing with property {property}"),
            ),
            Precondition::SupportedBy {
                target,
                property,
                state: want,
            } => {
                let id = b.get(*target);
                let hit = state.supports(id).into_iter().any(|s| {
                    let n = &state.nodes[&s];
                    n.has_property(property) && want.as_ref().is_none_or(|w| n.has_state(w))
                });
                ok(hit, &|| match want {
                    Some(w) => format!("{} is not on a {property} that is {w}", name_of(state, id)),
                    None => format!("{} is not on a {property}", name_of(state, id)),
                })
            }
        }
    }
}

fn describe_slot(state: &SceneGraph, b: &Binding<'_>, slot: SlotOrAny) -> String {
    b.get_any(slot).map_or_else(
        || "anything".to_string(),
        |id| name_of(state, id).to_string(),
    )
}

impl Effect {
    /// Applies the effect to `next`; conditional effects are tested on `pre`.
    pub fn apply(&self, pre: &SceneGraph, next: &mut SceneGraph, b: &Binding<'_>) {
        match self {
            Effect::SetState { target, state } => {
                let n = next.nodes.get_mut(&b.get(*target)).expect("bound node");
                if let Some(other) = tags::counterpart(state) {
                    n.states.remove(other);
                }
                n.states.insert(state.clone());
            }
            Effect::ClearState { target, state } => {
                next.nodes
                    .get_mut(&b.get(*target))
                    .expect("bound node")
                    .states
                    .remove(state);
            }
            Effect::AddRelation {
                subject,
                relation,
                object,
            } => {
                let s = b.get(*subject);
                let o = b.get(*object);
                if s != o {
                    if *relation == Predicate::Inside {
                        next.edges
                            .retain(|e| !(e.subject_id == s && e.predicate == Predicate::Inside));
                    }
                    next.edges
                        .insert(super::scene::Relation::new(s, *relation, o));
                }
            }
            Effect::RemoveRelations {
                subject,
                relation,
                object,
            } => {
                let s = b.get_any(*subject);
                let o = b.get_any(*object);
                next.edges.retain(|e| {
                    !(e.predicate == *relation
                        && s.is_none_or(|s| e.subject_id == s)
                        && o.is_none_or(|o| e.object_id == o))
                });
            }
            Effect::MoveAgent { target, exclusive } => {
                let agent = b.agent;
                let t = b.get(*target);
                if *exclusive {
                    next.edges
                        .retain(|e| !(e.subject_id == agent && e.predicate == Predicate::CloseTo));
                }
                if t != agent {
                    next.edges
                        .insert(super::scene::Relation::new(agent, Predicate::CloseTo, t));
                }
            }
            Effect::When { conditions, then } => {
                if conditions.iter().all(|c| c.check(pre, b).is_ok()) {
                    for e in then {
                        e.apply(pre, next, b);
                    }
                }
            }
        }
    }
}
