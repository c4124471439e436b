use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::{ObjectId, SceneGraph};
use super::semantics::{Binding, VerbTable};
use crate::script::{AtomicAction, ObjectRef, PlanScript};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecError {
    #[error("unknown verb {verb}")]
    UnknownVerb { verb: String },
    #[error("no object matches {name}")]
    UnboundObject { name: String },
    #[error("{verb} takes {expected} argument(s), got {got}")]
    ArityMismatch {
        verb: String,
        expected: usize,
        got: usize,
    },
    #[error("precondition failed: {reason}")]
    PreconditionFailed { reason: String },
}

/// Binds an object reference to a node id.
///
/// A matching instance id wins; otherwise the lowest-id node whose name or
/// class equals the reference name is used.
pub fn resolve_ref(state: &SceneGraph, r: &ObjectRef) -> Result<ObjectId, ExecError> {
    if let Some(id) = r.instance_id {
        if state.node(id).is_some_and(|n| n.is_a(&r.name)) {
            return Ok(id);
        }
    }
    // nodes are keyed by id, so the first hit is the lowest id
    state
        .nodes
        .values()
        .find(|n| n.is_a(&r.name))
        .map(|n| n.id)
        .ok_or_else(|| ExecError::UnboundObject {
            name: r.name.clone(),
        })
}

/// Resolves every argument of `action`.
pub fn bind_args(state: &SceneGraph, action: &AtomicAction) -> Result<Vec<ObjectId>, ExecError> {
    action.args.iter().map(|r| resolve_ref(state, r)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    #[serde(with = "action_text")]
    pub action: AtomicAction,
    pub state: SceneGraph,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecFailure {
    /// 0-based index of the action that failed.
    pub index: usize,
    #[serde(with = "action_text")]
    pub action: AtomicAction,
    pub error: ExecError,
}

/// The states visited while running a plan.
///
/// When `executable` is false, `steps` holds exactly the actions that ran
/// before the failing one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub initial: SceneGraph,
    pub steps: Vec<Step>,
    pub executable: bool,
    pub failure: Option<ExecFailure>,
}

impl ExecutionTrace {
    /// The last state reached (the initial state for an empty trace).
    pub fn final_state(&self) -> &SceneGraph {
        self.steps.last().map_or(&self.initial, |s| &s.state)
    }

    /// State before step `i`.
    pub fn pre_state(&self, i: usize) -> &SceneGraph {
        if i == 0 {
            &self.initial
        } else {
            &self.steps[i - 1].state
        }
    }
}

/// Deterministic transition model over a verb table.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    verbs: VerbTable,
}

impl Simulator {
    pub fn new(verbs: VerbTable) -> Self {
        Self { verbs }
    }

    pub fn verbs(&self) -> &VerbTable {
        &self.verbs
    }

    /// Applies one action, returning the successor state. The input state is
    /// left untouched.
    pub fn execute(
        &self,
        state: &SceneGraph,
        action: &AtomicAction,
    ) -> Result<SceneGraph, ExecError> {
        let spec = self
            .verbs
            .get(&action.verb)
            .ok_or_else(|| ExecError::UnknownVerb {
                verb: action.verb.clone(),
            })?;
        if spec.arity != action.args.len() {
            return Err(ExecError::ArityMismatch {
                verb: action.verb.clone(),
                expected: spec.arity,
                got: action.args.len(),
            });
        }
        let args = bind_args(state, action)?;
        let binding = Binding {
            agent: state.agent_id,
            args: &args,
        };
        for pre in &spec.preconditions {
            pre.check(state, &binding)
                .map_err(|reason| ExecError::PreconditionFailed { reason })?;
        }
        let mut next = state.clone();
        for effect in &spec.effects {
            effect.apply(state, &mut next, &binding);
        }
        debug_assert!(
            next.validate().is_ok(),
            "{} broke a scene invariant",
            action
        );
        Ok(next)
    }

    /// Folds [`Simulator::execute`] over the plan, stopping at the first failure.
    pub fn run_plan(&self, initial: &SceneGraph, plan: &PlanScript) -> ExecutionTrace {
        let mut steps: Vec<Step> = Vec::with_capacity(plan.len());
        let mut failure = None;
        for (index, action) in plan.actions.iter().enumerate() {
            let current = steps.last().map_or(initial, |s| &s.state);
            match self.execute(current, action) {
                Ok(state) => steps.push(Step {
                    action: action.clone(),
                    state,
                }),
                Err(error) => {
                    failure = Some(ExecFailure {
                        index,
                        action: action.clone(),
                        error,
                    });
                    break;
                }
            }
        }
        ExecutionTrace {
            initial: initial.clone(),
            steps,
            executable: failure.is_none(),
            failure,
        }
    }
}

mod action_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::script::AtomicAction;

    pub fn serialize<S: Serializer>(a: &AtomicAction, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(a)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AtomicAction, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
