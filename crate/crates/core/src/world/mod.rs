//! Scene-graph world model and the deterministic plan executor.

mod exec;
mod scene;
pub mod semantics;

pub use exec::{bind_args, resolve_ref, ExecError, ExecFailure, ExecutionTrace, Simulator, Step};
pub use scene::{tags, ObjectId, Predicate, Relation, SceneError, SceneGraph, SceneObject};
pub use semantics::{SemanticsError, VerbSpec, VerbTable};
