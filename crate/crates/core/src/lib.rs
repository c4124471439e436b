//! Plan verification and safety alignment for embodied task planning.

pub mod align;
pub mod config;
pub mod datagen;
pub mod fixtures;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod safety;
pub mod script;
pub mod synth;
pub mod world;

pub use config::{RunConfig, RunHeader};
pub use safety::{is_safe, SafetyRuleSet, SafetyVerdict, Violation, ViolationKind};
pub use script::{
    common_prefix_len, parse_script, print_script, AtomicAction, ObjectRef, ParseError, PlanScript,
};
pub use world::{ExecError, ExecutionTrace, SceneGraph, Simulator};
