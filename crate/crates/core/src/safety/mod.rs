//! Rule-based hazard detection over execution traces.
//!
//! A plan is safe when no process rule fires on any executed step and no
//! termination rule fires on the state it ends in. Rules are data: see
//! `assets/ruleset.json` for the bundled set and the condition vocabulary.

mod eval;
mod rules;

pub use eval::{
    check_process, check_termination, classify_hazards, is_safe, SafetyVerdict, Violation,
    ViolationKind, NOT_EXECUTABLE_RULE,
};
pub use rules::{
    Condition, HazardCategory, NodeRef, ObjectPattern, ProcessRule, RulesetError, SafetyRuleSet,
    TerminationRule, BUILTIN_RULESET, CATEGORY_COUNT,
};
