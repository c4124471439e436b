//! Ruleset types and loading.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::semantics::Slot;
use crate::world::{Predicate, SceneObject};

pub const BUILTIN_RULESET: &str = include_str!("../../assets/ruleset.json");

/// Number of hazard categories a ruleset must declare.
pub const CATEGORY_COUNT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct RulesetError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for RulesetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "ruleset line {line}: {}", self.message),
            None => write!(f, "ruleset: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardCategory {
    pub code: String,
    pub label: String,
}

/// Describes a set of scene objects. Every listed constraint must hold; an
/// empty pattern matches any object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPattern {
    /// Name or class must be one of these.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    /// Must have all of these properties.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub properties: Vec<String>,
    /// Must have at least one of these properties.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub any_properties: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub without_properties: Vec<String>,
    /// Must be in all of these states.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub without_states: Vec<String>,
}

impl ObjectPattern {
    pub fn matches(&self, n: &SceneObject) -> bool {
        (self.classes.is_empty() || self.classes.iter().any(|c| n.is_a(c)))
            && self.properties.iter().all(|p| n.has_property(p))
            && (self.any_properties.is_empty()
                || self.any_properties.iter().any(|p| n.has_property(p)))
            && !self.without_properties.iter().any(|p| n.has_property(p))
            && self.states.iter().all(|s| n.has_state(s))
            && !self.without_states.iter().any(|s| n.has_state(s))
    }

    fn normalize(&mut self) {
        for c in &mut self.classes {
            *c = c.to_ascii_lowercase();
        }
        for list in [
            &mut self.properties,
            &mut self.any_properties,
            &mut self.without_properties,
            &mut self.states,
            &mut self.without_states,
        ] {
            for t in list.iter_mut() {
                *t = t.to_ascii_uppercase();
            }
        }
    }
}

/// Either an action slot (`"agent"`, `"arg0"`, `"arg1"`) or a pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Slot(Slot),
    Pattern(ObjectPattern),
}

/// Declarative predicate over a scene (and, in process rules, the bound
/// action arguments).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "pred", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    /// The object in `target` matches `pattern`.
    Match {
        target: Slot,
        pattern: ObjectPattern,
    },
    /// Some object matches.
    Exists { pattern: ObjectPattern },
    /// No object matches.
    NotExists { pattern: ObjectPattern },
    /// Some edge `subject relation object` exists.
    Related {
        subject: NodeRef,
        relation: Predicate,
        object: NodeRef,
    },
    /// No such edge exists.
    NotRelated {
        subject: NodeRef,
        relation: Predicate,
        object: NodeRef,
    },
    /// Some single object is the target of at least `min` such edges.
    CountRelated {
        subject: NodeRef,
        relation: Predicate,
        object: NodeRef,
        min: usize,
    },
    /// At least one of the nested conditions holds.
    Any { conditions: Vec<Condition> },
}

impl Condition {
    fn visit_refs(&self, f: &mut dyn FnMut(&NodeRef)) {
        match self {
            Condition::Match { target, .. } => f(&NodeRef::Slot(*target)),
            Condition::Exists { .. } | Condition::NotExists { .. } => {}
            Condition::Related {
                subject, object, ..
            }
            | Condition::NotRelated {
                subject, object, ..
            }
            | Condition::CountRelated {
                subject, object, ..
            } => {
                f(subject);
                f(object);
            }
            Condition::Any { conditions } => conditions.iter().for_each(|c| c.visit_refs(f)),
        }
    }

    fn visit_patterns(&mut self, f: &mut dyn FnMut(&mut ObjectPattern)) {
        let mut node = |n: &mut NodeRef| {
            if let NodeRef::Pattern(p) = n {
                f(p)
            }
        };
        match self {
            Condition::Match { pattern, .. }
            | Condition::Exists { pattern }
            | Condition::NotExists { pattern } => f(pattern),
            Condition::Related {
                subject, object, ..
            }
            | Condition::NotRelated {
                subject, object, ..
            }
            | Condition::CountRelated {
                subject, object, ..
            } => {
                node(subject);
                node(object);
            }
            Condition::Any { conditions } => {
                conditions.iter_mut().for_each(|c| c.visit_patterns(f))
            }
        }
    }
}

/// Flags an action given the state it is taken in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessRule {
    pub id: String,
    /// Verbs the rule applies to.
    pub verbs: Vec<String>,
    /// Per-argument patterns; `null` leaves a slot unconstrained.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<Option<ObjectPattern>>,
    /// Extra conditions on the pre-state.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guard: Vec<Condition>,
    pub hazard: String,
    pub message: String,
}

/// Flags a terminal state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationRule {
    pub id: String,
    pub when: Vec<Condition>,
    pub hazard: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSetFile {
    #[serde(default)]
    name: String,
    categories: Vec<HazardCategory>,
    #[serde(default)]
    process_rules: Vec<ProcessRule>,
    #[serde(default)]
    termination_rules: Vec<TerminationRule>,
}

/// A validated, immutable set of hazard rules.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyRuleSet {
    name: String,
    categories: Vec<HazardCategory>,
    process: Vec<ProcessRule>,
    termination: Vec<TerminationRule>,
}

impl Default for SafetyRuleSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SafetyRuleSet {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_RULESET).expect("builtin ruleset is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, RulesetError> {
        let file: RuleSetFile = serde_json::from_str(text).map_err(|e| RulesetError {
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        Self::new(
            file.name,
            file.categories,
            file.process_rules,
            file.termination_rules,
        )
        .map_err(|mut err| {
            if err.line.is_none() {
                err.line = locate(text, &err.message);
            }
            err
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RulesetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RulesetError {
            line: None,
            message: format!("reading {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn new(
        name: String,
        categories: Vec<HazardCategory>,
        mut process: Vec<ProcessRule>,
        mut termination: Vec<TerminationRule>,
    ) -> Result<Self, RulesetError> {
        let err = |message: String| RulesetError {
            line: None,
            message,
        };
        if categories.len() != CATEGORY_COUNT {
            return Err(err(format!(
                "expected exactly {CATEGORY_COUNT} categories, found {}",
                categories.len()
            )));
        }
        let mut codes = BTreeSet::new();
        for c in &categories {
            if c.code.is_empty()
                || !c
                    .code
                    .bytes()
                    .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
            {
                return Err(err(format!(
                    "category code \"{}\" must match [A-Z0-9_]+",
                    c.code
                )));
            }
            if !codes.insert(c.code.as_str()) {
                return Err(err(format!("duplicate category \"{}\"", c.code)));
            }
        }
        let mut ids = BTreeSet::new();
        for r in &mut process {
            check_id(&r.id, &mut ids)?;
            check_hazard(&r.id, &r.hazard, &codes)?;
            if r.verbs.is_empty() {
                return Err(err(format!("rule \"{}\" lists no verbs", r.id)));
            }
            for v in &mut r.verbs {
                *v = v.to_ascii_uppercase();
            }
            if r.args.len() > crate::script::MAX_ARGS {
                return Err(err(format!(
                    "rule \"{}\" constrains more than {} arguments",
                    r.id,
                    crate::script::MAX_ARGS
                )));
            }
            r.args
                .iter_mut()
                .flatten()
                .for_each(ObjectPattern::normalize);
            for c in &mut r.guard {
                check_condition(&r.id, c, true)?;
                c.visit_patterns(&mut ObjectPattern::normalize);
            }
        }
        for r in &mut termination {
            check_id(&r.id, &mut ids)?;
            check_hazard(&r.id, &r.hazard, &codes)?;
            if r.when.is_empty() {
                return Err(err(format!("rule \"{}\" has no conditions", r.id)));
            }
            for c in &mut r.when {
                check_condition(&r.id, c, false)?;
                c.visit_patterns(&mut ObjectPattern::normalize);
            }
        }
        process.sort_by(|a, b| a.id.cmp(&b.id));
        termination.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            name,
            categories,
            process,
            termination,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn categories(&self) -> &[HazardCategory] {
        &self.categories
    }

    /// Process rules, sorted by id.
    pub fn process_rules(&self) -> &[ProcessRule] {
        &self.process
    }

    /// Termination rules, sorted by id.
    pub fn termination_rules(&self) -> &[TerminationRule] {
        &self.termination
    }

    pub fn len(&self) -> usize {
        self.process.len() + self.termination.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A copy keeping only the rules whose id satisfies `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        Self {
            name: self.name.clone(),
            categories: self.categories.clone(),
            process: self
                .process
                .iter()
                .filter(|r| keep(&r.id))
                .cloned()
                .collect(),
            termination: self
                .termination
                .iter()
                .filter(|r| keep(&r.id))
                .cloned()
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = RuleSetFile {
            name: self.name.clone(),
            categories: self.categories.clone(),
            process_rules: self.process.clone(),
            termination_rules: self.termination.clone(),
        };
        serde_json::to_string_pretty(&file).expect("ruleset serializes")
    }
}

fn check_id<'a>(id: &'a str, ids: &mut BTreeSet<&'a str>) -> Result<(), RulesetError> {
    if id.is_empty() {
        return Err(RulesetError {
            line: None,
            message: "rule with empty id".into(),
        });
    }
    if !ids.insert(id) {
        return Err(RulesetError {
            line: None,
            message: format!("duplicate rule id \"{id}\""),
        });
    }
    Ok(())
}

fn check_hazard(id: &str, hazard: &str, codes: &BTreeSet<&str>) -> Result<(), RulesetError> {
    if codes.contains(hazard) {
        Ok(())
    } else {
        Err(RulesetError {
            line: None,
            message: format!("rule \"{id}\" uses unknown hazard \"{hazard}\""),
        })
    }
}

fn check_condition(id: &str, c: &Condition, process: bool) -> Result<(), RulesetError> {
    let mut bad = None;
    c.visit_refs(&mut |r| {
        if let NodeRef::Slot(s @ (Slot::Arg0 | Slot::Arg1)) = r {
            if !process {
                bad = Some(format!(
                    "rule \"{id}\": termination conditions cannot reference {s:?}"
                ));
            }
        }
    });
    let mut check_any = |c: &Condition| match c {
        Condition::Any { conditions } if conditions.is_empty() => {
            bad.get_or_insert(format!("rule \"{id}\": empty any"));
        }
        Condition::CountRelated { min: 0, .. } => {
            bad.get_or_insert(format!("rule \"{id}\": count_related needs min >= 1"));
        }
        _ => {}
    };
    fn walk(c: &Condition, f: &mut dyn FnMut(&Condition)) {
        f(c);
        if let Condition::Any { conditions } = c {
            conditions.iter().for_each(|x| walk(x, f));
        }
    }
    walk(c, &mut check_any);
    match bad {
        Some(message) => Err(RulesetError {
            line: None,
            message,
        }),
        None => Ok(()),
    }
}

/// Best-effort line of the first quoted token in `message` within `text`.
fn locate(text: &str, message: &str) -> Option<usize> {
    let start = message.find('"')?;
    let end = start + 1 + message[start + 1..].find('"')?;
    let needle = &message[start..=end];
    let offset = text.find(needle)?;
    Some(text[..offset].lines().count().max(1) + usize::from(text[..offset].ends_with('\n')))
}
