//! The atomic-action script language.
//!
//! A script is one action per line:
//!
//! ```text
//! # comment
//! [WALK] <kitchen>
//! [PUTON] <condiments> <cooktop>
//! [FIND] <stove> (12)
//! ```
//!
//! Verbs are normalized to upper case and object names to lower case, so
//! `[puton] <Condiments> <cooktop>` and `[PUTON] <condiments> <cooktop>` are
//! the same action.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum number of object slots an action can take.
pub const MAX_ARGS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {reason}")]
pub struct ParseError {
    /// 1-based line number.
    pub line: usize,
    /// 1-based column (in characters).
    pub column: usize,
    pub reason: String,
}

/// A reference to a scene object, optionally pinned to an instance id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectRef {
    pub name: String,
    pub instance_id: Option<u32>,
}

impl ObjectRef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into().to_ascii_lowercase(),
            instance_id: None,
        }
    }

    pub fn with_id(name: impl Into<String>, id: u32) -> Self {
        Self {
            name: name.into().to_ascii_lowercase(),
            instance_id: Some(id),
        }
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.name)?;
        if let Some(id) = self.instance_id {
            write!(f, " ({id})")?;
        }
        Ok(())
    }
}

/// A single verb-object command.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomicAction {
    pub verb: String,
    pub args: Vec<ObjectRef>,
}

impl AtomicAction {
    /// Builds an action, normalizing case. Panics if the arity exceeds
    /// [`MAX_ARGS`] or the verb is not a valid identifier; use
    /// [`parse_script`] for untrusted input.
    pub fn new(verb: &str, args: Vec<ObjectRef>) -> Self {
        let verb = verb.to_ascii_uppercase();
        assert!(is_verb(&verb), "invalid verb {verb:?}");
        assert!(args.len() <= MAX_ARGS, "too many arguments for {verb}");
        Self { verb, args }
    }

    /// Shorthand for tests and fixtures: `AtomicAction::of("PUTON", &["food", "stove"])`.
    pub fn of(verb: &str, names: &[&str]) -> Self {
        Self::new(verb, names.iter().map(|n| ObjectRef::new(*n)).collect())
    }

    /// The printed tokens of this action: `[VERB]`, `<name>`, `(id)`.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(1 + 2 * self.args.len());
        out.push(format!("[{}]", self.verb));
        for arg in &self.args {
            out.push(format!("<{}>", arg.name));
            if let Some(id) = arg.instance_id {
                out.push(format!("({id})"));
            }
        }
        out
    }
}

impl fmt::Display for AtomicAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.verb)?;
        for arg in &self.args {
            write!(f, " {arg}")?;
        }
        Ok(())
    }
}

impl FromStr for AtomicAction {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_line(s, 1)? {
            Some(action) => Ok(action),
            None => Err(ParseError {
                line: 1,
                column: 1,
                reason: "empty action".into(),
            }),
        }
    }
}

/// An ordered plan of atomic actions.
///
/// Equality compares the actions only; `source_text` is kept for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct PlanScript {
    pub actions: Vec<AtomicAction>,
    pub source_text: String,
}

impl PartialEq for PlanScript {
    fn eq(&self, other: &Self) -> bool {
        self.actions == other.actions
    }
}

impl Eq for PlanScript {}

impl PlanScript {
    pub fn from_actions(actions: Vec<AtomicAction>) -> Self {
        let mut script = Self {
            actions,
            source_text: String::new(),
        };
        script.source_text = print_script(&script);
        script
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Flattened printed tokens of every action.
    pub fn tokens(&self) -> Vec<String> {
        self.actions.iter().flat_map(AtomicAction::tokens).collect()
    }
}

impl fmt::Display for PlanScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_script(self))
    }
}

impl FromStr for PlanScript {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_script(s)
    }
}

impl Serialize for PlanScript {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&print_script(self))
    }
}

impl<'de> Deserialize<'de> for PlanScript {
    /// Accepts either the script text or an array of action lines.
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Lines(Vec<String>),
        }
        let text = match Repr::deserialize(deserializer)? {
            Repr::Text(t) => t,
            Repr::Lines(lines) => lines.join("\n"),
        };
        parse_script(&text).map_err(serde::de::Error::custom)
    }
}

fn is_verb(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b == b'_')
}

/// Parses a script. Blank lines and lines starting with `#` are skipped.
pub fn parse_script(text: &str) -> Result<PlanScript, ParseError> {
    let mut actions = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if let Some(action) = parse_line(line, idx + 1)? {
            actions.push(action);
        }
    }
    Ok(PlanScript {
        actions,
        source_text: text.to_string(),
    })
}

/// Canonical one-action-per-line form, without a trailing newline.
pub fn print_script(script: &PlanScript) -> String {
    let mut out = String::new();
    for (i, action) in script.actions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&action.to_string());
    }
    out
}

/// Length of the longest shared leading run of actions.
pub fn common_prefix_len(a: &PlanScript, b: &PlanScript) -> usize {
    a.actions
        .iter()
        .zip(&b.actions)
        .take_while(|(x, y)| x == y)
        .count()
}

struct Cursor {
    chars: Vec<(usize, char)>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn new(src: &str, line: usize) -> Self {
        Self {
            chars: src.chars().enumerate().collect(),
            pos: 0,
            line,
        }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn column(&self) -> usize {
        self.chars
            .get(self.pos)
            .map_or(self.chars.len(), |&(i, _)| i)
            + 1
    }

    fn error(&self, reason: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column: self.column(),
            reason: reason.into(),
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected '{want}', found '{c}'"))),
            None => Err(self.error(format!("expected '{want}', found end of line"))),
        }
    }

    /// Reads characters up to (not including) `close`, trimming surrounding
    /// whitespace.
    fn delimited(&mut self, open: char, close: char) -> Result<(String, usize), ParseError> {
        self.expect(open)?;
        self.skip_ws();
        let start_col = self.column();
        let mut body = String::new();
        loop {
            match self.peek() {
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok((body.trim_end().to_string(), start_col));
                }
                Some(c) if matches!(c, '[' | ']' | '<' | '>' | '(' | ')') => {
                    return Err(self.error(format!("unexpected '{c}' inside '{open}{close}'")));
                }
                Some(c) => {
                    body.push(c);
                    self.pos += 1;
                }
                None => return Err(self.error(format!("unclosed '{open}'"))),
            }
        }
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<AtomicAction>, ParseError> {
    let trimmed = line.trim_start();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut cur = Cursor::new(line, line_no);
    cur.skip_ws();

    let (verb_raw, verb_col) = cur.delimited('[', ']')?;
    if verb_raw.is_empty() {
        return Err(ParseError {
            line: line_no,
            column: verb_col,
            reason: "empty verb".into(),
        });
    }
    let verb = verb_raw.to_ascii_uppercase();
    if !is_verb(&verb) {
        return Err(ParseError {
            line: line_no,
            column: verb_col,
            reason: format!("invalid verb {verb_raw:?}; expected letters and underscores"),
        });
    }

    let mut args = Vec::new();
    loop {
        cur.skip_ws();
        match cur.peek() {
            None => break,
            Some('<') => {
                if args.len() == MAX_ARGS {
                    return Err(cur.error(format!("more than {MAX_ARGS} arguments")));
                }
                let (name_raw, name_col) = cur.delimited('<', '>')?;
                let name = name_raw.to_ascii_lowercase();
                if name.is_empty()
                    || !name
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
                {
                    return Err(ParseError {
                        line: line_no,
                        column: name_col,
                        reason: format!("invalid object name {name_raw:?}"),
                    });
                }
                cur.skip_ws();
                let instance_id = if cur.peek() == Some('(') {
                    let (id_raw, id_col) = cur.delimited('(', ')')?;
                    let id = id_raw.parse::<u32>().map_err(|_| ParseError {
                        line: line_no,
                        column: id_col,
                        reason: format!("invalid instance id {id_raw:?}"),
                    })?;
                    Some(id)
                } else {
                    None
                };
                args.push(ObjectRef { name, instance_id });
            }
            Some(c) => return Err(cur.error(format!("unexpected '{c}'; expected '<'"))),
        }
    }
    Ok(Some(AtomicAction { verb, args }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_arg() {
        let s = parse_script("[GRAB] <food>").unwrap();
        assert_eq!(
            s.actions,
            vec![AtomicAction {
                verb: "GRAB".into(),
                args: vec![ObjectRef::new("food")]
            }]
        );
    }

    #[test]
    fn normalizes_case() {
        let s = parse_script("[puton] <Condiments> <cooktop>").unwrap();
        assert_eq!(
            s.actions[0],
            AtomicAction::of("PUTON", &["condiments", "cooktop"])
        );
    }

    #[test]
    fn empty_input_is_empty_plan() {
        assert!(parse_script("").unwrap().is_empty());
        assert!(parse_script("\n  \n# just a comment\n").unwrap().is_empty());
    }

    #[test]
    fn parses_instance_id() {
        let s = parse_script("[FIND] <stove> (12)").unwrap();
        assert_eq!(s.actions[0].args, vec![ObjectRef::with_id("stove", 12)]);
    }

    #[test]
    fn whitespace_between_tokens_is_ignored() {
        let a = parse_script("  [ GRAB ]<food>(3)   ").unwrap();
        let b = parse_script("[GRAB] <food> (3)").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_arg_verbs_are_allowed() {
        let s = parse_script("[STANDUP]").unwrap();
        assert!(s.actions[0].args.is_empty());
    }

    #[test]
    fn errors_report_first_offending_line() {
        let err = parse_script("[WALK] <kitchen>\n[GRAB] <a> <b> <c>\n[OPEN <x>").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.column, 16);
        assert!(err.reason.contains("more than 2"));
    }

    #[test]
    fn rejects_malformed_structure() {
        for (text, col) in [
            ("[] <food>", 2),
            ("[GRAB <food>", 7),
            ("[GRAB] <food", 13),
            ("[GRAB] food", 8),
            ("[GRAB] <fo od>", 9),
            ("[GRAB] <food> (x)", 16),
            ("[GR4B] <food>", 2),
            ("<food>", 1),
        ] {
            let err = parse_script(text).unwrap_err();
            assert_eq!(err.line, 1, "{text}");
            assert_eq!(err.column, col, "{text}: {err}");
        }
    }

    #[test]
    fn prints_canonical_form() {
        assert_eq!(
            print_script(&PlanScript::from_actions(vec![AtomicAction::of(
                "GRAB",
                &["food"]
            )])),
            "[GRAB] <food>"
        );
        assert_eq!(print_script(&PlanScript::default()), "");
        let find = AtomicAction::new("FIND", vec![ObjectRef::with_id("stove", 12)]);
        assert_eq!(
            print_script(&PlanScript::from_actions(vec![find])),
            "[FIND] <stove> (12)"
        );
    }

    #[test]
    fn prefix_examples() {
        let p = |v: &[&str]| {
            PlanScript::from_actions(v.iter().map(|x| AtomicAction::of(x, &[])).collect())
        };
        assert_eq!(
            common_prefix_len(&p(&["A", "B", "C"]), &p(&["A", "B", "D"])),
            2
        );
        let s = p(&["A", "B", "C"]);
        assert_eq!(common_prefix_len(&s, &s), 3);
        assert_eq!(common_prefix_len(&p(&["A"]), &p(&["B"])), 0);
    }

    #[test]
    fn prefix_compares_instance_ids() {
        let a = parse_script("[FIND] <stove> (1)").unwrap();
        let b = parse_script("[FIND] <stove> (2)").unwrap();
        assert_eq!(common_prefix_len(&a, &b), 0);
    }

    #[test]
    fn serde_accepts_text_or_lines() {
        let a: PlanScript = serde_json::from_str(r#""[WALK] <kitchen>\n[FIND] <stove>""#).unwrap();
        let b: PlanScript =
            serde_json::from_str(r#"["[WALK] <kitchen>", "[find] <stove>"]"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#""[WALK] <kitchen>\n[FIND] <stove>""#
        );
    }

    pub(crate) fn arb_action() -> impl Strategy<Value = AtomicAction> {
        let obj = ("[a-z0-9_]{1,8}", proptest::option::of(0u32..50))
            .prop_map(|(name, instance_id)| ObjectRef { name, instance_id });
        ("[A-Z_]{1,8}", proptest::collection::vec(obj, 0..=2))
            .prop_map(|(verb, args)| AtomicAction { verb, args })
    }

    pub(crate) fn arb_script() -> impl Strategy<Value = PlanScript> {
        proptest::collection::vec(arb_action(), 0..10).prop_map(PlanScript::from_actions)
    }

    proptest! {
        #[test]
        fn round_trip(script in arb_script()) {
            let printed = print_script(&script);
            prop_assert_eq!(parse_script(&printed).unwrap(), script);
        }

        #[test]
        fn prefix_is_symmetric_and_bounded(a in arb_script(), b in arb_script()) {
            let k = common_prefix_len(&a, &b);
            prop_assert_eq!(k, common_prefix_len(&b, &a));
            prop_assert!(k <= a.len().min(b.len()));
            let is_prefix = a.actions.starts_with(&b.actions) || b.actions.starts_with(&a.actions);
            prop_assert_eq!(k == a.len().min(b.len()), is_prefix);
        }

        #[test]
        fn shared_head_is_detected(head in arb_script(), a in arb_script(), b in arb_script()) {
            let mut x = head.actions.clone();
            x.extend(a.actions.clone());
            let mut y = head.actions.clone();
            y.extend(b.actions.clone());
            let k = common_prefix_len(&PlanScript::from_actions(x), &PlanScript::from_actions(y));
            prop_assert!(k >= head.len());
        }
    }
}
