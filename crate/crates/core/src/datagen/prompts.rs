//! Prompt templates: system prompt, safety prompt, examples, question.
//!
//! Each template is a text file in the prompts directory. `{name}`
//! placeholders are substituted at render time; other braces are left alone.

use std::path::Path;

use super::DatagenError;

macro_rules! templates {
    ($($field:ident),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct PromptTemplates {
            $(pub $field: String,)*
        }

        impl PromptTemplates {
            pub fn builtin() -> Self {
                Self {
                    $($field: include_str!(concat!("../../assets/prompts/", stringify!($field), ".txt")).to_string(),)*
                }
            }

            /// Reads `<name>.txt` files from `dir`. Missing files keep the
            /// bundled text.
            pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatagenError> {
                let dir = dir.as_ref();
                if !dir.is_dir() {
                    return Err(DatagenError::Io(format!("prompts directory {} not found", dir.display())));
                }
                let mut t = Self::builtin();
                $(
                    let path = dir.join(concat!(stringify!($field), ".txt"));
                    if path.exists() {
                        t.$field = std::fs::read_to_string(&path)
                            .map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
                    }
                )*
                Ok(t)
            }
        }
    };
}

templates!(
    task_system,
    task_question,
    task_feedback,
    pair_system,
    pair_safety,
    pair_examples,
    pair_question,
    pair_feedback,
    planner_system,
    planner_safety,
);

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Replaces each `{key}` with its value.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
