//! Success semantics, text overlap and corpus-level rates.

mod report;
mod rouge;
mod success;

use thiserror::Error;

pub use report::{aggregate, bar_chart_svg, EvalReport, SampleResult};
pub use rouge::{lcs_len, rouge_l, rouge_l_scripts, rouge_l_text, script_tokens, text_tokens};
pub use success::{eval_success, make_success_spec, SuccessSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("ground-truth plan fails at action {index}: {reason}")]
    GroundTruthNotExecutable { index: usize, reason: String },
    #[error("trace and success spec start from different scenes")]
    SpecMismatch,
    #[error("cannot aggregate an empty corpus")]
    EmptyCorpus,
}
