use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "safeplan",
    version,
    about = "Verify, score and align household task plans"
)]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for corpus commands.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Verb semantics table (JSON) replacing the bundled one.
    #[arg(long, global = true)]
    pub semantics: Option<PathBuf>,
    /// Hazard ruleset (JSON) replacing the bundled one.
    #[arg(long, global = true)]
    pub ruleset: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a plan against the hazard rules. Exit 0 safe, 1 unsafe.
    Verify(PlanArgs),
    /// Run a plan and print the trace. Exit 0 executable, 1 not.
    Simulate {
        #[command(flatten)]
        plan: PlanArgs,
        /// Include every intermediate state.
        #[arg(long)]
        full: bool,
    },
    /// Score a corpus of candidate plans.
    Evaluate(EvaluateArgs),
    /// Per-sample and mean losses of a preference batch.
    Loss(LossArgs),
    /// Compare analytic gradients with finite differences. Exit 0 pass, 1 fail.
    Gradcheck(GradcheckArgs),
    /// Generate tasks or preference pairs with an LLM.
    #[command(subcommand)]
    Generate(GenerateCommand),
    /// Rebuild aggregate reports from per-sample results.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Plan script file, one `[VERB] <object>` per line.
    #[arg(long)]
    pub plan: PathBuf,
    /// Scene JSON file or bundled name (kitchen, bathroom, living_room).
    #[arg(long)]
    pub scene: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSONL of {id, scene, gt_plan, candidate_plan}.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG histograms.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// γ as a fraction of β.
    #[arg(long)]
    pub gamma_beta_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub batch: PathBuf,
    #[command(flatten)]
    pub align: AlignArgs,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Check log-probability gradients of this batch instead of toy policies.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Number of seeded toy policies.
    #[arg(long, default_value_t = 20)]
    pub policies: u64,
    #[arg(long, default_value_t = 6)]
    pub vocab: usize,
    #[arg(long, default_value_t = 4)]
    pub pairs: usize,
    #[arg(long, default_value_t = 6)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[command(flatten)]
    pub align: AlignArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Live,
    Replay,
    Record,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    /// Request/response cassette.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Directory of prompt templates overriding the bundled ones.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GenerateCommand {
    /// Multi-round, multi-role task and environment generation.
    Tasks {
        /// JSONL of {id, task_text, scene, hazard_tags}.
        #[arg(long)]
        seeds: PathBuf,
        /// JSON array of {name, persona_prompt, focus_categories}.
        #[arg(long)]
        roles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        /// Rouge-L dedup threshold.
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Unsafe counterparts for safe plans.
    Pairs {
        /// JSONL of {id, task, scene, y_w}.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total generation attempts per pair.
        #[arg(long)]
        attempts: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[command(flatten)]
        llm: LlmArgs,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// samples.jsonl written by `evaluate`.
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plots: bool,
}
