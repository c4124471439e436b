//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use safeplan_core::align::{
    grad_check, logprob_grad_check, random_problem, read_batch, AlignConfig, LossVariant,
    PreferenceSample,
};
use safeplan_core::config::{RunConfig, RunHeader};
use safeplan_core::datagen::{
    build_pairs, export_dataset, generate_tasks, load_seeds, AgentRole, LlmClient, PairGenConfig,
    PairSeed, PromptTemplates, TaskGenConfig,
};
use safeplan_core::harness::{read_corpus, Evaluator, SceneCache, SceneSource};
use safeplan_core::io::{read_jsonl, write_jsonl};
use safeplan_core::metrics::{aggregate, bar_chart_svg, EvalReport, SampleResult};
use safeplan_core::safety::classify_hazards;
use safeplan_core::world::VerbTable;
use safeplan_core::{is_safe, parse_script, SafetyRuleSet, SafetyVerdict, SceneGraph, Simulator};
use serde_json::{json, Value};

use crate::args::{
    AlignArgs, Command, EvaluateArgs, GenerateCommand, GradcheckArgs, LlmArgs, LossArgs, ReportArgs,
};
use crate::{EXIT_NEGATIVE, EXIT_OK};

/// A resolved configuration with its simulator and ruleset loaded.
#[derive(Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub sim: Simulator,
    pub rules: SafetyRuleSet,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let verbs = match &cfg.paths.semantics {
            Some(p) => VerbTable::load(p).with_context(|| format!("semantics {}", p.display()))?,
            None => VerbTable::builtin(),
        };
        let rules = match &cfg.paths.ruleset {
            Some(p) => {
                SafetyRuleSet::load(p).with_context(|| format!("ruleset {}", p.display()))?
            }
            None => SafetyRuleSet::builtin(),
        };
        Ok(Self {
            cfg,
            sim: Simulator::new(verbs),
            rules,
        })
    }

    pub fn header(&self) -> RunHeader {
        self.cfg.header()
    }

    fn scene(&self, arg: Option<&str>) -> Result<SceneGraph> {
        let name = match (arg, &self.cfg.paths.scene) {
            (Some(s), _) => s.to_string(),
            (None, Some(p)) => p.display().to_string(),
            (None, None) => "kitchen".to_string(),
        };
        let scene = SceneCache::default()
            .resolve(&SceneSource::Named(name.clone()))
            .map_err(|e| anyhow!("scene {name}: {e}"))?;
        Ok((*scene).clone())
    }

    fn categories(&self) -> Vec<String> {
        self.rules
            .categories()
            .iter()
            .map(|c| c.code.clone())
            .collect()
    }

    fn templates(&self, dir: Option<&Path>) -> Result<PromptTemplates> {
        match dir.or(self.cfg.paths.prompts_dir.as_deref()) {
            Some(d) => PromptTemplates::load(d).with_context(|| format!("prompts {}", d.display())),
            None => Ok(PromptTemplates::builtin()),
        }
    }
}

/// Runs one subcommand and returns its exit code.
pub fn run(command: Command, mut cfg: RunConfig) -> Result<u8> {
    apply_overrides(&command, &mut cfg);
    let ctx = Context::new(cfg)?;
    match command {
        Command::Verify(p) => {
            let (verdict, out) = cmd_verify(&ctx, &p.plan, p.scene.as_deref())?;
            print_json(&out);
            Ok(if verdict.safe { EXIT_OK } else { EXIT_NEGATIVE })
        }
        Command::Simulate { plan, full } => {
            let out = cmd_simulate(&ctx, &plan.plan, plan.scene.as_deref(), full)?;
            print_json(&out);
            Ok(if out["executable"] == json!(true) {
                EXIT_OK
            } else {
                EXIT_NEGATIVE
            })
        }
        Command::Evaluate(EvaluateArgs { plots, .. }) => {
            let corpus = ctx
                .cfg
                .paths
                .corpus
                .clone()
                .ok_or_else(|| anyhow!("no corpus given"))?;
            let out = ctx
                .cfg
                .paths
                .output_dir
                .clone()
                .ok_or_else(|| anyhow!("no output directory given"))?;
            let report = cmd_evaluate(&ctx, &corpus, &out, plots)?;
            print_json(&json!({ "header": ctx.header(), "report": report }));
            Ok(EXIT_OK)
        }
        Command::Loss(LossArgs { batch, out, .. }) => {
            let value = cmd_loss(&ctx, &batch)?;
            match out {
                Some(path) => write_json(&path, &value)?,
                None => print_json(&value),
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck(g) => {
            let out = cmd_gradcheck(&ctx, &g)?;
            print_json(&out);
            Ok(if out["pass"] == json!(true) {
                EXIT_OK
            } else {
                EXIT_NEGATIVE
            })
        }
        Command::Generate(GenerateCommand::Tasks {
            seeds,
            roles,
            out,
            llm,
            ..
        }) => {
            let summary = cmd_generate_tasks(&ctx, &seeds, &roles, &out, &llm)?;
            print_json(&summary);
            Ok(EXIT_OK)
        }
        Command::Generate(GenerateCommand::Pairs {
            corpus, out, llm, ..
        }) => {
            let summary = cmd_generate_pairs(&ctx, &corpus, &out, &llm)?;
            print_json(&summary);
            Ok(EXIT_OK)
        }
        Command::Report(ReportArgs {
            samples,
            out,
            plots,
        }) => {
            let rows: Vec<SampleResult> =
                read_jsonl(&samples).with_context(|| format!("reading {}", samples.display()))?;
            let report = write_reports(&ctx.header(), &out, &rows, plots)?;
            print_json(&json!({ "header": ctx.header(), "report": report }));
            Ok(EXIT_OK)
        }
    }
}

/// Subcommand flags that mirror config fields are folded into the config
/// so that the header hash describes the run.
fn apply_overrides(command: &Command, cfg: &mut RunConfig) {
    fn align(a: &AlignArgs, cfg: &mut RunConfig) {
        if let Some(v) = a.beta {
            cfg.align.beta = v;
        }
        if let Some(v) = a.mu {
            cfg.align.mu = v;
        }
        if let Some(v) = a.gamma_beta_ratio {
            cfg.align.gamma_beta_ratio = v;
        }
    }
    fn llm(a: &LlmArgs, cfg: &mut RunConfig) {
        if let Some(m) = a.mode {
            cfg.llm.mode = m.into();
        }
        if let Some(c) = &a.cassette {
            cfg.llm.cassette = Some(c.clone());
        }
        if let Some(d) = &a.prompts {
            cfg.paths.prompts_dir = Some(d.clone());
        }
    }
    match command {
        Command::Evaluate(e) => {
            if let Some(c) = &e.corpus {
                cfg.paths.corpus = Some(c.clone());
            }
            if let Some(o) = &e.out {
                cfg.paths.output_dir = Some(o.clone());
            }
        }
        Command::Loss(l) => align(&l.align, cfg),
        Command::Gradcheck(g) => align(&g.align, cfg),
        Command::Generate(GenerateCommand::Tasks {
            rounds,
            tau,
            llm: l,
            ..
        }) => {
            if let Some(r) = rounds {
                cfg.datagen.rounds = *r;
            }
            if let Some(t) = tau {
                cfg.datagen.dedup_tau = *t;
            }
            llm(l, cfg);
        }
        Command::Generate(GenerateCommand::Pairs {
            attempts,
            min_len,
            llm: l,
            ..
        }) => {
            if let Some(a) = attempts {
                cfg.datagen.max_attempts = *a;
            }
            if let Some(m) = min_len {
                cfg.datagen.min_unsafe_len = *m;
            }
            llm(l, cfg);
        }
        Command::Verify(_) | Command::Simulate { .. } | Command::Report(_) => {}
    }
}

/// Prints to stdout; a closed pipe (`| head`) is not an error.
fn print_json(v: &Value) {
    use std::io::Write as _;
    let text = serde_json::to_string_pretty(v).expect("json serializes");
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            log::error!("writing to stdout: {e}");
        }
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn read_plan(path: &Path) -> Result<safeplan_core::PlanScript> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading plan {}", path.display()))?;
    parse_script(&text).with_context(|| format!("parsing plan {}", path.display()))
}

/// Runs the plan and checks it. The JSON carries the verdict and a hazard
/// histogram.
pub fn cmd_verify(
    ctx: &Context,
    plan: &Path,
    scene: Option<&str>,
) -> Result<(SafetyVerdict, Value)> {
    let scene = ctx.scene(scene)?;
    let plan = read_plan(plan)?;
    let trace = ctx.sim.run_plan(&scene, &plan);
    let verdict = is_safe(&trace, &ctx.rules);
    let out = json!({
        "header": ctx.header(),
        "safe": verdict.safe,
        "executable": verdict.executable,
        "violations": verdict.violations,
        "hazards": classify_hazards(&verdict, &ctx.rules),
    });
    Ok((verdict, out))
}

pub fn cmd_simulate(ctx: &Context, plan: &Path, scene: Option<&str>, full: bool) -> Result<Value> {
    let scene = ctx.scene(scene)?;
    let plan = read_plan(plan)?;
    let trace = ctx.sim.run_plan(&scene, &plan);
    let steps: Vec<Value> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut step = json!({
                "action": s.action.to_string(),
                "changed": trace.pre_state(i).state_diff(&s.state),
            });
            if full {
                step["state"] = serde_json::to_value(&s.state).expect("scene serializes");
            }
            step
        })
        .collect();
    Ok(json!({
        "header": ctx.header(),
        "executable": trace.executable,
        "failure": trace.failure,
        "steps": steps,
        "final_state": trace.final_state(),
    }))
}

/// Scores every corpus line and writes `samples.jsonl`, `report.json`,
/// `report.csv` and, with `plots`, two SVG histograms into `out`.
pub fn cmd_evaluate(ctx: &Context, corpus: &Path, out: &Path, plots: bool) -> Result<EvalReport> {
    let file =
        File::open(corpus).with_context(|| format!("opening corpus {}", corpus.display()))?;
    let lines = read_corpus(BufReader::new(file))
        .with_context(|| format!("reading corpus {}", corpus.display()))?;
    let base = corpus.parent().map(Path::to_path_buf);
    let evaluator = Evaluator::new(ctx.sim.clone(), ctx.rules.clone(), SceneCache::new(base));
    let rows = evaluator.evaluate_corpus(&lines, ctx.cfg.parallelism);
    for r in rows.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "{}: {}",
            r.sample_id,
            r.error.as_deref().unwrap_or_default()
        );
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let header = ctx.header();
    let path = out.join("samples.jsonl");
    write_jsonl(&path, Some(&header), &rows)
        .with_context(|| format!("writing {}", path.display()))?;
    write_reports(&header, out, &rows, plots)
}

fn write_reports(
    header: &RunHeader,
    out: &Path,
    rows: &[SampleResult],
    plots: bool,
) -> Result<EvalReport> {
    let report = aggregate(rows)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(
        &out.join("report.json"),
        &json!({ "header": header, "report": report }),
    )?;
    let stamp = format!(
        "{} {} config_hash={}",
        header.tool, header.version, header.config_hash
    );
    let write = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write("report.csv", format!("# {stamp}\n{}", report.to_csv()))?;
    if plots {
        let svg = |title: &str, data: &BTreeMap<String, usize>| {
            format!("<!-- {stamp} -->\n{}", bar_chart_svg(title, data))
        };
        write(
            "violations.svg",
            svg("Violations by kind", &report.violations_by_kind),
        )?;
        write(
            "hazards.svg",
            svg("Violations by hazard category", &report.hazard_counts),
        )?;
    }
    Ok(report)
}

fn align_config(ctx: &Context) -> Result<AlignConfig> {
    let cfg = ctx.cfg.align.to_config();
    cfg.validate()?;
    Ok(cfg)
}

fn read_batch_file(path: &Path) -> Result<Vec<PreferenceSample>> {
    let file = File::open(path).with_context(|| format!("opening batch {}", path.display()))?;
    let batch =
        read_batch(BufReader::new(file)).with_context(|| format!("batch {}", path.display()))?;
    if batch.is_empty() {
        bail!("batch {} is empty", path.display());
    }
    Ok(batch)
}

/// A loss, or `None` for a reference-based loss on a sample without
/// reference log-probabilities.
fn sample_loss(v: LossVariant, s: &PreferenceSample, cfg: &AlignConfig) -> Result<Option<f64>> {
    if v.needs_reference() && s.ref_lp_w.is_none() {
        return Ok(None);
    }
    Ok(Some(v.loss(s, cfg)?))
}

/// Per-sample and mean losses of every variant. A mean is `null` when any
/// sample lacks the inputs for that loss.
pub fn cmd_loss(ctx: &Context, batch: &Path) -> Result<Value> {
    let cfg = align_config(ctx)?;
    let batch = read_batch_file(batch)?;
    let mut rows = Vec::with_capacity(batch.len());
    let mut columns: BTreeMap<&str, Option<Vec<f64>>> = LossVariant::ALL
        .iter()
        .map(|v| (v.name(), Some(Vec::new())))
        .collect();
    for s in &batch {
        let mut row = json!({ "prompt_id": s.prompt_id, "k": s.k });
        for v in LossVariant::ALL {
            let loss = sample_loss(v, s, &cfg)?;
            row[v.name()] = json!(loss);
            let col = columns.get_mut(v.name()).expect("column exists");
            match (loss, col.as_mut()) {
                (Some(x), Some(c)) => c.push(x),
                _ => *col = None,
            }
        }
        rows.push(row);
    }
    let mean: BTreeMap<&str, Option<f64>> = columns
        .into_iter()
        .map(|(k, c)| (k, c.map(|c| c.iter().sum::<f64>() / c.len() as f64)))
        .collect();
    Ok(json!({
        "header": ctx.header(),
        "config": { "beta": cfg.beta, "mu": cfg.mu, "gamma": cfg.gamma },
        "samples": rows,
        "mean": mean,
    }))
}

/// Finite-difference check of every loss variant. With a batch, gradients
/// with respect to the per-action log-probabilities of each sample; without,
/// gradients with respect to the logits of seeded toy policies.
pub fn cmd_gradcheck(ctx: &Context, args: &GradcheckArgs) -> Result<Value> {
    let cfg = align_config(ctx)?;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |v: LossVariant, err: f64| {
        let e = worst.entry(v.name()).or_insert(0.0);
        *e = e.max(err);
    };
    let mode = match &args.batch {
        Some(path) => {
            for s in &read_batch_file(path)? {
                for v in LossVariant::ALL {
                    if v.needs_reference() && s.ref_lp_w.is_none() {
                        continue;
                    }
                    note(v, logprob_grad_check(v, s, &cfg)?);
                }
            }
            json!({ "batch": path })
        }
        None => {
            if args.policies == 0 {
                bail!("--policies must be at least 1");
            }
            if args.vocab < 2 || args.max_len < 2 || args.pairs == 0 {
                bail!("toy problems need --vocab >= 2, --max-len >= 2 and --pairs >= 1");
            }
            let seeds = ctx.cfg.seed..ctx.cfg.seed + args.policies;
            for seed in seeds.clone() {
                let (examples, theta, reference) =
                    random_problem(seed, args.vocab, args.pairs, args.max_len);
                for v in LossVariant::ALL {
                    note(v, grad_check(v, &theta, &reference, &examples, &cfg)?);
                }
            }
            json!({ "toy_policies": { "seeds": [seeds.start, seeds.end - 1], "vocab": args.vocab, "pairs": args.pairs, "max_len": args.max_len } })
        }
    };
    let max = worst.values().copied().fold(0.0, f64::max);
    Ok(json!({
        "header": ctx.header(),
        "source": mode,
        "tolerance": args.tolerance,
        "max_rel_error_by_variant": worst,
        "max_rel_error": max,
        "pass": max < args.tolerance,
    }))
}

fn client(ctx: &Context) -> Result<LlmClient> {
    LlmClient::from_settings(ctx.cfg.llm.clone()).context("setting up the LLM client")
}

fn finish_client(client: &LlmClient) -> Result<()> {
    if client.settings().mode == safeplan_core::config::LlmMode::Record {
        client.save_cassette().context("saving cassette")?;
    }
    Ok(())
}

fn parent_dir(p: &Path) -> Option<PathBuf> {
    p.parent().map(Path::to_path_buf)
}

/// `tasks.jsonl` → `tasks.dropped.jsonl`.
pub fn dropped_path(out: &Path) -> PathBuf {
    out.with_extension("dropped.jsonl")
}

pub fn cmd_generate_tasks(
    ctx: &Context,
    seeds: &Path,
    roles: &Path,
    out: &Path,
    llm: &LlmArgs,
) -> Result<Value> {
    let scenes = SceneCache::new(parent_dir(seeds));
    let file = File::open(seeds).with_context(|| format!("opening seeds {}", seeds.display()))?;
    let seeds = load_seeds(BufReader::new(file), &scenes).context("reading seeds")?;
    let text = std::fs::read_to_string(roles)
        .with_context(|| format!("reading roles {}", roles.display()))?;
    let roles: Vec<AgentRole> = serde_json::from_str(&text)
        .with_context(|| format!("parsing roles {}", roles.display()))?;
    let d = &ctx.cfg.datagen;
    let cfg = TaskGenConfig {
        rounds: d.rounds,
        dedup_tau: d.dedup_tau,
        schema_retries: d.schema_retries,
        categories: ctx.categories(),
    };
    let client = client(ctx)?;
    let result = generate_tasks(
        &seeds,
        &roles,
        &cfg,
        &client,
        &ctx.templates(llm.prompts.as_deref())?,
    )?;
    finish_client(&client)?;
    let header = ctx.header();
    write_jsonl(out, Some(&header), &result.tasks)
        .with_context(|| format!("writing {}", out.display()))?;
    let dropped = dropped_path(out);
    write_jsonl(&dropped, Some(&header), &result.dropped)
        .with_context(|| format!("writing {}", dropped.display()))?;
    Ok(json!({
        "header": header,
        "accepted": result.tasks.iter().map(|t| &t.id).collect::<Vec<_>>(),
        "dropped": result.dropped.len(),
        "network_calls": client.network_calls(),
    }))
}

pub fn cmd_generate_pairs(
    ctx: &Context,
    corpus: &Path,
    out: &Path,
    llm: &LlmArgs,
) -> Result<Value> {
    let seeds: Vec<PairSeed> =
        read_jsonl(corpus).with_context(|| format!("reading {}", corpus.display()))?;
    let d = &ctx.cfg.datagen;
    let cfg = PairGenConfig {
        max_attempts: d.max_attempts,
        min_unsafe_len: d.min_unsafe_len,
    };
    let templates = ctx.templates(llm.prompts.as_deref())?;
    let client = client(ctx)?;
    let scenes = SceneCache::new(parent_dir(corpus));
    let pairs = build_pairs(
        &seeds, &client, &ctx.rules, &ctx.sim, &scenes, &templates, &cfg,
    )?;
    finish_client(&client)?;
    let header = ctx.header();
    let manifest = export_dataset(&pairs, out, Some(&header), &templates, &ctx.categories())?;
    Ok(json!({ "manifest": manifest, "network_calls": client.network_calls() }))
}
