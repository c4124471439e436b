//! Corpus evaluation: run every candidate plan, judge it, score it.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{eval_success, make_success_spec, rouge_l_scripts, SampleResult};
use crate::safety::{classify_hazards, is_safe, SafetyRuleSet};
use crate::script::{parse_script, PlanScript};
use crate::world::{SceneGraph, Simulator};

/// A scene given inline, by bundled name (`"kitchen"`), or by path relative
/// to the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSource {
    Inline(Box<SceneGraph>),
    Named(String),
}

/// Script text, either one string or one string per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptText {
    Text(String),
    Lines(Vec<String>),
}

impl ScriptText {
    pub fn parse(&self) -> Result<PlanScript, crate::script::ParseError> {
        match self {
            ScriptText::Text(t) => parse_script(t),
            ScriptText::Lines(lines) => parse_script(&lines.join("\n")),
        }
    }
}

impl From<&PlanScript> for ScriptText {
    fn from(p: &PlanScript) -> Self {
        ScriptText::Lines(p.actions.iter().map(ToString::to_string).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub scene: SceneSource,
    pub gt_plan: ScriptText,
    pub candidate_plan: ScriptText,
}

/// One corpus line: a sample, or the reason it could not be read.
#[derive(Debug, Clone)]
pub struct CorpusLine {
    pub line: usize,
    pub sample: Result<CorpusSample, String>,
}

impl CorpusLine {
    fn id(&self) -> String {
        match &self.sample {
            Ok(s) => s.id.clone(),
            Err(_) => format!("line-{}", self.line),
        }
    }
}

/// Reads a JSONL corpus. Malformed lines are kept as errors so they surface
/// as rows rather than aborting the run.
pub fn read_corpus(reader: impl BufRead) -> std::io::Result<Vec<CorpusLine>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || crate::io::is_header_line(&line) {
            continue;
        }
        out.push(CorpusLine {
            line: i + 1,
            sample: serde_json::from_str(&line).map_err(|e| e.to_string()),
        });
    }
    Ok(out)
}

/// Resolves scene sources, caching each file once.
#[derive(Debug, Default)]
pub struct SceneCache {
    base_dir: Option<PathBuf>,
    loaded: Mutex<HashMap<String, Arc<SceneGraph>>>,
}

impl SceneCache {
    pub fn new(base_dir: Option<PathBuf>) -> Self {
        Self {
            base_dir,
            loaded: Mutex::default(),
        }
    }

    pub fn resolve(&self, src: &SceneSource) -> Result<Arc<SceneGraph>, String> {
        let name = match src {
            SceneSource::Inline(g) => {
                g.validate().map_err(|e| e.to_string())?;
                return Ok(Arc::new((**g).clone()));
            }
            SceneSource::Named(n) => n,
        };
        if let Some(g) = self.loaded.lock().expect("scene cache poisoned").get(name) {
            return Ok(Arc::clone(g));
        }
        let scene = match crate::fixtures::scene(name) {
            Some(text) => SceneGraph::from_json(text),
            None => {
                let path = Path::new(name);
                let path = match &self.base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.to_path_buf(),
                };
                SceneGraph::load(path)
            }
        }
        .map_err(|e| e.to_string())?;
        let scene = Arc::new(scene);
        self.loaded
            .lock()
            .expect("scene cache poisoned")
            .insert(name.clone(), Arc::clone(&scene));
        Ok(scene)
    }
}

/// Everything needed to judge a sample.
#[derive(Debug)]
pub struct Evaluator {
    pub sim: Simulator,
    pub rules: SafetyRuleSet,
    pub scenes: SceneCache,
}

impl Evaluator {
    pub fn new(sim: Simulator, rules: SafetyRuleSet, scenes: SceneCache) -> Self {
        Self { sim, rules, scenes }
    }

    pub fn evaluate(&self, sample: &CorpusSample) -> SampleResult {
        self.try_evaluate(sample)
            .unwrap_or_else(|e| SampleResult::failed(&sample.id, e))
    }

    fn try_evaluate(&self, sample: &CorpusSample) -> Result<SampleResult, String> {
        let scene = self.scenes.resolve(&sample.scene)?;
        let gt = sample
            .gt_plan
            .parse()
            .map_err(|e| format!("gt_plan: {e}"))?;
        let candidate = sample
            .candidate_plan
            .parse()
            .map_err(|e| format!("candidate_plan: {e}"))?;
        let spec = make_success_spec(&self.sim, &scene, &gt).map_err(|e| e.to_string())?;
        let trace = self.sim.run_plan(&scene, &candidate);
        let verdict = is_safe(&trace, &self.rules);
        let success = eval_success(&trace, &spec).map_err(|e| e.to_string())?;
        let mut violations_by_kind = BTreeMap::new();
        for v in &verdict.violations {
            *violations_by_kind
                .entry(v.kind.as_str().to_string())
                .or_insert(0) += 1;
        }
        Ok(SampleResult {
            sample_id: sample.id.clone(),
            executable: trace.executable,
            success,
            safe: verdict.safe,
            rouge_l: rouge_l_scripts(&candidate, &gt),
            violations_by_kind,
            hazard_counts: classify_hazards(&verdict, &self.rules),
            error: None,
        })
    }

    /// Evaluates every line on `parallelism` threads. Rows come back in input
    /// order.
    pub fn evaluate_corpus(&self, corpus: &[CorpusLine], parallelism: usize) -> Vec<SampleResult> {
        let run = || {
            corpus
                .par_iter()
                .map(|line| match &line.sample {
                    Ok(s) => self.evaluate(s),
                    Err(e) => SampleResult::failed(line.id(), format!("line {}: {e}", line.line)),
                })
                .collect()
        };
        match rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(e) => {
                log::warn!("falling back to the global thread pool: {e}");
                run()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evaluator() -> Evaluator {
        Evaluator::new(
            Simulator::default(),
            SafetyRuleSet::builtin(),
            SceneCache::default(),
        )
    }

    #[test]
    fn bad_lines_become_rows() {
        let text = "{\"id\":\"a\",\"scene\":\"kitchen\",\"gt_plan\":\"\",\"candidate_plan\":\"[WALK] <stove>\"}\nnot json\n{\"id\":\"c\",\"scene\":\"nowhere.json\",\"gt_plan\":\"\",\"candidate_plan\":\"\"}\n";
        let corpus = read_corpus(text.as_bytes()).unwrap();
        let rows = evaluator().evaluate_corpus(&corpus, 2);
        assert_eq!(rows.len(), 3);
        assert!(rows[0].error.is_none() && rows[0].safe);
        assert_eq!(rows[1].sample_id, "line-2");
        assert!(rows[1].error.is_some());
        assert!(rows[2].error.as_ref().unwrap().contains("nowhere"));
    }

    #[test]
    fn unparseable_plan_is_a_row_error() {
        let s = CorpusSample {
            id: "x".into(),
            task: None,
            scene: SceneSource::Named("kitchen".into()),
            gt_plan: ScriptText::Text(String::new()),
            candidate_plan: ScriptText::Text("[WALK <stove>".into()),
        };
        let r = evaluator().evaluate(&s);
        assert!(r.error.unwrap().starts_with("candidate_plan"));
        assert!(!r.safe && !r.success);
    }
}
