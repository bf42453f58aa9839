//! Experiment drivers: layer-wise degradation with balanced codebooks,
//! matched/unmatched emotion-specific codebooks, soft-distribution fidelity
//! under biased mixing ratios, and the routed-classification sweep.
//!
//! Every driver splits utterances 50/10/40 (train/val/test) per class,
//! trains the probe on pooled continuous training embeddings and evaluates it
//! on pooled reconstructions of the test split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{set_fingerprint, ArtifactCache};
use crate::data::{pool_utterance, stratify_indices, EmbeddingSet, EmotionLabel};
use crate::error::{Error, Result};
use crate::metrics::{js_divergence, macro_f1, normalized_entropy, top2_set_accuracy};
use crate::probe::{probe_predict, probe_train, LinearProbe, ProbeConfig};
use crate::report::{EvalReport, ALL};
use crate::router::{route_batch, route_scores_by_depth, Aggregation, RouterBank};
use crate::rvq::{continuous_bitrate, encode, nominal_bitrate_for, reconstruct, CodeSequence, RvqStack};
use crate::seed::derive_seed;
use crate::trainer::{assemble_training_set, train_stack_on, KMeansConfig, RegimeKind, TrainingRegime};
use crate::data::argmax_lowest;

/// The seven (stages, entries) configurations of the routed-classification table.
pub const TABLE_CONFIGS: [(usize, usize); 7] = [(8, 32), (8, 64), (8, 128), (32, 2), (32, 4), (64, 2), (128, 2)];

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub stages: usize,
    pub entries: usize,
    /// Utterances per codebook training set; defaults to the largest budget
    /// every regime can meet from the training split.
    pub budget: Option<usize>,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub probe: ProbeConfig,
    pub root_seed: u64,
    pub frame_rate_hz: f64,
    /// Router inputs scaled to unit norm (and routing stacks trained on unit-norm data).
    pub normalize: bool,
    pub cache: ArtifactCache,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: 24,
            entries: 2,
            budget: None,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-5,
            probe: ProbeConfig::default(),
            root_seed: 7,
            frame_rate_hz: 50.0,
            normalize: true,
            cache: ArtifactCache::disabled(),
        }
    }
}

impl PipelineConfig {
    fn kmeans(&self, label: &str) -> KMeansConfig {
        KMeansConfig {
            k: self.entries,
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
            seed: derive_seed(self.root_seed, &format!("kmeans/{label}")),
        }
    }

    fn echo(&self, report: &mut EvalReport, budget: usize) {
        report
            .set_config("stages", self.stages)
            .set_config("entries", self.entries)
            .set_config("budget", budget)
            .set_config("root_seed", self.root_seed)
            .set_config("frame_rate_hz", self.frame_rate_hz)
            .set_config("kmeans_max_iters", self.kmeans_max_iters)
            .set_config("kmeans_tol", self.kmeans_tol)
            .set_config("probe_l2", self.probe.l2)
            .set_config("probe_max_epochs", self.probe.max_epochs);
    }
}

/// Utterance indices of a stratified 50/10/40 split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_utterances(set: &EmbeddingSet<f32>, seed: u64) -> Split {
    let mut out = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (c, members) in set.indices_by_class().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut m = members;
        m.shuffle(&mut rng);
        let n = m.len();
        let n_train = n / 2;
        let n_val = n / 10;
        out.train.extend_from_slice(&m[..n_train]);
        out.val.extend_from_slice(&m[n_train..n_train + n_val]);
        out.test.extend_from_slice(&m[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    out
}

/// Largest budget that every regime can meet: the smallest class population,
/// rounded down to a multiple of the class count.
pub fn default_budget(train: &EmbeddingSet<f32>) -> usize {
    let c = train.n_classes();
    let min = train.indices_by_class().iter().map(Vec::len).min().unwrap_or(0);
    min - min % c
}

struct Prepared {
    train: EmbeddingSet<f32>,
    val: EmbeddingSet<f32>,
    test: EmbeddingSet<f32>,
    test_pooled: EmbeddingSet<f32>,
    probe: LinearProbe<f32>,
    budget: usize,
    train_key: String,
}

fn prepare(set: &EmbeddingSet<f32>, cfg: &PipelineConfig) -> Result<Prepared> {
    let split = split_utterances(set, derive_seed(cfg.root_seed, "split"));
    let train = set.subset(&split.train);
    let val = set.subset(&split.val);
    let test = set.subset(&split.test);
    if test.utterances().is_empty() {
        return Err(Error::EmptyInput("test split is empty".into()));
    }
    let train_key = set_fingerprint(&train);
    let probe = train_probe(&train, cfg, &train_key)?;
    let budget = cfg.budget.unwrap_or_else(|| default_budget(&train));
    let test_pooled = pool_utterance(&test)?;
    Ok(Prepared { train, val, test, test_pooled, probe, budget, train_key })
}

fn train_probe(train: &EmbeddingSet<f32>, cfg: &PipelineConfig, key: &str) -> Result<LinearProbe<f32>> {
    let pcfg = ProbeConfig { seed: derive_seed(cfg.root_seed, "probe"), ..cfg.probe.clone() };
    let cache_key = format!(
        "probe|{key}|{}|{}|{}|{}|{}",
        pcfg.seed, pcfg.learning_rate, pcfg.l2, pcfg.max_epochs, pcfg.grad_tol
    );
    cfg.cache.probe(&cache_key, || probe_train(&pool_utterance(train)?, &pcfg))
}

fn regime_for(kind: RegimeKind, target: Option<EmotionLabel>, bias: u8, budget: usize, seed: u64) -> TrainingRegime {
    match (kind, target) {
        (RegimeKind::Balanced, _) | (_, None) => TrainingRegime::balanced(budget, seed),
        (RegimeKind::Specific, Some(t)) => TrainingRegime::specific(t, budget, seed),
        (RegimeKind::Biased, Some(t)) => TrainingRegime::biased(t, bias, budget, seed),
    }
}

/// Trains (or loads from cache) one stack on the regime's slice of `train`.
fn train_stack(
    train: &EmbeddingSet<f32>,
    train_key: &str,
    regime: &TrainingRegime,
    cfg: &PipelineConfig,
    normalize: bool,
) -> Result<RvqStack<f32>> {
    let label = regime.label(train.taxonomy().names());
    let kcfg = cfg.kmeans(&label);
    let key = format!(
        "stack|{train_key}|{:?}|{:?}|{}|{}|{}|{}|{}|{}|{}|{}|{normalize}",
        regime.kind, regime.target, regime.bias_percent, regime.total_budget, regime.seed, cfg.stages, cfg.entries,
        kcfg.max_iters, kcfg.tol, kcfg.seed
    );
    cfg.cache.stack(&key, || {
        let mut data = assemble_training_set(train, regime)?;
        if normalize {
            data = data.l2_normalized()?;
        }
        train_stack_on(&data, cfg.stages, cfg.entries, &kcfg, regime.meta()).map(|(s, _)| s)
    })
}

/// Per-utterance outcomes of one stack at every depth.
struct StackEval {
    codes: CodeSequence,
    /// `[depth - 1][utterance]`
    cosine: Vec<Vec<f64>>,
    hard: Vec<Vec<EmotionLabel>>,
    soft: Vec<Vec<Vec<f64>>>,
}

fn eval_stack(stack: &RvqStack<f32>, prep: &Prepared) -> Result<StackEval> {
    let codes = encode(&prep.test, stack)?;
    let mut out = StackEval { codes: codes.clone(), cosine: Vec::new(), hard: Vec::new(), soft: Vec::new() };
    for depth in 1..=stack.n_stages() {
        let recon = pool_utterance(&reconstruct(&codes, stack, depth, &prep.test)?)?;
        let cos = prep
            .test_pooled
            .rows()
            .zip(recon.rows())
            .map(|(a, b)| crate::scalar::cosine(a, b).unwrap_or(0.0))
            .collect();
        let pred = probe_predict(&prep.probe, &recon)?;
        out.cosine.push(cos);
        out.hard.push(pred.hard);
        out.soft.push(pred.soft);
    }
    Ok(out)
}

/// Stage-`l` usage entropy over the frames of the given utterances.
fn subset_entropy(codes: &CodeSequence, set: &EmbeddingSet<f32>, utts: &[usize], stage: usize) -> f64 {
    let mut counts = vec![0usize; codes.entries()];
    for &u in utts {
        for r in set.utterances()[u].frames.clone() {
            counts[codes.row(r)[stage] as usize] += 1;
        }
    }
    normalized_entropy(&counts)
}

fn mean_over(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

fn hit_rate(pred: &[EmotionLabel], idx: &[usize], label: EmotionLabel) -> f64 {
    idx.iter().filter(|&&i| pred[i] == label).count() as f64 / idx.len() as f64
}

/// Per-depth cosine, recall and stage entropy of one stack on a labelled set.
pub fn evaluate(
    set: &EmbeddingSet<f32>,
    stack: &RvqStack<f32>,
    probe: &LinearProbe<f32>,
    frame_rate_hz: f64,
) -> Result<EvalReport> {
    let prep = Prepared {
        train: set.subset(&[]),
        val: set.subset(&[]),
        test: set.clone(),
        test_pooled: pool_utterance(set)?,
        probe: probe.clone(),
        budget: 0,
        train_key: String::new(),
    };
    let ev = eval_stack(stack, &prep)?;
    let mut report = EvalReport::new();
    report
        .set_config("stages", stack.n_stages())
        .set_config("entries", stack.entries())
        .set_config("regime", stack.meta().regime.name())
        .set_config("frame_rate_hz", frame_rate_hz);
    write_layer_rows(&mut report, &prep, &ev, "", frame_rate_hz)?;
    if set.utterances().iter().all(|u| u.soft.is_some()) {
        let strata = stratify_indices(&prep.test)?;
        let truth: Vec<Vec<f64>> = prep.test.utterances().iter().map(|u| u.soft.as_ref().unwrap().probs().to_vec()).collect();
        for depth in 1..=stack.n_stages() {
            for (name, idx) in [("low", &strata.low), ("high", &strata.high)] {
                if idx.is_empty() {
                    continue;
                }
                let (jsd, top2) = soft_scores(&ev.soft[depth - 1], &truth, idx)?;
                report.push(depth, ALL, &format!("{name}.jsd"), jsd);
                report.push(depth, ALL, &format!("{name}.top2"), top2);
            }
        }
    }
    Ok(report)
}

/// Rows `{prefix}cosine`, `{prefix}recall` per emotion and ALL, and stage entropy, for every depth.
fn write_layer_rows(report: &mut EvalReport, prep: &Prepared, ev: &StackEval, prefix: &str, rate: f64) -> Result<()> {
    let by_class = prep.test.indices_by_class();
    let names = prep.test.taxonomy().names();
    let all: Vec<usize> = (0..prep.test.utterances().len()).collect();
    let truth = prep.test.labels();
    for depth in 1..=ev.cosine.len() {
        let cos = &ev.cosine[depth - 1];
        let hard = &ev.hard[depth - 1];
        for (c, idx) in by_class.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            report.push(depth, &names[c], &format!("{prefix}cosine"), mean_over(cos, idx));
            report.push(depth, &names[c], &format!("{prefix}recall"), hit_rate(hard, idx, EmotionLabel(c as u8)));
            report.push(depth, &names[c], &format!("{prefix}entropy"), subset_entropy(&ev.codes, &prep.test, idx, depth - 1));
        }
        report.push(depth, ALL, &format!("{prefix}cosine"), mean_over(cos, &all));
        let recall = crate::metrics::primary_recall(hard, &truth, prep.test.n_classes())?;
        report.push(depth, ALL, &format!("{prefix}recall"), recall.macro_recall);
        report.push(depth, ALL, &format!("{prefix}entropy"), subset_entropy(&ev.codes, &prep.test, &all, depth - 1));
        if prefix.is_empty() {
            report.push(depth, ALL, "bitrate_bps", nominal_bitrate_for(ev.codes.entries(), depth, rate)?);
        }
    }
    Ok(())
}

/// Layer-wise degradation of a balanced stack.
pub fn run_rq1(set: &EmbeddingSet<f32>, cfg: &PipelineConfig) -> Result<EvalReport> {
    let prep = prepare(set, cfg)?;
    let regime = TrainingRegime::balanced(prep.budget, derive_seed(cfg.root_seed, "regime/balanced"));
    let stack = train_stack(&prep.train, &prep.train_key, &regime, cfg, false)?;
    let ev = eval_stack(&stack, &prep)?;
    let mut report = EvalReport::new();
    cfg.echo(&mut report, prep.budget);
    report.set_config("regime", "balanced");
    write_layer_rows(&mut report, &prep, &ev, "", cfg.frame_rate_hz)?;
    Ok(report)
}

/// Balanced vs emotion-specific stacks, matched and unmatched, with stage entropy.
pub fn run_rq2(set: &EmbeddingSet<f32>, cfg: &PipelineConfig) -> Result<EvalReport> {
    let prep = prepare(set, cfg)?;
    let c = set.n_classes();
    let names = set.taxonomy().names().to_vec();
    let balanced = train_stack(
        &prep.train,
        &prep.train_key,
        &TrainingRegime::balanced(prep.budget, derive_seed(cfg.root_seed, "regime/balanced")),
        cfg,
        false,
    )?;
    let specific: Vec<RvqStack<f32>> = (0..c)
        .into_par_iter()
        .map(|e| {
            let t = EmotionLabel(e as u8);
            let seed = derive_seed(cfg.root_seed, &format!("regime/{}", names[e]));
            train_stack(&prep.train, &prep.train_key, &TrainingRegime::specific(t, prep.budget, seed), cfg, false)
        })
        .collect::<Result<_>>()?;

    let bal = eval_stack(&balanced, &prep)?;
    let spec: Vec<StackEval> = specific.par_iter().map(|s| eval_stack(s, &prep)).collect::<Result<_>>()?;

    let mut report = EvalReport::new();
    cfg.echo(&mut report, prep.budget);
    report.set_config("regimes", "balanced,specific");
    write_layer_rows(&mut report, &prep, &bal, "balanced.", cfg.frame_rate_hz)?;

    let by_class = prep.test.indices_by_class();
    for depth in 1..=cfg.stages {
        let d = depth - 1;
        let mut overall = [Vec::new(), Vec::new(), Vec::new()];
        for (e, idx) in by_class.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let label = EmotionLabel(e as u8);
            let m = &spec[e];
            let matched = [
                mean_over(&m.cosine[d], idx),
                hit_rate(&m.hard[d], idx, label),
                subset_entropy(&m.codes, &prep.test, idx, d),
            ];
            let others: Vec<&StackEval> = (0..c).filter(|&s| s != e).map(|s| &spec[s]).collect();
            let k = others.len().max(1) as f64;
            let unmatched = [
                others.iter().map(|s| mean_over(&s.cosine[d], idx)).sum::<f64>() / k,
                others.iter().map(|s| hit_rate(&s.hard[d], idx, label)).sum::<f64>() / k,
                others.iter().map(|s| subset_entropy(&s.codes, &prep.test, idx, d)).sum::<f64>() / k,
            ];
            for (j, metric) in ["cosine", "recall", "entropy"].iter().enumerate() {
                report.push(depth, &names[e], &format!("matched.{metric}"), matched[j]);
                overall[j].push(matched[j]);
                if c > 1 {
                    report.push(depth, &names[e], &format!("unmatched.{metric}"), unmatched[j]);
                }
            }
        }
        for (j, metric) in ["cosine", "recall", "entropy"].iter().enumerate() {
            let v = &overall[j];
            if !v.is_empty() {
                report.push(depth, ALL, &format!("matched.{metric}"), v.iter().sum::<f64>() / v.len() as f64);
            }
        }
        if c > 1 {
            for metric in ["cosine", "recall", "entropy"] {
                let name = format!("unmatched.{metric}");
                let vals: Vec<f64> = report
                    .rows
                    .iter()
                    .filter(|r| r.layer == depth && r.metric == name && r.emotion != ALL)
                    .map(|r| r.value)
                    .collect();
                report.push(depth, ALL, &name, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }
    Ok(report)
}

fn soft_scores(pred: &[Vec<f64>], truth: &[Vec<f64>], idx: &[usize]) -> Result<(f64, f64)> {
    let mut jsd = 0.0;
    for &i in idx {
        jsd += js_divergence(&pred[i], &truth[i])?;
    }
    let p: Vec<Vec<f64>> = idx.iter().map(|&i| pred[i].clone()).collect();
    let t: Vec<Vec<f64>> = idx.iter().map(|&i| truth[i].clone()).collect();
    Ok((jsd / idx.len() as f64, top2_set_accuracy(&p, &t)?))
}

/// Regime name used in soft-fidelity reports: `balanced` or `A+(100-A)`.
pub fn mix_name(bias: Option<u8>) -> String {
    match bias {
        None => "balanced".into(),
        Some(a) => format!("{}+{}", a, 100 - a as u32),
    }
}

/// Soft-label fidelity (JSD, top-2 agreement) per regime and ambiguity stratum.
///
/// Emotion-targeted regimes quantize each test utterance with the stack
/// trained for its annotated primary emotion.
pub fn run_rq3(set: &EmbeddingSet<f32>, cfg: &PipelineConfig, bias_levels: &[u8]) -> Result<EvalReport> {
    stratify_indices(set)?;
    let prep = prepare(set, cfg)?;
    let strata = stratify_indices(&prep.test)?;
    let c = set.n_classes();
    let names = set.taxonomy().names().to_vec();
    let truth: Vec<Vec<f64>> = prep
        .test
        .utterances()
        .iter()
        .map(|u| u.soft.as_ref().expect("stratified").probs().to_vec())
        .collect();
    let labels = prep.test.labels();

    let mut report = EvalReport::new();
    cfg.echo(&mut report, prep.budget);
    report.set_config("regimes", std::iter::once("balanced".to_string()).chain(bias_levels.iter().map(|&a| mix_name(Some(a)))).collect::<Vec<_>>().join(","));

    let continuous = probe_predict(&prep.probe, &prep.test_pooled)?;
    for (name, idx) in [("low", &strata.low), ("high", &strata.high)] {
        if idx.is_empty() {
            continue;
        }
        let (jsd, top2) = soft_scores(&continuous.soft, &truth, idx)?;
        report.push(0, ALL, &format!("continuous.{name}.jsd"), jsd);
        report.push(0, ALL, &format!("continuous.{name}.top2"), top2);
    }

    let balanced = train_stack(
        &prep.train,
        &prep.train_key,
        &TrainingRegime::balanced(prep.budget, derive_seed(cfg.root_seed, "regime/balanced")),
        cfg,
        false,
    )?;
    let mut regimes: Vec<(String, Vec<StackEval>)> = vec![("balanced".into(), vec![eval_stack(&balanced, &prep)?])];
    for &a in bias_levels {
        let kind = if a == 100 { RegimeKind::Specific } else { RegimeKind::Biased };
        let evals: Vec<StackEval> = (0..c)
            .into_par_iter()
            .map(|e| {
                let seed = derive_seed(cfg.root_seed, &format!("regime/{}{}", names[e], a));
                let r = regime_for(kind, Some(EmotionLabel(e as u8)), a, prep.budget, seed);
                eval_stack(&train_stack(&prep.train, &prep.train_key, &r, cfg, false)?, &prep)
            })
            .collect::<Result<_>>()?;
        regimes.push((mix_name(Some(a)), evals));
    }

    for depth in 1..=cfg.stages {
        for (name, evals) in &regimes {
            // pick each utterance's prediction from its matched stack
            let soft: Vec<Vec<f64>> = (0..truth.len())
                .map(|i| {
                    let s = if evals.len() == 1 { 0 } else { labels[i].index() };
                    evals[s].soft[depth - 1][i].clone()
                })
                .collect();
            for (stratum, idx) in [("low", &strata.low), ("high", &strata.high)] {
                if idx.is_empty() {
                    continue;
                }
                let (jsd, top2) = soft_scores(&soft, &truth, idx)?;
                report.push(depth, ALL, &format!("{name}.{stratum}.jsd"), jsd);
                report.push(depth, ALL, &format!("{name}.{stratum}.top2"), top2);
            }
        }
    }
    Ok(report)
}

/// Routed-classification sweep over (stages, entries) configurations.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub pairs: Vec<(usize, usize)>,
    /// Target-class shares of the routing banks, e.g. `[100, 99]`.
    pub bias_levels: Vec<u8>,
    /// Candidate depths per configuration; `None` means every depth `1..=L`.
    /// The depth is chosen on the validation split.
    pub depths: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            pairs: TABLE_CONFIGS.to_vec(),
            bias_levels: vec![100, 99],
            depths: None,
            seeds: vec![7],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Config("sweep needs at least one (stages, entries) pair".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        if let Some(&(l, k)) = self.pairs.iter().find(|(l, k)| *l == 0 || *k == 0) {
            return Err(Error::Config(format!("invalid configuration {l}x{k}")));
        }
        if let Some(a) = self.bias_levels.iter().find(|a| !(50..=100).contains(*a)) {
            return Err(Error::Config(format!("bias level {a} outside 50..=100")));
        }
        Ok(())
    }
}

/// One condition's outcome in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub condition: String,
    pub depth: usize,
    pub macro_f1: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigResult {
    pub stages: usize,
    pub entries: usize,
    pub nominal_bitrate_bps: f64,
    pub storage_bytes_per_stack: u64,
    pub conditions: Vec<ConditionResult>,
}

impl ConfigResult {
    pub fn name(&self) -> String {
        format!("{}x{}", self.stages, self.entries)
    }
}

/// Macro-F1 deltas against the continuous baseline, in table layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaTable {
    pub seed: u64,
    pub baseline_macro_f1: f64,
    pub continuous_bitrate_bps: f64,
    pub configs: Vec<ConfigResult>,
}

impl DeltaTable {
    pub fn condition_names(&self) -> Vec<String> {
        self.configs.first().map(|c| c.conditions.iter().map(|r| r.condition.clone()).collect()).unwrap_or_default()
    }

    pub fn delta(&self, config: &str, condition: &str) -> Option<f64> {
        self.configs
            .iter()
            .find(|c| c.name() == config)
            .and_then(|c| c.conditions.iter().find(|r| r.condition == condition))
            .map(|r| r.delta)
    }

    /// `condition,<cfg>,<cfg>,...` rows of deltas.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        table_csv(&self.configs.iter().map(ConfigResult::name).collect::<Vec<_>>(), &self.condition_names(), |cfg, cond| {
            self.delta(cfg, cond).unwrap_or(f64::NAN)
        })
    }

    pub fn to_report(&self) -> EvalReport {
        let mut r = EvalReport::new();
        r.set_config("seed", self.seed);
        r.push(0, ALL, "baseline.macro_f1", self.baseline_macro_f1);
        r.push(0, ALL, "continuous.bitrate_bps", self.continuous_bitrate_bps);
        for c in &self.configs {
            let n = c.name();
            r.push(c.stages, ALL, &format!("{n}.bitrate_bps"), c.nominal_bitrate_bps);
            r.push(c.stages, ALL, &format!("{n}.storage_bytes"), c.storage_bytes_per_stack as f64);
            for cond in &c.conditions {
                r.push(cond.depth, ALL, &format!("{n}.{}.macro_f1", cond.condition), cond.macro_f1);
                r.push(cond.depth, ALL, &format!("{n}.{}.delta", cond.condition), cond.delta);
            }
        }
        r
    }
}

fn table_csv(configs: &[String], conditions: &[String], value: impl Fn(&str, &str) -> f64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["condition".to_string()];
    header.extend(configs.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
    for cond in conditions {
        let mut row = vec![cond.clone()];
        row.extend(configs.iter().map(|cfg| format!("{:+.4}", value(cfg, cond))));
        w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

/// Mean deltas over several seeds, in table layout.
pub fn mean_table_csv(tables: &[DeltaTable]) -> Result<Vec<u8>> {
    let first = tables.first().ok_or_else(|| Error::EmptyInput("no sweep results".into()))?;
    let configs: Vec<String> = first.configs.iter().map(ConfigResult::name).collect();
    table_csv(&configs, &first.condition_names(), |cfg, cond| {
        tables.iter().filter_map(|t| t.delta(cfg, cond)).sum::<f64>() / tables.len() as f64
    })
}

fn select_depth(candidates: &[usize], f1_at: impl Fn(usize) -> Result<f64>) -> Result<usize> {
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &d in candidates {
        let f = f1_at(d)?;
        if f > best.1 {
            best = (d, f);
        }
    }
    Ok(best.0)
}

/// Baseline probe, balanced quantization and routed banks for every configuration.
///
/// All conditions operate on pooled utterance embeddings. `baseline_f1`
/// overrides the continuous-probe score when given.
pub fn run_rq4(
    set: &EmbeddingSet<f32>,
    sweep: &SweepConfig,
    baseline_f1: Option<f64>,
    cfg: &PipelineConfig,
) -> Result<DeltaTable> {
    sweep.validate()?;
    let pooled = pool_utterance(set)?;
    let prep = prepare(&pooled, cfg)?;
    let c = set.n_classes();
    let names = set.taxonomy().names().to_vec();
    let test_truth = prep.test.labels();
    let val_truth = prep.val.labels();
    if val_truth.is_empty() {
        return Err(Error::EmptyInput("validation split is empty".into()));
    }
    let baseline = match baseline_f1 {
        Some(b) => b,
        None => macro_f1(&probe_predict(&prep.probe, &prep.test)?.hard, &test_truth, c)?.macro_f1,
    };
    let mut configs: Vec<ConfigResult> = sweep
        .pairs
        .par_iter()
        .map(|&(l, k)| {
            let ccfg = PipelineConfig { stages: l, entries: k, ..cfg.clone() };
            let candidates: Vec<usize> = match &sweep.depths {
                Some(ds) => ds.iter().copied().filter(|&d| d >= 1 && d <= l).collect(),
                None => (1..=l).collect(),
            };
            if candidates.is_empty() {
                return Err(Error::Config(format!("no candidate depth within 1..={l}")));
            }
            let mut conditions = Vec::new();

            let bal = train_stack(
                &prep.train,
                &prep.train_key,
                &TrainingRegime::balanced(prep.budget, derive_seed(cfg.root_seed, "regime/balanced")),
                &ccfg,
                false,
            )?;
            let val_codes = encode(&prep.val, &bal)?;
            let depth = select_depth(&candidates, |d| {
                let recon = reconstruct(&val_codes, &bal, d, &prep.val)?;
                Ok(macro_f1(&probe_predict(&prep.probe, &recon)?.hard, &val_truth, c)?.macro_f1)
            })?;
            let test_codes = encode(&prep.test, &bal)?;
            let recon = reconstruct(&test_codes, &bal, depth, &prep.test)?;
            let f1 = macro_f1(&probe_predict(&prep.probe, &recon)?.hard, &test_truth, c)?.macro_f1;
            conditions.push(ConditionResult { condition: "Bal".into(), depth, macro_f1: f1, delta: f1 - baseline });

            for &a in &sweep.bias_levels {
                let kind = if a == 100 { RegimeKind::Specific } else { RegimeKind::Biased };
                let stacks: Vec<RvqStack<f32>> = (0..c)
                    .map(|e| {
                        let seed = derive_seed(cfg.root_seed, &format!("regime/{}{}", names[e], a));
                        let r = regime_for(kind, Some(EmotionLabel(e as u8)), a, prep.budget, seed);
                        train_stack(&prep.train, &prep.train_key, &r, &ccfg, cfg.normalize)
                    })
                    .collect::<Result<_>>()?;
                let full = RouterBank::new(stacks.clone(), l, cfg.normalize)?;
                let profiles: Vec<Vec<Vec<f64>>> = prep
                    .val
                    .rows()
                    .map(|z| route_scores_by_depth(z, &full))
                    .collect::<Result<_>>()?;
                let depth = select_depth(&candidates, |d| {
                    let pred: Vec<EmotionLabel> =
                        profiles.iter().map(|p| EmotionLabel(argmax_lowest(&p[d - 1]) as u8)).collect();
                    Ok(macro_f1(&pred, &val_truth, c)?.macro_f1)
                })?;
                let bank = RouterBank::new(stacks, depth, cfg.normalize)?;
                let routed = route_batch(&prep.test, &bank, Some(baseline), Aggregation::Pooled)?;
                let f1 = routed.report.get(depth, ALL, "macro_f1").expect("route_batch reports macro_f1");
                conditions.push(ConditionResult { condition: format!("Emo-Q({a})"), depth, macro_f1: f1, delta: f1 - baseline });
            }
            Ok(ConfigResult {
                stages: l,
                entries: k,
                nominal_bitrate_bps: nominal_bitrate_for(k, l, cfg.frame_rate_hz)?,
                storage_bytes_per_stack: (l * k * set.dim() * 4) as u64,
                conditions,
            })
        })
        .collect::<Result<_>>()?;
    configs.sort_by_key(|c| sweep.pairs.iter().position(|p| *p == (c.stages, c.entries)));
    Ok(DeltaTable {
        seed: cfg.root_seed,
        baseline_macro_f1: baseline,
        continuous_bitrate_bps: continuous_bitrate(set.dim(), 32, cfg.frame_rate_hz),
        configs,
    })
}

/// Runs the routed-classification sweep for every seed and writes
/// `seed-<s>/{table.csv,report.csv,summary.json}` plus a seed-averaged
/// `table.csv` under `out_dir`.
pub fn run_sweep(
    set: &EmbeddingSet<f32>,
    sweep: &SweepConfig,
    baseline_f1: Option<f64>,
    cfg: &PipelineConfig,
    out_dir: &std::path::Path,
) -> Result<Vec<DeltaTable>> {
    sweep.validate()?;
    let mut tables = Vec::with_capacity(sweep.seeds.len());
    for &seed in &sweep.seeds {
        let scfg = PipelineConfig { root_seed: seed, ..cfg.clone() };
        let table = run_rq4(set, sweep, baseline_f1, &scfg)?;
        let dir = out_dir.join(format!("seed-{seed}"));
        crate::report::write_bytes(&dir.join("table.csv"), &table.to_csv_bytes()?)?;
        table.to_report().write_csv(&dir.join("report.csv"))?;
        let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Serde(e.to_string()))?;
        crate::report::write_bytes(&dir.join("summary.json"), json.as_bytes())?;
        tables.push(table);
    }
    crate::report::write_bytes(&out_dir.join("table.csv"), &mean_table_csv(&tables)?)?;
    let meta: BTreeMap<&str, String> = [
        ("frame_rate_hz", cfg.frame_rate_hz.to_string()),
        ("normalize", cfg.normalize.to_string()),
        ("bias_levels", sweep.bias_levels.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")),
        ("seeds", sweep.seeds.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")),
    ]
    .into_iter()
    .collect();
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    crate::report::write_bytes(&out_dir.join("sweep.json"), json.as_bytes())?;
    Ok(tables)
}
