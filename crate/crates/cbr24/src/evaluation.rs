//! Experimental protocol: SCO/SCD relevance, rank metrics averaged over
//! k in {1..5}, and the seeded 10-run x 30-holdout retrieval and generation
//! experiments with CSV/JSON reporting.

use crate::domain::{validate_answer, Verdict};
use crate::features::{encode_labels, extract_features, model_input};
use crate::network::{train, Example, LatentModel, TrainConfig, TrainError};
use crate::provider::{any_tip_admissible, Provider};
use crate::query::{build_query, QueryError, QueryKind};
use crate::repository::{Case, Repository};
use crate::retrieval::top_k;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

/// Relevance labeling scheme for retrieved cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "SCO")]
    Sco,
    #[serde(rename = "SCD")]
    Scd,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Sco, Scheme::Scd];

    pub fn code(self) -> &'static str {
        match self {
            Scheme::Sco => "SCO",
            Scheme::Scd => "SCD",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Which index vector drives similarity retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Features,
    Latent,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Features, Mode::Latent];

    pub fn code(self) -> &'static str {
        match self {
            Mode::Features => "features",
            Mode::Latent => "latent",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "features" => Ok(Mode::Features),
            "latent" => Ok(Mode::Latent),
            other => Err(format!("unknown mode '{other}' (expected features|latent)")),
        }
    }
}

/// SCO: the cases share at least one solution category. SCD: they share a
/// (category, large-value positions) decomposition.
pub fn is_relevant(test: &Case, candidate: &Case, scheme: Scheme) -> bool {
    test.solutions.iter().any(|s| {
        candidate.solutions.iter().any(|c| match scheme {
            Scheme::Sco => c.category == s.category,
            Scheme::Scd => c.category == s.category && c.large_positions == s.large_positions,
        })
    })
}

/// Rank metrics for one retrieval window. Fields are fractions in [0,1];
/// reports scale to percentages only at formatting time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

impl RetrievalMetrics {
    fn add(&mut self, other: &RetrievalMetrics) {
        self.precision += other.precision;
        self.recall += other.recall;
        self.f1 += other.f1;
        self.ndcg += other.ndcg;
        self.mrr += other.mrr;
    }

    fn scale(&mut self, factor: f64) {
        self.precision *= factor;
        self.recall *= factor;
        self.f1 *= factor;
        self.ndcg *= factor;
        self.mrr *= factor;
    }

    fn mean(items: impl IntoIterator<Item = RetrievalMetrics>) -> RetrievalMetrics {
        let mut sum = RetrievalMetrics::default();
        let mut n = 0usize;
        for item in items {
            sum.add(&item);
            n += 1;
        }
        if n > 0 {
            sum.scale(1.0 / n as f64);
        }
        sum
    }

    /// Sample standard deviation per field; zero for fewer than two items.
    fn std_dev(items: &[RetrievalMetrics], mean: &RetrievalMetrics) -> RetrievalMetrics {
        if items.len() < 2 {
            return RetrievalMetrics::default();
        }
        let denom = (items.len() - 1) as f64;
        let field = |get: fn(&RetrievalMetrics) -> f64| {
            (items.iter().map(|m| (get(m) - get(mean)).powi(2)).sum::<f64>() / denom).sqrt()
        };
        RetrievalMetrics {
            precision: field(|m| m.precision),
            recall: field(|m| m.recall),
            f1: field(|m| m.f1),
            ndcg: field(|m| m.ndcg),
            mrr: field(|m| m.mrr),
        }
    }
}

/// Metrics for one ranking truncated at k. `flags[i]` marks whether rank
/// i+1 is relevant; `relevant_total` counts relevant cases in the whole
/// candidate pool (the recall denominator). NDCG normalizes by the ideal
/// reordering of the k-window, so a window holding all its hits up front
/// scores 1 even when the pool holds more relevant cases than k.
pub fn metrics_at_k(flags: &[bool], relevant_total: usize, k: usize) -> RetrievalMetrics {
    if k == 0 {
        return RetrievalMetrics::default();
    }
    let window = &flags[..k.min(flags.len())];
    let hits = window.iter().filter(|&&f| f).count();
    let precision = hits as f64 / k as f64;
    let recall = if relevant_total == 0 {
        0.0
    } else {
        hits as f64 / relevant_total as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = window
        .iter()
        .enumerate()
        .filter(|&(_, &f)| f)
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..hits).map(discount).sum();
    let ndcg = if idcg == 0.0 { 0.0 } else { dcg / idcg };
    let mrr = window
        .iter()
        .position(|&f| f)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64);
    RetrievalMetrics {
        precision,
        recall,
        f1,
        ndcg,
        mrr,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const ROLE_HOLDOUT: u64 = 0;
pub const ROLE_TRAINING: u64 = 1;

/// Per-run seeds derived from the master seed by a fixed counter scheme,
/// so any single run can be reproduced in isolation.
pub fn derive_seed(master: u64, run: u64, role: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ run) ^ role)
}

/// Deterministic holdout: indices into the repository, sorted ascending.
pub fn sample_holdout(repo_len: usize, holdout: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, repo_len, holdout).into_vec();
    picked.sort_unstable();
    picked
}

pub const DEFAULT_RUNS: u32 = 10;
pub const DEFAULT_HOLDOUT: usize = 30;
pub const DEFAULT_MASTER_SEED: u64 = 24;

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSettings {
    pub runs: u32,
    pub holdout: usize,
    pub ks: Vec<usize>,
    pub master_seed: u64,
    /// Hyperparameter template; the seed field is replaced per run.
    pub train: TrainConfig,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            runs: DEFAULT_RUNS,
            holdout: DEFAULT_HOLDOUT,
            ks: (1..=5).collect(),
            master_seed: DEFAULT_MASTER_SEED,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("runs must be at least 1")]
    BadRuns,
    #[error("holdout size {holdout} must be at least 1 and smaller than the repository ({repo_len} cases)")]
    BadHoldout { holdout: usize, repo_len: usize },
    #[error("ks must be a nonempty list of ranks >= 1")]
    BadKs,
    #[error("query kinds must be nonempty")]
    BadKinds,
    #[error("training failed in run {run}: {source}")]
    Training {
        run: u32,
        #[source]
        source: TrainError,
    },
    #[error("query construction failed in run {run}: {source}")]
    Query {
        run: u32,
        #[source]
        source: QueryError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing csv report {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub run: u32,
    pub scheme: Scheme,
    pub mode: Mode,
    #[serde(flatten)]
    pub metrics: RetrievalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub scheme: Scheme,
    pub mode: Mode,
    pub mean: RetrievalMetrics,
    pub std: RetrievalMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalReport {
    pub generated_at_epoch_secs: u64,
    pub settings: ExperimentSettings,
    pub per_run: Vec<RunRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl RetrievalReport {
    pub fn aggregate_for(&self, scheme: Scheme, mode: Mode) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|row| row.scheme == scheme && row.mode == mode)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        write_json(self, path)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        create_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let io_err = |e: csv::Error| EvalError::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        w.write_record([
            "section",
            "run",
            "scheme",
            "mode",
            "precision",
            "recall",
            "f1",
            "ndcg",
            "mrr",
            "precision_std",
            "recall_std",
            "f1_std",
            "ndcg_std",
            "mrr_std",
        ])
        .map_err(io_err)?;
        for row in &self.per_run {
            let m = &row.metrics;
            w.write_record([
                "run".to_string(),
                row.run.to_string(),
                row.scheme.to_string(),
                row.mode.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.ndcg.to_string(),
                m.mrr.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])
            .map_err(io_err)?;
        }
        for row in &self.aggregate {
            let (m, s) = (&row.mean, &row.std);
            w.write_record([
                "aggregate".to_string(),
                String::new(),
                row.scheme.to_string(),
                row.mode.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.ndcg.to_string(),
                m.mrr.to_string(),
                s.precision.to_string(),
                s.recall.to_string(),
                s.f1.to_string(),
                s.ndcg.to_string(),
                s.mrr.to_string(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn validate(repo: &Repository, runs: u32, holdout: usize, ks: &[usize]) -> Result<(), EvalError> {
    if runs == 0 {
        return Err(EvalError::BadRuns);
    }
    if holdout == 0 || holdout >= repo.len() {
        return Err(EvalError::BadHoldout {
            holdout,
            repo_len: repo.len(),
        });
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::BadKs);
    }
    Ok(())
}

fn epoch_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn create_parent(path: &Path) -> Result<(), EvalError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| EvalError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    create_parent(path)?;
    let io_err = |e: std::io::Error| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut file = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut file, value).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    use std::io::Write;
    file.write_all(b"\n").map_err(io_err)?;
    file.flush().map_err(io_err)
}

/// The split one run works with: queries (holdout) and the candidate pool
/// (everything else), plus the per-run trained model.
struct RunContext<'a> {
    holdout: Vec<&'a Case>,
    pool: Vec<&'a Case>,
    holdout_ids: HashSet<String>,
    model: Option<LatentModel>,
}

fn split_run<'a>(
    repo: &'a Repository,
    master: u64,
    holdout: usize,
    train_cfg: Option<TrainConfig>,
    run: u32,
) -> Result<RunContext<'a>, EvalError> {
    let picked = sample_holdout(
        repo.len(),
        holdout,
        derive_seed(master, run as u64, ROLE_HOLDOUT),
    );
    let picked_set: HashSet<usize> = picked.iter().copied().collect();
    let holdout_cases: Vec<&Case> = picked.iter().map(|&i| &repo.cases()[i]).collect();
    let pool: Vec<&Case> = repo
        .cases()
        .iter()
        .enumerate()
        .filter(|(i, _)| !picked_set.contains(i))
        .map(|(_, c)| c)
        .collect();
    let holdout_ids: HashSet<String> = holdout_cases.iter().map(|c| c.id.clone()).collect();
    let model = match train_cfg {
        Some(template) => {
            let data: Vec<Example> = pool
                .iter()
                .map(|c| {
                    let f = extract_features(&c.puzzle);
                    (model_input(&c.puzzle, &f), encode_labels(&c.solutions))
                })
                .collect();
            let cfg = TrainConfig {
                seed: derive_seed(master, run as u64, ROLE_TRAINING),
                ..template
            };
            let (model, _) = train(&data, &cfg).map_err(|e| EvalError::Training {
                run,
                source: e,
            })?;
            Some(model)
        }
        None => None,
    };
    Ok(RunContext {
        holdout: holdout_cases,
        pool,
        holdout_ids,
        model,
    })
}

fn index_vector(case: &Case, mode: Mode, model: Option<&LatentModel>) -> Vec<f64> {
    let f = extract_features(&case.puzzle);
    match mode {
        Mode::Features => f.to_vec(),
        Mode::Latent => model
            .expect("latent mode requires a trained model")
            .latent(&model_input(&case.puzzle, &f)),
    }
}

fn retrieval_run(
    repo: &Repository,
    settings: &ExperimentSettings,
    run: u32,
) -> Result<Vec<RunRow>, EvalError> {
    let ctx = split_run(
        repo,
        settings.master_seed,
        settings.holdout,
        Some(settings.train),
        run,
    )?;
    let model = ctx.model.as_ref();
    let k_max = settings.ks.iter().copied().max().expect("ks validated nonempty");

    let mut indexes: HashMap<Mode, Vec<(String, Vec<f64>)>> = HashMap::new();
    for mode in Mode::ALL {
        let vectors = ctx
            .pool
            .iter()
            .map(|c| (c.id.clone(), index_vector(c, mode, model)))
            .collect();
        indexes.insert(mode, vectors);
    }
    let pool_by_id: HashMap<&str, &Case> = ctx.pool.iter().map(|c| (c.id.as_str(), *c)).collect();

    let mut sums: HashMap<(Scheme, Mode), RetrievalMetrics> = HashMap::new();
    for test in &ctx.holdout {
        let relevant_total: HashMap<Scheme, usize> = Scheme::ALL
            .into_iter()
            .map(|s| (s, ctx.pool.iter().filter(|c| is_relevant(test, c, s)).count()))
            .collect();
        for mode in Mode::ALL {
            let query = index_vector(test, mode, model);
            let ranked = top_k(
                &query,
                indexes[&mode].iter().map(|(id, v)| (id.as_str(), v.as_slice())),
                k_max,
                &ctx.holdout_ids,
            );
            for scheme in Scheme::ALL {
                let flags: Vec<bool> = ranked
                    .results
                    .iter()
                    .map(|r| is_relevant(test, pool_by_id[r.id.as_str()], scheme))
                    .collect();
                let over_ks = RetrievalMetrics::mean(
                    settings
                        .ks
                        .iter()
                        .map(|&k| metrics_at_k(&flags, relevant_total[&scheme], k)),
                );
                sums.entry((scheme, mode)).or_default().add(&over_ks);
            }
        }
    }

    let mut rows = Vec::new();
    for scheme in Scheme::ALL {
        for mode in Mode::ALL {
            let mut metrics = sums.remove(&(scheme, mode)).unwrap_or_default();
            metrics.scale(1.0 / ctx.holdout.len() as f64);
            rows.push(RunRow {
                run,
                scheme,
                mode,
                metrics,
            });
        }
    }
    Ok(rows)
}

/// Runs the full seeded retrieval experiment. Runs are independent and
/// execute in parallel; each is fully determined by its derived seeds.
pub fn run_retrieval_experiment(
    repo: &Repository,
    settings: &ExperimentSettings,
) -> Result<RetrievalReport, EvalError> {
    validate(repo, settings.runs, settings.holdout, &settings.ks)?;
    // runs are indexed, so the parallel collect keeps them in order
    let per_run: Vec<RunRow> = (0..settings.runs)
        .into_par_iter()
        .map(|run| retrieval_run(repo, settings, run))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut aggregate = Vec::new();
    for scheme in Scheme::ALL {
        for mode in Mode::ALL {
            let values: Vec<RetrievalMetrics> = per_run
                .iter()
                .filter(|r| r.scheme == scheme && r.mode == mode)
                .map(|r| r.metrics)
                .collect();
            let mean = RetrievalMetrics::mean(values.iter().copied());
            let std = RetrievalMetrics::std_dev(&values, &mean);
            aggregate.push(AggregateRow {
                scheme,
                mode,
                mean,
                std,
            });
        }
    }
    Ok(RetrievalReport {
        generated_at_epoch_secs: epoch_secs(),
        settings: settings.clone(),
        per_run,
        aggregate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationSettings {
    pub runs: u32,
    pub holdout: usize,
    pub master_seed: u64,
    pub train: TrainConfig,
    pub kinds: Vec<QueryKind>,
    /// Similarity mode that selects the TC context case.
    pub tc_mode: Mode,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            runs: DEFAULT_RUNS,
            holdout: DEFAULT_HOLDOUT,
            master_seed: DEFAULT_MASTER_SEED,
            train: TrainConfig::default(),
            kinds: QueryKind::ALL.to_vec(),
            tc_mode: Mode::Latent,
        }
    }
}

/// Raw tallies; rates derive from these so cross-run aggregation stays exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GenerationCounts {
    pub scored: u64,
    pub correct: u64,
    pub admissible: u64,
    pub admissible_correct: u64,
    pub inadmissible: u64,
    pub inadmissible_correct: u64,
    pub errored: u64,
}

impl GenerationCounts {
    fn absorb(&mut self, other: &GenerationCounts) {
        self.scored += other.scored;
        self.correct += other.correct;
        self.admissible += other.admissible;
        self.admissible_correct += other.admissible_correct;
        self.inadmissible += other.inadmissible;
        self.inadmissible_correct += other.inadmissible_correct;
        self.errored += other.errored;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationMetrics {
    pub accuracy: f64,
    /// Accuracy over cases whose context holds at least one workable tip.
    /// Present only for TC with a nonempty partition.
    pub faithfulness: Option<f64>,
    /// Accuracy over cases whose context holds no workable tip.
    pub negative_rejection: Option<f64>,
    pub errored_count: u64,
}

impl GenerationMetrics {
    fn from_counts(kind: QueryKind, c: &GenerationCounts) -> GenerationMetrics {
        let rate = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let tc = kind == QueryKind::TopContext;
        GenerationMetrics {
            accuracy: rate(c.correct, c.scored).unwrap_or(0.0),
            faithfulness: if tc { rate(c.admissible_correct, c.admissible) } else { None },
            negative_rejection: if tc {
                rate(c.inadmissible_correct, c.inadmissible)
            } else {
                None
            },
            errored_count: c.errored,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationRunRow {
    pub run: u32,
    pub kind: QueryKind,
    #[serde(flatten)]
    pub counts: GenerationCounts,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationAggregate {
    pub kind: QueryKind,
    pub counts: GenerationCounts,
    pub metrics: GenerationMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationReport {
    pub generated_at_epoch_secs: u64,
    pub provider: String,
    pub settings: GenerationSettings,
    pub per_run: Vec<GenerationRunRow>,
    pub aggregate: Vec<GenerationAggregate>,
}

impl GenerationReport {
    pub fn aggregate_for(&self, kind: QueryKind) -> Option<&GenerationAggregate> {
        self.aggregate.iter().find(|a| a.kind == kind)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        write_json(self, path)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        create_parent(path)?;
        let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let io_err = |e: csv::Error| EvalError::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        w.write_record([
            "section",
            "run",
            "kind",
            "scored",
            "correct",
            "errored",
            "admissible",
            "admissible_correct",
            "inadmissible",
            "inadmissible_correct",
            "accuracy",
            "faithfulness",
            "negative_rejection",
        ])
        .map_err(io_err)?;
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.per_run {
            let c = &row.counts;
            w.write_record([
                "run".to_string(),
                row.run.to_string(),
                row.kind.to_string(),
                c.scored.to_string(),
                c.correct.to_string(),
                c.errored.to_string(),
                c.admissible.to_string(),
                c.admissible_correct.to_string(),
                c.inadmissible.to_string(),
                c.inadmissible_correct.to_string(),
                String::new(),
                String::new(),
                String::new(),
            ])
            .map_err(io_err)?;
        }
        for row in &self.aggregate {
            let c = &row.counts;
            let m = &row.metrics;
            w.write_record([
                "aggregate".to_string(),
                String::new(),
                row.kind.to_string(),
                c.scored.to_string(),
                c.correct.to_string(),
                c.errored.to_string(),
                c.admissible.to_string(),
                c.admissible_correct.to_string(),
                c.inadmissible.to_string(),
                c.inadmissible_correct.to_string(),
                m.accuracy.to_string(),
                fmt_opt(m.faithfulness),
                fmt_opt(m.negative_rejection),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn write_transcript(
    dir: &Path,
    run: u32,
    kind: QueryKind,
    case_id: &str,
    system: &str,
    user: &str,
    response: &str,
    verdict: &str,
) -> Result<(), EvalError> {
    let sub = dir.join(format!("run{run:02}")).join(kind.code());
    std::fs::create_dir_all(&sub).map_err(|e| EvalError::Io {
        path: sub.clone(),
        source: e,
    })?;
    let path = sub.join(format!("{case_id}.txt"));
    let body = format!(
        "CASE: {case_id}\nKIND: {kind}\nVERDICT: {verdict}\n\n--- SYSTEM ---\n{system}\n\n--- USER ---\n{user}\n\n--- RESPONSE ---\n{response}\n"
    );
    std::fs::write(&path, body).map_err(|e| EvalError::Io { path, source: e })
}

fn generation_run(
    repo: &Repository,
    settings: &GenerationSettings,
    provider: &dyn Provider,
    transcripts: Option<&Path>,
    run: u32,
) -> Result<Vec<GenerationRunRow>, EvalError> {
    let wants_tc = settings.kinds.contains(&QueryKind::TopContext);
    let needs_model = wants_tc && settings.tc_mode == Mode::Latent;
    let ctx = split_run(
        repo,
        settings.master_seed,
        settings.holdout,
        needs_model.then_some(settings.train),
        run,
    )?;
    let model = ctx.model.as_ref();
    let tc_index: Option<Vec<(String, Vec<f64>)>> = wants_tc.then(|| {
        ctx.pool
            .iter()
            .map(|c| (c.id.clone(), index_vector(c, settings.tc_mode, model)))
            .collect()
    });

    let mut rows = Vec::new();
    for &kind in &settings.kinds {
        let mut counts = GenerationCounts::default();
        for test in &ctx.holdout {
            let retrieved: Option<&Case> = if kind == QueryKind::TopContext {
                let index = tc_index.as_ref().expect("TC index built");
                let query = index_vector(test, settings.tc_mode, model);
                let ranked = top_k(
                    &query,
                    index.iter().map(|(id, v)| (id.as_str(), v.as_slice())),
                    1,
                    &ctx.holdout_ids,
                );
                let top = ranked.results.first().expect("nonempty candidate pool");
                Some(pool_case(&ctx.pool, &top.id))
            } else {
                None
            };
            let bundle = build_query(&test.puzzle, kind, retrieved)
                .map_err(|e| EvalError::Query { run, source: e })?;
            let response = match provider.generate(&bundle) {
                Ok(text) => text,
                Err(_) => {
                    counts.errored += 1;
                    continue;
                }
            };
            let verdict = match crate::query::parse_final_answer(&response) {
                Some(expr) => validate_answer(&test.puzzle, &expr),
                None => Verdict::Incorrect,
            };
            let correct = verdict == Verdict::Correct;
            counts.scored += 1;
            counts.correct += u64::from(correct);
            if kind == QueryKind::TopContext {
                if any_tip_admissible(&test.puzzle, &bundle.tips) {
                    counts.admissible += 1;
                    counts.admissible_correct += u64::from(correct);
                } else {
                    counts.inadmissible += 1;
                    counts.inadmissible_correct += u64::from(correct);
                }
            }
            if let Some(dir) = transcripts {
                write_transcript(
                    dir,
                    run,
                    kind,
                    &test.id,
                    &bundle.system,
                    &bundle.user,
                    &response,
                    &verdict.to_string(),
                )?;
            }
        }
        rows.push(GenerationRunRow { run, kind, counts });
    }
    Ok(rows)
}

fn pool_case<'a>(pool: &[&'a Case], id: &str) -> &'a Case {
    pool.iter()
        .find(|c| c.id == id)
        .expect("retrieved id comes from the pool")
}

/// Runs the generation experiment over the same seeded holdouts as the
/// retrieval experiment. Rates aggregate from raw counts across all runs.
pub fn run_generation_experiment(
    repo: &Repository,
    settings: &GenerationSettings,
    provider: &dyn Provider,
    transcripts: Option<&Path>,
) -> Result<GenerationReport, EvalError> {
    validate(repo, settings.runs, settings.holdout, &[1])?;
    if settings.kinds.is_empty() {
        return Err(EvalError::BadKinds);
    }
    let mut per_run = Vec::new();
    for run in 0..settings.runs {
        per_run.extend(generation_run(repo, settings, provider, transcripts, run)?);
    }
    let mut aggregate = Vec::new();
    for &kind in &settings.kinds {
        let mut counts = GenerationCounts::default();
        for row in per_run.iter().filter(|r| r.kind == kind) {
            counts.absorb(&row.counts);
        }
        aggregate.push(GenerationAggregate {
            kind,
            counts,
            metrics: GenerationMetrics::from_counts(kind, &counts),
        });
    }
    Ok(GenerationReport {
        generated_at_epoch_secs: epoch_secs(),
        provider: provider.name().to_string(),
        settings: settings.clone(),
        per_run,
        aggregate,
    })
}
