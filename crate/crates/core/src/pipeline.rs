//! File-backed pipeline stages driven by one TOML config. Every stage reads
//! and writes fixed file names inside the work directory and records a
//! manifest with the config hash, seed and input/output digests.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    correlation_matrix, frequency_report, group_records, metrics_csv, semantic_labels_for, structural_metrics,
    words_csv, AnalysisError, SemanticResult, StructuralRecord, Stopwords,
};
use crate::corpus::{corpus_ndjson, generate_corpus, CorpusConfig};
use crate::explain::{explain_all, select_exemplars, ExplainError, Explanation, SubgraphXConfig, Verdict};
use crate::features::{assign_features, hash_embed, load_embeddings, read_labels, FeatureError, FeaturedGraph};
use crate::gcn::{evaluate, history_csv, train, GcnError, GcnModel, Reference, TrainConfig};
use crate::graph::{graph_to_json, read_graphs, tree_to_graph, GraphError, SentenceGraph};
use crate::hpo::{
    evolutionary_search, explanation_objective, objective, objective_raw_sum, random_search, HpoError, SearchOutcome,
    SearchSpace, TrialEval,
};
use crate::treebank::{read_trees_file, TreeError, UnknownLabelPolicy};

pub const CORPUS: &str = "corpus.ndjson";
pub const GRAPHS: &str = "graphs.ndjson";
pub const LABELED_GRAPHS: &str = "labeled_graphs.ndjson";
pub const EMBEDDINGS: &str = "embeddings.ndjson";
pub const SPLIT: &str = "split.json";
pub const MODEL: &str = "model.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const EXPLANATIONS: &str = "explanations.ndjson";
pub const EXEMPLARS: &str = "exemplars.json";
pub const HPO_REPORT: &str = "hpo_report.csv";
pub const BEST_CONFIG: &str = "best_config.json";
pub const SEMANTIC: &str = "semantic.ndjson";
pub const WORDS: &str = "words.csv";
pub const METRICS: &str = "metrics.csv";
pub const CORRELATIONS: &str = "correlations";
pub const SUMMARY: &str = "report/summary.json";
pub const MANIFESTS: &str = "manifests";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("missing input {0}; run the producing stage first or set it in the config")]
    MissingInput(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] GcnError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("internal: {0}")]
    Internal(String),
}

impl PipelineError {
    /// 1 for problems with the user's inputs or config, 2 for internal faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Internal(_) | PipelineError::Analysis(AnalysisError::Csv(_)) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::MissingInput(_) => "missing_input",
            PipelineError::Tree(_) => "treebank",
            PipelineError::Graph(_) => "graph",
            PipelineError::Feature(_) => "features",
            PipelineError::Model(_) => "model",
            PipelineError::Explain(_) => "explain",
            PipelineError::Hpo(_) => "hpo",
            PipelineError::Analysis(_) => "analysis",
            PipelineError::Internal(_) => "internal",
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Trees as bracketed lines or NDJSON; defaults to the generated corpus.
    pub trees: Option<PathBuf>,
    /// Embedding NDJSON; hash features are used when absent.
    pub embeddings: Option<PathBuf>,
    /// Teacher label NDJSON; labels embedded in the trees are used when absent.
    pub labels: Option<PathBuf>,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub dim: usize,
    pub label_policy: UnknownLabelPolicy,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            dim: 32,
            label_policy: UnknownLabelPolicy::MapToNotAConstituent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    /// Share of graphs held out from training for evaluation and explanation.
    pub test_fraction: f64,
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            test_fraction: 0.2,
            config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    /// Explain only the first this many held-out graphs.
    pub sample_size: Option<usize>,
    #[serde(flatten)]
    pub config: SubgraphXConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpoMethod {
    #[default]
    Random,
    Evolutionary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoSettings {
    pub method: HpoMethod,
    pub budget: usize,
    pub population: usize,
    pub generations: usize,
    /// Training graphs explained per trial.
    pub sample_size: usize,
    /// Sum over samples instead of averaging.
    pub raw_sum: bool,
}

impl Default for HpoSettings {
    fn default() -> Self {
        HpoSettings {
            method: HpoMethod::Random,
            budget: 20,
            population: 6,
            generations: 3,
            sample_size: 20,
            raw_sum: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Stopword list, one word per line; the bundled English list when absent.
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub features: FeatureSettings,
    pub train: TrainSettings,
    pub explain: ExplainSettings,
    pub hpo: HpoSettings,
    pub analysis: AnalysisSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            paths: Paths {
                workdir: PathBuf::from("work"),
                ..Paths::default()
            },
            corpus: CorpusConfig::default(),
            features: FeatureSettings::default(),
            train: TrainSettings::default(),
            explain: ExplainSettings::default(),
            hpo: HpoSettings::default(),
            analysis: AnalysisSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    /// The global seed overrides every stage seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.corpus.seed = seed;
        self.train.config.rng_seed = seed;
        self.explain.config.rng_seed = seed;
    }

    /// Digest of the effective config, ignoring where the work directory lives.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths.workdir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("configs serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn work(&self, name: &str) -> PathBuf {
        self.paths.workdir.join(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Corpus,
    Graphs,
    Features,
    Train,
    Eval,
    Explain,
    Hpo,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Corpus,
        Stage::Graphs,
        Stage::Features,
        Stage::Train,
        Stage::Eval,
        Stage::Explain,
        Stage::Hpo,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Graphs => "graphs",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Explain => "explain",
            Stage::Hpo => "hpo",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

/// Files a stage touched, keyed by display name.
#[derive(Debug, Default)]
struct Touched {
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
}

impl Touched {
    fn input(&mut self, cfg: &PipelineConfig, path: &Path) {
        self.inputs.push((display_name(cfg, path), path.to_path_buf()));
    }
    fn output(&mut self, cfg: &PipelineConfig, path: &Path) {
        self.outputs.push((display_name(cfg, path), path.to_path_buf()));
    }
}

fn display_name(cfg: &PipelineConfig, path: &Path) -> String {
    path.strip_prefix(&cfg.paths.workdir)
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .unwrap_or_else(|_| path.display().to_string())
}

/// Digest of a file's bytes. The HPO report's wall-time column is left out so
/// the digest only covers reproducible content.
fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if path.file_name().is_some_and(|n| n == HPO_REPORT) {
        let text = String::from_utf8_lossy(&bytes);
        let stable = strip_last_column(&text);
        return Ok(hex::encode(Sha256::digest(stable.as_bytes())));
    }
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Drops the final comma-separated field of every line.
pub fn strip_last_column(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn to_json_pretty<T: Serialize>(v: &T) -> Result<String, PipelineError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| PipelineError::Internal(e.to_string()))
}

fn ndjson<T: Serialize>(items: &[T]) -> Result<String, PipelineError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| PipelineError::Internal(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn write_manifest(cfg: &PipelineConfig, stage: Stage, touched: &Touched) -> Result<PathBuf, PipelineError> {
    let digests = |list: &[(String, PathBuf)]| -> Result<BTreeMap<String, String>, PipelineError> {
        list.iter().map(|(name, p)| Ok((name.clone(), file_digest(p)?))).collect()
    };
    let manifest = json!({
        "stage": stage.name(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "inputs": digests(&touched.inputs)?,
        "outputs": digests(&touched.outputs)?,
        "digest_excludes": { HPO_REPORT: ["wall_time"] },
    });
    let path = cfg.work(&format!("{MANIFESTS}/{}.json", stage.name()));
    write_file(&path, to_json_pretty(&manifest)?)?;
    Ok(path)
}

/// Runs one stage and writes its manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    let mut t = Touched::default();
    match stage {
        Stage::Corpus => stage_corpus(cfg, &mut t)?,
        Stage::Graphs => stage_graphs(cfg, &mut t)?,
        Stage::Features => stage_features(cfg, &mut t)?,
        Stage::Train => stage_train(cfg, &mut t)?,
        Stage::Eval => stage_eval(cfg, &mut t)?,
        Stage::Explain => stage_explain(cfg, &mut t)?,
        Stage::Hpo => stage_hpo(cfg, &mut t)?,
        Stage::Analyze => stage_analyze(cfg, &mut t)?,
        Stage::Report => stage_report(cfg, &mut t)?,
    }
    write_manifest(cfg, stage, &t)
}

/// Every stage in order. The corpus stage is skipped when trees are supplied.
pub fn run_all(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    for stage in Stage::ALL {
        if stage == Stage::Corpus && cfg.paths.trees.is_some() {
            continue;
        }
        run_stage(stage, cfg)?;
    }
    Ok(())
}

fn stage_corpus(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    let out = cfg.work(CORPUS);
    write_file(&out, corpus_ndjson(&generate_corpus(&cfg.corpus)))?;
    t.output(cfg, &out);
    Ok(())
}

fn trees_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.trees.clone().unwrap_or_else(|| cfg.work(CORPUS))
}

fn stage_graphs(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    let src = trees_path(cfg);
    if !src.exists() {
        return Err(PipelineError::MissingInput(src.display().to_string()));
    }
    let trees = read_trees_file(&src)?;
    let mut out = String::new();
    for tree in &trees {
        out.push_str(&graph_to_json(&tree_to_graph(tree, cfg.features.label_policy)?));
        out.push('\n');
    }
    let dst = cfg.work(GRAPHS);
    write_file(&dst, out)?;
    t.input(cfg, &src);
    t.output(cfg, &dst);
    Ok(())
}

fn load_graph_file(path: &Path) -> Result<Vec<SentenceGraph>, PipelineError> {
    Ok(read_graphs(read_file(path)?.as_bytes())?)
}

fn stage_features(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    let src = cfg.work(GRAPHS);
    let mut graphs = load_graph_file(&src)?;
    t.input(cfg, &src);

    if let Some(labels) = &cfg.paths.labels {
        let records = read_labels(read_file(labels)?.as_bytes())?;
        let by_id: HashMap<&str, usize> = records.iter().map(|r| (r.graph_id.as_str(), r.teacher_label)).collect();
        for g in &mut graphs {
            g.teacher_label = by_id.get(g.sentence_id.as_str()).copied();
        }
        t.input(cfg, labels);
    }

    let tables = match &cfg.paths.embeddings {
        Some(path) => {
            if !path.exists() {
                return Err(PipelineError::MissingInput(path.display().to_string()));
            }
            let mut by_id: HashMap<String, _> = load_embeddings(path)?
                .into_iter()
                .map(|table| (table.graph_id.clone(), table))
                .collect();
            t.input(cfg, path);
            graphs
                .iter()
                .map(|g| {
                    by_id.remove(&g.sentence_id).ok_or_else(|| {
                        PipelineError::MissingInput(format!("embeddings for graph `{}`", g.sentence_id))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => graphs
            .iter()
            .map(|g| hash_embed(g, cfg.features.dim, cfg.seed))
            .collect::<Result<Vec<_>, _>>()?,
    };
    // Fail here, not in training, when a vector or label is missing.
    for (g, table) in graphs.iter().zip(&tables) {
        assign_features(g, table)?;
    }

    let graphs_out = cfg.work(LABELED_GRAPHS);
    write_file(&graphs_out, graphs.iter().map(|g| graph_to_json(g) + "\n").collect::<String>())?;
    let emb_out = cfg.work(EMBEDDINGS);
    write_file(&emb_out, tables.iter().map(|t| t.to_json() + "\n").collect::<String>())?;
    t.output(cfg, &graphs_out);
    t.output(cfg, &emb_out);
    Ok(())
}

/// Featured graphs in file order, from the features stage outputs.
pub fn load_featured(cfg: &PipelineConfig, t: &mut impl FnMut(&Path)) -> Result<Vec<FeaturedGraph>, PipelineError> {
    let gpath = cfg.work(LABELED_GRAPHS);
    let epath = cfg.work(EMBEDDINGS);
    let graphs = load_graph_file(&gpath)?;
    read_file(&epath)?;
    let mut tables: HashMap<String, _> = load_embeddings(&epath)?
        .into_iter()
        .map(|table| (table.graph_id.clone(), table))
        .collect();
    t(&gpath);
    t(&epath);
    graphs
        .iter()
        .map(|g| {
            let table = tables
                .remove(&g.sentence_id)
                .ok_or_else(|| PipelineError::MissingInput(format!("embeddings for graph `{}`", g.sentence_id)))?;
            Ok(assign_features(g, &table)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded hold-out; both sides keep file order.
pub fn split_ids(ids: &[String], test_fraction: f64, seed: u64) -> Split {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(SPLIT_SALT)));
    let n_test = ((ids.len() as f64) * test_fraction).round() as usize;
    let mut test_idx: Vec<usize> = order[..n_test.min(ids.len())].to_vec();
    test_idx.sort_unstable();
    let is_test: std::collections::HashSet<usize> = test_idx.iter().copied().collect();
    Split {
        train: (0..ids.len()).filter(|i| !is_test.contains(i)).map(|i| ids[i].clone()).collect(),
        test: test_idx.into_iter().map(|i| ids[i].clone()).collect(),
    }
}

/// Keeps the split stream apart from the training shuffle of the same seed.
const SPLIT_SALT: u64 = 0x5eed_0517;

fn pick<'a>(data: &'a [FeaturedGraph], ids: &[String]) -> Vec<&'a FeaturedGraph> {
    let by_id: HashMap<&str, &FeaturedGraph> = data.iter().map(|fg| (fg.graph.sentence_id.as_str(), fg)).collect();
    ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
}

fn owned(refs: Vec<&FeaturedGraph>) -> Vec<FeaturedGraph> {
    refs.into_iter().cloned().collect()
}

fn stage_train(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    if !(0.0..1.0).contains(&cfg.train.test_fraction) {
        return Err(PipelineError::Config("train.test_fraction must lie in [0, 1)".into()));
    }
    cfg.train.config.validate()?;
    let mut inputs = Vec::new();
    let data = load_featured(cfg, &mut |p| inputs.push(p.to_path_buf()))?;
    inputs.iter().for_each(|p| t.input(cfg, p));
    let ids: Vec<String> = data.iter().map(|fg| fg.graph.sentence_id.clone()).collect();
    let split = split_ids(&ids, cfg.train.test_fraction, cfg.seed);
    let train_set = owned(pick(&data, &split.train));
    let outcome = train(&train_set, &cfg.train.config)?;

    for (name, contents) in [
        (MODEL, outcome.model.to_checkpoint_json() + "\n"),
        (TRAIN_LOG, history_csv(&outcome.history)),
        (SPLIT, to_json_pretty(&split)?),
    ] {
        let path = cfg.work(name);
        write_file(&path, contents)?;
        t.output(cfg, &path);
    }
    Ok(())
}

fn load_model(cfg: &PipelineConfig, t: &mut Touched) -> Result<GcnModel, PipelineError> {
    let path = cfg.work(MODEL);
    let model = GcnModel::from_checkpoint_json(&read_file(&path)?)?;
    t.input(cfg, &path);
    Ok(model)
}

fn load_split(cfg: &PipelineConfig, t: &mut Touched) -> Result<Split, PipelineError> {
    let path = cfg.work(SPLIT);
    let split = serde_json::from_str(&read_file(&path)?).map_err(|e| io_err(&path, e))?;
    t.input(cfg, &path);
    Ok(split)
}

fn stage_eval(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    let model = load_model(cfg, t)?;
    let split = load_split(cfg, t)?;
    let mut inputs = Vec::new();
    let data = load_featured(cfg, &mut |p| inputs.push(p.to_path_buf()))?;
    inputs.iter().for_each(|p| t.input(cfg, p));

    let mut report = serde_json::Map::new();
    for (name, ids) in [("train", &split.train), ("test", &split.test)] {
        let part = owned(pick(&data, ids));
        let mut entry = serde_json::Map::new();
        entry.insert("graphs".into(), json!(part.len()));
        if !part.is_empty() {
            entry.insert("teacher".into(), json!(evaluate(&model, &part, Reference::Teacher)?));
            if part.iter().all(|fg| fg.gold_label.is_some()) {
                entry.insert("gold".into(), json!(evaluate(&model, &part, Reference::Gold)?));
            }
        }
        report.insert(name.into(), Value::Object(entry));
    }
    let path = cfg.work(EVAL_REPORT);
    write_file(&path, to_json_pretty(&report)?)?;
    t.output(cfg, &path);
    Ok(())
}

fn stage_explain(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    // Reject bad settings before touching any model file.
    cfg.explain.config.validate()?;
    let model = load_model(cfg, t)?;
    let split = load_split(cfg, t)?;
    let mut inputs = Vec::new();
    let data = load_featured(cfg, &mut |p| inputs.push(p.to_path_buf()))?;
    inputs.iter().for_each(|p| t.input(cfg, p));

    let mut targets = owned(pick(&data, &split.test));
    if let Some(n) = cfg.explain.sample_size {
        targets.truncate(n);
    }
    let explanations = explain_all(&model, &targets, &cfg.explain.config)?;
    let exemplars = select_exemplars(&explanations);
    let named = |i: Option<usize>| i.map(|i| explanations[i].graph_id.clone());
    let exemplar_json = json!({
        "essential": named(exemplars.essential),
        "noise": named(exemplars.noise),
        "wrong": named(exemplars.wrong),
        "neglected": named(exemplars.neglected),
    });

    let e_path = cfg.work(EXPLANATIONS);
    write_file(&e_path, ndjson(&explanations)?)?;
    let x_path = cfg.work(EXEMPLARS);
    write_file(&x_path, to_json_pretty(&exemplar_json)?)?;
    t.output(cfg, &e_path);
    t.output(cfg, &x_path);
    Ok(())
}

fn stage_hpo(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    cfg.explain.config.validate()?;
    let h = &cfg.hpo;
    let model = load_model(cfg, t)?;
    let split = load_split(cfg, t)?;
    let mut inputs = Vec::new();
    let data = load_featured(cfg, &mut |p| inputs.push(p.to_path_buf()))?;
    inputs.iter().for_each(|p| t.input(cfg, p));

    let mut sample = owned(pick(&data, &split.train));
    sample.truncate(h.sample_size);
    if sample.is_empty() {
        return Err(PipelineError::Config("hpo needs at least one training graph".into()));
    }
    let raw_sum = h.raw_sum;
    let eval = |c: &SubgraphXConfig| -> Result<TrialEval, HpoError> {
        let mut e = explanation_objective(&model, &sample, c)?;
        if raw_sum {
            e.objective = objective_raw_sum(&e.triples)?;
        }
        Ok(e)
    };
    let space = SearchSpace::table1();
    let base = &cfg.explain.config;
    let outcome: SearchOutcome = match h.method {
        HpoMethod::Random => random_search(&space, base, &eval, h.budget, cfg.seed)?,
        HpoMethod::Evolutionary => evolutionary_search(&space, base, &eval, h.population, h.generations, cfg.seed)?,
    };
    let r_path = cfg.work(HPO_REPORT);
    write_file(&r_path, outcome.to_csv())?;
    let b_path = cfg.work(BEST_CONFIG);
    write_file(
        &b_path,
        to_json_pretty(&json!({
            "objective": outcome.best.objective,
            "trial_index": outcome.best.index,
            "config": outcome.best.config,
        }))?,
    )?;
    t.output(cfg, &r_path);
    t.output(cfg, &b_path);
    Ok(())
}

fn load_explanations(cfg: &PipelineConfig, t: &mut Touched) -> Result<Vec<Explanation>, PipelineError> {
    let path = cfg.work(EXPLANATIONS);
    let text = read_file(&path)?;
    t.input(cfg, &path);
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io_err(&path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn stage_analyze(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    let explanations = load_explanations(cfg, t)?;
    let gpath = cfg.work(LABELED_GRAPHS);
    let graphs: HashMap<String, SentenceGraph> = load_graph_file(&gpath)?
        .into_iter()
        .map(|g| (g.sentence_id.clone(), g))
        .collect();
    t.input(cfg, &gpath);
    let custom;
    let stopwords = match &cfg.analysis.stopwords {
        Some(p) => {
            custom = Stopwords::from_text(&read_file(p)?);
            t.input(cfg, p);
            &custom
        }
        None => Stopwords::builtin(),
    };

    let mut semantic: Vec<SemanticResult> = Vec::new();
    let mut records: Vec<StructuralRecord> = Vec::new();
    for e in &explanations {
        let g = graphs
            .get(&e.graph_id)
            .ok_or_else(|| PipelineError::MissingInput(format!("graph `{}`", e.graph_id)))?;
        semantic.push(semantic_labels_for(g, e, stopwords)?);
        let mut rec = structural_metrics(g)?;
        rec.predicted_class = Some(e.predicted_class);
        rec.correctness = Some(e.correctness);
        records.push(rec);
    }

    let s_path = cfg.work(SEMANTIC);
    write_file(&s_path, ndjson(&semantic)?)?;
    let w_path = cfg.work(WORDS);
    write_file(&w_path, words_csv(&frequency_report(&semantic))?)?;
    let m_path = cfg.work(METRICS);
    write_file(&m_path, metrics_csv(&records)?)?;
    for p in [&s_path, &w_path, &m_path] {
        t.output(cfg, p);
    }
    for ((class, correctness), group) in group_records(&records) {
        if group.len() < 3 {
            continue;
        }
        let matrix = correlation_matrix(&group)?;
        let class = class.map_or("none".to_string(), |c| c.to_string());
        let stem = format!("{CORRELATIONS}/class{class}_{correctness}");
        let csv_path = cfg.work(&format!("{stem}.csv"));
        write_file(&csv_path, matrix.to_csv()?)?;
        let svg_path = cfg.work(&format!("{stem}.svg"));
        write_file(
            &svg_path,
            matrix.to_svg(&format!("class {class}, {correctness} ({} graphs)", group.len())),
        )?;
        t.output(cfg, &csv_path);
        t.output(cfg, &svg_path);
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn stage_report(cfg: &PipelineConfig, t: &mut Touched) -> Result<(), PipelineError> {
    let explanations = load_explanations(cfg, t)?;
    let mut summary = serde_json::Map::new();
    summary.insert("seed".into(), json!(cfg.seed));
    summary.insert("config_sha256".into(), json!(cfg.digest()));

    let eval_path = cfg.work(EVAL_REPORT);
    if eval_path.exists() {
        let eval: Value = serde_json::from_str(&read_file(&eval_path)?).map_err(|e| io_err(&eval_path, e))?;
        let pick = |part: &str, reference: &str, key: &str| eval[part][reference][key].clone();
        summary.insert(
            "classifier".into(),
            json!({
                "test_accuracy_vs_teacher": pick("test", "teacher", "accuracy"),
                "test_macro_f1_vs_teacher": pick("test", "teacher", "macro_f1"),
                "test_accuracy_vs_gold": pick("test", "gold", "accuracy"),
                "test_macro_f1_vs_gold": pick("test", "gold", "macro_f1"),
            }),
        );
        t.input(cfg, &eval_path);
    }

    let triples: Vec<(f64, f64, f64)> = explanations.iter().map(|e| (e.s_masked, e.s_unmasked, e.sparsity)).collect();
    let essential = explanations.iter().filter(|e| e.verdict == Verdict::Essential).count();
    summary.insert(
        "explanations".into(),
        json!({
            "count": explanations.len(),
            "essential": essential,
            "noisy": explanations.len() - essential,
            "mean_fidelity": mean(explanations.iter().map(|e| e.fidelity)),
            "mean_sparsity": mean(explanations.iter().map(|e| e.sparsity)),
            "mean_s_masked": mean(explanations.iter().map(|e| e.s_masked)),
            "mean_s_unmasked": mean(explanations.iter().map(|e| e.s_unmasked)),
            "objective": objective(&triples).ok(),
        }),
    );

    let best_path = cfg.work(BEST_CONFIG);
    if best_path.exists() {
        let best: Value = serde_json::from_str(&read_file(&best_path)?).map_err(|e| io_err(&best_path, e))?;
        summary.insert("hpo_best".into(), best);
        t.input(cfg, &best_path);
    }

    let mut artifacts = BTreeMap::new();
    let mut names: Vec<String> = [
        SPLIT, MODEL, TRAIN_LOG, EVAL_REPORT, EXPLANATIONS, EXEMPLARS, HPO_REPORT, BEST_CONFIG, SEMANTIC, WORDS, METRICS,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if let Ok(dir) = fs::read_dir(cfg.work(CORRELATIONS)) {
        let mut extra: Vec<String> = dir
            .filter_map(Result::ok)
            .map(|e| format!("{CORRELATIONS}/{}", e.file_name().to_string_lossy()))
            .collect();
        extra.sort();
        names.extend(extra);
    }
    for name in names {
        let path = cfg.work(&name);
        if path.exists() {
            artifacts.insert(name, file_digest(&path)?);
            t.input(cfg, &path);
        }
    }
    summary.insert("artifacts_sha256".into(), json!(artifacts));

    let path = cfg.work(SUMMARY);
    write_file(&path, to_json_pretty(&summary)?)?;
    t.output(cfg, &path);
    Ok(())
}
