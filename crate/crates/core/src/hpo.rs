//! Black-box search over explainer hyperparameters, scored by the mean of
//! masked score, unmasked score and sparsity over a sample of graphs.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explain::{explain_graph, SubgraphXConfig};
use crate::features::FeaturedGraph;
use crate::gcn::GcnModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpoError {
    #[error("objective needs at least one triple")]
    EmptyList,
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("population must be at least 2, got {0}")]
    PopulationTooSmall(usize),
    #[error("trial evaluation failed: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Integer,
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

/// Searched fields, in space order.
pub const FIELDS: [&str; 8] = [
    "num_hops",
    "rollout",
    "min_atoms",
    "c_exploration",
    "expand_atoms",
    "local_radius",
    "sample_num",
    "max_nodes",
];

impl SearchSpace {
    /// The explainer's published search ranges.
    pub fn table1() -> Self {
        let spec = |name: &str, kind, low, high| ParamSpec {
            name: name.to_string(),
            kind,
            low,
            high,
        };
        use ParamKind::*;
        SearchSpace {
            params: vec![
                spec("num_hops", Integer, 1.0, 5.0),
                spec("rollout", Integer, 50.0, 300.0),
                spec("min_atoms", Integer, 1.0, 10.0),
                spec("c_exploration", Float, 0.1, 30.0),
                spec("expand_atoms", Integer, 1.0, 5.0),
                spec("local_radius", Integer, 1.0, 5.0),
                spec("sample_num", Integer, 1.0, 5.0),
                spec("max_nodes", Integer, 2.0, 40.0),
            ],
        }
    }

    fn sample_field(&self, i: usize, rng: &mut ChaCha8Rng) -> f64 {
        let p = &self.params[i];
        match p.kind {
            ParamKind::Integer => rng.random_range(p.low as i64..=p.high as i64) as f64,
            ParamKind::Float => rng.random_range(p.low..=p.high),
        }
    }

    /// Draws uniformly until the config passes validation.
    pub fn sample(&self, base: &SubgraphXConfig, rng: &mut ChaCha8Rng) -> SubgraphXConfig {
        loop {
            let values: Vec<f64> = (0..self.params.len()).map(|i| self.sample_field(i, rng)).collect();
            let cfg = self.with_values(base, &values);
            if cfg.validate().is_ok() {
                return cfg;
            }
        }
    }

    /// Resamples each field with probability 1/k (at least one field), redrawing invalid results.
    pub fn mutate(&self, cfg: &SubgraphXConfig, rng: &mut ChaCha8Rng) -> SubgraphXConfig {
        let k = self.params.len();
        loop {
            let mut values = self.values(cfg);
            let forced = rng.random_range(0..k);
            for (i, v) in values.iter_mut().enumerate() {
                if i == forced || rng.random_bool(1.0 / k as f64) {
                    *v = self.sample_field(i, rng);
                }
            }
            let child = self.with_values(cfg, &values);
            if child.validate().is_ok() {
                return child;
            }
        }
    }

    pub fn values(&self, cfg: &SubgraphXConfig) -> Vec<f64> {
        self.params.iter().map(|p| field(cfg, &p.name)).collect()
    }

    pub fn with_values(&self, base: &SubgraphXConfig, values: &[f64]) -> SubgraphXConfig {
        let mut cfg = base.clone();
        for (p, &v) in self.params.iter().zip(values) {
            set_field(&mut cfg, &p.name, v);
        }
        cfg
    }

    pub fn contains(&self, cfg: &SubgraphXConfig) -> bool {
        self.params.iter().all(|p| {
            let v = field(cfg, &p.name);
            v >= p.low && v <= p.high && (p.kind == ParamKind::Float || v.fract() == 0.0)
        })
    }
}

fn field(cfg: &SubgraphXConfig, name: &str) -> f64 {
    match name {
        "num_hops" => cfg.num_hops as f64,
        "rollout" => cfg.rollout as f64,
        "min_atoms" => cfg.min_atoms as f64,
        "c_exploration" => cfg.c_exploration,
        "expand_atoms" => cfg.expand_atoms as f64,
        "local_radius" => cfg.local_radius as f64,
        "sample_num" => cfg.sample_num as f64,
        "max_nodes" => cfg.max_nodes as f64,
        other => panic!("unknown search field {other}"),
    }
}

fn set_field(cfg: &mut SubgraphXConfig, name: &str, v: f64) {
    let u = v as usize;
    match name {
        "num_hops" => cfg.num_hops = u,
        "rollout" => cfg.rollout = u,
        "min_atoms" => cfg.min_atoms = u,
        "c_exploration" => cfg.c_exploration = v,
        "expand_atoms" => cfg.expand_atoms = u,
        "local_radius" => cfg.local_radius = u,
        "sample_num" => cfg.sample_num = u,
        "max_nodes" => cfg.max_nodes = u,
        other => panic!("unknown search field {other}"),
    }
}

/// One third of the summed means of masked score, unmasked score and sparsity.
pub fn objective(triples: &[(f64, f64, f64)]) -> Result<f64, HpoError> {
    let raw = objective_raw_sum(triples)?;
    Ok(raw / triples.len() as f64)
}

/// The unnormalized variant: sums over samples, not means.
pub fn objective_raw_sum(triples: &[(f64, f64, f64)]) -> Result<f64, HpoError> {
    if triples.is_empty() {
        return Err(HpoError::EmptyList);
    }
    let (m, u, s) = triples
        .iter()
        .fold((0.0, 0.0, 0.0), |(a, b, c), &(x, y, z)| (a + x, b + y, c + z));
    Ok((m + u + s) / 3.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialEval {
    pub objective: f64,
    pub triples: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub config: SubgraphXConfig,
    pub objective: f64,
    pub triples: Vec<(f64, f64, f64)>,
    /// Seconds; not reproducible across runs.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: TrialResult,
    pub history: Vec<TrialResult>,
}

impl SearchOutcome {
    fn from_history(history: Vec<TrialResult>) -> Self {
        let best = history
            .iter()
            .fold(None::<&TrialResult>, |b, t| match b {
                Some(b) if b.objective >= t.objective => Some(b),
                _ => Some(t),
            })
            .expect("history is non-empty")
            .clone();
        SearchOutcome { best, history }
    }

    /// Best objective seen up to and including each trial.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::NEG_INFINITY, |best, t| {
                *best = best.max(t.objective);
                Some(*best)
            })
            .collect()
    }

    /// CSV with the trial index, every searched field, objective and wall time.
    pub fn to_csv(&self) -> String {
        let mut out = format!("trial_index,{},objective,wall_time\n", FIELDS.join(","));
        let space = SearchSpace::table1();
        for t in &self.history {
            let values: Vec<String> = space.values(&t.config).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{},{},{},{:.6}", t.index, values.join(","), t.objective, t.wall_time);
        }
        out
    }
}

fn evaluate_batch<F>(configs: Vec<(usize, SubgraphXConfig)>, eval: &F) -> Result<Vec<TrialResult>, HpoError>
where
    F: Fn(&SubgraphXConfig) -> Result<TrialEval, HpoError> + Sync,
{
    let run = |(index, config): (usize, SubgraphXConfig)| {
        let start = Instant::now();
        let e = eval(&config)?;
        Ok(TrialResult {
            index,
            config,
            objective: e.objective,
            triples: e.triples,
            wall_time: start.elapsed().as_secs_f64(),
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        configs.into_par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        configs.into_iter().map(run).collect()
    }
}

/// Uniform random search. Configs are drawn up front from the seed, so
/// evaluation order cannot change the history.
pub fn random_search<F>(
    space: &SearchSpace,
    base: &SubgraphXConfig,
    eval: &F,
    budget: usize,
    seed: u64,
) -> Result<SearchOutcome, HpoError>
where
    F: Fn(&SubgraphXConfig) -> Result<TrialEval, HpoError> + Sync,
{
    if budget == 0 {
        return Err(HpoError::ZeroBudget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = (0..budget).map(|i| (i, space.sample(base, &mut rng))).collect();
    Ok(SearchOutcome::from_history(evaluate_batch(configs, eval)?))
}

/// Elitist evolution: binary tournaments pick parents, children mutate, and
/// the best `population` of parents and children survive.
pub fn evolutionary_search<F>(
    space: &SearchSpace,
    base: &SubgraphXConfig,
    eval: &F,
    population: usize,
    generations: usize,
    seed: u64,
) -> Result<SearchOutcome, HpoError>
where
    F: Fn(&SubgraphXConfig) -> Result<TrialEval, HpoError> + Sync,
{
    if population < 2 {
        return Err(HpoError::PopulationTooSmall(population));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = (0..population).map(|i| (i, space.sample(base, &mut rng))).collect();
    let mut history = evaluate_batch(initial, eval)?;
    let mut pop: Vec<usize> = (0..population).collect();
    let better = |h: &[TrialResult], a: usize, b: usize| {
        if h[a].objective > h[b].objective || (h[a].objective == h[b].objective && a < b) {
            a
        } else {
            b
        }
    };
    for _ in 0..generations {
        let mut children = Vec::with_capacity(population);
        for _ in 0..population {
            let a = pop[rng.random_range(0..pop.len())];
            let b = pop[rng.random_range(0..pop.len())];
            let parent = better(&history, a, b);
            children.push((history.len() + children.len(), space.mutate(&history[parent].config, &mut rng)));
        }
        history.extend(evaluate_batch(children, eval)?);
        let start = history.len() - population;
        pop.extend(start..history.len());
        pop.sort_by(|&a, &b| history[b].objective.total_cmp(&history[a].objective).then(a.cmp(&b)));
        pop.truncate(population);
    }
    Ok(SearchOutcome::from_history(history))
}

/// Synthetic score for a config: one minus the mean squared range-normalized
/// distance to `target`. Equals 1 only at the target.
pub fn planted_objective(space: &SearchSpace, cfg: &SubgraphXConfig, target: &SubgraphXConfig) -> f64 {
    let (x, t) = (space.values(cfg), space.values(target));
    let sq: f64 = space
        .params
        .iter()
        .zip(x.iter().zip(&t))
        .map(|(p, (a, b))| ((a - b) / (p.high - p.low)).powi(2))
        .sum();
    1.0 - sq / space.params.len() as f64
}

/// Explains each graph under `cfg` and scores the resulting triples.
pub fn explanation_objective(
    model: &GcnModel,
    sample: &[FeaturedGraph],
    cfg: &SubgraphXConfig,
) -> Result<TrialEval, HpoError> {
    let mut triples = Vec::with_capacity(sample.len());
    for fg in sample {
        let e = explain_graph(model, fg, cfg).map_err(|e| HpoError::Eval(e.to_string()))?;
        triples.push((e.s_masked, e.s_unmasked, e.sparsity));
    }
    Ok(TrialEval {
        objective: objective(&triples)?,
        triples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(target: SubgraphXConfig) -> impl Fn(&SubgraphXConfig) -> Result<TrialEval, HpoError> + Sync {
        move |c: &SubgraphXConfig| {
            Ok(TrialEval {
                objective: planted_objective(&SearchSpace::table1(), c, &target),
                triples: vec![],
            })
        }
    }

    #[test]
    fn objective_examples() {
        assert_eq!(objective(&[(1.0, 1.0, 1.0); 4]).unwrap(), 1.0);
        assert_eq!(objective(&[(0.0, 0.0, 0.0); 4]).unwrap(), 0.0);
        let v = objective(&[(0.6, 0.6, 0.6), (1.0, 1.0, 1.0)]).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        assert_eq!(objective(&[]), Err(HpoError::EmptyList));
        assert!((objective_raw_sum(&[(0.6, 0.6, 0.6), (1.0, 1.0, 1.0)]).unwrap() - 1.6).abs() < 1e-12);
    }

    #[test]
    fn objective_ignores_order() {
        let a = [(0.1, 0.5, 0.9), (0.3, 0.2, 0.7), (1.0, 0.0, 0.4)];
        let b = [a[2], a[0], a[1]];
        assert!((objective(&a).unwrap() - objective(&b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn samples_respect_bounds() {
        let space = SearchSpace::table1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = SubgraphXConfig::default();
        for _ in 0..500 {
            let c = space.sample(&base, &mut rng);
            assert!(space.contains(&c) && c.validate().is_ok());
            let m = space.mutate(&c, &mut rng);
            assert!(space.contains(&m) && m.validate().is_ok());
        }
    }

    #[test]
    fn budget_one() {
        let out = random_search(
            &SearchSpace::table1(),
            &SubgraphXConfig::default(),
            &planted(SubgraphXConfig::default()),
            1,
            0,
        )
        .unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best, out.history[0]);
    }

    #[test]
    fn zero_generations_is_initial_best() {
        let eval = planted(SubgraphXConfig::default());
        let out = evolutionary_search(&SearchSpace::table1(), &SubgraphXConfig::default(), &eval, 6, 0, 3).unwrap();
        assert_eq!(out.history.len(), 6);
        let max = out.history.iter().map(|t| t.objective).fold(f64::MIN, f64::max);
        assert_eq!(out.best.objective, max);
    }

    #[test]
    fn constant_objective_keeps_first() {
        let eval = |_: &SubgraphXConfig| {
            Ok(TrialEval {
                objective: 0.5,
                triples: vec![],
            })
        };
        let out = evolutionary_search(&SearchSpace::table1(), &SubgraphXConfig::default(), &eval, 4, 3, 1).unwrap();
        assert_eq!(out.best.index, 0);
        assert!(out.best_so_far().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn planted_peak_is_one() {
        let space = SearchSpace::table1();
        let t = SubgraphXConfig::default();
        assert_eq!(planted_objective(&space, &t, &t), 1.0);
    }

    #[test]
    fn bad_arguments() {
        let eval = planted(SubgraphXConfig::default());
        let base = SubgraphXConfig::default();
        assert_eq!(
            random_search(&SearchSpace::table1(), &base, &eval, 0, 0).unwrap_err(),
            HpoError::ZeroBudget
        );
        assert_eq!(
            evolutionary_search(&SearchSpace::table1(), &base, &eval, 1, 2, 0).unwrap_err(),
            HpoError::PopulationTooSmall(1)
        );
    }

    #[test]
    fn csv_header() {
        let out = random_search(
            &SearchSpace::table1(),
            &SubgraphXConfig::default(),
            &planted(SubgraphXConfig::default()),
            3,
            0,
        )
        .unwrap();
        let csv = out.to_csv();
        assert!(csv.starts_with("trial_index,num_hops,rollout,min_atoms,c_exploration,expand_atoms,local_radius,sample_num,max_nodes,objective,wall_time\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}

