//! Replication runner: repeated draws, estimation, and aggregation against large-sample truth.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{confounding_bounds_at, BoundingSpec};
use crate::data::{beta_vectors, split_folds, EstimandClass, PerformanceSpec, Score};
use crate::decisions::{regret_check, RegretCheck, UtilitySpec};
use crate::error::{Error, Result};
use crate::lfp::{solve_fold_lfp, Direction, LfpInstance};
use crate::mu_learner::{fit_bound_regressors, imse, oracle_fit, plugin_fit, BoundRegressors, SmootherConfig, SplitMode};
use crate::nuisance::{cross_fit_with, EtaPoint, LearnerConfig, NuisanceBundle, Requirements};
use crate::overall::{
    estimate_overall_bounds, estimate_overall_disparity_bounds, mean, BoundsEstimate, GroupProb,
};
use crate::positive::{
    estimate_negative_class_bounds, estimate_positive_class_bounds, positive_class_disparity_bounds,
};
use crate::rng::derive_seed;
use crate::simulation::dgp::{generate_dgp, train_score, DgpConfig, Truth};

fn default_n_grid() -> Vec<usize> {
    vec![1000]
}
fn default_reps() -> usize {
    200
}
fn default_folds() -> usize {
    5
}
fn default_eps() -> f64 {
    0.01
}
fn default_level() -> f64 {
    0.95
}
fn default_score_n() -> usize {
    5000
}
fn default_truth_draws() -> usize {
    1_000_000
}
fn default_eval_n() -> usize {
    2000
}

/// Functional learning of the conditional bounds inside each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuLearningConfig {
    pub bounding: BoundingSpec,
    #[serde(default)]
    pub smoother: SmootherConfig,
    /// Nuisance learner for the cross-fitted and plug-in learners.
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_eval_n")]
    pub eval_n: usize,
    #[serde(default)]
    pub mode: SplitMode,
    /// When set, regret of the plug-in max-min rule is evaluated.
    #[serde(default)]
    pub utilities: Option<UtilitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub estimands: Vec<PerformanceSpec>,
    #[serde(default)]
    pub bounding_grid: Vec<BoundingSpec>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Size of the independent draw used to train the evaluated score.
    #[serde(default = "default_score_n")]
    pub score_train_n: usize,
    /// Monte Carlo draws for the true endpoints.
    #[serde(default = "default_truth_draws")]
    pub truth_draws: usize,
    /// Also estimate group disparities (requires the group mechanism).
    #[serde(default)]
    pub disparity: bool,
    /// Inject the known nuisance functions instead of fitting them.
    #[serde(default)]
    pub oracle_nuisances: bool,
    #[serde(default)]
    pub mu_learning: Option<MuLearningConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            n_grid: default_n_grid(),
            reps: default_reps(),
            estimands: vec![],
            bounding_grid: vec![],
            learner: LearnerConfig::default(),
            folds: default_folds(),
            eps: default_eps(),
            seed: 0,
            level: default_level(),
            score_train_n: default_score_n(),
            truth_draws: default_truth_draws(),
            disparity: false,
            oracle_nuisances: false,
            mu_learning: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.reps < 2 {
            return bad("reps must be at least 2");
        }
        if self.n_grid.is_empty() || self.n_grid.iter().any(|&n| n < self.folds.max(2)) {
            return bad("n grid must be nonempty with every n >= folds");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !self.estimands.is_empty() && self.bounding_grid.is_empty() {
            return bad("estimands need a nonempty bounding grid");
        }
        if self.disparity && !self.dgp.group {
            return bad("disparity needs the group mechanism");
        }
        if self.truth_draws < 2 {
            return bad("truth draws must be at least 2");
        }
        for s in &self.estimands {
            s.validate()?;
        }
        let zs = Truth::new(self.dgp.clone())?.z_support();
        for b in &self.bounding_grid {
            b.validate(&zs)?;
        }
        if let Some(m) = &self.mu_learning {
            m.bounding.validate(&zs)?;
            m.smoother.validate()?;
            m.learner.validate()?;
            if m.eval_n == 0 {
                return bad("eval_n must be positive");
            }
            if let Some(u) = &m.utilities {
                if !matches!(u, UtilitySpec::Constant { .. }) {
                    return bad("simulation utilities must be constant");
                }
                u.validate(1)?;
            }
        }
        self.learner.validate()
    }
}

struct PopPoint {
    eta: EtaPoint,
    score: f64,
    g: Option<u8>,
    mu_star: f64,
}

/// Large Monte Carlo sample of nuisance values used to compute true endpoints.
pub struct TruthPopulation {
    points: Vec<PopPoint>,
    z_support: Vec<i64>,
}

/// Identified-set endpoints and the actual value of an estimand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueEndpoints {
    pub lower: f64,
    pub upper: f64,
    /// Monte Carlo standard errors; only available for overall measures.
    pub lower_se: Option<f64>,
    pub upper_se: Option<f64>,
    /// Value under the data-generating `P(Y* = 1 | X)`.
    pub actual: f64,
}

/// Nuisances are evaluated without clipping beyond this floor.
const TRUTH_EPS: f64 = 1e-12;

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1).max(1) as f64).sqrt()
}

impl TruthPopulation {
    pub fn draw(truth: &Truth, score: &Score, draws: usize, seed: u64) -> Result<Self> {
        let f = match score {
            Score::Function(f) => f.clone(),
            Score::Column(_) => {
                return Err(Error::InvalidParameter(
                    "true endpoints need a score function".into(),
                ))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let group = truth.config().group;
        let points = (0..draws)
            .map(|_| {
                let x = truth.draw_x(&mut rng);
                PopPoint {
                    eta: truth.eta_at(&x, TRUTH_EPS),
                    score: f(&x),
                    g: group.then(|| u8::from(x[0] > 0.0)),
                    mu_star: truth.mu_star(&x),
                }
            })
            .collect();
        Ok(Self {
            points,
            z_support: truth.z_support(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn subset(&self, group: Option<u8>) -> Vec<&PopPoint> {
        self.points
            .iter()
            .filter(|p| group.is_none() || p.g == group)
            .collect()
    }

    /// Endpoints within `G = group` (all draws when `None`).
    pub fn endpoints(
        &self,
        spec: &PerformanceSpec,
        bounding: &BoundingSpec,
        group: Option<u8>,
    ) -> Result<TrueEndpoints> {
        let pts = self.subset(group);
        if pts.len() < 2 {
            return Err(Error::EmptyStratum("truth population group".into()));
        }
        let scores: Vec<f64> = pts.iter().map(|p| p.score).collect();
        let (b0, b1) = beta_vectors(spec, &scores)?;
        let bounds: Vec<(f64, f64)> = pts
            .iter()
            .map(|p| confounding_bounds_at(&p.eta, bounding, &self.z_support))
            .collect::<Result<_>>()?;
        match spec.class() {
            EstimandClass::Overall => {
                let mut lo = Vec::with_capacity(pts.len());
                let mut hi = Vec::with_capacity(pts.len());
                let mut act = Vec::with_capacity(pts.len());
                for (i, p) in pts.iter().enumerate() {
                    let (dl, dh) = bounds[i];
                    let base = b0[i] + b1[i] * p.eta.mu1;
                    let pi0 = p.eta.pi0();
                    let (up, down) = if b1[i] > 0.0 { (dh, dl) } else { (dl, dh) };
                    hi.push(base + b1[i] * pi0 * up);
                    lo.push(base + b1[i] * pi0 * down);
                    act.push(b0[i] + b1[i] * p.mu_star);
                }
                let rn = (pts.len() as f64).sqrt();
                Ok(TrueEndpoints {
                    lower: mean(&lo),
                    upper: mean(&hi),
                    lower_se: Some(sd(&lo) / rn),
                    upper_se: Some(sd(&hi) / rn),
                    actual: mean(&act),
                })
            }
            class => {
                let inst = LfpInstance {
                    a: pts.iter().map(|p| p.eta.mu1).collect(),
                    w: pts.iter().map(|p| p.eta.pi0()).collect(),
                    lo: bounds.iter().map(|b| b.0).collect(),
                    hi: bounds.iter().map(|b| b.1).collect(),
                    b: b0.clone(),
                };
                let (inst, weight): (LfpInstance, Box<dyn Fn(&PopPoint) -> f64>) =
                    if class == EstimandClass::Negative {
                        (inst.complement(), Box::new(|p: &PopPoint| 1.0 - p.mu_star))
                    } else {
                        (inst, Box::new(|p: &PopPoint| p.mu_star))
                    };
                let upper = solve_fold_lfp(&inst, Direction::Max)?.value;
                let lower = solve_fold_lfp(&inst, Direction::Min)?.value;
                let num: Vec<f64> = pts.iter().enumerate().map(|(i, p)| b0[i] * weight(p)).collect();
                let den: Vec<f64> = pts.iter().map(|p| weight(p)).collect();
                Ok(TrueEndpoints {
                    lower,
                    upper,
                    lower_se: None,
                    upper_se: None,
                    actual: mean(&num) / mean(&den),
                })
            }
        }
    }

    /// Endpoints of `perf(G = 1) - perf(G = 0)`.
    pub fn disparity_endpoints(
        &self,
        spec: &PerformanceSpec,
        bounding: &BoundingSpec,
    ) -> Result<TrueEndpoints> {
        let e1 = self.endpoints(spec, bounding, Some(1))?;
        let e0 = self.endpoints(spec, bounding, Some(0))?;
        let comb = |a: Option<f64>, b: Option<f64>| Some((a? * a? + b? * b?).sqrt());
        Ok(TrueEndpoints {
            lower: e1.lower - e0.upper,
            upper: e1.upper - e0.lower,
            lower_se: comb(e1.lower_se, e0.upper_se),
            upper_se: comb(e1.upper_se, e0.lower_se),
            actual: e1.actual - e0.actual,
        })
    }
}

/// What a table row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Estimand,
    Disparity,
}

/// One estimate from one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepEstimate {
    pub n: usize,
    pub rep: usize,
    pub estimand: String,
    pub target: Target,
    pub bounding: String,
    pub lower: f64,
    pub upper: f64,
    pub se_lower: Option<f64>,
    pub se_upper: Option<f64>,
    pub ci_lower: Option<(f64, f64)>,
    pub ci_upper: Option<(f64, f64)>,
}

/// Learner accuracy from one replication; IMSE pairs are (lower, upper).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepLearning {
    pub n: usize,
    pub rep: usize,
    pub oracle: (f64, f64),
    pub feasible: (f64, f64),
    pub plugin: (f64, f64),
    pub regret: Option<RegretCheck>,
}

/// Aggregated bias and coverage for one (estimand, bounding, n, side) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub estimand: String,
    pub target: Target,
    pub bounding: String,
    pub n: usize,
    pub side: String,
    pub truth: f64,
    pub truth_se: Option<f64>,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    pub sd: f64,
    pub mean_se: Option<f64>,
    pub coverage: Option<f64>,
    /// Share of replications whose estimated interval contains the actual value.
    pub contains_actual: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImseRow {
    pub n: usize,
    pub learner: String,
    pub side: String,
    pub mean_imse: f64,
    pub sd_imse: f64,
    pub ratio_to_oracle: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRow {
    pub n: usize,
    pub mean_regret: f64,
    pub min_regret: f64,
    pub max_regret: f64,
    /// Share of replications satisfying the squared-regret inequality.
    pub bound_holds: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRow {
    pub estimand: String,
    pub target: Target,
    pub bounding: String,
    pub endpoints: TrueEndpoints,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub reps: usize,
    pub failures: usize,
    pub truth: Vec<TruthRow>,
    pub cells: Vec<CellRow>,
    pub imse: Vec<ImseRow>,
    pub regret: Vec<RegretRow>,
    pub estimates: Vec<RepEstimate>,
    pub learning: Vec<RepLearning>,
}

const TAG_SCORE: u64 = 1;
const TAG_TRUTH: u64 = 2;
const TAG_EVAL: u64 = 3;
const TAG_DATA: u64 = 4;
const TAG_FOLDS: u64 = 5;
const TAG_LEARNER: u64 = 6;
const TAG_FOLDS2: u64 = 7;

struct EvalSample {
    x: Vec<Vec<f64>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    truth_models: Arc<crate::nuisance::NuisanceModels>,
    score: Score,
    eval: Option<EvalSample>,
}

struct RepOutput {
    estimates: Vec<RepEstimate>,
    learning: Option<RepLearning>,
}

fn requirements(cfg: &ExperimentConfig) -> Requirements {
    cfg.bounding_grid
        .iter()
        .fold(Requirements::default(), |r, b| r.union(b.requirements()))
}

fn estimate(
    sim: &crate::simulation::dgp::SimData,
    sh: &Shared,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
    target: Target,
) -> Result<BoundsEstimate> {
    let data = &sim.dataset;
    match (spec.class(), target) {
        (EstimandClass::Overall, Target::Estimand) => {
            estimate_overall_bounds(data, &sh.score, spec, bounding, bundle)
        }
        (EstimandClass::Positive, Target::Estimand) => {
            estimate_positive_class_bounds(data, &sh.score, spec, bounding, bundle)
        }
        (EstimandClass::Negative, Target::Estimand) => {
            estimate_negative_class_bounds(data, &sh.score, spec, bounding, bundle)
        }
        (EstimandClass::Overall, Target::Disparity) => {
            estimate_overall_disparity_bounds(data, &sh.score, spec, bounding, bundle, GroupProb::Empirical)
        }
        (_, Target::Disparity) => positive_class_disparity_bounds(data, &sh.score, spec, bounding, bundle),
    }
    .map(|e| {
        if e.cov.is_some() {
            crate::overall::confidence_intervals(e, sh.cfg.level).expect("level validated")
        } else {
            e
        }
    })
}

fn run_one(sh: &Shared, n: usize, rep: usize) -> Result<RepOutput> {
    let cfg = sh.cfg;
    let rep_seed = derive_seed(cfg.seed, &[TAG_DATA, rep as u64]);
    let sim = generate_dgp(&DgpConfig {
        n,
        seed: rep_seed,
        ..cfg.dgp.clone()
    })?;
    let data = &sim.dataset;
    let mut estimates = Vec::new();
    if !cfg.estimands.is_empty() {
        let folds = split_folds(n, cfg.folds, derive_seed(cfg.seed, &[TAG_FOLDS, rep as u64]))?;
        let bundle = if cfg.oracle_nuisances {
            NuisanceBundle::from_models(data, &folds, Arc::clone(&sh.truth_models), cfg.eps)?
        } else {
            let learner = LearnerConfig {
                seed: derive_seed(cfg.seed, &[TAG_LEARNER, rep as u64]),
                ..cfg.learner.clone()
            };
            cross_fit_with(data, &folds, &learner, requirements(cfg), cfg.eps)?
        };
        let targets: &[Target] = if cfg.disparity {
            &[Target::Estimand, Target::Disparity]
        } else {
            &[Target::Estimand]
        };
        for spec in &cfg.estimands {
            for bounding in &cfg.bounding_grid {
                for &target in targets {
                    let e = estimate(&sim, sh, spec, bounding, &bundle, target)?;
                    estimates.push(RepEstimate {
                        n,
                        rep,
                        estimand: spec.label(),
                        target,
                        bounding: bounding.label(),
                        lower: e.lower,
                        upper: e.upper,
                        se_lower: e.se_lower(),
                        se_upper: e.se_upper(),
                        ci_lower: e.ci_lower,
                        ci_upper: e.ci_upper,
                    });
                }
            }
        }
    }
    let learning = match (&cfg.mu_learning, &sh.eval) {
        (Some(ml), Some(ev)) => Some(learn_one(sh, ml, ev, &sim, n, rep)?),
        _ => None,
    };
    Ok(RepOutput {
        estimates,
        learning,
    })
}

fn imse_pair(m: &BoundRegressors, ev: &EvalSample) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let lo: Vec<f64> = ev.x.iter().map(|x| m.predict_lo(x)).collect();
    let hi: Vec<f64> = ev.x.iter().map(|x| m.predict_hi(x)).collect();
    let idx: Vec<Vec<f64>> = (0..ev.x.len()).map(|i| vec![i as f64]).collect();
    let il = imse(|i: &[f64]| lo[i[0] as usize], |i: &[f64]| ev.lo[i[0] as usize], &idx)?;
    let ih = imse(|i: &[f64]| hi[i[0] as usize], |i: &[f64]| ev.hi[i[0] as usize], &idx)?;
    Ok((lo, hi, il, ih))
}

fn learn_one(
    sh: &Shared,
    ml: &MuLearningConfig,
    ev: &EvalSample,
    sim: &crate::simulation::dgp::SimData,
    n: usize,
    rep: usize,
) -> Result<RepLearning> {
    let cfg = sh.cfg;
    let data = &sim.dataset;
    let folds = split_folds(n, 2, derive_seed(cfg.seed, &[TAG_FOLDS2, rep as u64]))?;
    let learner = LearnerConfig {
        seed: derive_seed(cfg.seed, &[TAG_LEARNER, rep as u64, 2]),
        ..ml.learner.clone()
    };
    let bundle = cross_fit_with(data, &folds, &learner, ml.bounding.requirements(), cfg.eps)?;
    let feasible = fit_bound_regressors(data, &bundle, &ml.bounding, &ml.smoother, ml.mode)?;
    let oracle = oracle_fit(
        data,
        &folds,
        Arc::clone(&sh.truth_models),
        &ml.bounding,
        &ml.smoother,
        ml.mode,
        cfg.eps,
    )?;
    let plugin = plugin_fit(data, &learner, &ml.bounding, &ml.smoother, cfg.eps)?;
    let (flo, fhi, fl, fh) = imse_pair(&feasible, ev)?;
    let (_, _, ol, oh) = imse_pair(&oracle, ev)?;
    let (_, _, pl, ph) = imse_pair(&plugin, ev)?;
    let regret = match &ml.utilities {
        Some(u) => Some(regret_check(&flo, &fhi, &ev.lo, &ev.hi, u)?),
        None => None,
    };
    Ok(RepLearning {
        n,
        rep,
        oracle: (ol, oh),
        feasible: (fl, fh),
        plugin: (pl, ph),
        regret,
    })
}

/// Runs every (n, replication) pair and aggregates the results.
pub fn run_replications(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let truth = Truth::new(cfg.dgp.clone())?;
    let score = train_score(&cfg.dgp, cfg.score_train_n, derive_seed(cfg.seed, &[TAG_SCORE]))?;
    let truth_rows = if cfg.estimands.is_empty() {
        vec![]
    } else {
        let pop = TruthPopulation::draw(&truth, &score, cfg.truth_draws, derive_seed(cfg.seed, &[TAG_TRUTH]))?;
        let mut rows = Vec::new();
        for spec in &cfg.estimands {
            for b in &cfg.bounding_grid {
                rows.push(TruthRow {
                    estimand: spec.label(),
                    target: Target::Estimand,
                    bounding: b.label(),
                    endpoints: pop.endpoints(spec, b, None)?,
                });
                if cfg.disparity {
                    rows.push(TruthRow {
                        estimand: spec.label(),
                        target: Target::Disparity,
                        bounding: b.label(),
                        endpoints: pop.disparity_endpoints(spec, b)?,
                    });
                }
            }
        }
        rows
    };
    let eval = match &cfg.mu_learning {
        Some(ml) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_EVAL]));
            let x: Vec<Vec<f64>> = (0..ml.eval_n).map(|_| truth.draw_x(&mut rng)).collect();
            let mut lo = Vec::with_capacity(x.len());
            let mut hi = Vec::with_capacity(x.len());
            for xi in &x {
                let (l, h) = truth.mu_bounds(&truth.eta_at(xi, TRUTH_EPS), &ml.bounding)?;
                lo.push(l);
                hi.push(h);
            }
            Some(EvalSample { x, lo, hi })
        }
        None => None,
    };
    let shared = Shared {
        cfg,
        truth_models: truth.models(),
        score,
        eval,
    };
    let tasks: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let results: Vec<Result<RepOutput>> = tasks
        .par_iter()
        .map(|&(n, r)| run_one(&shared, n, r))
        .collect();
    let total = results.len();
    let mut failures = 0;
    let mut last = String::new();
    let mut estimates = Vec::new();
    let mut learning = Vec::new();
    for res in results {
        match res {
            Ok(o) => {
                estimates.extend(o.estimates);
                learning.extend(o.learning);
            }
            Err(e) => {
                failures += 1;
                last = e.to_string();
                log::warn!("replication failed: {last}");
            }
        }
    }
    if failures * 10 > total {
        return Err(Error::TooManyFailures {
            failed: failures,
            total,
            last,
        });
    }
    Ok(SimulationReport {
        reps: cfg.reps,
        failures,
        cells: aggregate_cells(cfg, &truth_rows, &estimates),
        imse: aggregate_imse(cfg, &learning),
        regret: aggregate_regret(cfg, &learning),
        truth: truth_rows,
        estimates,
        learning,
    })
}

fn aggregate_cells(cfg: &ExperimentConfig, truth: &[TruthRow], est: &[RepEstimate]) -> Vec<CellRow> {
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        for t in truth {
            let reps: Vec<&RepEstimate> = est
                .iter()
                .filter(|e| {
                    e.n == n && e.estimand == t.estimand && e.bounding == t.bounding && e.target == t.target
                })
                .collect();
            if reps.is_empty() {
                continue;
            }
            let actual = t.endpoints.actual;
            let contains = reps
                .iter()
                .filter(|e| e.lower.min(e.upper) <= actual && actual <= e.lower.max(e.upper))
                .count() as f64
                / reps.len() as f64;
            for side in ["lower", "upper"] {
                let (truth_v, truth_se) = if side == "lower" {
                    (t.endpoints.lower, t.endpoints.lower_se)
                } else {
                    (t.endpoints.upper, t.endpoints.upper_se)
                };
                let vals: Vec<f64> = reps
                    .iter()
                    .map(|e| if side == "lower" { e.lower } else { e.upper })
                    .collect();
                let ses: Vec<f64> = reps
                    .iter()
                    .filter_map(|e| if side == "lower" { e.se_lower } else { e.se_upper })
                    .collect();
                let cis: Vec<(f64, f64)> = reps
                    .iter()
                    .filter_map(|e| if side == "lower" { e.ci_lower } else { e.ci_upper })
                    .collect();
                let m = mean(&vals);
                rows.push(CellRow {
                    estimand: t.estimand.clone(),
                    target: t.target,
                    bounding: t.bounding.clone(),
                    n,
                    side: side.into(),
                    truth: truth_v,
                    truth_se,
                    mean_estimate: m,
                    mean_bias: m - truth_v,
                    sd: sd(&vals),
                    mean_se: (ses.len() == vals.len()).then(|| mean(&ses)),
                    coverage: (cis.len() == vals.len()).then(|| {
                        cis.iter().filter(|(a, b)| *a <= truth_v && truth_v <= *b).count() as f64
                            / cis.len() as f64
                    }),
                    contains_actual: contains,
                    reps: vals.len(),
                });
            }
        }
    }
    rows
}

fn aggregate_imse(cfg: &ExperimentConfig, learning: &[RepLearning]) -> Vec<ImseRow> {
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let reps: Vec<&RepLearning> = learning.iter().filter(|l| l.n == n).collect();
        if reps.is_empty() {
            continue;
        }
        for side in ["lower", "upper"] {
            let pick = |p: (f64, f64)| if side == "lower" { p.0 } else { p.1 };
            let oracle: Vec<f64> = reps.iter().map(|l| pick(l.oracle)).collect();
            let om = mean(&oracle);
            for (name, vals) in [
                ("oracle", oracle.clone()),
                ("feasible", reps.iter().map(|l| pick(l.feasible)).collect::<Vec<_>>()),
                ("plugin", reps.iter().map(|l| pick(l.plugin)).collect::<Vec<_>>()),
            ] {
                let m = mean(&vals);
                rows.push(ImseRow {
                    n,
                    learner: name.into(),
                    side: side.into(),
                    mean_imse: m,
                    sd_imse: sd(&vals),
                    ratio_to_oracle: m / om,
                    reps: vals.len(),
                });
            }
        }
    }
    rows
}

fn aggregate_regret(cfg: &ExperimentConfig, learning: &[RepLearning]) -> Vec<RegretRow> {
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let checks: Vec<RegretCheck> = learning
            .iter()
            .filter(|l| l.n == n)
            .filter_map(|l| l.regret)
            .collect();
        if checks.is_empty() {
            continue;
        }
        let r: Vec<f64> = checks.iter().map(|c| c.regret).collect();
        rows.push(RegretRow {
            n,
            mean_regret: mean(&r),
            min_regret: r.iter().copied().fold(f64::INFINITY, f64::min),
            max_regret: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            bound_holds: checks.iter().filter(|c| c.bound_holds()).count() as f64 / checks.len() as f64,
            reps: checks.len(),
        });
    }
    rows
}
