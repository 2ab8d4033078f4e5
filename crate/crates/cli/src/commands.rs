//! Subcommand implementations. Each returns the files it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use selbounds::bounds::BoundingSpec;
use selbounds::decisions::{maxmin_rule, welfare_bounds, UtilitySpec};
use selbounds::mu_learner::{fit_bound_regressors, BoundRegressors};
use selbounds::nuisance::{cross_fit_with, Requirements};
use selbounds::overall::{
    confidence_intervals, estimate_overall_bounds, estimate_overall_bounds_in_group,
    estimate_overall_disparity_bounds, normal_quantile, GroupProb,
};
use selbounds::positive::{
    auc_from_curve, bootstrap_class_bounds, estimate_class_bounds_in_group,
    estimate_negative_class_bounds, estimate_positive_class_bounds,
    positive_class_disparity_bounds, roc_bounds, RocPoint, RocSide,
};
use selbounds::rng::derive_seed;
use selbounds::simulation::{
    generate_dgp, run_replications, train_score, DgpConfig, ExperimentConfig, SimulationReport,
};
use selbounds::{
    split_folds, validate_dataset, BoundsEstimate, Dataset, EstimandClass, LearnerConfig,
    NuisanceBundle, PerformanceSpec, Score,
};

use crate::config::{Comparison, Format, RunConfig, SweepConfig, SweepParameter};
use crate::error::{CliError, Result};
use crate::io::{load_covariates, load_csv, write_rows};

const SEED_DATA: u64 = 1;
const SEED_SCORE: u64 = 2;
const SEED_FOLDS: u64 = 3;
const SEED_LEARNER: u64 = 4;
const SEED_BOOT: u64 = 5;

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

struct Prepared {
    data: Dataset,
    score: Option<Score>,
}

fn simulated(cfg: &RunConfig, dgp: &DgpConfig) -> DgpConfig {
    DgpConfig {
        seed: derive_seed(cfg.seed, &[SEED_DATA, dgp.seed]),
        ..dgp.clone()
    }
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    if let Some(path) = &cfg.input {
        let table = load_csv(path)?;
        let data = validate_dataset(&table.records)?;
        return Ok(Prepared {
            data,
            score: table.score.map(Score::Column),
        });
    }
    let dgp = simulated(cfg, &cfg.simulate.as_ref().expect("validated").0);
    let sim = generate_dgp(&dgp)?;
    let score = train_score(&dgp, cfg.score_train_n, derive_seed(cfg.seed, &[SEED_SCORE]))?;
    Ok(Prepared {
        data: sim.dataset,
        score: Some(score),
    })
}

fn learner(cfg: &RunConfig) -> LearnerConfig {
    LearnerConfig {
        seed: derive_seed(cfg.seed, &[SEED_LEARNER, cfg.learner.seed]),
        ..cfg.learner.clone()
    }
}

fn bundle(cfg: &RunConfig, data: &Dataset, k: usize, req: Requirements) -> Result<NuisanceBundle> {
    let folds = split_folds(data.len(), k, derive_seed(cfg.seed, &[SEED_FOLDS]))?;
    Ok(cross_fit_with(data, &folds, &learner(cfg), req, cfg.eps_clip)?)
}

fn need_bounding(cfg: &RunConfig) -> Result<&BoundingSpec> {
    cfg.bounding
        .as_ref()
        .ok_or_else(|| CliError::Invalid("`bounding` is required".into()))
}

fn need_score(p: &Prepared) -> Result<&Score> {
    p.score
        .as_ref()
        .ok_or(CliError::Core(selbounds::Error::MissingColumn("score column")))
}

fn need_estimands(cfg: &RunConfig) -> Result<Vec<PerformanceSpec>> {
    let e = cfg.all_estimands();
    if e.is_empty() {
        return Err(CliError::Invalid("at least one estimand is required".into()));
    }
    Ok(e)
}

/// One reported interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub estimand: String,
    pub target: String,
    pub lower: f64,
    pub upper: f64,
    pub se_lower: Option<f64>,
    pub se_upper: Option<f64>,
    pub ci_lower: Option<(f64, f64)>,
    pub ci_upper: Option<(f64, f64)>,
    pub swapped_boxes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    All,
    Group(u8),
    Disparity,
}

struct Ctx<'a> {
    data: &'a Dataset,
    score: &'a Score,
    bundle: &'a NuisanceBundle,
    cfg: &'a RunConfig,
}

fn estimate(ctx: &Ctx, spec: &PerformanceSpec, bounding: &BoundingSpec, target: Target) -> Result<BoundsEstimate> {
    let (d, s, b) = (ctx.data, ctx.score, ctx.bundle);
    let class = spec.class();
    let e = match (class, target) {
        (EstimandClass::Overall, Target::All) => estimate_overall_bounds(d, s, spec, bounding, b)?,
        (EstimandClass::Overall, Target::Group(g)) => {
            estimate_overall_bounds_in_group(d, s, spec, bounding, b, g)?
        }
        (EstimandClass::Overall, Target::Disparity) => {
            estimate_overall_disparity_bounds(d, s, spec, bounding, b, GroupProb::Empirical)?
        }
        (EstimandClass::Positive, Target::All) => estimate_positive_class_bounds(d, s, spec, bounding, b)?,
        (EstimandClass::Negative, Target::All) => estimate_negative_class_bounds(d, s, spec, bounding, b)?,
        (_, Target::Group(g)) => estimate_class_bounds_in_group(d, s, spec, bounding, b, g)?,
        (_, Target::Disparity) => positive_class_disparity_bounds(d, s, spec, bounding, b)?,
    };
    Ok(if e.cov.is_some() {
        confidence_intervals(e, ctx.cfg.level)?
    } else {
        e
    })
}

fn row(ctx: &Ctx, spec: &PerformanceSpec, bounding: &BoundingSpec, target: Target) -> Result<EstimateRow> {
    let e = estimate(ctx, spec, bounding, target)?;
    let mut r = EstimateRow {
        estimand: spec.label(),
        target: match target {
            Target::All => spec.class().name().to_string(),
            Target::Group(g) => format!("group_{g}"),
            Target::Disparity => "disparity".into(),
        },
        lower: e.lower,
        upper: e.upper,
        se_lower: e.se_lower(),
        se_upper: e.se_upper(),
        ci_lower: e.ci_lower,
        ci_upper: e.ci_upper,
        swapped_boxes: e.swapped_boxes,
    };
    if spec.class() != EstimandClass::Overall && target == Target::All && ctx.cfg.bootstrap_reps > 0 {
        let (sl, sh) = bootstrap_class_bounds(
            ctx.data,
            ctx.score,
            spec,
            bounding,
            ctx.bundle,
            ctx.cfg.bootstrap_reps,
            derive_seed(ctx.cfg.seed, &[SEED_BOOT]),
        )?;
        let z = normal_quantile(ctx.cfg.level)?;
        r.se_lower = Some(sl);
        r.se_upper = Some(sh);
        r.ci_lower = Some((e.lower - z * sl, e.lower + z * sl));
        r.ci_upper = Some((e.upper - z * sh, e.upper + z * sh));
    }
    Ok(r)
}

fn estimate_header() -> [&'static str; 11] {
    [
        "estimand", "target", "lower", "upper", "se_lower", "se_upper", "ci_lower_lo",
        "ci_lower_hi", "ci_upper_lo", "ci_upper_hi", "swapped_boxes",
    ]
}

fn estimate_cells(r: &EstimateRow) -> Vec<String> {
    vec![
        r.estimand.clone(),
        r.target.clone(),
        num(r.lower),
        num(r.upper),
        opt(r.se_lower),
        opt(r.se_upper),
        opt(r.ci_lower.map(|c| c.0)),
        opt(r.ci_lower.map(|c| c.1)),
        opt(r.ci_upper.map(|c| c.0)),
        opt(r.ci_upper.map(|c| c.1)),
        r.swapped_boxes.to_string(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub n: usize,
    pub n_selected: usize,
    pub bounding: BoundingSpec,
    pub folds: usize,
    pub seed: u64,
    pub level: f64,
    pub estimates: Vec<EstimateRow>,
    pub roc: Vec<RocPoint>,
    pub auc_hi: Option<f64>,
    pub auc_lo: Option<f64>,
}

/// Bounds on every requested measure of the supplied score.
pub fn evaluate(cfg: &RunConfig) -> Result<(EvaluateReport, Vec<PathBuf>)> {
    cfg.validate(true)?;
    let bounding = need_bounding(cfg)?;
    let estimands = need_estimands(cfg)?;
    let p = prepare(cfg)?;
    let score = need_score(&p)?;
    let b = bundle(cfg, &p.data, cfg.folds, bounding.requirements())?;
    let ctx = Ctx {
        data: &p.data,
        score,
        bundle: &b,
        cfg,
    };
    let mut estimates = Vec::new();
    for spec in &estimands {
        estimates.push(row(&ctx, spec, bounding, Target::All)?);
        if cfg.disparity {
            estimates.push(row(&ctx, spec, bounding, Target::Disparity)?);
        }
    }
    let roc = if cfg.roc_thresholds.is_empty() {
        vec![]
    } else {
        roc_bounds(&p.data, score, &cfg.roc_thresholds, bounding, &b)?
    };
    let auc = |side| (!roc.is_empty()).then(|| auc_from_curve(&roc, side));
    let report = EvaluateReport {
        n: p.data.len(),
        n_selected: p.data.n_selected(),
        bounding: bounding.clone(),
        folds: cfg.folds,
        seed: cfg.seed,
        level: cfg.level,
        auc_hi: auc(RocSide::Hi),
        auc_lo: auc(RocSide::Lo),
        estimates,
        roc,
    };
    let dir = out_dir(cfg)?;
    let mut files = Vec::new();
    if cfg.wants(Format::Json) {
        let f = dir.join("evaluate.json");
        write_json(&f, &report)?;
        files.push(f);
    }
    if cfg.wants(Format::Csv) {
        let f = dir.join("bounds.csv");
        let rows: Vec<Vec<String>> = report.estimates.iter().map(estimate_cells).collect();
        write_rows(&f, &estimate_header(), &rows)?;
        files.push(f);
        if !report.roc.is_empty() {
            let f = dir.join("roc.csv");
            let rows: Vec<Vec<String>> = report
                .roc
                .iter()
                .map(|p| vec![num(p.tau), num(p.tpr_lo), num(p.tpr_hi), num(p.fpr_lo), num(p.fpr_hi)])
                .collect();
            write_rows(&f, &["tau", "tpr_lo", "tpr_hi", "fpr_lo", "fpr_hi"], &rows)?;
            files.push(f);
        }
    }
    Ok((report, files))
}

/// Fits the conditional bound functions and serializes them to `bounds_model.json`.
pub fn learn_bounds(cfg: &RunConfig) -> Result<(BoundRegressors, Vec<PathBuf>)> {
    cfg.validate(true)?;
    let bounding = need_bounding(cfg)?;
    let p = prepare(cfg)?;
    let b = bundle(cfg, &p.data, 2, bounding.requirements())?;
    let model = fit_bound_regressors(&p.data, &b, bounding, &cfg.smoother, cfg.split)?;
    let dir = out_dir(cfg)?;
    let f = dir.join("bounds_model.json");
    write_json(&f, &model)?;
    let mut files = vec![f];
    if cfg.wants(Format::Csv) {
        let mut pts: Vec<(f64, f64, f64)> = p
            .data
            .records()
            .iter()
            .map(|r| (r.x[0], model.predict_lo(&r.x), model.predict_hi(&r.x)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let rows: Vec<Vec<String>> = pts.iter().map(|&(x, l, h)| vec![num(x), num(l), num(h)]).collect();
        let f = dir.join("bound_functions.csv");
        write_rows(&f, &["x", "lower", "upper"], &rows)?;
        files.push(f);
    }
    Ok((model, files))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecideReport {
    pub n: usize,
    pub share_treated: f64,
    /// Welfare bounds of the rule, evaluated at the estimated bound functions.
    pub welfare_lower: f64,
    pub welfare_upper: f64,
}

/// Applies the max-min rule from serialized bound functions to a covariate table.
pub fn decide(cfg: &RunConfig) -> Result<(DecideReport, Vec<PathBuf>)> {
    cfg.validate(true)?;
    let path = cfg
        .bounds_model
        .as_ref()
        .ok_or_else(|| CliError::Invalid("`bounds_model` is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model: BoundRegressors = serde_json::from_str(&text)?;
    let model = model.with_clip(true);
    let xs: Vec<Vec<f64>> = match &cfg.input {
        Some(p) => load_covariates(p)?.records.into_iter().map(|r| r.x).collect(),
        None => prepare(cfg)?.data.records().iter().map(|r| r.x.clone()).collect(),
    };
    if let Some(i) = xs.iter().position(|x| x.len() != model.dim) {
        return Err(CliError::Core(selbounds::Error::DimensionMismatch {
            index: i,
            expected: model.dim,
            found: xs[i].len(),
        }));
    }
    let lo: Vec<f64> = xs.iter().map(|x| model.predict_lo(x)).collect();
    let hi: Vec<f64> = xs.iter().map(|x| model.predict_hi(x)).collect();
    let u = cfg.utilities.clone().unwrap_or_else(UtilitySpec::uniform);
    let d = maxmin_rule(&lo, &hi, &u)?;
    let (wl, wh) = welfare_bounds(&d, &lo, &hi, &u)?;
    let report = DecideReport {
        n: d.len(),
        share_treated: d.iter().map(|&v| f64::from(v)).sum::<f64>() / d.len() as f64,
        welfare_lower: wl,
        welfare_upper: wh,
    };
    let dir = out_dir(cfg)?;
    let mut files = Vec::new();
    if cfg.wants(Format::Json) {
        let f = dir.join("decide.json");
        write_json(&f, &report)?;
        files.push(f);
    }
    if cfg.wants(Format::Csv) {
        let f = dir.join("decisions.csv");
        let rows: Vec<Vec<String>> = (0..d.len())
            .map(|i| vec![i.to_string(), num(lo[i]), num(hi[i]), d[i].to_string()])
            .collect();
        write_rows(&f, &["row", "mu_lower", "mu_upper", "decision"], &rows)?;
        files.push(f);
    }
    Ok((report, files))
}

/// Experiment settings: `experiment` if given, otherwise assembled from the run fields.
pub fn experiment_config(cfg: &RunConfig, reps: Option<usize>) -> Result<ExperimentConfig> {
    let mut e = match &cfg.experiment {
        Some(e) => e.clone(),
        None => ExperimentConfig {
            dgp: cfg.simulate.as_ref().map(|s| s.0.clone()).unwrap_or_default(),
            estimands: need_estimands(cfg)?,
            bounding_grid: vec![need_bounding(cfg)?.clone()],
            learner: cfg.learner.clone(),
            folds: cfg.folds,
            eps: cfg.eps_clip,
            seed: cfg.seed,
            level: cfg.level,
            disparity: cfg.disparity,
            score_train_n: cfg.score_train_n,
            ..ExperimentConfig::default()
        },
    };
    if let Some(r) = reps {
        e.reps = r;
    }
    Ok(e)
}

/// Replication study.
pub fn simulate(cfg: &RunConfig, reps: Option<usize>) -> Result<(SimulationReport, Vec<PathBuf>)> {
    cfg.validate(false)?;
    if cfg.input.is_some() {
        return Err(CliError::Invalid("`simulate` does not read `input`".into()));
    }
    let exp = experiment_config(cfg, reps)?;
    let report = run_replications(&exp)?;
    let dir = out_dir(cfg)?;
    let files = emit_simulation(&report, &dir, &cfg.formats)?;
    Ok((report, files))
}

/// Writes the full JSON report, the aggregate tables and per-cell plot data.
pub fn emit_simulation(report: &SimulationReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if formats.contains(&Format::Json) {
        let f = dir.join("simulation.json");
        write_json(&f, report)?;
        files.push(f);
    }
    if !formats.contains(&Format::Csv) {
        return Ok(files);
    }
    let target = |t| serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let cells: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.estimand.clone(),
                target(c.target),
                c.bounding.clone(),
                c.n.to_string(),
                c.side.clone(),
                num(c.truth),
                opt(c.truth_se),
                num(c.mean_estimate),
                num(c.mean_bias),
                num(c.sd),
                opt(c.mean_se),
                opt(c.coverage),
                num(c.contains_actual),
                c.reps.to_string(),
            ]
        })
        .collect();
    let f = dir.join("cells.csv");
    write_rows(
        &f,
        &[
            "estimand", "target", "bounding", "n", "side", "truth", "truth_se", "mean_estimate",
            "mean_bias", "sd", "mean_se", "coverage", "contains_actual", "reps",
        ],
        &cells,
    )?;
    files.push(f);
    if !report.imse.is_empty() {
        let rows: Vec<Vec<String>> = report
            .imse
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.learner.clone(),
                    r.side.clone(),
                    num(r.mean_imse),
                    num(r.sd_imse),
                    num(r.ratio_to_oracle),
                    r.reps.to_string(),
                ]
            })
            .collect();
        let f = dir.join("imse.csv");
        write_rows(&f, &["n", "learner", "side", "mean_imse", "sd_imse", "ratio_to_oracle", "reps"], &rows)?;
        files.push(f);
    }
    if !report.regret.is_empty() {
        let rows: Vec<Vec<String>> = report
            .regret
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    num(r.mean_regret),
                    num(r.min_regret),
                    num(r.max_regret),
                    num(r.bound_holds),
                    r.reps.to_string(),
                ]
            })
            .collect();
        let f = dir.join("regret.csv");
        write_rows(&f, &["n", "mean_regret", "min_regret", "max_regret", "bound_holds", "reps"], &rows)?;
        files.push(f);
    }
    // Mean bounds against sample size, one file per (estimand, target, bounding).
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for c in &report.cells {
        let k = (c.estimand.clone(), target(c.target), c.bounding.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (i, (est, tgt, bnd)) in keys.iter().enumerate() {
        let mut ns: Vec<usize> = report.cells.iter().map(|c| c.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let mut rows = Vec::new();
        for n in ns {
            let side = |s: &str| {
                report.cells.iter().find(|c| {
                    c.n == n && &c.estimand == est && &target(c.target) == tgt && &c.bounding == bnd && c.side == s
                })
            };
            if let (Some(l), Some(u)) = (side("lower"), side("upper")) {
                rows.push(vec![n.to_string(), num(l.mean_estimate), num(u.mean_estimate)]);
            }
        }
        let f = dir.join(format!("plot_{i}_{}_{}.csv", slug(est), slug(tgt)));
        write_rows(&f, &["x", "lower", "upper"], &rows)?;
        files.push(f);
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub estimand: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breakdown {
    /// Smallest upper ratio at which the two intervals overlap; `None` if they stay apart.
    pub gamma: Option<f64>,
    pub first: String,
    pub second: String,
    pub first_bounds: Option<(f64, f64)>,
    pub second_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    pub breakdown: Option<Breakdown>,
}

fn sweep_bounding(sw: &SweepConfig, base: Option<&BoundingSpec>, v: f64) -> Result<BoundingSpec> {
    match sw.parameter {
        SweepParameter::Gamma => {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(CliError::Invalid(format!("gamma grid value {v} must be >= 1")));
            }
            Ok(BoundingSpec::nonparametric(1.0 / v, v))
        }
        SweepParameter::Alpha => match base {
            Some(BoundingSpec::ProxyGeneral { .. }) => Ok(BoundingSpec::ProxyGeneral { alpha: v }),
            Some(BoundingSpec::IvSmoothed { .. }) => Ok(BoundingSpec::IvSmoothed { alpha: v }),
            _ => Err(CliError::Invalid(
                "alpha sweeps need a proxy_general or iv_smoothed bounding".into(),
            )),
        },
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.max(b.0) <= a.1.min(b.1)
}

/// Bisection for the smallest `gamma` in `[1, gamma_max]` at which the intervals overlap.
pub fn breakdown_search(
    mut intervals: impl FnMut(f64) -> Result<((f64, f64), (f64, f64))>,
    gamma_max: f64,
    tol: f64,
) -> Result<Option<f64>> {
    if !(gamma_max > 1.0) || !(tol > 0.0) {
        return Err(CliError::Invalid("breakdown needs gamma_max > 1 and tol > 0".into()));
    }
    let (a, b) = intervals(1.0)?;
    if overlap(a, b) {
        return Ok(Some(1.0));
    }
    let (a, b) = intervals(gamma_max)?;
    if !overlap(a, b) {
        return Ok(None);
    }
    let (mut lo, mut hi) = (1.0, gamma_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (a, b) = intervals(mid)?;
        if overlap(a, b) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Bounds over a grid of confounding strengths or smoothing parameters, with an
/// optional breakdown search.
pub fn sweep(cfg: &RunConfig) -> Result<(SweepReport, Vec<PathBuf>)> {
    cfg.validate(true)?;
    let sw = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Invalid("`sweep` section is required".into()))?;
    if sw.grid.is_empty() && sw.breakdown.is_none() {
        return Err(CliError::Invalid("sweep needs a grid or a breakdown search".into()));
    }
    let estimands = cfg.all_estimands();
    let p = prepare(cfg)?;
    let score = need_score(&p)?;
    let req = match sw.parameter {
        SweepParameter::Gamma => Requirements::default(),
        SweepParameter::Alpha => sweep_bounding(sw, cfg.bounding.as_ref(), 1.0)?.requirements(),
    };
    let b = bundle(cfg, &p.data, cfg.folds, req)?;
    let ctx = Ctx {
        data: &p.data,
        score,
        bundle: &b,
        cfg,
    };
    let mut rows = Vec::new();
    for spec in &estimands {
        for &v in &sw.grid {
            let e = estimate(&ctx, spec, &sweep_bounding(sw, cfg.bounding.as_ref(), v)?, Target::All)?;
            rows.push(SweepRow {
                estimand: spec.label(),
                value: v,
                lower: e.lower,
                upper: e.upper,
            });
        }
    }
    let breakdown = match &sw.breakdown {
        None => None,
        Some(bd) => {
            let (first, second, t1, t2) = match &bd.compare {
                Comparison::Groups { estimand } => (estimand.0, estimand.0, Target::Group(1), Target::Group(0)),
                Comparison::Estimands { first, second } => (first.0, second.0, Target::All, Target::All),
            };
            let mut at = |g: f64| -> Result<((f64, f64), (f64, f64))> {
                let bnd = BoundingSpec::nonparametric(1.0 / g, g);
                let a = estimate(&ctx, &first, &bnd, t1)?;
                let c = estimate(&ctx, &second, &bnd, t2)?;
                Ok(((a.lower, a.upper), (c.lower, c.upper)))
            };
            let gamma = breakdown_search(&mut at, bd.gamma_max, bd.tol)?;
            let bounds = gamma.map(&mut at).transpose()?;
            let label = |s: &PerformanceSpec, t: Target| match t {
                Target::Group(g) => format!("{} (group {g})", s.label()),
                _ => s.label(),
            };
            Some(Breakdown {
                gamma,
                first: label(&first, t1),
                second: label(&second, t2),
                first_bounds: bounds.map(|b| b.0),
                second_bounds: bounds.map(|b| b.1),
            })
        }
    };
    let report = SweepReport {
        parameter: sw.parameter,
        rows,
        breakdown,
    };
    let dir = out_dir(cfg)?;
    let mut files = Vec::new();
    if cfg.wants(Format::Json) {
        let f = dir.join("sweep.json");
        write_json(&f, &report)?;
        files.push(f);
    }
    if cfg.wants(Format::Csv) {
        let col = match sw.parameter {
            SweepParameter::Gamma => "gamma",
            SweepParameter::Alpha => "x",
        };
        for (i, spec) in estimands.iter().enumerate() {
            let label = spec.label();
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .filter(|r| r.estimand == label)
                .map(|r| vec![num(r.value), num(r.lower), num(r.upper)])
                .collect();
            let f = dir.join(format!("sweep_{i}_{}.csv", slug(&label)));
            write_rows(&f, &[col, "lower", "upper"], &rows)?;
            files.push(f);
        }
    }
    Ok((report, files))
}

/// Writes a simulated dataset (with its trained score) as CSV.
pub fn export_simulated(cfg: &RunConfig, path: &Path) -> Result<()> {
    cfg.validate(true)?;
    let p = prepare(cfg)?;
    let scores = match &p.score {
        Some(s) => Some(s.values(&p.data)?),
        None => None,
    };
    crate::io::write_csv(path, &p.data.to_raw(), scores.as_deref())
}
