//! In-repo binary classifiers used for nuisance estimation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clip applied to degenerate constant models.
pub const DEFAULT_EPS: f64 = 0.01;

fn one() -> f64 {
    1.0
}
fn default_trees() -> usize {
    100
}
fn default_depth() -> usize {
    2
}
fn default_rate() -> f64 {
    0.1
}
fn default_min_leaf() -> usize {
    10
}

/// Learner family and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerFamily {
    /// L2-penalized logistic regression on standardized features, unpenalized intercept.
    /// The penalty applies to the summed log-loss.
    Logistic {
        #[serde(default = "one")]
        lambda: f64,
        /// When set, `lambda` is chosen from this grid by 3-fold cross-validated log-loss.
        #[serde(default)]
        lambda_grid: Option<Vec<f64>>,
    },
    Knn {
        k: usize,
    },
    /// Gradient boosting of shallow regression trees under logistic loss.
    BoostedTrees {
        #[serde(default = "default_trees")]
        n_trees: usize,
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_rate")]
        learning_rate: f64,
        #[serde(default = "one")]
        subsample: f64,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    #[serde(flatten)]
    pub family: LearnerFamily,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            family: LearnerFamily::Logistic {
                lambda: 1.0,
                lambda_grid: None,
            },
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn logistic(lambda: f64) -> Self {
        Self {
            family: LearnerFamily::Logistic {
                lambda,
                lambda_grid: None,
            },
            seed: 0,
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            family: LearnerFamily::Knn { k },
            seed: 0,
        }
    }

    pub fn boosted(n_trees: usize, max_depth: usize, learning_rate: f64) -> Self {
        Self {
            family: LearnerFamily::BoostedTrees {
                n_trees,
                max_depth,
                learning_rate,
                subsample: 1.0,
                min_leaf: default_min_leaf(),
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match &self.family {
            LearnerFamily::Logistic { lambda, lambda_grid } => {
                if !(*lambda > 0.0) {
                    return bad(format!("logistic lambda must be positive, got {lambda}"));
                }
                if let Some(g) = lambda_grid {
                    if g.is_empty() || g.iter().any(|l| !(*l > 0.0)) {
                        return bad("lambda grid must be nonempty and positive".into());
                    }
                }
                Ok(())
            }
            LearnerFamily::Knn { k } if *k == 0 => bad("knn k must be positive".into()),
            LearnerFamily::BoostedTrees {
                n_trees,
                max_depth,
                learning_rate,
                subsample,
                min_leaf,
            } => {
                if *n_trees == 0 || *max_depth == 0 || *min_leaf == 0 {
                    return bad("tree count, depth and leaf size must be positive".into());
                }
                if !(*learning_rate > 0.0) || !(*subsample > 0.0 && *subsample <= 1.0) {
                    return bad("learning rate must be positive and subsample in (0, 1]".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Fitted classifier. Predictions lie in [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Constant {
        p: f64,
    },
    Logistic {
        mean: Vec<f64>,
        scale: Vec<f64>,
        coef: Vec<f64>,
        intercept: f64,
    },
    Knn {
        dim: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        k: usize,
    },
    Boosted {
        init: f64,
        trees: Vec<Tree>,
    },
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl FittedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Constant { p } => *p,
            FittedModel::Logistic {
                mean,
                scale,
                coef,
                intercept,
            } => {
                let mut t = *intercept;
                for j in 0..coef.len() {
                    t += coef[j] * (x[j] - mean[j]) / scale[j];
                }
                sigmoid(t)
            }
            FittedModel::Knn { dim, x: tx, y, k } => knn_mean(*dim, tx, y, *k, x),
            FittedModel::Boosted { init, trees } => {
                sigmoid(init + trees.iter().map(|t| t.eval(x)).sum::<f64>())
            }
        }
    }
}

/// Mean response of the `k` nearest training points; ties in distance break by index.
pub(crate) fn knn_mean(dim: usize, tx: &[f64], y: &[f64], k: usize, q: &[f64]) -> f64 {
    let n = y.len();
    let mut d: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let row = &tx[i * dim..(i + 1) * dim];
            let s: f64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (s, i)
        })
        .collect();
    let k = k.min(n);
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        d.select_nth_unstable_by(k - 1, cmp);
    }
    d[..k].iter().map(|&(_, i)| y[i]).sum::<f64>() / k as f64
}

/// Fits a classifier; single-class labels give a constant model clipped by [`DEFAULT_EPS`].
pub fn fit_learner(x: &[&[f64]], y: &[f64], config: &LearnerConfig) -> Result<FittedModel> {
    fit_learner_clipped(x, y, config, config.seed, DEFAULT_EPS)
}

/// As [`fit_learner`] with an explicit seed and constant-model clip.
pub fn fit_learner_clipped(
    x: &[&[f64]],
    y: &[f64],
    config: &LearnerConfig,
    seed: u64,
    eps: f64,
) -> Result<FittedModel> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "{} feature rows for {} labels",
            x.len(),
            y.len()
        )));
    }
    let rate = y.iter().sum::<f64>() / y.len() as f64;
    if rate <= 0.0 || rate >= 1.0 || x.len() < 2 {
        log::warn!(
            "single-class or tiny training stratum (n={}, rate={rate}); using a constant model",
            x.len()
        );
        return Ok(FittedModel::Constant {
            p: rate.clamp(eps, 1.0 - eps),
        });
    }
    Ok(match &config.family {
        LearnerFamily::Logistic { lambda, lambda_grid } => {
            let lambda = match lambda_grid {
                Some(g) => select_lambda(x, y, g)?,
                None => *lambda,
            };
            fit_logistic(x, y, lambda)?
        }
        LearnerFamily::Knn { k } => {
            let dim = x[0].len();
            FittedModel::Knn {
                dim,
                x: x.iter().flat_map(|r| r.iter().copied()).collect(),
                y: y.to_vec(),
                k: *k,
            }
        }
        LearnerFamily::BoostedTrees {
            n_trees,
            max_depth,
            learning_rate,
            subsample,
            min_leaf,
        } => fit_boosted(
            x,
            y,
            BoostParams {
                n_trees: *n_trees,
                max_depth: *max_depth,
                rate: *learning_rate,
                subsample: *subsample,
                min_leaf: *min_leaf,
            },
            seed,
        ),
    })
}

fn standardize(x: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let p = x[0].len();
    let mut mean = vec![0.0; p];
    for r in x {
        for j in 0..p {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; p];
    for r in x {
        for j in 0..p {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn fit_logistic(x: &[&[f64]], y: &[f64], lambda: f64) -> Result<FittedModel> {
    let n = x.len();
    let p = x[0].len();
    let (mean, scale) = standardize(x);
    let q = p + 1;
    let z = DMatrix::from_fn(n, q, |i, j| {
        if j == p {
            1.0
        } else {
            (x[i][j] - mean[j]) / scale[j]
        }
    });
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(q);
    let rate = y.iter().sum::<f64>() / n as f64;
    beta[p] = logit(rate);
    let mut penalty = DMatrix::<f64>::identity(q, q) * lambda;
    penalty[(p, p)] = 0.0;
    for _ in 0..100 {
        let eta = &z * &beta;
        let prob = eta.map(sigmoid);
        let w = prob.map(|m| (m * (1.0 - m)).max(1e-10));
        let grad = z.transpose() * (&prob - &yv) + &penalty * &beta;
        let mut zw = z.clone();
        for i in 0..n {
            zw.row_mut(i).scale_mut(w[i]);
        }
        let h = z.transpose() * zw + &penalty;
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::DegenerateDesign("logistic Hessian not positive definite".into()))?;
        let step = chol.solve(&grad);
        beta -= &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    Ok(FittedModel::Logistic {
        mean,
        scale,
        coef: beta.as_slice()[..p].to_vec(),
        intercept: beta[p],
    })
}

fn select_lambda(x: &[&[f64]], y: &[f64], grid: &[f64]) -> Result<f64> {
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in grid {
        let mut loss = 0.0;
        for f in 0..3 {
            let (mut tx, mut ty, mut vx, mut vy) = (vec![], vec![], vec![], vec![]);
            for i in 0..x.len() {
                if i % 3 == f {
                    vx.push(x[i]);
                    vy.push(y[i]);
                } else {
                    tx.push(x[i]);
                    ty.push(y[i]);
                }
            }
            let r = ty.iter().sum::<f64>() / ty.len().max(1) as f64;
            let m = if r <= 0.0 || r >= 1.0 {
                FittedModel::Constant {
                    p: r.clamp(DEFAULT_EPS, 1.0 - DEFAULT_EPS),
                }
            } else {
                fit_logistic(&tx, &ty, lambda)?
            };
            for (xi, yi) in vx.iter().zip(&vy) {
                let pr = m.predict(xi).clamp(1e-12, 1.0 - 1e-12);
                loss -= yi * pr.ln() + (1.0 - yi) * (1.0 - pr).ln();
            }
        }
        if loss < best.0 {
            best = (loss, lambda);
        }
    }
    Ok(best.1)
}

struct BoostParams {
    n_trees: usize,
    max_depth: usize,
    rate: f64,
    subsample: f64,
    min_leaf: usize,
}

const LEAF_REG: f64 = 1.0;
const NONE: usize = usize::MAX;

fn fit_boosted(x: &[&[f64]], y: &[f64], bp: BoostParams, seed: u64) -> FittedModel {
    let n = x.len();
    let p = x[0].len();
    let rate0 = y.iter().sum::<f64>() / n as f64;
    let init = logit(rate0);
    let mut f = vec![init; n];
    let orders: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| x[a][j].total_cmp(&x[b][j]).then(a.cmp(&b)));
            o
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(bp.n_trees);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for _ in 0..bp.n_trees {
        for i in 0..n {
            let m = sigmoid(f[i]);
            g[i] = y[i] - m;
            h[i] = m * (1.0 - m);
        }
        let in_sample: Vec<bool> = if bp.subsample < 1.0 {
            (0..n).map(|_| rng.random::<f64>() < bp.subsample).collect()
        } else {
            vec![true; n]
        };
        let tree = grow_tree(x, &orders, &g, &h, &in_sample, &bp);
        for i in 0..n {
            f[i] += tree.eval(x[i]);
        }
        trees.push(tree);
    }
    FittedModel::Boosted { init, trees }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    c: usize,
}

#[derive(Clone, Copy)]
struct Cand {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn grow_tree(
    x: &[&[f64]],
    orders: &[Vec<usize>],
    g: &[f64],
    h: &[f64],
    in_sample: &[bool],
    bp: &BoostParams,
) -> Tree {
    let n = x.len();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut node_of: Vec<usize> = (0..n).map(|i| if in_sample[i] { 0 } else { NONE }).collect();
    let mut frontier = vec![0usize];
    for depth in 0..=bp.max_depth {
        let mut totals = vec![Stats::default(); nodes.len()];
        for i in 0..n {
            if node_of[i] != NONE {
                let t = &mut totals[node_of[i]];
                t.g += g[i];
                t.h += h[i];
                t.c += 1;
            }
        }
        for &id in &frontier {
            let t = totals[id];
            nodes[id] = Node::Leaf(bp.rate * t.g / (t.h + LEAF_REG));
        }
        if depth == bp.max_depth || frontier.is_empty() {
            break;
        }
        let mut best: Vec<Option<Cand>> = vec![None; nodes.len()];
        let mut acc = vec![Stats::default(); nodes.len()];
        let mut last = vec![f64::NAN; nodes.len()];
        for (j, order) in orders.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = Stats::default());
            last.iter_mut().for_each(|v| *v = f64::NAN);
            for &i in order {
                let id = node_of[i];
                if id == NONE {
                    continue;
                }
                let v = x[i][j];
                let a = acc[id];
                let t = totals[id];
                if a.c >= bp.min_leaf && t.c - a.c >= bp.min_leaf && v > last[id] {
                    let (rg, rh) = (t.g - a.g, t.h - a.h);
                    let gain = a.g * a.g / (a.h + LEAF_REG) + rg * rg / (rh + LEAF_REG)
                        - t.g * t.g / (t.h + LEAF_REG);
                    if gain > 1e-12 && best[id].map_or(true, |b| gain > b.gain) {
                        best[id] = Some(Cand {
                            gain,
                            feature: j,
                            threshold: 0.5 * (last[id] + v),
                        });
                    }
                }
                let a = &mut acc[id];
                a.g += g[i];
                a.h += h[i];
                a.c += 1;
                last[id] = v;
            }
        }
        let mut next = Vec::new();
        let mut children = vec![(NONE, NONE); nodes.len()];
        for &id in &frontier {
            if let Some(c) = best[id] {
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[id] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                children[id] = (left, left + 1);
                next.push(left);
                next.push(left + 1);
            }
        }
        for i in 0..n {
            let id = node_of[i];
            if id == NONE {
                continue;
            }
            if let Node::Split {
                feature, threshold, ..
            } = nodes[id]
            {
                let (l, r) = children[id];
                if l != NONE {
                    node_of[i] = if x[i][feature] <= threshold { l } else { r };
                }
            }
        }
        frontier = next;
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_labels_give_clipped_constant() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = fit_learner(&xr, &[0.0; 5], &LearnerConfig::default()).unwrap();
        assert_eq!(m.predict(&[100.0]), 0.01);
        let m = fit_learner(&xr, &[1.0; 5], &LearnerConfig::knn(3)).unwrap();
        assert_eq!(m.predict(&[0.0]), 0.99);
    }

    #[test]
    fn empty_input_errors() {
        assert!(fit_learner(&[], &[], &LearnerConfig::default()).is_err());
    }

    #[test]
    fn one_nn_memorizes() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i >= 10 { 1.0 } else { 0.0 }).collect();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = fit_learner(&xr, &y, &LearnerConfig::knn(1)).unwrap();
        for (xi, yi) in xr.iter().zip(&y) {
            assert_eq!(m.predict(xi), *yi);
        }
    }

    #[test]
    fn logistic_recovers_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..2000)
            .map(|_| vec![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                if rng.random::<f64>() < sigmoid(1.5 * r[0]) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = fit_learner(&xr, &y, &LearnerConfig::logistic(1e-3)).unwrap();
        let p = m.predict(&[1.0, 0.0]);
        assert!((p - sigmoid(1.5)).abs() < 0.05, "{p}");
        for xi in &xr {
            let v = m.predict(xi);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn boosted_trees_fit_a_step() {
        let x: Vec<Vec<f64>> = (0..400).map(|i| vec![i as f64 / 400.0, 0.5]).collect();
        let y: Vec<f64> = (0..400).map(|i| if i >= 200 { 1.0 } else { 0.0 }).collect();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = fit_learner(&xr, &y, &LearnerConfig::boosted(50, 1, 0.3)).unwrap();
        assert!(m.predict(&[0.1, 0.5]) < 0.1);
        assert!(m.predict(&[0.9, 0.5]) > 0.9);
        let again = fit_learner(&xr, &y, &LearnerConfig::boosted(50, 1, 0.3)).unwrap();
        assert_eq!(m.predict(&[0.37, 0.5]), again.predict(&[0.37, 0.5]));
    }

    #[test]
    fn lambda_grid_selects_from_grid() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i % 5) as f64]).collect();
        let y: Vec<f64> = (0..60).map(|i| ((i % 7) > 3) as u8 as f64).collect();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let grid = vec![0.1, 10.0];
        let l = select_lambda(&xr, &y, &grid).unwrap();
        assert!(grid.contains(&l));
    }
}
