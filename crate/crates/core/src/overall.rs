//! Debiased estimates of bounds on overall performance and overall disparities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::{eif_mu, pseudo_bound_terms, BoundingSpec};
use crate::data::{beta_vectors, Dataset, EstimandClass, PerformanceSpec, Score};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceBundle;

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Lower and upper bound estimates with optional inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsEstimate {
    pub lower: f64,
    pub upper: f64,
    /// Per-observation influence values; empty for class-conditional estimands.
    pub per_obs_lower: Vec<f64>,
    pub per_obs_upper: Vec<f64>,
    /// Covariance of (lower, upper) influence values.
    pub cov: Option<[[f64; 2]; 2]>,
    pub n: usize,
    pub level: f64,
    pub ci_lower: Option<(f64, f64)>,
    pub ci_upper: Option<(f64, f64)>,
    /// Fold-level values for class-conditional estimands.
    pub fold_lower: Vec<f64>,
    pub fold_upper: Vec<f64>,
    /// Records whose estimated box was inverted and swapped before solving.
    pub swapped_boxes: usize,
}

impl BoundsEstimate {
    /// Point-only estimate, used by the class-conditional estimators.
    pub fn points(lower: f64, upper: f64, n: usize) -> Self {
        Self {
            lower,
            upper,
            per_obs_lower: vec![],
            per_obs_upper: vec![],
            cov: None,
            n,
            level: DEFAULT_LEVEL,
            ci_lower: None,
            ci_upper: None,
            fold_lower: vec![],
            fold_upper: vec![],
            swapped_boxes: 0,
        }
    }

    /// Builds an estimate from influence values and attaches Wald intervals at `level`.
    pub fn from_influence(per_obs_lower: Vec<f64>, per_obs_upper: Vec<f64>, level: f64) -> Result<Self> {
        let n = per_obs_lower.len();
        let cov = estimate_covariance(&per_obs_lower, &per_obs_upper)?;
        let est = Self {
            lower: mean(&per_obs_lower),
            upper: mean(&per_obs_upper),
            per_obs_lower,
            per_obs_upper,
            cov: Some(cov),
            n,
            ..Self::points(0.0, 0.0, n)
        };
        confidence_intervals(est, level)
    }

    pub fn se_lower(&self) -> Option<f64> {
        self.cov.map(|c| (c[0][0] / self.n as f64).sqrt())
    }

    pub fn se_upper(&self) -> Option<f64> {
        self.cov.map(|c| (c[1][1] / self.n as f64).sqrt())
    }
}

/// Pairwise summation; the split points depend only on the length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Covariance (1/n normalization) of the lower and upper influence values, ordered (lower, upper).
pub fn estimate_covariance(lower: &[f64], upper: &[f64]) -> Result<[[f64; 2]; 2]> {
    let n = lower.len();
    if n < 2 || upper.len() != n {
        return Err(Error::InvalidParameter(format!(
            "covariance needs two equal-length vectors with n >= 2 (got {n}, {})",
            upper.len()
        )));
    }
    let (ml, mu) = (mean(lower), mean(upper));
    let cl: Vec<f64> = lower.iter().map(|v| v - ml).collect();
    let cu: Vec<f64> = upper.iter().map(|v| v - mu).collect();
    let prod = |a: &[f64], b: &[f64]| {
        let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        mean(&p)
    };
    let c01 = prod(&cl, &cu);
    Ok([[prod(&cl, &cl), c01], [c01, prod(&cu, &cu)]])
}

/// Two-sided normal quantile `z_{1 - (1 - level) / 2}`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Attaches per-bound Wald intervals `point +- z sqrt(var / n)`.
pub fn confidence_intervals(mut est: BoundsEstimate, level: f64) -> Result<BoundsEstimate> {
    let z = normal_quantile(level)?;
    let cov = est
        .cov
        .ok_or_else(|| Error::InvalidParameter("no covariance available for intervals".into()))?;
    let n = est.n as f64;
    let hl = z * (cov[0][0] / n).sqrt();
    let hu = z * (cov[1][1] / n).sqrt();
    est.ci_lower = Some((est.lower - hl, est.lower + hl));
    est.ci_upper = Some((est.upper - hu, est.upper + hu));
    est.level = level;
    Ok(est)
}

fn prepare(
    data: &Dataset,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
) -> Result<()> {
    if bundle.len() != data.len() {
        return Err(Error::InvalidParameter(format!(
            "bundle covers {} records, dataset has {}",
            bundle.len(),
            data.len()
        )));
    }
    bounding.validate(data.z_support())?;
    bundle.check_for(bounding)?;
    if *bounding == BoundingSpec::ProxySimple {
        warn_proxy_simple(bundle);
    }
    Ok(())
}

/// Warns when the average plug-in proxy nuisances violate the simple-proxy ordering conditions.
pub fn warn_proxy_simple(bundle: &NuisanceBundle) {
    let n = bundle.len() as f64;
    let (mut g, mut m) = (0.0, 0.0);
    for i in 0..bundle.len() {
        if let Some(p) = bundle.eta(i).proxy {
            g += p.gamma1;
            m += p.mu_tilde0;
        }
    }
    let (g, m) = (g / n, m / n);
    if m > g || g + m > 1.0 {
        log::warn!(
            "simple proxy conditions fail on average (gamma1={g:.3}, mu_tilde0={m:.3}); consider proxy_general"
        );
    }
}

/// Per-record `(lower, upper)` influence values for record subset `idx`.
fn overall_terms(
    data: &Dataset,
    scores: &[f64],
    idx: &[usize],
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    let (b0, b1) = beta_vectors(spec, &s)?;
    let mut lo = Vec::with_capacity(idx.len());
    let mut hi = Vec::with_capacity(idx.len());
    for (k, &i) in idx.iter().enumerate() {
        let r = &data.records()[i];
        let eta = bundle.eta(i);
        let (l, u) = pseudo_bound_terms(r, eta, bounding, bundle.z_support())?;
        let base = b0[k] + b1[k] * eif_mu(r, eta);
        let (up, down) = if b1[k] > 0.0 { (u, l) } else { (l, u) };
        hi.push(base + b1[k] * up);
        lo.push(base + b1[k] * down);
    }
    Ok((lo, hi))
}

/// Bounds on `E[beta0 + beta1 Y*]` over the identified set.
pub fn estimate_overall_bounds(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
) -> Result<BoundsEstimate> {
    spec.require_class(EstimandClass::Overall)?;
    prepare(data, bounding, bundle)?;
    let scores = score.values(data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let (lo, hi) = overall_terms(data, &scores, &idx, spec, bounding, bundle)?;
    BoundsEstimate::from_influence(lo, hi, DEFAULT_LEVEL)
}

/// Overall bounds within the subpopulation `G = group`.
pub fn estimate_overall_bounds_in_group(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
    group: u8,
) -> Result<BoundsEstimate> {
    spec.require_class(EstimandClass::Overall)?;
    prepare(data, bounding, bundle)?;
    let idx = group_indices(data, group)?;
    let scores = score.values(data)?;
    let (lo, hi) = overall_terms(data, &scores, &idx, spec, bounding, bundle)?;
    BoundsEstimate::from_influence(lo, hi, DEFAULT_LEVEL)
}

pub(crate) fn group_indices(data: &Dataset, group: u8) -> Result<Vec<usize>> {
    if !data.has_group() {
        return Err(Error::MissingColumn("group attribute"));
    }
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| data.records()[i].g == Some(group))
        .collect();
    if idx.len() < 2 {
        return Err(Error::EmptyStratum(format!("group {group}")));
    }
    Ok(idx)
}

/// Group share used by the disparity estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupProb {
    #[default]
    Empirical,
    Known(f64),
}

/// Bounds on `perf(G = 1) - perf(G = 0)` for an overall measure.
pub fn estimate_overall_disparity_bounds(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
    group_prob: GroupProb,
) -> Result<BoundsEstimate> {
    spec.require_class(EstimandClass::Overall)?;
    prepare(data, bounding, bundle)?;
    let g1 = group_indices(data, 1)?.len();
    group_indices(data, 0)?;
    let p1 = match group_prob {
        GroupProb::Empirical => g1 as f64 / data.len() as f64,
        GroupProb::Known(p) if p > 0.0 && p < 1.0 => p,
        GroupProb::Known(p) => {
            return Err(Error::InvalidParameter(format!("group probability {p} outside (0, 1)")))
        }
    };
    let p0 = 1.0 - p1;
    let scores = score.values(data)?;
    // Bin shares for calibration/precision are taken within each group.
    let beta_in = |g: u8| -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let idx = group_indices(data, g)?;
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let (b0, b1) = beta_vectors(spec, &s)?;
        Ok((idx, b0, b1))
    };
    let mut b0 = vec![0.0; data.len()];
    let mut b1 = vec![0.0; data.len()];
    for g in [0u8, 1] {
        let (idx, v0, v1) = beta_in(g)?;
        for (k, &i) in idx.iter().enumerate() {
            b0[i] = v0[k];
            b1[i] = v1[k];
        }
    }
    let mut lo = Vec::with_capacity(data.len());
    let mut hi = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        let eta = bundle.eta(i);
        let (l, u) = pseudo_bound_terms(r, eta, bounding, bundle.z_support())?;
        let in1 = r.g == Some(1);
        let (bt0, bt1) = if in1 {
            (b0[i] / p1, b1[i] / p1)
        } else {
            (-b0[i] / p0, -b1[i] / p0)
        };
        let nu_hi = if in1 { b1[i] >= 0.0 } else { b1[i] <= 0.0 };
        let base = bt0 + bt1 * eif_mu(r, eta);
        let (up, down) = if nu_hi { (u, l) } else { (l, u) };
        hi.push(base + bt1 * up);
        lo.push(base + bt1 * down);
    }
    BoundsEstimate::from_influence(lo, hi, DEFAULT_LEVEL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        let c = estimate_covariance(&[2.0; 5], &[3.0; 5]).unwrap();
        assert_eq!(c, [[0.0, 0.0], [0.0, 0.0]]);
        let v = [0.1, 0.5, -0.3, 2.0];
        let c = estimate_covariance(&v, &v).unwrap();
        assert_eq!(c[0][0], c[1][1]);
        assert_eq!(c[0][1], c[0][0]);
        assert!(estimate_covariance(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn wald_half_width() {
        let est = BoundsEstimate {
            cov: Some([[1.0, 0.0], [0.0, 0.0]]),
            n: 1,
            ..BoundsEstimate::points(0.0, 2.0, 1)
        };
        let est = confidence_intervals(est, 0.95).unwrap();
        let (a, b) = est.ci_lower.unwrap();
        assert!((b - 1.959964).abs() < 1e-6 && (a + 1.959964).abs() < 1e-6);
        assert_eq!(est.ci_upper.unwrap(), (2.0, 2.0));
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }
}
