//! Bounds on class-conditional performance (`E[beta0 | Y* = 1]` and `E[beta0 | Y* = 0]`),
//! ROC bands and class-conditional disparities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{eif_mu, lfp_box_terms, BoundingSpec};
use crate::data::{beta_vectors, Dataset, EstimandClass, PerformanceSpec, Score};
use crate::error::{Error, Result};
use crate::lfp::{solve_fold_lfp, Direction, LfpInstance};
use crate::nuisance::NuisanceBundle;
use crate::overall::{mean, BoundsEstimate};

/// Builds one program per fold for the records in `idx`.
fn fold_instances(
    data: &Dataset,
    scores: &[f64],
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
    group: Option<u8>,
) -> Result<Vec<LfpInstance>> {
    if bundle.len() != data.len() {
        return Err(Error::InvalidParameter("bundle does not match dataset".into()));
    }
    bounding.validate(data.z_support())?;
    bundle.check_for(bounding)?;
    if group.is_some() && !data.has_group() {
        return Err(Error::MissingColumn("group attribute"));
    }
    let (b0, _) = beta_vectors(spec, scores)?;
    let folds = bundle.folds();
    let mut out = Vec::with_capacity(folds.k);
    for f in 0..folds.k {
        let idx: Vec<usize> = folds
            .members(f)
            .into_iter()
            .filter(|&i| group.is_none() || data.records()[i].g == group)
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyStratum(match group {
                Some(g) => format!("group {g} in fold {f}"),
                None => format!("fold {f}"),
            }));
        }
        let mut inst = LfpInstance {
            a: Vec::with_capacity(idx.len()),
            w: Vec::with_capacity(idx.len()),
            lo: Vec::with_capacity(idx.len()),
            hi: Vec::with_capacity(idx.len()),
            b: Vec::with_capacity(idx.len()),
        };
        for &i in &idx {
            let r = &data.records()[i];
            let eta = bundle.eta(i);
            let bx = lfp_box_terms(r, eta, bounding, bundle.z_support())?;
            inst.a.push(eif_mu(r, eta));
            inst.w.push(bx.w);
            inst.lo.push(bx.lo);
            inst.hi.push(bx.hi);
            inst.b.push(b0[i]);
        }
        out.push(inst);
    }
    Ok(out)
}

fn solve_folds(instances: &[LfpInstance], class: EstimandClass, n: usize) -> Result<BoundsEstimate> {
    let mut fold_lower = Vec::with_capacity(instances.len());
    let mut fold_upper = Vec::with_capacity(instances.len());
    let mut swapped = 0;
    for inst in instances {
        let inst = match class {
            EstimandClass::Negative => inst.complement(),
            _ => inst.clone(),
        };
        let up = solve_fold_lfp(&inst, Direction::Max)?;
        let lo = solve_fold_lfp(&inst, Direction::Min)?;
        swapped += up.swapped;
        fold_upper.push(up.value);
        fold_lower.push(lo.value);
    }
    Ok(BoundsEstimate {
        fold_lower: fold_lower.clone(),
        fold_upper: fold_upper.clone(),
        swapped_boxes: swapped,
        ..BoundsEstimate::points(mean(&fold_lower), mean(&fold_upper), n)
    })
}

fn class_bounds(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
    group: Option<u8>,
) -> Result<BoundsEstimate> {
    let class = spec.class();
    if class == EstimandClass::Overall {
        return Err(Error::EstimandClass {
            kind: spec.label(),
            found: class.name(),
            expected: "positive- or negative-class",
        });
    }
    let scores = score.values(data)?;
    let inst = fold_instances(data, &scores, spec, bounding, bundle, group)?;
    let n = inst.iter().map(|i| i.len()).sum();
    solve_folds(&inst, class, n)
}

/// Bounds on `E[beta0 | Y* = 1]`, averaging exact per-fold program solutions.
pub fn estimate_positive_class_bounds(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
) -> Result<BoundsEstimate> {
    spec.require_class(EstimandClass::Positive)?;
    class_bounds(data, score, spec, bounding, bundle, None)
}

/// Bounds on `E[beta0 | Y* = 0]`.
pub fn estimate_negative_class_bounds(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
) -> Result<BoundsEstimate> {
    spec.require_class(EstimandClass::Negative)?;
    class_bounds(data, score, spec, bounding, bundle, None)
}

/// Class-conditional bounds within `G = group`.
pub fn estimate_class_bounds_in_group(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
    group: u8,
) -> Result<BoundsEstimate> {
    class_bounds(data, score, spec, bounding, bundle, Some(group))
}

/// Non-sharp bounds on `perf(G = 1) - perf(G = 0)` for a class-conditional measure.
pub fn positive_class_disparity_bounds(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
) -> Result<BoundsEstimate> {
    let g1 = class_bounds(data, score, spec, bounding, bundle, Some(1))?;
    let g0 = class_bounds(data, score, spec, bounding, bundle, Some(0))?;
    Ok(BoundsEstimate {
        swapped_boxes: g1.swapped_boxes + g0.swapped_boxes,
        ..BoundsEstimate::points(g1.lower - g0.upper, g1.upper - g0.lower, data.len())
    })
}

/// Bootstrap standard errors `(se_lower, se_upper)` for class-conditional bounds.
///
/// Heuristic: records are resampled within folds while nuisance values stay fixed.
pub fn bootstrap_class_bounds(
    data: &Dataset,
    score: &Score,
    spec: &PerformanceSpec,
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if reps < 2 {
        return Err(Error::InvalidParameter("bootstrap needs at least 2 resamples".into()));
    }
    let class = spec.class();
    if class == EstimandClass::Overall {
        return Err(Error::EstimandClass {
            kind: spec.label(),
            found: class.name(),
            expected: "positive- or negative-class",
        });
    }
    let scores = score.values(data)?;
    let inst = fold_instances(data, &scores, spec, bounding, bundle, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lows = Vec::with_capacity(reps);
    let mut ups = Vec::with_capacity(reps);
    for _ in 0..reps {
        let resampled: Vec<LfpInstance> = inst
            .iter()
            .map(|f| {
                let m = f.len();
                let pick: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
                LfpInstance {
                    a: pick.iter().map(|&i| f.a[i]).collect(),
                    w: pick.iter().map(|&i| f.w[i]).collect(),
                    lo: pick.iter().map(|&i| f.lo[i]).collect(),
                    hi: pick.iter().map(|&i| f.hi[i]).collect(),
                    b: pick.iter().map(|&i| f.b[i]).collect(),
                }
            })
            .collect();
        let e = solve_folds(&resampled, class, data.len())?;
        lows.push(e.lower);
        ups.push(e.upper);
    }
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    Ok((sd(&lows), sd(&ups)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub tau: f64,
    pub tpr_lo: f64,
    pub tpr_hi: f64,
    pub fpr_lo: f64,
    pub fpr_hi: f64,
}

/// Bound boxes on (FPR, TPR) at each threshold.
pub fn roc_bounds(
    data: &Dataset,
    score: &Score,
    thresholds: &[f64],
    bounding: &BoundingSpec,
    bundle: &NuisanceBundle,
) -> Result<Vec<RocPoint>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("threshold grid must be sorted".into()));
    }
    thresholds
        .iter()
        .map(|&tau| {
            let tpr = estimate_positive_class_bounds(
                data,
                score,
                &PerformanceSpec::ThresholdTpr { tau },
                bounding,
                bundle,
            )?;
            let fpr = estimate_negative_class_bounds(
                data,
                score,
                &PerformanceSpec::ThresholdFpr { tau },
                bounding,
                bundle,
            )?;
            Ok(RocPoint {
                tau,
                tpr_lo: tpr.lower,
                tpr_hi: tpr.upper,
                fpr_lo: fpr.lower,
                fpr_hi: fpr.upper,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocSide {
    /// Most favourable curve: lowest FPR with highest TPR.
    Hi,
    /// Least favourable curve: highest FPR with lowest TPR.
    Lo,
}

/// Trapezoid-rule area under the curve, with (0,0) and (1,1) appended.
pub fn auc_from_curve(points: &[RocPoint], which: RocSide) -> f64 {
    let mut xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| match which {
            RocSide::Hi => (p.fpr_lo, p.tpr_hi),
            RocSide::Lo => (p.fpr_hi, p.tpr_lo),
        })
        .collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    xy.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_curve_has_half_area() {
        let pts = [RocPoint {
            tau: 0.5,
            tpr_lo: 0.5,
            tpr_hi: 0.5,
            fpr_lo: 0.5,
            fpr_hi: 0.5,
        }];
        assert!((auc_from_curve(&pts, RocSide::Hi) - 0.5).abs() < 1e-15);
        assert!((auc_from_curve(&[], RocSide::Lo) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_curve_has_unit_area() {
        let pts = [RocPoint {
            tau: 0.5,
            tpr_lo: 1.0,
            tpr_hi: 1.0,
            fpr_lo: 0.0,
            fpr_hi: 0.0,
        }];
        assert!((auc_from_curve(&pts, RocSide::Hi) - 1.0).abs() < 1e-15);
    }
}
