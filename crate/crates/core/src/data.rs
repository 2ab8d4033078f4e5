//! Records, datasets, scores, performance measures and fold assignment.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unvalidated record as read from disk or produced by a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub x: Vec<f64>,
    pub d: f64,
    pub y: f64,
    pub z: Option<f64>,
    pub y_proxy: Option<f64>,
    pub g: Option<f64>,
}

/// A validated observation. `y` is the observed outcome `D * Y*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub x: Vec<f64>,
    pub d: u8,
    pub y: u8,
    /// Instrument value.
    pub z: Option<i64>,
    pub y_proxy: Option<u8>,
    /// Group attribute used by the disparity estimators.
    pub g: Option<u8>,
}

impl Record {
    pub fn df(&self) -> f64 {
        f64::from(self.d)
    }

    pub fn yf(&self) -> f64 {
        f64::from(self.y)
    }
}

/// Immutable, validated collection of records.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<Record>,
    dim: usize,
    z_support: Vec<i64>,
    n_selected: usize,
}

fn binary(index: usize, field: &'static str, value: f64) -> Result<u8> {
    if value == 0.0 {
        Ok(0)
    } else if value == 1.0 {
        Ok(1)
    } else {
        Err(Error::NonBinary {
            index,
            field,
            value,
        })
    }
}

/// Checks the model constraints and builds a [`Dataset`].
pub fn validate_dataset(raw: &[RawRecord]) -> Result<Dataset> {
    let first = raw.first().ok_or(Error::Empty("record sequence"))?;
    let dim = first.x.len();
    let mut records = Vec::with_capacity(raw.len());
    for (index, r) in raw.iter().enumerate() {
        if r.x.len() != dim {
            return Err(Error::DimensionMismatch {
                index,
                expected: dim,
                found: r.x.len(),
            });
        }
        if r.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index, field: "x" });
        }
        let d = binary(index, "d", r.d)?;
        let y = binary(index, "y", r.y)?;
        if d == 0 && y == 1 {
            return Err(Error::OutcomeWithoutSelection { index });
        }
        let z = match r.z {
            Some(v) if v.fract() != 0.0 || !v.is_finite() => {
                return Err(Error::InvalidParameter(format!(
                    "record {index}: instrument value {v} is not an integer category"
                )))
            }
            Some(v) => Some(v as i64),
            None => None,
        };
        let y_proxy = r.y_proxy.map(|v| binary(index, "y_proxy", v)).transpose()?;
        let g = r.g.map(|v| binary(index, "g", v)).transpose()?;
        records.push(Record {
            x: r.x.clone(),
            d,
            y,
            z,
            y_proxy,
            g,
        });
    }
    Dataset::from_records(records)
}

impl Dataset {
    /// Builds a dataset from already-typed records, checking the shared invariants.
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let first = records.first().ok_or(Error::Empty("record sequence"))?;
        let dim = first.x.len();
        for (index, r) in records.iter().enumerate() {
            if r.x.len() != dim {
                return Err(Error::DimensionMismatch {
                    index,
                    expected: dim,
                    found: r.x.len(),
                });
            }
            if r.d == 0 && r.y == 1 {
                return Err(Error::OutcomeWithoutSelection { index });
            }
        }
        let n = records.len();
        let n_selected = records.iter().filter(|r| r.d == 1).count();
        if n_selected == 0 || n_selected == n {
            return Err(Error::DegenerateSelection {
                selected: n_selected,
                n,
            });
        }
        let mut z_support: Vec<i64> = records.iter().filter_map(|r| r.z).collect();
        z_support.sort_unstable();
        z_support.dedup();
        Ok(Self {
            records,
            dim,
            z_support,
            n_selected,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn z_support(&self) -> &[i64] {
        &self.z_support
    }

    pub fn n_selected(&self) -> usize {
        self.n_selected
    }

    pub fn n_unselected(&self) -> usize {
        self.records.len() - self.n_selected
    }

    pub fn has_proxy(&self) -> bool {
        self.records.iter().all(|r| r.y_proxy.is_some())
    }

    pub fn has_instrument(&self) -> bool {
        self.records.iter().all(|r| r.z.is_some())
    }

    pub fn has_group(&self) -> bool {
        self.records.iter().all(|r| r.g.is_some())
    }

    /// Subset by indices. Fails if the subset violates the dataset invariants.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::from_records(idx.iter().map(|&i| self.records[i].clone()).collect())
    }

    pub fn to_raw(&self) -> Vec<RawRecord> {
        self.records
            .iter()
            .map(|r| RawRecord {
                x: r.x.clone(),
                d: r.df(),
                y: r.yf(),
                z: r.z.map(|v| v as f64),
                y_proxy: r.y_proxy.map(f64::from),
                g: r.g.map(f64::from),
            })
            .collect()
    }
}

/// A risk score, either a function of covariates or a column aligned with the dataset.
#[derive(Clone)]
pub enum Score {
    Column(Vec<f64>),
    Function(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Column(v) => write!(f, "Score::Column(len={})", v.len()),
            Score::Function(_) => write!(f, "Score::Function"),
        }
    }
}

impl Score {
    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Score::Function(Arc::new(f))
    }

    /// Score values for every record of `data`, checked to lie in [0, 1].
    pub fn values(&self, data: &Dataset) -> Result<Vec<f64>> {
        let v: Vec<f64> = match self {
            Score::Column(c) => {
                if c.len() != data.len() {
                    return Err(Error::InvalidParameter(format!(
                        "score column has {} values for {} records",
                        c.len(),
                        data.len()
                    )));
                }
                c.clone()
            }
            Score::Function(f) => data.records().iter().map(|r| f(&r.x)).collect(),
        };
        if let Some(i) = v.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidParameter(format!(
                "score value {} at record {i} outside [0, 1]",
                v[i]
            )));
        }
        Ok(v)
    }
}

/// Which conditional expectation an estimand targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimandClass {
    Overall,
    Positive,
    Negative,
}

impl EstimandClass {
    pub fn name(self) -> &'static str {
        match self {
            EstimandClass::Overall => "overall",
            EstimandClass::Positive => "positive-class",
            EstimandClass::Negative => "negative-class",
        }
    }
}

/// Performance measure of a score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerformanceSpec {
    Mse,
    Calibration { r1: f64, r2: f64 },
    GeneralizedTpr,
    GeneralizedFpr,
    ThresholdTpr { tau: f64 },
    ThresholdFpr { tau: f64 },
    Precision { tau: f64 },
    /// `P(Y* = 1, s <= tau)`.
    FailureRate { tau: f64 },
    /// `P(Y* = 1{s >= tau})`.
    Accuracy { tau: f64 },
    CustomOverall { beta0: f64, beta1: f64 },
    CustomPositive { beta0: f64 },
    CustomNegative { beta0: f64 },
}

/// Coefficients of a measure at one observation. `beta1` is `None` for class-conditional kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaTerms {
    pub beta0: f64,
    pub beta1: Option<f64>,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name}={v} outside [0, 1]")))
    }
}

impl PerformanceSpec {
    pub fn class(&self) -> EstimandClass {
        use PerformanceSpec::*;
        match self {
            GeneralizedTpr | ThresholdTpr { .. } | CustomPositive { .. } => EstimandClass::Positive,
            GeneralizedFpr | ThresholdFpr { .. } | CustomNegative { .. } => EstimandClass::Negative,
            _ => EstimandClass::Overall,
        }
    }

    /// Short stable label used in reports.
    pub fn label(&self) -> String {
        use PerformanceSpec::*;
        match self {
            Mse => "mse".into(),
            Calibration { r1, r2 } => format!("calibration[{r1},{r2}]"),
            GeneralizedTpr => "generalized_tpr".into(),
            GeneralizedFpr => "generalized_fpr".into(),
            ThresholdTpr { tau } => format!("tpr@{tau}"),
            ThresholdFpr { tau } => format!("fpr@{tau}"),
            Precision { tau } => format!("precision@{tau}"),
            FailureRate { tau } => format!("failure_rate@{tau}"),
            Accuracy { tau } => format!("accuracy@{tau}"),
            CustomOverall { beta0, beta1 } => format!("custom_overall({beta0},{beta1})"),
            CustomPositive { beta0 } => format!("custom_positive({beta0})"),
            CustomNegative { beta0 } => format!("custom_negative({beta0})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        use PerformanceSpec::*;
        match *self {
            Calibration { r1, r2 } => {
                check_unit("r1", r1)?;
                check_unit("r2", r2)?;
                if r1 > r2 {
                    return Err(Error::InvalidParameter(format!("r1={r1} > r2={r2}")));
                }
                Ok(())
            }
            ThresholdTpr { tau }
            | ThresholdFpr { tau }
            | Precision { tau }
            | FailureRate { tau }
            | Accuracy { tau } => check_unit("tau", tau),
            CustomOverall { beta0, beta1 } if !(beta0.is_finite() && beta1.is_finite()) => Err(
                Error::InvalidParameter("custom coefficients must be finite".into()),
            ),
            CustomPositive { beta0 } | CustomNegative { beta0 } if !beta0.is_finite() => Err(
                Error::InvalidParameter("custom coefficients must be finite".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Whether `beta_terms` needs a bin probability.
    pub fn needs_aux(&self) -> bool {
        matches!(
            self,
            PerformanceSpec::Calibration { .. } | PerformanceSpec::Precision { .. }
        )
    }

    fn in_bin(&self, s: f64) -> bool {
        match *self {
            PerformanceSpec::Calibration { r1, r2 } => r1 <= s && s <= r2,
            PerformanceSpec::Precision { tau } => s >= tau,
            _ => true,
        }
    }

    pub fn require_class(&self, expected: EstimandClass) -> Result<()> {
        let found = self.class();
        if found == expected {
            Ok(())
        } else {
            Err(Error::EstimandClass {
                kind: self.label(),
                found: found.name(),
                expected: expected.name(),
            })
        }
    }
}

/// Empirical bin share used by calibration and precision; 1 for other kinds.
pub fn aux_probability(spec: &PerformanceSpec, scores: &[f64]) -> f64 {
    if !spec.needs_aux() || scores.is_empty() {
        return 1.0;
    }
    scores.iter().filter(|&&s| spec.in_bin(s)).count() as f64 / scores.len() as f64
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Coefficients `(beta0, beta1)` of `spec` at score value `s`.
pub fn beta_terms(spec: &PerformanceSpec, s: f64, aux: f64) -> Result<BetaTerms> {
    use PerformanceSpec::*;
    if spec.needs_aux() && aux <= 0.0 {
        return Err(Error::EmptyPredictionBin);
    }
    let overall = |b0: f64, b1: f64| BetaTerms {
        beta0: b0,
        beta1: Some(b1),
    };
    let class = |b0: f64| BetaTerms {
        beta0: b0,
        beta1: None,
    };
    Ok(match *spec {
        Mse => overall(s * s, 1.0 - 2.0 * s),
        Calibration { .. } => overall(0.0, ind(spec.in_bin(s)) / aux),
        Precision { .. } => overall(0.0, ind(spec.in_bin(s)) / aux),
        FailureRate { tau } => overall(0.0, ind(s <= tau)),
        Accuracy { tau } => overall(ind(s < tau), 2.0 * ind(s >= tau) - 1.0),
        CustomOverall { beta0, beta1 } => overall(beta0, beta1),
        GeneralizedTpr | GeneralizedFpr => class(s),
        ThresholdTpr { tau } | ThresholdFpr { tau } => class(ind(s >= tau)),
        CustomPositive { beta0 } | CustomNegative { beta0 } => class(beta0),
    })
}

/// Coefficient vectors for every score value.
pub fn beta_vectors(spec: &PerformanceSpec, scores: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let aux = aux_probability(spec, scores);
    let mut b0 = Vec::with_capacity(scores.len());
    let mut b1 = Vec::with_capacity(scores.len());
    for &s in scores {
        let t = beta_terms(spec, s, aux)?;
        b0.push(t.beta0);
        b1.push(t.beta1.unwrap_or(0.0));
    }
    Ok((b0, b1))
}

/// Random partition of `0..n` into `k` folds of near-equal size. Fold ids are `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// Indices in fold `f`, in increasing order.
    pub fn members(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == f)
            .collect()
    }

    /// Indices outside fold `f`, in increasing order.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != f)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidFolds { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(x: Vec<f64>, d: f64, y: f64) -> RawRecord {
        RawRecord {
            x,
            d,
            y,
            z: None,
            y_proxy: None,
            g: None,
        }
    }

    #[test]
    fn validates_consistent_records() {
        let ds = validate_dataset(&[
            raw(vec![0.0], 1.0, 1.0),
            raw(vec![1.0], 0.0, 0.0),
            raw(vec![2.0], 1.0, 0.0),
        ])
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_selected(), 2);
        assert_eq!(ds.n_unselected(), 1);
    }

    #[test]
    fn rejects_outcome_without_selection() {
        let err = validate_dataset(&[raw(vec![0.0], 0.0, 1.0), raw(vec![0.0], 1.0, 1.0)])
            .unwrap_err();
        assert!(err.to_string().contains("outcome observed without selection"));
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let err = validate_dataset(&[raw(vec![0.0; 5], 1.0, 0.0), raw(vec![0.0; 6], 0.0, 0.0)])
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 5, found: 6, .. }));
    }

    #[test]
    fn rejects_single_selection_class_and_non_binary() {
        let err = validate_dataset(&[raw(vec![0.0], 1.0, 0.0), raw(vec![0.0], 1.0, 1.0)])
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateSelection { .. }));
        let err = validate_dataset(&[raw(vec![0.0], 1.0, 2.0), raw(vec![0.0], 0.0, 0.0)])
            .unwrap_err();
        assert!(matches!(err, Error::NonBinary { field: "y", .. }));
    }

    #[test]
    fn beta_examples() {
        let t = beta_terms(&PerformanceSpec::Mse, 0.3, 1.0).unwrap();
        assert!((t.beta0 - 0.09).abs() < 1e-15);
        assert!((t.beta1.unwrap() - 0.4).abs() < 1e-15);
        let t = beta_terms(&PerformanceSpec::ThresholdTpr { tau: 0.5 }, 0.7, 1.0).unwrap();
        assert_eq!(t.beta0, 1.0);
        assert_eq!(t.beta1, None);
        let t = beta_terms(&PerformanceSpec::Calibration { r1: 0.0, r2: 1.0 }, 0.42, 1.0).unwrap();
        assert_eq!((t.beta0, t.beta1), (0.0, Some(1.0)));
        let err = beta_terms(&PerformanceSpec::Precision { tau: 0.9 }, 0.5, 0.0).unwrap_err();
        assert_eq!(err.to_string(), "empty prediction bin");
    }

    #[test]
    fn threshold_ties_use_greater_equal() {
        let t = beta_terms(&PerformanceSpec::ThresholdTpr { tau: 0.5 }, 0.5, 1.0).unwrap();
        assert_eq!(t.beta0, 1.0);
    }

    #[test]
    fn mse_reproduces_squared_error() {
        for &s in &[0.0, 0.13, 0.5, 0.77, 1.0] {
            let t = beta_terms(&PerformanceSpec::Mse, s, 1.0).unwrap();
            for y in [0.0, 1.0] {
                let lhs = t.beta0 + t.beta1.unwrap() * y;
                assert!((lhs - (s - y) * (s - y)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn accuracy_reproduces_indicator() {
        let spec = PerformanceSpec::Accuracy { tau: 0.5 };
        for &s in &[0.1, 0.5, 0.9] {
            let t = beta_terms(&spec, s, 1.0).unwrap();
            for y in [0.0, 1.0] {
                let pred = if s >= 0.5 { 1.0 } else { 0.0 };
                let want = if pred == y { 1.0 } else { 0.0 };
                assert_eq!(t.beta0 + t.beta1.unwrap() * y, want);
            }
        }
    }

    #[test]
    fn fold_sizes() {
        let f = split_folds(10, 2, 7).unwrap();
        assert_eq!(f.sizes(), vec![5, 5]);
        let mut s = split_folds(10, 3, 7).unwrap().sizes();
        s.sort_unstable();
        assert_eq!(s, vec![3, 3, 4]);
        assert_eq!(split_folds(10, 3, 7).unwrap(), split_folds(10, 3, 7).unwrap());
        assert!(split_folds(3, 4, 0).is_err());
        assert!(split_folds(3, 1, 0).is_err());
    }

    #[test]
    fn spec_serde_tags() {
        let s: PerformanceSpec = serde_json::from_str(r#"{"kind":"threshold_tpr","tau":0.5}"#).unwrap();
        assert_eq!(s, PerformanceSpec::ThresholdTpr { tau: 0.5 });
        assert_eq!(s.class(), EstimandClass::Positive);
    }
}
