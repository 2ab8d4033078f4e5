//! Welfare bounds for binary decision rules and the max-min rule built from bound functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mu_learner::BoundRegressors;
use crate::overall::mean;

/// Payoffs `u_{d,y*}`, either constant or one value per evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilitySpec {
    Constant {
        u11: f64,
        u10: f64,
        u00: f64,
        u01: f64,
    },
    Columns {
        u11: Vec<f64>,
        u10: Vec<f64>,
        u00: Vec<f64>,
        u01: Vec<f64>,
    },
}

const SUM_TOL: f64 = 1e-9;

fn check_payoffs(i: usize, u: [f64; 4]) -> Result<()> {
    if u.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Utility(format!("record {i}: payoffs must be nonnegative")));
    }
    let s: f64 = u.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::Utility(format!("record {i}: payoffs sum to {s}, expected 1")));
    }
    Ok(())
}

impl UtilitySpec {
    pub fn uniform() -> Self {
        UtilitySpec::Constant {
            u11: 0.25,
            u10: 0.25,
            u00: 0.25,
            u01: 0.25,
        }
    }

    /// `[u11, u10, u00, u01]` at record `i`.
    pub fn at(&self, i: usize) -> [f64; 4] {
        match self {
            UtilitySpec::Constant { u11, u10, u00, u01 } => [*u11, *u10, *u00, *u01],
            UtilitySpec::Columns { u11, u10, u00, u01 } => [u11[i], u10[i], u00[i], u01[i]],
        }
    }

    /// Checks nonnegativity and normalization for `n` records.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            UtilitySpec::Constant { .. } => check_payoffs(0, self.at(0)),
            UtilitySpec::Columns { u11, u10, u00, u01 } => {
                if [u11.len(), u10.len(), u00.len(), u01.len()].iter().any(|&m| m != n) {
                    return Err(Error::Utility(format!("payoff columns must have {n} entries")));
                }
                (0..n).try_for_each(|i| check_payoffs(i, self.at(i)))
            }
        }
    }
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Empty("evaluation sample"));
    }
    if a != b || a != c {
        return Err(Error::InvalidParameter("rule and bound vectors differ in length".into()));
    }
    Ok(())
}

/// Sharp bounds `(U_lo, U_hi)` on expected welfare of `decisions`.
pub fn welfare_bounds(
    decisions: &[u8],
    mu_lo: &[f64],
    mu_hi: &[f64],
    utilities: &UtilitySpec,
) -> Result<(f64, f64)> {
    check_lengths(decisions.len(), mu_lo.len(), mu_hi.len())?;
    utilities.validate(decisions.len())?;
    let mut lo = Vec::with_capacity(decisions.len());
    let mut hi = Vec::with_capacity(decisions.len());
    for i in 0..decisions.len() {
        let [u11, u10, u00, u01] = utilities.at(i);
        let d = f64::from(decisions[i]);
        lo.push((u10 - (u11 + u10) * mu_hi[i]) * d + (-u00 + (u00 + u01) * mu_lo[i]) * (1.0 - d));
        hi.push((u10 - (u11 + u10) * mu_lo[i]) * d + (-u00 + (u00 + u01) * mu_hi[i]) * (1.0 - d));
    }
    Ok((mean(&lo), mean(&hi)))
}

/// Decision at one point: 1 when the welfare-weighted bound average is at most `u10 + u00`.
pub fn maxmin_decision(mu_lo: f64, mu_hi: f64, u: [f64; 4]) -> u8 {
    let [u11, u10, u00, u01] = u;
    let (lo, hi) = (mu_lo.clamp(0.0, 1.0), mu_hi.clamp(0.0, 1.0));
    let tilde = (u11 + u10) * hi + (u00 + u01) * lo;
    u8::from(tilde <= u10 + u00)
}

/// Max-min rule evaluated on a sample of bound values; bounds are clipped to [0, 1] first.
pub fn maxmin_rule(mu_lo: &[f64], mu_hi: &[f64], utilities: &UtilitySpec) -> Result<Vec<u8>> {
    check_lengths(mu_lo.len(), mu_lo.len(), mu_hi.len())?;
    utilities.validate(mu_lo.len())?;
    Ok((0..mu_lo.len())
        .map(|i| maxmin_decision(mu_lo[i], mu_hi[i], utilities.at(i)))
        .collect())
}

/// Serializable max-min rule: constant payoffs plus fitted bound functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub utilities: UtilitySpec,
    pub bounds: BoundRegressors,
}

impl DecisionRule {
    pub fn new(utilities: UtilitySpec, bounds: BoundRegressors) -> Result<Self> {
        if !matches!(utilities, UtilitySpec::Constant { .. }) {
            return Err(Error::Utility("a portable rule needs constant payoffs".into()));
        }
        utilities.validate(1)?;
        Ok(Self {
            utilities,
            bounds: bounds.with_clip(true),
        })
    }

    pub fn decide(&self, x: &[f64]) -> u8 {
        maxmin_decision(self.bounds.predict_lo(x), self.bounds.predict_hi(x), self.utilities.at(0))
    }
}

/// `U_lo(d*) - U_lo(d_hat)` where `d*` is the max-min rule at the true bounds.
pub fn regret(
    d_hat: &[u8],
    true_lo: &[f64],
    true_hi: &[f64],
    utilities: &UtilitySpec,
) -> Result<f64> {
    let d_star = maxmin_rule(true_lo, true_hi, utilities)?;
    let (best, _) = welfare_bounds(&d_star, true_lo, true_hi, utilities)?;
    let (got, _) = welfare_bounds(d_hat, true_lo, true_hi, utilities)?;
    Ok(best - got)
}

/// Regret of the plug-in rule with the squared-regret bound terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretCheck {
    pub regret: f64,
    pub imse_lo: f64,
    pub imse_hi: f64,
}

impl RegretCheck {
    /// `regret^2 <= 2 imse_hi + 2 imse_lo`, with a rounding allowance.
    pub fn bound_holds(&self) -> bool {
        self.regret * self.regret <= 2.0 * self.imse_hi + 2.0 * self.imse_lo + 1e-12
    }
}

/// Evaluates the plug-in max-min rule built from `est_*` against the true bounds.
pub fn regret_check(
    est_lo: &[f64],
    est_hi: &[f64],
    true_lo: &[f64],
    true_hi: &[f64],
    utilities: &UtilitySpec,
) -> Result<RegretCheck> {
    check_lengths(est_lo.len(), est_hi.len(), true_lo.len())?;
    let d_hat = maxmin_rule(est_lo, est_hi, utilities)?;
    let r = regret(&d_hat, true_lo, true_hi, utilities)?;
    let sq = |e: &[f64], t: &[f64]| {
        let v: Vec<f64> = e.iter().zip(t).map(|(a, b)| (a.clamp(0.0, 1.0) - b).powi(2)).collect();
        mean(&v)
    };
    Ok(RegretCheck {
        regret: r,
        imse_lo: sq(est_lo, true_lo),
        imse_hi: sq(est_hi, true_hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_identified_welfare_is_a_point() {
        let mu = [0.2, 0.6, 0.9];
        let (lo, hi) = welfare_bounds(&[1, 0, 1], &mu, &mu, &UtilitySpec::uniform()).unwrap();
        assert!((lo - hi).abs() < 1e-15);
    }

    #[test]
    fn always_one_rule() {
        let u = UtilitySpec::Constant {
            u11: 0.5,
            u10: 0.5,
            u00: 0.0,
            u01: 0.0,
        };
        let hi = [0.2, 0.6];
        let (lo, _) = welfare_bounds(&[1, 1], &[0.0, 0.0], &hi, &u).unwrap();
        assert!((lo - (0.5 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn rule_boundaries() {
        let u = UtilitySpec::Constant {
            u11: 0.0,
            u10: 0.5,
            u00: 0.5,
            u01: 0.0,
        };
        assert_eq!(maxmin_rule(&[0.9, 1.0], &[1.0, 1.0], &u).unwrap(), vec![1, 1]);
        let mu = [0.3, 0.5, 0.7];
        assert_eq!(maxmin_rule(&mu, &mu, &UtilitySpec::uniform()).unwrap(), vec![1, 1, 0]);
    }

    #[test]
    fn regret_examples() {
        let lo = [0.1, 0.2, 0.8];
        let hi = [0.2, 0.3, 0.9];
        let u = UtilitySpec::uniform();
        let d = maxmin_rule(&lo, &hi, &u).unwrap();
        assert_eq!(regret(&d, &lo, &hi, &u).unwrap(), 0.0);
        let flipped: Vec<u8> = d.iter().map(|v| 1 - v).collect();
        assert!(regret(&flipped, &lo, &hi, &u).unwrap() > 0.0);
    }

    #[test]
    fn utilities_must_be_normalized() {
        let u = UtilitySpec::Constant {
            u11: 0.5,
            u10: 0.5,
            u00: 0.5,
            u01: 0.0,
        };
        assert!(matches!(u.validate(1), Err(Error::Utility(_))));
        let u = UtilitySpec::Constant {
            u11: -0.5,
            u10: 0.5,
            u00: 0.5,
            u01: 0.5,
        };
        assert!(u.validate(1).is_err());
    }
}
