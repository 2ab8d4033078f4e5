//! Bounding families for the confounding function and the per-observation
//! influence-function terms built from them.
//!
//! Two scales appear here. `confounding_bounds_at` and `lfp_box_terms` work on
//! the scale of `delta(x)` itself, while `pseudo_bound_terms` returns terms whose
//! means target the endpoints of `E[pi0(X) delta(X)]`.

use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::nuisance::{EtaPoint, ProxyPoint, Requirements};

fn default_proxy_alpha() -> f64 {
    20.0
}

/// Assumed restriction on the confounding function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundingSpec {
    Unconfounded,
    WorstCase,
    /// `(gamma_lo - 1) mu1 <= delta <= (gamma_hi - 1) mu1`.
    Nonparametric { gamma_lo: f64, gamma_hi: f64 },
    ProxySimple,
    /// Proxy bounds without the ordering conditions; kinks smoothed with log-sum-exp at `alpha`.
    ProxyGeneral {
        #[serde(default = "default_proxy_alpha")]
        alpha: f64,
    },
    IvFixed { z: i64 },
    /// Intersection over instrument values, smoothed with log-sum-exp at `alpha`.
    IvSmoothed { alpha: f64 },
}

impl BoundingSpec {
    pub fn nonparametric(gamma_lo: f64, gamma_hi: f64) -> Self {
        BoundingSpec::Nonparametric { gamma_lo, gamma_hi }
    }

    pub fn requirements(&self) -> Requirements {
        match self {
            BoundingSpec::ProxySimple | BoundingSpec::ProxyGeneral { .. } => Requirements {
                proxy: true,
                iv: false,
            },
            BoundingSpec::IvFixed { .. } | BoundingSpec::IvSmoothed { .. } => Requirements {
                proxy: false,
                iv: true,
            },
            _ => Requirements::default(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BoundingSpec::Unconfounded => "unconfounded".into(),
            BoundingSpec::WorstCase => "worst_case".into(),
            BoundingSpec::Nonparametric { gamma_lo, gamma_hi } => {
                format!("nonparametric[{gamma_lo},{gamma_hi}]")
            }
            BoundingSpec::ProxySimple => "proxy_simple".into(),
            BoundingSpec::ProxyGeneral { alpha } => format!("proxy_general[{alpha}]"),
            BoundingSpec::IvFixed { z } => format!("iv_fixed[{z}]"),
            BoundingSpec::IvSmoothed { alpha } => format!("iv_smoothed[{alpha}]"),
        }
    }

    /// Checks parameters; `z_support` is consulted for instrument families.
    pub fn validate(&self, z_support: &[i64]) -> Result<()> {
        match *self {
            BoundingSpec::Nonparametric { gamma_lo, gamma_hi } => {
                if !(gamma_lo > 0.0) || !(gamma_hi >= gamma_lo) || !gamma_hi.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "need 0 < gamma_lo <= gamma_hi, got {gamma_lo}, {gamma_hi}"
                    )));
                }
            }
            BoundingSpec::ProxyGeneral { alpha } | BoundingSpec::IvSmoothed { alpha } => {
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "smoothing alpha must be positive, got {alpha}"
                    )));
                }
            }
            BoundingSpec::IvFixed { z } => {
                z_index(z_support, z)?;
            }
            _ => {}
        }
        Ok(())
    }
}

fn z_index(z_support: &[i64], z: i64) -> Result<usize> {
    z_support.binary_search(&z).map_err(|_| {
        Error::InvalidParameter(format!(
            "instrument value {z} not in support {z_support:?}"
        ))
    })
}

fn proxy_of(eta: &EtaPoint) -> Result<ProxyPoint> {
    eta.proxy.ok_or(Error::MissingColumn("proxy nuisance"))
}

fn proxy_label(r: &Record) -> Result<f64> {
    r.y_proxy
        .map(f64::from)
        .ok_or(Error::MissingColumn("proxy outcome"))
}

fn require_iv(eta: &EtaPoint, z_support: &[i64]) -> Result<()> {
    if eta.iv.is_empty() || eta.iv.len() != z_support.len() {
        Err(Error::MissingColumn("instrument nuisance"))
    } else {
        Ok(())
    }
}

/// Uncentered influence term for `E[mu1(X)]`.
pub fn eif_mu(r: &Record, eta: &EtaPoint) -> f64 {
    eta.mu1 + r.df() / eta.pi1 * (r.yf() - eta.mu1)
}

/// Uncentered influence term for `E[pi0(X) mu1(X)]`.
pub fn eif_pi_mu(r: &Record, eta: &EtaPoint) -> f64 {
    let (d, pi0) = (r.df(), eta.pi0());
    ((1.0 - d) - pi0) * eta.mu1 + d / eta.pi1 * (r.yf() - eta.mu1) * pi0 + pi0 * eta.mu1
}

/// Residual corrections `(c_gamma, c_mu_tilde)` shared by the proxy terms.
fn proxy_corrections(r: &Record, eta: &EtaPoint, p: ProxyPoint) -> Result<(f64, f64)> {
    let d = r.df();
    let yt = proxy_label(r)?;
    let agree = if r.d == 1 && yt == r.yf() { 1.0 } else { 0.0 };
    let c_gamma = d / eta.pi1 * (agree - p.gamma1);
    let c_mu_tilde = (1.0 - d) / eta.pi0() * (yt - p.mu_tilde0);
    Ok((c_gamma, c_mu_tilde))
}

/// Uncentered influence term for `E[gamma1(X)]`.
pub fn eif_gamma(r: &Record, eta: &EtaPoint) -> Result<f64> {
    let p = proxy_of(eta)?;
    Ok(p.gamma1 + proxy_corrections(r, eta, p)?.0)
}

/// Uncentered influence term for `E[mu_tilde0(X)]`.
pub fn eif_mu_tilde(r: &Record, eta: &EtaPoint) -> Result<f64> {
    let p = proxy_of(eta)?;
    Ok(p.mu_tilde0 + proxy_corrections(r, eta, p)?.1)
}

/// Uncentered influence term for `E[pi0(X) gamma1(X)]`.
pub fn eif_pi_gamma(r: &Record, eta: &EtaPoint) -> Result<f64> {
    let p = proxy_of(eta)?;
    let pi0 = eta.pi0();
    let (cg, _) = proxy_corrections(r, eta, p)?;
    Ok(pi0 * p.gamma1 + ((1.0 - r.df()) - pi0) * p.gamma1 + cg * pi0)
}

/// Uncentered influence term for `E[pi0(X) mu_tilde0(X)]`.
pub fn eif_pi_mu_tilde(r: &Record, eta: &EtaPoint) -> Result<f64> {
    let p = proxy_of(eta)?;
    let pi0 = eta.pi0();
    let (_, cm) = proxy_corrections(r, eta, p)?;
    Ok(pi0 * p.mu_tilde0 + ((1.0 - r.df()) - pi0) * p.mu_tilde0 + cm * pi0)
}

fn z_weight(r: &Record, z: i64, pz: f64) -> Result<f64> {
    let rz = r.z.ok_or(Error::MissingColumn("instrument"))?;
    Ok(if rz == z { 1.0 / pz } else { 0.0 })
}

/// Uncentered influence term for `E[lambda_z(X)]`, `j` indexing the instrument support.
pub fn eif_lambda(r: &Record, eta: &EtaPoint, z_support: &[i64], j: usize) -> Result<f64> {
    require_iv(eta, z_support)?;
    let p = eta.iv[j];
    Ok(z_weight(r, z_support[j], p.pz)? * (r.yf() * r.df() - p.lambda) + p.lambda)
}

/// Uncentered influence term for `E[kappa_z(X)]`.
pub fn eif_kappa(r: &Record, eta: &EtaPoint, z_support: &[i64], j: usize) -> Result<f64> {
    require_iv(eta, z_support)?;
    let p = eta.iv[j];
    Ok(z_weight(r, z_support[j], p.pz)? * ((1.0 - r.df()) - p.kappa) + p.kappa)
}

/// `g_alpha(v) = log(sum exp(alpha v_j)) / alpha`, evaluated with a shift.
/// Positive `alpha` approximates the maximum from above, negative the minimum from below.
pub fn lse(v: &[f64], alpha: f64) -> f64 {
    assert!(!v.is_empty() && alpha != 0.0, "lse needs p >= 1 and alpha != 0");
    let m = shift(v, alpha);
    let s: f64 = v.iter().map(|&x| (alpha * (x - m)).exp()).sum();
    m + s.ln() / alpha
}

fn shift(v: &[f64], alpha: f64) -> f64 {
    if alpha > 0.0 {
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Gradient of [`lse`]: nonnegative weights summing to one.
pub fn softmax_weights(v: &[f64], alpha: f64) -> Vec<f64> {
    assert!(!v.is_empty() && alpha != 0.0, "softmax needs p >= 1 and alpha != 0");
    let m = shift(v, alpha);
    let e: Vec<f64> = v.iter().map(|&x| (alpha * (x - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Smoothed value plus first-order correction: `g(v) + sum_j w_j (phi_j - v_j)`.
fn smoothed_eif(v: &[f64], phi: &[f64], alpha: f64) -> f64 {
    let w = softmax_weights(v, alpha);
    lse(v, alpha) + w.iter().zip(v.iter().zip(phi)).map(|(w, (v, p))| w * (p - v)).sum::<f64>()
}

/// Plug-in bounds `(delta_lo, delta_hi)` on the confounding function at nuisance values `eta`.
pub fn confounding_bounds_at(
    eta: &EtaPoint,
    spec: &BoundingSpec,
    z_support: &[i64],
) -> Result<(f64, f64)> {
    let mu1 = eta.mu1;
    Ok(match *spec {
        BoundingSpec::Unconfounded => (0.0, 0.0),
        BoundingSpec::WorstCase => (-mu1, 1.0 - mu1),
        BoundingSpec::Nonparametric { gamma_lo, gamma_hi } => {
            ((gamma_lo - 1.0) * mu1, (gamma_hi - 1.0) * mu1)
        }
        BoundingSpec::ProxySimple => {
            let p = proxy_of(eta)?;
            (
                1.0 - p.gamma1 - p.mu_tilde0 - mu1,
                1.0 - p.gamma1 + p.mu_tilde0 - mu1,
            )
        }
        BoundingSpec::ProxyGeneral { .. } => {
            let p = proxy_of(eta)?;
            (
                (1.0 - p.gamma1 - p.mu_tilde0).abs() - mu1,
                1.0 - (p.gamma1 - p.mu_tilde0).abs() - mu1,
            )
        }
        BoundingSpec::IvFixed { z } => {
            require_iv(eta, z_support)?;
            let p = eta.iv[z_index(z_support, z)?];
            let pi0 = eta.pi0();
            ((p.lambda - mu1) / pi0, (p.kappa + p.lambda - mu1) / pi0)
        }
        BoundingSpec::IvSmoothed { alpha } => {
            require_iv(eta, z_support)?;
            let lo: Vec<f64> = eta.iv.iter().map(|p| p.lambda - mu1).collect();
            let hi: Vec<f64> = eta.iv.iter().map(|p| p.kappa + p.lambda - mu1).collect();
            let pi0 = eta.pi0();
            (lse(&lo, alpha) / pi0, lse(&hi, -alpha) / pi0)
        }
    })
}

/// Smoothed instrument terms `(phi_lo, phi_hi)` targeting the endpoints of `E[pi0 delta]`.
pub fn eif_iv_bounds(
    r: &Record,
    eta: &EtaPoint,
    z_support: &[i64],
    alpha: f64,
) -> Result<(f64, f64)> {
    require_iv(eta, z_support)?;
    let phi_mu = eif_mu(r, eta);
    let p = z_support.len();
    let mut v_lo = Vec::with_capacity(p);
    let mut v_hi = Vec::with_capacity(p);
    let mut phi_lo = Vec::with_capacity(p);
    let mut phi_hi = Vec::with_capacity(p);
    for j in 0..p {
        let e = eta.iv[j];
        let fl = eif_lambda(r, eta, z_support, j)?;
        let fk = eif_kappa(r, eta, z_support, j)?;
        v_lo.push(e.lambda - eta.mu1);
        v_hi.push(e.kappa + e.lambda - eta.mu1);
        phi_lo.push(fl - phi_mu);
        phi_hi.push(fk + fl - phi_mu);
    }
    Ok((
        smoothed_eif(&v_lo, &phi_lo, alpha),
        smoothed_eif(&v_hi, &phi_hi, -alpha),
    ))
}

/// Per-record terms `(l, u)` whose means target the endpoints of `E[pi0(X) delta(X)]`.
pub fn pseudo_bound_terms(
    r: &Record,
    eta: &EtaPoint,
    spec: &BoundingSpec,
    z_support: &[i64],
) -> Result<(f64, f64)> {
    let d = r.df();
    Ok(match *spec {
        BoundingSpec::Unconfounded => (0.0, 0.0),
        BoundingSpec::WorstCase => {
            let pm = eif_pi_mu(r, eta);
            (-pm, (1.0 - d) - pm)
        }
        BoundingSpec::Nonparametric { gamma_lo, gamma_hi } => {
            let pm = eif_pi_mu(r, eta);
            ((gamma_lo - 1.0) * pm, (gamma_hi - 1.0) * pm)
        }
        BoundingSpec::ProxySimple => {
            let pm = eif_pi_mu(r, eta);
            let pg = eif_pi_gamma(r, eta)?;
            let pt = eif_pi_mu_tilde(r, eta)?;
            ((1.0 - d) - pg - pt - pm, (1.0 - d) - pg + pt - pm)
        }
        BoundingSpec::ProxyGeneral { alpha } => {
            let p = proxy_of(eta)?;
            let (cg, cm) = proxy_corrections(r, eta, p)?;
            let pi0 = eta.pi0();
            let pm = eif_pi_mu(r, eta);
            let (g, m) = (p.gamma1, p.mu_tilde0);
            let smooth = |v: [f64; 2], c: [f64; 2], a: f64| {
                let w = softmax_weights(&v, a);
                (1.0 - d) * lse(&v, a) + pi0 * (w[0] * c[0] + w[1] * c[1])
            };
            let lo = smooth([1.0 - g - m, g + m - 1.0], [-(cg + cm), cg + cm], alpha);
            let hi = smooth([1.0 - g + m, 1.0 + g - m], [cm - cg, cg - cm], -alpha);
            (lo - pm, hi - pm)
        }
        BoundingSpec::IvFixed { z } => {
            let j = z_index(z_support, z)?;
            let fm = eif_mu(r, eta);
            let fl = eif_lambda(r, eta, z_support, j)?;
            let fk = eif_kappa(r, eta, z_support, j)?;
            (fl - fm, fk + fl - fm)
        }
        BoundingSpec::IvSmoothed { alpha } => eif_iv_bounds(r, eta, z_support, alpha)?,
    })
}

/// Box for the free term of the class-conditional programs at one record.
/// The record contributes `a + w * t` with `t` in `[lo, hi]` to the conditional mean of `Y*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfpBox {
    pub w: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Box terms for the class-conditional estimators. Non-instrument families are on the
/// `delta` scale with weight `1 - D`; instrument families are on the `pi0 delta` scale with weight 1.
pub fn lfp_box_terms(
    r: &Record,
    eta: &EtaPoint,
    spec: &BoundingSpec,
    z_support: &[i64],
) -> Result<LfpBox> {
    let w = 1.0 - r.df();
    let fm = eif_mu(r, eta);
    let b = |lo, hi| LfpBox { w, lo, hi };
    Ok(match *spec {
        BoundingSpec::Unconfounded => b(0.0, 0.0),
        BoundingSpec::WorstCase => b(-fm, 1.0 - fm),
        BoundingSpec::Nonparametric { gamma_lo, gamma_hi } => {
            b((gamma_lo - 1.0) * fm, (gamma_hi - 1.0) * fm)
        }
        BoundingSpec::ProxySimple => {
            let fg = eif_gamma(r, eta)?;
            let ft = eif_mu_tilde(r, eta)?;
            b(1.0 - fg - ft - fm, 1.0 - fg + ft - fm)
        }
        BoundingSpec::ProxyGeneral { alpha } => {
            let p = proxy_of(eta)?;
            let fg = eif_gamma(r, eta)?;
            let ft = eif_mu_tilde(r, eta)?;
            let (g, m) = (p.gamma1, p.mu_tilde0);
            let lo = smoothed_eif(&[1.0 - g - m, g + m - 1.0], &[1.0 - fg - ft, fg + ft - 1.0], alpha);
            let hi = smoothed_eif(&[1.0 - g + m, 1.0 + g - m], &[1.0 - fg + ft, 1.0 + fg - ft], -alpha);
            b(lo - fm, hi - fm)
        }
        BoundingSpec::IvFixed { .. } | BoundingSpec::IvSmoothed { .. } => {
            let (lo, hi) = pseudo_bound_terms(r, eta, spec, z_support)?;
            LfpBox { w: 1.0, lo, hi }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::IvPoint;

    fn rec(d: u8, y: u8) -> Record {
        Record {
            x: vec![0.0],
            d,
            y,
            z: None,
            y_proxy: None,
            g: None,
        }
    }

    fn eta(mu1: f64, pi1: f64) -> EtaPoint {
        EtaPoint {
            mu1,
            pi1,
            proxy: None,
            iv: vec![],
        }
    }

    #[test]
    fn eif_mu_examples() {
        assert_eq!(eif_mu(&rec(0, 0), &eta(0.3, 0.4)), 0.3);
        assert_eq!(eif_mu(&rec(1, 1), &eta(0.5, 0.5)), 1.5);
    }

    #[test]
    fn eif_pi_mu_examples() {
        let e = eta(0.5, 0.6);
        assert!((eif_pi_mu(&rec(0, 0), &e) - 0.5).abs() < 1e-15);
        // D = 1 with Y equal to mu1: residual vanishes and the rest cancels.
        let r = rec(1, 0);
        let e = eta(0.0, 0.6);
        assert!(eif_pi_mu(&r, &e).abs() < 1e-15);
    }

    #[test]
    fn plug_in_bound_examples() {
        let e = eta(0.3, 0.5);
        assert_eq!(
            confounding_bounds_at(&e, &BoundingSpec::nonparametric(1.0, 1.0), &[]).unwrap(),
            (0.0, 0.0)
        );
        let (lo, hi) = confounding_bounds_at(&e, &BoundingSpec::WorstCase, &[]).unwrap();
        assert!((lo + 0.3).abs() < 1e-15 && (hi - 0.7).abs() < 1e-15);
        let mut e = eta(0.3, 0.5);
        e.proxy = Some(ProxyPoint {
            mu_tilde0: 0.2,
            gamma1: 0.9,
        });
        let (lo, hi) =
            confounding_bounds_at(&e, &BoundingSpec::ProxyGeneral { alpha: 20.0 }, &[]).unwrap();
        assert!((lo + 0.2).abs() < 1e-12 && hi.abs() < 1e-12, "{lo} {hi}");
    }

    #[test]
    fn iv_fixed_width_is_kappa_over_pi0() {
        let mut e = eta(0.3, 0.6);
        e.iv = vec![IvPoint {
            lambda: 0.2,
            kappa: 0.3,
            pz: 1.0,
        }];
        let (lo, hi) = confounding_bounds_at(&e, &BoundingSpec::IvFixed { z: 4 }, &[4]).unwrap();
        assert!((hi - lo - 0.3 / 0.4).abs() < 1e-12);
        assert!(confounding_bounds_at(&e, &BoundingSpec::IvFixed { z: 5 }, &[4]).is_err());
    }

    #[test]
    fn lse_examples() {
        assert_eq!(lse(&[0.37], 5.0), 0.37);
        assert_eq!(lse(&[0.37], -5.0), 0.37);
        assert!((lse(&[0.0, 0.0], 1.0) - 2f64.ln()).abs() < 1e-15);
        let w = softmax_weights(&[0.4, 0.4, 0.4], 3.0);
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // overflow safety
        assert!((lse(&[1000.0, 0.0], 10.0) - 1000.0).abs() < 1e-12);
        assert!((lse(&[-1000.0, 0.0], -10.0) + 1000.0).abs() < 1e-12);
    }

    #[test]
    fn nonparametric_pseudo_terms() {
        // D = 0, mu1 = 0.5, pi0 = 0.4 gives phi_pi_mu = 0.5 -> scaled by (gamma - 1)
        let (l, u) = pseudo_bound_terms(
            &rec(0, 0),
            &eta(0.5, 0.6),
            &BoundingSpec::nonparametric(1.0, 2.0),
            &[],
        )
        .unwrap();
        assert_eq!(l, 0.0);
        assert!((u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn proxy_requires_nuisances() {
        let err = pseudo_bound_terms(&rec(0, 0), &eta(0.5, 0.5), &BoundingSpec::ProxySimple, &[])
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn(_)));
    }

    #[test]
    fn bounding_serde() {
        let b: BoundingSpec = serde_json::from_str(
            r#"{"family":"nonparametric","gamma_lo":0.6667,"gamma_hi":1.5}"#,
        )
        .unwrap();
        assert_eq!(b, BoundingSpec::nonparametric(0.6667, 1.5));
        let b: BoundingSpec = serde_json::from_str(r#"{"family":"proxy_general"}"#).unwrap();
        assert_eq!(b, BoundingSpec::ProxyGeneral { alpha: 20.0 });
        let err = serde_json::from_str::<BoundingSpec>(r#"{"family":"rosenbaum"}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("nonparametric") && err.contains("iv_smoothed"), "{err}");
    }
}
