//! Gaussian-covariate selection model with optional proxy, instrument and group mechanisms.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::{confounding_bounds_at, BoundingSpec};
use crate::data::{Dataset, Record, Score};
use crate::error::{Error, Result};
use crate::nuisance::learners::{fit_learner, sigmoid, LearnerConfig};
use crate::nuisance::{clip, EtaPoint, FnPredictor, IvModels, IvPoint, NuisanceModels, ProxyModels, ProxyPoint};

fn default_q() -> f64 {
    0.9
}
fn default_shifts() -> Vec<f64> {
    vec![-0.5, 0.0, 0.5]
}
fn default_theta() -> f64 {
    0.5
}

/// Proxy equal to `Y*` with probability `q`, flipped otherwise, independently of selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyMechanism {
    #[serde(default = "default_q")]
    pub q: f64,
}

impl Default for ProxyMechanism {
    fn default() -> Self {
        Self { q: default_q() }
    }
}

/// Instrument uniform on `1..=shifts.len()`, shifting the selection index additively.
///
/// With this mechanism `Y* ~ Bern(sigma(a(x)))` and
/// `D ~ Bern(sigma(b(x) + shift_z + theta Y*))`, so `Y*` is independent of `Z` given `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentMechanism {
    #[serde(default = "default_shifts")]
    pub shifts: Vec<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

impl Default for InstrumentMechanism {
    fn default() -> Self {
        Self {
            shifts: default_shifts(),
            theta: default_theta(),
        }
    }
}

fn default_n() -> usize {
    1000
}
fn default_d() -> usize {
    50
}
fn default_d_pi() -> usize {
    20
}
fn default_d_mu() -> usize {
    25
}
fn default_gamma() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_d_pi")]
    pub d_pi: usize,
    #[serde(default = "default_d_mu")]
    pub d_mu: usize,
    /// `P(Y* = 1 | D = 0, x) = gamma_true * P(Y* = 1 | D = 1, x)`.
    #[serde(default = "default_gamma")]
    pub gamma_true: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub proxy: Option<ProxyMechanism>,
    #[serde(default)]
    pub instrument: Option<InstrumentMechanism>,
    /// Adds `g = 1{x_1 > 0}`.
    #[serde(default)]
    pub group: bool,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            d: default_d(),
            d_pi: default_d_pi(),
            d_mu: default_d_mu(),
            gamma_true: default_gamma(),
            seed: 0,
            proxy: None,
            instrument: None,
            group: false,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 2 || self.d == 0 {
            return bad("need n >= 2 and d >= 1".into());
        }
        if self.d_pi == 0 || self.d_mu == 0 || self.d_pi > self.d || self.d_mu > self.d {
            return bad(format!(
                "need 1 <= d_pi, d_mu <= d (got {}, {}, {})",
                self.d_pi, self.d_mu, self.d
            ));
        }
        if !(self.gamma_true > 0.0 && self.gamma_true <= 1.0) {
            return bad(format!("gamma_true {} outside (0, 1]", self.gamma_true));
        }
        if let Some(p) = &self.proxy {
            if !(0.0..=1.0).contains(&p.q) {
                return bad(format!("proxy q {} outside [0, 1]", p.q));
            }
        }
        if let Some(iv) = &self.instrument {
            if iv.shifts.is_empty() {
                return bad("instrument needs at least one value".into());
            }
        }
        Ok(())
    }
}

/// Known nuisance and target functions of a configuration.
#[derive(Debug, Clone)]
pub struct Truth {
    cfg: DgpConfig,
}

fn index(x: &[f64], k: usize) -> f64 {
    x[..k].iter().sum::<f64>() / (2.0 * (k as f64).sqrt())
}

impl Truth {
    pub fn new(cfg: DgpConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.cfg
    }

    fn a(&self, x: &[f64]) -> f64 {
        index(x, self.cfg.d_mu)
    }

    fn b(&self, x: &[f64]) -> f64 {
        index(x, self.cfg.d_pi)
    }

    /// Selection probabilities `(Y* = 0, Y* = 1)` at instrument index `j`.
    fn iv_select(&self, x: &[f64], j: usize) -> (f64, f64) {
        let iv = self.cfg.instrument.as_ref().expect("instrument mechanism");
        let t = self.b(x) + iv.shifts[j];
        (sigmoid(t), sigmoid(t + iv.theta))
    }

    /// `P(Y* = 1 | X = x)`.
    pub fn mu_star(&self, x: &[f64]) -> f64 {
        if self.cfg.instrument.is_some() {
            sigmoid(self.a(x))
        } else {
            let p = self.pi1(x);
            self.mu1(x) * (p + self.cfg.gamma_true * (1.0 - p))
        }
    }

    /// `P(D = 1 | X = x)`.
    pub fn pi1(&self, x: &[f64]) -> f64 {
        match &self.cfg.instrument {
            Some(iv) => {
                let k = iv.shifts.len();
                (0..k).map(|j| self.iv_pi1_z(x, j)).sum::<f64>() / k as f64
            }
            None => sigmoid(self.b(x)),
        }
    }

    fn iv_pi1_z(&self, x: &[f64], j: usize) -> f64 {
        let m = sigmoid(self.a(x));
        let (p0, p1) = self.iv_select(x, j);
        m * p1 + (1.0 - m) * p0
    }

    /// `P(Y* = 1 | D = 1, X = x)`.
    pub fn mu1(&self, x: &[f64]) -> f64 {
        match &self.cfg.instrument {
            Some(iv) => {
                let k = iv.shifts.len();
                let joint = (0..k).map(|j| self.iv_lambda(x, j)).sum::<f64>() / k as f64;
                joint / self.pi1(x)
            }
            None => sigmoid(self.a(x)),
        }
    }

    /// `P(Y* = 1 | D = 0, X = x)`.
    pub fn mu0(&self, x: &[f64]) -> f64 {
        match &self.cfg.instrument {
            Some(_) => (self.mu_star(x) - self.mu1(x) * self.pi1(x)) / (1.0 - self.pi1(x)),
            None => self.cfg.gamma_true * sigmoid(self.a(x)),
        }
    }

    pub fn delta(&self, x: &[f64]) -> f64 {
        self.mu0(x) - self.mu1(x)
    }

    fn iv_lambda(&self, x: &[f64], j: usize) -> f64 {
        sigmoid(self.a(x)) * self.iv_select(x, j).1
    }

    pub fn z_support(&self) -> Vec<i64> {
        match &self.cfg.instrument {
            Some(iv) => (1..=iv.shifts.len() as i64).collect(),
            None => vec![],
        }
    }

    /// Known nuisance functions, for oracle estimation.
    pub fn models(&self) -> Arc<NuisanceModels> {
        let t = Arc::new(self.clone());
        let f = |g: fn(&Truth, &[f64]) -> f64| {
            let t = Arc::clone(&t);
            FnPredictor::shared(move |x| g(&t, x))
        };
        let proxy = self.cfg.proxy.as_ref().map(|p| {
            let q = p.q;
            let t2 = Arc::clone(&t);
            ProxyModels {
                mu_tilde0: FnPredictor::shared(move |x| {
                    let m0 = t2.mu0(x);
                    q * m0 + (1.0 - q) * (1.0 - m0)
                }),
                gamma1: FnPredictor::shared(move |_| q),
            }
        });
        let iv = match &self.cfg.instrument {
            Some(m) => {
                let k = m.shifts.len();
                (0..k)
                    .map(|j| {
                        let (tl, tk) = (Arc::clone(&t), Arc::clone(&t));
                        IvModels {
                            z: j as i64 + 1,
                            lambda: FnPredictor::shared(move |x| tl.iv_lambda(x, j)),
                            kappa: FnPredictor::shared(move |x| 1.0 - tk.iv_pi1_z(x, j)),
                            pz: FnPredictor::shared(move |_| 1.0 / k as f64),
                        }
                    })
                    .collect()
            }
            None => vec![],
        };
        Arc::new(NuisanceModels {
            mu1: f(Truth::mu1),
            pi1: f(Truth::pi1),
            proxy,
            iv,
        })
    }

    /// Nuisance values at `x`, clipped as estimated values would be.
    pub fn eta_at(&self, x: &[f64], eps: f64) -> EtaPoint {
        let c = |p: f64| clip(p, eps);
        let proxy = self.cfg.proxy.as_ref().map(|p| {
            let m0 = self.mu0(x);
            ProxyPoint {
                mu_tilde0: c(p.q * m0 + (1.0 - p.q) * (1.0 - m0)),
                gamma1: c(p.q),
            }
        });
        let iv = match &self.cfg.instrument {
            Some(m) => (0..m.shifts.len())
                .map(|j| IvPoint {
                    lambda: self.iv_lambda(x, j),
                    kappa: 1.0 - self.iv_pi1_z(x, j),
                    pz: c(1.0 / m.shifts.len() as f64),
                })
                .collect(),
            None => vec![],
        };
        EtaPoint {
            mu1: self.mu1(x),
            pi1: c(self.pi1(x)),
            proxy,
            iv,
        }
    }

    /// True conditional bounds `(mu1 + pi0 delta_lo, mu1 + pi0 delta_hi)` at `x`.
    pub fn mu_bounds(&self, eta: &EtaPoint, bounding: &BoundingSpec) -> Result<(f64, f64)> {
        let (lo, hi) = confounding_bounds_at(eta, bounding, &self.z_support())?;
        Ok((eta.mu1 + eta.pi0() * lo, eta.mu1 + eta.pi0() * hi))
    }

    /// Draws covariates only.
    pub fn draw_x(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.cfg.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// Simulated dataset with the hidden outcomes and the truth.
#[derive(Debug, Clone)]
pub struct SimData {
    pub dataset: Dataset,
    /// Latent outcomes, hidden from estimators.
    pub y_star: Vec<u8>,
    pub truth: Truth,
}

fn bern(rng: &mut impl Rng, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

/// Draws `cfg.n` records with seed `cfg.seed`.
pub fn generate_dgp(cfg: &DgpConfig) -> Result<SimData> {
    let truth = Truth::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n);
    let mut y_star = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x = truth.draw_x(&mut rng);
        let (d, ys, z) = match &cfg.instrument {
            Some(iv) => {
                let j = rng.random_range(0..iv.shifts.len());
                let ys = bern(&mut rng, sigmoid(truth.a(&x)));
                let (p0, p1) = truth.iv_select(&x, j);
                let d = bern(&mut rng, if ys == 1 { p1 } else { p0 });
                (d, ys, Some(j as i64 + 1))
            }
            None => {
                let d = bern(&mut rng, truth.pi1(&x));
                let m = if d == 1 { truth.mu1(&x) } else { truth.mu0(&x) };
                (d, bern(&mut rng, m), None)
            }
        };
        let y_proxy = cfg.proxy.as_ref().map(|p| {
            if rng.random::<f64>() < p.q {
                ys
            } else {
                1 - ys
            }
        });
        let g = cfg.group.then(|| u8::from(x[0] > 0.0));
        records.push(Record {
            x,
            d,
            y: d * ys,
            z,
            y_proxy,
            g,
        });
        y_star.push(ys);
    }
    Ok(SimData {
        dataset: Dataset::from_records(records)?,
        y_star,
        truth,
    })
}

/// Logistic score trained on the selected records of an independent draw of size `n_train`.
pub fn train_score(cfg: &DgpConfig, n_train: usize, seed: u64) -> Result<Score> {
    let sim = generate_dgp(&DgpConfig {
        n: n_train,
        seed,
        ..cfg.clone()
    })?;
    let sel: Vec<&Record> = sim.dataset.records().iter().filter(|r| r.d == 1).collect();
    let x: Vec<&[f64]> = sel.iter().map(|r| r.x.as_slice()).collect();
    let y: Vec<f64> = sel.iter().map(|r| r.yf()).collect();
    let model = fit_learner(&x, &y, &LearnerConfig::logistic(1.0))?;
    Ok(Score::from_fn(move |x| model.predict(x)))
}
