//! Exact solver for box-constrained linear-fractional programs
//!
//! ```text
//! max / min  sum_i b_i (a_i + w_i t_i) / sum_i (a_i + w_i t_i),   lo_i <= t_i <= hi_i,  w_i >= 0
//! ```
//!
//! The optimum sets `t` to one end of its box according to a threshold in `b`,
//! so scanning every threshold in both orientations is exact.

use serde::Serialize;

use crate::error::{Error, Result};

pub const TOL_DEN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LfpInstance {
    pub a: Vec<f64>,
    pub w: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Max,
    Min,
}

/// Ascending: records at sorted positions `>= threshold_index` take `hi`.
/// Descending: records at sorted positions `< threshold_index` take `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LfpSolution {
    pub value: f64,
    pub threshold_index: usize,
    pub orientation: Orientation,
    /// Chosen `t`, in the instance's original record order.
    pub chosen_delta: Vec<f64>,
    /// Number of boxes given with `lo > hi` and swapped.
    pub swapped: usize,
}

impl LfpInstance {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.a.len();
        if n == 0 {
            return Err(Error::Empty("fractional program"));
        }
        if [self.w.len(), self.lo.len(), self.hi.len(), self.b.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(Error::InvalidParameter("fractional program vectors differ in length".into()));
        }
        if self.w.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        Ok(())
    }

    /// Program for the complementary class: `a -> 1 - a`, `t -> -t`.
    pub fn complement(&self) -> Self {
        Self {
            a: self.a.iter().map(|a| 1.0 - a).collect(),
            w: self.w.clone(),
            lo: self.hi.iter().map(|h| -h).collect(),
            hi: self.lo.iter().map(|l| -l).collect(),
            b: self.b.clone(),
        }
    }

    /// Objective at an arbitrary assignment; `None` when the denominator is not above tolerance.
    pub fn objective(&self, t: &[f64]) -> Option<f64> {
        let n = self.a.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let m = self.a[i] + self.w[i] * t[i];
            num += self.b[i] * m;
            den += m;
        }
        (den / n as f64 > TOL_DEN).then(|| num / den)
    }
}

pub fn solve_fold_lfp(inst: &LfpInstance, dir: Direction) -> Result<LfpSolution> {
    inst.check()?;
    let n = inst.len();
    let mut lo = inst.lo.clone();
    let mut hi = inst.hi.clone();
    let mut swapped = 0;
    for i in 0..n {
        if lo[i] > hi[i] {
            std::mem::swap(&mut lo[i], &mut hi[i]);
            swapped += 1;
        }
    }
    // All-lo base and per-record increments when switching to hi.
    let mut c = 0.0;
    let mut d = 0.0;
    for i in 0..n {
        let m = inst.a[i] + inst.w[i] * lo[i];
        c += inst.b[i] * m;
        d += m;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| inst.b[x].total_cmp(&inst.b[y]));
    let mut pa = vec![0.0; n + 1];
    let mut pg = vec![0.0; n + 1];
    for (pos, &i) in order.iter().enumerate() {
        let gi = inst.w[i] * (hi[i] - lo[i]);
        pg[pos + 1] = pg[pos] + gi;
        pa[pos + 1] = pa[pos] + inst.b[i] * gi;
    }
    let better = |v: f64, best: f64| match dir {
        Direction::Max => v > best,
        Direction::Min => v < best,
    };
    let mut best: Option<(f64, usize, Orientation)> = None;
    for orientation in [Orientation::Ascending, Orientation::Descending] {
        for t in 0..=n {
            let (num, den) = match orientation {
                Orientation::Ascending => (c + (pa[n] - pa[t]), d + (pg[n] - pg[t])),
                Orientation::Descending => (c + pa[t], d + pg[t]),
            };
            if den / n as f64 <= TOL_DEN {
                continue;
            }
            let v = num / den;
            if best.map_or(true, |(bv, _, _)| better(v, bv)) {
                best = Some((v, t, orientation));
            }
        }
    }
    let (value, threshold_index, orientation) =
        best.ok_or(Error::DenominatorInfeasible { tol: TOL_DEN })?;
    let mut chosen = lo.clone();
    for (pos, &i) in order.iter().enumerate() {
        let top = match orientation {
            Orientation::Ascending => pos >= threshold_index,
            Orientation::Descending => pos < threshold_index,
        };
        if top {
            chosen[i] = hi[i];
        }
    }
    Ok(LfpSolution {
        value,
        threshold_index,
        orientation,
        chosen_delta: chosen,
        swapped,
    })
}
