//! Exact integer moments of the partition function at `b = s`, from the
//! multinomial expansion of the distributional recursion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::error::{bail, Result};
use crate::scaling::{ScheduleMode, TemperatureSchedule};

pub const MAX_ORDER: u32 = 10;
pub const MAX_PROFILE_ORDER: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub b: u32,
    pub max_order: u32,
    pub beta: f64,
    pub law: DisorderLaw,
    /// `mu[m-1][k] = E[W_k^m]` for `m = 1..=max_order`.
    pub mu: Vec<Vec<f64>>,
    /// `excess[m-1][k] = E[W_k^m] - 1`, carried separately to keep full
    /// relative precision while the moments sit close to one.
    pub excess: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn steps(&self) -> usize {
        self.mu[0].len() - 1
    }

    pub fn raw(&self, m: u32, k: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            self.mu[m as usize - 1][k]
        }
    }

    fn raw_excess(&self, m: u32, k: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.excess[m as usize - 1][k]
        }
    }
}

/// A composition of `m` into `b` ordered parts, with its multinomial
/// coefficient.
#[derive(Debug, Clone)]
struct Composition {
    parts: Vec<u32>,
    weight: f64,
}

fn compositions(m: u32, b: u32) -> Vec<Composition> {
    fn fill(rest: u32, slots: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            current.push(rest);
            out.push(current.clone());
            current.pop();
            return;
        }
        for first in 0..=rest {
            current.push(first);
            fill(rest - first, slots - 1, current, out);
            current.pop();
        }
    }
    let mut raw = Vec::new();
    fill(m, b, &mut Vec::with_capacity(b as usize), &mut raw);
    let factorial = |k: u32| (1..=k).map(f64::from).product::<f64>();
    raw.into_iter()
        .map(|parts| {
            let weight = factorial(m) / parts.iter().map(|&p| factorial(p)).product::<f64>();
            Composition { parts, weight }
        })
        .collect()
}

/// `E[W_k^m]` for `m <= m_max` and `k <= steps`, from
/// `μ^{(m)}(k+1) = b^{-m} Σ multinomial(m; m_1..m_b) Π_i μ^{(m_i)}(k)^b (ν^{(m_i)})^{b-1}`.
pub fn moment_recursion(b: u32, beta: f64, law: &DisorderLaw, m_max: u32, steps: usize) -> Result<MomentTable> {
    if b < 2 {
        bail!(Argument, "moment recursion needs b = s >= 2, got {b}");
    }
    if !(1..=MAX_ORDER).contains(&m_max) {
        bail!(Argument, "moment order must lie in 1..={MAX_ORDER}, got {m_max}");
    }
    if !beta.is_finite() {
        bail!(Argument, "β must be finite, got {beta}");
    }
    let orders = m_max as usize;
    let bf = f64::from(b);
    let log_nu: Vec<f64> = (0..=m_max)
        .map(|l| law.lambda(f64::from(l) * beta) - f64::from(l) * law.lambda(beta))
        .collect();
    let table: Vec<Vec<Composition>> = (1..=m_max).map(|m| compositions(m, b)).collect();

    let mut excess: Vec<Vec<f64>> = vec![Vec::with_capacity(steps + 1); orders];
    for row in excess.iter_mut() {
        row.push(0.0);
    }
    let mut gamma = vec![0.0; orders + 1];
    for k in 0..steps {
        // g(l) - 1 for the current generation
        for l in 1..=orders {
            let d = excess[l - 1][k];
            gamma[l] = (bf * d.ln_1p() + (bf - 1.0) * log_nu[l]).exp_m1();
        }
        for m in 1..=orders {
            let mut sum = 0.0;
            for comp in &table[m - 1] {
                // Π(1 + γ_i) - 1 accumulated without cancellation
                let mut prod_excess = 0.0;
                for &p in &comp.parts {
                    let g = gamma[p as usize];
                    prod_excess += g + prod_excess * g;
                }
                sum += comp.weight * prod_excess;
            }
            let next = sum / bf.powi(m as i32);
            if !(next.is_finite() && next <= 1e300) {
                bail!(Numeric, "moment of order m={m} overflowed at k={}", k + 1);
            }
            excess[m - 1].push(next);
        }
    }
    let mu = excess.iter().map(|row| row.iter().map(|d| 1.0 + d).collect()).collect();
    Ok(MomentTable { b, max_order: m_max, beta, law: *law, mu, excess })
}

fn binomial(m: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * f64::from(m - i) / f64::from(i + 1))
}

/// `E[(W_k - 1)^m]` for `m = 2..=max_order`.
pub fn centered_moments(table: &MomentTable, k: usize) -> Result<Vec<f64>> {
    if k > table.steps() {
        bail!(Argument, "generation {k} exceeds the table's {} steps", table.steps());
    }
    Ok((2..=table.max_order)
        .map(|m| {
            // the alternating binomial sum of ones vanishes, so the excesses suffice
            (0..=m)
                .map(|j| {
                    let sign = if (m - j) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * binomial(m, j) * table.raw_excess(j, k)
                })
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub n: u64,
    /// `n - ⌊log n⌋`, the generation whose moment is reported.
    pub generation: u64,
    pub beta: f64,
    pub centered_moment: f64,
}

/// The `m`-th centered moment of `W_{n-⌊log n⌋}(β_{n,r})` along `n_grid`,
/// with `β_{n,r}` from the exact-variance schedule.
pub fn lemma36_profile(b: u32, r: f64, m: u32, n_grid: &[u64], law: &DisorderLaw) -> Result<Vec<ProfilePoint>> {
    if !(2..=MAX_PROFILE_ORDER).contains(&m) {
        bail!(Argument, "profile order must lie in 2..={MAX_PROFILE_ORDER}, got {m}");
    }
    let schedule = TemperatureSchedule::new(ScheduleMode::ExactVariance, r, *law);
    n_grid
        .par_iter()
        .map(|&n| {
            if n < 3 {
                bail!(Argument, "profile needs n >= 3, got {n}");
            }
            let generation = n - (n as f64).ln().floor() as u64;
            let beta = schedule.beta(b, n)?;
            let table = moment_recursion(b, beta, law, m, generation as usize)?;
            let centered = centered_moments(&table, generation as usize)?;
            Ok(ProfilePoint { n, generation, beta, centered_moment: centered[m as usize - 2] })
        })
        .collect()
}
