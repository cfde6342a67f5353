//! Variance maps `M`, `M_V` and their iteration, the arctan coordinates of
//! the critical window, the limiting variance function `R`, and the
//! variance-level asymptotics built on them.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::error::{bail, Result};
use crate::scaling::{constants, critical_variance};

/// Iterates beyond this value are reported as overflow.
pub const OVERFLOW_LIMIT: f64 = 1e300;
/// `R̃_N` above this value means the grid cannot resolve `R(r)`.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub b: u32,
    pub s: u32,
    pub v: f64,
    /// `ϱ_k = M_V^k(0)` for `k = 0..=steps`.
    pub values: Vec<f64>,
    pub coords: Option<Vec<f64>>,
}

/// `M(x) = ((1+x)^s - 1)/b`.
pub fn map_m(b: u32, s: u32, x: f64) -> f64 {
    (f64::from(s) * x.ln_1p()).exp_m1() / f64::from(b)
}

/// `M_V(x) = ((1+x)^s (1+V)^{s-1} - 1)/b`.
pub fn map_m_v(b: u32, s: u32, v: f64, x: f64) -> f64 {
    (f64::from(s) * x.ln_1p() + f64::from(s - 1) * v.ln_1p()).exp_m1() / f64::from(b)
}

/// Inverse of `M` at `b = s`: `(1 + b y)^{1/b} - 1`.
pub fn map_m_inverse(b: u32, y: f64) -> f64 {
    let bf = f64::from(b);
    ((bf * y).ln_1p() / bf).exp_m1()
}

fn check_shape(b: u32, s: u32) -> Result<()> {
    if b < 1 || s < 1 {
        bail!(Argument, "b and s must be positive, got b={b}, s={s}");
    }
    Ok(())
}

fn require_critical(b: u32) -> Result<()> {
    if b < 2 {
        bail!(Argument, "the critical family needs b = s >= 2, got b={b}");
    }
    Ok(())
}

/// `M_V^steps(start)` without storing the trajectory.
fn flow(b: u32, s: u32, v: f64, start: f64, steps: u64) -> Result<f64> {
    let mut x = start;
    for k in 0..steps {
        x = map_m_v(b, s, v, x);
        if !(x <= OVERFLOW_LIMIT) {
            bail!(Numeric, "variance flow overflowed at step {}", k + 1);
        }
    }
    Ok(x)
}

/// `M^steps(start)` without storing the trajectory.
fn flow_free(b: u32, s: u32, start: f64, steps: u64) -> Result<f64> {
    flow(b, s, 0.0, start, steps)
}

pub fn iterate_variance(b: u32, s: u32, v: f64, steps: u64) -> Result<FlowTrace> {
    check_shape(b, s)?;
    if !(v >= 0.0) {
        bail!(Argument, "vertex variance must be >= 0, got {v}");
    }
    let mut values = Vec::with_capacity(steps as usize + 1);
    values.push(0.0);
    let mut x = 0.0;
    for k in 0..steps {
        x = map_m_v(b, s, v, x);
        if !(x <= OVERFLOW_LIMIT) {
            bail!(Numeric, "variance flow overflowed at step {}", k + 1);
        }
        values.push(x);
    }
    Ok(FlowTrace { b, s, v, values, coords: None })
}

fn arctan_scale(b: u32, n_eff: f64) -> Result<f64> {
    require_critical(b)?;
    if !(n_eff > 0.0) {
        bail!(Argument, "n_eff must be positive, got {n_eff}");
    }
    Ok(2.0 * n_eff / (PI * constants(b)?.kappa_sq))
}

/// Fills `coords` with `𝐫_k = (2/π) arctan(2 n_eff ϱ_k / (πκ²))`.
pub fn arctan_coords(mut trace: FlowTrace, n_eff: f64) -> Result<FlowTrace> {
    let scale = arctan_scale(trace.b, n_eff)?;
    trace.coords = Some(trace.values.iter().map(|&x| 2.0 / PI * (scale * x).atan()).collect());
    Ok(trace)
}

/// Recovers `ϱ` from an arctan coordinate.
pub fn arctan_inverse(b: u32, n_eff: f64, coord: f64) -> Result<f64> {
    let scale = arctan_scale(b, n_eff)?;
    Ok((PI * coord / 2.0).tan() / scale)
}

fn floor_log(n: u64) -> u64 {
    (n as f64).ln().floor() as u64
}

fn require_window(b: u32, n: u64) -> Result<u64> {
    require_critical(b)?;
    if n < 8 {
        bail!(Argument, "need n >= 8 so that floor(log n) >= 2, got {n}");
    }
    Ok(floor_log(n))
}

/// `Δ = L ϱ*/κ² - (1 + η log L/L + r/L)` with `L = ⌊log n⌋` and
/// `ϱ* = M_v^{n-L}(0)` at the exact critical variance.
pub fn lemma32_residual(b: u32, n: u64, r: f64) -> Result<f64> {
    let big_l = require_window(b, n)?;
    let c = constants(b)?;
    let v = critical_variance(b, n, r)?;
    let rho = flow(b, b, v, 0.0, n - big_l)?;
    let l = big_l as f64;
    Ok(l * rho / c.kappa_sq - (1.0 + c.eta * l.ln() / l + r / l))
}

/// `V_{N,r} = (κ²/N)(1 + η log N/N + r/N)`.
pub fn window_seed(b: u32, big_n: u64, r: f64) -> Result<f64> {
    require_critical(b)?;
    if big_n < 1 {
        bail!(Argument, "N must be >= 1");
    }
    let c = constants(b)?;
    let nf = big_n as f64;
    let seed = c.kappa_sq / nf * (1.0 + c.eta * nf.ln() / nf + r / nf);
    if !(seed > 0.0) {
        bail!(Argument, "V_(N={big_n}, r={r}) = {seed} is not positive");
    }
    Ok(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RFunction {
    pub r: f64,
    /// `R̃` at the largest grid point.
    pub value: f64,
    /// `(N, R̃_N)` for each grid point.
    pub sequence: Vec<(u64, f64)>,
}

/// `R̃_N = M^N(V_{N,r})` for one `N`.
pub fn r_approximant(b: u32, r: f64, big_n: u64) -> Result<f64> {
    let seed = window_seed(b, big_n, r)?;
    let mut x = seed;
    for _ in 0..big_n {
        x = map_m(b, b, x);
        if !(x <= DIVERGENCE_LIMIT) {
            bail!(Numeric, "M^N(V_(N,r)) diverged for N={big_n}, r={r}; r is too large for this N");
        }
    }
    Ok(x)
}

pub fn r_function(b: u32, r: f64, n_grid: &[u64]) -> Result<RFunction> {
    require_critical(b)?;
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        bail!(Argument, "N grid must be non-empty and strictly increasing");
    }
    let sequence = n_grid
        .par_iter()
        .map(|&big_n| r_approximant(b, r, big_n).map(|x| (big_n, x)))
        .collect::<Result<Vec<_>>>()?;
    let value = sequence.last().expect("non-empty grid").1;
    Ok(RFunction { r, value, sequence })
}

/// Shifts `R(r)` to `R(r + shift)` through `R(r+1) = M(R(r))`.
pub fn r_shift(b: u32, value: f64, shift: i64) -> Result<f64> {
    require_critical(b)?;
    let mut x = value;
    if shift >= 0 {
        x = flow_free(b, b, x, shift as u64)?;
    } else {
        for _ in 0..shift.unsigned_abs() {
            x = map_m_inverse(b, x);
        }
    }
    Ok(x)
}

/// Variance function `R_{b,s}` of the `b < s` family, through
/// `R(s r/b) = M(R(r))` from a second-order seed at `(b/s)^K r`.
pub fn r_function_subcritical(b: u32, s: u32, r: f64, k: u32) -> Result<f64> {
    if b >= s || b < 1 {
        bail!(Argument, "needs 1 <= b < s, got b={b}, s={s}");
    }
    if !(r >= 0.0) {
        bail!(Argument, "r must be >= 0, got {r}");
    }
    let (bf, sf) = (f64::from(b), f64::from(s));
    let x = (bf / sf).powi(k as i32) * r;
    // R(x) = x + c x² + O(x³)
    let c = bf * (sf - 1.0) / (2.0 * (sf - bf));
    flow_free(b, s, x + c * x * x, u64::from(k))
}

/// `M_v^n(0) - M^L(M_v^{n-L}(0))`: the squared L² distance between the
/// partition function and its conditional expectation given the top `L`
/// generations of disorder.
pub fn l2_gap(b: u32, n: u64, r: f64) -> Result<f64> {
    let big_l = require_window(b, n)?;
    let v = critical_variance(b, n, r)?;
    let inner = flow(b, b, v, 0.0, n - big_l)?;
    let full = flow(b, b, v, inner, big_l)?;
    let coarse = flow_free(b, b, inner, big_l)?;
    Ok(full - coarse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledVariance {
    pub n: u64,
    pub regime: Regime,
    /// `ϱ_n` at `β = β̂/n`.
    pub variance: f64,
    /// `n ϱ_n`, `(log n) ϱ_n` or `ϱ_n` by regime.
    pub scaled: f64,
}

/// Variance of `W_n(β̂/n)` rescaled by the rate of its regime.
pub fn prop22_check(b: u32, beta_hat: f64, n_grid: &[u64], law: &DisorderLaw) -> Result<Vec<ScaledVariance>> {
    require_critical(b)?;
    if !(beta_hat >= 0.0) {
        bail!(Argument, "β̂ must be >= 0, got {beta_hat}");
    }
    let kh = constants(b)?.kappa_hat;
    let regime = if (beta_hat - kh).abs() <= 1e-12 * kh {
        Regime::Critical
    } else if beta_hat < kh {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    };
    n_grid
        .par_iter()
        .map(|&n| {
            if n < 2 {
                bail!(Argument, "n must be >= 2, got {n}");
            }
            let nf = n as f64;
            let v = law.tilt_variance(beta_hat / nf);
            // past the overflow guard the supercritical flow has diverged
            let variance = flow(b, b, v, 0.0, n).unwrap_or(f64::INFINITY);
            let scaled = match regime {
                Regime::Subcritical => nf * variance,
                Regime::Critical => nf.ln() * variance,
                Regime::Supercritical => variance,
            };
            Ok(ScaledVariance { n, regime, variance, scaled })
        })
        .collect()
}
