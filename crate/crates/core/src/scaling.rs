//! Critical constants of the `b = s` family and the inverse-temperature
//! schedules of the critical window.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalConstants {
    /// `κ̂_b = π√b / (√2 (b-1))`, the critical value of `nβ`.
    pub kappa_hat: f64,
    /// `κ_b² = 2/(b-1)`.
    pub kappa_sq: f64,
    /// `η_b = (b+1) / (3(b-1))`.
    pub eta: f64,
    /// `ς_b = (log(π/2) + 2) η_b`.
    pub varsigma: f64,
    /// `ε_b = η_b log b`.
    pub epsilon: f64,
}

pub fn constants(b: u32) -> Result<CriticalConstants> {
    if b < 2 {
        bail!(Argument, "b must be >= 2, got {b}");
    }
    let bf = f64::from(b);
    let eta = (bf + 1.0) / (3.0 * (bf - 1.0));
    Ok(CriticalConstants {
        kappa_hat: PI * bf.sqrt() / (2f64.sqrt() * (bf - 1.0)),
        kappa_sq: 2.0 / (bf - 1.0),
        eta,
        varsigma: ((PI / 2.0).ln() + 2.0) * eta,
        epsilon: eta * bf.ln(),
    })
}

/// Effective generation `n - η log n - r + ς`, with the vanishing correction
/// dropped.
pub fn n_eff(b: u32, n: u64, r: f64) -> Result<f64> {
    if n < 2 {
        bail!(Argument, "n_eff needs n >= 2, got {n}");
    }
    let c = constants(b)?;
    let nf = n as f64;
    let value = nf - c.eta * nf.ln() - r + c.varsigma;
    if !(value > 0.0) {
        bail!(Argument, "n_eff(n={n}, r={r}) = {value} is not positive");
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `β = (κ̂/n)(1 + η log n/n + (r - ς - κ̂τ/2)/n)`.
    ClosedForm,
    /// The `β > 0` solving `V(β) = κ̂² / n_eff(n, r)²`.
    ExactVariance,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::ClosedForm => "closed",
            ScheduleMode::ExactVariance => "exactv",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        match text.trim() {
            "closed" => Ok(ScheduleMode::ClosedForm),
            "exactv" => Ok(ScheduleMode::ExactVariance),
            other => bail!(Argument, "unknown schedule {other:?}; expected closed or exactv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub mode: ScheduleMode,
    pub r: f64,
    pub law: DisorderLaw,
}

impl TemperatureSchedule {
    pub fn new(mode: ScheduleMode, r: f64, law: DisorderLaw) -> Self {
        Self { mode, r, law }
    }

    pub fn beta(&self, b: u32, n: u64) -> Result<f64> {
        beta(self, b, n)
    }

    /// Per-vertex variance `V(β_{n,r})` produced by the schedule.
    pub fn vertex_variance(&self, b: u32, n: u64) -> Result<f64> {
        match self.mode {
            ScheduleMode::ExactVariance => Ok(critical_variance(b, n, self.r)?),
            ScheduleMode::ClosedForm => Ok(self.law.tilt_variance(self.beta(b, n)?)),
        }
    }
}

/// `κ̂² / n_eff(n, r)²`.
pub fn critical_variance(b: u32, n: u64, r: f64) -> Result<f64> {
    let kh = constants(b)?.kappa_hat;
    let ne = n_eff(b, n, r)?;
    Ok((kh / ne).powi(2))
}

pub fn beta(schedule: &TemperatureSchedule, b: u32, n: u64) -> Result<f64> {
    let c = constants(b)?;
    match schedule.mode {
        ScheduleMode::ClosedForm => {
            if n == 0 {
                bail!(Argument, "closed-form schedule needs n >= 1");
            }
            let nf = n as f64;
            let tau = schedule.law.third_moment();
            let bracket =
                1.0 + c.eta * nf.ln() / nf + (schedule.r - c.varsigma - c.kappa_hat * tau / 2.0) / nf;
            if !(bracket > 0.0) {
                bail!(Argument, "closed-form schedule bracket {bracket} is not positive at n={n}, r={}", schedule.r);
            }
            Ok(c.kappa_hat / nf * bracket)
        }
        ScheduleMode::ExactVariance => {
            let target = critical_variance(b, n, schedule.r)?;
            solve_tilt_variance(&schedule.law, target)
        }
    }
}

/// Bisection for the unique `β > 0` with `V(β) = target`.
pub fn solve_tilt_variance(law: &DisorderLaw, target: f64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        bail!(Numeric, "variance target {target} must be positive and finite");
    }
    let mut lo = 0.0;
    let mut hi = target.sqrt().max(f64::MIN_POSITIVE);
    let mut doublings = 0;
    while law.tilt_variance(hi) < target {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 || !hi.is_finite() {
            bail!(Numeric, "could not bracket V(β) = {target} for the {law} law");
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || (hi - lo) <= 1e-16 * hi {
            break;
        }
        if law.tilt_variance(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick whichever end is closer in variance
    let best = if (law.tilt_variance(lo) - target).abs() <= (law.tilt_variance(hi) - target).abs() { lo } else { hi };
    if (hi - lo) > 1e-12 * hi {
        bail!(Numeric, "bisection for V(β) = {target} stalled at [{lo}, {hi}]");
    }
    Ok(best)
}

/// `υ_b(β̂) = β̂ (√2/√b) tan(πβ̂ / (2κ̂_b))` on `0 <= β̂ < κ̂_b`.
pub fn upsilon(b: u32, beta_hat: f64) -> Result<f64> {
    let c = constants(b)?;
    if !(beta_hat >= 0.0 && beta_hat < c.kappa_hat) {
        bail!(Argument, "υ_b needs 0 <= β̂ < κ̂_b = {}, got {beta_hat}", c.kappa_hat);
    }
    let bf = f64::from(b);
    Ok(beta_hat * (2.0 / bf).sqrt() * (PI * beta_hat / (2.0 * c.kappa_hat)).tan())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn constants_for_b2_and_b3() {
        let c2 = constants(2).unwrap();
        assert_eq!(c2.kappa_hat, PI);
        assert_eq!(c2.kappa_sq, 2.0);
        assert_eq!(c2.eta, 1.0);
        assert!((c2.varsigma - 2.4515827).abs() < 1e-7);
        assert!((c2.epsilon - std::f64::consts::LN_2).abs() < 1e-7);
        let c3 = constants(3).unwrap();
        assert!((c3.kappa_hat - 1.9238247).abs() < 1e-7);
        assert!((c3.eta - 2.0 / 3.0).abs() < 1e-15);
        for b in 2..10 {
            let c = constants(b).unwrap();
            for v in [c.kappa_hat, c.kappa_sq, c.eta, c.varsigma, c.epsilon] {
                assert!(v > 0.0);
            }
            // κ̂² = (π²/4) κ² b/(b-1)
            let bf = f64::from(b);
            assert!(rel(c.kappa_hat.powi(2), PI * PI / 4.0 * c.kappa_sq * bf / (bf - 1.0)) < 1e-14);
        }
        assert!(constants(1).is_err());
    }

    #[test]
    fn n_eff_examples() {
        assert!((n_eff(2, 1000, 0.0).unwrap() - 995.5438275).abs() < 1e-6);
        assert!((n_eff(2, 1000, 2.0).unwrap() - 993.5438275).abs() < 1e-6);
        assert!(n_eff(2, 2, 1e6).is_err());
        assert!(n_eff(2, 1, 0.0).is_err());
    }

    #[test]
    fn closed_form_example() {
        let s = TemperatureSchedule::new(ScheduleMode::ClosedForm, 0.0, DisorderLaw::Gaussian);
        let b = s.beta(2, 1000).unwrap();
        let expected = PI / 1000.0 * (1.0 + 1000f64.ln() / 1000.0 - 2.4515827 / 1000.0);
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 0.0031556).abs() < 1e-7);
    }

    #[test]
    fn closed_form_uses_third_moment() {
        let law = DisorderLaw::TwoPoint { p: 0.2 };
        let s = TemperatureSchedule::new(ScheduleMode::ClosedForm, 0.0, law);
        let g = TemperatureSchedule::new(ScheduleMode::ClosedForm, 0.0, DisorderLaw::Gaussian);
        let diff = g.beta(2, 1000).unwrap() - s.beta(2, 1000).unwrap();
        // κ̂τ/2 / n shift inside the bracket, τ = 1.5
        assert!((diff - PI / 1000.0 * (PI * 1.5 / 2.0) / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn exact_variance_solves_defining_equation() {
        for law in [DisorderLaw::Gaussian, DisorderLaw::Rademacher, DisorderLaw::TwoPoint { p: 0.2 }] {
            for b in [2, 3] {
                for n in [10u64, 100, 1000, 100_000] {
                    for r in [-3.0, 0.0, 2.5] {
                        let s = TemperatureSchedule::new(ScheduleMode::ExactVariance, r, law);
                        let beta = s.beta(b, n).unwrap();
                        let ne = n_eff(b, n, r).unwrap();
                        let kh = constants(b).unwrap().kappa_hat;
                        assert!(rel(law.tilt_variance(beta) * ne * ne, kh * kh) < 1e-10, "{law} b={b} n={n} r={r}");
                    }
                }
            }
        }
        let s = TemperatureSchedule::new(ScheduleMode::ExactVariance, 0.0, DisorderLaw::Gaussian);
        let beta = s.beta(2, 1000).unwrap();
        let target = (PI / n_eff(2, 1000, 0.0).unwrap()).powi(2);
        assert!(rel((beta * beta).exp_m1(), target) < 1e-12);
    }

    #[test]
    fn modes_agree_to_second_order() {
        let n = 100_000u64;
        let cf = TemperatureSchedule::new(ScheduleMode::ClosedForm, 0.0, DisorderLaw::Gaussian).beta(2, n).unwrap();
        let ev = TemperatureSchedule::new(ScheduleMode::ExactVariance, 0.0, DisorderLaw::Gaussian).beta(2, n).unwrap();
        let nf = n as f64;
        assert!((cf - ev).abs() / ev < 1e-4 * nf.ln() / nf, "{}", (cf - ev).abs() / ev);
    }

    #[test]
    fn closed_form_scales_like_kappa_hat_over_n() {
        let s = TemperatureSchedule::new(ScheduleMode::ClosedForm, 0.0, DisorderLaw::Gaussian);
        let devs: Vec<f64> = [1_000u64, 10_000, 100_000]
            .iter()
            .map(|&n| rel(n as f64 * s.beta(2, n).unwrap(), PI))
            .collect();
        assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
    }

    #[test]
    fn exact_variance_monotone_in_n_and_r() {
        for r in [-2.0, 0.0, 2.0] {
            let s = TemperatureSchedule::new(ScheduleMode::ExactVariance, r, DisorderLaw::Rademacher);
            let betas: Vec<f64> = [10u64, 30, 100, 300, 1000, 3000].iter().map(|&n| s.beta(2, n).unwrap()).collect();
            assert!(betas.windows(2).all(|w| w[1] < w[0]));
        }
        for n in [20u64, 200, 2000] {
            let betas: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0]
                .iter()
                .map(|&r| TemperatureSchedule::new(ScheduleMode::ExactVariance, r, DisorderLaw::Gaussian).beta(3, n).unwrap())
                .collect();
            assert!(betas.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn upsilon_examples() {
        assert!((upsilon(2, 2.0).unwrap() - 3.1148154).abs() < 1e-7);
        assert!((upsilon(2, 2.0).unwrap() - 2.0 * 1f64.tan()).abs() < 1e-14);
        assert_eq!(upsilon(2, 0.0).unwrap(), 0.0);
        assert!(upsilon(2, PI).is_err());
        assert!(upsilon(2, PI * (1.0 - 1e-9)).unwrap() > 1e8);
    }

    #[test]
    fn schedule_mode_parses() {
        assert_eq!("closed".parse::<ScheduleMode>().unwrap(), ScheduleMode::ClosedForm);
        assert_eq!("exactv".parse::<ScheduleMode>().unwrap(), ScheduleMode::ExactVariance);
        assert!("other".parse::<ScheduleMode>().is_err());
    }
}
