//! Centered, unit-variance disorder laws with finite exponential moments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisorderLaw {
    Gaussian,
    /// `±1` with probability 1/2 each.
    Rademacher,
    /// `√((1-p)/p)` with probability `p`, `-√(p/(1-p))` otherwise.
    TwoPoint { p: f64 },
}

impl DisorderLaw {
    pub fn two_point(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            bail!(Argument, "two-point probability must lie in (0,1), got {p}");
        }
        Ok(DisorderLaw::TwoPoint { p })
    }

    /// Support points and their probabilities, for the discrete laws.
    pub fn atoms(&self) -> Option<[(f64, f64); 2]> {
        match *self {
            DisorderLaw::Gaussian => None,
            DisorderLaw::Rademacher => Some([(1.0, 0.5), (-1.0, 0.5)]),
            DisorderLaw::TwoPoint { p } => {
                Some([(((1.0 - p) / p).sqrt(), p), (-(p / (1.0 - p)).sqrt(), 1.0 - p)])
            }
        }
    }

    /// Cumulant generating function `λ(β) = log E[exp(βω)]`.
    pub fn lambda(&self, beta: f64) -> f64 {
        match *self {
            DisorderLaw::Gaussian => 0.5 * beta * beta,
            DisorderLaw::Rademacher | DisorderLaw::TwoPoint { .. } => {
                let atoms = self.atoms().expect("discrete law");
                // E[e^{βω}] - 1 = E[e^{βω} - 1 - βω] since E[ω] = 0
                let excess: f64 = atoms.iter().map(|&(x, p)| p * exp_excess(beta * x)).sum();
                if excess.is_finite() && excess < 1e100 {
                    excess.ln_1p()
                } else {
                    let (e1, e2) = (beta * atoms[0].0 + atoms[0].1.ln(), beta * atoms[1].0 + atoms[1].1.ln());
                    let hi = e1.max(e2);
                    hi + ((e1 - hi).exp() + (e2 - hi).exp()).ln()
                }
            }
        }
    }

    /// `V(β) = Var(exp{βω - λ(β)}) = exp{λ(2β) - 2λ(β)} - 1`.
    pub fn tilt_variance(&self, beta: f64) -> f64 {
        (self.lambda(2.0 * beta) - 2.0 * self.lambda(beta)).exp_m1()
    }

    /// `E[(exp{βω - λ(β)})^m] = exp{λ(mβ) - mλ(β)}`.
    pub fn tilt_moment(&self, beta: f64, m: u32) -> f64 {
        let m_f = f64::from(m);
        (self.lambda(m_f * beta) - m_f * self.lambda(beta)).exp()
    }

    /// `τ = E[ω³]`.
    pub fn third_moment(&self) -> f64 {
        match *self {
            DisorderLaw::Gaussian | DisorderLaw::Rademacher => 0.0,
            DisorderLaw::TwoPoint { p } => (1.0 - 2.0 * p) / (p * (1.0 - p)).sqrt(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DisorderLaw::Gaussian => rng.sample(StandardNormal),
            DisorderLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            DisorderLaw::TwoPoint { p } => {
                if rng.random::<f64>() < p {
                    ((1.0 - p) / p).sqrt()
                } else {
                    -(p / (1.0 - p)).sqrt()
                }
            }
        }
    }
}

/// `e^y - 1 - y` without cancellation for small `|y|`.
fn exp_excess(y: f64) -> f64 {
    if y.abs() < 0.2 {
        // Taylor series; 14 terms reach full precision on |y| < 0.2
        let mut term = y * y / 2.0;
        let mut sum = term;
        for k in 3..17 {
            term *= y / k as f64;
            sum += term;
        }
        sum
    } else {
        y.exp_m1() - y
    }
}

impl fmt::Display for DisorderLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisorderLaw::Gaussian => f.write_str("gaussian"),
            DisorderLaw::Rademacher => f.write_str("rademacher"),
            DisorderLaw::TwoPoint { p } => write!(f, "twopoint:{p}"),
        }
    }
}

impl FromStr for DisorderLaw {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        match text {
            "gaussian" => Ok(DisorderLaw::Gaussian),
            "rademacher" => Ok(DisorderLaw::Rademacher),
            _ => match text.strip_prefix("twopoint:") {
                Some(p) => {
                    let p: f64 = p
                        .parse()
                        .map_err(|_| Error::Argument(format!("bad two-point probability {p:?}")))?;
                    DisorderLaw::two_point(p)
                }
                None => bail!(Argument, "unknown law {text:?}; expected gaussian, rademacher or twopoint:<p>"),
            },
        }
    }
}
