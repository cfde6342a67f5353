//! Reproducible parallel Monte Carlo over disorder realizations.
//!
//! Replicate `i` draws its disorder from the keyed streams
//! `(master_seed, i, vertex id)` and results are reduced in replicate order,
//! so a summary is a pure function of its configuration.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::error::{bail, Error, Result};
use crate::hierarchy::GraphParams;
use crate::moments::{centered_moments, MomentTable};
use crate::partition::{evaluate_exact, log_partition, DisorderAssignment};
use crate::rng::{StreamDomain, StreamKey};
use crate::scaling::TemperatureSchedule;
use crate::variance_flow::FlowTrace;

pub const MIN_REPLICATES: u64 = 100;
/// Upper bound on `replicates × (bs)^n`.
pub const EVALUATION_LIMIT: f64 = 1e11;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: u32 = 2000;
pub const DEFAULT_MAX_ORDER: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Temperature {
    Fixed { beta: f64 },
    Schedule(TemperatureSchedule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub params: GraphParams,
    pub law: DisorderLaw,
    pub temperature: Temperature,
    pub replicates: u64,
    pub master_seed: u64,
    pub bootstrap_resamples: u32,
    pub m_max: u32,
}

impl McConfig {
    pub fn new(params: GraphParams, law: DisorderLaw, temperature: Temperature, replicates: u64, master_seed: u64) -> Self {
        Self {
            params,
            law,
            temperature,
            replicates,
            master_seed,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            m_max: DEFAULT_MAX_ORDER,
        }
    }

    pub fn beta(&self) -> Result<f64> {
        match self.temperature {
            Temperature::Fixed { beta } => {
                if !beta.is_finite() {
                    bail!(Argument, "β must be finite, got {beta}");
                }
                Ok(beta)
            }
            Temperature::Schedule(schedule) => schedule.beta(self.params.b, u64::from(self.params.n)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            bail!(Argument, "need at least {MIN_REPLICATES} replicates, got {}", self.replicates);
        }
        if self.bootstrap_resamples < 1 {
            bail!(Argument, "need at least one bootstrap resample");
        }
        if !(2..=crate::moments::MAX_ORDER).contains(&self.m_max) {
            bail!(Argument, "moment order must lie in 2..={}, got {}", crate::moments::MAX_ORDER, self.m_max);
        }
        let work = self.replicates as f64 * (self.params.fanout() as f64).powi(self.params.n as i32);
        if work > EVALUATION_LIMIT {
            bail!(
                Resource,
                "{} replicates on {} need {work:.3e} evaluation steps, above {EVALUATION_LIMIT:e}",
                self.replicates,
                self.params
            );
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean, raw moments `1..=m_max` and central moments `2..=m_max` of a
/// sample, by plug-in.
#[derive(Debug, Clone, PartialEq)]
struct SampleMoments {
    mean: f64,
    raw: Vec<f64>,
    central: Vec<f64>,
}

fn sample_moments(values: impl Iterator<Item = f64> + Clone, count: usize, m_max: u32) -> SampleMoments {
    let n = count as f64;
    let mut raw_sums = vec![CompensatedSum::default(); m_max as usize];
    for w in values.clone() {
        let mut power = 1.0;
        for s in raw_sums.iter_mut() {
            power *= w;
            s.add(power);
        }
    }
    let raw: Vec<f64> = raw_sums.iter().map(|s| s.total() / n).collect();
    let mean = raw[0];
    let mut central_sums = vec![CompensatedSum::default(); m_max as usize - 1];
    for w in values {
        let d = w - mean;
        let mut power = d;
        for s in central_sums.iter_mut() {
            power *= d;
            s.add(power);
        }
    }
    let central = central_sums.iter().map(|s| s.total() / n).collect();
    SampleMoments { mean, raw, central }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub order: u32,
    pub estimate: f64,
    /// Standard deviation of the bootstrap replicates of the statistic.
    pub standard_error: f64,
    pub ci95: Interval,
    pub ci99: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub config: McConfig,
    pub beta: f64,
    pub replicates: u64,
    pub mean: f64,
    /// `sd / √R` from the unbiased sample variance.
    pub standard_error: f64,
    pub mean_ci95: Interval,
    pub mean_ci99: Interval,
    /// `E[(W - E W)^m]` estimates for `m = 2..=m_max`.
    pub central_moments: Vec<Estimate>,
    /// `E[W^m]` estimates for `m = 2..=m_max`.
    pub raw_moments: Vec<Estimate>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl McSummary {
    pub fn variance(&self) -> &Estimate {
        &self.central_moments[0]
    }

    pub fn central(&self, m: u32) -> Option<&Estimate> {
        self.central_moments.iter().find(|e| e.order == m)
    }

    pub fn raw(&self, m: u32) -> Option<&Estimate> {
        self.raw_moments.iter().find(|e| e.order == m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRun {
    /// `W_n` for each replicate, in replicate order.
    pub samples: Vec<f64>,
    pub summary: McSummary,
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Resource(format!("cannot start {workers} workers: {e}")))
}

/// Default worker count: the available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn draw_replicates(config: &McConfig, beta: f64, log: bool) -> Result<Vec<f64>> {
    (0..config.replicates)
        .into_par_iter()
        .map(|i| {
            let env = DisorderAssignment::new(config.law, config.master_seed, i);
            if log {
                log_partition(&config.params, beta, &config.law, &env)
            } else {
                evaluate_exact(&config.params, beta, &config.law, &env)
            }
        })
        .collect()
}

/// Percentile at level `q` with linear interpolation between order
/// statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn bootstrap_estimate(order: u32, estimate: f64, mut replicates: Vec<f64>) -> Estimate {
    let count = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / count;
    let spread = replicates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
    replicates.sort_by(f64::total_cmp);
    Estimate {
        order,
        estimate,
        standard_error: spread.sqrt(),
        ci95: Interval { lower: percentile(&replicates, 0.025), upper: percentile(&replicates, 0.975) },
        ci99: Interval { lower: percentile(&replicates, 0.005), upper: percentile(&replicates, 0.995) },
    }
}

fn summarize(config: &McConfig, beta: f64, samples: &[f64], started: Instant) -> McSummary {
    let count = samples.len();
    let m_max = config.m_max;
    let point = sample_moments(samples.iter().copied(), count, m_max);
    let key = StreamKey::new(StreamDomain::Bootstrap, config.master_seed, 0);
    let resampled: Vec<SampleMoments> = (0..u64::from(config.bootstrap_resamples))
        .into_par_iter()
        .map(|j| {
            let mut rng = key.stream(j);
            let picks: Vec<usize> = (0..count).map(|_| rng.random_range(0..count)).collect();
            sample_moments(picks.iter().map(|&i| samples[i]), count, m_max)
        })
        .collect();

    let mean_boot = bootstrap_estimate(1, point.mean, resampled.iter().map(|s| s.mean).collect());
    let central_moments = (2..=m_max)
        .map(|m| {
            let idx = m as usize - 2;
            bootstrap_estimate(m, point.central[idx], resampled.iter().map(|s| s.central[idx]).collect())
        })
        .collect();
    let raw_moments = (2..=m_max)
        .map(|m| {
            let idx = m as usize - 1;
            bootstrap_estimate(m, point.raw[idx], resampled.iter().map(|s| s.raw[idx]).collect())
        })
        .collect();
    let unbiased = point.central[0] * count as f64 / (count as f64 - 1.0);
    McSummary {
        config: config.clone(),
        beta,
        replicates: count as u64,
        mean: point.mean,
        standard_error: (unbiased / count as f64).sqrt(),
        mean_ci95: mean_boot.ci95,
        mean_ci99: mean_boot.ci99,
        central_moments,
        raw_moments,
        wall_time: started.elapsed(),
    }
}

/// Samples and summarizes on `workers` threads; the result does not depend
/// on `workers` apart from `wall_time`.
pub fn run_with_workers(config: &McConfig, workers: usize) -> Result<McRun> {
    config.validate()?;
    let beta = config.beta()?;
    let started = Instant::now();
    worker_pool(workers.max(1))?.install(|| {
        let samples = draw_replicates(config, beta, false)?;
        if let Some(i) = samples.iter().position(|w| !w.is_finite()) {
            bail!(Numeric, "replicate {i} produced a non-finite partition function");
        }
        let summary = summarize(config, beta, &samples, started);
        Ok(McRun { samples, summary })
    })
}

pub fn run(config: &McConfig) -> Result<McSummary> {
    Ok(run_with_workers(config, default_workers())?.summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergy {
    pub n: u32,
    pub beta: f64,
    /// `b^{-n}` times the sample mean of `log W_n`: a finite-`n` proxy for
    /// the free energy.
    pub estimate: f64,
    pub standard_error: f64,
    pub replicates: u64,
}

pub fn free_energy_estimate(config: &McConfig) -> Result<FreeEnergy> {
    free_energy_with_workers(config, default_workers())
}

pub fn free_energy_with_workers(config: &McConfig, workers: usize) -> Result<FreeEnergy> {
    let Temperature::Fixed { beta } = config.temperature else {
        bail!(Argument, "the free-energy estimate needs a fixed β");
    };
    config.validate()?;
    let logs = worker_pool(workers.max(1))?.install(|| draw_replicates(config, beta, true))?;
    if let Some(i) = logs.iter().position(|x| !x.is_finite()) {
        bail!(Numeric, "replicate {i} produced a non-finite log partition function");
    }
    let count = logs.len() as f64;
    let mut total = CompensatedSum::default();
    logs.iter().for_each(|&x| total.add(x));
    let mean = total.total() / count;
    let mut spread = CompensatedSum::default();
    logs.iter().for_each(|&x| spread.add((x - mean).powi(2)));
    let sd = (spread.total() / (count - 1.0)).sqrt();
    let scale = f64::from(config.params.b).powi(config.params.n as i32);
    Ok(FreeEnergy {
        n: config.params.n,
        beta,
        estimate: mean / scale,
        standard_error: sd / count.sqrt() / scale,
        replicates: config.replicates,
    })
}

/// Exact values to hold a summary against.
#[derive(Debug, Clone, Copy)]
pub enum ExactSource<'a> {
    Moments(&'a MomentTable),
    Variance(&'a FlowTrace),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub quantity: String,
    pub exact: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub z_score: f64,
    pub inside_ci95: bool,
    pub inside_ci99: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub verdicts: Vec<Verdict>,
    /// Every exact value inside its 99% interval.
    pub passed: bool,
}

fn verdict(quantity: String, exact: f64, estimate: f64, se: f64, ci95: Interval, ci99: Interval) -> Verdict {
    let diff = estimate - exact;
    let z_score = if diff == 0.0 { 0.0 } else { diff / se };
    Verdict {
        quantity,
        exact,
        estimate,
        standard_error: se,
        z_score,
        inside_ci95: ci95.contains(exact),
        inside_ci99: ci99.contains(exact),
    }
}

pub fn compare(summary: &McSummary, exact: ExactSource<'_>) -> Result<ComparisonReport> {
    let params = &summary.config.params;
    let n = params.n as usize;
    if !params.is_critical() {
        bail!(Argument, "exact moments need b = s, the summary has {params}");
    }
    let mut verdicts = vec![verdict(
        "mean".into(),
        1.0,
        summary.mean,
        summary.standard_error,
        summary.mean_ci95,
        summary.mean_ci99,
    )];
    let from_estimate = |name: String, exact: f64, e: &Estimate| verdict(name, exact, e.estimate, e.standard_error, e.ci95, e.ci99);
    match exact {
        ExactSource::Moments(table) => {
            if table.b != params.b || table.law != summary.config.law {
                bail!(Argument, "moment table (b={}, {}) does not match the run", table.b, table.law);
            }
            if table.beta != summary.beta {
                bail!(Argument, "moment table has β={}, the run has β={}", table.beta, summary.beta);
            }
            if table.steps() < n {
                bail!(Argument, "moment table stops at k={}, the run has n={n}", table.steps());
            }
            let centered = centered_moments(table, n)?;
            let top = table.max_order.min(summary.config.m_max);
            for m in 2..=top {
                let c = summary.central(m).expect("order within m_max");
                verdicts.push(from_estimate(format!("central_moment_{m}"), centered[m as usize - 2], c));
                let r = summary.raw(m).expect("order within m_max");
                verdicts.push(from_estimate(format!("raw_moment_{m}"), table.raw(m, n), r));
            }
        }
        ExactSource::Variance(trace) => {
            if trace.b != params.b || trace.s != params.s {
                bail!(Argument, "variance trace (b={}, s={}) does not match {params}", trace.b, trace.s);
            }
            let v = summary.config.law.tilt_variance(summary.beta);
            if (trace.v - v).abs() > 1e-12 * v.max(f64::MIN_POSITIVE) {
                bail!(Argument, "variance trace has V={}, the run has V(β)={v}", trace.v);
            }
            if trace.values.len() <= n {
                bail!(Argument, "variance trace stops before n={n}");
            }
            verdicts.push(from_estimate("central_moment_2".into(), trace.values[n], summary.variance()));
        }
    }
    let passed = verdicts.iter().all(|v| v.inside_ci99);
    Ok(ComparisonReport { verdicts, passed })
}
