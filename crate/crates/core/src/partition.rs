//! Partition functions of a single disorder realization.
//!
//! The hierarchical recursion evaluates
//! `W_h = (1/b) Σ_i [Π_j W_{h×(i,j)}] Π_ℓ exp{βω_{h,i,ℓ} - λ(β)}` from the
//! depth-`n` leaves (`W = 1`) up to the root, drawing every disorder variable
//! lazily from its keyed stream. The brute-force path sum, the conditional
//! expectation given the high-generation field, local partition functions and
//! the `Q` contraction are built alongside so the recursion can be checked
//! against each of them.

use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::error::{bail, Result};
use crate::hierarchy::{enumerate_paths, vertex_offsets, GraphParams};
use crate::rng::{StreamDomain, StreamKey};

/// Largest `(bs)^n` the exact recursion will traverse.
pub const EXACT_EDGE_LIMIT: u64 = 1_000_000_000;
/// Largest edge array materialised by [`local_partition_functions`].
pub const EDGE_ARRAY_LIMIT: u64 = 100_000_000;

/// A realization of the disorder field, queried by canonical vertex id.
pub trait Environment: Sync {
    fn omega(&self, vertex_id: u64) -> f64;
}

/// The i.i.d. field of one replicate: vertex `a` takes the first draw of the
/// stream keyed by `(master seed, replicate, id(a))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisorderAssignment {
    pub law: DisorderLaw,
    key: StreamKey,
}

impl DisorderAssignment {
    pub fn new(law: DisorderLaw, master_seed: u64, replicate: u64) -> Self {
        Self { law, key: StreamKey::new(StreamDomain::Disorder, master_seed, replicate) }
    }

    pub fn master_seed(&self) -> u64 {
        self.key.master_seed
    }

    pub fn replicate(&self) -> u64 {
        self.key.replicate
    }
}

impl Environment for DisorderAssignment {
    #[inline]
    fn omega(&self, vertex_id: u64) -> f64 {
        self.law.sample(&mut self.key.stream(vertex_id))
    }
}

/// Explicit values indexed by vertex id.
impl Environment for [f64] {
    fn omega(&self, vertex_id: u64) -> f64 {
        self[vertex_id as usize]
    }
}

impl Environment for Vec<f64> {
    fn omega(&self, vertex_id: u64) -> f64 {
        self[vertex_id as usize]
    }
}

/// Linear products, or log-sum-exp at every branch average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    #[default]
    Linear,
    Log,
}

struct Recursion<'a, E: Environment + ?Sized> {
    params: GraphParams,
    offsets: Vec<u64>,
    beta: f64,
    lambda: f64,
    env: &'a E,
    /// Vertex factors of generation `<= integrated` are replaced by 1.
    integrated: u32,
}

impl<'a, E: Environment + ?Sized> Recursion<'a, E> {
    fn new(params: &GraphParams, beta: f64, law: &DisorderLaw, env: &'a E, integrated: u32) -> Result<Self> {
        Ok(Self {
            params: *params,
            offsets: vertex_offsets(params)?,
            beta,
            lambda: law.lambda(beta),
            env,
            integrated,
        })
    }

    #[inline]
    fn log_factor(&self, generation: u32, code: u64, branch: u64, slot: u64) -> f64 {
        let s1 = u64::from(self.params.s - 1);
        let id = self.offsets[generation as usize] + (code * u64::from(self.params.b) + branch) * s1 + slot;
        self.beta * self.env.omega(id) - self.lambda
    }

    fn linear(&self, depth: u32, code: u64) -> f64 {
        if depth == self.params.n {
            return 1.0;
        }
        let (b, s) = (u64::from(self.params.b), u64::from(self.params.s));
        let generation = depth + 1;
        let mut total = 0.0;
        for i in 0..b {
            let mut product = 1.0;
            for j in 0..s {
                product *= self.linear(depth + 1, code * b * s + i * s + j);
            }
            if generation > self.integrated {
                for slot in 0..s - 1 {
                    product *= self.log_factor(generation, code, i, slot).exp();
                }
            }
            total += product;
        }
        total / b as f64
    }

    fn log(&self, depth: u32, code: u64) -> f64 {
        if depth == self.params.n {
            return 0.0;
        }
        let (b, s) = (u64::from(self.params.b), u64::from(self.params.s));
        let generation = depth + 1;
        let mut terms = Vec::with_capacity(b as usize);
        for i in 0..b {
            let mut sum = 0.0;
            for j in 0..s {
                sum += self.log(depth + 1, code * b * s + i * s + j);
            }
            if generation > self.integrated {
                for slot in 0..s - 1 {
                    sum += self.log_factor(generation, code, i, slot);
                }
            }
            terms.push(sum);
        }
        let hi = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi + (terms.iter().map(|t| (t - hi).exp()).sum::<f64>() / b as f64).ln()
    }

    fn eval(&self, depth: u32, code: u64, arithmetic: Arithmetic) -> f64 {
        match arithmetic {
            Arithmetic::Linear => self.linear(depth, code),
            Arithmetic::Log => self.log(depth, code).exp(),
        }
    }
}

fn guard(params: &GraphParams) -> Result<()> {
    let edges = params.edge_count().map_err(|_| crate::Error::Resource(format!("{params} is too large")))?;
    if edges > EXACT_EDGE_LIMIT {
        bail!(Resource, "{params} has {edges} edges, above the exact-evaluation limit {EXACT_EDGE_LIMIT}");
    }
    Ok(())
}

/// `W_n^ω(β)` by the hierarchical recursion, in linear arithmetic.
pub fn evaluate_exact<E: Environment + ?Sized>(params: &GraphParams, beta: f64, law: &DisorderLaw, env: &E) -> Result<f64> {
    evaluate_exact_with(params, beta, law, env, Arithmetic::Linear)
}

pub fn evaluate_exact_with<E: Environment + ?Sized>(
    params: &GraphParams,
    beta: f64,
    law: &DisorderLaw,
    env: &E,
    arithmetic: Arithmetic,
) -> Result<f64> {
    guard(params)?;
    Ok(Recursion::new(params, beta, law, env, 0)?.eval(0, 0, arithmetic))
}

/// `log W_n^ω(β)`, computed in the log domain throughout.
pub fn log_partition<E: Environment + ?Sized>(params: &GraphParams, beta: f64, law: &DisorderLaw, env: &E) -> Result<f64> {
    guard(params)?;
    Ok(Recursion::new(params, beta, law, env, 0)?.log(0, 0))
}

/// `|Γ_n|^{-1} Σ_p Π_{a∈p} exp{βω_a - λ(β)}` by explicit path enumeration.
pub fn evaluate_pathsum<E: Environment + ?Sized>(params: &GraphParams, beta: f64, law: &DisorderLaw, env: &E) -> Result<f64> {
    let paths = enumerate_paths(params)?;
    let lambda = law.lambda(beta);
    let mut total = 0.0;
    for path in &paths {
        let mut weight = 1.0;
        for vertex in &path.vertices {
            weight *= (beta * env.omega(vertex.id(params)?) - lambda).exp();
        }
        total += weight;
    }
    Ok(total / paths.len() as f64)
}

/// `E[W_n^ω(β) | F_n^N]`: the recursion with every vertex factor of
/// generation `<= N` replaced by its mean, 1.
pub fn evaluate_conditional<E: Environment + ?Sized>(
    params: &GraphParams,
    beta: f64,
    law: &DisorderLaw,
    env: &E,
    generation_cutoff: u32,
) -> Result<f64> {
    if generation_cutoff > params.n {
        bail!(Argument, "conditioning generation N={generation_cutoff} exceeds n={}", params.n);
    }
    guard(params)?;
    Ok(Recursion::new(params, beta, law, env, generation_cutoff)?.linear(0, 0))
}

/// Local partition functions `W_n^h(β)` for every `h ∈ E_N`: the
/// partition function of the sub-diamond `D_n^h`, using only the vertices
/// strictly inside it.
pub fn local_partition_functions<E: Environment + ?Sized>(
    params: &GraphParams,
    beta: f64,
    law: &DisorderLaw,
    env: &E,
    depth: u32,
) -> Result<EdgeArray> {
    if depth > params.n {
        bail!(Argument, "local depth N={depth} exceeds n={}", params.n);
    }
    guard(params)?;
    let len = params.edges_at_depth(depth)?;
    if len > EDGE_ARRAY_LIMIT {
        bail!(Resource, "E_{depth} has {len} entries, above {EDGE_ARRAY_LIMIT}");
    }
    let rec = Recursion::new(params, beta, law, env, 0)?;
    let values = (0..len).map(|code| rec.linear(depth, code)).collect();
    EdgeArray::new(params.b, params.s, depth, values)
}

/// Real array indexed by the encoded edges of `E_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeArray {
    b: u32,
    s: u32,
    depth: u32,
    values: Vec<f64>,
}

impl EdgeArray {
    pub fn new(b: u32, s: u32, depth: u32, values: Vec<f64>) -> Result<Self> {
        let params = GraphParams::new(b, s, depth)?;
        let expected = params.edge_count()?;
        if values.len() as u64 != expected {
            bail!(Argument, "edge array of depth {depth} needs {expected} entries, got {}", values.len());
        }
        Ok(Self { b, s, depth, values })
    }

    pub fn constant(b: u32, s: u32, depth: u32, value: f64) -> Result<Self> {
        let len = GraphParams::new(b, s, depth)?.edge_count()?;
        Self::new(b, s, depth, vec![value; len as usize])
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Entry-wise `x - 1`, turning partition functions into centered ones.
    pub fn centered(&self) -> Self {
        Self { values: self.values.iter().map(|w| w - 1.0).collect(), ..self.clone() }
    }
}

/// One contraction `x ↦ w`, `w_h = (1/b) Σ_i (Π_j (1 + x_{h×(i,j)}) - 1)`.
pub fn q_map(arr: &EdgeArray) -> Result<EdgeArray> {
    if arr.depth == 0 {
        bail!(Argument, "Q map needs an array of depth >= 1");
    }
    let (b, s) = (arr.b as usize, arr.s as usize);
    let values = arr
        .values
        .chunks_exact(b * s)
        .map(|block| {
            block.chunks_exact(s).map(|branch| branch.iter().map(|x| 1.0 + x).product::<f64>() - 1.0).sum::<f64>()
                / b as f64
        })
        .collect();
    Ok(EdgeArray { b: arr.b, s: arr.s, depth: arr.depth - 1, values })
}

/// `Q^N` applied to a depth-`N` array, yielding a scalar.
pub fn q_map_power(arr: &EdgeArray, power: u32) -> Result<f64> {
    if arr.depth != power {
        bail!(Argument, "Q^{power} needs an array of depth {power}, got depth {}", arr.depth);
    }
    let mut current = arr.clone();
    while current.depth > 0 {
        current = q_map(&current)?;
    }
    Ok(current.values[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn zero_temperature_and_generation_zero_are_one() {
        for (b, s, n) in [(2, 2, 0), (2, 2, 4), (3, 3, 2), (2, 3, 3)] {
            let params = GraphParams::new(b, s, n).unwrap();
            let env = DisorderAssignment::new(DisorderLaw::Gaussian, 5, 0);
            assert_eq!(evaluate_exact(&params, 0.0, &env.law, &env).unwrap(), 1.0);
            assert_eq!(evaluate_pathsum(&params, 0.0, &env.law, &env).unwrap(), 1.0);
        }
        let params = GraphParams::critical(2, 0).unwrap();
        let env = DisorderAssignment::new(DisorderLaw::Gaussian, 5, 0);
        assert_eq!(evaluate_exact(&params, 0.9, &env.law, &env).unwrap(), 1.0);
    }

    #[test]
    fn generation_one_by_hand() {
        let params = GraphParams::critical(2, 1).unwrap();
        let law = DisorderLaw::Gaussian;
        let beta = 0.7;
        let omega = vec![0.3, -1.1];
        let lam = law.lambda(beta);
        let expected = 0.5 * ((beta * omega[0] - lam).exp() + (beta * omega[1] - lam).exp());
        assert!(rel(evaluate_exact(&params, beta, &law, &omega).unwrap(), expected) < 1e-15);
        assert!(rel(evaluate_pathsum(&params, beta, &law, &omega).unwrap(), expected) < 1e-15);
    }

    #[test]
    fn recursion_matches_path_sum() {
        let cases = [(2, 2, 1), (2, 2, 2), (2, 2, 3), (3, 3, 1), (3, 3, 2), (2, 3, 2), (3, 2, 2)];
        for (b, s, n) in cases {
            let params = GraphParams::new(b, s, n).unwrap();
            for law in [DisorderLaw::Gaussian, DisorderLaw::TwoPoint { p: 0.3 }] {
                for seed in 0..10 {
                    let env = DisorderAssignment::new(law, seed, 0);
                    for beta in [0.2, 0.5, 1.0] {
                        let exact = evaluate_exact(&params, beta, &law, &env).unwrap();
                        let brute = evaluate_pathsum(&params, beta, &law, &env).unwrap();
                        assert!(rel(exact, brute) < 1e-12, "{params} seed {seed}: {exact} vs {brute}");
                    }
                }
            }
        }
    }

    #[test]
    fn log_arithmetic_agrees() {
        let params = GraphParams::critical(2, 4).unwrap();
        for seed in 0..5 {
            let env = DisorderAssignment::new(DisorderLaw::Gaussian, seed, 1);
            let linear = evaluate_exact(&params, 0.8, &env.law, &env).unwrap();
            let log = evaluate_exact_with(&params, 0.8, &env.law, &env, Arithmetic::Log).unwrap();
            assert!(rel(linear, log) < 1e-12);
            let lp = log_partition(&params, 0.8, &env.law, &env).unwrap();
            assert!((lp - linear.ln()).abs() < 1e-12);
        }
        // large β underflows the linear products but not the log recursion
        let deep = GraphParams::critical(2, 8).unwrap();
        let env = DisorderAssignment::new(DisorderLaw::Gaussian, 3, 0);
        assert!(log_partition(&deep, 40.0, &env.law, &env).unwrap().is_finite());
    }

    #[test]
    fn resource_guard() {
        let params = GraphParams::critical(2, 16).unwrap();
        let env = DisorderAssignment::new(DisorderLaw::Gaussian, 0, 0);
        assert!(matches!(evaluate_exact(&params, 0.1, &env.law, &env), Err(crate::Error::Resource(_))));
        let params = GraphParams::critical(2, 99).unwrap();
        assert!(matches!(evaluate_exact(&params, 0.1, &env.law, &env), Err(crate::Error::Resource(_))));
    }

    #[test]
    fn conditional_edge_cases() {
        let params = GraphParams::critical(2, 3).unwrap();
        let env = DisorderAssignment::new(DisorderLaw::Gaussian, 11, 0);
        assert_eq!(evaluate_conditional(&params, 0.5, &env.law, &env, 3).unwrap(), 1.0);
        assert_eq!(
            evaluate_conditional(&params, 0.5, &env.law, &env, 0).unwrap(),
            evaluate_exact(&params, 0.5, &env.law, &env).unwrap()
        );
        assert!(evaluate_conditional(&params, 0.5, &env.law, &env, 4).is_err());
    }

    #[test]
    fn conditional_expectation_is_q_contraction_of_local_functions() {
        let cases = [(2, 2, 1), (2, 3, 1), (2, 3, 2), (2, 4, 1), (2, 4, 2), (3, 2, 1)];
        for (b, n, cutoff) in cases {
            let params = GraphParams::critical(b, n).unwrap();
            for seed in 0..20 {
                let env = DisorderAssignment::new(DisorderLaw::Gaussian, seed, 0);
                let cond = evaluate_conditional(&params, 0.6, &env.law, &env, cutoff).unwrap();
                let local = local_partition_functions(&params, 0.6, &env.law, &env, cutoff).unwrap();
                let via_q = 1.0 + q_map_power(&local.centered(), cutoff).unwrap();
                assert!(rel(cond, via_q) < 1e-12, "b={b} n={n} N={cutoff} seed {seed}");
            }
        }
    }

    #[test]
    fn local_functions_at_extremes() {
        let params = GraphParams::critical(2, 3).unwrap();
        let env = DisorderAssignment::new(DisorderLaw::Rademacher, 2, 0);
        let leaves = local_partition_functions(&params, 0.4, &env.law, &env, 3).unwrap();
        assert_eq!(leaves.values().len(), 64);
        assert!(leaves.values().iter().all(|&w| w == 1.0));
        let top = local_partition_functions(&params, 0.4, &env.law, &env, 0).unwrap();
        assert_eq!(top.values(), &[evaluate_exact(&params, 0.4, &env.law, &env).unwrap()]);
    }

    #[test]
    fn local_functions_have_mean_one() {
        let params = GraphParams::critical(2, 4).unwrap();
        let means: Vec<f64> = (0..1000)
            .map(|seed| {
                let env = DisorderAssignment::new(DisorderLaw::Gaussian, seed, 7);
                let local = local_partition_functions(&params, 0.5, &env.law, &env, 2).unwrap();
                local.values().iter().map(|w| w - 1.0).sum::<f64>() / 16.0
            })
            .collect();
        let n = means.len() as f64;
        let grand = means.iter().sum::<f64>() / n;
        let sd = (means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(grand.abs() < 4.0 * sd / n.sqrt(), "{grand} vs se {}", sd / n.sqrt());
    }

    #[test]
    fn partition_function_has_mean_one() {
        let params = GraphParams::critical(2, 5).unwrap();
        let values: Vec<f64> = (0..10_000)
            .map(|rep| {
                let env = DisorderAssignment::new(DisorderLaw::Gaussian, 2024, rep);
                evaluate_exact(&params, 0.3, &env.law, &env).unwrap()
            })
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = (values.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn conditioning_contracts_variance() {
        let params = GraphParams::critical(2, 4).unwrap();
        let reps = 2000;
        let variances: Vec<f64> = (0..=4)
            .map(|cutoff| {
                let values: Vec<f64> = (0..reps)
                    .map(|rep| {
                        let env = DisorderAssignment::new(DisorderLaw::Gaussian, 99, rep);
                        evaluate_conditional(&params, 0.5, &env.law, &env, cutoff).unwrap()
                    })
                    .collect();
                let mean = values.iter().sum::<f64>() / reps as f64;
                values.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / reps as f64
            })
            .collect();
        assert!(variances.windows(2).all(|w| w[1] <= w[0]), "{variances:?}");
        assert_eq!(variances[4], 0.0);
    }

    #[test]
    fn q_map_examples() {
        let zero = EdgeArray::constant(2, 2, 2, 0.0).unwrap();
        assert!(q_map(&zero).unwrap().values().iter().all(|&w| w == 0.0));
        assert_eq!(q_map_power(&zero, 2).unwrap(), 0.0);
        let ones = EdgeArray::constant(2, 2, 1, 1.0).unwrap();
        assert_eq!(q_map(&ones).unwrap().values(), &[3.0]);
        let mixed = EdgeArray::new(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(q_map(&mixed).unwrap().values(), &[1.0]);
        let scalar = EdgeArray::new(2, 2, 0, vec![0.25]).unwrap();
        assert_eq!(q_map_power(&scalar, 0).unwrap(), 0.25);
        assert!(q_map(&scalar).is_err());
        assert!(q_map_power(&mixed, 2).is_err());
        assert!(EdgeArray::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn q_map_contracts_blocks_in_order() {
        // b=2, s=3: h's children are six consecutive entries, branch-major
        let values: Vec<f64> = (0..36).map(|k| k as f64 / 100.0).collect();
        let arr = EdgeArray::new(2, 3, 2, values.clone()).unwrap();
        let out = q_map(&arr).unwrap();
        for h in 0..6 {
            let block = &values[6 * h..6 * h + 6];
            let expected = ((1.0 + block[0]) * (1.0 + block[1]) * (1.0 + block[2]) - 1.0
                + (1.0 + block[3]) * (1.0 + block[4]) * (1.0 + block[5])
                - 1.0)
                / 2.0;
            assert!((out.values()[h] - expected).abs() < 1e-15);
        }
    }
}
