//! N-user transmission lines.
//!
//! Each user measures the signal left by the previous one with the
//! single-probe scheme at its own angle. The overall operation for an outcome
//! record `(k_1, ..., k_N)` is the product `A_{k_N} ... A_{k_1}`; since every
//! factor is diagonal the product depends only on the outcome counts
//! `(n_0, ..., n_{d-1})` when all users share one angle.
//!
//! Two evaluation routes are provided for every averaged quantity: exact
//! enumeration over all `d^N` outcome records, fed through the generic trace
//! formulas, and aggregation over count vectors with multinomial weights.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fidelity::{self, analytic_point, mean_and_stderr, Estimate, FidelityPoint, Method};
use crate::measurement::{apply_and_sample, build_model, validate_angle, MeasurementModel, ProbeConfig};
use crate::qlinalg::{haar_random_state_with, stream_rng, ComplexMatrix, PureState};

/// Upper bound on the number of terms an exact sum may visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget(pub u64);

impl Default for Budget {
    fn default() -> Self {
        Budget(1_000_000)
    }
}

impl Budget {
    fn check(self, needed: u128, hint: &'static str) -> Result<()> {
        if needed > self.0 as u128 {
            return Err(Error::BudgetExceeded {
                needed,
                budget: self.0,
                hint,
            });
        }
        Ok(())
    }
}

const ENUMERATION_HINT: &str = "use the closed-form path for homogeneous chains";
const COMPOSITION_HINT: &str = "reduce the number of users or the dimension";

/// Probe angles of the users along the line, first user first.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    d: usize,
    thetas: Vec<f64>,
    models: Vec<MeasurementModel>,
}

impl ChainConfig {
    pub fn new(d: usize, thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::invalid("a chain needs at least one user"));
        }
        let models = thetas
            .iter()
            .map(|&t| ProbeConfig::new(d, t).map(build_model))
            .collect::<Result<Vec<_>>>()?;
        let thetas = models.iter().map(|m| m.theta()).collect();
        Ok(Self { d, thetas, models })
    }

    /// `n_users` users sharing one angle.
    pub fn homogeneous(d: usize, theta: f64, n_users: usize) -> Result<Self> {
        Self::new(d, vec![theta; n_users])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn n_users(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.thetas.windows(2).all(|w| w[0] == w[1])
    }

    pub fn models(&self) -> &[MeasurementModel] {
        &self.models
    }

    /// Number of outcome records, `d^N`, saturating.
    pub fn sequence_count(&self) -> u128 {
        (self.d as u128)
            .checked_pow(self.n_users() as u32)
            .unwrap_or(u128::MAX)
    }

    fn check_outcomes(&self, outcomes: &[usize]) -> Result<()> {
        if outcomes.len() != self.n_users() {
            return Err(Error::invalid(format!(
                "{} outcomes for a chain of {} users",
                outcomes.len(),
                self.n_users()
            )));
        }
        if let Some(&k) = outcomes.iter().find(|&&k| k >= self.d) {
            return Err(Error::invalid(format!(
                "outcome {k} out of range for d = {}",
                self.d
            )));
        }
        Ok(())
    }

    /// Diagonal of `A_{k_N} ... A_{k_1}` from the `(L, J)` entries.
    fn product_diagonal(&self, outcomes: &[usize]) -> Vec<f64> {
        (0..self.d)
            .map(|i| {
                self.models
                    .iter()
                    .zip(outcomes)
                    .map(|(m, &k)| m.entry(k, i))
                    .product()
            })
            .collect()
    }
}

/// One outcome record of a chain applied to a fixed input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeSequence {
    /// `outcomes[u]` is the result of user `u + 1`.
    pub outcomes: Vec<usize>,
    pub probability: f64,
    /// `multiplicities[j]` counts how often outcome `j` occurs.
    pub multiplicities: Vec<usize>,
}

/// Counts of each outcome value in a record.
pub fn multiplicities(d: usize, outcomes: &[usize]) -> Vec<usize> {
    let mut n = vec![0; d];
    for &k in outcomes {
        n[k] += 1;
    }
    n
}

/// Visits every record in `[0, d)^len`, first user varying slowest.
fn for_each_sequence<F: FnMut(&[usize]) -> Result<()>>(d: usize, len: usize, mut f: F) -> Result<()> {
    let mut seq = vec![0usize; len];
    loop {
        f(&seq)?;
        let mut pos = len;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < d {
                break;
            }
            seq[pos] = 0;
        }
    }
}

/// Product Kraus operator `A_{k_N} ... A_{k_1}` for one record.
pub fn chain_kraus(config: &ChainConfig, outcomes: &[usize]) -> Result<ComplexMatrix> {
    config.check_outcomes(outcomes)?;
    let mut product = ComplexMatrix::identity(config.d);
    for (model, &k) in config.models.iter().zip(outcomes) {
        product = model.kraus()[k].matmul(&product)?;
    }
    Ok(product)
}

/// Every outcome record with its probability for input `psi`.
pub fn enumerate_sequences(
    config: &ChainConfig,
    psi: &PureState,
    budget: Budget,
) -> Result<Vec<OutcomeSequence>> {
    check_state(config, psi)?;
    budget.check(config.sequence_count(), ENUMERATION_HINT)?;
    let mut out = Vec::with_capacity(config.sequence_count() as usize);
    for_each_sequence(config.d, config.n_users(), |seq| {
        let diag = config.product_diagonal(seq);
        let probability = psi
            .amplitudes()
            .iter()
            .zip(&diag)
            .map(|(a, x)| x * x * a.norm_sqr())
            .sum();
        out.push(OutcomeSequence {
            outcomes: seq.to_vec(),
            probability,
            multiplicities: multiplicities(config.d, seq),
        });
        Ok(())
    })?;
    Ok(out)
}

fn check_state(config: &ChainConfig, psi: &PureState) -> Result<()> {
    if psi.dim() != config.d {
        return Err(Error::mismatch(format!(
            "state of dimension {} sent down a d = {} chain",
            psi.dim(),
            config.d
        )));
    }
    Ok(())
}

/// Outcome distribution of user `user_index` (1-based), marginalized over
/// every earlier user's result.
pub fn marginal_outcome_distribution(
    config: &ChainConfig,
    psi: &PureState,
    user_index: usize,
    budget: Budget,
) -> Result<Vec<f64>> {
    check_state(config, psi)?;
    if user_index == 0 || user_index > config.n_users() {
        return Err(Error::invalid(format!(
            "user index {user_index} outside 1..={}",
            config.n_users()
        )));
    }
    let d = config.d;
    let earlier = user_index - 1;
    budget.check(
        (d as u128).checked_pow(earlier as u32).unwrap_or(u128::MAX),
        ENUMERATION_HINT,
    )?;
    let prefix_models = &config.models[..earlier];
    let user = &config.models[earlier];
    let mut dist = vec![0.0; d];
    for_each_sequence(d, earlier, |seq| {
        let branch: Vec<_> = psi
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let amp: f64 = prefix_models.iter().zip(seq).map(|(m, &k)| m.entry(k, i)).product();
                a * amp
            })
            .collect();
        for (k, p) in dist.iter_mut().enumerate() {
            *p += branch
                .iter()
                .enumerate()
                .map(|(i, b)| user.entry(k, i).powi(2) * b.norm_sqr())
                .sum::<f64>();
        }
        Ok(())
    })?;
    Ok(dist)
}

/// Product Kraus operators of every record, in enumeration order.
fn all_products(config: &ChainConfig, budget: Budget) -> Result<Vec<(Vec<usize>, ComplexMatrix)>> {
    budget.check(config.sequence_count(), ENUMERATION_HINT)?;
    let mut out = Vec::with_capacity(config.sequence_count() as usize);
    for_each_sequence(config.d, config.n_users(), |seq| {
        out.push((seq.to_vec(), chain_kraus(config, seq)?));
        Ok(())
    })?;
    Ok(out)
}

/// `(G, F)` of a chain by exact enumeration, with the last user's outcome
/// `k_N -> |k_N>` as the inference rule.
pub fn chain_point_enumerated(config: &ChainConfig, budget: Budget) -> Result<FidelityPoint> {
    let products = all_products(config, budget)?;
    let estimates: Vec<Estimate> = products
        .iter()
        .map(|(seq, _)| PureState::basis(config.d, *seq.last().expect("N >= 1")).map(Estimate::Pure))
        .collect::<Result<_>>()?;
    let kraus: Vec<ComplexMatrix> = products.into_iter().map(|(_, a)| a).collect();
    let (f, g) = fidelity::banaszek_sums(&kraus, &estimates)?;
    Ok(FidelityPoint::exact(g, f, Method::Enumeration))
}

/// Transmission fidelity `F_N` of a chain by exact enumeration over all `d^N` records.
pub fn transmission_fidelity_chain(config: &ChainConfig, budget: Budget) -> Result<f64> {
    Ok(chain_point_enumerated(config, budget)?.f)
}

/// Number of count vectors `(n_0, ..., n_{d-1})` summing to `n`.
pub fn composition_count(d: usize, n: usize) -> u128 {
    // C(n + d - 1, d - 1)
    let mut c: u128 = 1;
    for i in 0..(d - 1) as u128 {
        c = match c.checked_mul(n as u128 + i + 1) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    c
}

fn for_each_composition<F: FnMut(&[usize])>(d: usize, n: usize, mut f: F) {
    fn rec<F: FnMut(&[usize])>(parts: &mut Vec<usize>, slot: usize, left: usize, f: &mut F) {
        if slot + 1 == parts.len() {
            parts[slot] = left;
            f(parts);
            return;
        }
        for take in (0..=left).rev() {
            parts[slot] = take;
            rec(parts, slot + 1, left - take, f);
        }
    }
    let mut parts = vec![0; d];
    rec(&mut parts, 0, n, &mut f);
}

/// `n! / (counts[0]! ... counts[d-1]!)` as a float.
pub fn multinomial(counts: &[usize]) -> f64 {
    let mut total = 0usize;
    let mut coeff = 1.0;
    for &c in counts {
        for i in 1..=c {
            total += 1;
            coeff = coeff * total as f64 / i as f64;
        }
    }
    coeff
}

fn check_users(n_users: usize) -> Result<()> {
    if n_users == 0 {
        return Err(Error::invalid("a chain needs at least one user"));
    }
    Ok(())
}

/// `F_N` of a homogeneous chain from the multinomial sum
/// `S = sum_n N!/(prod n_j!) |sum_i J^{N-n_i} L^{n_i}|^2`, `F_N = (d + S)/(d(d+1))`.
pub fn transmission_fidelity_closed_form(
    d: usize,
    theta: f64,
    n_users: usize,
    budget: Budget,
) -> Result<f64> {
    check_users(n_users)?;
    let model = build_model(ProbeConfig::new(d, theta)?);
    budget.check(composition_count(d, n_users), COMPOSITION_HINT)?;
    let (l, j) = (model.l(), model.j());
    let n = n_users as i32;
    let mut sum = 0.0;
    for_each_composition(d, n_users, |counts| {
        let tr: f64 = counts
            .iter()
            .map(|&c| j.powi(n - c as i32) * l.powi(c as i32))
            .sum();
        sum += multinomial(counts) * tr * tr;
    });
    let df = d as f64;
    Ok((df + sum) / (df * (df + 1.0)))
}

/// Known low-dimensional reductions of `F_N`: `(2 + sin^{2N})/3` for qubits
/// and `(1 + sin^{2N})/2` for qutrits.
pub fn transmission_fidelity_low_dim(d: usize, theta: f64, n_users: usize) -> Option<f64> {
    let s = theta.sin().powi(2 * n_users as i32);
    match d {
        2 => Some((2.0 + s) / 3.0),
        3 => Some((1.0 + s) / 2.0),
        _ => None,
    }
}

/// Estimation fidelity with the last user's outcome as the estimate. It does
/// not depend on the number of users, only on the last angle.
pub fn estimation_fidelity_single_measure(d: usize, theta_last: f64) -> Result<f64> {
    Ok(analytic_point(&ProbeConfig::new(d, theta_last)?).g)
}

/// [`estimation_fidelity_single_measure`] recomputed by enumerating every record.
pub fn estimation_fidelity_single_measure_enumerated(config: &ChainConfig, budget: Budget) -> Result<f64> {
    Ok(chain_point_enumerated(config, budget)?.g)
}

/// Frequency estimate `sum_j (n_j/N)|j><j|` for one record.
pub fn collective_estimate(d: usize, outcomes: &[usize]) -> ComplexMatrix {
    let n = outcomes.len() as f64;
    let diag: Vec<f64> = multiplicities(d, outcomes)
        .into_iter()
        .map(|c| c as f64 / n)
        .collect();
    ComplexMatrix::from_real_diagonal(&diag)
}

/// Estimation fidelity of the collective rule, by enumeration over every record
/// of an arbitrary chain.
pub fn collective_fidelity_enumerated(config: &ChainConfig, budget: Budget) -> Result<f64> {
    let products = all_products(config, budget)?;
    let estimates: Vec<Estimate> = products
        .iter()
        .map(|(seq, _)| Estimate::Mixed(collective_estimate(config.d, seq)))
        .collect();
    let kraus: Vec<ComplexMatrix> = products.into_iter().map(|(_, a)| a).collect();
    Ok(fidelity::banaszek_sums(&kraus, &estimates)?.1)
}

/// Estimation fidelity when the last user infers from the whole record via
/// the frequency estimate, for a homogeneous chain.
pub fn estimation_fidelity_collective(d: usize, theta: f64, n_users: usize, budget: Budget) -> Result<f64> {
    check_users(n_users)?;
    collective_fidelity_enumerated(&ChainConfig::homogeneous(d, theta, n_users)?, budget)
}

/// [`estimation_fidelity_collective`] aggregated over count vectors:
/// `sum_n N!/(prod n_j!) sum_j (n_j/N) L^{2 n_j} J^{2(N - n_j)}`.
pub fn estimation_fidelity_collective_by_counts(
    d: usize,
    theta: f64,
    n_users: usize,
    budget: Budget,
) -> Result<f64> {
    check_users(n_users)?;
    let model = build_model(ProbeConfig::new(d, theta)?);
    budget.check(composition_count(d, n_users), COMPOSITION_HINT)?;
    let (l, j) = (model.l(), model.j());
    let n = n_users as i32;
    let mut sum = 0.0;
    for_each_composition(d, n_users, |counts| {
        let w: f64 = counts
            .iter()
            .map(|&c| c as f64 / n as f64 * l.powi(2 * c as i32) * j.powi(2 * (n - c as i32)))
            .sum();
        sum += multinomial(counts) * w;
    });
    let df = d as f64;
    Ok((df + sum) / (df * (df + 1.0)))
}

/// `(G, F)` after two users with angles `theta_a` then `theta_b`. `G` is the
/// single-user value at `theta_b`; `F` comes from the `d^2` products
/// `A_{k_B} A_{k_A}`.
pub fn two_user_fidelities(d: usize, theta_a: f64, theta_b: f64) -> Result<FidelityPoint> {
    let chain = ChainConfig::new(d, vec![theta_a, theta_b])?;
    let f = transmission_fidelity_chain(&chain, Budget::default())?;
    let g = estimation_fidelity_single_measure(d, theta_b)?;
    Ok(FidelityPoint::exact(g, f, Method::Enumeration))
}

/// Qubit two-user transmission fidelity in closed form.
///
/// Writing `L = cos a`, `J = sin a` (allowed since `L^2 + J^2 = 1`) turns the
/// trace sum into `2 + 2 sin(2a_A) sin(2a_B)`, and `sin(2a) = 2LJ = sin^2(theta)`,
/// so `F_2 = (2 + sin^2(theta_A) sin^2(theta_B)) / 3`, equivalently
/// `[18 - 2cos 2A - 2cos 2B + cos 2(A-B) + cos 2(A+B)] / 24`.
pub fn two_user_qubit_closed_form(theta_a: f64, theta_b: f64) -> Result<f64> {
    let a = validate_angle(theta_a)?;
    let b = validate_angle(theta_b)?;
    Ok((2.0 + a.sin().powi(2) * b.sin().powi(2)) / 3.0)
}

/// One cell of the two-user sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoUserPoint {
    pub theta_a: f64,
    pub theta_b: f64,
    pub point: FidelityPoint,
}

/// `(G, F)` over a `grid x grid` sweep of `(theta_a, theta_b)` on `[0, pi/2]^2`,
/// `theta_a` varying slowest.
pub fn two_user_region(d: usize, grid: usize) -> Result<Vec<TwoUserPoint>> {
    if grid < 2 {
        return Err(Error::invalid("two-user grid needs at least 2 points per axis"));
    }
    let thetas = fidelity::theta_grid(grid);
    two_user_sweep(d, &thetas, &thetas)
}

/// `(G, F)` for every pair in `thetas_a x thetas_b`, `theta_a` varying slowest.
pub fn two_user_sweep(d: usize, thetas_a: &[f64], thetas_b: &[f64]) -> Result<Vec<TwoUserPoint>> {
    let cells: Vec<(f64, f64)> = thetas_a
        .iter()
        .flat_map(|&a| thetas_b.iter().map(move |&b| (a, b)))
        .collect();
    cells
        .into_par_iter()
        .map(|(theta_a, theta_b)| {
            Ok(TwoUserPoint {
                theta_a,
                theta_b,
                point: two_user_fidelities(d, theta_a, theta_b)?,
            })
        })
        .collect()
}

/// Empirical statistics of simulated transmission lines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub n_signals: usize,
    /// Mean overlap of the final conditional state with the input.
    pub f_mean: f64,
    pub f_stderr: f64,
    /// Mean overlap of the last user's basis estimate with the input.
    pub g_mean: f64,
    pub g_stderr: f64,
    /// `outcome_counts[u][k]`: how often user `u + 1` saw outcome `k`.
    pub outcome_counts: Vec<Vec<u64>>,
}

const TRAJECTORY_CHUNK: usize = 512;

/// Sends `n_signals` Haar-random inputs down the chain, sampling each user's
/// outcome in turn. Signal `i` draws from its own RNG stream `i`, so the
/// statistics are reproducible for a seed independent of threading.
pub fn simulate_chain_trajectories(
    config: &ChainConfig,
    n_signals: usize,
    rng_seed: u64,
) -> Result<TrajectoryStats> {
    if n_signals == 0 {
        return Err(Error::invalid("simulation needs at least one signal"));
    }
    let d = config.d;
    let users = config.n_users();
    struct Partial {
        sums: [f64; 4],
        counts: Vec<Vec<u64>>,
    }
    let chunks = n_signals.div_ceil(TRAJECTORY_CHUNK);
    let partials: Vec<Result<Partial>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut p = Partial {
                sums: [0.0; 4],
                counts: vec![vec![0; d]; users],
            };
            let start = c * TRAJECTORY_CHUNK;
            for i in start..(start + TRAJECTORY_CHUNK).min(n_signals) {
                let mut rng = stream_rng(rng_seed, i as u64);
                let psi = haar_random_state_with(d, &mut rng)?;
                let mut state = psi.clone();
                let mut last = 0;
                for (u, model) in config.models.iter().enumerate() {
                    let s = apply_and_sample(model, &state, &mut rng)?;
                    p.counts[u][s.outcome] += 1;
                    last = s.outcome;
                    state = s.state;
                }
                let f = psi.overlap(&state)?;
                let g = psi.amplitudes()[last].norm_sqr();
                p.sums[0] += f;
                p.sums[1] += f * f;
                p.sums[2] += g;
                p.sums[3] += g * g;
            }
            Ok(p)
        })
        .collect();
    let mut sums = [0.0; 4];
    let mut counts = vec![vec![0u64; d]; users];
    for p in partials {
        let p = p?;
        for (s, x) in sums.iter_mut().zip(p.sums) {
            *s += x;
        }
        for (row, prow) in counts.iter_mut().zip(p.counts) {
            for (c, x) in row.iter_mut().zip(prow) {
                *c += x;
            }
        }
    }
    let (f_mean, f_stderr) = mean_and_stderr(n_signals, sums[0], sums[1]);
    let (g_mean, g_stderr) = mean_and_stderr(n_signals, sums[2], sums[3]);
    Ok(TrajectoryStats {
        n_signals,
        f_mean,
        f_stderr,
        g_mean,
        g_stderr,
        outcome_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::{bound_check, theta_grid};
    use crate::qlinalg::haar_random_state;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    #[test]
    fn single_user_chain_is_the_model() {
        let chain = ChainConfig::homogeneous(3, 0.4, 1).unwrap();
        for k in 0..3 {
            let a = chain_kraus(&chain, &[k]).unwrap();
            assert_eq!(a, chain.models()[0].kraus()[k]);
        }
    }

    #[test]
    fn two_user_products_match_listed_matrices() {
        let (ta, tb) = (0.3, 1.1);
        let chain = ChainConfig::new(2, vec![ta, tb]).unwrap();
        let (la, ja) = (chain.models()[0].l(), chain.models()[0].j());
        let (lb, jb) = (chain.models()[1].l(), chain.models()[1].j());
        // outcomes are (k_A, k_B); product is A_{k_B} A_{k_A}
        let cases = [
            ([0, 0], [la * lb, ja * jb]),
            ([1, 0], [lb * ja, la * jb]),
            ([0, 1], [la * jb, lb * ja]),
            ([1, 1], [ja * jb, la * lb]),
        ];
        for (seq, diag) in cases {
            let a = chain_kraus(&chain, &seq).unwrap();
            let expected = ComplexMatrix::from_real_diagonal(&diag);
            assert!(a.max_abs_diff(&expected) < 1e-15, "{seq:?}");
        }
    }

    #[test]
    fn homogeneous_mixed_outcome_product() {
        let theta = 0.8;
        let chain = ChainConfig::homogeneous(2, theta, 2).unwrap();
        let m = &chain.models()[0];
        let a = chain_kraus(&chain, &[0, 1]).unwrap();
        let lj = m.l() * m.j();
        assert!((a[(0, 0)].re - lj).abs() < 1e-15 && (a[(1, 1)].re - lj).abs() < 1e-15);
    }

    #[test]
    fn chain_kraus_rejects_bad_records() {
        let chain = ChainConfig::homogeneous(2, 0.4, 2).unwrap();
        assert!(chain_kraus(&chain, &[0]).is_err());
        assert!(chain_kraus(&chain, &[0, 2]).is_err());
        assert!(ChainConfig::new(2, vec![]).is_err());
        assert!(ChainConfig::new(2, vec![0.1, 2.0]).is_err());
    }

    #[test]
    fn product_set_is_complete() {
        for n in 1..=5 {
            let chain = ChainConfig::new(2, (0..n).map(|u| 0.2 + 0.25 * u as f64).collect()).unwrap();
            let mut acc = ComplexMatrix::zeros(2, 2);
            for_each_sequence(2, n, |seq| {
                let a = chain_kraus(&chain, seq)?;
                acc = acc.add(&a.adjoint().matmul(&a)?)?;
                Ok(())
            })
            .unwrap();
            assert!(acc.max_abs_diff(&ComplexMatrix::identity(2)) <= 1e-10);
        }
        let chain = ChainConfig::homogeneous(3, 0.9, 4).unwrap();
        let psi = haar_random_state(3, 8).unwrap();
        let seqs = enumerate_sequences(&chain, &psi, Budget::default()).unwrap();
        assert_eq!(seqs.len(), 81);
        let total: f64 = seqs.iter().map(|s| s.probability).sum();
        assert!((total - 1.0).abs() <= 1e-10);
        for s in &seqs {
            assert_eq!(s.multiplicities.iter().sum::<usize>(), 4);
            assert!((0.0..=1.0).contains(&s.probability));
        }
    }

    #[test]
    fn enumeration_respects_budget() {
        let chain = ChainConfig::homogeneous(2, 0.4, 12).unwrap();
        let err = transmission_fidelity_chain(&chain, Budget(1000)).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { needed: 4096, budget: 1000, .. }));
        assert!(err.to_string().contains("closed-form"));
        assert!(transmission_fidelity_closed_form(2, 0.4, 12, Budget(1000)).is_ok());
        assert!(transmission_fidelity_closed_form(8, 0.4, 30, Budget(1000)).is_err());
    }

    #[test]
    fn marginals_do_not_depend_on_position() {
        let chain = ChainConfig::homogeneous(2, 0.5, 3).unwrap();
        let psi = haar_random_state(2, 21).unwrap();
        let first = marginal_outcome_distribution(&chain, &psi, 1, Budget::default()).unwrap();
        let third = marginal_outcome_distribution(&chain, &psi, 3, Budget::default()).unwrap();
        let single = chain.models()[0].probabilities(&psi).unwrap();
        for k in 0..2 {
            assert!((first[k] - third[k]).abs() <= 1e-12);
            assert!((first[k] - single[k]).abs() <= 1e-12);
        }
        assert!(marginal_outcome_distribution(&chain, &psi, 0, Budget::default()).is_err());
        assert!(marginal_outcome_distribution(&chain, &psi, 4, Budget::default()).is_err());
    }

    #[test]
    fn blind_chain_marginals_are_uniform() {
        let chain = ChainConfig::homogeneous(4, FRAC_PI_2, 3).unwrap();
        let psi = haar_random_state(4, 2).unwrap();
        for u in 1..=3 {
            for p in marginal_outcome_distribution(&chain, &psi, u, Budget::default()).unwrap() {
                assert!((p - 0.25).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn heterogeneous_second_marginal_by_brute_force() {
        let (ta, tb) = (0.35, 1.05);
        let chain = ChainConfig::new(3, vec![ta, tb]).unwrap();
        let psi = haar_random_state(3, 4).unwrap();
        // brute force: sum over k1 of |A_{k2} A_{k1} psi|^2 with full matrices
        let mut brute = vec![0.0; 3];
        for k1 in 0..3 {
            for (k2, b) in brute.iter_mut().enumerate() {
                let a = chain_kraus(&chain, &[k1, k2]).unwrap();
                let v = a.apply(psi.amplitudes()).unwrap();
                *b += v.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        let marginal = marginal_outcome_distribution(&chain, &psi, 2, Budget::default()).unwrap();
        let single = build_model(ProbeConfig::new(3, tb).unwrap()).probabilities(&psi).unwrap();
        for k in 0..3 {
            assert!((marginal[k] - brute[k]).abs() <= 1e-12);
            assert!((marginal[k] - single[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_user_chain_reduces_to_analytic() {
        for d in 2..=5 {
            let theta = 0.77;
            let f = transmission_fidelity_chain(&ChainConfig::homogeneous(d, theta, 1).unwrap(), Budget::default())
                .unwrap();
            let a = analytic_point(&ProbeConfig::new(d, theta).unwrap());
            assert!((f - a.f).abs() <= 1e-12);
            let cf = transmission_fidelity_closed_form(d, theta, 1, Budget::default()).unwrap();
            assert!((cf - a.f).abs() <= 1e-12);
        }
    }

    #[test]
    fn low_dimensional_reductions() {
        for theta in theta_grid(10) {
            let f = transmission_fidelity_chain(&ChainConfig::homogeneous(2, theta, 3).unwrap(), Budget::default())
                .unwrap();
            assert!((f - (2.0 + theta.sin().powi(6)) / 3.0).abs() <= 1e-10);
            let f = transmission_fidelity_chain(&ChainConfig::homogeneous(3, theta, 2).unwrap(), Budget::default())
                .unwrap();
            assert!((f - (1.0 + theta.sin().powi(4)) / 2.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn closed_form_examples() {
        let f = transmission_fidelity_closed_form(2, FRAC_PI_3, 2, Budget::default()).unwrap();
        assert!((f - (2.0 + 9.0 / 16.0) / 3.0).abs() < 1e-12);
        assert!((f - 0.854167).abs() < 1e-6);
        let chain = ChainConfig::homogeneous(4, 0.8, 3).unwrap();
        let e = transmission_fidelity_chain(&chain, Budget::default()).unwrap();
        let c = transmission_fidelity_closed_form(4, 0.8, 3, Budget::default()).unwrap();
        assert!((e - c).abs() <= 1e-10);
        for d in 2..=6 {
            for n in [1, 2, 5, 10] {
                let f = transmission_fidelity_closed_form(d, FRAC_PI_2, n, Budget::default()).unwrap();
                assert!((f - 1.0).abs() < 1e-12, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn closed_form_matches_enumeration() {
        for d in 2..=4 {
            for n in 1..=5 {
                for theta in [0.0, 0.3, 0.9, 1.4, FRAC_PI_2] {
                    let chain = ChainConfig::homogeneous(d, theta, n).unwrap();
                    let e = transmission_fidelity_chain(&chain, Budget::default()).unwrap();
                    let c = transmission_fidelity_closed_form(d, theta, n, Budget::default()).unwrap();
                    assert!((e - c).abs() <= 1e-10, "d={d} n={n} theta={theta}");
                }
            }
        }
    }

    #[test]
    fn composition_helpers() {
        assert_eq!(composition_count(2, 5), 6);
        assert_eq!(composition_count(3, 2), 6);
        assert_eq!(composition_count(4, 10), 286);
        let mut seen = 0;
        let mut weight = 0.0;
        for_each_composition(3, 4, |c| {
            assert_eq!(c.iter().sum::<usize>(), 4);
            seen += 1;
            weight += multinomial(c);
        });
        assert_eq!(seen, composition_count(3, 4));
        assert_eq!(weight, 81.0);
        assert_eq!(multinomial(&[2, 1, 1]), 12.0);
    }

    #[test]
    fn degradation_with_users() {
        for d in 2..=4 {
            for theta in [0.2, 0.7, 1.2] {
                let mut prev = f64::INFINITY;
                for n in 1..=10 {
                    let f = transmission_fidelity_closed_form(d, theta, n, Budget::default()).unwrap();
                    assert!(f < prev, "d={d} theta={theta} n={n}");
                    prev = f;
                }
            }
        }
    }

    #[test]
    fn single_measure_estimation_examples() {
        assert!((estimation_fidelity_single_measure(2, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((estimation_fidelity_single_measure(3, FRAC_PI_2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let chain = ChainConfig::homogeneous(2, 0.9, 3).unwrap();
        let g = estimation_fidelity_single_measure_enumerated(&chain, Budget::default()).unwrap();
        assert!((g - estimation_fidelity_single_measure(2, 0.9).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn single_measure_depends_only_on_last_angle() {
        let chain = ChainConfig::new(3, vec![0.1, 1.3, 0.6]).unwrap();
        let g = estimation_fidelity_single_measure_enumerated(&chain, Budget::default()).unwrap();
        assert!((g - estimation_fidelity_single_measure(3, 0.6).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn collective_examples() {
        for d in 2..=4 {
            let g1 = estimation_fidelity_collective(d, 0.5, 1, Budget::default()).unwrap();
            assert!((g1 - estimation_fidelity_single_measure(d, 0.5).unwrap()).abs() <= 1e-12);
        }
        let g = estimation_fidelity_collective(2, 0.6, 3, Budget::default()).unwrap();
        assert!((g - estimation_fidelity_single_measure(2, 0.6).unwrap()).abs() <= 1e-10);
        let g = estimation_fidelity_collective(4, 1.0, 2, Budget::default()).unwrap();
        assert!((g - estimation_fidelity_single_measure(4, 1.0).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn collective_routes_agree() {
        for d in 2..=4 {
            for n in 1..=4 {
                for theta in [0.0, 0.45, 1.1, FRAC_PI_2] {
                    let e = estimation_fidelity_collective(d, theta, n, Budget::default()).unwrap();
                    let c = estimation_fidelity_collective_by_counts(d, theta, n, Budget::default()).unwrap();
                    assert!((e - c).abs() <= 1e-12, "d={d} n={n} theta={theta}");
                }
            }
        }
    }

    #[test]
    fn collective_estimate_is_frequency_state() {
        let rho = collective_estimate(3, &[0, 2, 2, 1]);
        assert_eq!(rho.diagonal().iter().map(|z| z.re).collect::<Vec<_>>(), vec![0.25, 0.25, 0.5]);
        assert!((rho.trace().unwrap().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_user_closed_form_checks() {
        for i in 0..20 {
            let ta = FRAC_PI_2 * i as f64 / 19.0;
            let f = two_user_fidelities(2, ta, FRAC_PI_2).unwrap().f;
            assert!((f - (5.0 - (2.0 * ta).cos()) / 6.0).abs() <= 1e-12);
            for tb in [0.0, 0.4, 1.0, FRAC_PI_2] {
                let e = two_user_fidelities(2, ta, tb).unwrap().f;
                let c = two_user_qubit_closed_form(ta, tb).unwrap();
                let trig = (18.0 - 2.0 * (2.0 * ta).cos() - 2.0 * (2.0 * tb).cos()
                    + (2.0 * (ta - tb)).cos()
                    + (2.0 * (ta + tb)).cos())
                    / 24.0;
                assert!((e - c).abs() <= 1e-12 && (c - trig).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_difference_term_is_not_the_two_user_fidelity() {
        // with both cosine terms in (A - B) the homogeneous case would not reduce to F_2
        let (ta, tb) = (PI / 9.0, 4.0 * PI / 9.0);
        let dup = (18.0 - 2.0 * (2.0 * ta).cos() - 2.0 * (2.0 * tb).cos() + 2.0 * (2.0 * (ta - tb)).cos()) / 24.0;
        let f = two_user_fidelities(2, ta, tb).unwrap().f;
        assert!((f - dup).abs() > 1e-3);
    }

    #[test]
    fn two_user_blind_first_user_is_optimal() {
        for d in 2..=4 {
            for tb in theta_grid(15) {
                let p = two_user_fidelities(d, FRAC_PI_2, tb).unwrap();
                let single = analytic_point(&ProbeConfig::new(d, tb).unwrap());
                assert!((p.f - single.f).abs() <= 1e-12 && (p.g - single.g).abs() <= 1e-12);
                assert!(bound_check(&p, d, 1e-9).saturated);
            }
        }
    }

    #[test]
    fn two_user_homogeneous_reduction() {
        for d in 2..=4 {
            for t in theta_grid(12) {
                let p = two_user_fidelities(d, t, t).unwrap();
                let c = transmission_fidelity_closed_form(d, t, 2, Budget::default()).unwrap();
                assert!((p.f - c).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn two_user_region_stays_inside_bound() {
        let region = two_user_region(2, 25).unwrap();
        assert_eq!(region.len(), 625);
        let mut min_f_at_max_g = f64::INFINITY;
        for cell in &region {
            assert!(bound_check(&cell.point, 2, 1e-9).slack >= -1e-9);
            if cell.theta_b == 0.0 {
                min_f_at_max_g = min_f_at_max_g.min(cell.point.f);
            }
        }
        assert!((min_f_at_max_g - 2.0 / 3.0).abs() < 1e-12);
        assert!(two_user_region(2, 1).is_err());
    }

    #[test]
    fn trajectories_match_closed_form() {
        let theta = 0.7;
        let chain = ChainConfig::homogeneous(2, theta, 2).unwrap();
        let stats = simulate_chain_trajectories(&chain, 100_000, 12345).unwrap();
        let f = (2.0 + theta.sin().powi(4)) / 3.0;
        let g = estimation_fidelity_single_measure(2, theta).unwrap();
        assert!((stats.f_mean - f).abs() <= 4.0 * stats.f_stderr, "{stats:?}");
        assert!((stats.g_mean - g).abs() <= 4.0 * stats.g_stderr, "{stats:?}");
        for row in &stats.outcome_counts {
            assert_eq!(row.iter().sum::<u64>(), 100_000);
        }
    }

    #[test]
    fn blind_trajectories_preserve_signal() {
        let chain = ChainConfig::homogeneous(3, FRAC_PI_2, 4).unwrap();
        let stats = simulate_chain_trajectories(&chain, 2000, 1).unwrap();
        assert!((stats.f_mean - 1.0).abs() < 1e-12);
        assert!(stats.f_stderr < 1e-12);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let chain = ChainConfig::new(3, vec![0.3, 0.9]).unwrap();
        let a = simulate_chain_trajectories(&chain, 3000, 77).unwrap();
        let b = simulate_chain_trajectories(&chain, 3000, 77).unwrap();
        assert_eq!(a, b);
        assert!(simulate_chain_trajectories(&chain, 0, 77).is_err());
    }

    proptest! {
        #[test]
        fn record_order_does_not_matter(
            d in 2usize..=4,
            thetas in proptest::collection::vec(0.0..=FRAC_PI_2, 1..=5),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let n = thetas.len();
            let chain = ChainConfig::new(d, thetas).unwrap();
            let mut rng = crate::qlinalg::seeded_rng(seed);
            let outcomes: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..d)).collect();
            let forward = chain_kraus(&chain, &outcomes).unwrap();
            // permuting users together with their outcomes leaves the product unchanged
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let permuted = ChainConfig::new(d, order.iter().map(|&u| chain.thetas()[u]).collect()).unwrap();
            let permuted_outcomes: Vec<usize> = order.iter().map(|&u| outcomes[u]).collect();
            let other = chain_kraus(&permuted, &permuted_outcomes).unwrap();
            prop_assert!(forward.max_abs_diff(&other) <= 1e-15);
            // homogeneous chains: any permutation of the record itself
            let homo = ChainConfig::homogeneous(d, chain.thetas()[0], n).unwrap();
            let mut shuffled = outcomes.clone();
            shuffled.shuffle(&mut rng);
            let x = chain_kraus(&homo, &outcomes).unwrap();
            let y = chain_kraus(&homo, &shuffled).unwrap();
            prop_assert!(x.max_abs_diff(&y) <= 1e-15);
        }
    }
}
