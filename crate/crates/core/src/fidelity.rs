//! Estimation and transmission fidelities.
//!
//! `F` measures how close the post-measurement signal stays to the input
//! (disturbance); `G` measures how close the inferred state is to the input
//! (information gain). Both are averaged over Haar-random pure inputs, either
//! in closed form, through the trace formulas valid for any complete Kraus
//! set, or by Monte Carlo sampling.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measurement::{self, MeasurementModel, ProbeConfig};
use crate::qlinalg::{haar_random_state_with, stream_rng, ComplexMatrix, PureState};

/// Default tolerance for bound saturation of exact points.
pub const SATURATION_TOLERANCE: f64 = 1e-9;

/// Tolerance on `sum_k A_k^dag A_k = I` accepted by the trace formulas.
pub const COMPLETENESS_TOLERANCE: f64 = 1e-9;

/// Samples per RNG stream in Monte Carlo runs. Fixed so results do not
/// depend on the thread count.
const MC_CHUNK: usize = 1024;

/// How a fidelity point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    MonteCarlo,
    Enumeration,
}

/// Averaged fidelities `(G, F)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityPoint {
    /// Estimation fidelity.
    pub g: f64,
    /// Transmission fidelity.
    pub f: f64,
    pub method: Method,
    /// Standard error of `g`; zero for exact methods.
    pub stderr_g: f64,
    /// Standard error of `f`; zero for exact methods.
    pub stderr_f: f64,
}

impl FidelityPoint {
    pub fn exact(g: f64, f: f64, method: Method) -> Self {
        Self {
            g,
            f,
            method,
            stderr_g: 0.0,
            stderr_f: 0.0,
        }
    }
}

/// Estimate attached to an outcome: a pure state or a density matrix.
#[derive(Debug, Clone)]
pub enum Estimate {
    Pure(PureState),
    Mixed(ComplexMatrix),
}

impl Estimate {
    fn dim(&self) -> usize {
        match self {
            Estimate::Pure(s) => s.dim(),
            Estimate::Mixed(m) => m.rows(),
        }
    }

    /// `<phi|Pi|phi>` or `Tr[rho Pi]`.
    fn weight(&self, povm: &ComplexMatrix) -> Result<f64> {
        match self {
            Estimate::Pure(s) => Ok(s.expectation(povm)?.re),
            Estimate::Mixed(rho) => Ok(rho.matmul(povm)?.trace()?.re),
        }
    }
}

impl From<PureState> for Estimate {
    fn from(s: PureState) -> Self {
        Estimate::Pure(s)
    }
}

/// `F_psi = sum_k |<psi|A_k|psi>|^2` and `G_psi = sum_k p_k |<psi|k>|^2` for one input.
pub fn fidelity_per_state(model: &MeasurementModel, psi: &PureState) -> Result<(f64, f64)> {
    if psi.dim() != model.d() {
        return Err(Error::mismatch(format!(
            "state of dimension {} with d = {} model",
            psi.dim(),
            model.d()
        )));
    }
    let probs = model.probabilities(psi)?;
    let mut f = 0.0;
    let mut g = 0.0;
    for (k, a) in model.kraus().iter().enumerate() {
        f += psi.expectation(a)?.norm_sqr();
        g += probs[k] * psi.amplitudes()[k].norm_sqr();
    }
    Ok((f, g))
}

/// Closed-form fidelities of the probe scheme:
/// `F = [1 + (cos + gamma sqrt(d) sin)^2] / (d+1)`,
/// `G = [1 + (cos + gamma sin / sqrt(d))^2] / (d+1)`.
pub fn average_fidelity_analytic(model: &MeasurementModel) -> FidelityPoint {
    analytic_point(model.config())
}

/// [`average_fidelity_analytic`] without building the Kraus matrices.
pub fn analytic_point(config: &ProbeConfig) -> FidelityPoint {
    let d = config.d() as f64;
    let gamma = measurement::gamma(config);
    let (s, c) = config.theta().sin_cos();
    let f = (1.0 + (c + gamma * d.sqrt() * s).powi(2)) / (d + 1.0);
    let g = (1.0 + (c + gamma / d.sqrt() * s).powi(2)) / (d + 1.0);
    FidelityPoint::exact(g, f, Method::Analytic)
}

/// Haar-averaged fidelities of an arbitrary complete Kraus set:
/// `F = [d + sum_k |Tr A_k|^2] / (d(d+1))`,
/// `G = [d + sum_k w_k] / (d(d+1))` with `w_k = <phi_k|Pi_k|phi_k>` or
/// `Tr[rho_k Pi_k]`.
pub fn average_fidelity_banaszek(
    kraus: &[ComplexMatrix],
    estimates: &[Estimate],
) -> Result<FidelityPoint> {
    let (f, g) = banaszek_sums(kraus, estimates)?;
    Ok(FidelityPoint::exact(g, f, Method::Analytic))
}

pub(crate) fn banaszek_sums(kraus: &[ComplexMatrix], estimates: &[Estimate]) -> Result<(f64, f64)> {
    let first = kraus
        .first()
        .ok_or_else(|| Error::invalid("empty Kraus set"))?;
    let d = first.rows();
    if estimates.len() != kraus.len() {
        return Err(Error::mismatch(format!(
            "{} Kraus operators but {} estimates",
            kraus.len(),
            estimates.len()
        )));
    }
    let mut completeness = ComplexMatrix::zeros(d, d);
    let mut trace_sum = 0.0;
    let mut weight_sum = 0.0;
    for (a, est) in kraus.iter().zip(estimates) {
        if a.rows() != d || !a.is_square() || est.dim() != d {
            return Err(Error::mismatch(format!(
                "Kraus operators and estimates must all be {d}-dimensional"
            )));
        }
        let povm = a.adjoint().matmul(a)?;
        completeness = completeness.add(&povm)?;
        trace_sum += a.trace()?.norm_sqr();
        weight_sum += est.weight(&povm)?;
    }
    let defect = completeness.max_abs_diff(&ComplexMatrix::identity(d));
    if defect > COMPLETENESS_TOLERANCE {
        return Err(Error::invalid(format!(
            "Kraus set is not complete: max |sum A^dag A - I| = {defect:e}"
        )));
    }
    let norm = (d * (d + 1)) as f64;
    Ok(((d as f64 + trace_sum) / norm, (d as f64 + weight_sum) / norm))
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum_f: f64,
    sum_f2: f64,
    sum_g: f64,
    sum_g2: f64,
}

impl Moments {
    fn push(&mut self, f: f64, g: f64) {
        self.n += 1;
        self.sum_f += f;
        self.sum_f2 += f * f;
        self.sum_g += g;
        self.sum_g2 += g * g;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments {
            n: self.n + o.n,
            sum_f: self.sum_f + o.sum_f,
            sum_f2: self.sum_f2 + o.sum_f2,
            sum_g: self.sum_g + o.sum_g,
            sum_g2: self.sum_g2 + o.sum_g2,
        }
    }
}

/// Sample mean and standard error of the mean.
pub(crate) fn mean_and_stderr(n: usize, sum: f64, sum_sq: f64) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Draws `n` samples of `(f, g)` in fixed-size chunks,
/// each chunk with its own RNG stream, and reduces in chunk order.
pub(crate) fn chunked_moments<S>(n: usize, seed: u64, sample: S) -> Result<(usize, [f64; 4])>
where
    S: Fn(&mut crate::qlinalg::SeededRng) -> Result<(f64, f64)> + Sync,
{
    let chunks = n.div_ceil(MC_CHUNK);
    let partial: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut m = Moments::default();
            for _ in 0..len {
                let (f, g) = sample(&mut rng)?;
                m.push(f, g);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::default();
    for m in partial {
        total = total.merge(m?);
    }
    Ok((total.n, [total.sum_f, total.sum_f2, total.sum_g, total.sum_g2]))
}

/// Monte Carlo average of [`fidelity_per_state`] over Haar-random inputs.
///
/// Bit-reproducible for a given seed regardless of the rayon pool size.
pub fn average_fidelity_monte_carlo(
    model: &MeasurementModel,
    n_samples: usize,
    rng_seed: u64,
) -> Result<FidelityPoint> {
    if n_samples == 0 {
        return Err(Error::invalid("Monte Carlo needs at least one sample"));
    }
    let d = model.d();
    let (n, [sf, sf2, sg, sg2]) = chunked_moments(n_samples, rng_seed, |rng| {
        let psi = haar_random_state_with(d, rng)?;
        fidelity_per_state(model, &psi)
    })?;
    let (f, stderr_f) = mean_and_stderr(n, sf, sf2);
    let (g, stderr_g) = mean_and_stderr(n, sg, sg2);
    Ok(FidelityPoint {
        g,
        f,
        method: Method::MonteCarlo,
        stderr_g,
        stderr_f,
    })
}

/// Evaluation of the information/disturbance inequality at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; negative means the point violates the bound.
    pub slack: f64,
    pub saturated: bool,
}

/// Reference point `(F0, G0)` around which the bound is centered.
pub fn bound_center(d: usize) -> (f64, f64) {
    let d = d as f64;
    ((d + 2.0) / (2.0 * (d + 1.0)), 3.0 / (2.0 * (d + 1.0)))
}

/// Evaluates
/// `(F-F0)^2 + d^2 (G-G0)^2 + 2(d-2)(F-F0)(G-G0) <= (d-1)/(d+1)^2`.
pub fn bound_check(point: &FidelityPoint, d: usize, tolerance: f64) -> BoundReport {
    let (f0, g0) = bound_center(d);
    let df = d as f64;
    let x = point.f - f0;
    let y = point.g - g0;
    let lhs = x * x + df * df * y * y + 2.0 * (df - 2.0) * x * y;
    let rhs = (df - 1.0) / ((df + 1.0) * (df + 1.0));
    let slack = rhs - lhs;
    BoundReport {
        lhs,
        rhs,
        slack,
        saturated: slack.abs() <= tolerance,
    }
}

/// `n` angles evenly spaced over `[0, pi/2]`, endpoints exact.
pub fn theta_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    FRAC_PI_2
                } else {
                    FRAC_PI_2 * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// A point on the single-user optimal curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub point: FidelityPoint,
}

/// Analytic `(G, F)` over `n_points` evenly spaced probe angles.
pub fn tradeoff_curve(d: usize, n_points: usize) -> Result<Vec<CurvePoint>> {
    if n_points < 2 {
        return Err(Error::invalid("trade-off curve needs at least 2 points"));
    }
    theta_grid(n_points)
        .into_iter()
        .map(|theta| {
            let cfg = ProbeConfig::new(d, theta)?;
            Ok(CurvePoint {
                theta,
                point: analytic_point(&cfg),
            })
        })
        .collect()
}
