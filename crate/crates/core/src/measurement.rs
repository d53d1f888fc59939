//! The single-probe measurement scheme.
//!
//! The signal qudit is coupled to a probe prepared in
//! `|w> = cos(theta)|0> + gamma sin(theta) (1/sqrt d) sum_s |s>` by the
//! controlled shift `C_d |i>|s> = |i>|i+s mod d>`, and the probe is read out
//! in the computational basis. Outcome `k` acts on the signal through the
//! diagonal Kraus operator `A_k = <k|C_d|w>`, whose entries are `L` on index
//! `k` and `J` everywhere else.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::qlinalg::{ComplexMatrix, PureState};

/// Out-of-range angles closer than this to `[0, pi/2]` are clamped rather than rejected.
pub const ANGLE_SLACK: f64 = 1e-12;

/// Outcome probabilities below this are treated as zero.
pub const MIN_PROBABILITY: f64 = 1e-300;

/// Probe dimension and preparation angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    d: usize,
    theta: f64,
}

impl ProbeConfig {
    pub fn new(d: usize, theta: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid(format!("dimension must be at least 2, got {d}")));
        }
        Ok(Self {
            d,
            theta: validate_angle(theta)?,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Checks `theta` lies in `[0, pi/2]`, clamping rounding-level excursions.
pub fn validate_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() || theta < -ANGLE_SLACK || theta > FRAC_PI_2 + ANGLE_SLACK {
        return Err(Error::invalid(format!(
            "probe angle {theta} outside [0, pi/2]"
        )));
    }
    Ok(theta.clamp(0.0, FRAC_PI_2))
}

/// Normalization factor of the probe state.
///
/// Evaluated as `sqrt(d) sin / (sqrt(cos^2 + d sin^2) + cos)`, the
/// rationalized form of `(sqrt(1 + d tan^2) - 1) / (sqrt(d) tan)`. It takes
/// the limiting values 0 at `theta = 0` and 1 at `theta = pi/2` without
/// special cases.
pub fn gamma(config: &ProbeConfig) -> f64 {
    let d = config.d as f64;
    let (s, c) = config.theta.sin_cos();
    d.sqrt() * s / ((c * c + d * s * s).sqrt() + c)
}

/// Diagonal entries `(L, J)` of the Kraus operators.
pub fn diagonal_entries(config: &ProbeConfig) -> (f64, f64) {
    let (s, c) = config.theta.sin_cos();
    let j = gamma(config) * s / (config.d as f64).sqrt();
    (c + j, j)
}

/// Probe state `|w>_p`.
pub fn probe_state(config: &ProbeConfig) -> PureState {
    let (l, j) = diagonal_entries(config);
    let mut amps = vec![Complex64::new(j, 0.0); config.d];
    amps[0] = Complex64::new(l, 0.0);
    PureState::normalized(amps).expect("probe amplitudes are never all zero")
}

/// Controlled shift `C_d` on signal ⊗ probe, basis index `i * d + s`.
pub fn cd_gate(d: usize) -> Result<ComplexMatrix> {
    if d < 2 {
        return Err(Error::invalid(format!("C_d needs d >= 2, got {d}")));
    }
    let mut gate = ComplexMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for s in 0..d {
            gate[(i * d + (i + s) % d, i * d + s)] = Complex64::new(1.0, 0.0);
        }
    }
    Ok(gate)
}

/// Kraus operators of the probe measurement for one `(d, theta)`.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    config: ProbeConfig,
    kraus: Vec<ComplexMatrix>,
    l: f64,
    j: f64,
}

impl MeasurementModel {
    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn theta(&self) -> f64 {
        self.config.theta
    }

    pub fn kraus(&self) -> &[ComplexMatrix] {
        &self.kraus
    }

    /// Diagonal entry of `A_k` at index `k`.
    pub fn l(&self) -> f64 {
        self.l
    }

    /// Diagonal entry of `A_k` away from index `k`.
    pub fn j(&self) -> f64 {
        self.j
    }

    /// `(A_k)_{ii}` without touching the matrices.
    pub fn entry(&self, k: usize, i: usize) -> f64 {
        if k == i {
            self.l
        } else {
            self.j
        }
    }

    /// POVM element `Pi_k = A_k^dag A_k`.
    pub fn povm(&self, k: usize) -> ComplexMatrix {
        let a = &self.kraus[k];
        a.adjoint().matmul(a).expect("square Kraus operators")
    }

    /// Estimate inferred from outcome `k`: the basis state `|k>`.
    pub fn estimate(&self, k: usize) -> PureState {
        PureState::basis(self.d(), k).expect("outcome index below d")
    }

    pub fn estimates(&self) -> Vec<PureState> {
        (0..self.d()).map(|k| self.estimate(k)).collect()
    }

    /// `sum_k A_k^dag A_k`.
    pub fn completeness(&self) -> ComplexMatrix {
        let d = self.d();
        (0..d).fold(ComplexMatrix::zeros(d, d), |acc, k| {
            acc.add(&self.povm(k)).expect("same shape")
        })
    }

    /// Outcome probabilities `p_k = <psi|A_k^dag A_k|psi>`.
    pub fn probabilities(&self, psi: &PureState) -> Result<Vec<f64>> {
        self.check_dim(psi)?;
        Ok((0..self.d())
            .map(|k| {
                psi.amplitudes()
                    .iter()
                    .enumerate()
                    .map(|(i, a)| self.entry(k, i).powi(2) * a.norm_sqr())
                    .sum()
            })
            .collect())
    }

    fn check_dim(&self, psi: &PureState) -> Result<()> {
        if psi.dim() != self.d() {
            return Err(Error::mismatch(format!(
                "state of dimension {} measured with d = {} model",
                psi.dim(),
                self.d()
            )));
        }
        Ok(())
    }
}

/// Kraus operators from the closed-form diagonal entries.
pub fn build_model(config: ProbeConfig) -> MeasurementModel {
    let (l, j) = diagonal_entries(&config);
    let kraus = (0..config.d)
        .map(|k| {
            let diag: Vec<f64> = (0..config.d).map(|i| if i == k { l } else { j }).collect();
            ComplexMatrix::from_real_diagonal(&diag)
        })
        .collect();
    MeasurementModel { config, kraus, l, j }
}

/// Kraus operators computed numerically as `(I ⊗ <k|) C_d (I ⊗ |w>)`.
///
/// Independent of [`build_model`]; used as its oracle.
pub fn build_model_from_gate(config: ProbeConfig) -> Result<MeasurementModel> {
    let d = config.d;
    let gate = cd_gate(d)?;
    let eye = ComplexMatrix::identity(d);
    let omega = ComplexMatrix::column(probe_state(&config).amplitudes());
    let attach_probe = eye.kron(&omega);
    let coupled = gate.matmul(&attach_probe)?;
    let mut kraus = Vec::with_capacity(d);
    for k in 0..d {
        let bra_k = PureState::basis(d, k)?;
        let project = eye.kron(&ComplexMatrix::column(bra_k.amplitudes()).adjoint());
        kraus.push(project.matmul(&coupled)?);
    }
    let l = kraus[0][(0, 0)].re;
    let j = kraus[0][(1, 1)].re;
    Ok(MeasurementModel { config, kraus, l, j })
}

/// One stochastic measurement outcome.
#[derive(Debug, Clone)]
pub struct Sample {
    pub outcome: usize,
    pub state: PureState,
    pub probability: f64,
}

/// Measures `psi` once: draws `k` with probability `p_k` and returns the
/// normalized conditional state `A_k|psi> / sqrt(p_k)`.
pub fn apply_and_sample<R: Rng + ?Sized>(
    model: &MeasurementModel,
    psi: &PureState,
    rng: &mut R,
) -> Result<Sample> {
    let probs = model.probabilities(psi)?;
    let total: f64 = probs.iter().sum();
    if probs.iter().all(|&p| p < MIN_PROBABILITY) {
        return Err(Error::InvalidState(
            "every outcome has vanishing probability".into(),
        ));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut outcome = None;
    for (k, &p) in probs.iter().enumerate() {
        if p < MIN_PROBABILITY {
            continue;
        }
        acc += p;
        outcome = Some(k);
        if u < acc {
            break;
        }
    }
    let outcome = outcome.expect("at least one outcome has positive probability");
    let probability = probs[outcome];
    let amps: Vec<Complex64> = psi
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(i, a)| a * model.entry(outcome, i))
        .collect();
    Ok(Sample {
        outcome,
        state: PureState::normalized(amps)?,
        probability,
    })
}
