//! Self-check suite run by `infodist verify`.
//!
//! Every check reduces to a measured deviation compared against a threshold;
//! a check passes when `measured <= threshold`.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::fidelity::{
    analytic_point, average_fidelity_banaszek, average_fidelity_monte_carlo, bound_check, theta_grid,
    Estimate,
};
use crate::measurement::{build_model, build_model_from_gate, ProbeConfig};
use crate::qlinalg::{haar_random_state, ComplexMatrix};
use crate::sequential::{
    estimation_fidelity_collective, estimation_fidelity_single_measure,
    estimation_fidelity_single_measure_enumerated, marginal_outcome_distribution,
    simulate_chain_trajectories, transmission_fidelity_chain, transmission_fidelity_closed_form,
    transmission_fidelity_low_dim, two_user_fidelities, two_user_region, Budget, ChainConfig,
};

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Monte Carlo samples per `(d, theta)` point.
    pub samples: usize,
    /// Signals for the trajectory check.
    pub signals: usize,
    pub seed: u64,
    /// Replaces every threshold when set.
    pub tolerance: Option<f64>,
    pub budget: Budget,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 200_000,
            signals: 100_000,
            seed: 0,
            tolerance: None,
            budget: Budget::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

struct Suite<'a> {
    opts: &'a VerifyOptions,
    checks: Vec<Check>,
}

impl Suite<'_> {
    fn record(&mut self, name: &'static str, measured: f64, threshold: f64) {
        let threshold = self.opts.tolerance.unwrap_or(threshold);
        self.checks.push(Check {
            name,
            measured,
            threshold,
            passed: measured <= threshold,
        });
    }
}

fn max_of<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    // NaN propagates as infinity so it can never pass
    it.into_iter()
        .map(|x| if x.is_nan() { f64::INFINITY } else { x })
        .fold(0.0, f64::max)
}

/// Runs every check and returns them in a fixed order.
pub fn run_suite(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let mut s = Suite {
        opts,
        checks: Vec::new(),
    };
    let grid = theta_grid(50);
    let dims = 2..=8usize;

    let mut completeness = Vec::new();
    let mut gate = Vec::new();
    let mut entries = Vec::new();
    let mut routes = Vec::new();
    let mut slack = Vec::new();
    for d in dims.clone() {
        for &theta in &grid {
            let cfg = ProbeConfig::new(d, theta)?;
            let m = build_model(cfg);
            completeness.push(m.completeness().max_abs_diff(&ComplexMatrix::identity(d)));
            let g = build_model_from_gate(cfg)?;
            gate.push(max_of(m.kraus().iter().zip(g.kraus()).map(|(a, b)| a.max_abs_diff(b))));
            entries.push((m.l() - m.j() - theta.cos()).abs());
            entries.push((m.l().powi(2) + (d - 1) as f64 * m.j().powi(2) - 1.0).abs());
            let a = analytic_point(&cfg);
            let est: Vec<Estimate> = m.estimates().into_iter().map(Estimate::Pure).collect();
            let b = average_fidelity_banaszek(m.kraus(), &est)?;
            routes.push((a.f - b.f).abs().max((a.g - b.g).abs()));
            slack.push(bound_check(&a, d, 0.0).slack.abs());
        }
    }
    s.record("kraus completeness", max_of(completeness), 1e-12);
    s.record("gate construction = closed-form Kraus", max_of(gate), 1e-12);
    s.record("L - J = cos, L^2 + (d-1)J^2 = 1", max_of(entries), 1e-12);
    s.record("analytic = trace-formula fidelities", max_of(routes), 1e-12);
    s.record("single-user bound saturation max |slack|", max_of(slack), 1e-9);

    let mut extremes = Vec::new();
    for d in dims.clone() {
        let df = d as f64;
        let p0 = analytic_point(&ProbeConfig::new(d, 0.0)?);
        let p1 = analytic_point(&ProbeConfig::new(d, FRAC_PI_2)?);
        extremes.extend([
            (p0.f - 2.0 / (df + 1.0)).abs(),
            (p0.g - 2.0 / (df + 1.0)).abs(),
            (p1.f - 1.0).abs(),
            (p1.g - 1.0 / df).abs(),
        ]);
    }
    s.record("extreme points", max_of(extremes), 1e-12);

    let mut z = Vec::new();
    for d in 2..=4 {
        for theta in [0.2, 0.7, 1.2] {
            let m = build_model(ProbeConfig::new(d, theta)?);
            let mc = average_fidelity_monte_carlo(&m, opts.samples, opts.seed)?;
            let a = analytic_point(m.config());
            z.push(zscore(mc.f, a.f, mc.stderr_f));
            z.push(zscore(mc.g, a.g, mc.stderr_g));
        }
    }
    s.record("Monte Carlo vs analytic (stderr units)", max_of(z), 4.0);

    let mut closed = Vec::new();
    let mut low = Vec::new();
    let mut g_indep = Vec::new();
    let mut collective = Vec::new();
    for d in 2..=4 {
        for n in 1..=4 {
            for theta in theta_grid(10) {
                let chain = ChainConfig::homogeneous(d, theta, n)?;
                let e = transmission_fidelity_chain(&chain, opts.budget)?;
                closed.push((e - transmission_fidelity_closed_form(d, theta, n, opts.budget)?).abs());
                if let Some(v) = transmission_fidelity_low_dim(d, theta, n) {
                    low.push((e - v).abs());
                }
                let g = estimation_fidelity_single_measure(d, theta)?;
                g_indep.push((estimation_fidelity_single_measure_enumerated(&chain, opts.budget)? - g).abs());
                collective.push((estimation_fidelity_collective(d, theta, n, opts.budget)? - g).abs());
            }
        }
    }
    s.record("multinomial F_N = enumeration", max_of(closed), 1e-10);
    s.record("F_N qubit/qutrit reductions", max_of(low), 1e-10);
    s.record("single-measure G independent of N", max_of(g_indep), 1e-10);
    s.record("collective G = single-user G", max_of(collective), 1e-10);

    let mut marg = Vec::new();
    for d in 2..=4 {
        let chain = ChainConfig::homogeneous(d, 0.5, 4)?;
        let psi = haar_random_state(d, opts.seed.wrapping_add(d as u64))?;
        let first = marginal_outcome_distribution(&chain, &psi, 1, opts.budget)?;
        for u in 2..=4 {
            let later = marginal_outcome_distribution(&chain, &psi, u, opts.budget)?;
            marg.push(max_of(first.iter().zip(&later).map(|(a, b)| (a - b).abs())));
        }
    }
    s.record("user marginals independent of position", max_of(marg), 1e-12);

    let mut special = Vec::new();
    let mut blind_first = Vec::new();
    let mut homo = Vec::new();
    for ta in (0..20).map(|i| FRAC_PI_2 * i as f64 / 19.0) {
        let f = two_user_fidelities(2, ta, FRAC_PI_2)?.f;
        special.push((f - (5.0 - (2.0 * ta).cos()) / 6.0).abs());
        let p = two_user_fidelities(2, FRAC_PI_2, ta)?;
        blind_first.push(bound_check(&p, 2, 0.0).slack.abs());
        let h = two_user_fidelities(2, ta, ta)?.f;
        homo.push((h - transmission_fidelity_closed_form(2, ta, 2, opts.budget)?).abs());
    }
    s.record("F_2(theta_A, pi/2) = (5 - cos 2theta_A)/6", max_of(special), 1e-12);
    s.record("blind first user saturates bound", max_of(blind_first), 1e-9);
    s.record("two-user homogeneous reduction", max_of(homo), 1e-12);
    let worst = two_user_region(2, 40)?
        .iter()
        .map(|c| bound_check(&c.point, 2, 0.0).slack)
        .fold(f64::INFINITY, f64::min);
    s.record("two-user region bound violation", (-worst).max(0.0), 1e-9);

    let theta = 0.7;
    let chain = ChainConfig::homogeneous(2, theta, 2)?;
    let stats = simulate_chain_trajectories(&chain, opts.signals, opts.seed)?;
    let f2 = transmission_fidelity_closed_form(2, theta, 2, opts.budget)?;
    let g = estimation_fidelity_single_measure(2, theta)?;
    s.record(
        "trajectory simulation vs exact (stderr units)",
        zscore(stats.f_mean, f2, stats.f_stderr).max(zscore(stats.g_mean, g, stats.g_stderr)),
        4.0,
    );

    Ok(s.checks)
}

fn zscore(measured: f64, expected: f64, stderr: f64) -> f64 {
    let diff = (measured - expected).abs();
    if stderr > 0.0 {
        diff / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Fixed-width pass/fail table.
pub fn render_report(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let _ = writeln!(
            out,
            "{}  {:<width$}  measured {:.3e}  threshold {:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold,
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(out, "{} checks, {} failed", checks.len(), failed);
    out
}
