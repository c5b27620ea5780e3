//! Rayleigh-quotient estimates of the first nontrivial Neumann eigenvalue
//! `lambda_p` and of the Morrey constant `sigma_p`.
//!
//! Both are minimized over fields with `sum |u|^(p-2) u vol = 0`. Returned
//! values are quotients of the returned minimizers, hence upper bounds on the
//! discrete infima.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{energy_gradient_with, log_sum_exp, sup_norm, GradientScheme, GradientStencil, ScalarField};
use crate::domain::{diameter, geodesic_distance, GridDomain};
use crate::error::{Error, Result};
use crate::measure::SignedMeasure;
use crate::solver::{dirichlet_newton_direction, generalized_mean, solve_p_poisson, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenKind {
    Lambda,
    Sigma,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenEstimate {
    pub kind: EigenKind,
    pub p: f64,
    pub value: f64,
    /// `value^(1/p)`, computed in log space.
    pub root: f64,
    pub minimizer: ScalarField,
    pub iterations: usize,
    pub converged: bool,
}

impl EigenEstimate {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxItersExceeded { iterations: self.iterations, residual: f64::NAN })
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EigenOptions {
    /// Random starts in addition to the geodesic start.
    pub random_starts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the quotient drops by less than this fraction per iteration.
    pub tol: f64,
    /// The smoothed maximum for `sigma_p` is the `l^q` norm with `q = smoothing * p`.
    pub smoothing: f64,
    pub solve: SolveOptions,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            random_starts: 2,
            seed: 0,
            max_iters: 200,
            tol: 1e-9,
            smoothing: 4.0,
            solve: SolveOptions::default(),
        }
    }
}

/// `ln sum vol |u|^p`.
fn log_lp(vol: &[f64], u: &[f64], p: f64) -> f64 {
    let logs: Vec<f64> = u
        .iter()
        .zip(vol)
        .filter(|(x, _)| **x != 0.0)
        .map(|(x, v)| p * x.abs().ln() + v.ln())
        .collect();
    if logs.is_empty() {
        f64::NEG_INFINITY
    } else {
        log_sum_exp(&logs)
    }
}

/// Log of the Rayleigh quotient of `kind` at `u`.
pub fn log_quotient(dom: &GridDomain, u: &ScalarField, p: f64, kind: EigenKind) -> f64 {
    let st = GradientStencil::new(dom, GradientScheme::default());
    let num = st.log_power_sum(&u.values, p);
    let den = match kind {
        EigenKind::Lambda => log_lp(dom.node_volumes(), &u.values, p),
        EigenKind::Sigma => p * sup_norm(u).ln(),
    };
    num - den
}

fn estimate(dom: &GridDomain, kind: EigenKind, p: f64, u: ScalarField, iterations: usize, converged: bool) -> EigenEstimate {
    let lq = log_quotient(dom, &u, p, kind);
    EigenEstimate { kind, p, value: lq.exp(), root: (lq / p).exp(), minimizer: u, iterations, converged }
}

fn project(dom: &GridDomain, u: &[f64], p: f64, tol: f64) -> Result<Vec<f64>> {
    let c = generalized_mean(dom, u, p, tol)?;
    let v: Vec<f64> = u.iter().map(|x| x - c).collect();
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m == 0.0 {
        return Err(Error::DegenerateGradient);
    }
    Ok(v.into_iter().map(|x| x / m).collect())
}

/// Starting fields: half the difference of the distances to a diametral pair,
/// then seeded uniform noise.
fn starts(dom: &GridDomain, opts: &EigenOptions) -> Result<Vec<Vec<f64>>> {
    let d = diameter(dom);
    let da = geodesic_distance(dom, d.a)?.dist;
    let db = geodesic_distance(dom, d.b)?.dist;
    let mut out = vec![da.iter().zip(&db).map(|(a, b)| 0.5 * (a - b)).collect::<Vec<f64>>()];
    for k in 0..opts.random_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        out.push((0..dom.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    Ok(out)
}

fn validate(p: f64, opts: &EigenOptions) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("exponent must lie in (1, inf), got {p}")));
    }
    if !(opts.tol > 0.0 && opts.smoothing >= 1.0) {
        return Err(Error::InvalidInput("eigen tolerance must be positive and smoothing >= 1".into()));
    }
    Ok(())
}

/// Nonlinear inverse iteration: `v` solves the p-Poisson problem with right-hand
/// side `vol |u|^(p-2) u`. By Hoelder, the quotient of `v` never exceeds that of `u`.
fn inverse_iteration(dom: &GridDomain, p: f64, start: &[f64], opts: &EigenOptions) -> Result<EigenEstimate> {
    let vol = dom.node_volumes();
    let tol = opts.solve.normalization_tol;
    let mut u = project(dom, start, p, tol)?;
    let mut q = log_quotient(dom, &ScalarField::new(u.clone()), p, EigenKind::Lambda);
    let mut solve = opts.solve.clone();
    if solve.diameter.is_none() {
        solve.diameter = Some(diameter(dom).value);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let rhs: Vec<f64> = u.iter().zip(vol).map(|(x, v)| v * x.abs().powf(p - 2.0) * x).collect();
        let mu = SignedMeasure::new(rhs).balanced();
        let report = solve_p_poisson(dom, &mu, p, &solve)?;
        solve.warm_start = Some(report.u.clone());
        let v = project(dom, &report.u.values, p, tol)?;
        let qv = log_quotient(dom, &ScalarField::new(v.clone()), p, EigenKind::Lambda);
        if !(qv <= q) {
            // the solve is inexact; a non-decrease means we are at its resolution
            converged = true;
            break;
        }
        let drop = 1.0 - (qv - q).exp();
        u = v;
        q = qv;
        if drop.abs() < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(estimate(dom, EigenKind::Lambda, p, ScalarField::new(u), iterations, converged))
}

fn best(mut runs: Vec<EigenEstimate>) -> EigenEstimate {
    // deterministic: smallest value, ties to the earliest start
    let mut k = 0;
    for i in 1..runs.len() {
        if runs[i].value < runs[k].value {
            k = i;
        }
    }
    runs.swap_remove(k)
}

/// Multi-start estimate of `lambda_p = inf sum vol |grad u|^p / sum vol |u|^p`.
pub fn rayleigh_lambda_p(dom: &GridDomain, p: f64, opts: &EigenOptions) -> Result<EigenEstimate> {
    validate(p, opts)?;
    let runs: Vec<EigenEstimate> = starts(dom, opts)?
        .par_iter()
        .map(|s| inverse_iteration(dom, p, s, opts))
        .collect::<Result<_>>()?;
    Ok(best(runs))
}

const SIGMA_STAGES: usize = 4;

/// `ln sum vol |grad u|^p - (p / q) ln sum |u|^q` and its gradient.
fn smoothed_sigma(st: &GradientStencil, u: &[f64], p: f64, q: f64, grad: bool) -> (f64, Vec<f64>) {
    let ld = st.log_power_sum(u, p);
    let logs: Vec<f64> = u.iter().filter(|x| **x != 0.0).map(|x| q * x.abs().ln()).collect();
    let lm = log_sum_exp(&logs);
    let f = ld - p / q * lm;
    if !grad {
        return (f, Vec::new());
    }
    let eg = energy_gradient_with(st, u, p);
    let g = eg
        .iter()
        .zip(u)
        .map(|(e, x)| p * e / ld.exp() - p * (q * x.abs().ln() - lm).exp() / x.abs().max(f64::MIN_POSITIVE) * x.signum())
        .collect();
    (f, g)
}

/// Projected descent on the smoothed quotient, preconditioned by the Hessian
/// of the p-Dirichlet energy. The smoothing exponent is raised in stages so
/// the last stage sits close to the true maximum.
fn sigma_descent(dom: &GridDomain, p: f64, start: &[f64], opts: &EigenOptions) -> Result<EigenEstimate> {
    let st = GradientStencil::new(dom, GradientScheme::default());
    let tol = opts.solve.normalization_tol;
    let mut u = project(dom, start, p, tol)?;
    let mut iterations = 0;
    let mut converged = false;
    for stage in 0..SIGMA_STAGES {
        let q = opts.smoothing * p * 4f64.powi(stage as i32);
        let (mut f, mut g) = smoothed_sigma(&st, &u, p, q, true);
        converged = false;
        for _ in 0..opts.max_iters {
            iterations += 1;
            let scale = st.log_power_sum(&u, p).exp() / p;
            let d: Vec<f64> = dirichlet_newton_direction(dom, &u, p, &g).iter().map(|x| x * scale).collect();
            let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a - t * b).collect();
                if let Ok(v) = project(dom, &trial, p, tol) {
                    let (fv, _) = smoothed_sigma(&st, &v, p, q, false);
                    if fv < f - 1e-4 * t * slope.max(0.0) {
                        accepted = Some((v, fv));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((v, fv)) = accepted else {
                converged = true;
                break;
            };
            let drop = f - fv;
            u = v;
            f = fv;
            g = smoothed_sigma(&st, &u, p, q, true).1;
            if drop < opts.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(estimate(dom, EigenKind::Sigma, p, ScalarField::new(u), iterations, converged))
}

/// Multi-start estimate of `sigma_p = inf sum vol |grad u|^p / max |u|^p`. The
/// smoothed maximum drives the descent; the reported value uses the true one.
/// The `lambda_p` minimizer is one of the starts.
pub fn morrey_sigma_p(dom: &GridDomain, p: f64, opts: &EigenOptions) -> Result<EigenEstimate> {
    validate(p, opts)?;
    let lambda = rayleigh_lambda_p(dom, p, opts)?;
    let mut all = starts(dom, opts)?;
    all.push(lambda.minimizer.values.clone());
    let mut runs: Vec<EigenEstimate> = all
        .par_iter()
        .map(|s| sigma_descent(dom, p, s, opts))
        .collect::<Result<_>>()?;
    // the start itself is feasible, so never report worse than it
    let seed = estimate(dom, EigenKind::Sigma, p, lambda.minimizer, 0, true);
    runs.push(seed);
    Ok(best(runs))
}
