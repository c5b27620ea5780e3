//! Neumann p-Poisson solver.
//!
//! Minimizes `J_p(u) = (1/p) sum |grad u|^p vol - sum u mu` over fields with
//! `sum |u|^(p-2) u vol = 0`. Since `mu` has zero mass, `J_p` is invariant
//! under constant shifts, so the constraint is enforced by re-centering after
//! every accepted step. Steps are damped Newton (or preconditioned gradient)
//! directions with Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::banded::BandedMatrix;
use crate::calculus::{
    energy_gradient_with, lipschitz_constant, sup_norm, GradientScheme, GradientStencil, ScalarField,
};
use crate::domain::{geodesic_diameter, GridDomain};
use crate::error::{Error, Result};
use crate::measure::{check_compatibility, SignedMeasure};

/// Relative zero-mass tolerance a right-hand side must pass.
/// Gauss-Seidel sweeps run whenever the line search can no longer see `J` move.
const RELAX_SWEEPS: usize = 20;
/// Uniform Hessian shifts, relative to the largest diagonal entry, tried
/// after a rejected Newton step.
const NEWTON_SHIFTS: [f64; 4] = [1e-8, 1e-6, 1e-4, 1e-2];

pub const COMPATIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Banded Cholesky solve with the regularized Hessian.
    Newton,
    /// Gradient scaled by the inverse Hessian diagonal.
    Diagonal,
    Steepest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stationarity tolerance; `None` means `1e-8 * |mu|(Omega)`.
    pub grad_tol: Option<f64>,
    pub normalization_tol: f64,
    /// Bound on `max_i |r_i| / H_ii` relative to `max u - min u`.
    pub step_tol: f64,
    #[serde(skip)]
    pub warm_start: Option<ScalarField>,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub direction: Direction,
    /// Graph diameter used for the energy bound diagnostic; computed when absent.
    pub diameter: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 500,
            grad_tol: None,
            normalization_tol: 1e-12,
            step_tol: 1e-10,
            warm_start: None,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            direction: Direction::Newton,
            diameter: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.grad_tol {
            if !(t > 0.0) {
                return Err(Error::InvalidInput("grad_tol must be positive".into()));
            }
        }
        if !(self.normalization_tol > 0.0 && self.step_tol > 0.0) {
            return Err(Error::InvalidInput("normalization_tol and step_tol must be positive".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0 && self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidInput("line search parameters must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub u: ScalarField,
    pub p: f64,
    /// `J_p(u)`.
    pub energy: f64,
    /// `(1/p) sum |grad u|^p vol`.
    pub dirichlet_energy: f64,
    pub weak_residual: f64,
    /// `max_i |dJ/du_i| / H_ii`, the weak residual in units of `u`.
    pub scaled_residual: f64,
    /// `sum |u|^(p-2) u vol` relative to `sum |u|^(p-1) vol`.
    pub normalization_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(sum |grad u|^p vol)^(1 - 1/p) / ((diam / 2) |mu|(Omega))`.
    pub energy_bound_ratio: f64,
    pub grad_tol: f64,
    /// `J_p` after every accepted iteration, starting with the initial iterate.
    pub energy_history: Vec<f64>,
}

impl SolveReport {
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxItersExceeded { iterations: self.iterations, residual: self.weak_residual })
        }
    }
}

/// Relative residual of the generalized-mean constraint.
pub fn normalization_residual(dom: &GridDomain, u: &ScalarField, p: f64) -> f64 {
    let scale = sup_norm(u);
    if scale == 0.0 {
        return 0.0;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (x, v) in u.values.iter().zip(dom.node_volumes()) {
        let r = x / scale;
        let a = r.abs().powf(p - 2.0);
        num += a * r * v;
        den += a * r.abs() * v;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Returns `u - c` with `sum |u - c|^(p-2) (u - c) vol = 0`. The map is strictly
/// decreasing in `c`, so the root in `[min u, max u]` is unique; it is found by
/// safeguarded Newton-bisection.
pub fn normalize_generalized_mean(dom: &GridDomain, u: &ScalarField, p: f64, tol: f64) -> Result<ScalarField> {
    Ok(u.shifted(-generalized_mean(dom, &u.values, p, tol)?))
}

/// The shift `c` of [`normalize_generalized_mean`].
pub fn generalized_mean(dom: &GridDomain, u: &[f64], p: f64, tol: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("exponent must exceed 1, got {p}")));
    }
    let vol = dom.node_volumes();
    let (lo0, hi0) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi0 > lo0) {
        return Ok(lo0);
    }
    let spread = hi0 - lo0;
    // value, derivative and magnitude of the scaled constraint at c
    let eval = |c: f64| -> (f64, f64, f64) {
        let (mut f, mut df, mut mag) = (0.0, 0.0, 0.0);
        for (x, v) in u.iter().zip(vol) {
            let r = (x - c) / spread;
            let a = r.abs();
            if a == 0.0 {
                continue;
            }
            let pw = a.powf(p - 2.0);
            f += pw * r * v;
            df += (p - 1.0) * pw * v;
            mag += pw * a * v;
        }
        (f, df, mag)
    };
    let (mut lo, mut hi) = (lo0, hi0);
    let mut c = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, df, mag) = eval(c);
        if mag == 0.0 || (f / mag).abs() <= 0.01 * tol {
            break;
        }
        if f > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        if hi - lo <= 4.0 * f64::EPSILON * spread.max(lo.abs().max(hi.abs())) {
            break;
        }
        // f is in units of the scaled variable; df is d f / d (c / spread)
        let newton = c + spread * f / df;
        c = if df > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Ok(c)
}

/// Closed-form solution for `mu = sign(x) dx` on `(-1, 1)`:
/// `((p - 1) / p) sign(x) (1 - (1 - |x|)^(p / (p - 1)))`.
pub fn analytic_1d_solution(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let q = p / (p - 1.0);
    (p - 1.0) / p * x.signum() * (1.0 - (1.0 - x.abs()).max(0.0).powf(q))
}

/// `max_i |dJ_p / du_i|`, the largest weak-form defect over the nodal basis.
pub fn weak_form_residual(dom: &GridDomain, u: &ScalarField, mu: &SignedMeasure, p: f64) -> f64 {
    let st = GradientStencil::new(dom, GradientScheme::default());
    let g = energy_gradient_with(&st, &u.values, p);
    g.iter()
        .zip(&mu.weights)
        .fold(0.0, |m, (a, w)| m.max((a - w).abs()))
}

struct Problem {
    st: GradientStencil,
    /// Terms whose pairs touch each node.
    incident: Vec<Vec<usize>>,
    weights: Vec<f64>,
    p: f64,
    bandwidth: usize,
}

impl Problem {
    fn new(dom: &GridDomain, weights: Vec<f64>, p: f64) -> Self {
        let st = GradientStencil::new(dom, GradientScheme::default());
        let mut bandwidth = 0;
        for term in &st.terms {
            let idx: Vec<usize> = term.pairs.iter().flatten().flat_map(|(a, b)| [*a, *b]).collect();
            if let (Some(lo), Some(hi)) = (idx.iter().min(), idx.iter().max()) {
                bandwidth = bandwidth.max(hi - lo);
            }
        }
        let mut incident = vec![Vec::new(); dom.num_nodes()];
        for (k, term) in st.terms.iter().enumerate() {
            let mut touched: Vec<usize> = term.pairs.iter().flatten().flat_map(|(a, b)| [*a, *b]).collect();
            touched.sort_unstable();
            touched.dedup();
            for i in touched {
                incident[i].push(k);
            }
        }
        Problem { st, incident, weights, p, bandwidth }
    }

    /// `dJ/du_i` and `d2J/du_i2` from the terms touching node `i`.
    fn local(&self, u: &[f64], i: usize) -> (f64, f64) {
        let p = self.p;
        let ih = self.st.inv_h;
        let (mut r, mut d) = (-self.weights[i], 0.0);
        for &k in &self.incident[i] {
            let term = &self.st.terms[k];
            let g = self.st.grad(u, k);
            // d g / d u_i, per axis
            let mut e = [0.0; 2];
            for (axis, pair) in term.pairs.iter().enumerate() {
                if let Some((a, b)) = pair {
                    if *b == i {
                        e[axis] += ih;
                    }
                    if *a == i {
                        e[axis] -= ih;
                    }
                }
            }
            let mut n2 = g[0] * g[0] + g[1] * g[1];
            if p < 2.0 {
                n2 += 1e-16;
            } else if n2 == 0.0 && p != 2.0 {
                continue;
            }
            let s = n2.powf(0.5 * (p - 2.0));
            let ge = g[0] * e[0] + g[1] * e[1];
            r += term.weight * s * ge;
            let t = if p == 2.0 { 0.0 } else { (p - 2.0) * s / n2 };
            d += term.weight * (s * (e[0] * e[0] + e[1] * e[1]) + t * ge * ge);
        }
        (r, d)
    }

    /// One nonlinear Gauss-Seidel sweep: each node in turn is moved to the
    /// minimizer of `J` along its own coordinate. Every row is solved to its
    /// own relative precision, so regions far below the rounding level of `J`
    /// still settle.
    fn relax(&self, u: &mut [f64], span: f64) {
        for i in 0..u.len() {
            let (r0, d0) = self.local(u, i);
            if r0 == 0.0 {
                continue;
            }
            let x0 = u[i];
            let f = |u: &mut [f64], x: f64| {
                u[i] = x;
                self.local(u, i)
            };
            // Bracket the root of the monotone local residual.
            let dir = -r0.signum();
            let mut step = if d0 > 0.0 { (r0.abs() / d0).min(span) } else { span };
            if !(step > 0.0) {
                step = span;
            }
            let (mut lo, mut hi) = (x0, x0);
            let mut found = false;
            for _ in 0..200 {
                let x = x0 + dir * step;
                let (r, _) = f(u, x);
                if r == 0.0 || r.signum() != r0.signum() {
                    if dir > 0.0 {
                        hi = x;
                    } else {
                        lo = x;
                    }
                    found = true;
                    break;
                }
                if dir > 0.0 {
                    lo = x;
                } else {
                    hi = x;
                }
                step *= 2.0;
            }
            if !found {
                u[i] = x0;
                continue;
            }
            // Safeguarded Newton on [lo, hi], where r(lo) < 0 < r(hi).
            let mut x = 0.5 * (lo + hi);
            for _ in 0..100 {
                let (r, d) = f(u, x);
                if r == 0.0 {
                    break;
                }
                if r < 0.0 {
                    lo = x;
                } else {
                    hi = x;
                }
                let newton = x - r / d;
                x = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(span) {
                    break;
                }
            }
            u[i] = x;
        }
    }

    fn dirichlet(&self, u: &[f64]) -> f64 {
        self.st.energy(u, self.p)
    }

    fn objective(&self, u: &[f64]) -> f64 {
        self.dirichlet(u) - u.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()
    }

    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = energy_gradient_with(&self.st, u, self.p);
        for (gi, w) in g.iter_mut().zip(&self.weights) {
            *gi -= w;
        }
        g
    }

    fn hessian(&self, u: &[f64]) -> BandedMatrix {
        let n = u.len();
        let p = self.p;
        let ih2 = self.st.inv_h * self.st.inv_h;
        let mut hm = BandedMatrix::zeros(n, self.bandwidth);
        let mut add_full = |i: usize, j: usize, v: f64| {
            if i >= j {
                hm.add(i, j, v);
            }
        };
        for (k, term) in self.st.terms.iter().enumerate() {
            let g = self.st.grad(u, k);
            let mut n2 = g[0] * g[0] + g[1] * g[1];
            if p < 2.0 {
                n2 += 1e-16;
            } else if n2 == 0.0 && p != 2.0 {
                continue;
            }
            let s = n2.powf(0.5 * (p - 2.0));
            let t = if p == 2.0 { 0.0 } else { (p - 2.0) * s / n2 };
            let m = [
                [s + t * g[0] * g[0], t * g[0] * g[1]],
                [t * g[1] * g[0], s + t * g[1] * g[1]],
            ];
            let pairs = &term.pairs;
            for (a, pa) in pairs.iter().enumerate() {
                let Some((fa, ta)) = *pa else { continue };
                for (b, pb) in pairs.iter().enumerate() {
                    let Some((fb, tb)) = *pb else { continue };
                    let c = term.weight * m[a][b] * ih2;
                    add_full(ta, tb, c);
                    add_full(fa, fb, c);
                    add_full(ta, fb, -c);
                    add_full(fa, tb, -c);
                }
            }
        }
        hm
    }

    /// `max_i |r_i| / H_ii`: the Jacobi step length, a residual in units of `u`
    /// that stays meaningful where `|grad u|^(p-2)` is tiny.
    fn scaled_residual(&self, u: &[f64], grad: &[f64]) -> f64 {
        let p = self.p;
        let ih2 = self.st.inv_h * self.st.inv_h;
        let mut diag = vec![0.0; u.len()];
        for (k, term) in self.st.terms.iter().enumerate() {
            let g = self.st.grad(u, k);
            let mut n2 = g[0] * g[0] + g[1] * g[1];
            if p < 2.0 {
                n2 += 1e-16;
            }
            if n2 == 0.0 && p != 2.0 {
                continue;
            }
            let s = n2.powf(0.5 * (p - 2.0));
            let t = if p == 2.0 { 0.0 } else { (p - 2.0) * s / n2 };
            for (a, pa) in term.pairs.iter().enumerate() {
                let Some((f, to)) = *pa else { continue };
                let c = term.weight * (s + t * g[a] * g[a]) * ih2;
                diag[f] += c;
                diag[to] += c;
            }
        }
        grad.iter()
            .zip(&diag)
            .map(|(r, d)| if *r == 0.0 { 0.0 } else { r.abs() / d })
            .fold(0.0, f64::max)
    }

    fn direction(&self, u: &[f64], grad: &[f64], kind: Direction) -> Vec<f64> {
        let rhs = centered(grad);
        let d = match kind {
            Direction::Steepest => rhs,
            Direction::Diagonal => {
                let h = self.hessian(u);
                let floor = 1e-12 * h.max_diagonal().max(f64::MIN_POSITIVE);
                rhs.iter()
                    .enumerate()
                    .map(|(i, r)| r / h.get(i, i).max(floor))
                    .collect()
            }
            Direction::Newton => newton_solve(&self.hessian(u), &rhs, None),
        };
        centered(&d)
    }

    /// Newton direction with the uniform shift `shift * max_i H_ii`, which
    /// moves toward the scaled gradient as the shift grows.
    fn shifted_newton(&self, u: &[f64], grad: &[f64], shift: f64) -> Vec<f64> {
        centered(&newton_solve(&self.hessian(u), &centered(grad), Some(shift)))
    }
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// `(H + shift)^-1 rhs` by banded Cholesky. Without a uniform shift the
/// diagonal is raised relative to each entry: at large p the diagonal spans
/// many decades and a uniform shift would swamp the weakly coupled nodes.
fn newton_solve(h0: &BandedMatrix, rhs: &[f64], uniform: Option<f64>) -> Vec<f64> {
    let base = h0.max_diagonal().max(f64::MIN_POSITIVE);
    let mut eps = 1e-10;
    loop {
        let mut h = h0.clone();
        for i in 0..rhs.len() {
            let d = h0.get(i, i);
            let add = match uniform {
                Some(s) => (s + eps) * base,
                None if d > 0.0 => eps * d,
                None => eps * base,
            };
            h.add(i, i, add);
        }
        if let Some(ch) = h.cholesky() {
            return ch.solve(rhs);
        }
        eps *= 100.0;
        if eps > 1.0 {
            return rhs.iter().map(|r| r / base).collect();
        }
    }
}

/// `(H + shift)^-1 (rhs - mean)` with `H` the Hessian of the p-Dirichlet
/// energy at `u`, mean removed from the result.
pub(crate) fn dirichlet_newton_direction(dom: &GridDomain, u: &[f64], p: f64, rhs: &[f64]) -> Vec<f64> {
    Problem::new(dom, vec![0.0; u.len()], p).direction(u, rhs, Direction::Newton)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `J_p` for balanced `mu`. Returns a report with `converged = false`
/// when the iteration budget runs out before the stationarity tolerance.
pub fn solve_p_poisson(dom: &GridDomain, mu: &SignedMeasure, p: f64, opts: &SolveOptions) -> Result<SolveReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("exponent must lie in (1, inf), got {p}")));
    }
    if mu.len() != dom.num_nodes() {
        return Err(Error::InvalidInput("measure size does not match the domain".into()));
    }
    opts.validate()?;
    if !check_compatibility(mu, COMPATIBILITY_TOL) {
        return Err(Error::NotBalanced { mass: mu.total_mass(), variation: mu.total_variation() });
    }
    let tv = mu.total_variation();
    let grad_tol = opts.grad_tol.unwrap_or(1e-8 * tv);
    let diameter = match opts.diameter {
        Some(d) => d,
        None => geodesic_diameter(dom),
    };
    let n = dom.num_nodes();
    if mu.is_zero() {
        return Ok(SolveReport {
            u: ScalarField::zeros(n),
            p,
            energy: 0.0,
            dirichlet_energy: 0.0,
            weak_residual: 0.0,
            scaled_residual: 0.0,
            normalization_residual: 0.0,
            iterations: 0,
            converged: true,
            energy_bound_ratio: 0.0,
            grad_tol,
            energy_history: vec![0.0],
        });
    }

    let start = match &opts.warm_start {
        Some(w) if w.len() == n && w.is_finite() => w.clone(),
        Some(_) => return Err(Error::InvalidInput("warm start does not match the domain".into())),
        None => cold_start(dom, mu, p, opts, diameter)?,
    };

    let problem = Problem::new(dom, mu.balanced().weights, p);
    let mut u = normalize_generalized_mean(dom, &start, p, opts.normalization_tol)?.values;
    let mut j = problem.objective(&u);
    if !j.is_finite() {
        return Err(Error::Overflow { p });
    }
    let mut history = vec![j];
    let mut grad = problem.gradient(&u);
    let mut residual = inf_norm(&grad);
    let mut iterations = 0;
    let oscillation = |u: &[f64]| {
        let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        hi - lo
    };
    let mut scaled = problem.scaled_residual(&u, &grad);
    let stationary = |r: f64, sr: f64, u: &[f64]| r <= grad_tol && sr <= opts.step_tol * oscillation(u);
    let mut converged = stationary(residual, scaled, &u);

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let capped = |mut d: Vec<f64>| {
            let dmax = inf_norm(&d);
            if dmax > diameter {
                d.iter_mut().for_each(|x| *x *= diameter / dmax);
            }
            let slope: f64 = grad.iter().zip(&d).map(|(g, x)| g * x).sum();
            (d, slope)
        };
        let (mut d, mut slope) = capped(problem.direction(&u, &grad, opts.direction));
        if !(slope > 0.0) {
            (d, slope) = capped(problem.direction(&u, &grad, Direction::Steepest));
        }
        let mut accepted = None;
        let mut shifted = false;
        // A rejected Newton step is retried with growing uniform shifts: on
        // nearly flat regions the Hessian is close to singular and the plain
        // step runs off along directions `J` can barely see.
        let shifts: &[f64] = if opts.direction == Direction::Newton { &NEWTON_SHIFTS } else { &[] };
        for k in 0..=shifts.len() {
            let (dk, sk) = if k == 0 { (d.clone(), slope) } else { capped(problem.shifted_newton(&u, &grad, shifts[k - 1])) };
            // Predicted decreases below the rounding level of J cannot be checked.
            if !(sk > 1e-13 * (1.0 + j.abs())) {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..=opts.max_backtracks {
                let trial: Vec<f64> = u.iter().zip(&dk).map(|(a, b)| a - t * b).collect();
                let jt = problem.objective(&trial);
                if jt.is_finite() && jt <= j - opts.armijo * t * sk {
                    accepted = Some((trial, jt));
                    break;
                }
                t *= opts.backtrack;
            }
            if accepted.is_some() {
                shifted = k > 0;
                break;
            }
        }
        let blind = accepted.is_none();
        if accepted.is_none() {
            // Armijo is blind below the rounding level of J, which at large p
            // covers whole regions of small gradient. There a step is taken if
            // J does not visibly grow and the scaled residual shrinks.
            let mut t = 1.0;
            for _ in 0..=opts.max_backtracks {
                let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a - t * b).collect();
                let jt = problem.objective(&trial);
                if jt.is_finite() && jt <= j + 1e-12 * (1.0 + j.abs()) {
                    let gt = problem.gradient(&trial);
                    if problem.scaled_residual(&trial, &gt) < scaled {
                        accepted = Some((trial, jt));
                        break;
                    }
                }
                t *= opts.backtrack;
            }
        }
        let mut trial = accepted.map_or_else(|| u.clone(), |(trial, _)| trial);
        if blind || shifted {
            // `J` is blind to the weak rows here, so settle them node by node.
            let span = oscillation(&trial).max(f64::MIN_POSITIVE);
            for _ in 0..RELAX_SWEEPS {
                problem.relax(&mut trial, span);
            }
            let gt = problem.gradient(&trial);
            if !(problem.scaled_residual(&trial, &gt) < scaled) && problem.objective(&trial) > j {
                break;
            }
        }
        let c = generalized_mean(dom, &trial, p, opts.normalization_tol)?;
        u = trial.into_iter().map(|x| x - c).collect();
        j = problem.objective(&u);
        history.push(j);
        grad = problem.gradient(&u);
        residual = inf_norm(&grad);
        scaled = problem.scaled_residual(&u, &grad);
        converged = stationary(residual, scaled, &u);
    }

    let field = ScalarField::new(u);
    let dirichlet = problem.dirichlet(&field.values);
    let log_energy = (p * dirichlet).ln();
    let energy_bound_ratio = ((1.0 - 1.0 / p) * log_energy).exp() / (0.5 * diameter * tv);
    Ok(SolveReport {
        normalization_residual: normalization_residual(dom, &field, p),
        weak_residual: weak_form_residual(dom, &field, mu, p),
        scaled_residual: scaled,
        u: field,
        p,
        energy: j,
        dirichlet_energy: dirichlet,
        iterations,
        converged,
        energy_bound_ratio,
        grad_tol,
        energy_history: history,
    })
}

/// Initial iterate for a solve without warm start: zero for `p = 2`, else a
/// short doubling homotopy `2, 4, 8, ...` ending below `p`.
fn cold_start(dom: &GridDomain, mu: &SignedMeasure, p: f64, opts: &SolveOptions, diameter: f64) -> Result<ScalarField> {
    let n = dom.num_nodes();
    if p == 2.0 {
        return Ok(ScalarField::zeros(n));
    }
    let mut stages = vec![2.0];
    while stages.last().unwrap() * 2.0 < p {
        let next = stages.last().unwrap() * 2.0;
        stages.push(next);
    }
    let mut inner = opts.clone();
    inner.diameter = Some(diameter);
    inner.warm_start = None;
    let mut u = ScalarField::zeros(n);
    for (k, &q) in stages.iter().enumerate() {
        inner.warm_start = (k > 0).then(|| u.clone());
        u = solve_p_poisson(dom, mu, q, &inner)?.u;
    }
    Ok(u)
}

/// Right-hand side of a continuation sweep.
pub enum MeasureFamily<'a> {
    Fixed(SignedMeasure),
    /// `mu_p` for each exponent together with its weak-star limit `mu`.
    Indexed {
        at: Box<dyn Fn(f64) -> Result<SignedMeasure> + Send + Sync + 'a>,
        limit: SignedMeasure,
    },
}

impl MeasureFamily<'_> {
    pub fn at(&self, p: f64) -> Result<SignedMeasure> {
        match self {
            MeasureFamily::Fixed(m) => Ok(m.clone()),
            MeasureFamily::Indexed { at, .. } => at(p),
        }
    }

    pub fn limit(&self) -> &SignedMeasure {
        match self {
            MeasureFamily::Fixed(m) => m,
            MeasureFamily::Indexed { limit, .. } => limit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub report: SolveReport,
    pub sup_norm: f64,
    pub lipschitz: f64,
    /// `sum u dmu^+ - sum u dmu^-` against the limit measure.
    pub duality_pairing: f64,
}

/// Solves for every exponent in ascending order, warm-starting each solve
/// from the previous normalized solution.
pub fn continuation_sweep(
    dom: &GridDomain,
    family: &MeasureFamily<'_>,
    p_list: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<SweepEntry>> {
    if p_list.is_empty() {
        return Err(Error::InvalidInput("empty exponent list".into()));
    }
    if p_list.iter().any(|&p| !(p > 1.0)) || p_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("exponents must be ascending and > 1".into()));
    }
    let mut opts = opts.clone();
    if opts.diameter.is_none() {
        opts.diameter = Some(geodesic_diameter(dom));
    }
    let limit = family.limit();
    let mut out: Vec<SweepEntry> = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let mu = family.at(p)?;
        opts.warm_start = out.last().map(|e| e.report.u.clone());
        let report = solve_p_poisson(dom, &mu, p, &opts)?;
        let u = &report.u;
        out.push(SweepEntry {
            sup_norm: sup_norm(u),
            lipschitz: lipschitz_constant(dom, u),
            duality_pairing: u.values.iter().zip(&limit.weights).map(|(a, w)| a * w).sum(),
            report,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Stencil;
    use crate::measure::from_density;
    use approx::assert_abs_diff_eq;

    fn sign(x: [f64; 2]) -> f64 {
        if x[0] > 0.0 {
            1.0
        } else if x[0] < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    #[test]
    fn normalization_examples() {
        let dom = GridDomain::interval(0.0, 1.0, 2).unwrap();
        let u = ScalarField::new(vec![0.0, 1.0]);
        let v = normalize_generalized_mean(&dom, &u, 3.0, 1e-14).unwrap();
        assert_abs_diff_eq!(v.values[0], -0.5, epsilon = 1e-14);

        let line = GridDomain::interval(-1.0, 1.0, 41).unwrap();
        let u = ScalarField::from_fn(&line, |x| (3.0 * x[0]).exp());
        let v = normalize_generalized_mean(&line, &u, 2.0, 1e-14).unwrap();
        let mean: f64 = v.values.iter().zip(line.node_volumes()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);

        let c = ScalarField::new(vec![4.2; 41]);
        assert!(normalize_generalized_mean(&line, &c, 5.0, 1e-12).unwrap().values.iter().all(|&x| x == 0.0));

        for p in [1.3, 2.0, 4.0, 64.0] {
            let v = normalize_generalized_mean(&line, &u, p, 1e-13).unwrap();
            assert!(normalization_residual(&line, &v, p).abs() <= 1e-12, "p = {p}");
        }
    }

    #[test]
    fn zero_measure_gives_zero() {
        let dom = GridDomain::interval(-1.0, 1.0, 11).unwrap();
        let r = solve_p_poisson(&dom, &SignedMeasure::zero(11), 3.0, &SolveOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.u.values.iter().all(|&x| x == 0.0));
        assert_eq!(r.energy, 0.0);
    }

    #[test]
    fn unbalanced_rejected() {
        let dom = GridDomain::interval(-1.0, 1.0, 11).unwrap();
        let mut mu = SignedMeasure::zero(11);
        mu.weights[2] = 1.0;
        assert!(matches!(
            solve_p_poisson(&dom, &mu, 2.0, &SolveOptions::default()),
            Err(Error::NotBalanced { .. })
        ));
    }

    #[test]
    fn analytic_examples() {
        for p in [1.5, 2.0, 10.0] {
            assert_eq!(analytic_1d_solution(0.0, p), 0.0);
            assert_abs_diff_eq!(analytic_1d_solution(-0.3, p), -analytic_1d_solution(0.3, p));
        }
        assert_abs_diff_eq!(analytic_1d_solution(1.0, 2.0), 0.5);
        let dev = (0..=20000)
            .map(|i| -1.0 + i as f64 * 1e-4)
            .map(|x| (analytic_1d_solution(x, 100.0) - x).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 0.02, "{dev}");
    }

    #[test]
    fn p2_matches_closed_form() {
        let dom = GridDomain::interval(-1.0, 1.0, 201).unwrap();
        let mu = from_density(&dom, sign);
        let r = solve_p_poisson(&dom, &mu, 2.0, &SolveOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.weak_residual <= r.grad_tol);
        let err = (0..dom.num_nodes())
            .map(|i| (r.u.values[i] - analytic_1d_solution(dom.coords(i)[0], 2.0)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert_abs_diff_eq!(r.u.values[200], 0.5, epsilon = 2e-3);
    }

    #[test]
    fn weak_residual_of_zero_field() {
        let dom = GridDomain::interval(-1.0, 1.0, 21).unwrap();
        let mu = from_density(&dom, sign);
        let max_w = mu.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        for p in [1.5, 2.0, 6.0] {
            let r = weak_form_residual(&dom, &ScalarField::zeros(21), &mu, p);
            assert_abs_diff_eq!(r, max_w, epsilon = 1e-15);
        }
    }

    #[test]
    fn energy_is_monotone_and_linear_at_p2() {
        let dom = GridDomain::unit_square(13, Stencil::Diagonal).unwrap();
        let mu = SignedMeasure::dirac_pair(dom.num_nodes(), dom.node_at(9, 6).unwrap(), dom.node_at(3, 6).unwrap());
        let r = solve_p_poisson(&dom, &mu, 6.0, &SolveOptions::default()).unwrap();
        assert!(r.converged);
        for w in r.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
        let a = solve_p_poisson(&dom, &mu, 2.0, &SolveOptions::default()).unwrap();
        let b = solve_p_poisson(&dom, &mu.scaled(2.0), 2.0, &SolveOptions::default()).unwrap();
        for (x, y) in a.u.values.iter().zip(&b.u.values) {
            assert_abs_diff_eq!(2.0 * x, *y, epsilon = 1e-9);
        }
    }

    #[test]
    fn all_directions_reach_the_same_minimizer() {
        let dom = GridDomain::interval(-1.0, 1.0, 21).unwrap();
        let mu = from_density(&dom, sign);
        let newton = solve_p_poisson(&dom, &mu, 3.0, &SolveOptions::default()).unwrap();
        let opts = SolveOptions {
            direction: Direction::Diagonal,
            max_iters: 20000,
            grad_tol: Some(1e-7),
            ..Default::default()
        };
        let diag = solve_p_poisson(&dom, &mu, 3.0, &opts).unwrap();
        assert!(diag.converged);
        for (a, b) in newton.u.values.iter().zip(&diag.u.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-5);
        }
    }

    #[test]
    fn max_iters_reported() {
        let dom = GridDomain::interval(-1.0, 1.0, 41).unwrap();
        let mu = from_density(&dom, sign);
        let opts = SolveOptions { direction: Direction::Steepest, max_iters: 3, ..Default::default() };
        let r = solve_p_poisson(&dom, &mu, 4.0, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(matches!(r.ensure_converged(), Err(Error::MaxItersExceeded { .. })));
    }

    #[test]
    fn single_entry_sweep_is_one_solve() {
        let dom = GridDomain::interval(-1.0, 1.0, 41).unwrap();
        let mu = from_density(&dom, sign);
        let family = MeasureFamily::Fixed(mu.clone());
        let sweep = continuation_sweep(&dom, &family, &[3.0], &SolveOptions::default()).unwrap();
        let direct = solve_p_poisson(&dom, &mu, 3.0, &SolveOptions::default()).unwrap();
        assert_eq!(sweep.len(), 1);
        for (a, b) in sweep[0].report.u.values.iter().zip(&direct.u.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert!(continuation_sweep(&dom, &family, &[4.0, 2.0], &SolveOptions::default()).is_err());
    }
}
