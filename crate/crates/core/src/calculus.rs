//! Scalar fields and discrete differential operators on a [`GridDomain`].
//!
//! Node gradients are one-sided per axis: the forward quotient where a forward
//! axis neighbor exists and the backward one otherwise. The p-Dirichlet energy
//! averages all forward/backward combinations by default; either way it is
//! convex in the node values.

use serde::{Deserialize, Serialize};

use crate::domain::GridDomain;
use crate::error::{Error, Result};

/// Above this exponent energies are accumulated in log space.
pub const LOG_SPACE_EXPONENT: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        ScalarField { values }
    }

    pub fn zeros(n: usize) -> Self {
        ScalarField { values: vec![0.0; n] }
    }

    pub fn from_fn(dom: &GridDomain, f: impl Fn([f64; 2]) -> f64) -> Self {
        ScalarField { values: (0..dom.num_nodes()).map(|i| f(dom.coords(i))).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn shifted(&self, c: f64) -> Self {
        ScalarField { values: self.values.iter().map(|v| v + c).collect() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        ScalarField { values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Oriented slopes `(u(b) - u(a)) / length` on the domain edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeGradient {
    pub slopes: Vec<f64>,
}

pub fn edge_gradient(dom: &GridDomain, u: &ScalarField) -> EdgeGradient {
    let slopes = dom
        .edges()
        .iter()
        .map(|e| (u.values[e.b] - u.values[e.a]) / e.length)
        .collect();
    EdgeGradient { slopes }
}

/// Node pair `(from, to)` whose difference quotient is the gradient component
/// of a node along one axis.
pub(crate) fn axis_pair(dom: &GridDomain, node: usize, axis: usize) -> Option<(usize, usize)> {
    if let Some(f) = dom.axis_neighbor(node, axis, true) {
        Some((node, f))
    } else {
        dom.axis_neighbor(node, axis, false).map(|b| (b, node))
    }
}

/// Which one-sided quotients enter the p-Dirichlet energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientScheme {
    /// One gradient per node from [`node_gradient`].
    Forward,
    /// Average over the `2^dim` forward/backward combinations per node, so the
    /// energy is invariant under axis reflections of the grid.
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GradientTerm {
    /// Quadrature weight: node volume times the averaging factor.
    pub weight: f64,
    pub pairs: [Option<(usize, usize)>; 2],
}

/// Precomputed gradient terms shared by energy, gradient and Hessian assembly.
#[derive(Debug, Clone)]
pub(crate) struct GradientStencil {
    pub terms: Vec<GradientTerm>,
    pub inv_h: f64,
}

fn one_sided(dom: &GridDomain, node: usize, axis: usize, forward: bool) -> Option<(usize, usize)> {
    let f = dom.axis_neighbor(node, axis, true).map(|f| (node, f));
    let b = dom.axis_neighbor(node, axis, false).map(|b| (b, node));
    if forward {
        f.or(b)
    } else {
        b.or(f)
    }
}

impl GradientStencil {
    pub fn new(dom: &GridDomain, scheme: GradientScheme) -> Self {
        let vol = dom.node_volumes();
        let dim = dom.dim();
        let mut terms = Vec::new();
        for n in 0..dom.num_nodes() {
            match scheme {
                GradientScheme::Forward => {
                    let mut pairs = [None, None];
                    for (axis, slot) in pairs.iter_mut().enumerate().take(dim) {
                        *slot = axis_pair(dom, n, axis);
                    }
                    terms.push(GradientTerm { weight: vol[n], pairs });
                }
                GradientScheme::Symmetric => {
                    let combos = 1usize << dim;
                    for c in 0..combos {
                        let mut pairs = [None, None];
                        for (axis, slot) in pairs.iter_mut().enumerate().take(dim) {
                            *slot = one_sided(dom, n, axis, c >> axis & 1 == 0);
                        }
                        terms.push(GradientTerm { weight: vol[n] / combos as f64, pairs });
                    }
                }
            }
        }
        GradientStencil { terms, inv_h: 1.0 / dom.h() }
    }

    #[inline]
    pub fn grad(&self, u: &[f64], term: usize) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (axis, pair) in self.terms[term].pairs.iter().enumerate() {
            if let Some((a, b)) = pair {
                g[axis] = (u[*b] - u[*a]) * self.inv_h;
            }
        }
        g
    }

    /// `ln sum_terms weight |g|^p`; `-inf` for a constant field.
    pub fn log_power_sum(&self, u: &[f64], p: f64) -> f64 {
        let logs: Vec<f64> = (0..self.terms.len())
            .filter_map(|k| {
                let g = self.grad(u, k);
                let n = g[0].hypot(g[1]);
                (n > 0.0).then(|| p * n.ln() + self.terms[k].weight.ln())
            })
            .collect();
        if logs.is_empty() {
            f64::NEG_INFINITY
        } else {
            log_sum_exp(&logs)
        }
    }

    /// `(1/p) sum_terms weight |g|^p`, through log space above
    /// [`LOG_SPACE_EXPONENT`].
    pub fn energy(&self, u: &[f64], p: f64) -> f64 {
        if p > LOG_SPACE_EXPONENT {
            (self.log_power_sum(u, p) - p.ln()).exp()
        } else {
            (0..self.terms.len())
                .map(|k| {
                    let g = self.grad(u, k);
                    g[0].hypot(g[1]).powf(p) * self.terms[k].weight
                })
                .sum::<f64>()
                / p
        }
    }
}

pub fn node_gradient(dom: &GridDomain, u: &ScalarField, node: usize) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (axis, slot) in g.iter_mut().enumerate().take(dom.dim()) {
        if let Some((a, b)) = axis_pair(dom, node, axis) {
            *slot = (u.values[b] - u.values[a]) / dom.h();
        }
    }
    g
}

pub fn gradient_norms(dom: &GridDomain, u: &ScalarField) -> Vec<f64> {
    (0..dom.num_nodes())
        .map(|i| {
            let g = node_gradient(dom, u, i);
            g[0].hypot(g[1])
        })
        .collect()
}

/// `(1/p) sum vol |grad u|^p` with the default [`GradientScheme`].
pub fn p_dirichlet_energy(dom: &GridDomain, u: &ScalarField, p: f64) -> Result<f64> {
    p_dirichlet_energy_with(dom, u, p, GradientScheme::default())
}

pub fn p_dirichlet_energy_with(dom: &GridDomain, u: &ScalarField, p: f64, scheme: GradientScheme) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidInput(format!("exponent must exceed 1, got {p}")));
    }
    let energy = GradientStencil::new(dom, scheme).energy(&u.values, p);
    if energy.is_finite() {
        Ok(energy)
    } else {
        Err(Error::Overflow { p })
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Gradient of [`p_dirichlet_energy`] with respect to the node values.
pub fn energy_gradient(dom: &GridDomain, u: &ScalarField, p: f64) -> Vec<f64> {
    let st = GradientStencil::new(dom, GradientScheme::default());
    energy_gradient_with(&st, &u.values, p)
}

pub(crate) fn energy_gradient_with(st: &GradientStencil, u: &[f64], p: f64) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for (k, term) in st.terms.iter().enumerate() {
        let g = st.grad(u, k);
        let norm = g[0].hypot(g[1]);
        if norm == 0.0 {
            continue;
        }
        let c = term.weight * norm.powf(p - 2.0) * st.inv_h;
        for (axis, pair) in term.pairs.iter().enumerate() {
            if let Some((a, b)) = pair {
                out[*b] += c * g[axis];
                out[*a] -= c * g[axis];
            }
        }
    }
    out
}

/// Largest edge slope magnitude: the graph-metric Lipschitz constant.
pub fn lipschitz_constant(dom: &GridDomain, u: &ScalarField) -> f64 {
    edge_gradient(dom, u).slopes.iter().fold(0.0, |m, s| m.max(s.abs()))
}

/// `(sum |u|^m vol)^(1/m)`, evaluated relative to the sup norm so large `m`
/// does not underflow.
pub fn lm_norm(dom: &GridDomain, u: &ScalarField, m: f64) -> Result<f64> {
    if !(m >= 1.0) {
        return Err(Error::InvalidInput(format!("norm exponent must be >= 1, got {m}")));
    }
    let sup = sup_norm(u);
    if sup == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = u
        .values
        .iter()
        .zip(dom.node_volumes())
        .map(|(x, v)| (x.abs() / sup).powf(m) * v)
        .sum();
    Ok(sup * s.powf(1.0 / m))
}

pub fn sup_norm(u: &ScalarField) -> f64 {
    u.values.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Normalized discrete infinity Laplacian
/// `(s_max + s_min) / ((l_max + l_min) / 2)`, where `s_max`, `s_min` are the
/// steepest ascent and descent slopes to stencil neighbors and `l_*` the
/// corresponding edge lengths. Affine fields give zero wherever the stencil is
/// symmetric; `|x|` at its vertex gives `+2/h`, `-|x|` gives `-2/h`.
pub fn infinity_laplacian(dom: &GridDomain, u: &ScalarField, node: usize) -> Result<f64> {
    let nbrs = dom.neighbors(node);
    if nbrs.len() < 2 {
        return Err(Error::InsufficientStencil { node, neighbors: nbrs.len() });
    }
    let u0 = u.values[node];
    let mut hi = (f64::NEG_INFINITY, 0.0, usize::MAX);
    let mut lo = (f64::INFINITY, 0.0, usize::MAX);
    for nb in nbrs {
        let s = (u.values[nb.node] - u0) / nb.length;
        if s > hi.0 {
            hi = (s, nb.length, nb.node);
        }
        if s < lo.0 {
            lo = (s, nb.length, nb.node);
        }
    }
    if hi.2 == lo.2 {
        // all slopes equal: pair the first neighbor with any other one
        let other = nbrs.iter().find(|nb| nb.node != hi.2).expect("two neighbors");
        lo = ((u.values[other.node] - u0) / other.length, other.length, other.node);
    }
    Ok((hi.0 + lo.0) / (0.5 * (hi.1 + lo.1)))
}

/// A twice differentiable test function with analytic derivatives.
pub trait SmoothField {
    fn value(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
    fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2];
}

/// `Delta_p u = |grad u|^(p-2) (Delta u + (p - 2) Delta_inf u / |grad u|^2)`
/// evaluated from the supplied derivatives.
pub fn p_laplacian_pointwise(u: &dyn SmoothField, x: [f64; 2], p: f64) -> Result<f64> {
    let g = u.gradient(x);
    let hess = u.hessian(x);
    let lap = hess[0][0] + hess[1][1];
    let norm2 = g[0] * g[0] + g[1] * g[1];
    if norm2 == 0.0 {
        return if p < 2.0 {
            Err(Error::DegenerateGradient)
        } else if p == 2.0 {
            Ok(lap)
        } else {
            Ok(0.0)
        };
    }
    let hg = [
        hess[0][0] * g[0] + hess[0][1] * g[1],
        hess[1][0] * g[0] + hess[1][1] * g[1],
    ];
    let inf_lap = g[0] * hg[0] + g[1] * hg[1];
    Ok(norm2.powf(0.5 * (p - 2.0)) * (lap + (p - 2.0) * inf_lap / norm2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Stencil;
    use approx::assert_abs_diff_eq;

    struct Quadratic;

    impl SmoothField for Quadratic {
        fn value(&self, x: [f64; 2]) -> f64 {
            x[0] * x[0]
        }
        fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
            [2.0 * x[0], 0.0]
        }
        fn hessian(&self, _x: [f64; 2]) -> [[f64; 2]; 2] {
            [[2.0, 0.0], [0.0, 0.0]]
        }
    }

    struct Linear;

    impl SmoothField for Linear {
        fn value(&self, x: [f64; 2]) -> f64 {
            x[0]
        }
        fn gradient(&self, _x: [f64; 2]) -> [f64; 2] {
            [1.0, 0.0]
        }
        fn hessian(&self, _x: [f64; 2]) -> [[f64; 2]; 2] {
            [[0.0; 2]; 2]
        }
    }

    #[test]
    fn gradients_of_affine_fields() {
        let line = GridDomain::interval(-1.0, 1.0, 11).unwrap();
        let u = ScalarField::from_fn(&line, |x| x[0]);
        for i in 0..line.num_nodes() {
            assert_abs_diff_eq!(node_gradient(&line, &u, i)[0], 1.0, epsilon = 1e-12);
        }
        let c = ScalarField::new(vec![3.0; line.num_nodes()]);
        assert_eq!(node_gradient(&line, &c, 4), [0.0, 0.0]);

        let sq = GridDomain::unit_square(6, Stencil::Diagonal).unwrap();
        let u = ScalarField::from_fn(&sq, |x| x[0] + 2.0 * x[1]);
        for i in 0..sq.num_nodes() {
            let g = node_gradient(&sq, &u, i);
            assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g[1], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_examples() {
        let line = GridDomain::interval(-1.0, 1.0, 201).unwrap();
        let u = ScalarField::from_fn(&line, |x| x[0]);
        for p in [1.5, 2.0, 7.0, 100.0] {
            assert_abs_diff_eq!(p_dirichlet_energy(&line, &u, p).unwrap(), 2.0 / p, epsilon = 1e-12);
        }
        let c = ScalarField::new(vec![1.0; line.num_nodes()]);
        assert_eq!(p_dirichlet_energy(&line, &c, 3.0).unwrap(), 0.0);
        assert_eq!(p_dirichlet_energy(&line, &c, 300.0).unwrap(), 0.0);

        let sq = ScalarField::from_fn(&line, |x| x[0] * x[0]);
        let e = p_dirichlet_energy(&line, &sq, 2.0).unwrap();
        assert_abs_diff_eq!(e, 0.5 * 8.0 / 3.0, epsilon = 4.0 * line.h());
        assert!(p_dirichlet_energy(&line, &u, 1.0).is_err());
    }

    #[test]
    fn energy_overflow_is_flagged() {
        let line = GridDomain::interval(0.0, 1.0, 5).unwrap();
        let u = ScalarField::from_fn(&line, |x| 1e3 * x[0]);
        assert!(matches!(p_dirichlet_energy(&line, &u, 200.0), Err(Error::Overflow { .. })));
        // log-space keeps moderate large-p values finite and exact
        let v = ScalarField::from_fn(&line, |x| 3.0 * x[0]);
        let e = p_dirichlet_energy(&line, &v, 1000.0).unwrap_err();
        assert!(matches!(e, Error::Overflow { .. }));
        let w = ScalarField::from_fn(&line, |x| 1.01 * x[0]);
        let got = p_dirichlet_energy(&line, &w, 1000.0).unwrap();
        assert_abs_diff_eq!(got, 1.01f64.powf(1000.0) / 1000.0, epsilon = 1e-12 * got);
    }

    #[test]
    fn lipschitz_examples() {
        let line = GridDomain::interval(-1.0, 1.0, 21).unwrap();
        assert_abs_diff_eq!(
            lipschitz_constant(&line, &ScalarField::from_fn(&line, |x| x[0])),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            lipschitz_constant(&line, &ScalarField::from_fn(&line, |x| 2.0 * x[0])),
            2.0,
            epsilon = 1e-12
        );
        let sq = GridDomain::l_shape(17, Stencil::Knight).unwrap();
        let g = crate::domain::geodesic_distance(&sq, 3).unwrap();
        assert_abs_diff_eq!(
            lipschitz_constant(&sq, &ScalarField::new(g.dist)),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lipschitz_matches_gradient_for_affine() {
        let sq = GridDomain::unit_square(9, Stencil::Axis).unwrap();
        let u = ScalarField::from_fn(&sq, |x| 0.3 * x[0] - 1.2 * x[1]);
        let max_grad = gradient_norms(&sq, &u).into_iter().fold(0.0, f64::max);
        let lip = lipschitz_constant(&sq, &u);
        assert!(lip <= max_grad * Stencil::Axis.metric_constant(2) + 1e-12);

        let line = GridDomain::interval(-1.0, 1.0, 9).unwrap();
        let v = ScalarField::from_fn(&line, |x| -3.0 * x[0] + 0.5);
        let max_grad = gradient_norms(&line, &v).into_iter().fold(0.0, f64::max);
        assert_abs_diff_eq!(lipschitz_constant(&line, &v), max_grad, epsilon = 1e-12);
    }

    #[test]
    fn norms() {
        let line = GridDomain::interval(-1.0, 1.0, 401).unwrap();
        let one = ScalarField::new(vec![1.0; line.num_nodes()]);
        for m in [1.0, 2.0, 5.0] {
            assert_abs_diff_eq!(lm_norm(&line, &one, m).unwrap(), 2f64.powf(1.0 / m), epsilon = 1e-12);
        }
        assert_eq!(sup_norm(&one), 1.0);
        let zero = ScalarField::zeros(line.num_nodes());
        assert_eq!(lm_norm(&line, &zero, 3.0).unwrap(), 0.0);
        assert_eq!(sup_norm(&zero), 0.0);

        // closed-form oracle (2 / (m + 1))^(1/m) for u(x) = x
        let x = ScalarField::from_fn(&line, |p| p[0]);
        let mut prev = 0.0;
        for m in [2.0, 8.0, 32.0, 128.0] {
            let got = lm_norm(&line, &x, m).unwrap();
            let exact = (2.0 / (m + 1.0)).powf(1.0 / m);
            assert_abs_diff_eq!(got, exact, epsilon = 2e-3);
            assert!(got > prev);
            prev = got;
        }
        assert!((sup_norm(&x) - prev).abs() <= 0.05 * sup_norm(&x));
    }

    #[test]
    fn infinity_laplacian_examples() {
        let line = GridDomain::interval(-2.0, 2.0, 401).unwrap();
        let h = line.h();
        let affine = ScalarField::from_fn(&line, |x| 3.0 * x[0] - 1.0);
        for i in 1..line.num_nodes() - 1 {
            assert_abs_diff_eq!(infinity_laplacian(&line, &affine, i).unwrap(), 0.0, epsilon = 1e-9);
        }
        let quad = ScalarField::from_fn(&line, |x| x[0] * x[0]);
        let at_one = line.nearest_node([1.0, 0.0]);
        assert_abs_diff_eq!(infinity_laplacian(&line, &quad, at_one).unwrap(), 2.0, epsilon = 1e-6);

        let origin = line.nearest_node([0.0, 0.0]);
        let cone = ScalarField::from_fn(&line, |x| x[0].abs());
        assert_abs_diff_eq!(infinity_laplacian(&line, &cone, origin).unwrap(), 2.0 / h, epsilon = 1e-6);
        let peak = cone.scaled(-1.0);
        assert_abs_diff_eq!(infinity_laplacian(&line, &peak, origin).unwrap(), -2.0 / h, epsilon = 1e-6);

        assert!(matches!(
            infinity_laplacian(&line, &affine, 0),
            Err(Error::InsufficientStencil { neighbors: 1, .. })
        ));
    }

    #[test]
    fn infinity_laplacian_affine_2d_interior() {
        for stencil in [Stencil::Axis, Stencil::Diagonal, Stencil::Knight] {
            let sq = GridDomain::unit_square(9, stencil).unwrap();
            let u = ScalarField::from_fn(&sq, |x| 0.7 * x[0] - 0.2 * x[1]);
            for i in (0..sq.num_nodes()).filter(|&i| sq.is_interior(i)) {
                assert_abs_diff_eq!(infinity_laplacian(&sq, &u, i).unwrap(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn decomposition_formula() {
        for p in [1.5, 2.0, 4.0, 30.0] {
            assert_eq!(p_laplacian_pointwise(&Linear, [0.3, 0.0], p).unwrap(), 0.0);
        }
        assert_abs_diff_eq!(p_laplacian_pointwise(&Quadratic, [1.0, 0.0], 2.0).unwrap(), 2.0);
        assert_abs_diff_eq!(
            p_laplacian_pointwise(&Quadratic, [1.0, 0.0], 4.0).unwrap(),
            24.0,
            epsilon = 1e-12
        );
        assert_eq!(
            p_laplacian_pointwise(&Quadratic, [0.0, 0.0], 1.5).unwrap_err(),
            Error::DegenerateGradient
        );
        assert_eq!(Quadratic.value([2.0, 0.0]), 4.0);
        assert_eq!(Linear.value([2.0, 0.0]), 2.0);
    }

    #[test]
    fn decomposition_matches_divergence_form() {
        // 1D: (|u'|^{p-2} u')' by central differences of the flux
        let p = 5.0;
        let x = 0.7;
        let flux = |x: f64| {
            let d: f64 = 2.0 * x;
            d.abs().powf(p - 2.0) * d
        };
        let dx = 1e-5;
        let fd = (flux(x + dx) - flux(x - dx)) / (2.0 * dx);
        let exact = p_laplacian_pointwise(&Quadratic, [x, 0.0], p).unwrap();
        assert_abs_diff_eq!(fd, exact, epsilon = 1e-6 * exact.abs());
    }
}
