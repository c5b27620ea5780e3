//! Signed node measures: construction, Jordan parts and mollification.

use serde::{Deserialize, Serialize};

use crate::domain::GridDomain;
use crate::error::{Error, Result};

/// Atomic signed measure, `weights[i] = mu({node i})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedMeasure {
    pub weights: Vec<f64>,
}

impl SignedMeasure {
    pub fn new(weights: Vec<f64>) -> Self {
        SignedMeasure { weights }
    }

    pub fn zero(n: usize) -> Self {
        SignedMeasure { weights: vec![0.0; n] }
    }

    /// Unit point masses `+delta_plus - delta_minus`.
    pub fn dirac_pair(n: usize, plus: usize, minus: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[plus] += 1.0;
        weights[minus] -= 1.0;
        SignedMeasure { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SignedMeasure { weights: self.weights.iter().map(|w| w * factor).collect() }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Mass per unit volume at each node.
    pub fn density(&self, dom: &GridDomain) -> Vec<f64> {
        self.weights
            .iter()
            .zip(dom.node_volumes())
            .map(|(w, v)| w / v)
            .collect()
    }

    /// Nodes carrying nonzero mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] != 0.0).collect()
    }

    /// Removes rounding-level imbalance by shifting every nonzero weight in
    /// proportion to its magnitude.
    pub fn balanced(&self) -> Self {
        let mass = self.total_mass();
        let tv = self.total_variation();
        if mass == 0.0 || tv == 0.0 {
            return self.clone();
        }
        let weights = self.weights.iter().map(|w| w - mass * w.abs() / tv).collect();
        SignedMeasure { weights }
    }
}

/// Nodewise positive and negative parts; `mu = plus - minus`.
pub fn jordan_decompose(mu: &SignedMeasure) -> (SignedMeasure, SignedMeasure) {
    let plus = mu.weights.iter().map(|&w| w.max(0.0)).collect();
    let minus = mu.weights.iter().map(|&w| (-w).max(0.0)).collect();
    (SignedMeasure::new(plus), SignedMeasure::new(minus))
}

/// Relative zero-mass test `|mu(Omega)| <= tol * |mu|(Omega)`.
pub fn check_compatibility(mu: &SignedMeasure, tol: f64) -> bool {
    mu.total_mass().abs() <= tol * mu.total_variation()
}

/// Samples a density at node coordinates and integrates it against the node
/// quadrature weights.
pub fn from_density(dom: &GridDomain, f: impl Fn([f64; 2]) -> f64) -> SignedMeasure {
    let weights = (0..dom.num_nodes())
        .map(|i| f(dom.coords(i)) * dom.node_volume(i))
        .collect();
    SignedMeasure { weights }
}

/// Radial profile supported in the unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `(1 - r)_+`
    Triangle,
    /// Wendland `(1 - r)_+^4 (4 r + 1)`
    Quartic,
}

impl Kernel {
    pub fn profile(self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Triangle => 1.0 - r,
            Kernel::Quartic => (1.0 - r).powi(4) * (4.0 * r + 1.0),
        }
    }
}

/// Discrete convolution with `phi_eps`. Each source node spreads its mass over
/// the active nodes of its `eps`-ball with weights normalized to sum to one,
/// so total mass is preserved even next to the boundary.
pub fn mollify(dom: &GridDomain, mu: &SignedMeasure, eps: f64, kernel: Kernel) -> Result<SignedMeasure> {
    let h = dom.h();
    if !(eps >= h) {
        return Err(Error::EpsilonTooSmall { eps, h });
    }
    let reach = (eps / h).floor() as i64;
    let mut out = vec![0.0; dom.num_nodes()];
    let mut stencil = Vec::new();
    for (src, &w) in mu.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (ix, iy) = dom.grid_index(src);
        let ry = if dom.dim() == 2 { reach } else { 0 };
        stencil.clear();
        let mut total = 0.0;
        for dy in -ry..=ry {
            for dx in -reach..=reach {
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                if jx < 0 || jy < 0 {
                    continue;
                }
                let Some(t) = dom.node_at(jx as usize, jy as usize) else { continue };
                let r = h * ((dx * dx + dy * dy) as f64).sqrt() / eps;
                let k = kernel.profile(r);
                if k > 0.0 {
                    stencil.push((t, k));
                    total += k;
                }
            }
        }
        for &(t, k) in &stencil {
            out[t] += w * k / total;
        }
    }
    Ok(SignedMeasure { weights: out })
}

/// Centered label measure `sum_i (g_i - mean g) delta_{x_i}`.
pub fn poisson_learning_measure(dom: &GridDomain, labeled: &[(usize, f64)]) -> Result<SignedMeasure> {
    if labeled.len() < 2 {
        return Err(Error::TooFewLabels(labeled.len()));
    }
    if let Some(&(bad, _)) = labeled.iter().find(|(n, _)| *n >= dom.num_nodes()) {
        return Err(Error::InvalidInput(format!("labelled node {bad} out of range")));
    }
    let mean = labeled.iter().map(|(_, g)| g).sum::<f64>() / labeled.len() as f64;
    let mut weights = vec![0.0; dom.num_nodes()];
    for &(node, g) in labeled {
        weights[node] += g - mean;
    }
    // absorb rounding so the total is zero in floating point
    let last = labeled.last().expect("nonempty").0;
    let rest: f64 = (0..weights.len()).filter(|&i| i != last).map(|i| weights[i]).sum();
    weights[last] = -rest;
    Ok(SignedMeasure { weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Stencil;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jordan_examples() {
        let (p, m) = jordan_decompose(&SignedMeasure::new(vec![1.0, -1.0, 0.0]));
        assert_eq!(p.weights, vec![1.0, 0.0, 0.0]);
        assert_eq!(m.weights, vec![0.0, 1.0, 0.0]);

        let (p, m) = jordan_decompose(&SignedMeasure::zero(4));
        assert!(p.is_zero() && m.is_zero());

        let (p, m) = jordan_decompose(&SignedMeasure::new(vec![2.0, -0.5, -1.5]));
        assert_eq!(p.weights, vec![2.0, 0.0, 0.0]);
        assert_eq!(m.weights, vec![0.0, 0.5, 1.5]);
        assert_eq!(p.total_mass(), 2.0);
        assert_eq!(m.total_mass(), 2.0);
    }

    #[test]
    fn compatibility_examples() {
        assert!(check_compatibility(&SignedMeasure::new(vec![1.0, -1.0]), 1e-12));
        assert!(!check_compatibility(&SignedMeasure::new(vec![1.0, -0.9]), 1e-12));
        let dom = GridDomain::interval(-1.0, 1.0, 201).unwrap();
        let mu = from_density(&dom, |x| x[0].signum() * (x[0] != 0.0) as i32 as f64);
        assert!(check_compatibility(&mu, 1e-12));
    }

    #[test]
    fn density_sums() {
        let dom = GridDomain::interval(-1.0, 1.0, 201).unwrap();
        assert!(from_density(&dom, |_| 0.0).is_zero());
        let sign = from_density(&dom, |x| if x[0] > 0.0 { 1.0 } else if x[0] < 0.0 { -1.0 } else { 0.0 });
        assert_abs_diff_eq!(sign.total_mass(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sign.total_variation(), 2.0, epsilon = 0.02);

        let sq = GridDomain::unit_square(11, Stencil::Axis).unwrap();
        let one = from_density(&sq, |_| 1.0);
        assert_abs_diff_eq!(one.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mollified_dirac_is_a_hat() {
        let dom = GridDomain::interval(-1.0, 1.0, 21).unwrap();
        let c = dom.nearest_node([0.0, 0.0]);
        let mut mu = SignedMeasure::zero(dom.num_nodes());
        mu.weights[c] = 1.0;
        let m = mollify(&dom, &mu, 2.0 * dom.h(), Kernel::Triangle).unwrap();
        let profile: Vec<f64> = (c - 2..=c + 2).map(|i| m.weights[i]).collect();
        let want = [0.0, 0.25, 0.5, 0.25, 0.0];
        for (got, w) in profile.iter().zip(want) {
            assert_abs_diff_eq!(*got, w, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(m.total_mass(), 1.0, epsilon = 1e-15);
        assert_eq!(m.support().len(), 3);
    }

    #[test]
    fn mollify_edge_cases() {
        let dom = GridDomain::unit_square(21, Stencil::Diagonal).unwrap();
        let zero = SignedMeasure::zero(dom.num_nodes());
        assert!(mollify(&dom, &zero, 0.2, Kernel::Quartic).unwrap().is_zero());
        assert!(matches!(
            mollify(&dom, &zero, 0.5 * dom.h(), Kernel::Quartic),
            Err(Error::EpsilonTooSmall { .. })
        ));

        // corner source: mass stays exact, nothing outside the eps-ball
        let corner = dom.node_at(0, 0).unwrap();
        let far = dom.node_at(10, 10).unwrap();
        let mu = SignedMeasure::dirac_pair(dom.num_nodes(), corner, far);
        let eps = 3.0 * dom.h();
        let m = mollify(&dom, &mu, eps, Kernel::Quartic).unwrap();
        assert!(m.total_mass().abs() <= 1e-12);
        let (plus, _) = jordan_decompose(&m);
        for i in plus.support() {
            let x = dom.coords(i);
            assert!((x[0].powi(2) + x[1].powi(2)).sqrt() < eps);
        }
        assert_abs_diff_eq!(plus.total_mass(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn poisson_learning_examples() {
        let dom = GridDomain::interval(0.0, 1.0, 5).unwrap();
        let mu = poisson_learning_measure(&dom, &[(0, 1.0), (4, -1.0)]).unwrap();
        assert_eq!(mu.weights, vec![1.0, 0.0, 0.0, 0.0, -1.0]);

        let mu = poisson_learning_measure(&dom, &[(1, 1.0), (3, 1.0)]).unwrap();
        assert!(mu.is_zero());

        let mu = poisson_learning_measure(&dom, &[(0, 2.0), (2, 0.0), (4, 1.0)]).unwrap();
        assert_eq!(mu.weights, vec![1.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(mu.total_mass(), 0.0);

        assert_eq!(
            poisson_learning_measure(&dom, &[(0, 1.0)]).unwrap_err(),
            Error::TooFewLabels(1)
        );
    }

    #[test]
    fn balanced_removes_drift() {
        let mu = SignedMeasure::new(vec![1.0, -1.0 + 1e-13, 0.5, -0.5]);
        let b = mu.balanced();
        assert!(b.total_mass().abs() <= 4.0 * f64::EPSILON * b.total_variation());
        assert!(mu.total_mass().abs() > 100.0 * b.total_mass().abs());
    }
}
