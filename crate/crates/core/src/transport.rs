//! Geodesic Wasserstein-1 and Kantorovich-Rubinstein norms by min-cost flow.
//!
//! Masses are rounded to integers at a power-of-two scale and routed by
//! successive shortest paths with Johnson potentials. The final node prices
//! are the dual certificate.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::calculus::{lipschitz_constant, ScalarField};
use crate::domain::{geodesic_diameter, GridDomain, HeapItem};
use crate::error::{Error, Result};
use crate::measure::{check_compatibility, SignedMeasure};

/// Relative zero-mass tolerance for transport inputs.
pub const BALANCE_TOL: f64 = 1e-10;
/// Largest total positive mass after integer scaling.
const MASS_BITS: i32 = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportResult {
    pub value: f64,
    /// Dual certificate: graph-1-Lipschitz, `sum u mu = value` at optimum.
    pub potential: ScalarField,
    /// `value - sum potential * mu`.
    pub gap: f64,
    /// Integer masses are `round(weight * scale)`.
    pub scale: f64,
    pub supply: Vec<i64>,
    /// Net integer flow along each domain edge, positive from `a` to `b`.
    pub edge_flow: Vec<i64>,
    /// Net integer flow from each node into the bank (KR mode only).
    pub bank_flow: Option<Vec<i64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectedFlow {
    pub from: usize,
    pub to: usize,
    pub mass: f64,
}

impl TransportResult {
    /// Nonzero flows on domain edges, oriented along the flow.
    pub fn directed_flows(&self, dom: &GridDomain) -> Vec<DirectedFlow> {
        dom.edges()
            .iter()
            .zip(&self.edge_flow)
            .filter(|(_, &f)| f != 0)
            .map(|(e, &f)| {
                let (from, to) = if f > 0 { (e.a, e.b) } else { (e.b, e.a) };
                DirectedFlow { from, to, mass: f.unsigned_abs() as f64 / self.scale }
            })
            .collect()
    }

    /// Largest integer mismatch between net outflow and supply over all nodes.
    pub fn conservation_defect(&self, dom: &GridDomain) -> i64 {
        let mut out = vec![0i64; dom.num_nodes()];
        for (e, &f) in dom.edges().iter().zip(&self.edge_flow) {
            out[e.a] += f;
            out[e.b] -= f;
        }
        if let Some(bank) = &self.bank_flow {
            for (o, b) in out.iter_mut().zip(bank) {
                *o += b;
            }
        }
        out.iter().zip(&self.supply).map(|(o, s)| (o - s).abs()).max().unwrap_or(0)
    }

    /// Largest `|u(a) - u(b)| - length` over domain edges; `<= 0` when feasible.
    pub fn dual_infeasibility(&self, dom: &GridDomain) -> f64 {
        let u = &self.potential.values;
        dom.edges()
            .iter()
            .map(|e| (u[e.a] - u[e.b]).abs() - e.length)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `length - |u(a) - u(b)|` over edges carrying flow.
    pub fn slackness_violation(&self, dom: &GridDomain) -> f64 {
        let u = &self.potential.values;
        dom.edges()
            .iter()
            .zip(&self.edge_flow)
            .filter(|(_, &f)| f != 0)
            .map(|(e, &f)| {
                // flow runs from high to low potential
                let drop = if f > 0 { u[e.a] - u[e.b] } else { u[e.b] - u[e.a] };
                (e.length - drop).abs()
            })
            .fold(0.0, f64::max)
    }
}

struct Arc {
    to: usize,
    edge: usize,
    /// +1 when the arc runs along the stored edge orientation.
    dir: i64,
}

struct Network {
    adj: Vec<Vec<Arc>>,
    lengths: Vec<f64>,
}

impl Network {
    fn new(dom: &GridDomain, bank: bool) -> Self {
        let n = dom.num_nodes();
        let mut adj: Vec<Vec<Arc>> = (0..n + bank as usize).map(|_| Vec::new()).collect();
        let mut lengths = Vec::with_capacity(dom.edges().len() + if bank { n } else { 0 });
        for (k, e) in dom.edges().iter().enumerate() {
            adj[e.a].push(Arc { to: e.b, edge: k, dir: 1 });
            adj[e.b].push(Arc { to: e.a, edge: k, dir: -1 });
            lengths.push(e.length);
        }
        if bank {
            for v in 0..n {
                let k = lengths.len();
                adj[v].push(Arc { to: n, edge: k, dir: 1 });
                adj[n].push(Arc { to: v, edge: k, dir: -1 });
                lengths.push(1.0);
            }
        }
        Network { adj, lengths }
    }

    /// Successive shortest paths. Returns net edge flows and node prices.
    fn solve(&self, supply: &[i64]) -> (Vec<i64>, Vec<f64>) {
        let n = self.adj.len();
        let mut flow = vec![0i64; self.lengths.len()];
        let mut excess = supply.to_vec();
        let mut price = vec![0.0f64; n];
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();

        while excess.iter().any(|&x| x > 0) {
            dist.iter_mut().for_each(|d| *d = f64::INFINITY);
            pred.iter_mut().for_each(|p| *p = None);
            done.iter_mut().for_each(|d| *d = false);
            heap.clear();
            for v in 0..n {
                if excess[v] > 0 {
                    dist[v] = 0.0;
                    heap.push(HeapItem { key: 0.0, node: v });
                }
            }
            let mut target = None;
            while let Some(HeapItem { key, node }) = heap.pop() {
                if done[node] || key > dist[node] {
                    continue;
                }
                done[node] = true;
                if excess[node] < 0 {
                    target = Some(node);
                    break;
                }
                for (slot, arc) in self.adj[node].iter().enumerate() {
                    let len = self.lengths[arc.edge];
                    let cost = if flow[arc.edge] * arc.dir < 0 { -len } else { len };
                    let reduced = (cost + price[node] - price[arc.to]).max(0.0);
                    let cand = key + reduced;
                    if cand < dist[arc.to] {
                        dist[arc.to] = cand;
                        pred[arc.to] = Some((node, slot));
                        heap.push(HeapItem { key: cand, node: arc.to });
                    }
                }
            }
            let t = target.expect("connected network reaches a deficit");
            let dt = dist[t];
            for v in 0..n {
                price[v] += dist[v].min(dt);
            }

            let mut amount = -excess[t];
            let mut v = t;
            while let Some((u, slot)) = pred[v] {
                let arc = &self.adj[u][slot];
                let f = flow[arc.edge] * arc.dir;
                if f < 0 {
                    amount = amount.min(-f);
                }
                v = u;
            }
            let s = v;
            amount = amount.min(excess[s]);
            let mut v = t;
            while let Some((u, slot)) = pred[v] {
                let arc = &self.adj[u][slot];
                flow[arc.edge] += amount * arc.dir;
                v = u;
            }
            excess[s] -= amount;
            excess[t] += amount;
        }
        (flow, price)
    }
}

/// Integer supplies `round(w * scale)` with a power-of-two scale keeping the
/// positive total below `2^50`; the rounding imbalance is moved to the node of
/// largest magnitude so the integers balance exactly.
fn integer_supplies(mu: &SignedMeasure) -> (Vec<i64>, f64) {
    let plus: f64 = mu.weights.iter().filter(|&&w| w > 0.0).sum();
    let minus: f64 = -mu.weights.iter().filter(|&&w| w < 0.0).sum::<f64>();
    let total = plus.max(minus);
    if total == 0.0 {
        return (vec![0; mu.len()], 1.0);
    }
    let exp = MASS_BITS - total.log2().ceil() as i32;
    let scale = 2f64.powi(exp);
    let mut s: Vec<i64> = mu.weights.iter().map(|w| (w * scale).round() as i64).collect();
    let imbalance: i64 = s.iter().sum();
    if imbalance != 0 {
        let k = (0..s.len()).max_by_key(|&i| s[i].abs()).unwrap();
        s[k] -= imbalance;
    }
    (s, scale)
}

fn validate(dom: &GridDomain, mu: &SignedMeasure) -> Result<()> {
    if mu.len() != dom.num_nodes() {
        return Err(Error::InvalidInput("measure size does not match the domain".into()));
    }
    if !check_compatibility(mu, BALANCE_TOL) {
        return Err(Error::NotBalanced { mass: mu.total_mass(), variation: mu.total_variation() });
    }
    Ok(())
}

fn transport(dom: &GridDomain, mu: &SignedMeasure, bank: bool) -> Result<TransportResult> {
    validate(dom, mu)?;
    let n = dom.num_nodes();
    let (mut supply, scale) = integer_supplies(mu);
    let net = Network::new(dom, bank);
    if bank {
        supply.push(0);
    }
    let (flow, price) = net.solve(&supply);
    supply.truncate(n);

    let cost: f64 = flow
        .iter()
        .zip(&net.lengths)
        .map(|(&f, l)| f.unsigned_abs() as f64 * l)
        .sum();
    let value = cost / scale;
    let shift = if bank {
        -price[n]
    } else {
        let (lo, hi) = price[..n]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if lo.is_finite() {
            -0.5 * (lo + hi)
        } else {
            0.0
        }
    };
    let potential = ScalarField::new(price[..n].iter().map(|p| -(p + shift)).collect());
    let gap = value - dual_pairing(&potential, mu);
    let m = dom.edges().len();
    Ok(TransportResult {
        value,
        gap,
        potential,
        scale,
        supply,
        edge_flow: flow[..m].to_vec(),
        bank_flow: bank.then(|| flow[m..].to_vec()),
    })
}

/// `min sum length * flow` over flows routing `mu+` to `mu-` on the domain graph.
pub fn w1_geodesic(dom: &GridDomain, mu: &SignedMeasure) -> Result<TransportResult> {
    transport(dom, mu, false)
}

/// Same network plus a bank node joined to every node by a unit-cost edge; the
/// potential is shifted so the bank sits at zero.
pub fn kr_norm(dom: &GridDomain, mu: &SignedMeasure) -> Result<TransportResult> {
    transport(dom, mu, true)
}

/// `sum u * weights`.
pub fn dual_pairing(u: &ScalarField, mu: &SignedMeasure) -> f64 {
    u.values.iter().zip(&mu.weights).map(|(a, w)| a * w).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    pub value: f64,
    pub lipschitz: f64,
    pub feasible: bool,
}

/// Pairing together with the feasibility flag `lipschitz_constant(u) <= 1 + tol`.
pub fn dual_pairing_report(dom: &GridDomain, u: &ScalarField, mu: &SignedMeasure, tol: f64) -> PairingReport {
    let lipschitz = lipschitz_constant(dom, u);
    PairingReport { value: dual_pairing(u, mu), lipschitz, feasible: lipschitz <= 1.0 + tol }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub w1: f64,
    pub pairing: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub lipschitz: f64,
}

/// `W1(mu) - sum u mu`, the defect of `u` as a Kantorovich potential.
pub fn kantorovich_gap(dom: &GridDomain, u: &ScalarField, mu: &SignedMeasure) -> Result<GapReport> {
    let w1 = w1_geodesic(dom, mu)?.value;
    let pairing = dual_pairing(u, mu);
    let gap = w1 - pairing;
    Ok(GapReport {
        w1,
        pairing,
        gap,
        relative_gap: if w1 > 0.0 { gap / w1 } else { 0.0 },
        lipschitz: lipschitz_constant(dom, u),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrSandwich {
    pub kr: f64,
    pub lip_dual: f64,
    pub factor: f64,
    pub lhs_ok: bool,
    pub rhs_ok: bool,
    /// Largest flow-solver gap among the two solves, relative to its value.
    pub max_relative_gap: f64,
}

/// Checks `KR <= Lip* <= max(1, diam / 2) KR` with the graph diameter.
pub fn verify_kr_sandwich(dom: &GridDomain, mu: &SignedMeasure) -> Result<KrSandwich> {
    let kr = kr_norm(dom, mu)?;
    let w1 = w1_geodesic(dom, mu)?;
    let factor = (0.5 * geodesic_diameter(dom)).max(1.0);
    let slack = 1e-9 * w1.value.max(kr.value);
    let rel = |r: &TransportResult| if r.value > 0.0 { r.gap.abs() / r.value } else { r.gap.abs() };
    Ok(KrSandwich {
        kr: kr.value,
        lip_dual: w1.value,
        factor,
        lhs_ok: kr.value <= w1.value + slack,
        rhs_ok: w1.value <= factor * kr.value + slack,
        max_relative_gap: rel(&kr).max(rel(&w1)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{geodesic_distance, Stencil};
    use crate::measure::from_density;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dirac_pair_is_geodesic_distance() {
        let dom = GridDomain::unit_square(9, Stencil::Diagonal).unwrap();
        let (x, y) = (dom.node_at(1, 2).unwrap(), dom.node_at(7, 5).unwrap());
        let mu = SignedMeasure::dirac_pair(dom.num_nodes(), x, y);
        let r = w1_geodesic(&dom, &mu).unwrap();
        let d = geodesic_distance(&dom, x).unwrap().dist[y];
        assert_abs_diff_eq!(r.value, d, epsilon = 1e-12);
        assert!(r.gap.abs() <= 1e-9 * r.value);
        assert_eq!(r.conservation_defect(&dom), 0);
        assert!(r.dual_infeasibility(&dom) <= 1e-12);
        assert!(r.slackness_violation(&dom) <= 1e-9);
        // one path: every node has at most one outgoing flow edge
        let flows = r.directed_flows(&dom);
        let mut outs = vec![0; dom.num_nodes()];
        flows.iter().for_each(|f| outs[f.from] += 1);
        assert!(outs.iter().all(|&k| k <= 1));
        let len: f64 = flows.iter().map(|f| dom.edges().iter().find(|e| (e.a, e.b) == (f.from, f.to) || (e.b, e.a) == (f.from, f.to)).unwrap().length).sum();
        assert_abs_diff_eq!(len, d, epsilon = 1e-12);
    }

    #[test]
    fn sign_instance() {
        let dom = GridDomain::interval(-1.0, 1.0, 201).unwrap();
        let mu = from_density(&dom, |x| x[0].signum() * (x[0] != 0.0) as u8 as f64);
        let r = w1_geodesic(&dom, &mu).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-4);
        assert!(r.gap.abs() <= 1e-9 * r.value);
        // potential is x up to a shift on the support
        for i in 0..dom.num_nodes() {
            assert_abs_diff_eq!(r.potential.values[i], dom.coords(i)[0], epsilon = 1e-9);
        }
        let x = ScalarField::from_fn(&dom, |p| p[0]);
        assert_abs_diff_eq!(dual_pairing(&x, &mu), 1.0, epsilon = 1e-4);
        assert!(dual_pairing_report(&dom, &x, &mu, 1e-12).feasible);
    }

    #[test]
    fn zero_measure() {
        let dom = GridDomain::unit_square(5, Stencil::Axis).unwrap();
        let mu = SignedMeasure::zero(dom.num_nodes());
        assert_eq!(w1_geodesic(&dom, &mu).unwrap().value, 0.0);
        assert_eq!(kr_norm(&dom, &mu).unwrap().value, 0.0);
        let s = verify_kr_sandwich(&dom, &mu).unwrap();
        assert!(s.lhs_ok && s.rhs_ok && s.kr == 0.0 && s.lip_dual == 0.0);
        assert_eq!(dual_pairing(&ScalarField::zeros(dom.num_nodes()), &mu), 0.0);
    }

    #[test]
    fn unbalanced_rejected() {
        let dom = GridDomain::interval(0.0, 1.0, 5).unwrap();
        let mu = SignedMeasure::new(vec![1.0, 0.0, 0.0, 0.0, -0.5]);
        assert!(matches!(w1_geodesic(&dom, &mu), Err(Error::NotBalanced { .. })));
        assert!(matches!(kr_norm(&dom, &mu), Err(Error::NotBalanced { .. })));
    }

    #[test]
    fn kr_routes_through_bank_when_far() {
        let dom = GridDomain::interval(-2.0, 2.0, 41).unwrap();
        let n = dom.num_nodes();
        let far = SignedMeasure::dirac_pair(n, 40, 0);
        let r = kr_norm(&dom, &far).unwrap();
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.potential.values[40], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.potential.values[0], -1.0, epsilon = 1e-12);
        assert!(r.gap.abs() <= 1e-9 * r.value);
        assert_eq!(r.conservation_defect(&dom), 0);
        assert!(r.potential.values.iter().all(|u| u.abs() <= 1.0 + 1e-12));

        let near = SignedMeasure::dirac_pair(n, 25, 10);
        let r = kr_norm(&dom, &near).unwrap();
        assert_abs_diff_eq!(r.value, 1.5, epsilon = 1e-12);
        assert!(r.bank_flow.unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn symmetric_under_negation() {
        let dom = GridDomain::l_shape(9, Stencil::Knight).unwrap();
        let mu = from_density(&dom, |x| (5.0 * x[0]).sin() * (3.0 * x[1]).cos());
        let mu = mu.balanced();
        let a = w1_geodesic(&dom, &mu).unwrap().value;
        let b = w1_geodesic(&dom, &mu.negated()).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12 * a);
    }

    #[test]
    fn gap_of_zero_field_is_value() {
        let dom = GridDomain::interval(-1.0, 1.0, 11).unwrap();
        let mu = SignedMeasure::dirac_pair(11, 8, 1);
        let g = kantorovich_gap(&dom, &ScalarField::zeros(11), &mu).unwrap();
        assert_abs_diff_eq!(g.gap, g.w1, epsilon = 0.0);
        assert_abs_diff_eq!(g.w1, 1.4, epsilon = 1e-12);
    }

    #[test]
    fn interval_sandwich_examples() {
        let dom = GridDomain::interval(-1.0, 1.0, 21).unwrap();
        for (x, y) in [(20, 0), (15, 3), (10, 11)] {
            let mu = SignedMeasure::dirac_pair(21, x, y);
            let s = verify_kr_sandwich(&dom, &mu).unwrap();
            let d = (x as f64 - y as f64).abs() * 0.1;
            assert_abs_diff_eq!(s.lip_dual, d, epsilon = 1e-12);
            assert_abs_diff_eq!(s.kr, d.min(2.0), epsilon = 1e-12);
            assert_abs_diff_eq!(s.factor, 1.0, epsilon = 1e-12);
            assert!(s.lhs_ok && s.rhs_ok);
        }
    }
}
