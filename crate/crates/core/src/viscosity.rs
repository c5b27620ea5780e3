//! Region classification and discrete residuals of the limiting PDE
//!
//! ```text
//! min(|grad u| - 1, -Delta_inf u) = 0   on {mu > 0}
//!           -Delta_inf u = 0            off supp mu
//! max(1 - |grad u|, -Delta_inf u) = 0   on {mu < 0}
//!          max u + min u = 0
//! ```
//!
//! Residuals are pointwise values of the discrete operators at interior nodes.
//! Nodes where the infinity Laplacian exceeds `KINK_FACTOR / h` in magnitude
//! are slope jumps; they are listed separately and left out of the norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{infinity_laplacian, node_gradient, ScalarField};
use crate::domain::GridDomain;
use crate::error::{Error, Result};
use crate::measure::SignedMeasure;

pub const KINK_FACTOR: f64 = 0.5;
/// Default region threshold relative to the largest density magnitude.
pub const DEFAULT_RELATIVE_THRESHOLD: f64 = 1e-10;
/// Default dilation radius in grid spacings.
pub const DEFAULT_DILATION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Positive,
    Negative,
    FarZero,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLabels {
    pub labels: Vec<Region>,
    pub threshold: f64,
    pub dilation_radius: f64,
}

impl RegionLabels {
    pub fn count(&self, region: Region) -> usize {
        self.labels.iter().filter(|&&r| r == region).count()
    }

    pub fn nodes(&self, region: Region) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == region).collect()
    }
}

/// Labels nodes by the sign of `density`. A node is `FarZero` when no node
/// within Euclidean distance `dilation_radius`, and none of its stencil
/// neighbors, has `|density| > threshold`.
pub fn classify_regions(dom: &GridDomain, density: &[f64], threshold: f64, dilation_radius: f64) -> Result<RegionLabels> {
    if density.len() != dom.num_nodes() {
        return Err(Error::InvalidInput("density size does not match the domain".into()));
    }
    if !(threshold >= 0.0 && dilation_radius >= 0.0) {
        return Err(Error::InvalidInput("threshold and dilation radius must be nonnegative".into()));
    }
    let n = dom.num_nodes();
    let h = dom.h();
    let reach = (dilation_radius / h + 1e-9).floor() as isize;
    let r2 = (dilation_radius + 1e-9 * h).powi(2);
    let mut near = vec![false; n];
    for i in (0..n).filter(|&i| density[i].abs() > threshold) {
        near[i] = true;
        dom.neighbors(i).iter().for_each(|nb| near[nb.node] = true);
        let (ix, iy) = dom.grid_index(i);
        let ry = if dom.dim() == 2 { reach } else { 0 };
        for dy in -ry..=ry {
            for dx in -reach..=reach {
                let (jx, jy) = (ix as isize + dx, iy as isize + dy);
                if jx < 0 || jy < 0 {
                    continue;
                }
                let d2 = ((dx * dx + dy * dy) as f64) * h * h;
                if d2 > r2 {
                    continue;
                }
                if let Some(j) = dom.node_at(jx as usize, jy as usize) {
                    near[j] = true;
                }
            }
        }
    }
    let labels = (0..n)
        .map(|i| {
            if density[i] > threshold {
                Region::Positive
            } else if density[i] < -threshold {
                Region::Negative
            } else if !near[i] {
                Region::FarZero
            } else {
                Region::Unclassified
            }
        })
        .collect();
    Ok(RegionLabels { labels, threshold, dilation_radius })
}

/// [`classify_regions`] on the density of `mu` with the default threshold
/// `1e-10 max |density|` and dilation radius `2h`.
pub fn classify_measure(dom: &GridDomain, mu: &SignedMeasure) -> Result<RegionLabels> {
    let density = mu.density(dom);
    let max = density.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    classify_regions(dom, &density, DEFAULT_RELATIVE_THRESHOLD * max, DEFAULT_DILATION * dom.h())
}

#[derive(Debug, Clone, Copy)]
struct Local {
    grad: f64,
    lap: f64,
    kink: bool,
}

fn local_values(dom: &GridDomain, u: &ScalarField) -> Vec<Option<Local>> {
    let kink = KINK_FACTOR / dom.h();
    (0..dom.num_nodes())
        .into_par_iter()
        .map(|i| {
            if !dom.is_interior(i) {
                return None;
            }
            let g = node_gradient(dom, u, i);
            let lap = infinity_laplacian(dom, u, i).ok()?;
            Some(Local { grad: g[0].hypot(g[1]), lap, kink: lap.abs() > kink })
        })
        .collect()
}

fn max_abs(values: &[Option<f64>], skip: &[bool]) -> f64 {
    values
        .iter()
        .zip(skip)
        .filter(|(_, &k)| !k)
        .filter_map(|(v, _)| *v)
        .fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `min(|grad u| - 1, -Delta u)` on Positive interior nodes.
    pub r_plus: Vec<Option<f64>>,
    /// `-Delta u` on FarZero interior nodes.
    pub r_zero: Vec<Option<f64>>,
    /// `max(1 - |grad u|, -Delta u)` on Negative interior nodes.
    pub r_minus: Vec<Option<f64>>,
    pub r_plus_norm: f64,
    pub r_zero_norm: f64,
    pub r_minus_norm: f64,
    /// `max u + min u`.
    pub mean_value_residual: f64,
    pub kink_nodes: Vec<usize>,
    pub kink_threshold: f64,
}

impl ResidualReport {
    pub fn max_norm(&self) -> f64 {
        self.r_plus_norm.max(self.r_zero_norm).max(self.r_minus_norm)
    }
}

pub fn pde_residuals(dom: &GridDomain, u: &ScalarField, labels: &RegionLabels) -> Result<ResidualReport> {
    let n = dom.num_nodes();
    if u.len() != n || labels.labels.len() != n {
        return Err(Error::InvalidInput("field, labels and domain sizes differ".into()));
    }
    let local = local_values(dom, u);
    let mut r_plus = vec![None; n];
    let mut r_zero = vec![None; n];
    let mut r_minus = vec![None; n];
    let mut kink = vec![false; n];
    for i in 0..n {
        let Some(l) = local[i] else { continue };
        kink[i] = l.kink;
        match labels.labels[i] {
            Region::Positive => r_plus[i] = Some((l.grad - 1.0).min(-l.lap)),
            Region::Negative => r_minus[i] = Some((1.0 - l.grad).max(-l.lap)),
            Region::FarZero => r_zero[i] = Some(-l.lap),
            Region::Unclassified => {}
        }
    }
    let kink_nodes = (0..n).filter(|&i| kink[i] && labels.labels[i] != Region::Unclassified).collect();
    Ok(ResidualReport {
        r_plus_norm: max_abs(&r_plus, &kink),
        r_zero_norm: max_abs(&r_zero, &kink),
        r_minus_norm: max_abs(&r_minus, &kink),
        r_plus,
        r_zero,
        r_minus,
        mean_value_residual: u.max() + u.min(),
        kink_nodes,
        kink_threshold: KINK_FACTOR / dom.h(),
    })
}

/// `|max u + min u| <= tol (max u - min u)`.
pub fn mean_value_check(u: &ScalarField, tol: f64) -> bool {
    let (hi, lo) = (u.max(), u.min());
    (hi + lo).abs() <= tol * (hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EikonalReport {
    /// `max ||grad u| - 1|` over Positive and Negative non-kink interior nodes.
    pub eikonal_positive: f64,
    pub eikonal_negative: f64,
    /// Largest violation of `-Delta u >= 0` on Positive.
    pub positive_sign_violation: f64,
    /// Largest violation of `-Delta u <= 0` on Negative.
    pub negative_sign_violation: f64,
    /// `max |Delta u|` on FarZero non-kink interior nodes.
    pub far_zero_laplacian: f64,
    pub kink_nodes: Vec<usize>,
    pub evaluated: usize,
}

pub fn eikonal_split_residuals(dom: &GridDomain, u: &ScalarField, labels: &RegionLabels) -> Result<EikonalReport> {
    let n = dom.num_nodes();
    if u.len() != n || labels.labels.len() != n {
        return Err(Error::InvalidInput("field, labels and domain sizes differ".into()));
    }
    let local = local_values(dom, u);
    let mut rep = EikonalReport {
        eikonal_positive: 0.0,
        eikonal_negative: 0.0,
        positive_sign_violation: 0.0,
        negative_sign_violation: 0.0,
        far_zero_laplacian: 0.0,
        kink_nodes: Vec::new(),
        evaluated: 0,
    };
    for i in 0..n {
        let Some(l) = local[i] else { continue };
        let region = labels.labels[i];
        if region == Region::Unclassified {
            continue;
        }
        if l.kink {
            rep.kink_nodes.push(i);
            continue;
        }
        rep.evaluated += 1;
        let eik = (l.grad - 1.0).abs();
        match region {
            Region::Positive => {
                rep.eikonal_positive = rep.eikonal_positive.max(eik);
                rep.positive_sign_violation = rep.positive_sign_violation.max(l.lap.max(0.0));
            }
            Region::Negative => {
                rep.eikonal_negative = rep.eikonal_negative.max(eik);
                rep.negative_sign_violation = rep.negative_sign_violation.max((-l.lap).max(0.0));
            }
            Region::FarZero => rep.far_zero_laplacian = rep.far_zero_laplacian.max(l.lap.abs()),
            Region::Unclassified => {}
        }
    }
    Ok(rep)
}

/// The family `u_t`: `|x + t| - t` on `[-1, -1/2]`, `x` on `(-1/2, 1/2)`,
/// `t - |x - t|` on `[1/2, 1]`, for `t` in `[1/2, 1]`.
pub fn ut_family(x: f64, t: f64) -> Result<f64> {
    if !(0.5..=1.0).contains(&t) {
        return Err(Error::DomainError(format!("t = {t} outside [0.5, 1]")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::DomainError(format!("x = {x} outside [-1, 1]")));
    }
    Ok(if x <= -0.5 {
        (x + t).abs() - t
    } else if x < 0.5 {
        x
    } else {
        t - (x - t).abs()
    })
}
