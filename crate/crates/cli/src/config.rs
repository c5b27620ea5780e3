//! Experiment descriptors as read from JSON.

use std::path::{Path, PathBuf};

use plimit_core::measure::{from_density, mollify, poisson_learning_measure, Kernel};
use plimit_core::solver::{MeasureFamily, SolveOptions};
use plimit_core::spectral::EigenKind;
use plimit_core::{Error, GridDomain, Mask, SignedMeasure, Stencil};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult, InModule};
use crate::output::read_node_csv;

fn default_stencil() -> Stencil {
    Stencil::Knight
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval {
        a: f64,
        b: f64,
        n: usize,
    },
    Square {
        n: usize,
        #[serde(default = "default_stencil")]
        stencil: Stencil,
    },
    Rectangle {
        nx: usize,
        ny: usize,
        h: f64,
        #[serde(default = "default_stencil")]
        stencil: Stencil,
        #[serde(default)]
        origin: [f64; 2],
    },
    LShape {
        n: usize,
        #[serde(default = "default_stencil")]
        stencil: Stencil,
    },
    /// `#` / `.` text mask; a relative path resolves against the config file.
    Mask {
        path: PathBuf,
        h: f64,
        #[serde(default = "default_stencil")]
        stencil: Stencil,
        #[serde(default)]
        origin: [f64; 2],
    },
}

impl DomainSpec {
    pub fn build(&self, base: &Path) -> CliResult<GridDomain> {
        let dom = match self {
            DomainSpec::Interval { a, b, n } => GridDomain::interval(*a, *b, *n),
            DomainSpec::Square { n, stencil } => GridDomain::unit_square(*n, *stencil),
            DomainSpec::Rectangle { nx, ny, h, stencil, origin } => GridDomain::rectangle(*nx, *ny, *h, *stencil, *origin),
            DomainSpec::LShape { n, stencil } => GridDomain::l_shape(*n, *stencil),
            DomainSpec::Mask { path, h, stencil, origin } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full).map_err(io_err(&full))?;
                Mask::from_text(&text).and_then(|m| GridDomain::build(&m, *h, *stencil, *origin))
            }
        };
        dom.in_module("grid_domain")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifySpec {
    /// Kernel width in grid spacings.
    pub width: f64,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    /// Use width `max(1, width * 2 / p)` at exponent `p`, a family whose weak
    /// limit is the unmollified measure.
    #[serde(default)]
    pub shrink_with_p: bool,
}

fn default_kernel() -> Kernel {
    Kernel::Quartic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelPoint {
    pub at: [f64; 2],
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMass {
    pub at: [f64; 2],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Density `sign(x - center)`.
    Sign {
        #[serde(default)]
        center: f64,
    },
    DiracPair {
        plus: [f64; 2],
        minus: [f64; 2],
        #[serde(default)]
        mollify: Option<MollifySpec>,
    },
    /// CSV rows `node_index,weight`; unlisted nodes carry no mass.
    Weights { path: PathBuf },
    /// Point masses snapped to the nearest node.
    Points { entries: Vec<PointMass> },
    /// Centered label measure for Poisson learning.
    Labels { points: Vec<LabelPoint> },
}

/// A measure family ready for a sweep.
pub struct BuiltMeasure {
    pub limit: SignedMeasure,
    width_h: Option<(f64, Kernel)>,
    source: SignedMeasure,
}

impl BuiltMeasure {
    pub fn family<'a>(&'a self, dom: &'a GridDomain) -> MeasureFamily<'a> {
        match self.width_h {
            None => MeasureFamily::Fixed(self.limit.clone()),
            Some((width, kernel)) => MeasureFamily::Indexed {
                at: Box::new(move |p| {
                    let w = (width * 2.0 / p).max(1.0);
                    mollify(dom, &self.source, w * dom.h(), kernel)
                }),
                limit: self.limit.clone(),
            },
        }
    }

    /// The member of the family at exponent `p`.
    pub fn at(&self, dom: &GridDomain, p: f64) -> CliResult<SignedMeasure> {
        self.family(dom).at(p).in_module("measures")
    }
}

fn node_near(dom: &GridDomain, at: [f64; 2]) -> usize {
    dom.nearest_node(if dom.dim() == 1 { [at[0], 0.0] } else { at })
}

impl MeasureSpec {
    pub fn build(&self, dom: &GridDomain, base: &Path) -> CliResult<BuiltMeasure> {
        let fixed = |m: SignedMeasure| BuiltMeasure { source: m.clone(), limit: m, width_h: None };
        match self {
            MeasureSpec::Sign { center } => {
                let c = *center;
                Ok(fixed(from_density(dom, move |x| {
                    let d = x[0] - c;
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })))
            }
            MeasureSpec::DiracPair { plus, minus, mollify: m } => {
                let (a, b) = (node_near(dom, *plus), node_near(dom, *minus));
                if a == b {
                    return Err(CliError::Config("dirac pair collapses onto one node".into()));
                }
                let pair = SignedMeasure::dirac_pair(dom.num_nodes(), a, b);
                match m {
                    None => Ok(fixed(pair)),
                    Some(spec) if spec.shrink_with_p => {
                        Ok(BuiltMeasure { limit: pair.clone(), source: pair, width_h: Some((spec.width, spec.kernel)) })
                    }
                    Some(spec) => Ok(fixed(mollify(dom, &pair, spec.width * dom.h(), spec.kernel).in_module("measures")?)),
                }
            }
            MeasureSpec::Weights { path } => {
                let full = base.join(path);
                if !full.exists() {
                    return Err(CliError::Config(format!("measure file {} does not exist", full.display())));
                }
                Ok(fixed(SignedMeasure::new(read_node_csv(&full, dom.num_nodes())?)))
            }
            MeasureSpec::Points { entries } => {
                let mut weights = vec![0.0; dom.num_nodes()];
                for e in entries {
                    weights[node_near(dom, e.at)] += e.weight;
                }
                Ok(fixed(SignedMeasure::new(weights)))
            }
            MeasureSpec::Labels { points } => {
                check_labels(points).in_module("measures")?;
                let labeled: Vec<(usize, f64)> = points.iter().map(|l| (node_near(dom, l.at), l.label)).collect();
                let mut nodes: Vec<usize> = labeled.iter().map(|l| l.0).collect();
                nodes.sort_unstable();
                nodes.dedup();
                if nodes.len() != labeled.len() {
                    return Err(CliError::Config("two labels share a grid node".into()));
                }
                Ok(fixed(poisson_learning_measure(dom, &labeled).in_module("measures")?))
            }
        }
    }
}

/// At least two labels, all `+1` or `-1`, equally many of each.
pub fn check_labels(points: &[LabelPoint]) -> plimit_core::Result<()> {
    if points.len() < 2 {
        return Err(Error::TooFewLabels(points.len()));
    }
    if let Some(bad) = points.iter().find(|l| l.label != 1.0 && l.label != -1.0) {
        return Err(Error::UnbalancedLabels(format!("label {} is not +1 or -1", bad.label)));
    }
    let plus = points.iter().filter(|l| l.label > 0.0).count();
    let minus = points.len() - plus;
    if plus != minus {
        return Err(Error::UnbalancedLabels(format!("{plus} positive against {minus} negative")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Kantorovich gap of the largest-p field against the flow value.
    TransportGap {
        #[serde(default)]
        max_relative_gap: Option<f64>,
        #[serde(default)]
        max_lipschitz: Option<f64>,
    },
    /// Deviation of every sweep field from the closed-form 1D solution.
    Analytic {
        #[serde(default)]
        max_error: Option<f64>,
    },
    /// Roots of the eigenvalue estimates against `2 / diam`.
    Eigen {
        p: f64,
        #[serde(default = "both_kinds")]
        kinds: Vec<EigenKind>,
        #[serde(default)]
        max_relative_error: Option<f64>,
    },
    /// Region residuals of the largest-p field.
    Viscosity {
        #[serde(default)]
        max_far_zero_laplacian: Option<f64>,
        #[serde(default)]
        mean_value_tol: Option<f64>,
    },
    /// The explicit family `u_t` with its residuals.
    UtFamily {
        #[serde(default = "default_ts")]
        ts: Vec<f64>,
    },
    KrSandwich,
    /// Numbered acceptance checks from the core library.
    Acceptance { criteria: Vec<u8> },
}

fn both_kinds() -> Vec<EigenKind> {
    vec![EigenKind::Lambda, EigenKind::Sigma]
}

fn default_ts() -> Vec<f64> {
    plimit_core::acceptance::UT_PARAMETERS.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: DomainSpec,
    pub measure: MeasureSpec,
    /// Ascending exponents; may be empty when only checks that need no sweep run.
    #[serde(default)]
    pub p_list: Vec<f64>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    /// Relative to the config file unless absolute.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub plots: bool,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("bad experiment name '{}'", self.name)));
        }
        if self.p_list.iter().any(|&p| !(p > 1.0 && p.is_finite())) {
            return Err(CliError::Config("every exponent must be finite and > 1".into()));
        }
        if self.p_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("p_list must be strictly ascending".into()));
        }
        let needs_sweep = self.checks.iter().any(|c| {
            matches!(c, CheckSpec::TransportGap { .. } | CheckSpec::Analytic { .. } | CheckSpec::Viscosity { .. })
        });
        if needs_sweep && self.p_list.is_empty() {
            return Err(CliError::Config("checks on sweep fields need a non-empty p_list".into()));
        }
        self.solver.validate().in_module("p_solver")?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> CliResult<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Reads a config; relative paths inside it resolve against its directory.
pub fn load(path: &Path) -> CliResult<(ExperimentConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}
