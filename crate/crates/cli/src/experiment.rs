//! Config-driven runs: build, sweep, check, and write the report bundle.

use std::path::{Path, PathBuf};

use plimit_core::acceptance::run_criterion;
use plimit_core::calculus::ScalarField;
use plimit_core::domain::{geodesic_diameter, lambda_infinity};
use plimit_core::solver::{analytic_1d_solution, continuation_sweep, SweepEntry};
use plimit_core::spectral::{morrey_sigma_p, rayleigh_lambda_p, EigenKind, EigenOptions};
use plimit_core::transport::{kantorovich_gap, verify_kr_sandwich, w1_geodesic};
use plimit_core::viscosity::{
    classify_measure, eikonal_split_residuals, mean_value_check, pde_residuals, ut_family, ResidualReport,
};
use plimit_core::{GridDomain, SignedMeasure};
use serde::{Deserialize, Serialize};

use crate::config::{CheckSpec, DomainSpec, ExperimentConfig, MeasureSpec};
use crate::error::{CliError, CliResult, InModule};
use crate::output::{write_json, write_node_csv, write_text};
use crate::plot::{heat_map, LinePlot, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub plimit: String,
    pub plimit_core: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions { plimit: env!("CARGO_PKG_VERSION").into(), plimit_core: plimit_core::VERSION.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub h: f64,
    pub nodes: usize,
    pub edges: usize,
    pub geodesic_diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub energy: f64,
    pub dirichlet_energy: f64,
    pub weak_residual: f64,
    pub scaled_residual: f64,
    pub normalization_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sup_norm: f64,
    pub lipschitz: f64,
    pub duality_pairing: f64,
    pub energy_bound_ratio: f64,
    /// Relative to the config's output directory.
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub kind: String,
    pub pass: bool,
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl CheckResult {
    fn new(kind: &str) -> Self {
        CheckResult { kind: kind.into(), pass: true, metrics: Vec::new(), note: String::new() }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push(Metric { name: name.into(), value });
    }

    /// Records a bounded quantity and folds the bound into the verdict.
    fn bounded(&mut self, name: impl Into<String>, value: f64, bound: Option<f64>) {
        if let Some(b) = bound {
            self.pass &= value <= b;
        }
        self.metric(name, value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleFailure {
    pub module: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub positive_nodes: usize,
    pub negative_nodes: usize,
    /// Labelled points whose node has the sign of its label.
    pub labels_recovered: usize,
    pub labels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub config_hash: String,
    pub versions: Versions,
    pub config: ExperimentConfig,
    pub domain: Option<DomainSummary>,
    pub sweep: Vec<SweepRow>,
    pub checks: Vec<CheckResult>,
    pub classification: Option<Classification>,
    pub error: Option<ModuleFailure>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub pass: bool,
}

/// Directory the bundle of `cfg` is written to.
pub fn output_dir(cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    base.join(&cfg.output_dir)
}

/// Runs `cfg` and writes `report.json`, `fields/*.csv` and `plots/*.svg`
/// under its output directory. Module errors are recorded in the report;
/// configuration and I/O errors are returned.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> CliResult<Report> {
    cfg.validate()?;
    let mut run = Run {
        cfg,
        base,
        dir: output_dir(cfg, base),
        report: Report {
            name: cfg.name.clone(),
            config_hash: cfg.hash()?,
            versions: Versions::current(),
            config: cfg.clone(),
            domain: None,
            sweep: Vec::new(),
            checks: Vec::new(),
            classification: None,
            error: None,
            outputs: Vec::new(),
            pass: false,
        },
    };
    match run.execute() {
        Ok(()) => {}
        Err(e @ CliError::Module { .. }) => run.fail(&e),
        Err(e) => return Err(e),
    }
    let r = &mut run.report;
    r.pass = r.error.is_none() && r.sweep.iter().all(|s| s.converged) && r.checks.iter().all(|c| c.pass);
    r.outputs.push("report.json".into());
    write_json(&run.dir.join("report.json"), &run.report)?;
    Ok(run.report)
}

/// Poisson learning from labelled points: the sweep plus the transport gap
/// of the largest-p field and the classification map `sign(u)`.
pub fn demo_poisson_learning(cfg: &ExperimentConfig, base: &Path) -> CliResult<Report> {
    let MeasureSpec::Labels { points } = &cfg.measure else {
        return Err(CliError::Config("demo-poisson-learning needs a labels measure".into()));
    };
    crate::config::check_labels(points).in_module("measures")?;
    let mut cfg = cfg.clone();
    if !cfg.checks.iter().any(|c| matches!(c, CheckSpec::TransportGap { .. })) {
        cfg.checks.insert(0, CheckSpec::TransportGap { max_relative_gap: None, max_lipschitz: None });
    }
    run_experiment(&cfg, base)
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    base: &'a Path,
    dir: PathBuf,
    report: Report,
}

fn p_tag(p: f64) -> String {
    format!("{p}")
}

impl Run<'_> {
    fn fail(&mut self, e: &CliError) {
        if self.report.error.is_none() {
            self.report.error = Some(ModuleFailure { module: e.module().into(), message: e.to_string() });
        }
    }

    fn write_field(&mut self, name: &str, values: impl IntoIterator<Item = Option<f64>>) -> CliResult<String> {
        let rel = format!("fields/{name}.csv");
        write_node_csv(&self.dir.join(&rel), "value", values)?;
        self.report.outputs.push(rel.clone());
        Ok(rel)
    }

    fn write_plot(&mut self, name: &str, svg: &str) -> CliResult<()> {
        if !self.cfg.plots {
            return Ok(());
        }
        let rel = format!("plots/{name}.svg");
        write_text(&self.dir.join(&rel), svg)?;
        self.report.outputs.push(rel);
        Ok(())
    }

    fn execute(&mut self) -> CliResult<()> {
        let dom = self.cfg.domain.build(self.base)?;
        self.report.domain = Some(DomainSummary {
            dim: dom.dim(),
            shape: dom.shape().to_vec(),
            h: dom.h(),
            nodes: dom.num_nodes(),
            edges: dom.edges().len(),
            geodesic_diameter: geodesic_diameter(&dom),
        });
        let measure = self.cfg.measure.build(&dom, self.base)?;
        let sweep = if self.cfg.p_list.is_empty() {
            Vec::new()
        } else {
            continuation_sweep(&dom, &measure.family(&dom), &self.cfg.p_list, &self.cfg.solver).in_module("p_solver")?
        };
        for e in &sweep {
            let field = self.write_field(&format!("u_p{}", p_tag(e.report.p)), e.report.u.values.iter().map(|&v| Some(v)))?;
            let r = &e.report;
            self.report.sweep.push(SweepRow {
                p: r.p,
                energy: r.energy,
                dirichlet_energy: r.dirichlet_energy,
                weak_residual: r.weak_residual,
                scaled_residual: r.scaled_residual,
                normalization_residual: r.normalization_residual,
                iterations: r.iterations,
                converged: r.converged,
                sup_norm: e.sup_norm,
                lipschitz: e.lipschitz,
                duality_pairing: e.duality_pairing,
                energy_bound_ratio: r.energy_bound_ratio,
                field,
            });
        }

        for spec in &self.cfg.checks {
            let result = match self.check(spec, &dom, &measure.limit, &sweep) {
                Ok(r) => r,
                Err(e @ CliError::Module { .. }) => {
                    self.fail(&e);
                    let mut r = CheckResult::new(check_kind(spec));
                    r.pass = false;
                    r.note = e.to_string();
                    r
                }
                Err(e) => return Err(e),
            };
            self.report.checks.push(result);
        }

        if let (MeasureSpec::Labels { points }, Some(last)) = (&self.cfg.measure, sweep.last()) {
            let u = &last.report.u;
            let sign: Vec<Option<f64>> = u.values.iter().map(|&v| Some(if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })).collect();
            let recovered = points
                .iter()
                .filter(|l| {
                    let at = if dom.dim() == 1 { [l.at[0], 0.0] } else { l.at };
                    u.values[dom.nearest_node(at)] * l.label > 0.0
                })
                .count();
            self.report.classification = Some(Classification {
                positive_nodes: sign.iter().filter(|s| **s == Some(1.0)).count(),
                negative_nodes: sign.iter().filter(|s| **s == Some(-1.0)).count(),
                labels_recovered: recovered,
                labels: points.len(),
            });
            self.write_field("classification", sign.iter().copied())?;
            if dom.dim() == 2 {
                let svg = heat_map("sign(u)", dom.shape()[0], dom.shape()[1], &on_grid(&dom, &sign));
                self.write_plot("classification", &svg)?;
            }
        }

        self.plot_sweep(&dom, &sweep)
    }

    fn plot_sweep(&mut self, dom: &GridDomain, sweep: &[SweepEntry]) -> CliResult<()> {
        if sweep.is_empty() {
            return Ok(());
        }
        if dom.dim() == 1 {
            let xs: Vec<f64> = (0..dom.num_nodes()).map(|i| dom.coords(i)[0]).collect();
            let mut plot = LinePlot { title: format!("{}: u_p", self.cfg.name), x_label: "x".into(), y_label: "u_p(x)".into(), series: Vec::new() };
            for e in sweep {
                let pts = xs.iter().copied().zip(e.report.u.values.iter().copied()).collect();
                plot.series.push(Series::new(format!("p = {}", e.report.p), pts));
            }
            if self.cfg.checks.iter().any(|c| matches!(c, CheckSpec::Analytic { .. })) {
                for e in sweep {
                    let p = e.report.p;
                    let pts = (0..=400).map(|k| -1.0 + k as f64 / 200.0).map(|x| (x, analytic_1d_solution(x, p))).collect();
                    plot.series.push(Series::new(format!("exact p = {p}"), pts).dashed());
                }
            }
            return self.write_plot("sweep", &plot.to_svg());
        }
        let (nx, ny) = (dom.shape()[0], dom.shape()[1]);
        for e in sweep {
            let vals: Vec<Option<f64>> = e.report.u.values.iter().map(|&v| Some(v)).collect();
            let svg = heat_map(&format!("u_p, p = {}", e.report.p), nx, ny, &on_grid(dom, &vals));
            self.write_plot(&format!("u_p{}", p_tag(e.report.p)), &svg)?;
        }
        let pairing = LinePlot {
            title: format!("{}: duality pairing", self.cfg.name),
            x_label: "p".into(),
            y_label: "sum u dmu".into(),
            series: vec![Series::new("pairing", sweep.iter().map(|e| (e.report.p, e.duality_pairing)).collect())],
        };
        self.write_plot("pairing", &pairing.to_svg())
    }

    fn check(&mut self, spec: &CheckSpec, dom: &GridDomain, mu: &SignedMeasure, sweep: &[SweepEntry]) -> CliResult<CheckResult> {
        let mut out = CheckResult::new(check_kind(spec));
        match spec {
            CheckSpec::TransportGap { max_relative_gap, max_lipschitz } => {
                let u = &last(sweep)?.report.u;
                let gap = kantorovich_gap(dom, u, mu).in_module("transport")?;
                let flow = w1_geodesic(dom, mu).in_module("transport")?;
                out.metric("w1", gap.w1);
                out.metric("pairing", gap.pairing);
                out.bounded("relative_gap", gap.relative_gap.abs(), Some(max_relative_gap.unwrap_or(0.05)));
                out.bounded("lipschitz", gap.lipschitz, Some(max_lipschitz.unwrap_or(1.05)));
                let flow_gap = if flow.value > 0.0 { flow.gap.abs() / flow.value } else { flow.gap.abs() };
                out.bounded("flow_relative_gap", flow_gap, Some(1e-9));
            }
            CheckSpec::Analytic { max_error } => {
                self.require_sign_line("analytic")?;
                let mut rows = String::from("p,max_dev_exact,max_dev_limit\n");
                for e in sweep {
                    let p = e.report.p;
                    let (mut exact, mut limit) = (0.0f64, 0.0f64);
                    for (i, &v) in e.report.u.values.iter().enumerate() {
                        let x = dom.coords(i)[0];
                        exact = exact.max((v - analytic_1d_solution(x, p)).abs());
                        limit = limit.max((v - x).abs());
                    }
                    out.bounded(format!("dev_exact_p{}", p_tag(p)), exact, *max_error);
                    out.metric(format!("dev_limit_p{}", p_tag(p)), limit);
                    rows.push_str(&format!("{p},{exact:e},{limit:e}\n"));
                }
                write_text(&self.dir.join("tables/deviation.csv"), &rows)?;
                self.report.outputs.push("tables/deviation.csv".into());
            }
            CheckSpec::Eigen { p, kinds, max_relative_error } => {
                let target = lambda_infinity(dom);
                out.metric("target", target);
                let opts = EigenOptions { seed: self.cfg.seed, solve: self.cfg.solver.clone(), ..Default::default() };
                for kind in kinds {
                    let est = match kind {
                        EigenKind::Lambda => rayleigh_lambda_p(dom, *p, &opts),
                        EigenKind::Sigma => morrey_sigma_p(dom, *p, &opts),
                    }
                    .in_module("spectral")?;
                    let name = match kind {
                        EigenKind::Lambda => "lambda",
                        EigenKind::Sigma => "sigma",
                    };
                    out.pass &= est.converged;
                    out.metric(format!("{name}_root"), est.root);
                    out.bounded(format!("{name}_relative_error"), (est.root / target - 1.0).abs(), Some(max_relative_error.unwrap_or(0.1)));
                }
            }
            CheckSpec::Viscosity { max_far_zero_laplacian, mean_value_tol } => {
                let u = &last(sweep)?.report.u;
                let labels = classify_measure(dom, mu).in_module("viscosity")?;
                let res = pde_residuals(dom, u, &labels).in_module("viscosity")?;
                let eik = eikonal_split_residuals(dom, u, &labels).in_module("viscosity")?;
                out.metric("r_plus", res.r_plus_norm);
                out.metric("r_minus", res.r_minus_norm);
                out.metric("r_zero", res.r_zero_norm);
                out.metric("eikonal_positive", eik.eikonal_positive);
                out.metric("eikonal_negative", eik.eikonal_negative);
                out.bounded("far_zero_laplacian", eik.far_zero_laplacian, *max_far_zero_laplacian);
                out.metric("kink_nodes", eik.kink_nodes.len() as f64);
                out.metric("mean_value_residual", res.mean_value_residual);
                if let Some(tol) = mean_value_tol {
                    out.pass &= mean_value_check(u, *tol);
                }
                self.write_field("residuals", region_residual(&res))?;
            }
            CheckSpec::UtFamily { ts } => {
                self.require_sign_line("ut_family")?;
                let labels = classify_measure(dom, mu).in_module("viscosity")?;
                let bound = 2.0 * dom.h();
                let xs: Vec<f64> = (0..dom.num_nodes()).map(|i| dom.coords(i)[0]).collect();
                let mut plot = LinePlot { title: "u_t".into(), x_label: "x".into(), y_label: "u_t(x)".into(), series: Vec::new() };
                for &t in ts {
                    let values = xs.iter().map(|&x| ut_family(x, t)).collect::<plimit_core::Result<Vec<f64>>>().in_module("viscosity")?;
                    let u = ScalarField::new(values);
                    let res = pde_residuals(dom, &u, &labels).in_module("viscosity")?;
                    out.bounded(format!("residual_t{t}"), res.max_norm(), Some(bound));
                    out.bounded(format!("mean_value_t{t}"), res.mean_value_residual.abs(), Some(1e-12));
                    self.write_field(&format!("ut_t{t}"), u.values.iter().map(|&v| Some(v)))?;
                    plot.series.push(Series::new(format!("t = {t}"), xs.iter().copied().zip(u.values.iter().copied()).collect()));
                }
                self.write_plot("ut_family", &plot.to_svg())?;
            }
            CheckSpec::KrSandwich => {
                let s = verify_kr_sandwich(dom, mu).in_module("transport")?;
                out.metric("kr", s.kr);
                out.metric("lip_dual", s.lip_dual);
                out.metric("factor", s.factor);
                out.pass &= s.lhs_ok && s.rhs_ok;
                out.bounded("max_relative_gap", s.max_relative_gap, Some(1e-9));
            }
            CheckSpec::Acceptance { criteria } => {
                let mut failed = Vec::new();
                for &id in criteria {
                    let o = run_criterion(id);
                    for (k, v) in &o.values {
                        out.metric(format!("c{id}.{}", k.trim_end_matches('!')), *v);
                    }
                    out.metric(format!("c{id}.pass"), if o.pass { 1.0 } else { 0.0 });
                    if !o.pass {
                        failed.push(id.to_string());
                    }
                }
                out.pass = failed.is_empty();
                if !failed.is_empty() {
                    out.note = format!("failed: {}", failed.join(", "));
                }
            }
        }
        Ok(out)
    }

    fn require_sign_line(&self, check: &str) -> CliResult<()> {
        let line = matches!(self.cfg.domain, DomainSpec::Interval { a, b, .. } if a == -1.0 && b == 1.0);
        let sign = matches!(self.cfg.measure, MeasureSpec::Sign { center } if center == 0.0);
        if line && sign {
            Ok(())
        } else {
            Err(CliError::Config(format!("the {check} check needs the sign measure on the interval [-1, 1]")))
        }
    }
}

fn check_kind(spec: &CheckSpec) -> &'static str {
    match spec {
        CheckSpec::TransportGap { .. } => "transport_gap",
        CheckSpec::Analytic { .. } => "analytic",
        CheckSpec::Eigen { .. } => "eigen",
        CheckSpec::Viscosity { .. } => "viscosity",
        CheckSpec::UtFamily { .. } => "ut_family",
        CheckSpec::KrSandwich => "kr_sandwich",
        CheckSpec::Acceptance { .. } => "acceptance",
    }
}

fn last(sweep: &[SweepEntry]) -> CliResult<&SweepEntry> {
    sweep.last().ok_or_else(|| CliError::Config("check needs a sweep".into()))
}

/// The residual of whichever region each node belongs to.
pub fn region_residual(res: &ResidualReport) -> Vec<Option<f64>> {
    res.r_plus.iter().zip(&res.r_zero).zip(&res.r_minus).map(|((a, b), c)| a.or(*b).or(*c)).collect()
}

/// Node values scattered onto the full grid, row-major with `x` fastest.
fn on_grid(dom: &GridDomain, values: &[Option<f64>]) -> Vec<Option<f64>> {
    let (nx, ny) = (dom.shape()[0], dom.shape()[1]);
    let mut out = vec![None; nx * ny];
    for (i, v) in values.iter().enumerate() {
        let (ix, iy) = dom.grid_index(i);
        out[iy * nx + ix] = *v;
    }
    out
}
