use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use super::{Check, CheckSpec, ClosedForm, GridSpec, KernelRef, PacketSpec, QuadratureName, Scenario};
use crate::expr::{max_abs_residual, Bindings, Expr, Sampler, Symbol};
use crate::mechanics::{check_charge_conserved, integrate_trajectory, noether_charge};
use crate::oplab::{
    check_conserved, check_conserved_matrix, check_symmetry_operator, Hamiltonian, OperatorSpec,
    PhaseShiftOperator,
};
use crate::propagator::slicer::{SliceSettings, TimeSlicedKernel};
use crate::propagator::{
    check_fundam, closed_form_matrix, fidelity, propagate, write_kernel_samples, FreeKernel, FundamSample,
    Grid1D, KernelProvider, LinearPotentialKernel, SliceQuadrature, Wavepacket,
};
use crate::symmetry::{check_equivalence, check_infinitesimal, check_variational_symmetry, SymmetryCertificate};

const KERNEL_CSV_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub kind: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    pub settings: Value,
    pub details: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl CheckOutcome {
    fn measured(check: &Check, name: String, measured: Option<f64>, threshold: f64) -> Self {
        let pass = matches!(measured, Some(m) if m <= threshold);
        Self {
            name,
            kind: check.spec.kind().to_string(),
            status: if pass { Status::Pass } else { Status::Fail },
            measured,
            threshold: Some(threshold),
            settings: check.settings.clone(),
            details: BTreeMap::new(),
            warnings: Vec::new(),
            error: None,
        }
    }

    fn error(check: &Check, message: String) -> Self {
        Self {
            name: check.name.clone(),
            kind: check.spec.kind().to_string(),
            status: Status::Error,
            measured: None,
            threshold: None,
            settings: check.settings.clone(),
            details: BTreeMap::new(),
            warnings: Vec::new(),
            error: Some(message),
        }
    }

    fn detail(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.details.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: String,
    pub schema: u32,
    pub version: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
    pub wall_time_s: f64,
}

impl Report {
    /// 0 when every check passed, 1 on a failed check, 3 when a check could
    /// not be executed.
    pub fn exit_code(&self) -> i32 {
        if self.checks.iter().any(|c| c.status == Status::Error) {
            3
        } else if self.checks.iter().any(|c| c.status == Status::Fail) {
            1
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per check.
    pub fn to_text(&self) -> String {
        let mut out = format!("scenario {} (seed {})\n", self.scenario, self.seed);
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "PASS ",
                Status::Fail => "FAIL ",
                Status::Error => "ERROR",
            };
            let value = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
            out.push_str(&format!(
                "{status} {:<32} measured {:>10}  threshold {:>10}",
                c.name,
                value(c.measured),
                value(c.threshold)
            ));
            if let Some(e) = &c.error {
                out.push_str(&format!("  ({e})"));
            }
            out.push('\n');
            for w in &c.warnings {
                out.push_str(&format!("      warning: {w}\n"));
            }
        }
        let passed = self.checks.iter().filter(|c| c.status == Status::Pass).count();
        out.push_str(&format!(
            "{passed}/{} checks passed in {:.2} s\n",
            self.checks.len(),
            self.wall_time_s
        ));
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub dump: Option<PathBuf>,
}

/// Runs every check in order. Only I/O failures while dumping artifacts
/// abort the run; check failures are recorded in the report.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> io::Result<Report> {
    let start = Instant::now();
    let seed = options.seed.unwrap_or(scenario.seed);
    if let Some(dir) = &options.dump {
        std::fs::create_dir_all(dir)?;
    }
    let mut checks = Vec::new();
    for check in &scenario.checks {
        let ctx = Ctx {
            scenario,
            check,
            sampler: Sampler::default().with_seed(seed),
            dump: options.dump.as_deref(),
        };
        match ctx.execute() {
            Ok(outcomes) => checks.extend(outcomes),
            Err(Failure::Io(e)) => return Err(e),
            Err(Failure::Check(message)) => checks.push(CheckOutcome::error(check, message)),
        }
    }
    let report = Report {
        scenario: scenario.name.clone(),
        schema: super::SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        passed: checks.iter().all(|c| c.status == Status::Pass),
        checks,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &options.dump {
        std::fs::write(dir.join("report.json"), report.to_json())?;
    }
    Ok(report)
}

enum Failure {
    Io(io::Error),
    Check(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Check(e.to_string())
    }
}

fn io_failure(e: io::Error) -> Failure {
    Failure::Io(e)
}

struct Ctx<'a> {
    scenario: &'a Scenario,
    check: &'a Check,
    sampler: Sampler,
    dump: Option<&'a Path>,
}

fn grid_of(g: &GridSpec) -> Result<Grid1D, Failure> {
    Ok(Grid1D::new(g.xmin, g.xmax, g.n)?)
}

fn packet_of(grid: Grid1D, p: &PacketSpec, hbar: f64) -> Wavepacket {
    Wavepacket::gaussian(grid, p.center, p.width, p.momentum, hbar)
}

fn provider_of(k: &KernelRef, hbar: f64) -> Box<dyn KernelProvider> {
    match k.closed_form {
        ClosedForm::Free => Box::new(FreeKernel::new(k.m, hbar)),
        ClosedForm::Linear => Box::new(LinearPotentialKernel::new(k.m, k.g, hbar)),
    }
}

fn certificate_outcome(check: &Check, cert: &SymmetryCertificate, tolerance: f64, param: &str) -> CheckOutcome {
    let measured = (cert.passed() || cert.residual_norm > tolerance).then_some(cert.residual_norm);
    CheckOutcome::measured(check, check.name.clone(), measured, tolerance)
        .detail("certificate", serde_json::to_value(cert.kind).unwrap_or(Value::Null))
        .detail("gauge", cert.gauge.as_ref().map(|g| g.to_dsl(param)))
        .detail("samples", cert.samples)
        .detail("diagnostics", cert.diagnostics.clone())
}

impl Ctx<'_> {
    fn file(&self, suffix: &str) -> Option<PathBuf> {
        let stem: String = self
            .check
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        self.dump.map(|d| d.join(format!("{stem}_{suffix}")))
    }

    fn write(&self, suffix: &str, f: impl FnOnce(BufWriter<File>) -> io::Result<()>) -> Result<(), Failure> {
        if let Some(path) = self.file(suffix) {
            let file = File::create(path).map_err(io_failure)?;
            f(BufWriter::new(file)).map_err(io_failure)?;
        }
        Ok(())
    }

    fn system(&self, name: &str) -> &crate::mechanics::Lagrangian {
        &self.scenario.systems[name]
    }

    /// Max sampled `|a − b|` with the given constants held fixed.
    fn expr_gap(&self, a: &Expr, b: &Expr, constants: &Bindings) -> Result<f64, Failure> {
        let sampler = self.sampler.clone().with_fixed(constants.clone());
        Ok(max_abs_residual(&(a - b), &sampler)?)
    }

    fn execute(&self) -> Result<Vec<CheckOutcome>, Failure> {
        let check = self.check;
        match &check.spec {
            CheckSpec::Symmetry(c) => {
                let sys = self.system(&c.system);
                let fam = &self.scenario.families[&c.family];
                let tol = c.tolerance.unwrap_or(1e-10);
                let cert = check_variational_symmetry(sys, fam, &self.sampler)?;
                let mut out = vec![certificate_outcome(check, &cert, tol, fam.param_name())];
                if let Some(expected) = check.exprs.get("expected_gauge") {
                    let measured = match &cert.gauge {
                        Some(g) => Some(self.expr_gap(g, expected, &sys.bindings())?),
                        None => None,
                    };
                    out.push(
                        CheckOutcome::measured(check, format!("{}/gauge", check.name), measured, tol)
                            .detail("expected", expected.to_dsl(fam.param_name())),
                    );
                }
                Ok(out)
            }
            CheckSpec::Infinitesimal(c) => {
                let sys = self.system(&c.system);
                let gen = &self.scenario.generators[&c.generator].1;
                let tol = c.tolerance.unwrap_or(1e-10);
                let residual = check_infinitesimal(sys, gen, &self.sampler)?;
                Ok(vec![CheckOutcome::measured(check, check.name.clone(), Some(residual), tol)
                    .detail("samples", self.sampler.trials)])
            }
            CheckSpec::Noether(c) => {
                let sys = self.system(&c.system);
                let gen = &self.scenario.generators[&c.generator].1;
                let tol = c.tolerance.unwrap_or(1e-6);
                let charge = noether_charge(sys, gen)?;
                let traj = integrate_trajectory(sys, &c.q0, &c.v0, c.t0, c.t1, c.steps)?;
                let drift = check_charge_conserved(sys, &charge, &traj)?;
                self.write("trajectory.csv", |w| traj.write_csv(w))?;
                let mut out = vec![CheckOutcome::measured(check, check.name.clone(), Some(drift), tol)
                    .detail("charge", charge.to_string())
                    .detail("integrator", traj.integrator)];
                if let Some(expected) = check.exprs.get("expected_charge") {
                    let gap = self.expr_gap(&charge, expected, &sys.bindings())?;
                    out.push(
                        CheckOutcome::measured(check, format!("{}/charge", check.name), Some(gap), 1e-10)
                            .detail("expected", expected.to_string()),
                    );
                }
                Ok(out)
            }
            CheckSpec::Equivalence(c) => {
                let sys = self.system(&c.system);
                let target = self.system(&c.target);
                let fam = &self.scenario.families[&c.family];
                let tol = c.tolerance.unwrap_or(1e-10);
                let cert = check_equivalence(sys, target, fam, &self.sampler)?;
                let mut out = vec![certificate_outcome(check, &cert, tol, fam.param_name())];
                if let Some(expected) = check.exprs.get("expected_gauge") {
                    let mut constants = target.bindings();
                    constants.extend(&sys.bindings());
                    let measured = match &cert.gauge {
                        Some(g) => Some(self.expr_gap(g, expected, &constants)?),
                        None => None,
                    };
                    out.push(
                        CheckOutcome::measured(check, format!("{}/gauge", check.name), measured, tol)
                            .detail("expected", expected.to_dsl(fam.param_name())),
                    );
                }
                Ok(out)
            }
            CheckSpec::KernelCompare(c) => {
                let grid = grid_of(&c.grid)?;
                let settings = SliceSettings {
                    grid,
                    t0: c.t0,
                    t1: c.t1,
                    slices: c.slices,
                    quadrature: match c.quadrature {
                        QuadratureName::BandLimited => SliceQuadrature::BandLimited,
                        QuadratureName::Trapezoid => SliceQuadrature::Trapezoid,
                    },
                };
                let sliced = TimeSlicedKernel::from_lagrangian(self.system(&c.system), c.hbar, settings)?;
                let reference = provider_of(&c.reference, c.hbar);
                let psi0 = packet_of(grid, &c.packet, c.hbar);
                let a = sliced.apply(&psi0)?;
                let b = propagate(&closed_form_matrix(reference.as_ref(), grid, c.t0, c.t1)?, &psi0)?;
                let f = fidelity(&a, &b);
                self.write("kernel.csv", |w| {
                    write_kernel_samples(reference.as_ref(), grid, c.t0, c.t1, KERNEL_CSV_POINTS, w)
                })?;
                self.write("packet_initial.csv", |w| psi0.write_csv(w))?;
                self.write("packet_sliced.csv", |w| a.write_csv(w))?;
                self.write("packet_reference.csv", |w| b.write_csv(w))?;
                Ok(vec![CheckOutcome::measured(
                    check,
                    check.name.clone(),
                    Some((1.0 - f).max(0.0)),
                    c.tolerance.unwrap_or(1e-3),
                )
                .detail("fidelity", f)
                .detail("sliced_norm", a.norm())
                .detail("reference_norm", b.norm())])
            }
            CheckSpec::Fundam(c) => {
                let fam = &self.scenario.families[&c.family];
                let mut gauge = check.exprs["gauge"].clone();
                let member = match c.param_value {
                    Some(v) => {
                        gauge = gauge.substitute_one(&Symbol::param(), &Expr::from_f64(v));
                        fam.at_f64(v)
                    }
                    None => fam.clone(),
                };
                let constants = Bindings::with_constants(&c.constants);
                let primed = provider_of(&c.primed, c.hbar);
                let unprimed = provider_of(&c.unprimed, c.hbar);
                let s = &c.samples;
                let samples = FundamSample::lattice(s.lo, s.hi, s.n, &s.dts, s.t0);
                let dev = check_fundam(primed.as_ref(), unprimed.as_ref(), &member, &gauge, &constants, c.hbar, &samples)?;
                if s.n >= 2 {
                    let grid = Grid1D::new(s.lo, s.hi, s.n)?;
                    self.write("kernel.csv", |w| {
                        write_kernel_samples(primed.as_ref(), grid, s.t0, s.t0 + s.dts[0], KERNEL_CSV_POINTS, w)
                    })?;
                }
                Ok(vec![CheckOutcome::measured(check, check.name.clone(), Some(dev), c.tolerance.unwrap_or(1e-9))
                    .detail("samples", samples.len())])
            }
            CheckSpec::ConservedOp(c) => {
                let sys = self.system(&c.system);
                let grid = grid_of(&c.grid)?;
                let h = Hamiltonian::from_lagrangian(sys, c.hbar, c.stencil_order)?;
                let spec = OperatorSpec::new(
                    check.exprs["alpha"].clone(),
                    check.exprs["beta"].clone(),
                    check.exprs["gamma"].clone(),
                    sys.bindings(),
                )?;
                let psi0 = packet_of(grid, &c.packet, c.hbar);
                let report = check_conserved(&spec, &h, &psi0, c.t0, c.t1, c.steps)?;
                self.write("expectation.csv", |mut w| {
                    use std::io::Write;
                    writeln!(w, "t,expectation")?;
                    for (t, a) in &report.series {
                        writeln!(w, "{t},{a}")?;
                    }
                    Ok(())
                })?;
                let stride = (report.series.len() / 100).max(1);
                let series: Vec<Value> = report.series.iter().step_by(stride).map(|(t, a)| json!([t, a])).collect();
                let mut first = CheckOutcome::measured(
                    check,
                    check.name.clone(),
                    Some(report.max_drift),
                    c.tolerance.unwrap_or(1e-3),
                )
                .detail("initial", report.initial)
                .detail("max_norm_drift", report.max_norm_drift)
                .detail("series", series);
                if report.boundary_warning {
                    first.warnings.push("packet norm near the grid edges exceeds 1e-8".into());
                }
                let mut out = vec![first];
                if let Some(n) = c.matrix_n {
                    let small = Grid1D::new(c.grid.xmin, c.grid.xmax, n)?;
                    let m = check_conserved_matrix(&spec, &h, small, c.t0, c.t1, c.steps)?;
                    out.push(
                        CheckOutcome::measured(
                            check,
                            format!("{}/matrix", check.name),
                            Some(m.probe_deviation),
                            c.matrix_tolerance.unwrap_or(1e-2),
                        )
                        .detail("n", m.n)
                        .detail("full_norm_ratio", m.full_norm_ratio),
                    );
                }
                Ok(out)
            }
            CheckSpec::SymmetryOp(c) => {
                let sys = self.system(&c.system);
                let grid = grid_of(&c.grid)?;
                let h = Hamiltonian::from_lagrangian(sys, c.hbar, c.stencil_order)?;
                let velocity = c.velocity_cells as f64 * grid.dx();
                let constants = sys.bindings().with(Symbol::constant("V"), velocity);
                let op = PhaseShiftOperator::new(check.exprs["phase"].clone(), velocity, c.hbar, constants);
                let r = check_symmetry_operator(&op, &h, grid, c.t0, c.t1, c.steps)?;
                Ok(vec![CheckOutcome::measured(check, check.name.clone(), Some(r.deviation), c.tolerance.unwrap_or(1e-2))
                    .detail("velocity", velocity)
                    .detail("full_norm_ratio", r.full_norm_ratio)])
            }
        }
    }
}
