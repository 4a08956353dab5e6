//! Mission definitions, the end-to-end solve, impulse extraction and output files.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    discretize_with, propagate, stack, AnomalyGrid, ControlSchedule, ControlUnits, DiscretizeOptions,
};
use crate::error::{Error, Result};
use crate::irls::{irls_l1, irls_l21, IrlsConfig, IrlsReport, IrlsStatus, NormMode};
use crate::kinematics::{OrbitParams, StateVector, EARTH_MU};
use crate::oracle::{certificate_l1, certificate_l21, solve_l1_lp};

pub const DEFAULT_IMPULSE_THRESHOLD: f64 = 1e-3;

/// Violation tolerance used for certificates in `--verify` runs.
pub const VERIFY_CERT_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct MissionSpec {
    pub name: String,
    pub orbit: OrbitParams,
    pub nu0: f64,
    pub nuf: f64,
    pub stages: usize,
    /// `[m, m, m, m/s, m/s, m/s]`
    pub x0_physical: Vector6<f64>,
    pub xf_physical: Vector6<f64>,
    pub mode: NormMode,
    pub irls: IrlsConfig,
    pub impulse_threshold: f64,
    pub verify: bool,
}

impl MissionSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, m: String| Err(Error::InvalidField { field: f.into(), message: m });
        if !(self.nu0.is_finite() && self.nuf.is_finite()) {
            return field("nu0", "anomalies must be finite".into());
        }
        if self.nuf <= self.nu0 {
            return field("nuf", format!("nuf ({}) must exceed nu0 ({})", self.nuf, self.nu0));
        }
        if self.stages < 1 {
            return field("N", "at least one stage is required".into());
        }
        if !(self.impulse_threshold > 0.0 && self.impulse_threshold < 1.0) {
            return field("impulse_threshold", format!("must lie in (0, 1), got {}", self.impulse_threshold));
        }
        if self.x0_physical.iter().chain(self.xf_physical.iter()).any(|v| !v.is_finite()) {
            return field("x0", "state components must be finite".into());
        }
        self.irls.validate()
    }
}

fn gto() -> MissionSpec {
    MissionSpec {
        name: "gto".into(),
        orbit: OrbitParams::new(24_616e3, 0.73074, EARTH_MU).expect("valid preset orbit"),
        nu0: 0.1 * PI,
        nuf: 5.2,
        stages: 600,
        x0_physical: Vector6::new(0.0, 10_000.0, 0.0, 0.0, -3.0, 0.0),
        xf_physical: Vector6::zeros(),
        mode: NormMode::L1,
        irls: IrlsConfig::default(),
        impulse_threshold: DEFAULT_IMPULSE_THRESHOLD,
        verify: false,
    }
}

fn atv() -> MissionSpec {
    MissionSpec {
        name: "atv".into(),
        orbit: OrbitParams::new(6_763e3, 0.0052, EARTH_MU).expect("valid preset orbit"),
        nu0: 0.0,
        nuf: 8.1831,
        stages: 50,
        x0_physical: Vector6::new(-30_000.0, 0.0, 500.0, 8.514, 0.0, 0.0),
        xf_physical: Vector6::new(-100.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        mode: NormMode::L1,
        irls: IrlsConfig::default(),
        impulse_threshold: DEFAULT_IMPULSE_THRESHOLD,
        verify: false,
    }
}

pub fn preset(name: &str) -> Result<MissionSpec> {
    match name.to_ascii_lowercase().as_str() {
        "gto" => Ok(gto()),
        "atv" => Ok(atv()),
        _ => Err(Error::UnknownPreset(name.into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
enum LengthUnit {
    #[serde(rename = "m")]
    Meter,
    #[serde(rename = "km")]
    Kilometer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
enum VelocityUnit {
    #[serde(rename = "m/s")]
    MeterPerSecond,
    #[serde(rename = "km/s")]
    KilometerPerSecond,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitsDoc {
    length: LengthUnit,
    velocity: VelocityUnit,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitDoc {
    a: f64,
    e: f64,
    #[serde(default)]
    mu: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MissionDoc {
    #[serde(default)]
    name: Option<String>,
    units: UnitsDoc,
    orbit: OrbitDoc,
    nu0: f64,
    nuf: f64,
    #[serde(rename = "N")]
    stages: usize,
    x0: [f64; 6],
    xf: [f64; 6],
    #[serde(default = "default_mode")]
    mode: NormMode,
    #[serde(default)]
    irls: IrlsConfig,
    #[serde(default = "default_threshold")]
    impulse_threshold: f64,
    #[serde(default)]
    verify: bool,
}

fn default_mode() -> NormMode {
    NormMode::L1
}

fn default_threshold() -> f64 {
    DEFAULT_IMPULSE_THRESHOLD
}

/// Parses a JSON mission document.
///
/// Lengths (`orbit.a` and positions) use `units.length`, velocities use
/// `units.velocity`; anomalies are radians.
pub fn parse_mission(text: &str) -> Result<MissionSpec> {
    let doc: MissionDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let len = match doc.units.length {
        LengthUnit::Meter => 1.0,
        LengthUnit::Kilometer => 1e3,
    };
    let vel = match doc.units.velocity {
        VelocityUnit::MeterPerSecond => 1.0,
        VelocityUnit::KilometerPerSecond => 1e3,
    };
    let to_si = |v: [f64; 6]| {
        Vector6::new(v[0] * len, v[1] * len, v[2] * len, v[3] * vel, v[4] * vel, v[5] * vel)
    };
    let orbit = OrbitParams::new(doc.orbit.a * len, doc.orbit.e, doc.orbit.mu.unwrap_or(EARTH_MU))
        .map_err(|e| Error::InvalidField { field: "orbit".into(), message: e.to_string() })?;
    let spec = MissionSpec {
        name: doc.name.unwrap_or_else(|| "custom".into()),
        orbit,
        nu0: doc.nu0,
        nuf: doc.nuf,
        stages: doc.stages,
        x0_physical: to_si(doc.x0),
        xf_physical: to_si(doc.xf),
        mode: doc.mode,
        irls: doc.irls,
        impulse_threshold: doc.impulse_threshold,
        verify: doc.verify,
    };
    spec.validate()?;
    Ok(spec)
}

/// A preset name, a path to a JSON document, or the document text itself.
pub fn load_mission(source: &str) -> Result<MissionSpec> {
    let trimmed = source.trim();
    if trimmed.starts_with('{') {
        return parse_mission(trimmed);
    }
    let path = Path::new(trimmed);
    if path.is_file() {
        return parse_mission(&fs::read_to_string(path)?);
    }
    preset(trimmed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Impulse {
    pub nu: f64,
    pub k: usize,
    pub dv: [f64; 3],
    pub mag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpulseTable {
    pub threshold: f64,
    /// `threshold` times the largest stage norm.
    pub cutoff: f64,
    pub entries: Vec<Impulse>,
}

impl ImpulseTable {
    /// Stages whose `axis` component exceeds the cutoff in magnitude.
    pub fn channel_count(&self, schedule: &ControlSchedule, axis: usize) -> usize {
        if self.cutoff <= 0.0 {
            return 0;
        }
        schedule.iter_stages().filter(|u| u[axis].abs() > self.cutoff).count()
    }

    pub fn dominant(&self) -> Option<&Impulse> {
        self.entries.iter().max_by(|a, b| a.mag.total_cmp(&b.mag))
    }
}

/// Stages whose 2-norm exceeds `threshold` times the largest stage norm, in grid order.
pub fn extract_impulses(u: &ControlSchedule, grid: &AnomalyGrid, threshold: f64) -> Result<ImpulseTable> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidField {
            field: "impulse_threshold".into(),
            message: format!("must lie in (0, 1), got {threshold}"),
        });
    }
    if u.stages() != grid.stages() {
        return Err(Error::LengthMismatch { expected: grid.stages(), found: u.stages() });
    }
    let max = u.iter_stages().map(|s| s.norm()).fold(0.0, f64::max);
    let cutoff = threshold * max;
    let entries = u
        .iter_stages()
        .enumerate()
        .filter(|(_, s)| max > 0.0 && s.norm() > cutoff)
        .map(|(k, s)| Impulse { nu: grid.node(k), k, dv: [s[0], s[1], s[2]], mag: s.norm() })
        .collect();
    Ok(ImpulseTable { threshold, cutoff, entries })
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub lp_optimum: Option<f64>,
    pub lp_pivots: Option<usize>,
    pub relative_gap: Option<f64>,
    pub certificate_accepted: bool,
    pub certificate_violation: f64,
    pub certificate_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelSummary {
    pub impulses: [usize; 3],
    pub max_abs: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub mission: String,
    pub mode: NormMode,
    #[serde(rename = "N")]
    pub stages: usize,
    pub nu0: f64,
    pub nuf: f64,
    pub control_units: &'static str,
    pub norm_l1: f64,
    pub norm_l21: f64,
    pub literal_norm_l1: f64,
    pub literal_norm_l21: f64,
    pub residual: f64,
    pub terminal_residual: f64,
    pub iterations: usize,
    pub status: IrlsStatus,
    pub eps_final: f64,
    pub impulse_threshold: f64,
    pub impulses: Vec<Impulse>,
    pub channels: ChannelSummary,
    pub solver_config: IrlsConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<Verification>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub spec: MissionSpec,
    pub grid: AnomalyGrid,
    pub report: IrlsReport,
    /// Per-stage velocity increments [m/s].
    pub schedule: ControlSchedule,
    pub states_tilde: Vec<StateVector>,
    pub states_physical: Vec<StateVector>,
    pub impulses: ImpulseTable,
    pub summary: Summary,
    pub elapsed: Duration,
}

impl RunArtifacts {
    pub fn succeeded(&self) -> bool {
        self.report.status.is_success()
    }
}

/// Converts the boundary states, discretizes, solves and post-processes.
pub fn run_mission(spec: &MissionSpec) -> Result<RunArtifacts> {
    spec.validate()?;
    let start = Instant::now();
    let params = spec.orbit;
    let grid = AnomalyGrid::new(spec.nu0, spec.nuf, spec.stages)?;
    let x0 = StateVector::physical(spec.x0_physical).to_tilde(&params, spec.nu0)?;
    let xf = StateVector::physical(spec.xf_physical).to_tilde(&params, spec.nuf)?;
    let sys = discretize_with(
        &params,
        &grid,
        DiscretizeOptions { units: ControlUnits::DeltaV, ..Default::default() },
    )?;
    let stacked = stack(&sys, &x0, &xf)?;
    let report = match spec.mode {
        NormMode::L1 => irls_l1(&stacked, &spec.irls)?,
        NormMode::L21 => irls_l21(&stacked, &spec.irls)?,
    };
    log::info!(
        "{}: {:?} after {} iterations, eps {:e}",
        spec.name,
        report.status,
        report.iterations,
        report.eps_final()
    );
    let schedule = report.schedule()?;
    let literal = sys.convert_schedule(&schedule, ControlUnits::Literal);
    let states_tilde = propagate(&sys, &x0, &schedule)?;
    let states_physical = states_tilde
        .iter()
        .enumerate()
        .map(|(k, s)| s.to_physical(&params, grid.node(k)))
        .collect::<Result<Vec<_>>>()?;
    let terminal = states_tilde.last().expect("at least one state").values;
    let terminal_residual = (terminal - xf.values).norm() / (1.0 + stacked.b.norm());

    let impulses = extract_impulses(&schedule, &grid, spec.impulse_threshold)?;
    let mut max_abs = [0.0f64; 3];
    for s in schedule.iter_stages() {
        for (m, v) in max_abs.iter_mut().zip(s.iter()) {
            *m = m.max(v.abs());
        }
    }
    let channels = ChannelSummary {
        impulses: [0, 1, 2].map(|i| impulses.channel_count(&schedule, i)),
        max_abs,
    };

    let verification = if spec.verify {
        let rhs = stacked.rhs();
        Some(match spec.mode {
            NormMode::L1 => {
                let lp = solve_l1_lp(&stacked.c, &rhs)?;
                let cert = certificate_l1(&stacked.c, &rhs, &report.u_star, VERIFY_CERT_TOL)?;
                Verification {
                    lp_optimum: Some(lp.objective),
                    lp_pivots: Some(lp.pivot_count),
                    relative_gap: Some((report.norm_l1 - lp.objective) / lp.objective.max(f64::MIN_POSITIVE)),
                    certificate_accepted: cert.accepted,
                    certificate_violation: cert.max_violation,
                    certificate_tol: VERIFY_CERT_TOL,
                }
            }
            NormMode::L21 => {
                let cert = certificate_l21(&stacked.c, &rhs, &report.u_star, VERIFY_CERT_TOL)?;
                Verification {
                    lp_optimum: None,
                    lp_pivots: None,
                    relative_gap: None,
                    certificate_accepted: cert.accepted,
                    certificate_violation: cert.max_violation,
                    certificate_tol: VERIFY_CERT_TOL,
                }
            }
        })
    } else {
        None
    };

    let summary = Summary {
        mission: spec.name.clone(),
        mode: spec.mode,
        stages: spec.stages,
        nu0: spec.nu0,
        nuf: spec.nuf,
        control_units: "delta-v m/s per stage",
        norm_l1: report.norm_l1,
        norm_l21: report.norm_l21,
        literal_norm_l1: literal.norm_l1(),
        literal_norm_l21: literal.norm_l21(),
        residual: report.residual,
        terminal_residual,
        iterations: report.iterations,
        status: report.status,
        eps_final: report.eps_final(),
        impulse_threshold: spec.impulse_threshold,
        impulses: impulses.entries.clone(),
        channels,
        solver_config: spec.irls,
        verification,
    };
    Ok(RunArtifacts {
        spec: spec.clone(),
        grid,
        report,
        schedule,
        states_tilde,
        states_physical,
        impulses,
        summary,
        elapsed: start.elapsed(),
    })
}

#[derive(Serialize)]
struct TrajectoryRow {
    k: usize,
    nu_rad: f64,
    x_m: f64,
    y_m: f64,
    z_m: f64,
    xdot_mps: f64,
    ydot_mps: f64,
    zdot_mps: f64,
    xt: f64,
    yt: f64,
    zt: f64,
    xt_p: f64,
    yt_p: f64,
    zt_p: f64,
}

#[derive(Serialize)]
struct ControlRow {
    k: usize,
    nu_rad: f64,
    ux: f64,
    uy: f64,
    uz: f64,
    stage_norm2: f64,
    stage_norm1: f64,
}

/// Paths of the files written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub trajectory: PathBuf,
    pub control: PathBuf,
    pub summary: PathBuf,
    pub log: PathBuf,
}

pub fn write_outputs(run: &RunArtifacts, dir: &Path) -> Result<OutputFiles> {
    fs::create_dir_all(dir)?;
    let files = OutputFiles {
        trajectory: dir.join("trajectory.csv"),
        control: dir.join("control.csv"),
        summary: dir.join("summary.json"),
        log: dir.join("convergence.log"),
    };

    let mut w = csv::Writer::from_path(&files.trajectory)?;
    for (k, (p, t)) in run.states_physical.iter().zip(&run.states_tilde).enumerate() {
        let (p, t) = (p.values, t.values);
        w.serialize(TrajectoryRow {
            k,
            nu_rad: run.grid.node(k),
            x_m: p[0],
            y_m: p[1],
            z_m: p[2],
            xdot_mps: p[3],
            ydot_mps: p[4],
            zdot_mps: p[5],
            xt: t[0],
            yt: t[1],
            zt: t[2],
            xt_p: t[3],
            yt_p: t[4],
            zt_p: t[5],
        })?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&files.control)?;
    for (k, u) in run.schedule.iter_stages().enumerate() {
        w.serialize(ControlRow {
            k,
            nu_rad: run.grid.node(k),
            ux: u[0],
            uy: u[1],
            uz: u[2],
            stage_norm2: u.norm(),
            stage_norm1: u.abs().sum(),
        })?;
    }
    w.flush()?;

    let mut json = serde_json::to_string_pretty(&run.summary)?;
    json.push('\n');
    fs::write(&files.summary, json)?;

    fs::write(&files.log, convergence_log(&run.report))?;
    Ok(files)
}

/// One line per iteration at which `eps` changed, plus the final iteration.
fn convergence_log(report: &IrlsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# iterations {} status {:?}", report.iterations, report.status);
    let _ = writeln!(out, "# iter eps");
    let mut prev = f64::NAN;
    let last = report.eps_history.len();
    for (j, eps) in report.eps_history.iter().enumerate() {
        if *eps != prev || j + 1 == last {
            let _ = writeln!(out, "{} {:e}", j + 1, eps);
            prev = *eps;
        }
    }
    out
}
