//! Run configuration and the construct, verify, extract, flow and
//! fubini-check pipelines. Pipelines return their artifacts as bytes; the
//! caller decides where they go.

use serde::{Deserialize, Serialize};

use crate::construction::{ConstructionData, Perturbation};
use crate::error::{Error, Result};
use crate::extract::{
    extract_all, round_trip, ConstructionOracle, ExtractOptions, Extraction, Oracle, RoundTripOptions, RoundTripReport,
};
use crate::fubini::{fs_profile, fs_verify, FsChart, FsOracle, Normalized};
use crate::geometry::{integrate_gradient_flow, Calculus, FlowStop, ScalarField};
use crate::profiles::{Interval, MomentumProfile, ProfileSpec, ReparamMaps, ReparamOptions};
use crate::rp1::Rp1;
use crate::surfaces::{ChernReport, SurfaceKind, SurfaceSpec};
use crate::verify::{all_pass, flow_suite, run_suite, summary_table, CheckReport, Sample, VerifyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Construct,
    Verify,
    Extract,
    Flow,
    FubiniCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Construct => "construct",
            Command::Verify => "verify",
            Command::Extract => "extract",
            Command::Flow => "flow",
            Command::FubiniCheck => "fubini-check",
        }
    }
}

/// Where the geometry comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    #[default]
    Construction,
    Fubini,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FubiniSpec {
    pub k: usize,
    pub l: usize,
}

impl Default for FubiniSpec {
    fn default() -> Self {
        Self { k: 0, l: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<String>,
    /// Dump gradient-flow trajectories from the `flow` command.
    pub trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub oracle: OracleKind,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub surface: Option<SurfaceSpec>,
    #[serde(default)]
    pub perturbation: Perturbation,
    /// Constant added to the connection primitive (gauge change).
    #[serde(default)]
    pub gauge_shift: f64,
    #[serde(default)]
    pub fubini: FubiniSpec,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Parses and validates a JSON run configuration. Unknown keys are rejected
/// and every error carries the JSON path of the offending value.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    de.end().map_err(|e| Error::config("", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.verify.validate()?;
        if !self.gauge_shift.is_finite() {
            return Err(Error::config("gauge_shift", "must be finite"));
        }
        match self.oracle {
            OracleKind::Fubini => {
                let m = self.fubini.k + self.fubini.l + 1;
                if !(2..=4).contains(&m) {
                    return Err(Error::config("fubini", format!("m = k+l+1 = {m} must lie in 2..=4")));
                }
            }
            OracleKind::Construction => {
                let p = self.profile.as_ref().ok_or_else(|| Error::config("profile", "missing"))?;
                let s = self.surface.as_ref().ok_or_else(|| Error::config("surface", "missing"))?;
                if !(p.a.is_finite() && p.a > 0.0) {
                    return Err(Error::config("profile.a", format!("must be positive, got {}", p.a)));
                }
                let iv = Interval::new(p.tau_min, p.tau_max).map_err(|e| Error::config("profile", e.to_string()))?;
                s.validate(&iv)?;
            }
        }
        Ok(())
    }

    /// Assembles the construction described by the profile and surface.
    pub fn build(&self) -> Result<(ConstructionData, ChernReport)> {
        let p = self.profile.as_ref().ok_or_else(|| Error::config("profile", "missing"))?;
        let s = self.surface.as_ref().ok_or_else(|| Error::config("surface", "missing"))?;
        let iv = Interval::new(p.tau_min, p.tau_max)?;
        let resolved = s.resolve(&iv, p.a)?;
        let profile = p.build_with_a(resolved.a)?;
        let surface = if self.gauge_shift != 0.0 {
            resolved.surface.with_gauge_shift(self.gauge_shift)
        } else {
            resolved.surface
        };
        let data = ConstructionData::new(profile, surface)?.with_perturbation(self.perturbation);
        Ok((data, resolved.chern))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub round_trip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub command: Command,
    pub reports: Vec<CheckReport>,
    pub artifacts: Vec<Artifact>,
}

impl RunOutcome {
    /// True iff every emitted report passes.
    pub fn pass(&self) -> bool {
        all_pass(&self.reports)
    }

    pub fn summary(&self) -> String {
        summary_table(&self.reports)
    }
}

/// Machine-readable body of a failed run.
#[derive(Debug, Clone, Serialize)]
pub struct FailureReport {
    pub command: Option<String>,
    pub kind: String,
    pub message: String,
}

impl FailureReport {
    pub fn new(command: Option<Command>, err: &Error) -> Self {
        Self {
            command: command.map(|c| c.name().to_string()),
            kind: err.kind().to_string(),
            message: err.to_string(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        json(self)
    }
}

fn json<T: Serialize + ?Sized>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report types serialize");
    out.push(b'\n');
    out
}

fn artifact(name: &str, bytes: Vec<u8>) -> Artifact {
    Artifact {
        name: name.to_string(),
        bytes,
    }
}

fn profile_csv(profile: &MomentumProfile) -> Result<Vec<u8>> {
    let maps = ReparamMaps::build(profile, ReparamOptions::default())?;
    let mut buf = Vec::new();
    maps.write_csv(&mut buf)?;
    Ok(buf)
}

fn report_artifacts(reports: &[CheckReport]) -> Vec<Artifact> {
    let mut summary = summary_table(reports);
    if !summary.ends_with('\n') {
        summary.push('\n');
    }
    vec![artifact("report.json", json(reports)), artifact("summary.txt", summary.into_bytes())]
}

/// Runs one pipeline. Check failures are reported in the outcome; only
/// configuration and numerical failures are returned as errors.
pub fn run(command: Command, cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let (reports, mut artifacts) = match (command, cfg.oracle) {
        (Command::FubiniCheck, _) | (Command::Verify, OracleKind::Fubini) => {
            let reports = fs_verify(cfg.fubini.k, cfg.fubini.l, &cfg.verify)?;
            let mut arts = report_artifacts(&reports);
            arts.push(artifact("profile.csv", profile_csv(&fs_profile()?)?));
            (reports, arts)
        }
        (Command::Extract, OracleKind::Fubini) => extract_fubini(cfg)?,
        (_, OracleKind::Fubini) => {
            return Err(Error::config(
                "oracle",
                format!("\"{}\" needs a construction; the fubini oracle supports verify, extract and fubini-check", command.name()),
            ))
        }
        (Command::Construct, OracleKind::Construction) => construct(cfg)?,
        (Command::Verify, OracleKind::Construction) => {
            let (data, _) = cfg.build()?;
            let reports = run_suite(&data, &cfg.verify)?;
            let mut arts = report_artifacts(&reports);
            arts.push(artifact("profile.csv", profile_csv(&data.profile)?));
            (reports, arts)
        }
        (Command::Flow, OracleKind::Construction) => {
            let (data, _) = cfg.build()?;
            let reports = flow_suite(&data, &cfg.verify)?;
            let mut arts = report_artifacts(&reports);
            if cfg.output.trajectories {
                arts.push(artifact("trajectories.json", json(&trajectories(&data, &cfg.verify)?)));
            }
            (reports, arts)
        }
        (Command::Extract, OracleKind::Construction) => extract_construction(cfg, opts)?,
    };
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(RunOutcome {
        command,
        reports,
        artifacts,
    })
}

#[derive(Debug, Serialize)]
struct MetricSample {
    chart: usize,
    point: [f64; 4],
    /// Row-major 4×4.
    metric: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ConstructDump {
    surface: SurfaceKind,
    scale: f64,
    interval: [f64; 2],
    tau_star: f64,
    a: f64,
    lambda: f64,
    chern: ChernReport,
    grid: String,
    samples: Vec<MetricSample>,
}

fn construct(cfg: &RunConfig) -> Result<(Vec<CheckReport>, Vec<Artifact>)> {
    let (data, chern) = cfg.build()?;
    let maps = ReparamMaps::build(&data.profile, ReparamOptions::default())?;
    let g = cfg.verify.grid;
    let taus: Vec<f64> = crate::verify::chebyshev_s(maps.lambda, cfg.verify.collar, g.nt)
        .into_iter()
        .map(|s| maps.tau_of_s(s))
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    for (ci, c) in data.charts().iter().enumerate() {
        for xy in cell_centres(c.base.chart.sample_box(), g.bx, g.by) {
            for &t in &taus {
                for k in 0..g.nth {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / g.nth as f64;
                    let point = [xy[0], xy[1], t, th];
                    let m = c.assemble_metric(&point)?;
                    samples.push(MetricSample {
                        chart: ci,
                        point,
                        metric: m.transpose().iter().copied().collect(),
                    });
                }
            }
        }
    }
    let iv = data.profile.interval;
    let dump = ConstructDump {
        surface: data.surface.kind,
        scale: data.surface.scale,
        interval: [iv.tau_min, iv.tau_max],
        tau_star: iv.tau_star,
        a: data.a(),
        lambda: maps.lambda,
        chern,
        grid: format!("{}x{}", data.surface.charts.len(), g),
        samples,
    };
    Ok((
        Vec::new(),
        vec![artifact("construction.json", json(&dump)), artifact("profile.csv", profile_csv(&data.profile)?)],
    ))
}

fn cell_centres((lo, hi): ([f64; 2], [f64; 2]), bx: usize, by: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(bx * by);
    for ix in 0..bx {
        for iy in 0..by {
            out.push([
                lo[0] + (ix as f64 + 0.5) / bx as f64 * (hi[0] - lo[0]),
                lo[1] + (iy as f64 + 0.5) / by as f64 * (hi[1] - lo[1]),
            ]);
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct Trajectory {
    chart: usize,
    base: [f64; 2],
    arclength: Vec<f64>,
    tau: Vec<f64>,
    points: Vec<Vec<f64>>,
}

/// Unit-speed `∇τ` flows from near `τmin` to near `τmax` at the base nodes.
fn trajectories(data: &ConstructionData, cfg: &VerifyConfig) -> Result<Vec<Trajectory>> {
    let maps = ReparamMaps::build(&data.profile, ReparamOptions::default())?;
    let delta = cfg.flow_delta * maps.lambda;
    let start = maps.tau_of_s(delta)?;
    let stop_level = maps.tau_of_s(maps.lambda - delta)?;
    let mut out = Vec::new();
    for (ci, c) in data.charts().iter().enumerate() {
        let tau = c.tau();
        let calc = Calculus::new(c);
        for xy in cell_centres(c.base.chart.sample_box(), cfg.grid.bx, cfg.grid.by) {
            let stop = FlowStop {
                level: Some(stop_level),
                direction: 1.0,
                max_length: maps.lambda,
                ds: maps.lambda / 256.0,
            };
            let path = integrate_gradient_flow(&calc, &tau, &[xy[0], xy[1], start, 0.0], stop)?;
            let taus = path.points.iter().map(|p| tau.value(p)).collect::<Result<_>>()?;
            out.push(Trajectory {
                chart: ci,
                base: xy,
                arclength: path.arclength,
                tau: taus,
                points: path.points,
            });
        }
    }
    Ok(out)
}

/// Recovered data in the configuration vocabulary plus the raw estimates.
#[derive(Debug, Serialize)]
pub struct ExtractedData {
    pub profile: ProfileSpec,
    pub a_ends: [f64; 2],
    pub fit_residual: f64,
    pub charts: Vec<Extraction>,
}

impl ExtractedData {
    fn new(ex: Vec<Extraction>) -> Result<Self> {
        let first = ex.first().ok_or_else(|| Error::NumericalFailure("no oracle charts".into()))?;
        let p = &first.profile.profile;
        let spec = ProfileSpec {
            tau_min: p.interval.tau_min,
            tau_max: p.interval.tau_max,
            a: p.a,
            q_factor: if p.shape.is_empty() {
                crate::profiles::QFactorSpec::Constant
            } else {
                crate::profiles::QFactorSpec::Poly { coeffs: p.shape.clone() }
            },
        };
        Ok(Self {
            profile: spec,
            a_ends: first.profile.a_ends,
            fit_residual: first.profile.fit_residual,
            charts: ex,
        })
    }
}

const EXTRACT_INTERVAL_TOL: f64 = 1e-3;
const EXTRACT_A_TOL: f64 = 1e-3;
const EXTRACT_Q_TOL: f64 = 1e-5;
const EXTRACT_GAMMA_TOL: f64 = 1e-4;
const EXTRACT_H_TOL: f64 = 1e-3;
const ROUND_TRIP_TOL: f64 = 1e-3;
const PROFILE_PROBES: usize = 64;

fn single(id: &str, grid: &str, tol: f64, value: std::result::Result<f64, String>) -> CheckReport {
    CheckReport::from_samples(
        id,
        grid,
        tol,
        vec![Sample {
            index: vec![0],
            point: Vec::new(),
            value,
        }],
    )
}

/// `0` when every recovered `γ` avoids the closed interval, `1` otherwise.
fn gamma_outside_report(grid: &str, iv: &Interval, ex: &[Extraction]) -> CheckReport {
    let samples = ex
        .iter()
        .enumerate()
        .flat_map(|(c, e)| {
            e.gamma.iter().map(move |g| Sample {
                index: vec![c, g.seed],
                point: g.base.map_or_else(Vec::new, |b| b.to_vec()),
                value: Ok(if g.gamma.in_closed_interval(iv.tau_min, iv.tau_max) { 1.0 } else { 0.0 }),
            })
        })
        .collect();
    CheckReport::from_samples("extract.gamma_outside_interval", grid, 0.0, samples)
}

/// Profile agreement: endpoints, `a` and `Q` on interior probes.
fn profile_reports(grid: &str, scale: f64, truth: &MomentumProfile, got: &MomentumProfile) -> Vec<CheckReport> {
    let (ti, gi) = (truth.interval, got.interval);
    let di = (ti.tau_min - gi.tau_min).abs().max((ti.tau_max - gi.tau_max).abs()) / ti.length();
    let da = (truth.a - got.a).abs() / truth.a;
    let qscale = (0..=PROFILE_PROBES)
        .map(|k| truth.q(ti.tau_min + ti.length() * k as f64 / PROFILE_PROBES as f64).abs())
        .fold(0.0, f64::max);
    let q_samples = (1..PROFILE_PROBES)
        .map(|k| {
            let t = ti.tau_min + ti.length() * k as f64 / PROFILE_PROBES as f64;
            Sample {
                index: vec![k],
                point: vec![t],
                value: Ok((truth.q(t) - got.q(t)).abs() / qscale),
            }
        })
        .collect();
    vec![
        single("extract.interval", grid, EXTRACT_INTERVAL_TOL * scale, Ok(di)),
        single("extract.a", grid, EXTRACT_A_TOL * scale, Ok(da)),
        CheckReport::from_samples("extract.q_profile", grid, EXTRACT_Q_TOL * scale, q_samples),
    ]
}

fn extract_options() -> ExtractOptions {
    ExtractOptions::default()
}

fn extract_construction(cfg: &RunConfig, opts: RunOptions) -> Result<(Vec<CheckReport>, Vec<Artifact>)> {
    let (data, _) = cfg.build()?;
    let xopts = extract_options();
    let charts = data.charts();
    let g = cfg.verify.grid;
    let oracles: Vec<ConstructionOracle> = charts
        .iter()
        .map(|c| ConstructionOracle::new(c.clone(), cell_centres(c.base.chart.sample_box(), g.bx, g.by)))
        .collect();
    let refs: Vec<&dyn Oracle> = oracles.iter().map(|o| o as &dyn Oracle).collect();
    let ex = extract_all(&refs, &xopts)?;
    let grid = format!("{}x{}x{}", charts.len(), g.bx, g.by);
    let scale = cfg.verify.tol_scale;

    let mut reports = profile_reports(&grid, scale, &data.profile, &ex[0].profile.profile);
    let mut gamma_samples = Vec::new();
    let mut h_samples = Vec::new();
    for (ci, (c, e)) in charts.iter().zip(&ex).enumerate() {
        for ge in &e.gamma {
            let b = ge.base.unwrap_or([0.0, 0.0]);
            let truth = c.gamma_at(&[b[0], b[1], c.tau_star(), 0.0]);
            gamma_samples.push(Sample {
                index: vec![ci, ge.seed],
                point: b.to_vec(),
                value: Ok(truth.chordal_distance(&ge.gamma)),
            });
        }
        for he in &e.h {
            let h = c.base.chart.h(he.base);
            let truth = [h[(0, 0)], h[(0, 1)], h[(1, 1)]];
            let norm = truth.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff = truth.iter().zip(&he.h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            h_samples.push(Sample {
                index: vec![ci, he.seed],
                point: he.base.to_vec(),
                value: Ok(diff / norm),
            });
        }
    }
    reports.push(CheckReport::from_samples("extract.gamma", &grid, EXTRACT_GAMMA_TOL * scale, gamma_samples));
    reports.push(CheckReport::from_samples("extract.h", &grid, EXTRACT_H_TOL * scale, h_samples));
    reports.push(gamma_outside_report(&grid, &data.profile.interval, &ex));

    let mut arts = vec![artifact("extracted.json", json(&ExtractedData::new(ex)?))];
    if opts.round_trip {
        let rt: RoundTripReport = round_trip(&data, &xopts, &RoundTripOptions::default())?;
        let rt_grid = format!("{}x{}", charts.len(), RoundTripOptions::default().nodes);
        let dev = rt
            .metric_deviation
            .iter()
            .enumerate()
            .map(|(c, d)| Sample {
                index: vec![c],
                point: Vec::new(),
                value: Ok(*d),
            })
            .collect();
        reports.push(CheckReport::from_samples(
            "round_trip.metric_deviation",
            &rt_grid,
            ROUND_TRIP_TOL * scale,
            dev,
        ));
        reports.push(single(
            "round_trip.gamma_outside_interval",
            &rt_grid,
            0.0,
            Ok(if rt.gamma_outside_interval { 0.0 } else { 1.0 }),
        ));
        arts.push(artifact("round_trip.json", json(&rt)));
    }
    reports.sort_by(|a, b| a.check.cmp(&b.check));
    arts.extend(report_artifacts(&reports));
    arts.push(artifact("profile.csv", profile_csv(&data.profile)?));
    Ok((reports, arts))
}

/// Number of random middle-level seeds for the Fubini–Study extraction.
const FS_SEEDS: usize = 16;

fn extract_fubini(cfg: &RunConfig) -> Result<(Vec<CheckReport>, Vec<Artifact>)> {
    let chart = FsChart::new(cfg.fubini.k, cfg.fubini.l, Normalized::X)?;
    let oracle = FsOracle::new(chart, cfg.verify.seed, FS_SEEDS);
    let xopts = ExtractOptions {
        require_gamma_outside: false,
        ..extract_options()
    };
    let ex = extract_all(&[&oracle as &dyn Oracle], &xopts)?;
    let grid = format!("fs{}x{}", chart.m(), FS_SEEDS);
    let truth = fs_profile()?;
    let mut reports = profile_reports(&grid, cfg.verify.tol_scale, &truth, &ex[0].profile.profile);
    let mean = ex[0].gamma.iter().filter_map(|g| g.gamma.finite()).sum::<f64>() / ex[0].gamma.len() as f64;
    let samples = ex[0]
        .gamma
        .iter()
        .map(|g| Sample {
            index: vec![g.seed],
            point: Vec::new(),
            value: Ok(g.gamma.chordal_distance(&Rp1::Finite(mean))),
        })
        .collect();
    reports.push(CheckReport::from_samples(
        "extract.gamma_constant",
        &grid,
        EXTRACT_GAMMA_TOL * cfg.verify.tol_scale,
        samples,
    ));
    reports.push(gamma_outside_report(&grid, &truth.interval, &ex));
    reports.sort_by(|a, b| a.check.cmp(&b.check));
    let mut arts = vec![artifact("extracted.json", json(&ExtractedData::new(ex)?))];
    arts.extend(report_artifacts(&reports));
    arts.push(artifact("profile.csv", profile_csv(&truth)?));
    Ok((reports, arts))
}
