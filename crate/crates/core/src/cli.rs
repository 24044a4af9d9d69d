//! Batch front end: `wfvar <command> --scenario <file.json>`.
//!
//! A scenario is a versioned JSON document in natural units (c = 1). File
//! references inside it are resolved relative to the scenario's directory.
//! Every numeric output is a CSV with a fixed header and `{:.16e}` values,
//! so identical scenarios produce byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::action::{action, ActionWindow, BoundaryData};
use crate::error::{Error, Result};
use crate::farfield::{gah_residual, sphere_flux, SphereMesh};
use crate::optimizer::{discretize, minimize, verify_with, MinimizeOptions, MinimizerReport};
use crate::shortrange::{
    construct_partner_with, polygonal_family, polygonal_sewing_pair, sewing_chain, ChainDirection, ChainEntry,
    ConstructOptions, SeparationFamilyParams, SewingPairSpec,
};
use crate::trajectory::{ParticleParams, PiecewiseTrajectory, TrajectoryFile};

pub const SCENARIO_VERSION: u32 = 1;

pub const COMMANDS: [&str; 8] = [
    "action",
    "verify",
    "gah-scan",
    "flux",
    "build-polygonal",
    "construct-partner",
    "sewing-chain",
    "minimize",
];

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wfvar", version, about = "Two-body action-at-a-distance electrodynamics toolkit")]
struct Args {
    /// One of: action, verify, gah-scan, flux, build-polygonal,
    /// construct-partner, sewing-chain, minimize.
    command: String,
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides the scenario's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Command tolerance: gtol for minimize, spread tolerance for
    /// construct-partner, residual tolerance for verify.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub quiet: bool,
}

impl RunOptions {
    pub fn new(scenario: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            out: None,
            tol: None,
            quiet: true,
        }
    }
}

/// Inline value or a path to a JSON file holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    fn load(&self, base: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => read_json(&base.join(p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub start_time: f64,
    pub end_time: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub history1: Option<Source<TrajectoryFile>>,
    #[serde(default)]
    pub history2: Option<Source<TrajectoryFile>>,
}

/// `count` equally spaced times from `start` to `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| {
                    if i == n - 1 {
                        self.end
                    } else {
                        self.start + (self.end - self.start) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { n_theta: 20, n_phi: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub seed: ChainEntry,
    pub direction: ChainDirection,
    pub count: usize,
}

/// Command options; each command reads only the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandOptions {
    /// Action window; defaults to the boundary window.
    pub window: Option<[f64; 2]>,
    /// Observer times for gah-scan and flux, particle-1 times for construct-partner.
    pub times: Option<TimeGrid>,
    pub mesh: MeshSpec,
    /// Sphere radius for flux. Only the 1/R field part enters, so the flux
    /// depends on R only through the light travel time R.
    pub radius: f64,
    pub sewing_pair: Option<SewingPairSpec>,
    pub spread_tol: Option<f64>,
    /// Parameters of the particle built by construct-partner.
    pub particle: Option<ParticleParams>,
    pub chain: Option<ChainSpec>,
    pub minimizer: MinimizeOptions,
    /// Breaking times of particles 1 and 2 inside the minimization window.
    pub break_times: [Vec<f64>; 2],
}

impl Default for CommandOptions {
    fn default() -> Self {
        Self {
            window: None,
            times: None,
            mesh: MeshSpec::default(),
            radius: 1.0,
            sewing_pair: None,
            spread_tol: None,
            particle: None,
            chain: None,
            minimizer: MinimizeOptions::default(),
            break_times: [Vec::new(), Vec::new()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    /// Informational; only natural units (c = 1) are supported.
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default)]
    pub traj1: Option<Source<TrajectoryFile>>,
    #[serde(default)]
    pub traj2: Option<Source<TrajectoryFile>>,
    #[serde(default)]
    pub family: Option<Source<SeparationFamilyParams>>,
    #[serde(default)]
    pub boundary: Option<BoundarySpec>,
    #[serde(default)]
    pub options: CommandOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))
}

/// A scenario together with its directory, which anchors relative paths.
struct Loaded {
    scenario: Scenario,
    base: PathBuf,
}

impl Loaded {
    fn open(path: &Path) -> Result<Self> {
        let scenario: Scenario = read_json(path)?;
        if scenario.version != SCENARIO_VERSION {
            return Err(Error::Config(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                scenario.version
            )));
        }
        if let Some(u) = &scenario.units {
            if !u.to_ascii_lowercase().starts_with("natural") {
                return Err(Error::Config(format!("unsupported units '{u}', only natural units (c = 1)")));
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { scenario, base })
    }

    fn trajectory(&self, which: u8) -> Result<PiecewiseTrajectory> {
        let src = if which == 1 { &self.scenario.traj1 } else { &self.scenario.traj2 };
        let src = src
            .as_ref()
            .ok_or_else(|| Error::Config(format!("scenario has no traj{which}")))?;
        PiecewiseTrajectory::from_json(&src.load(&self.base)?)
    }

    fn pair(&self) -> Result<(PiecewiseTrajectory, PiecewiseTrajectory)> {
        Ok((self.trajectory(1)?, self.trajectory(2)?))
    }

    fn boundary(&self) -> Result<BoundaryData> {
        let spec = self
            .scenario
            .boundary
            .as_ref()
            .ok_or_else(|| Error::Config("scenario has no boundary block".into()))?;
        let history = |h: &Option<Source<TrajectoryFile>>| -> Result<Option<PiecewiseTrajectory>> {
            h.as_ref()
                .map(|s| PiecewiseTrajectory::from_json(&s.load(&self.base)?))
                .transpose()
        };
        Ok(BoundaryData {
            start_time: spec.start_time,
            end_time: spec.end_time,
            k2: spec.k2,
            history1: history(&spec.history1)?,
            history2: history(&spec.history2)?,
        })
    }

    fn times(&self) -> Result<Vec<f64>> {
        self.scenario
            .options
            .times
            .map(|g| g.times())
            .ok_or_else(|| Error::Config("options.times is required".into()))
    }

    fn mesh(&self) -> Result<SphereMesh> {
        let m = self.scenario.options.mesh;
        SphereMesh::gauss_product(m.n_theta, m.n_phi)
    }
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `header` and one line per row.
pub fn write_csv<I>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub const SEGMENTS_HEADER: &str = "particle,t0,t1,max_el_residual";
pub const BREAKS_HEADER: &str = "particle,t,dpx,dpy,dpz,de";

/// Segment and break residual tables of a report, plus the report as JSON.
pub fn emit_report(report: &MinimizerReport, dir: &Path) -> Result<()> {
    write_csv(
        &dir.join("segments.csv"),
        SEGMENTS_HEADER,
        report
            .segments
            .iter()
            .map(|s| format!("{},{},{},{}", s.particle, f(s.t0), f(s.t1), f(s.max_el_residual))),
    )?;
    write_csv(
        &dir.join("breaks.csv"),
        BREAKS_HEADER,
        report.break_residuals.iter().map(|b| {
            let r = &b.residual;
            format!("{},{},{},{},{},{}", b.particle, f(r.t), f(r.dp.x), f(r.dp.y), f(r.dp.z), f(r.de))
        }),
    )?;
    write_json(&dir.join("report.json"), report)
}

/// Parses the process arguments and runs; returns the exit code.
pub fn main_from_env() -> i32 {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let opts = RunOptions {
        scenario: args.scenario,
        out: args.out,
        tol: args.tol,
        quiet: args.quiet,
    };
    run(&args.command, &opts)
}

/// Runs one command. Exit code 0 on success, 1 on any scenario or domain
/// error (with a one-line diagnostic on stderr), 2 for an unknown command.
pub fn run(command: &str, opts: &RunOptions) -> i32 {
    if !COMMANDS.contains(&command) {
        eprintln!("wfvar: unknown command '{command}' (expected one of {})", COMMANDS.join(", "));
        return EXIT_USAGE;
    }
    let result = thread_pool().and_then(|pool| pool.install(|| execute(command, opts)));
    match result {
        Ok(summary) => {
            if !opts.quiet {
                println!("{summary}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("wfvar {command}: {}", e.to_string().replace('\n', " "));
            EXIT_FAILURE
        }
    }
}

/// Pool sized by `WFVAR_THREADS` (unset or 0 = one per core).
fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("WFVAR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("WFVAR_THREADS must be a non-negative integer, got '{v}'")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

fn execute(command: &str, opts: &RunOptions) -> Result<String> {
    let loaded = Loaded::open(&opts.scenario)?;
    let out = match (&opts.out, &loaded.scenario.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => loaded.base.join(o),
        (None, None) => loaded.base.join("out"),
    };
    fs::create_dir_all(&out)?;
    if let Some(t) = opts.tol {
        if !(t > 0.0) {
            return Err(Error::Config(format!("--tol must be positive, got {t}")));
        }
    }
    match command {
        "action" => cmd_action(&loaded, &out),
        "verify" => cmd_verify(&loaded, &out, opts.tol),
        "gah-scan" => cmd_gah_scan(&loaded, &out),
        "flux" => cmd_flux(&loaded, &out),
        "build-polygonal" => cmd_build_polygonal(&loaded, &out),
        "construct-partner" => cmd_construct_partner(&loaded, &out, opts.tol),
        "sewing-chain" => cmd_sewing_chain(&loaded, &out),
        "minimize" => cmd_minimize(&loaded, &out, opts.tol),
        _ => unreachable!("command list checked by run"),
    }
}

fn cmd_action(l: &Loaded, out: &Path) -> Result<String> {
    let (t1, t2) = l.pair()?;
    let boundary = l.boundary()?;
    boundary.check(&t1, &t2)?;
    let [a, b] = l.scenario.options.window.unwrap_or([boundary.start_time, boundary.end_time]);
    let s = action(&t1, &t2, ActionWindow::new(a, b)?, &boundary)?;
    write_csv(
        &out.join("action.csv"),
        "t_start,t_end,k2,action",
        [format!("{},{},{},{}", f(a), f(b), f(boundary.k2), f(s))],
    )?;
    Ok(format!("action = {s:.16e}"))
}

fn cmd_verify(l: &Loaded, out: &Path, tol: Option<f64>) -> Result<String> {
    let (t1, t2) = l.pair()?;
    let boundary = l.boundary()?;
    let m = l.scenario.options.minimizer;
    let report = verify_with(
        &t1,
        &t2,
        &boundary,
        tol.unwrap_or(m.el_tol),
        tol.unwrap_or(m.break_tol),
    )?;
    emit_report(&report, out)?;
    Ok(format!(
        "max EL residual {:.3e}, max break residual {:.3e}, converged {}",
        report.max_el_residual, report.max_break_residual, report.converged
    ))
}

pub const GAH_SCAN_HEADER: &str = "t,nx,ny,nz,rx,ry,rz,defined";

fn cmd_gah_scan(l: &Loaded, out: &Path) -> Result<String> {
    let (t1, t2) = l.pair()?;
    let times = l.times()?;
    let mesh = l.mesh()?;
    let mut rows = Vec::with_capacity(times.len() * mesh.len());
    let mut worst = 0.0f64;
    for &t in &times {
        for &n in &mesh.directions {
            let r = gah_residual(&t1, &t2, t, n)?;
            let (v, defined) = match r {
                Some(v) => {
                    worst = worst.max(v.norm());
                    (v, 1)
                }
                None => (crate::vec3::Vec3::new(f64::NAN, f64::NAN, f64::NAN), 0),
            };
            rows.push(format!(
                "{},{},{},{},{},{},{},{defined}",
                f(t),
                f(n.x),
                f(n.y),
                f(n.z),
                f(v.x),
                f(v.y),
                f(v.z)
            ));
        }
    }
    let count = rows.len();
    write_csv(&out.join("gah_scan.csv"), GAH_SCAN_HEADER, rows)?;
    Ok(format!("{count} samples, max |residual| {worst:.3e}"))
}

fn cmd_flux(l: &Loaded, out: &Path) -> Result<String> {
    let (t1, t2) = l.pair()?;
    let times = l.times()?;
    let mesh = l.mesh()?;
    let radius = l.scenario.options.radius;
    let mut rows = Vec::with_capacity(times.len());
    for &t in &times {
        let flux = sphere_flux(&t1, &t2, t, radius, &mesh)?;
        rows.push(format!("{},{}", f(t), f(flux)));
    }
    let count = rows.len();
    write_csv(&out.join("flux.csv"), "t,flux", rows)?;
    Ok(format!("{count} flux samples"))
}

fn cmd_build_polygonal(l: &Loaded, out: &Path) -> Result<String> {
    let spec = l
        .scenario
        .options
        .sewing_pair
        .as_ref()
        .ok_or_else(|| Error::Config("options.sewing_pair is required".into()))?;
    let (t1, t2) = polygonal_sewing_pair(spec)?;
    let family = polygonal_family(&t1, &t2)?;
    write_json(&out.join("traj1.json"), &t1.to_json())?;
    write_json(&out.join("traj2.json"), &t2.to_json())?;
    write_json(&out.join("family.json"), &family)?;
    Ok(format!(
        "{} + {} segments, {} family intervals",
        t1.segments().len(),
        t2.segments().len(),
        family.intervals.len()
    ))
}

fn cmd_construct_partner(l: &Loaded, out: &Path, tol: Option<f64>) -> Result<String> {
    let traj2 = l.trajectory(2)?;
    let family = l
        .scenario
        .family
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no family".into()))?
        .load(&l.base)?;
    let times = l.times()?;
    let mesh = l.mesh()?;
    let o = &l.scenario.options;
    let copts = ConstructOptions {
        spread_tol: tol.or(o.spread_tol).unwrap_or(ConstructOptions::default().spread_tol),
        particle: o.particle,
        ..ConstructOptions::default()
    };
    let (traj1, report) = construct_partner_with(&traj2, &family, &mesh.directions, &times, copts)?;
    write_json(&out.join("traj1.json"), &traj1.to_json())?;
    write_csv(
        &out.join("consistency.csv"),
        "t1,spread",
        report.spreads.iter().map(|&(t, s)| format!("{},{}", f(t), f(s))),
    )?;
    Ok(format!("max spread {:.3e} over {} times", report.max_spread, report.spreads.len()))
}

fn cmd_sewing_chain(l: &Loaded, out: &Path) -> Result<String> {
    let (t1, t2) = l.pair()?;
    let spec = l
        .scenario
        .options
        .chain
        .as_ref()
        .ok_or_else(|| Error::Config("options.chain is required".into()))?;
    let chain = sewing_chain(&t1, &t2, spec.seed, spec.direction, spec.count)?;
    write_csv(
        &out.join("chain.csv"),
        "index,particle,t",
        chain
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{},{},{}", i + 1, e.particle, f(e.t))),
    )?;
    Ok(format!(
        "{} chain entries{}",
        chain.entries.len(),
        if chain.truncated { " (truncated)" } else { "" }
    ))
}

fn cmd_minimize(l: &Loaded, out: &Path, tol: Option<f64>) -> Result<String> {
    let (t1, t2) = l.pair()?;
    let boundary = l.boundary()?;
    let o = &l.scenario.options;
    let mut mopts = o.minimizer;
    if let Some(t) = tol {
        mopts.gtol = t;
    }
    let init = discretize(
        &boundary,
        (&t1, &t2),
        mopts.nodes_per_segment,
        [&o.break_times[0], &o.break_times[1]],
    )?;
    let (r1, r2, report) = minimize(&boundary, init, &mopts)?;
    write_json(&out.join("traj1.json"), &r1.to_json())?;
    write_json(&out.join("traj2.json"), &r2.to_json())?;
    emit_report(&report, out)?;
    write_csv(
        &out.join("descent.csv"),
        "particle,step,action",
        report.descent.iter().enumerate().flat_map(|(k, h)| {
            h.iter()
                .enumerate()
                .map(move |(i, s)| format!("{},{},{}", k + 1, i + 1, f(*s)))
        }),
    )?;
    if !report.converged {
        eprintln!(
            "wfvar minimize: not converged (gradient {:.3e}, EL {:.3e}, break {:.3e})",
            report.gradient_norm, report.max_el_residual, report.max_break_residual
        );
    }
    Ok(format!(
        "{} steps, action {:.16e}, converged {}",
        report.iterations, report.action, report.converged
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grid_endpoints() {
        assert!(TimeGrid { start: 0.0, end: 1.0, count: 0 }.times().is_empty());
        assert_eq!(TimeGrid { start: 2.0, end: 1.0, count: 1 }.times(), vec![2.0]);
        let t = TimeGrid { start: 0.0, end: 1.0, count: 4 }.times();
        assert_eq!(t.len(), 4);
        assert_eq!(t[3], 1.0);
    }

    #[test]
    fn unknown_command_is_usage_error() {
        assert_eq!(run("frobnicate", &RunOptions::new("nowhere.json")), EXIT_USAGE);
    }

    #[test]
    fn missing_scenario_is_failure() {
        assert_eq!(run("action", &RunOptions::new("/nonexistent/scenario.json")), EXIT_FAILURE);
    }

    #[test]
    fn scenario_rejects_unknown_fields() {
        let text = r#"{"version": 1, "bogus": 3}"#;
        assert!(serde_json::from_str::<Scenario>(text).is_err());
        let ok: Scenario = serde_json::from_str(r#"{"version": 1, "traj1": "a.json"}"#).unwrap();
        assert_eq!(ok.traj1, Some(Source::Path("a.json".into())));
    }

    #[test]
    fn csv_numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324] {
            assert_eq!(f(x).parse::<f64>().unwrap(), x);
        }
    }
}
