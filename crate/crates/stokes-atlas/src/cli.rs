//! `stokes-atlas` command-line front end.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 invalid input, 3 degeneracy
//! detected under `--strict`.

use crate::geometry::{build_graph, default_domain, Domain, GeometryError, GraphOptions, StokesGraph, C64};
use crate::io::{self, CurveFilter, IoError, RegionFixture, ValidationRow};
use crate::saddle::{self, SaddleError, SeriesOrder};
use crate::singulant::{self, canonical_frame, frame_at, PhaseParams, SingulantError, REFERENCE_PARAMS};
use crate::transport::{self, classify_pieces, region_tables, ConnectionState, LogRecord, Probe, Route, TransportError};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for a numerical failure.
pub const EXIT_NUMERICAL: i32 = 1;
/// Exit code for invalid input.
pub const EXIT_INVALID: i32 = 2;
/// Exit code for a degeneracy promoted by `--strict`.
pub const EXIT_DEGENERATE: i32 = 3;

/// Command-line arguments.
#[derive(Debug, Parser)]
#[command(name = "stokes-atlas", version, about = "Stokes geometry, Stokes constants and validation for the swallowtail integral")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Phase parameter a.
    #[arg(long, global = true, default_value_t = REFERENCE_PARAMS.a, allow_hyphen_values = true)]
    pub a: f64,
    /// Phase parameter b.
    #[arg(long, global = true, default_value_t = REFERENCE_PARAMS.b, allow_hyphen_values = true)]
    pub b: f64,
    /// Print structured JSON instead of text.
    #[arg(long, global = true)]
    pub machine: bool,
    /// Treat degeneracy warnings as errors (exit code 3).
    #[arg(long, global = true)]
    pub strict: bool,
}

/// Graph source: a file, or a fresh build over a domain.
#[derive(Debug, Clone, Args)]
pub struct GraphSource {
    /// Read the graph from this JSON file instead of tracing it.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Domain rectangle `XMIN,XMAX,YMIN,YMAX` (default: around the special points).
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Option<String>,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Saddles, singulants and leading amplitudes at a point.
    Saddles {
        /// Point `RE+IMi` (default z* = 3+0.5i).
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
    },
    /// Turning points and virtual turning points.
    TurningPoints,
    /// Trace the Stokes graph; write JSON and optionally SVG.
    Graph {
        #[command(flatten)]
        source: GraphSource,
        /// Graph JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// SVG output path.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Curves drawn in the SVG: all, active or relevant.
        #[arg(long, default_value = "all")]
        filter: String,
        /// Base transseries parameters `B1,B2,B3,B4` (default symbolic).
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<String>,
    },
    /// Base Stokes constants at a point from descent-path adjacency.
    Constants {
        /// Point `RE+IMi` (default z*).
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
    },
    /// Transport the Stokes data from z0 to z.
    Transport {
        #[command(flatten)]
        source: GraphSource,
        /// Start point (default z*).
        #[arg(long, allow_hyphen_values = true)]
        z0: Option<String>,
        /// End point.
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        /// Base transseries parameters `B1,B2,B3,B4` (default symbolic).
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<String>,
    },
    /// Stokes and transseries-parameter tables over labelled regions.
    Tables {
        #[command(flatten)]
        source: GraphSource,
        /// Region fixture JSON (default: the shipped fixture).
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Base transseries parameters `B1,B2,B3,B4` (default symbolic).
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<String>,
        /// Output directory for `stokes.csv` and `sigma.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integral against transseries, transport identities and oracle agreement.
    Validate {
        #[command(flatten)]
        source: GraphSource,
        /// Comma-separated values of eps.
        #[arg(long, default_value = "0.1")]
        eps: String,
        /// Seed for the random loops.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of random loops.
        #[arg(long, default_value_t = 100)]
        loops: usize,
        /// CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Late-term coefficients of one saddle, with an optional limit estimate.
    LateTerms {
        /// Point `RE+IMi` (default z*).
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        /// Saddle label 1..4.
        #[arg(long, default_value_t = 1)]
        saddle: usize,
        /// Largest order.
        #[arg(long, default_value_t = 40)]
        n_max: usize,
        /// Estimate S_ij towards this saddle from the late terms.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Numerical value of the integral.
    Eval {
        /// Point `RE+IMi` (ignored with --physical).
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        /// Small parameter eps (ignored with --physical).
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Physical variables `X1,X2,X3`; sets z, a, b and eps by rescaling.
        #[arg(long, allow_hyphen_values = true)]
        physical: Option<String>,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
}

impl CliError {
    /// Process exit code.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Degenerate(_) => EXIT_DEGENERATE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Numerical(m) | CliError::Degenerate(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::File { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::EmptyDomain => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SingulantError> for CliError {
    fn from(e: SingulantError) -> Self {
        match e {
            SingulantError::ZeroX1 => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Index { .. } | TransportError::RepeatedLabel(_) | TransportError::SymbolCount { .. } => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SaddleError> for CliError {
    fn from(e: SaddleError) -> Self {
        match e {
            SaddleError::InvalidInput(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Parses arguments, runs the command and returns the exit code. Reports go
/// to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            let _ = out.write_all(report.text.as_bytes());
            match report.degeneracy {
                Some(w) if cli.common.strict => {
                    let _ = writeln!(err, "degeneracy: {w}");
                    EXIT_DEGENERATE
                }
                _ => report.code,
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

/// Output of a command.
struct Report {
    text: String,
    /// Degeneracy found while running; fatal under `--strict`.
    degeneracy: Option<String>,
    code: i32,
}

impl Report {
    fn ok(text: String) -> Self {
        Self { text, degeneracy: None, code: EXIT_OK }
    }
}

fn execute(cli: &Cli) -> Result<Report, CliError> {
    let c = &cli.common;
    if !c.a.is_finite() || !c.b.is_finite() {
        return Err(CliError::Invalid("a and b must be finite".into()));
    }
    let p = PhaseParams::new(c.a, c.b);
    match &cli.command {
        Command::Saddles { z } => cmd_saddles(point_or_base(z)?, p, c.machine),
        Command::TurningPoints => cmd_turning_points(p, c.machine),
        Command::Graph { source, out, svg, filter, beta } => {
            let filter: CurveFilter = filter.parse().map_err(CliError::Invalid)?;
            let beta = parse_beta(beta.as_deref())?;
            cmd_graph(p, source, out.as_ref(), svg.as_ref(), filter, beta, c.machine)
        }
        Command::Constants { z } => cmd_constants(point_or_base(z)?, p, c.machine),
        Command::Transport { source, z0, z, beta } => {
            let z0 = point_or_base(z0)?;
            let z = parse_point(z)?;
            let beta = parse_beta(beta.as_deref())?;
            cmd_transport(p, source, z0, z, beta, c.machine)
        }
        Command::Tables { source, fixture, beta, out } => {
            let beta = parse_beta(beta.as_deref())?;
            cmd_tables(p, source, fixture.as_ref(), beta, out.as_ref(), c.machine)
        }
        Command::Validate { source, eps, seed, loops, out } => {
            let eps = parse_list(eps)?;
            if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                return Err(CliError::Invalid("eps values must be positive".into()));
            }
            cmd_validate(p, source, &eps, *seed, *loops, out.as_ref(), c.machine)
        }
        Command::LateTerms { z, saddle, n_max, target } => cmd_late_terms(point_or_base(z)?, p, *saddle, *n_max, *target, c.machine),
        Command::Eval { z, eps, physical } => match physical {
            Some(text) => {
                let x = parse_list(text)?;
                let [x1, x2, x3] = x[..] else {
                    return Err(CliError::Invalid("--physical needs X1,X2,X3".into()));
                };
                let (z, p, eps) = singulant::from_physical(x1, x2, x3)?;
                cmd_eval(z, p, eps, c.machine)
            }
            None => {
                if !(*eps > 0.0) || !eps.is_finite() {
                    return Err(CliError::Invalid("eps must be positive".into()));
                }
                cmd_eval(point_or_base(z)?, p, *eps, c.machine)
            }
        },
    }
}

fn parse_point(text: &str) -> Result<C64, CliError> {
    io::parse_complex(text).map_err(|e| CliError::Invalid(e.to_string()))
}

fn point_or_base(text: &Option<String>) -> Result<C64, CliError> {
    match text {
        Some(t) => parse_point(t),
        None => Ok(singulant::z_star()),
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CliError::Invalid(format!("invalid number {s:?} in {text:?}"))))
        .collect()
}

fn parse_beta(text: Option<&str>) -> Result<Option<Vec<i64>>, CliError> {
    let Some(text) = text else { return Ok(None) };
    if text == "symbolic" {
        return Ok(None);
    }
    let v: Result<Vec<i64>, _> = text.split(',').map(|s| s.trim().parse::<i64>()).collect();
    match v {
        Ok(v) if v.len() == 4 => Ok(Some(v)),
        _ => Err(CliError::Invalid(format!("--beta needs four integers or 'symbolic', got {text:?}"))),
    }
}

fn parse_domain(text: &str) -> Result<Domain, CliError> {
    let v = parse_list(text)?;
    let [x0, x1, y0, y1] = v[..] else {
        return Err(CliError::Invalid("--domain needs XMIN,XMAX,YMIN,YMAX".into()));
    };
    Ok(Domain::new(x0, x1, y0, y1)?)
}

fn load_graph(p: PhaseParams<f64>, source: &GraphSource) -> Result<StokesGraph, CliError> {
    if let Some(path) = &source.graph {
        let g = io::read_graph(path)?;
        if g.params != p {
            return Err(CliError::Invalid(format!("graph file has a = {}, b = {}; requested a = {}, b = {}", g.params.a, g.params.b, p.a, p.b)));
        }
        return Ok(g);
    }
    let domain = match &source.domain {
        Some(d) => parse_domain(d)?,
        None => default_domain(p)?,
    };
    if !domain.contains(singulant::z_star()) {
        return Err(CliError::Invalid("the domain must contain the base point 3+0.5i".into()));
    }
    Ok(build_graph(p, domain, &GraphOptions::default())?)
}

fn machine<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn fmt_c(z: C64) -> String {
    let tidy = |x: f64| if x.abs() < 5e-7 { 0.0 } else { x };
    format!("{:+.6}{:+.6}i", tidy(z.re), tidy(z.im))
}

/// One saddle in a [`SaddleReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleEntry {
    pub label: u8,
    pub tau: C64,
    pub saddle: C64,
    pub chi: C64,
    pub amp0: C64,
}

/// A cluster of coincident saddle roots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootCluster {
    pub tau: C64,
    pub multiplicity: usize,
}

/// Output of `saddles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleReport {
    pub z: C64,
    pub a: f64,
    pub b: f64,
    /// Labelled saddles; empty when roots coincide.
    pub saddles: Vec<SaddleEntry>,
    /// Coincident roots, if any.
    pub degenerate: Vec<RootCluster>,
}

/// Saddle report at `z`. Labels are continued from `z*`; when two roots
/// coincide the report lists root clusters instead.
pub fn saddle_report(z: C64, p: PhaseParams<f64>) -> Result<SaddleReport, CliError> {
    match frame_at(z, p, None) {
        Ok(f) => Ok(SaddleReport {
            z,
            a: p.a,
            b: p.b,
            saddles: f.branches.iter().map(|b| SaddleEntry { label: b.label, tau: b.tau, saddle: -b.tau, chi: b.chi, amp0: b.amp0 }).collect(),
            degenerate: Vec::new(),
        }),
        Err(_) => {
            let zero = Complex::new(0.0, 0.0);
            let roots = singulant::saddle_roots_near(z, p, &[zero; 4])?;
            let tol = 1e-6 * (1.0 + roots.iter().map(|r| r.norm()).fold(0.0, f64::max));
            let mut clusters: Vec<RootCluster> = Vec::new();
            for r in roots {
                match clusters.iter_mut().find(|c| (c.tau - r).norm() <= tol) {
                    Some(c) => c.multiplicity += 1,
                    None => clusters.push(RootCluster { tau: r, multiplicity: 1 }),
                }
            }
            for c in &mut clusters {
                if c.tau.norm() <= tol {
                    c.tau = zero;
                }
            }
            clusters.sort_by(|x, y| x.tau.re.total_cmp(&y.tau.re).then(x.tau.im.total_cmp(&y.tau.im)));
            Ok(SaddleReport { z, a: p.a, b: p.b, saddles: Vec::new(), degenerate: clusters })
        }
    }
}

fn cmd_saddles(z: C64, p: PhaseParams<f64>, as_json: bool) -> Result<Report, CliError> {
    let r = saddle_report(z, p)?;
    let degeneracy = r.degenerate.iter().find(|c| c.multiplicity > 1).map(|c| format!("saddle root {} has multiplicity {}", fmt_c(c.tau), c.multiplicity));
    let text = if as_json {
        machine(&r)?
    } else {
        let mut s = format!("z = {}  a = {}  b = {}\n", fmt_c(z), p.a, p.b);
        for e in &r.saddles {
            let _ = writeln!(s, "saddle {}: tau = {}  chi = {:+.4}{:+.4}i  psi0 = {}", e.label, fmt_c(e.tau), e.chi.re, e.chi.im, fmt_c(e.amp0));
        }
        for c in &r.degenerate {
            let _ = writeln!(s, "root tau = {} multiplicity {}", fmt_c(c.tau), c.multiplicity);
        }
        s
    };
    Ok(Report { text, degeneracy, code: EXIT_OK })
}

/// Output of `turning-points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurningReport {
    pub a: f64,
    pub b: f64,
    pub coalescence_class: u8,
    pub turning: Vec<singulant::TurningPoint>,
    pub virtual_points: Vec<singulant::TurningPoint>,
}

fn cmd_turning_points(p: PhaseParams<f64>, as_json: bool) -> Result<Report, CliError> {
    let r = TurningReport {
        a: p.a,
        b: p.b,
        coalescence_class: singulant::coalescence_class(p),
        turning: singulant::turning_points(p)?,
        virtual_points: if p.a == 0.0 && p.b == 0.0 { Vec::new() } else { singulant::virtual_turning_points(p)? },
    };
    let degeneracy = r.turning.iter().find(|t| t.multiplicity > 1).map(|t| format!("turning point {} has multiplicity {}", fmt_c(t.z()), t.multiplicity));
    let text = if as_json {
        machine(&r)?
    } else {
        let mut s = format!("coalescence class {}\n", r.coalescence_class);
        for t in &r.turning {
            let _ = writeln!(s, "turning {} multiplicity {} pairs {:?}", fmt_c(t.z()), t.multiplicity, t.pairs);
        }
        for t in &r.virtual_points {
            let _ = writeln!(s, "virtual {} pairs {:?}", fmt_c(t.z()), t.pairs);
        }
        s
    };
    Ok(Report { text, degeneracy, code: EXIT_OK })
}

/// Output of `graph`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSummary {
    pub curves: usize,
    pub ordinary_curves: usize,
    pub crossings: usize,
    pub ordinary_crossings: Vec<(C64, usize)>,
    pub warnings: Vec<String>,
}

fn cmd_graph(
    p: PhaseParams<f64>,
    source: &GraphSource,
    out: Option<&PathBuf>,
    svg: Option<&PathBuf>,
    filter: CurveFilter,
    beta: Option<Vec<i64>>,
    as_json: bool,
) -> Result<Report, CliError> {
    let graph = load_graph(p, source)?;
    if let Some(path) = out {
        io::write_graph(path, &graph)?;
    }
    if let Some(path) = svg {
        let pieces = match filter {
            CurveFilter::All => None,
            _ => {
                let base: ConnectionState<i64> = ConnectionState::base(p)?;
                Some(classify_pieces(&graph, &base, beta.as_deref())?)
            }
        };
        io::write_atomic(path, io::render_svg(&graph, filter, pieces.as_deref()).as_bytes())?;
    }
    let summary = GraphSummary {
        curves: graph.curves.len(),
        ordinary_curves: graph.curves.iter().filter(|c| c.kind.is_ordinary()).count(),
        crossings: graph.crossings.len(),
        ordinary_crossings: graph.ordinary_crossings(),
        warnings: graph.warnings.clone(),
    };
    let text = if as_json {
        machine(&summary)?
    } else {
        let mut s = format!("{} curves ({} ordinary), {} crossing points\n", summary.curves, summary.ordinary_curves, summary.crossings);
        for (z, n) in &summary.ordinary_crossings {
            let _ = writeln!(s, "ordinary crossing {} with {} lines", fmt_c(*z), n);
        }
        for w in &summary.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    };
    Ok(Report { text, degeneracy: graph.warnings.first().cloned(), code: EXIT_OK })
}

/// Output of `constants`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsReport {
    pub z: C64,
    pub rows: Vec<Vec<i64>>,
}

fn cmd_constants(z: C64, p: PhaseParams<f64>, as_json: bool) -> Result<Report, CliError> {
    let s = saddle::base_stokes_constants(z, p)?;
    let r = ConstantsReport { z, rows: s.rows() };
    let text = if as_json {
        machine(&r)?
    } else {
        let mut t = format!("Stokes constants S_ij at z = {}\n", fmt_c(z));
        for row in &r.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>3}")).collect();
            let _ = writeln!(t, "{}", cells.join(""));
        }
        t
    };
    Ok(Report::ok(text))
}

/// State in a [`TransportReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSummary {
    pub z: C64,
    pub sigma: Vec<String>,
    /// `[S12, S13, S14, S23, S24, S34]`.
    pub stokes: Vec<i64>,
}

impl StateSummary {
    fn of(s: &ConnectionState<i64>, beta: Option<&[i64]>) -> Self {
        let sigma = s
            .sigma
            .iter()
            .map(|f| match beta {
                Some(b) => f.eval(b).to_string(),
                None => f.to_string(),
            })
            .collect();
        Self { z: s.at, sigma, stokes: s.stokes.upper() }
    }

    fn describe(&self, label: &str) -> String {
        format!("{label} {}: sigma = ({})  S = {:?}\n", fmt_c(self.z), self.sigma.join(", "), self.stokes)
    }
}

/// Output of `transport`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportReport {
    pub start: StateSummary,
    pub events: Vec<LogRecord>,
    pub end: StateSummary,
}

/// Transports the base state to `z0` and then from `z0` to `z`, returning
/// both states with the log of the second leg.
pub fn transport_between(graph: &StokesGraph, z0: C64, z: C64) -> Result<(ConnectionState<i64>, ConnectionState<i64>), CliError> {
    let base: ConnectionState<i64> = ConnectionState::base(graph.params)?;
    let start = if (z0 - base.at).norm() == 0.0 {
        base
    } else {
        region_tables(graph, &base, &[Probe { label: "z0".into(), z: z0, route: Route::Straight }])?.states.remove(0).1
    };
    let end = if z == z0 {
        start.rebased()
    } else {
        region_tables(graph, &start.rebased(), &[Probe { label: "z".into(), z, route: Route::Straight }])?.states.remove(0).1
    };
    Ok((start, end))
}

fn cmd_transport(p: PhaseParams<f64>, source: &GraphSource, z0: C64, z: C64, beta: Option<Vec<i64>>, as_json: bool) -> Result<Report, CliError> {
    let graph = load_graph(p, source)?;
    let (start, end) = transport_between(&graph, z0, z)?;
    let r = TransportReport { start: StateSummary::of(&start, beta.as_deref()), events: end.log.clone(), end: StateSummary::of(&end, beta.as_deref()) };
    let text = if as_json {
        machine(&r)?
    } else {
        let mut t = r.start.describe("from");
        for e in &r.events {
            let _ = writeln!(t, "  {e}");
        }
        t.push_str(&r.end.describe("to"));
        t
    };
    Ok(Report::ok(text))
}

/// Output of `tables`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesReport {
    pub stokes_csv: String,
    pub sigma_csv: String,
    /// Regions whose Stokes row differs from the fixture expectation.
    pub stokes_mismatches: Vec<String>,
}

/// Stokes and sigma tables for a fixture, with the labels of Stokes rows
/// that differ from the fixture expectation.
pub fn tables_for(graph: &StokesGraph, fixture: &RegionFixture, beta: Option<&[i64]>) -> Result<TablesReport, CliError> {
    let base: ConnectionState<i64> = ConnectionState::base(graph.params)?;
    let sprobes: Vec<Probe> = fixture.stokes_regions.iter().map(|f| f.probe()).collect();
    let st = region_tables(graph, &base, &sprobes)?;
    let sg = region_tables(graph, &base, &fixture.sigma_probes())?;
    let stokes_mismatches = st
        .stokes
        .iter()
        .zip(&fixture.stokes_regions)
        .filter(|((_, got), f)| *got != f.expected)
        .map(|((label, _), _)| label.clone())
        .collect();
    Ok(TablesReport { stokes_csv: io::stokes_table_csv(&st)?, sigma_csv: io::sigma_table_csv(&sg, beta)?, stokes_mismatches })
}

fn cmd_tables(
    p: PhaseParams<f64>,
    source: &GraphSource,
    fixture: Option<&PathBuf>,
    beta: Option<Vec<i64>>,
    out: Option<&PathBuf>,
    as_json: bool,
) -> Result<Report, CliError> {
    let fixture = match fixture {
        Some(path) => RegionFixture::parse(&std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?)?,
        None => RegionFixture::builtin(),
    };
    if fixture.params != p {
        return Err(CliError::Invalid(format!("fixture is for a = {}, b = {}", fixture.params.a, fixture.params.b)));
    }
    let graph = load_graph(p, source)?;
    let r = tables_for(&graph, &fixture, beta.as_deref())?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Numerical(format!("{}: {e}", dir.display())))?;
        io::write_atomic(&dir.join("stokes.csv"), r.stokes_csv.as_bytes())?;
        io::write_atomic(&dir.join("sigma.csv"), r.sigma_csv.as_bytes())?;
    }
    let text = if as_json {
        machine(&r)?
    } else {
        let mut t = format!("{}\n{}", r.stokes_csv, r.sigma_csv);
        if !r.stokes_mismatches.is_empty() {
            let _ = writeln!(t, "rows differing from the fixture: {}", r.stokes_mismatches.join(" "));
        }
        t
    };
    Ok(Report::ok(text))
}

/// Validation probes: label and point.
pub const VALIDATION_PROBES: [(&str, f64, f64); 10] = [
    ("a1", 1.0, -1.0),
    ("a2", 1.0, 2.75),
    ("a3", 1.0, 4.5),
    ("a4", 1.0, -3.0),
    ("a5", 1.0, -4.75),
    ("east", 6.0, 1.0),
    ("south-east", 8.0, -3.0),
    ("west", -3.0, 0.5),
    ("south-west", -2.0, -5.0),
    ("north-east", 4.0, 6.0),
];

/// Far-field anchor of the validation runs: `|z| = 5` on `arg z = -3 pi / 4`.
pub fn far_field_point() -> C64 {
    Complex::from_polar(5.0, -0.75 * std::f64::consts::PI)
}

/// Output of `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSummary {
    pub rows: Vec<ValidationRow>,
    /// Rows with relative error above `5 eps`.
    pub integral_failures: usize,
    pub loops: usize,
    pub loop_failures: usize,
    pub crossings: usize,
    pub crossing_failures: usize,
    /// Ordered pairs at `z*` where the late-term limit converged.
    pub oracle_pairs: usize,
    pub oracle_disagreements: usize,
}

/// Integral against anchored leading-order transseries at the validation
/// probes, plus the far-field row against the exact far-field term.
pub fn integral_rows(graph: &StokesGraph, eps: f64) -> Result<Vec<ValidationRow>, CliError> {
    let p = graph.params;
    let base: ConnectionState<i64> = ConnectionState::base(p)?;
    let beta: Vec<C64> = transport::INTEGRAL_BETA.iter().map(|&b| Complex::new(b as f64, 0.0)).collect();
    let ff = far_field_point();
    let mut probes = vec![Probe { label: "far-field".into(), z: ff, route: Route::Straight }];
    probes.extend(VALIDATION_PROBES.iter().map(|(l, x, y)| Probe { label: l.to_string(), z: Complex::new(*x, *y), route: Route::Straight }));
    let states = region_tables(graph, &base, &probes)?.states;
    let norm = saddle::calibrate(&states[0].1, &beta, eps, SeriesOrder::Leading)?;
    states
        .par_iter()
        .map(|(label, s)| {
            let frame = s.frame.expect("transported states carry frames");
            let numeric = saddle::integrate_in(&frame, eps, &saddle::QuadratureOptions::default())?.value;
            let transseries = if label == "far-field" {
                let b = &frame.branches[0];
                saddle::Normalization::analytic(eps).c * b.amp0 * (-b.chi / eps).exp()
            } else {
                saddle::transseries_eval(s, &beta, &norm, SeriesOrder::Leading)?
            };
            Ok(ValidationRow { point: s.at, eps, numeric, transseries, relative_error: (transseries - numeric).norm() / numeric.norm(), region: label.clone() })
        })
        .collect()
}

fn cmd_validate(p: PhaseParams<f64>, source: &GraphSource, eps: &[f64], seed: u64, loops: usize, out: Option<&PathBuf>, as_json: bool) -> Result<Report, CliError> {
    let graph = load_graph(p, source)?;
    let base: ConnectionState<i64> = ConnectionState::base(p)?;
    let mut rows = Vec::new();
    for &e in eps {
        rows.extend(integral_rows(&graph, e)?);
    }
    let integral_failures = rows.iter().filter(|r| !(r.relative_error <= 5.0 * r.eps)).count();
    let loop_paths = transport::random_loops(&graph, base.at, seed, loops);
    let loop_results: Vec<Result<transport::LoopCheck, TransportError>> =
        loop_paths.par_iter().enumerate().map(|(k, l)| transport::loop_check(&graph, &base, &format!("loop{k}"), l)).collect();
    let loop_failures = loop_results.iter().filter(|r| !matches!(r, Ok(c) if c.closed)).count();
    let crossing = transport::crossing_consistency(&graph, &base)?;
    let crossing_failures = crossing.iter().filter(|c| !c.closed).count();
    let frame = canonical_frame(p)?;
    let s = saddle::base_stokes_constants_in(&frame)?;
    let mut oracle_pairs = 0;
    let mut oracle_disagreements = 0;
    for i in 1..=4 {
        for j in (1..=4).filter(|&j| j != i) {
            if let Ok(est) = saddle::stokes_constant_limit_in(&frame, i, j, 30) {
                oracle_pairs += 1;
                if (est.value - s.get(i, j) as f64).norm() > 1e-2 {
                    oracle_disagreements += 1;
                }
            }
        }
    }
    let summary = ValidationSummary {
        rows,
        integral_failures,
        loops,
        loop_failures,
        crossings: crossing.len(),
        crossing_failures,
        oracle_pairs,
        oracle_disagreements,
    };
    let csv = io::validation_csv(&summary.rows)?;
    if let Some(path) = out {
        io::write_atomic(path, csv.as_bytes())?;
    }
    let text = if as_json {
        machine(&summary)?
    } else {
        let mut t = csv;
        let _ = writeln!(t, "integral rows above 5 eps: {} of {}", summary.integral_failures, summary.rows.len());
        let _ = writeln!(t, "loop identity failures: {} of {}", summary.loop_failures, summary.loops);
        let _ = writeln!(t, "crossing consistency failures: {} of {}", summary.crossing_failures, summary.crossings);
        let _ = writeln!(t, "oracle disagreements: {} of {} convergent pairs", summary.oracle_disagreements, summary.oracle_pairs);
        t
    };
    let failed = summary.integral_failures + summary.loop_failures + summary.crossing_failures + summary.oracle_disagreements > 0;
    Ok(Report { text, degeneracy: None, code: if failed { EXIT_NUMERICAL } else { EXIT_OK } })
}

/// Output of `late-terms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LateTermsReport {
    pub z: C64,
    pub saddle: usize,
    pub terms: Vec<C64>,
    pub limit: Option<saddle::LimitEstimate>,
}

fn cmd_late_terms(z: C64, p: PhaseParams<f64>, i: usize, n_max: usize, target: Option<usize>, as_json: bool) -> Result<Report, CliError> {
    let frame = frame_at(z, p, None)?;
    let terms = saddle::late_terms_in(&frame, i, n_max)?;
    let limit = match target {
        Some(j) => Some(saddle::stokes_constant_limit_in(&frame, i, j, n_max)?),
        None => None,
    };
    let r = LateTermsReport { z, saddle: i, terms, limit };
    let text = if as_json {
        machine(&r)?
    } else {
        let mut t = format!("late terms of saddle {i} at z = {}\n", fmt_c(z));
        for (n, v) in r.terms.iter().enumerate() {
            let _ = writeln!(t, "n = {n:>3}  psi_n = {:+.10e}{:+.10e}i", v.re, v.im);
        }
        if let Some(e) = &r.limit {
            let _ = writeln!(t, "S_{}{} ~ {} (error {:.1e})", e.i, e.j, fmt_c(e.value), e.error);
        }
        t
    };
    Ok(Report::ok(text))
}

/// Output of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub z: C64,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    /// Physical variables `(x1, x2, x3)` of the same point.
    pub physical: (C64, f64, f64),
    pub value: C64,
    pub relative_error: f64,
    pub thimble_coefficients: [i32; 4],
}

fn cmd_eval(z: C64, p: PhaseParams<f64>, eps: f64, as_json: bool) -> Result<Report, CliError> {
    let v = saddle::integrate_swallowtail(z, p, eps)?;
    let r = EvalReport {
        z,
        a: p.a,
        b: p.b,
        eps,
        physical: singulant::to_physical(z, p, eps),
        value: v.value,
        relative_error: v.relative_error(),
        thimble_coefficients: v.decompositions[0].coefficients,
    };
    let text = if as_json {
        machine(&r)?
    } else {
        format!(
            "psi(z = {}, a = {}, b = {}, eps = {}) = {:+.12e}{:+.12e}i  (relative error {:.1e}, thimbles {:?})\n",
            fmt_c(z),
            p.a,
            p.b,
            eps,
            r.value.re,
            r.value.im,
            r.relative_error,
            r.thimble_coefficients
        )
    };
    Ok(Report::ok(text))
}
