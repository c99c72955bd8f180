//! Serialization: versioned graph JSON, CSV tables and reports, SVG figures,
//! complex literals and atomic file output.

use crate::geometry::{CurveKind, StokesGraph, C64};
use crate::singulant::PhaseParams;
use crate::transport::{Coeff, PieceClass, Probe, RegionTables, Route};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Current graph file format.
pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// Serialization and file errors.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("graph file has format_version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid complex literal {0:?}")]
    Complex(String),
}

/// On-disk graph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub format_version: u32,
    pub graph: StokesGraph,
}

#[derive(Deserialize)]
struct VersionHeader {
    format_version: u32,
}

/// Graph as a pretty-printed JSON document with a trailing newline.
pub fn graph_to_json(graph: &StokesGraph) -> Result<String, IoError> {
    let doc = GraphFile { format_version: GRAPH_FORMAT_VERSION, graph: graph.clone() };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

/// Parses a graph document, rejecting any other format version.
pub fn graph_from_json(text: &str) -> Result<StokesGraph, IoError> {
    let header: VersionHeader = serde_json::from_str(text)?;
    if header.format_version != GRAPH_FORMAT_VERSION {
        return Err(IoError::Version { found: header.format_version, expected: GRAPH_FORMAT_VERSION });
    }
    let doc: GraphFile = serde_json::from_str(text)?;
    Ok(doc.graph)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::File { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "no file name")))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(err)
}

/// Writes a graph document atomically.
pub fn write_graph(path: &Path, graph: &StokesGraph) -> Result<(), IoError> {
    write_atomic(path, graph_to_json(graph)?.as_bytes())
}

/// Reads a graph document.
pub fn read_graph(path: &Path) -> Result<StokesGraph, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    graph_from_json(&text)
}

/// Formats a real number so that it parses back to the same value.
pub fn format_real(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Formats `z` as `RE+IMi` or `RE-IMi`.
pub fn format_complex(z: C64) -> String {
    let im = format_real(z.im.abs());
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{}{sign}{im}i", format_real(z.re))
}

/// Parses `RE`, `IMi`, `RE+IMi` or `RE-IMi`, with optional signs and
/// scientific notation; a bare `i` stands for a unit coefficient.
pub fn parse_complex(text: &str) -> Result<C64, IoError> {
    let bad = || IoError::Complex(text.to_string());
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return f64::from_str(&s).ok().filter(|re| re.is_finite()).map(|re| Complex::new(re, 0.0)).ok_or_else(bad);
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len()).rev().find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re_text, im_text) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("", body),
    };
    let im = match im_text {
        "" | "+" => 1.0,
        "-" => -1.0,
        t => f64::from_str(t).map_err(|_| bad())?,
    };
    let re = if re_text.is_empty() { 0.0 } else { f64::from_str(re_text).map_err(|_| bad())? };
    if !re.is_finite() || !im.is_finite() {
        return Err(bad());
    }
    Ok(Complex::new(re, im))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String, IoError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::File { path: PathBuf::from("<csv>"), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
}

/// Header of the Stokes table.
pub const STOKES_HEADER: [&str; 7] = ["region", "S12", "S13", "S14", "S23", "S24", "S34"];
/// Header of the transseries-parameter table.
pub const SIGMA_HEADER: [&str; 5] = ["region", "sigma1", "sigma2", "sigma3", "sigma4"];

/// Stokes table: one row per region with the upper-triangle constants.
pub fn stokes_table_csv<R: Coeff>(tables: &RegionTables<R>) -> Result<String, IoError> {
    let rows: Vec<Vec<String>> = tables
        .stokes
        .iter()
        .map(|(label, v)| std::iter::once(label.clone()).chain(v.iter().map(|x| x.to_string())).collect())
        .collect();
    csv_text(&STOKES_HEADER, &rows)
}

/// Transseries-parameter table: linear forms in `b1..b4`, or their values
/// when `beta` is given.
pub fn sigma_table_csv<R: Coeff>(tables: &RegionTables<R>, beta: Option<&[R]>) -> Result<String, IoError> {
    let rows: Vec<Vec<String>> = tables
        .sigma
        .iter()
        .map(|(label, sigma)| {
            let cells = sigma.iter().map(|s| match beta {
                Some(b) => s.eval(b).to_string(),
                None => s.to_string(),
            });
            std::iter::once(label.clone()).chain(cells).collect()
        })
        .collect();
    csv_text(&SIGMA_HEADER, &rows)
}

/// Region probe fixture shipped with the crate.
pub const REGION_FIXTURE: &str = include_str!("../fixtures/regions.json");

/// One labelled probe with its expected table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureProbe<E> {
    pub label: String,
    pub z: C64,
    pub route: Route,
    pub expected: E,
}

impl<E> FixtureProbe<E> {
    /// The probe without its expectation.
    pub fn probe(&self) -> Probe {
        Probe { label: self.label.clone(), z: self.z, route: self.route.clone() }
    }
}

/// Region fixture: probes for the Stokes table and for the two groups of
/// transseries-parameter sectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFixture {
    pub version: u32,
    pub params: PhaseParams<f64>,
    pub stokes_columns: Vec<String>,
    /// Expected `[S12, S13, S14, S23, S24, S34]` per region.
    pub stokes_regions: Vec<FixtureProbe<Vec<i64>>>,
    /// Sectors around the six-line crossing, with all four `sigma` forms.
    pub sigma_sectors_p: Vec<FixtureProbe<Vec<String>>>,
    /// Sectors around a three-line crossing in the upper half plane, with
    /// the forms of `sigma_1` and `sigma_2`.
    pub sigma_sectors_upper: Vec<FixtureProbe<Vec<String>>>,
}

impl RegionFixture {
    /// Parses a fixture document.
    pub fn parse(text: &str) -> Result<Self, IoError> {
        Ok(serde_json::from_str(text)?)
    }

    /// The fixture shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(REGION_FIXTURE).expect("shipped fixture parses")
    }

    /// Probes of the transseries-parameter table, upper sectors first.
    pub fn sigma_probes(&self) -> Vec<Probe> {
        self.sigma_sectors_upper.iter().chain(&self.sigma_sectors_p).map(|f| f.probe()).collect()
    }

    /// Expected Stokes table in the format of [`stokes_table_csv`].
    pub fn expected_stokes_csv(&self) -> Result<String, IoError> {
        let rows: Vec<Vec<String>> = self
            .stokes_regions
            .iter()
            .map(|f| std::iter::once(f.label.clone()).chain(f.expected.iter().map(|x| x.to_string())).collect())
            .collect();
        csv_text(&STOKES_HEADER, &rows)
    }
}

/// One line of a validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub point: C64,
    pub eps: f64,
    pub numeric: C64,
    pub transseries: C64,
    pub relative_error: f64,
    pub region: String,
}

/// Header of the validation report.
pub const VALIDATION_HEADER: [&str; 6] = ["point", "eps", "numeric", "transseries", "relative_error", "region"];

/// Validation report as CSV.
pub fn validation_csv(rows: &[ValidationRow]) -> Result<String, IoError> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format_complex(r.point),
                format_real(r.eps),
                format_complex(r.numeric),
                format_complex(r.transseries),
                format!("{:.6e}", r.relative_error),
                r.region.clone(),
            ]
        })
        .collect();
    csv_text(&VALIDATION_HEADER, &rows)
}

/// Which curves an SVG figure shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFilter {
    All,
    Active,
    Relevant,
}

impl FromStr for CurveFilter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "active" => Ok(Self::Active),
            "relevant" => Ok(Self::Relevant),
            other => Err(format!("unknown filter {other:?} (expected all, active or relevant)")),
        }
    }
}

/// Stroke width of ordinary curves in figure pixels.
pub const ORDINARY_STROKE: f64 = 2.0;
/// Stroke width of higher-order curves in figure pixels.
pub const HIGHER_STROKE: f64 = 1.0;
/// Fill of turning points.
pub const TURNING_FILL: &str = "#1a1a1a";
/// Fill of virtual turning points.
pub const VIRTUAL_FILL: &str = "#d0d0d0";
/// Figure width in pixels.
pub const SVG_WIDTH: f64 = 800.0;

fn curve_colour(kind: CurveKind) -> &'static str {
    const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let pair = |i: u8, j: u8| {
        let (lo, hi) = (i.min(j), i.max(j));
        match (lo, hi) {
            (1, 2) => 0,
            (1, 3) => 1,
            (1, 4) => 2,
            (2, 3) => 3,
            (2, 4) => 4,
            _ => 5,
        }
    };
    match kind {
        CurveKind::Ordinary { i, j } => PALETTE[pair(i, j)],
        CurveKind::Higher { i, k, .. } => PALETTE[pair(i, k)],
    }
}

/// Renders the graph as SVG.
///
/// Ordinary curves are drawn with width [`ORDINARY_STROKE`], higher-order
/// curves with [`HIGHER_STROKE`] and dashed. With the `active` or `relevant`
/// filter, `pieces` selects which curve pieces are drawn; with `all` every
/// curve is drawn. Turning points are filled dark, virtual turning points
/// light.
pub fn render_svg(graph: &StokesGraph, filter: CurveFilter, pieces: Option<&[PieceClass]>) -> String {
    let d = graph.domain;
    let scale = SVG_WIDTH / (d.x_max - d.x_min);
    let height = scale * (d.y_max - d.y_min);
    let px = |z: C64| ((z.re - d.x_min) * scale, (d.y_max - z.im) * scale);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH:.0}" height="{height:.0}" viewBox="0 0 {SVG_WIDTH:.3} {height:.3}">"#);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{SVG_WIDTH:.3}" height="{height:.3}" fill="white"/>"#);
    let _ = writeln!(out, r#"<g fill="none" stroke-linecap="round" stroke-linejoin="round">"#);
    let mut segments: Vec<(usize, usize, usize)> = Vec::new();
    match (filter, pieces) {
        (CurveFilter::All, _) | (_, None) => {
            for (ci, c) in graph.curves.iter().enumerate() {
                segments.push((ci, 0, c.vertices.len().saturating_sub(1)));
            }
        }
        (f, Some(ps)) => {
            for p in ps {
                let keep = match f {
                    CurveFilter::Active => p.class.active,
                    CurveFilter::Relevant => p.class.relevant,
                    CurveFilter::All => true,
                };
                if keep {
                    segments.push((p.curve, p.start, p.end));
                }
            }
        }
    }
    for (ci, a, b) in segments {
        let c = &graph.curves[ci];
        if b <= a {
            continue;
        }
        let (width, dash) = if c.kind.is_ordinary() { (ORDINARY_STROKE, "") } else { (HIGHER_STROKE, r#" stroke-dasharray="4 2""#) };
        let mut pts = String::new();
        for v in &c.vertices[a..=b] {
            let (x, y) = px(v.z);
            let _ = write!(pts, "{x:.3},{y:.3} ");
        }
        let _ = writeln!(
            out,
            r#"<polyline class="{}" stroke="{}" stroke-width="{width}"{dash} points="{}"/>"#,
            c.kind.name(),
            curve_colour(c.kind),
            pts.trim_end()
        );
    }
    let _ = writeln!(out, "</g>");
    for t in &graph.turning {
        let (x, y) = px(t.z());
        let _ = writeln!(out, r#"<circle class="turning" cx="{x:.3}" cy="{y:.3}" r="5" fill="{TURNING_FILL}" stroke="{TURNING_FILL}"/>"#);
    }
    for t in &graph.virtual_points {
        let (x, y) = px(t.z());
        let _ = writeln!(out, r#"<circle class="virtual" cx="{x:.3}" cy="{y:.3}" r="5" fill="{VIRTUAL_FILL}" stroke="{TURNING_FILL}" stroke-width="1"/>"#);
    }
    let (x, y) = px(graph.reference_z);
    let _ = writeln!(out, r#"<path class="base" d="M {:.3} {y:.3} L {:.3} {y:.3} M {x:.3} {:.3} L {x:.3} {:.3}" stroke="black" stroke-width="1"/>"#, x - 4.0, x + 4.0, y - 4.0, y + 4.0);
    let _ = writeln!(out, "</svg>");
    out
}
