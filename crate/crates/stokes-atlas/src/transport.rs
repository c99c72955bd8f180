//! Exact transport of transseries parameters and Stokes constants.
//!
//! A [`ConnectionState`] holds the transseries parameters `sigma` as linear
//! forms over the base symbols `beta_1..beta_n` and the Stokes matrix `S`.
//! Crossing `l_{i>j}` maps `sigma_j -> sigma_j + d S_ij sigma_i`; crossing
//! `h_{i>k;j}` maps `S_ik -> S_ik + d S_ij S_jk`, where `d = +1` when the
//! defining imaginary part goes from negative to positive along the path.
//!
//! Arithmetic is exact over any [`Coeff`] ring (`i64`, `Rational64`). Labels
//! in the public API are 1-based.

use crate::geometry::{
    self, path_crossings, CrossingEvent, EventKind, Frame, GeometryError, ScanOptions, StokesGraph, C64,
};
use crate::singulant::{canonical_frame, PhaseParams, SingulantError};
use num_complex::Complex;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::{self, Debug, Display};
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Exact coefficient ring for Stokes constants and linear forms.
pub trait Coeff:
    Clone
    + PartialEq
    + Debug
    + Display
    + Zero
    + One
    + Neg<Output = Self>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + From<i64>
    + ToPrimitive
    + Send
    + Sync
    + 'static
{
}

impl<T> Coeff for T where
    T: Clone
        + PartialEq
        + Debug
        + Display
        + Zero
        + One
        + Neg<Output = T>
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Output = T>
        + From<i64>
        + ToPrimitive
        + Send
        + Sync
        + 'static
{
}

/// Stokes constants at the base point `z*`, as `(i, j, S_ij)` with 1-based
/// labels; every other entry is zero.
pub const BASE_STOKES: [(usize, usize, i64); 6] = [(1, 2, -1), (2, 1, 1), (2, 4, -1), (4, 2, 1), (3, 4, 1), (4, 3, -1)];

/// Concrete boundary data for the integral: `beta = (1, 0, 0, 0)`.
pub const INTEGRAL_BETA: [i64; 4] = [1, 0, 0, 0];

/// Errors of the transport engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("label {label} out of range 1..={n}")]
    Index { label: usize, n: usize },
    #[error("labels must be distinct: {0:?}")]
    RepeatedLabel(Vec<usize>),
    #[error("path starts at {start} but the state is at {at}")]
    PathStart { start: C64, at: C64 },
    #[error("non-commuting events at the same arclength {arclength:.3e}")]
    SimultaneousEvents { arclength: f64 },
    #[error("antisymmetry lost: S_{i}{j} + S_{j}{i} != 0")]
    Antisymmetry { i: usize, j: usize },
    #[error("no admissible route to probe {label}")]
    Unroutable { label: String },
    #[error("sigma has {got} symbols, expected {expected}")]
    SymbolCount { got: usize, expected: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Singulant(#[from] SingulantError),
}

/// Square matrix of Stokes constants with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesMatrix<R> {
    n: usize,
    entries: Vec<R>,
}

impl<R: Coeff> StokesMatrix<R> {
    /// The zero matrix of size `n`.
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![R::zero(); n * n] }
    }

    /// Matrix from `(i, j, value)` triples (1-based); the diagonal must stay zero.
    pub fn from_entries(n: usize, entries: &[(usize, usize, i64)]) -> Result<Self, TransportError> {
        let mut m = Self::zeros(n);
        for &(i, j, v) in entries {
            m.check_pair(i, j)?;
            m.entries[(i - 1) * n + (j - 1)] = R::from(v);
        }
        Ok(m)
    }

    /// Base matrix at `z*`.
    pub fn base() -> Self {
        Self::from_entries(4, &BASE_STOKES).expect("base entries are valid")
    }

    /// Dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    fn check(&self, label: usize) -> Result<(), TransportError> {
        if label == 0 || label > self.n {
            Err(TransportError::Index { label, n: self.n })
        } else {
            Ok(())
        }
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<(), TransportError> {
        self.check(i)?;
        self.check(j)?;
        if i == j {
            return Err(TransportError::RepeatedLabel(vec![i, j]));
        }
        Ok(())
    }

    /// Entry `S_ij` (1-based).
    pub fn get(&self, i: usize, j: usize) -> R {
        self.entries[(i - 1) * self.n + (j - 1)].clone()
    }

    fn set(&mut self, i: usize, j: usize, v: R) {
        self.entries[(i - 1) * self.n + (j - 1)] = v;
    }

    /// Whether `S_ij = -S_ji` for every pair.
    pub fn is_antisymmetric(&self) -> bool {
        self.antisymmetry_violation().is_none()
    }

    fn antisymmetry_violation(&self) -> Option<(usize, usize)> {
        for i in 1..=self.n {
            for j in (i + 1)..=self.n {
                if self.get(i, j) + self.get(j, i) != R::zero() {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// The upper-triangle entries `S_ij, i < j` in row-major order
    /// (`S12, S13, S14, S23, S24, S34` for four branches).
    pub fn upper(&self) -> Vec<R> {
        let mut v = Vec::new();
        for i in 1..=self.n {
            for j in (i + 1)..=self.n {
                v.push(self.get(i, j));
            }
        }
        v
    }

    /// Dense rows.
    pub fn rows(&self) -> Vec<Vec<R>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

/// Linear form `sum_k c_k beta_k` with exact coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinearForm<R> {
    pub coeffs: Vec<R>,
}

impl<R: Coeff> LinearForm<R> {
    /// The symbol `beta_k` (1-based) among `n` symbols.
    pub fn symbol(k: usize, n: usize) -> Self {
        let mut coeffs = vec![R::zero(); n];
        coeffs[k - 1] = R::one();
        Self { coeffs }
    }

    /// A constant, represented over one symbol standing for `1`.
    pub fn constant(v: R) -> Self {
        Self { coeffs: vec![v] }
    }

    fn add_scaled(&mut self, s: &R, other: &Self) {
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c = c.clone() + s.clone() * o.clone();
        }
    }

    /// Value at `beta`.
    pub fn eval(&self, beta: &[R]) -> R {
        self.coeffs.iter().zip(beta).fold(R::zero(), |acc, (c, b)| acc + c.clone() * b.clone())
    }

    /// Value at a complex `beta`.
    pub fn eval_complex(&self, beta: &[C64]) -> C64 {
        self.coeffs.iter().zip(beta).fold(Complex::new(0.0, 0.0), |acc, (c, b)| acc + b * c.to_f64().unwrap_or(f64::NAN))
    }

    /// Whether every coefficient vanishes.
    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
}

impl<R: Coeff> Display for LinearForm<R> {
    /// Formats as `b1+b2-2b4` (or `0`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut wrote = false;
        for (k, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let text = c.to_string();
            let (sign, mag) = match text.strip_prefix('-') {
                Some(rest) => ("-", rest.to_string()),
                None => ("+", text),
            };
            if wrote || sign == "-" {
                write!(f, "{sign}")?;
            }
            if mag != "1" {
                write!(f, "{mag}")?;
            }
            write!(f, "b{}", k + 1)?;
            wrote = true;
        }
        if !wrote {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Transseries parameters as linear forms over the base symbols.
pub type SigmaVector<R> = Vec<LinearForm<R>>;

/// The symbolic base vector `(beta_1, ..., beta_n)`.
pub fn base_sigma<R: Coeff>(n: usize) -> SigmaVector<R> {
    (1..=n).map(|k| LinearForm::symbol(k, n)).collect()
}

/// Instantiates every form at `beta`, giving constant forms.
pub fn instantiate<R: Coeff>(sigma: &SigmaVector<R>, beta: &[R]) -> SigmaVector<R> {
    sigma.iter().map(|s| LinearForm::constant(s.eval(beta))).collect()
}

/// One applied automorphism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Automorphism {
    /// `sigma_j += d S_ij sigma_i`.
    Stokes { i: usize, j: usize, direction: i8 },
    /// `S_ik += d S_ij S_jk`.
    Higher { i: usize, k: usize, j: usize, direction: i8 },
}

impl Automorphism {
    fn writes(&self, antisymmetric: bool) -> Vec<Quantity> {
        match *self {
            Automorphism::Stokes { j, .. } => vec![Quantity::Sigma(j)],
            Automorphism::Higher { i, k, .. } if antisymmetric => vec![Quantity::Stokes(i, k), Quantity::Stokes(k, i)],
            Automorphism::Higher { i, k, .. } => vec![Quantity::Stokes(i, k)],
        }
    }

    fn reads(&self) -> Vec<Quantity> {
        match *self {
            Automorphism::Stokes { i, j, .. } => vec![Quantity::Stokes(i, j), Quantity::Sigma(i), Quantity::Sigma(j)],
            Automorphism::Higher { i, k, j, .. } => vec![Quantity::Stokes(i, j), Quantity::Stokes(j, k), Quantity::Stokes(i, k)],
        }
    }

    /// Whether the two automorphisms can be applied in either order when
    /// higher-order updates also write the mirrored entry.
    pub fn commutes_with(&self, other: &Automorphism) -> bool {
        self.commutes_in(other, true)
    }

    /// Whether the two automorphisms can be applied in either order, with
    /// `antisymmetric` as in [`ConnectionState::antisymmetric`].
    pub fn commutes_in(&self, other: &Automorphism, antisymmetric: bool) -> bool {
        let clash = |a: &Automorphism, b: &Automorphism| {
            let r = b.reads();
            a.writes(antisymmetric).iter().any(|w| r.contains(w))
        };
        !clash(self, other) && !clash(other, self)
    }

    /// The automorphism undoing this one.
    pub fn inverse(&self) -> Self {
        match *self {
            Automorphism::Stokes { i, j, direction } => Automorphism::Stokes { i, j, direction: -direction },
            Automorphism::Higher { i, k, j, direction } => Automorphism::Higher { i, k, j, direction: -direction },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    Sigma(usize),
    Stokes(usize, usize),
}

/// Record of one applied automorphism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub index: usize,
    pub automorphism: Automorphism,
    pub arclength: f64,
    pub z: C64,
}

impl Display for LogRecord {
    /// Line-oriented form: `index kind labels direction arclength`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.automorphism {
            Automorphism::Stokes { i, j, direction } => {
                write!(f, "{} stokes l{}>{} {:+} {:.9}", self.index, i, j, direction, self.arclength)
            }
            Automorphism::Higher { i, k, j, direction } => {
                write!(f, "{} higher h{}{};{} {:+} {:.9}", self.index, i, k, j, direction, self.arclength)
            }
        }
    }
}

/// Transported representation at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionState<R> {
    pub at: C64,
    pub sigma: SigmaVector<R>,
    pub stokes: StokesMatrix<R>,
    pub log: Vec<LogRecord>,
    /// Enforce `S_ki = -S_ik` under higher-order automorphisms.
    pub antisymmetric: bool,
    /// Labelled saddle frame at `at`, needed to transport along geometric paths.
    pub frame: Option<Frame>,
}

impl<R: Coeff> ConnectionState<R> {
    /// State with the given data and an empty log.
    pub fn new(at: C64, sigma: SigmaVector<R>, stokes: StokesMatrix<R>, antisymmetric: bool) -> Self {
        Self { at, sigma, stokes, log: Vec::new(), antisymmetric, frame: None }
    }

    /// Base state at `z*`: reference Stokes matrix, `sigma = beta` and the
    /// canonical frame for `p`.
    pub fn base(p: PhaseParams<f64>) -> Result<Self, TransportError> {
        let frame = canonical_frame(p)?;
        let mut s = Self::new(frame.z, base_sigma(4), StokesMatrix::base(), true);
        s.frame = Some(frame);
        Ok(s)
    }

    /// The same state with an empty log.
    pub fn rebased(&self) -> Self {
        Self { log: Vec::new(), ..self.clone() }
    }

    fn record(&mut self, automorphism: Automorphism, arclength: f64, z: C64) {
        let index = self.log.len();
        self.log.push(LogRecord { index, automorphism, arclength, z });
    }

    fn apply(&mut self, a: Automorphism, arclength: f64, z: C64) -> Result<(), TransportError> {
        match a {
            Automorphism::Stokes { i, j, direction } => {
                self.stokes.check_pair(i, j)?;
                let s = self.stokes.get(i, j) * R::from(direction as i64);
                let src = self.sigma[i - 1].clone();
                self.sigma[j - 1].add_scaled(&s, &src);
            }
            Automorphism::Higher { i, k, j, direction } => {
                self.stokes.check(i)?;
                self.stokes.check(k)?;
                self.stokes.check(j)?;
                if i == k || i == j || k == j {
                    return Err(TransportError::RepeatedLabel(vec![i, k, j]));
                }
                let delta = R::from(direction as i64) * self.stokes.get(i, j) * self.stokes.get(j, k);
                let v = self.stokes.get(i, k) + delta;
                self.stokes.set(i, k, v.clone());
                if self.antisymmetric {
                    self.stokes.set(k, i, -v);
                }
            }
        }
        self.record(a, arclength, z);
        Ok(())
    }
}

/// Matrix of the Stokes automorphism for `l_{i>j}` acting on `sigma`:
/// the identity plus `S_ij` at row `j`, column `i` (1-based labels).
pub fn stokes_automorphism_matrix<R: Coeff>(s: &StokesMatrix<R>, i: usize, j: usize) -> Result<Vec<Vec<R>>, TransportError> {
    s.check_pair(i, j)?;
    let n = s.n();
    let mut m: Vec<Vec<R>> = (0..n).map(|r| (0..n).map(|c| if r == c { R::one() } else { R::zero() }).collect()).collect();
    m[j - 1][i - 1] = s.get(i, j);
    Ok(m)
}

/// Applies the Stokes automorphism across `l_{i>j}`.
pub fn apply_stokes<R: Coeff>(mut state: ConnectionState<R>, i: usize, j: usize, direction: i8) -> Result<ConnectionState<R>, TransportError> {
    let z = state.at;
    state.apply(Automorphism::Stokes { i, j, direction }, 0.0, z)?;
    Ok(state)
}

/// Applies the higher-order automorphism across `h_{i>k;j}`.
pub fn apply_higher<R: Coeff>(mut state: ConnectionState<R>, i: usize, k: usize, j: usize, direction: i8) -> Result<ConnectionState<R>, TransportError> {
    let z = state.at;
    state.apply(Automorphism::Higher { i, k, j, direction }, 0.0, z)?;
    Ok(state)
}

/// Automorphism of a path event.
pub fn event_automorphism(e: &CrossingEvent) -> Automorphism {
    match e.kind {
        EventKind::Ordinary { i, j } => Automorphism::Stokes { i: i as usize, j: j as usize, direction: e.direction },
        EventKind::Higher { i, k, j } => Automorphism::Higher { i: i as usize, k: k as usize, j: j as usize, direction: e.direction },
    }
}

/// Arclength below which two events count as simultaneous.
pub const SIMULTANEITY: f64 = 1e-9;

/// Folds the automorphisms of ordered path events into a state.
///
/// Events closer than [`SIMULTANEITY`] in arclength must pairwise commute;
/// within such a group higher-order events are applied first.
pub fn fold_events<R: Coeff>(mut state: ConnectionState<R>, events: &[CrossingEvent]) -> Result<ConnectionState<R>, TransportError> {
    let base_arc = state.log.last().map(|r| r.arclength).unwrap_or(0.0);
    let mut k = 0;
    while k < events.len() {
        let mut end = k + 1;
        while end < events.len() && events[end].arclength - events[k].arclength <= SIMULTANEITY {
            end += 1;
        }
        let mut group: Vec<&CrossingEvent> = events[k..end].iter().collect();
        for a in 0..group.len() {
            for b in (a + 1)..group.len() {
                if !event_automorphism(group[a]).commutes_in(&event_automorphism(group[b]), state.antisymmetric) {
                    return Err(TransportError::SimultaneousEvents { arclength: group[a].arclength });
                }
            }
        }
        group.sort_by_key(|e| matches!(e.kind, EventKind::Ordinary { .. }));
        for e in group {
            state.apply(event_automorphism(e), base_arc + e.arclength, e.z)?;
        }
        k = end;
    }
    Ok(state)
}

/// Transports `state` along the polyline `path`, which must start at `state.at`.
pub fn transport<R: Coeff>(state: ConnectionState<R>, path: &[C64], graph: &StokesGraph) -> Result<ConnectionState<R>, TransportError> {
    transport_with(state, path, graph, &ScanOptions::default())
}

/// [`transport`] with explicit scan options.
pub fn transport_with<R: Coeff>(
    state: ConnectionState<R>,
    path: &[C64],
    graph: &StokesGraph,
    opts: &ScanOptions,
) -> Result<ConnectionState<R>, TransportError> {
    let Some(&start) = path.first() else { return Ok(state) };
    if (start - state.at).norm() > 1e-12 * (1.0 + start.norm()) {
        return Err(TransportError::PathStart { start, at: state.at });
    }
    let frame = match state.frame {
        Some(f) => f,
        None => crate::singulant::frame_at(start, graph.params, None)?,
    };
    let (events, end) = path_crossings(path, graph, &frame, opts)?;
    let mut out = fold_events(state, &events)?;
    if out.antisymmetric {
        if let Some((i, j)) = out.stokes.antisymmetry_violation() {
            return Err(TransportError::Antisymmetry { i, j });
        }
    }
    out.at = *path.last().expect("non-empty path");
    out.frame = Some(end);
    Ok(out)
}

/// Re-applies a log to a base state.
pub fn replay<R: Coeff>(base: &ConnectionState<R>, log: &[LogRecord]) -> Result<ConnectionState<R>, TransportError> {
    let mut s = base.rebased();
    for r in log {
        s.apply(r.automorphism, r.arclength, r.z)?;
    }
    Ok(s)
}

/// Activity and relevance of a curve for a given state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub active: bool,
    pub relevant: bool,
}

/// Classifies a curve kind (1-based labels) against a state next to it.
///
/// Ordinary `l_{i>j}` is active iff `S_ij != 0` and relevant iff also
/// `sigma_i(beta) != 0`; higher-order `h_{i>k;j}` is active iff
/// `S_ij S_jk != 0` and relevant iff also `sigma_i(beta) != 0`.
pub fn classify<R: Coeff>(kind: geometry::CurveKind, state: &ConnectionState<R>, beta: Option<&[R]>) -> Classification {
    let (active, source) = match kind {
        geometry::CurveKind::Ordinary { i, j } => (!state.stokes.get(i as usize, j as usize).is_zero(), i as usize),
        geometry::CurveKind::Higher { i, k, j } => {
            let (i, k, j) = (i as usize, k as usize, j as usize);
            (!(state.stokes.get(i, j) * state.stokes.get(j, k)).is_zero(), i)
        }
    };
    let relevant = active
        && match beta {
            Some(b) => !state.sigma[source - 1].eval(b).is_zero(),
            None => !state.sigma[source - 1].is_zero(),
        };
    Classification { active, relevant }
}

/// Route from the base point to a probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Route {
    /// Straight segment.
    Straight,
    /// Straight segment to `center + radius e^{i start_deg}`, then along the
    /// circle through the signed sweep to `center + radius e^{i end_deg}`.
    Arc { center: C64, radius: f64, start_deg: f64, end_deg: f64 },
    /// Through the listed waypoints.
    Via { points: Vec<C64> },
}

/// Labelled probe point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub label: String,
    pub z: C64,
    pub route: Route,
}

impl Probe {
    /// Waypoints from `from` to the probe, before any detour.
    pub fn waypoints(&self, from: C64) -> Vec<C64> {
        match &self.route {
            Route::Straight => vec![from, self.z],
            Route::Via { points } => std::iter::once(from).chain(points.iter().copied()).chain(std::iter::once(self.z)).collect(),
            Route::Arc { center, radius, start_deg, end_deg } => {
                let sweep = end_deg - start_deg;
                let n = ((sweep.abs() / 2.0).ceil() as usize).max(1);
                let mut pts = vec![from];
                for s in 0..=n {
                    let th = (start_deg + sweep * s as f64 / n as f64).to_radians();
                    pts.push(center + Complex::from_polar(*radius, th));
                }
                pts.push(self.z);
                pts.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
                pts
            }
        }
    }
}

/// Largest number of detours inserted while routing one path.
const MAX_DETOURS: usize = 64;

/// Replaces segments that pass too close to graph obstacles by semicircular
/// detours of radius `3 delta` on the side away from the obstacle, until the
/// path is admissible.
pub fn auto_route(
    waypoints: &[C64],
    graph: &StokesGraph,
    frame: &Frame,
    opts: &ScanOptions,
) -> Result<(Vec<C64>, Vec<CrossingEvent>, Frame), TransportError> {
    let r = 3.0 * graph.safe_distance();
    let mut path = waypoints.to_vec();
    for _ in 0..MAX_DETOURS {
        match path_crossings(&path, graph, frame, opts) {
            Ok((events, end)) => return Ok((path, events, end)),
            Err(GeometryError::PathTooCloseToCrossing { re, im, segment }) => {
                let q = Complex::new(re, im);
                let (a, b) = (path[segment], path[segment + 1]);
                let len = (b - a).norm();
                let u = (b - a) / len;
                let t = ((q - a) * u.conj()).re.clamp(0.0, len);
                let foot = a + u * t;
                let side = if ((q - a) * u.conj()).im > 0.0 { -1.0 } else { 1.0 };
                let mut arc = Vec::new();
                if t - r > 0.0 {
                    arc.push(foot - u * r);
                }
                let steps = 24;
                for s in 1..steps {
                    let phi = std::f64::consts::PI * s as f64 / steps as f64;
                    arc.push(foot - u * Complex::from_polar(r, side * phi));
                }
                if t + r < len {
                    arc.push(foot + u * r);
                }
                path.splice(segment + 1..segment + 1, arc);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(TransportError::Unroutable { label: String::new() })
}

/// Region tables: Stokes constants and transseries parameters per probe.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTables<R> {
    /// `(label, [S12, S13, S14, S23, S24, S34])`.
    pub stokes: Vec<(String, Vec<R>)>,
    /// `(label, sigma)`.
    pub sigma: Vec<(String, SigmaVector<R>)>,
    /// Final state per probe, with its log.
    pub states: Vec<(String, ConnectionState<R>)>,
}

/// Transports `base` to every probe along auto-routed admissible paths.
pub fn region_tables<R: Coeff>(graph: &StokesGraph, base: &ConnectionState<R>, probes: &[Probe]) -> Result<RegionTables<R>, TransportError> {
    let opts = ScanOptions::default();
    let frame = match base.frame {
        Some(f) => f,
        None => crate::singulant::frame_at(base.at, graph.params, None)?,
    };
    let results: Vec<Result<(String, ConnectionState<R>), TransportError>> = probes
        .par_iter()
        .map(|p| {
            let wp = p.waypoints(base.at);
            let (path, events, end) = auto_route(&wp, graph, &frame, &opts).map_err(|e| match e {
                TransportError::Unroutable { .. } => TransportError::Unroutable { label: p.label.clone() },
                other => other,
            })?;
            let mut s = fold_events(base.rebased(), &events)?;
            if s.antisymmetric {
                if let Some((i, j)) = s.stokes.antisymmetry_violation() {
                    return Err(TransportError::Antisymmetry { i, j });
                }
            }
            s.at = *path.last().expect("route ends at the probe");
            s.frame = Some(end);
            Ok((p.label.clone(), s))
        })
        .collect();
    let mut out = RegionTables { stokes: Vec::new(), sigma: Vec::new(), states: Vec::new() };
    for r in results {
        let (label, s) = r?;
        out.stokes.push((label.clone(), s.stokes.upper()));
        out.sigma.push((label.clone(), s.sigma.clone()));
        out.states.push((label, s));
    }
    Ok(out)
}

/// Classification of one piece of a traced curve, between consecutive
/// crossing points on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceClass {
    pub curve: usize,
    /// First and last vertex index of the piece.
    pub start: usize,
    pub end: usize,
    pub class: Classification,
}

/// Classifies every curve piece of `graph`.
///
/// Activity can only change where a curve meets a crossing point, so each
/// curve is cut at its crossings and one probe is transported to a point just
/// off the middle of each piece. The state on either side of a curve differs
/// only in quantities its own classification does not read.
pub fn classify_pieces<R: Coeff>(graph: &StokesGraph, base: &ConnectionState<R>, beta: Option<&[R]>) -> Result<Vec<PieceClass>, TransportError> {
    let offset = 10.0 * graph.safe_distance();
    let mut pieces = Vec::new();
    let mut probes = Vec::new();
    for (ci, c) in graph.curves.iter().enumerate() {
        let last = c.vertices.len() - 1;
        if last == 0 {
            continue;
        }
        let mut cuts = vec![0, last];
        for x in graph.crossings.iter().filter(|x| x.curves.contains(&ci)) {
            let nearest = (0..=last).min_by(|&a, &b| (c.vertices[a].z - x.z()).norm().total_cmp(&(c.vertices[b].z - x.z()).norm()));
            cuts.extend(nearest);
        }
        cuts.sort_unstable();
        cuts.dedup();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (p, q) = if b - a >= 2 { ((a + b) / 2, (a + b) / 2 + 1) } else { (a, b) };
            let (vp, vq) = (&c.vertices[p], &c.vertices[q]);
            let mid = 0.5 * (vp.z + vq.z);
            let normal = vp.normal + vq.normal;
            let normal = if normal.norm() > 0.0 { normal / normal.norm() } else { vp.normal };
            probes.push(Probe { label: format!("{ci}:{a}"), z: mid + normal * offset, route: Route::Straight });
            pieces.push((ci, a, b));
        }
    }
    let tables = region_tables(graph, base, &probes)?;
    Ok(pieces
        .into_iter()
        .zip(tables.states)
        .map(|((curve, start, end), (_, state))| PieceClass { curve, start, end, class: classify(graph.curves[curve].kind, &state, beta) })
        .collect())
}

/// Outcome of transporting a state once around a closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCheck {
    pub label: String,
    /// Loop vertices; the first and last coincide.
    pub loop_points: Vec<C64>,
    /// Number of automorphisms applied on the way round.
    pub events: usize,
    /// Whether `sigma`, `S` and the saddle labels returned unchanged.
    pub closed: bool,
}

/// Transports `state` once around the closed polygon `loop_points`, which
/// must start and end at `state.at`, and compares the result with `state`.
pub fn loop_check<R: Coeff>(graph: &StokesGraph, state: &ConnectionState<R>, label: &str, loop_points: &[C64]) -> Result<LoopCheck, TransportError> {
    let frame = match state.frame {
        Some(f) => f,
        None => crate::singulant::frame_at(state.at, graph.params, None)?,
    };
    let (_, events, end) = auto_route(loop_points, graph, &frame, &ScanOptions::default())?;
    let after = fold_events(state.rebased(), &events)?;
    let labels_kept = frame.taus().iter().zip(end.taus()).all(|(a, b)| (a - b).norm() <= 1e-8 * (1.0 + a.norm()));
    Ok(LoopCheck {
        label: label.to_string(),
        loop_points: loop_points.to_vec(),
        events: after.log.len(),
        closed: labels_kept && after.sigma == state.sigma && after.stokes == state.stokes,
    })
}

/// Number of times the closed polygon winds around `q`.
pub fn winding_number(polygon: &[C64], q: C64) -> i64 {
    let total: f64 = polygon.windows(2).map(|w| ((w[1] - q) / (w[0] - q)).arg()).sum();
    (total / (2.0 * std::f64::consts::PI)).round() as i64
}

fn segment_distance(q: C64, a: C64, b: C64) -> f64 {
    let d = b - a;
    if d.norm_sqr() == 0.0 {
        return (q - a).norm();
    }
    let t = (((q - a) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0);
    (a + d * t - q).norm()
}

/// Seeded random closed polygons based at `start`.
///
/// Each loop visits three to six points drawn uniformly from the central 80%
/// of the domain. Loops winding around a turning or virtual turning point, or
/// passing within `10 * safe_distance` of one, are redrawn, so every loop is
/// contractible in the region where the labels are single-valued.
pub fn random_loops(graph: &StokesGraph, start: C64, seed: u64, count: usize) -> Vec<Vec<C64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = graph.domain;
    let (cx, cy) = (0.5 * (d.x_min + d.x_max), 0.5 * (d.y_min + d.y_max));
    let (hx, hy) = (0.4 * (d.x_max - d.x_min), 0.4 * (d.y_max - d.y_min));
    let special = graph.special_points();
    let margin = 10.0 * graph.safe_distance();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.random_range(3..=6);
        let mut poly = vec![start];
        for _ in 0..n {
            poly.push(Complex::new(cx + hx * rng.random_range(-1.0..1.0), cy + hy * rng.random_range(-1.0..1.0)));
        }
        poly.push(start);
        let admissible = special.iter().all(|&q| {
            winding_number(&poly, q) == 0 && poly.windows(2).all(|w| segment_distance(q, w[0], w[1]) > margin)
        });
        if admissible {
            out.push(poly);
        }
    }
    out
}

/// A small circle around every crossing point of `graph`, as
/// `(crossing, circle)` with 180 vertices per circle. Circles start one degree
/// above due east, off the real axis where conjugation-symmetric lines lie.
///
/// The radius is `0.3` of the distance to the nearest other crossing or
/// special point, capped at `0.05`.
pub fn crossing_circles(graph: &StokesGraph) -> Vec<(C64, Vec<C64>)> {
    let mut obstacles = graph.special_points();
    obstacles.extend(graph.crossings.iter().map(|c| c.z()));
    graph
        .crossings
        .iter()
        .map(|c| {
            let q = c.z();
            let nearest = obstacles.iter().map(|o| (o - q).norm()).filter(|&r| r > 1e-9).fold(f64::INFINITY, f64::min);
            let r = (0.3 * nearest).min(0.05);
            let circle = (0..=180).map(|k| q + Complex::from_polar(r, (1.0 + 2.0 * k as f64).to_radians())).collect();
            (q, circle)
        })
        .collect()
}

/// Loop checks around every crossing point, each starting from the state
/// transported from `base` to the circle's first vertex.
pub fn crossing_consistency<R: Coeff>(graph: &StokesGraph, base: &ConnectionState<R>) -> Result<Vec<LoopCheck>, TransportError> {
    let circles = crossing_circles(graph);
    let probes: Vec<Probe> = circles
        .iter()
        .enumerate()
        .map(|(k, (_, c))| Probe { label: format!("crossing{k}"), z: c[0], route: Route::Straight })
        .collect();
    let tables = region_tables(graph, base, &probes)?;
    circles
        .par_iter()
        .zip(tables.states.par_iter())
        .map(|((q, c), (label, s))| loop_check(graph, s, &format!("{label} at {q}"), c))
        .collect()
}

/// Stokes matrix over `i64`.
pub type IntStokes = StokesMatrix<i64>;
/// Stokes matrix over exact rationals.
pub type RatStokes = StokesMatrix<num_rational::Rational64>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_graph, default_domain, GraphOptions};
    use crate::singulant::REFERENCE_PARAMS;
    use num_rational::Rational64;

    fn base4() -> ConnectionState<i64> {
        ConnectionState::new(Complex::new(3.0, 0.5), base_sigma(4), StokesMatrix::base(), true)
    }

    #[test]
    fn automorphism_matrix_is_identity_plus_one_entry() {
        let s = StokesMatrix::<i64>::base();
        let m = stokes_automorphism_matrix(&s, 1, 2).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expected = if r == c { 1 } else if (r, c) == (1, 0) { -1 } else { 0 };
                assert_eq!(m[r][c], expected);
            }
        }
        let id = stokes_automorphism_matrix(&s, 1, 3).unwrap();
        assert!((0..4).all(|r| (0..4).all(|c| id[r][c] == i64::from(r == c))));
        assert!(matches!(stokes_automorphism_matrix(&s, 1, 5), Err(TransportError::Index { label: 5, n: 4 })));
        assert!(matches!(stokes_automorphism_matrix(&s, 2, 2), Err(TransportError::RepeatedLabel(_))));
    }

    #[test]
    fn crossing_l12_forward_subtracts_beta1_from_sigma2() {
        let s = apply_stokes(base4(), 1, 2, 1).unwrap();
        assert_eq!(s.sigma[1].to_string(), "-b1+b2");
        let back = apply_stokes(s, 1, 2, -1).unwrap();
        assert_eq!(back.sigma, base_sigma::<i64>(4));
    }

    #[test]
    fn crossing_l21_backward_gives_beta1_minus_beta2() {
        let s = apply_stokes(base4(), 2, 1, -1).unwrap();
        assert_eq!(s.sigma[0].to_string(), "b1-b2");
    }

    #[test]
    fn higher_order_steps_between_first_regions() {
        let s = apply_higher(base4(), 2, 3, 4, -1).unwrap();
        assert_eq!(s.stokes.get(2, 3), -1);
        assert_eq!(s.stokes.get(3, 2), 1);
        let s = apply_higher(s, 1, 4, 2, 1).unwrap();
        assert_eq!(s.stokes.get(1, 4), 1);
        assert!(s.stokes.is_antisymmetric());
    }

    #[test]
    fn inactive_higher_event_leaves_state_unchanged() {
        let s0 = base4();
        let s = apply_higher(s0.clone(), 1, 3, 4, 1).unwrap();
        assert_eq!(s.stokes, s0.stokes);
        assert_eq!(s.sigma, s0.sigma);
    }

    #[test]
    fn log_replay_reproduces_state() {
        let mut s = base4();
        for (i, j, d) in [(1, 2, 1), (4, 3, -1), (2, 3, 1)] {
            s = apply_stokes(s, i, j, d).unwrap();
        }
        s = apply_higher(s, 2, 3, 4, 1).unwrap();
        s = apply_stokes(s, 2, 3, 1).unwrap();
        let r = replay(&base4(), &s.log).unwrap();
        assert_eq!(r.sigma, s.sigma);
        assert_eq!(r.stokes, s.stokes);
    }

    #[test]
    fn rational_coefficients_follow_the_same_rules() {
        let mut s: ConnectionState<Rational64> = ConnectionState::new(Complex::new(0.0, 0.0), base_sigma(4), StokesMatrix::base(), true);
        s.stokes.set(1, 3, Rational64::new(1, 2));
        s.stokes.set(3, 1, Rational64::new(-1, 2));
        let s = apply_stokes(s, 1, 3, 1).unwrap();
        assert_eq!(s.sigma[2].coeffs[0], Rational64::new(1, 2));
    }

    #[test]
    fn classification_rules() {
        let s = base4();
        let c = classify(geometry::CurveKind::Ordinary { i: 1, j: 2 }, &s, Some(&INTEGRAL_BETA));
        assert_eq!(c, Classification { active: true, relevant: true });
        let c = classify(geometry::CurveKind::Ordinary { i: 2, j: 4 }, &s, Some(&INTEGRAL_BETA));
        assert_eq!(c, Classification { active: true, relevant: false });
        let c = classify(geometry::CurveKind::Ordinary { i: 1, j: 3 }, &s, Some(&INTEGRAL_BETA));
        assert_eq!(c, Classification { active: false, relevant: false });
        let c = classify(geometry::CurveKind::Higher { i: 1, k: 4, j: 2 }, &s, None);
        assert!(c.active);
        let c = classify(geometry::CurveKind::Higher { i: 1, k: 3, j: 2 }, &s, None);
        assert!(!c.active);
    }

    #[test]
    fn commuting_rules_for_simultaneous_events() {
        let a = Automorphism::Stokes { i: 1, j: 3, direction: 1 };
        let b = Automorphism::Stokes { i: 2, j: 4, direction: 1 };
        assert!(a.commutes_with(&b));
        let c = Automorphism::Stokes { i: 3, j: 4, direction: 1 };
        assert!(!a.commutes_with(&c));
        let h = Automorphism::Higher { i: 1, k: 3, j: 2, direction: 1 };
        assert!(!h.commutes_with(&a));
        assert!(h.commutes_with(&b));
    }

    #[test]
    fn transport_to_same_point_is_identity_and_reversal_inverts() {
        let p = REFERENCE_PARAMS;
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        let base: ConnectionState<i64> = ConnectionState::base(p).unwrap();
        let same = transport(base.clone(), &[base.at, base.at], &g).unwrap();
        assert_eq!(same.sigma, base.sigma);
        assert_eq!(same.stokes, base.stokes);
        let path = [base.at, Complex::new(1.0, 2.9), Complex::new(-1.0, 1.0)];
        let there = transport(base.clone(), &path, &g).unwrap();
        assert!(!there.log.is_empty());
        let rev: Vec<C64> = path.iter().rev().copied().collect();
        let back = transport(there.rebased(), &rev, &g).unwrap();
        assert_eq!(back.sigma, base.sigma);
        assert_eq!(back.stokes, base.stokes);
        let fwd: Vec<Automorphism> = there.log.iter().map(|r| r.automorphism).collect();
        let inv: Vec<Automorphism> = back.log.iter().rev().map(|r| r.automorphism.inverse()).collect();
        assert_eq!(fwd, inv);
    }

    #[test]
    fn path_must_start_at_state() {
        let p = REFERENCE_PARAMS;
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        let base: ConnectionState<i64> = ConnectionState::base(p).unwrap();
        let r = transport(base, &[Complex::new(0.0, 1.0), Complex::new(1.0, 1.0)], &g);
        assert!(matches!(r, Err(TransportError::PathStart { .. })));
    }

    #[test]
    fn linear_form_display() {
        let f = LinearForm::<i64> { coeffs: vec![-1, 1, 0, 2] };
        assert_eq!(f.to_string(), "-b1+b2+2b4");
        assert_eq!(LinearForm::<i64> { coeffs: vec![0; 4] }.to_string(), "0");
    }
}
