//! Ordinary and higher-order Stokes curves, the Stokes graph, and the
//! ordered events where a query path meets the graph.
//!
//! A curve is a level set `Im f = 0, Re f >= 0` of a holomorphic function of
//! `z` built from the labelled singulants:
//!
//! * ordinary `l_{i>j}`: `f = chi_j - chi_i`, with `f' = tau_j - tau_i`;
//! * higher-order `h_{i>k;j}`: `f = (chi_k - chi_j) / (chi_j - chi_i)`.
//!
//! Higher-order curves are corrected on the equivalent level set `arg f = 0`,
//! which stays well conditioned where `f` has a zero or a pole.
//!
//! Every vertex carries the four `tau` values continued along the curve, so
//! branch identity never depends on a global cut convention.

use crate::singulant::{
    self, approach, canonical_frame, continue_to, saddle_roots_near, PhaseParams, SingulantError,
    SingulantFrame, TurningPoint,
};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complex `f64`.
pub type C64 = Complex<f64>;
/// Frame in `f64`.
pub type Frame = SingulantFrame<f64>;

/// Errors raised while tracing curves or intersecting paths with the graph.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// Newton correction failed at the smallest admissible step.
    #[error("corrector diverged near z = {re}+{im}i")]
    CorrectorDivergence { re: f64, im: f64 },
    /// The defining function has vanishing derivative (at a turning point).
    #[error("degenerate tangent at z = {re}+{im}i")]
    DegenerateTangent { re: f64, im: f64 },
    /// A query path passes too close to a crossing or special point.
    #[error("path passes within the safety margin of ({re}, {im}) on segment {segment}")]
    PathTooCloseToCrossing { re: f64, im: f64, segment: usize },
    /// Two events at the same arclength whose automorphisms do not commute.
    #[error("non-commuting simultaneous events at z = {re}+{im}i")]
    SimultaneousEvents { re: f64, im: f64 },
    /// The domain rectangle has no interior.
    #[error("empty domain rectangle")]
    EmptyDomain,
    /// A tracing failure tagged with the seed that produced it.
    #[error("seed {seed}: {source}")]
    Seed { seed: String, source: Box<GeometryError> },
    /// Singulant-layer failure.
    #[error(transparent)]
    Singulant(#[from] SingulantError),
}

/// Axis-aligned rectangle in the `z`-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    /// Creates a domain, rejecting rectangles without interior.
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(GeometryError::EmptyDomain);
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    /// Square centred on the bounding box of `points` with half-width three
    /// times the largest distance from the centre (at least 3).
    pub fn around(points: &[C64]) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.re);
            x1 = x1.max(p.re);
            y0 = y0.min(p.im);
            y1 = y1.max(p.im);
        }
        if points.is_empty() {
            (x0, x1, y0, y1) = (0.0, 0.0, 0.0, 0.0);
        }
        let c = Complex::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let r = points.iter().map(|p| (p - c).norm()).fold(1.0, f64::max);
        let w = 3.0 * r;
        Self { x_min: c.re - w, x_max: c.re + w, y_min: c.im - w, y_max: c.im + w }
    }

    /// Whether `z` lies in the closed rectangle.
    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.x_min && z.re <= self.x_max && z.im >= self.y_min && z.im <= self.y_max
    }

    /// Length of the diagonal.
    pub fn diameter(&self) -> f64 {
        ((self.x_max - self.x_min).powi(2) + (self.y_max - self.y_min).powi(2)).sqrt()
    }

    /// Corners in counter-clockwise order starting at the lower left.
    pub fn corners(&self) -> [C64; 4] {
        [
            Complex::new(self.x_min, self.y_min),
            Complex::new(self.x_max, self.y_min),
            Complex::new(self.x_max, self.y_max),
            Complex::new(self.x_min, self.y_max),
        ]
    }

    /// First exit of the segment `a -> b` (with `a` inside): the parameter
    /// `s` in `(0, 1]` and the unit direction of the edge that is hit.
    fn exit(&self, a: C64, b: C64) -> Option<(f64, C64)> {
        let d = b - a;
        let mut best: Option<(f64, C64)> = None;
        let mut consider = |s: f64, edge: C64| {
            if s > 0.0 && s <= 1.0 && best.is_none_or(|(bs, _)| s < bs) {
                best = Some((s, edge));
            }
        };
        if d.re != 0.0 {
            if b.re > self.x_max {
                consider((self.x_max - a.re) / d.re, Complex::new(0.0, 1.0));
            }
            if b.re < self.x_min {
                consider((self.x_min - a.re) / d.re, Complex::new(0.0, 1.0));
            }
        }
        if d.im != 0.0 {
            if b.im > self.y_max {
                consider((self.y_max - a.im) / d.im, Complex::new(1.0, 0.0));
            }
            if b.im < self.y_min {
                consider((self.y_min - a.im) / d.im, Complex::new(1.0, 0.0));
            }
        }
        best
    }
}

/// Curve family with branch labels (1-based) in the canonical labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CurveKind {
    /// `l_{i>j}`.
    Ordinary { i: u8, j: u8 },
    /// `h_{i>k;j}`.
    Higher { i: u8, k: u8, j: u8 },
}

impl CurveKind {
    /// Whether this is an ordinary curve.
    pub fn is_ordinary(&self) -> bool {
        matches!(self, CurveKind::Ordinary { .. })
    }

    /// Short display name such as `l1>2` or `h13;2`.
    pub fn name(&self) -> String {
        match *self {
            CurveKind::Ordinary { i, j } => format!("l{i}>{j}"),
            CurveKind::Higher { i, k, j } => format!("h{i}{k};{j}"),
        }
    }
}

/// Level-set function in terms of 0-based frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Locus {
    Ordinary(usize, usize),
    /// `(i, k, j)` for `h_{i>k;j}`.
    Higher(usize, usize, usize),
}

impl Locus {
    /// All 12 ordinary and 12 higher-order loci for four branches.
    ///
    /// The loci `(i, k; j)` and `(k, i; j)` coincide, since one ratio is the
    /// reciprocal of the other, so only `i < k` is listed.
    pub fn all() -> Vec<Locus> {
        let mut v = Vec::with_capacity(36);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    v.push(Locus::Ordinary(i, j));
                }
            }
        }
        for i in 0..4 {
            for k in (i + 1)..4 {
                for j in 0..4 {
                    if j != i && j != k {
                        v.push(Locus::Higher(i, k, j));
                    }
                }
            }
        }
        v
    }

    fn indices(&self) -> Vec<usize> {
        match *self {
            Locus::Ordinary(i, j) => vec![i, j],
            Locus::Higher(i, k, j) => vec![i, k, j],
        }
    }

    fn relabel(&self, map: &[usize; 4]) -> CurveKind {
        let l = |x: usize| (map[x] + 1) as u8;
        match *self {
            Locus::Ordinary(i, j) => CurveKind::Ordinary { i: l(i), j: l(j) },
            Locus::Higher(i, k, j) => {
                let (a, b) = (l(i), l(k));
                CurveKind::Higher { i: a.min(b), k: a.max(b), j: l(j) }
            }
        }
    }
}

/// Local data of a locus at one frame.
///
/// `phi` is the defining level-set function and `deriv` the derivative of a
/// holomorphic function whose imaginary part is `phi`, so the gradient of
/// `phi` is `i conj(deriv)`. Ordinary loci use `chi_j - chi_i` directly;
/// higher-order loci use `log g`, whose imaginary part `arg g` stays well
/// conditioned near the poles and zeros of `g`.
#[derive(Debug, Clone, Copy)]
pub struct LocusEval {
    pub phi: f64,
    pub deriv: C64,
    /// Sign carrier of the real-part condition (`Re f` or `Re(A conj B)`).
    pub re: f64,
    /// Scale for the corrector tolerance on `phi`.
    pub scale: f64,
    /// Roundoff level of `phi`, set by cancellation in the exponent differences.
    pub noise: f64,
}

impl LocusEval {
    /// Whether `phi` vanishes to the relative tolerance or to roundoff.
    pub fn converged(&self, tol: f64) -> bool {
        self.phi.abs() <= tol * self.scale + self.noise
    }
}

/// Evaluates a locus at a frame.
pub fn locus_eval(f: &Frame, l: Locus) -> LocusEval {
    let t = f.taus();
    let level = 64.0 * f64::EPSILON * f.chis().iter().fold(1.0f64, |m, c| m.max(c.norm()));
    match l {
        Locus::Ordinary(i, j) => {
            let v = f.chi_diff(i, j);
            LocusEval { phi: v.im, deriv: t[j] - t[i], re: v.re, scale: 1.0 + v.norm(), noise: level }
        }
        Locus::Higher(i, k, j) => {
            let a = f.chi_diff(j, k);
            let b = f.chi_diff(i, j);
            let w = a * b.conj();
            let deriv = (t[k] - t[j]) / a - (t[j] - t[i]) / b;
            let noise = level * (1.0 / a.norm() + 1.0 / b.norm());
            LocusEval { phi: w.im.atan2(w.re), deriv, re: w.re, scale: 1.0, noise }
        }
    }
}

/// Value and `z`-derivative of the holomorphic function defining a locus:
/// `chi_j - chi_i` or `g = (chi_k - chi_j) / (chi_j - chi_i)`.
pub fn locus_value(f: &Frame, l: Locus) -> (C64, C64) {
    let t = f.taus();
    match l {
        Locus::Ordinary(i, j) => (f.chi_diff(i, j), t[j] - t[i]),
        Locus::Higher(i, k, j) => {
            let a = f.chi_diff(j, k);
            let b = f.chi_diff(i, j);
            let da = t[k] - t[j];
            let db = t[j] - t[i];
            (a / b, (da * b - a * db) / (b * b))
        }
    }
}

/// Pole-free scan function `(Im, Re)` of a locus: `chi_j - chi_i` for
/// ordinary loci and `A conj(B)` for `A / B` higher-order loci.
fn scan_value(f: &Frame, l: Locus) -> C64 {
    match l {
        Locus::Ordinary(i, j) => f.chi_diff(i, j),
        Locus::Higher(i, k, j) => f.chi_diff(j, k) * f.chi_diff(i, j).conj(),
    }
}

/// Whether the locus function is singular or vanishing at this frame, which
/// marks the point as a natural endpoint of the curve.
fn locus_degenerate(f: &Frame, l: Locus, threshold: f64) -> bool {
    match l {
        Locus::Ordinary(i, j) => f.chi_diff(i, j).norm() < threshold,
        Locus::Higher(i, k, j) => f.chi_diff(j, k).norm() < threshold || f.chi_diff(i, j).norm() < threshold,
    }
}

/// One polyline vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveVertex {
    pub z: C64,
    /// The four `tau` values, continued along the curve (frame order).
    pub taus: [C64; 4],
    /// Unit vector along which the defining imaginary part increases.
    pub normal: C64,
}

/// Where a curve started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "snake_case")]
pub enum CurveSource {
    /// Index into the graph's turning points.
    TurningPoint(usize),
    /// Index into the graph's virtual turning points.
    VirtualPoint(usize),
    /// Index into the ordinary crossings used as seeds.
    Crossing(usize),
    /// Sign change on the domain boundary.
    Boundary,
    /// User-supplied seed.
    Seed,
}

/// Why a curve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "snake_case")]
pub enum CurveEnd {
    /// Clipped on the domain boundary.
    Boundary,
    /// Reached a turning point (index into the graph's turning points).
    TurningPoint(usize),
    /// Reached a virtual turning point (index into the graph's virtual points).
    VirtualPoint(usize),
    /// The real part of the defining function became negative.
    RealPartZero,
    /// Vertex budget exhausted.
    Truncated,
}

/// A traced curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesCurve {
    /// Family with canonical labels read at the reference vertex.
    pub kind: CurveKind,
    /// Frame indices `(i, j)` or `(i, k, j)` of the involved branches.
    pub involved: Vec<usize>,
    pub source: CurveSource,
    pub end: CurveEnd,
    pub vertices: Vec<CurveVertex>,
}

impl StokesCurve {
    fn locus(&self) -> Locus {
        match self.involved.as_slice() {
            [i, j] => Locus::Ordinary(*i, *j),
            [i, k, j] => Locus::Higher(*i, *k, *j),
            _ => unreachable!("curves involve two or three branches"),
        }
    }

    /// Frame at vertex `m`.
    pub fn frame(&self, m: usize, p: PhaseParams<f64>) -> Frame {
        let v = &self.vertices[m];
        Frame::from_taus(v.z, p, v.taus)
    }

    /// Polyline points.
    pub fn points(&self) -> Vec<C64> {
        self.vertices.iter().map(|v| v.z).collect()
    }

    /// Involved `tau` values at vertex `m`.
    fn involved_taus(&self, m: usize) -> Vec<C64> {
        self.involved.iter().map(|&x| self.vertices[m].taus[x]).collect()
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            b.0 = b.0.min(v.z.re);
            b.1 = b.1.max(v.z.re);
            b.2 = b.2.min(v.z.im);
            b.3 = b.3.max(v.z.im);
        }
        b
    }

    /// Polyline length.
    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1].z - w[0].z).norm()).sum()
    }
}

/// Incidence class of a crossing point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingKind {
    StokesCrossing,
    HigherCrossing,
    Mixed,
}

/// A point where two or more traced curves cross transversally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingPoint {
    pub re: f64,
    pub im: f64,
    /// Indices of every curve passing through the point.
    pub curves: Vec<usize>,
    pub kind: CrossingKind,
}

impl CrossingPoint {
    /// Location.
    pub fn z(&self) -> C64 {
        Complex::new(self.re, self.im)
    }
}

/// Tracing tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Largest accepted tangent turn per step (radians).
    pub max_turn: f64,
    /// Corrector tolerance on the level-set function, above its roundoff level.
    pub tol: f64,
    /// Radius of seed circles and of endpoint snapping.
    pub snap_radius: f64,
    pub max_vertices: usize,
    /// Samples on each seed circle.
    pub circle_samples: usize,
    /// Samples along the domain perimeter.
    pub boundary_samples: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            h_init: 1e-3,
            h_min: 1e-6,
            h_max: 1e-1,
            max_turn: 0.05,
            tol: 1e-12,
            snap_radius: 1e-3,
            max_vertices: 100_000,
            circle_samples: 720,
            boundary_samples: 4000,
        }
    }
}

impl TraceConfig {
    /// The same configuration with every step bound halved.
    pub fn halved(&self) -> Self {
        Self { h_init: self.h_init / 2.0, h_max: self.h_max / 2.0, max_turn: self.max_turn / 2.0, ..*self }
    }
}

struct Tracer<'a> {
    domain: &'a Domain,
    turning: &'a [C64],
    virtuals: &'a [C64],
    cfg: &'a TraceConfig,
}

fn unit(z: C64) -> C64 {
    z / z.norm()
}

fn vertex_of(f: &Frame, l: Locus) -> CurveVertex {
    let d = locus_eval(f, l).deriv;
    CurveVertex { z: f.z, taus: f.taus(), normal: unit(Complex::new(0.0, 1.0) * d.conj()) }
}

impl Tracer<'_> {
    fn nearest_special(&self, z: C64) -> Option<(CurveEnd, C64, f64)> {
        let t = self.turning.iter().enumerate().map(|(k, p)| (CurveEnd::TurningPoint(k), *p));
        let v = self.virtuals.iter().enumerate().map(|(k, p)| (CurveEnd::VirtualPoint(k), *p));
        t.chain(v)
            .map(|(e, p)| (e, p, (p - z).norm()))
            .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap_or(std::cmp::Ordering::Equal))
    }

    /// Moves `frame` to `z` and corrects it onto the locus along the normal.
    fn correct(&self, mut f: Frame, l: Locus) -> Option<Frame> {
        for _ in 0..8 {
            let e = locus_eval(&f, l);
            let dn = e.deriv.norm();
            if !(dn > 1e-10) {
                return None;
            }
            if e.converged(self.cfg.tol) {
                return Some(f);
            }
            let n = Complex::new(0.0, 1.0) * e.deriv.conj() / dn;
            let z = f.z - n * (e.phi / dn);
            f = continue_to(&f, z).ok()?;
        }
        let e = locus_eval(&f, l);
        e.converged(self.cfg.tol).then_some(f)
    }

    fn step(&self, cur: &Frame, tangent: C64, h: f64, l: Locus) -> Option<(Frame, C64)> {
        let pred = continue_to(cur, cur.z + tangent * h).ok()?;
        let f = self.correct(pred, l)?;
        if (f.z - cur.z).norm() > 2.0 * h {
            return None;
        }
        let mut t = unit(locus_eval(&f, l).deriv.conj());
        if (t * tangent.conj()).re < 0.0 {
            t = -t;
        }
        Some((f, t))
    }

    /// Projects a clipped point onto the locus along the boundary edge.
    fn clip(&self, cur: &Frame, next: &Frame, l: Locus) -> Option<Frame> {
        let (s, edge) = self.domain.exit(cur.z, next.z)?;
        let zb = cur.z + (next.z - cur.z) * s;
        let mut f = continue_to(cur, zb).ok()?;
        for _ in 0..20 {
            let e = locus_eval(&f, l);
            let grad = Complex::new(0.0, 1.0) * e.deriv.conj();
            let slope = (grad * edge.conj()).re;
            if e.converged(self.cfg.tol) {
                return self.domain_clamp(f);
            }
            if slope.abs() < 1e-14 {
                return None;
            }
            f = continue_to(&f, f.z - edge * (e.phi / slope)).ok()?;
        }
        None
    }

    /// Whether the locus degenerates at the special point `zs`; curves pass
    /// through special points where it does not.
    fn terminates_at(&self, cur: &Frame, zs: C64, l: Locus) -> bool {
        let Ok(taus) = saddle_roots_near(zs, cur.params, &cur.taus()) else { return true };
        let f = Frame::from_taus(zs, cur.params, taus);
        let scale = f.chis().iter().fold(1.0f64, |m, c| m.max(c.norm()));
        locus_degenerate(&f, l, 1e-8 * scale)
    }

    /// Appends the special point `zs` as the final vertex when the locus
    /// degenerates there, so the curve ends exactly where it terminates.
    fn close_at(&self, verts: &mut Vec<CurveVertex>, cur: &Frame, zs: C64, l: Locus) {
        let Ok(taus) = saddle_roots_near(zs, cur.params, &cur.taus()) else { return };
        let f = Frame::from_taus(zs, cur.params, taus);
        let scale = f.chis().iter().fold(1.0f64, |m, c| m.max(c.norm()));
        if locus_degenerate(&f, l, 1e-8 * scale) {
            let normal = verts.last().map(|v| v.normal).unwrap_or(C64::new(0.0, 1.0));
            verts.push(CurveVertex { z: zs, taus, normal });
        }
    }

    fn domain_clamp(&self, f: Frame) -> Option<Frame> {
        let tol = 1e-9 * (1.0 + self.domain.diameter());
        let d = self.domain;
        let inside = f.z.re >= d.x_min - tol && f.z.re <= d.x_max + tol && f.z.im >= d.y_min - tol && f.z.im <= d.y_max + tol;
        inside.then_some(f)
    }

    fn trace(&self, seed: &Frame, l: Locus, dir: f64) -> Result<(Vec<CurveVertex>, CurveEnd), GeometryError> {
        let cfg = self.cfg;
        let start = seed.z;
        let mut cur = self.correct(*seed, l).ok_or(GeometryError::CorrectorDivergence { re: start.re, im: start.im })?;
        let d0 = locus_eval(&cur, l).deriv;
        if d0.norm() < 1e-10 {
            return Err(GeometryError::DegenerateTangent { re: start.re, im: start.im });
        }
        let mut tangent = unit(d0.conj()) * dir;
        let mut verts = vec![vertex_of(&cur, l)];
        let mut h = cfg.h_init;
        loop {
            if verts.len() >= cfg.max_vertices {
                return Ok((verts, CurveEnd::Truncated));
            }
            let special = self.nearest_special(cur.z);
            let mut h_eff = h;
            if let Some((_, _, dist)) = special {
                h_eff = h_eff.min((0.5 * dist).max(0.5 * cfg.snap_radius));
            }
            let (next, new_t) = loop {
                match self.step(&cur, tangent, h_eff, l) {
                    Some((f, t)) if (t * tangent.conj()).arg().abs() <= cfg.max_turn || h_eff <= cfg.h_min => break (f, t),
                    _ => {
                        if h_eff <= cfg.h_min {
                            if let Some((end, zs, dist)) = special {
                                if dist < 20.0 * cfg.snap_radius {
                                    self.close_at(&mut verts, &cur, zs, l);
                                    return Ok((verts, end));
                                }
                            }
                            return Err(GeometryError::CorrectorDivergence { re: cur.z.re, im: cur.z.im });
                        }
                        h_eff = (h_eff * 0.5).max(cfg.h_min);
                    }
                }
            };
            if !self.domain.contains(next.z) {
                if let Some(c) = self.clip(&cur, &next, l) {
                    verts.push(vertex_of(&c, l));
                }
                return Ok((verts, CurveEnd::Boundary));
            }
            if locus_eval(&next, l).re < 0.0 {
                if let Some((end, zs, dist)) = self.nearest_special(next.z) {
                    if dist <= 2.0 * h_eff && locus_degenerate(&next, l, 0.05) {
                        if let Ok(f) = continue_to(&next, zs) {
                            if locus_degenerate(&f, l, 1e-8) {
                                verts.push(CurveVertex { z: zs, taus: f.taus(), normal: verts.last().map(|x| x.normal).unwrap_or(C64::new(0.0, 1.0)) });
                            }
                        }
                        return Ok((verts, end));
                    }
                }
                return Ok((verts, CurveEnd::RealPartZero));
            }
            verts.push(vertex_of(&next, l));
            cur = next;
            tangent = new_t;
            h = (h_eff * 1.5).min(cfg.h_max).max(h.min(h_eff * 1.5));
            if let Some((end, zs, dist)) = self.nearest_special(cur.z) {
                if dist < cfg.snap_radius && (cur.z - start).norm() > 3.0 * cfg.snap_radius && self.terminates_at(&cur, zs, l) {
                    self.close_at(&mut verts, &cur, zs, l);
                    return Ok((verts, end));
                }
            }
        }
    }
}

/// Candidate seed for tracing.
#[derive(Debug, Clone)]
struct Seed {
    frame: Frame,
    locus: Locus,
    dir: f64,
    source: CurveSource,
}

/// Sign changes of each locus on a circle, continued from `start` at
/// `center + radius`.
fn circle_seeds(
    center: C64,
    radius: f64,
    start: &Frame,
    loci: &[Locus],
    samples: usize,
    source: CurveSource,
    inward: bool,
) -> Result<Vec<Seed>, GeometryError> {
    let pts: Vec<C64> = (0..=samples)
        .map(|k| center + Complex::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / samples as f64))
        .collect();
    let frames = singulant::continue_frame(start, &pts)?;
    let mut out = Vec::new();
    for &l in loci {
        for k in 0..samples {
            let (f0, f1) = (&frames[k], &frames[k + 1]);
            let (s0, s1) = (scan_value(f0, l), scan_value(f1, l));
            if (s0.im > 0.0) == (s1.im > 0.0) {
                continue;
            }
            let th0 = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
            let th1 = 2.0 * std::f64::consts::PI * (k + 1) as f64 / samples as f64;
            let f = bisect_arc(center, radius, th0, th1, f0, l)?;
            if scan_value(&f, l).re <= 0.0 {
                continue;
            }
            let d = locus_eval(&f, l).deriv;
            if d.norm() < 1e-12 {
                continue;
            }
            let outward = (unit(d.conj()) * (f.z - center).conj()).re;
            let mut dir = if outward >= 0.0 { 1.0 } else { -1.0 };
            if inward {
                dir = -dir;
            }
            out.push(Seed { frame: f, locus: l, dir, source });
        }
    }
    Ok(out)
}

fn bisect_arc(center: C64, radius: f64, mut lo: f64, mut hi: f64, f_lo: &Frame, l: Locus) -> Result<Frame, GeometryError> {
    let at = |th: f64| center + Complex::from_polar(radius, th);
    let mut flo = *f_lo;
    let s_lo = scan_value(&flo, l).im > 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let fm = continue_to(&flo, at(mid))?;
        if (scan_value(&fm, l).im > 0.0) == s_lo {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(flo)
}

/// Sign changes along the domain perimeter, each traced inward.
fn boundary_seeds(domain: &Domain, start: &Frame, loci: &[Locus], samples: usize) -> Result<Vec<Seed>, GeometryError> {
    let c = domain.corners();
    let per_edge = (samples / 4).max(8);
    let mut pts = Vec::with_capacity(4 * per_edge + 1);
    let mut normals = Vec::with_capacity(4 * per_edge + 1);
    for e in 0..4 {
        let (a, b) = (c[e], c[(e + 1) % 4]);
        let inward = Complex::new(0.0, 1.0) * unit(b - a);
        for k in 0..per_edge {
            pts.push(a + (b - a) * (k as f64 / per_edge as f64));
            normals.push(inward);
        }
    }
    pts.push(c[0]);
    normals.push(normals[0]);
    let frames = singulant::continue_frame(start, &pts)?;
    let mut out = Vec::new();
    for &l in loci {
        for k in 0..pts.len() - 1 {
            let (f0, f1) = (&frames[k], &frames[k + 1]);
            let (s0, s1) = (scan_value(f0, l), scan_value(f1, l));
            if (s0.im > 0.0) == (s1.im > 0.0) {
                continue;
            }
            let mut flo = *f0;
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let sign_lo = s0.im > 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = continue_to(&flo, pts[k] + (pts[k + 1] - pts[k]) * mid)?;
                if (scan_value(&fm, l).im > 0.0) == sign_lo {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            if scan_value(&flo, l).re <= 0.0 {
                continue;
            }
            let d = locus_eval(&flo, l).deriv;
            if d.norm() < 1e-12 {
                continue;
            }
            let t = unit(d.conj());
            let dir = if (t * normals[k].conj()).re >= 0.0 { 1.0 } else { -1.0 };
            out.push(Seed { frame: flo, locus: l, dir, source: CurveSource::Boundary });
        }
    }
    Ok(out)
}

/// Distance from `z` to the locus interpolated through a curve's vertices,
/// together with the curve's frame at the projected point.
///
/// The nearest point on the polyline is projected back onto the curve's
/// defining level set, so the chord error between vertices does not enter.
pub fn distance_to_curve(z: C64, curve: &StokesCurve, p: PhaseParams<f64>) -> (f64, Option<Frame>) {
    let vs = &curve.vertices;
    if vs.is_empty() {
        return (f64::INFINITY, None);
    }
    let mut best = (f64::INFINITY, 0usize, vs[0].z, 0.0);
    for m in 0..vs.len() {
        let (q, t) = if m + 1 < vs.len() { nearest_on_segment(z, vs[m].z, vs[m + 1].z) } else { (vs[m].z, 0.0) };
        let d = (q - z).norm();
        if d < best.0 {
            best = (d, m, q, t);
        }
    }
    let (d_chord, m, q, t) = best;
    let is_end = (m == 0 && t == 0.0) || m + 1 >= vs.len() || (m + 2 == vs.len() && t >= 1.0);
    let anchor = if t > 0.5 && m + 1 < vs.len() { m + 1 } else { m };
    let f_anchor = curve.frame(anchor, p);
    if is_end {
        return (d_chord, Some(f_anchor));
    }
    let l = curve.locus();
    let start = if d_chord < 0.25 * (vs[m].z - vs[(m + 1).min(vs.len() - 1)].z).norm() { z } else { q };
    let Ok(mut f) = continue_to(&f_anchor, start) else { return (d_chord, Some(f_anchor)) };
    for _ in 0..4 {
        f = project_normal(f, l);
        let e = locus_eval(&f, l);
        let dn = e.deriv.norm();
        if dn < 1e-12 {
            break;
        }
        let tangent = e.deriv.conj() / dn;
        let s = ((z - f.z) * tangent.conj()).re;
        if s.abs() <= 1e-14 * (1.0 + z.norm()) {
            break;
        }
        match continue_to(&f, f.z + tangent * s) {
            Ok(g) => f = g,
            Err(_) => break,
        }
    }
    ((f.z - z).norm(), Some(f))
}

fn project_normal(mut f: Frame, l: Locus) -> Frame {
    for _ in 0..8 {
        let e = locus_eval(&f, l);
        let dn = e.deriv.norm();
        if dn < 1e-12 || e.converged(1e-14) {
            break;
        }
        let n = Complex::new(0.0, 1.0) * e.deriv.conj() / dn;
        match continue_to(&f, f.z - n * (e.phi / dn)) {
            Ok(g) => f = g,
            Err(_) => break,
        }
    }
    f
}

fn nearest_on_segment(z: C64, a: C64, b: C64) -> (C64, f64) {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = (((z - a) * d.conj()).re / len2).clamp(0.0, 1.0);
    (a + d * t, t)
}

/// Whether two sets of involved `tau` values agree.
fn taus_match(a: &[C64], b: &[C64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
}

/// Stokes graph: special points, traced curves and crossing points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesGraph {
    pub params: PhaseParams<f64>,
    pub domain: Domain,
    pub turning: Vec<TurningPoint>,
    pub virtual_points: Vec<TurningPoint>,
    pub curves: Vec<StokesCurve>,
    pub crossings: Vec<CrossingPoint>,
    /// Reference point and its four singulants in label order.
    pub reference_z: C64,
    pub reference_chi: [C64; 4],
    /// Non-fatal degeneracies found while building.
    pub warnings: Vec<String>,
}

impl StokesGraph {
    /// All turning and virtual turning point locations.
    pub fn special_points(&self) -> Vec<C64> {
        self.turning.iter().chain(self.virtual_points.iter()).map(|t| t.z()).collect()
    }

    /// Crossing points where at least two ordinary curves cross, with the
    /// number of ordinary curves through each.
    pub fn ordinary_crossings(&self) -> Vec<(C64, usize)> {
        let mut out = Vec::new();
        for c in &self.crossings {
            let n = c.curves.iter().filter(|&&k| self.curves[k].kind.is_ordinary()).count();
            if n >= 2 {
                out.push((c.z(), n));
            }
        }
        out
    }

    /// Crossing points away from every ordinary curve where at least two
    /// distinct higher-order families cross, with the number of families.
    pub fn higher_crossings(&self) -> Vec<(C64, usize)> {
        let mut out = Vec::new();
        for c in &self.crossings {
            if c.curves.iter().any(|&k| self.curves[k].kind.is_ordinary()) {
                continue;
            }
            let mut kinds: Vec<CurveKind> = Vec::new();
            for &k in &c.curves {
                if !kinds.contains(&self.curves[k].kind) {
                    kinds.push(self.curves[k].kind);
                }
            }
            if kinds.len() >= 2 {
                out.push((c.z(), kinds.len()));
            }
        }
        out
    }

    /// Safety margin for query paths: `1e-4` of the domain diameter.
    pub fn safe_distance(&self) -> f64 {
        1e-4 * self.domain.diameter()
    }
}

/// Options for [`build_graph`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphOptions {
    pub trace: TraceConfig,
    /// Trace higher-order curves as well as ordinary ones.
    pub higher: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { trace: TraceConfig::default(), higher: true }
    }
}

/// Default domain for the parameters: special points and `z*` with margin.
pub fn default_domain(p: PhaseParams<f64>) -> Result<Domain, GeometryError> {
    let mut pts: Vec<C64> = singulant::turning_points(p)?.iter().map(|t| t.z()).collect();
    pts.extend(singulant::virtual_turning_points(p)?.iter().map(|t| t.z()));
    pts.push(singulant::z_star());
    Ok(Domain::around(&pts))
}

/// Traces all ordinary and higher-order curves and their crossings.
pub fn build_graph(p: PhaseParams<f64>, domain: Domain, opts: &GraphOptions) -> Result<StokesGraph, GeometryError> {
    let turning = singulant::turning_points(p)?;
    let virtual_points = singulant::virtual_turning_points(p)?;
    let base = canonical_frame(p)?;
    let tz: Vec<C64> = turning.iter().map(|t| t.z()).collect();
    let vz: Vec<C64> = virtual_points.iter().map(|t| t.z()).collect();
    let cfg = &opts.trace;
    let tracer = Tracer { domain: &domain, turning: &tz, virtuals: &vz, cfg };
    let loci: Vec<Locus> = Locus::all()
        .into_iter()
        .filter(|l| opts.higher || matches!(l, Locus::Ordinary(..)))
        .collect();
    let mut warnings = Vec::new();

    let mut seeds = Vec::new();
    let specials: Vec<(C64, CurveSource)> = tz
        .iter()
        .enumerate()
        .map(|(k, z)| (*z, CurveSource::TurningPoint(k)))
        .chain(vz.iter().enumerate().map(|(k, z)| (*z, CurveSource::VirtualPoint(k))))
        .collect();
    for (z0, source) in &specials {
        let r = cfg.snap_radius;
        let start = approach(&base, *z0 + r, 0.0)?;
        let local: Vec<Locus> = loci.iter().copied().filter(|l| locus_degenerate(&start, *l, 0.05)).collect();
        seeds.extend(circle_seeds(*z0, r, &start, &local, cfg.circle_samples, *source, false)?);
    }
    let mut curves = trace_seeds(&tracer, &seeds, &base)?;
    curves = dedupe(curves, p);

    if opts.higher {
        let prelim = find_crossings(&curves, p, &domain, &tz, &vz, cfg, &mut Vec::new());
        let mut extra = Vec::new();
        for (idx, c) in prelim.iter().enumerate() {
            let ordinary = c.curves.iter().filter(|&&k| curves[k].kind.is_ordinary()).count();
            if ordinary < 2 {
                continue;
            }
            let z0 = c.z();
            let r = cfg.snap_radius;
            let start = approach(&base, z0 + r, 0.0)?;
            let local: Vec<Locus> = loci
                .iter()
                .copied()
                .filter(|l| matches!(l, Locus::Higher(..)))
                .filter(|l| {
                    let v = locus_value(&start, *l).0;
                    v.re > 0.0 && v.im.abs() < 0.05 * (1.0 + v.norm())
                })
                .collect();
            extra.extend(circle_seeds(z0, r, &start, &local, cfg.circle_samples, CurveSource::Crossing(idx), true)?);
        }
        let more = trace_seeds(&tracer, &extra, &base)?;
        curves.extend(more);
        curves = dedupe(curves, p);
    }

    let corner = domain.corners()[0];
    let start = approach(&base, corner, 0.0)?;
    let bseeds = boundary_seeds(&domain, &start, &loci, cfg.boundary_samples)?;
    let more = trace_seeds(&tracer, &bseeds, &base)?;
    curves.extend(more);
    curves = dedupe(curves, p);
    curves.sort_by(|a, b| {
        let key = |c: &StokesCurve| (!c.kind.is_ordinary(), c.kind, source_rank(&c.source));
        key(a).cmp(&key(b)).then(b.length().partial_cmp(&a.length()).unwrap_or(std::cmp::Ordering::Equal))
    });

    let crossings = find_crossings(&curves, p, &domain, &tz, &vz, cfg, &mut warnings);
    Ok(StokesGraph {
        params: p,
        domain,
        turning,
        virtual_points,
        curves,
        crossings,
        reference_z: base.z,
        reference_chi: base.chis(),
        warnings,
    })
}

fn source_rank(s: &CurveSource) -> (u8, usize) {
    match *s {
        CurveSource::TurningPoint(k) => (0, k),
        CurveSource::VirtualPoint(k) => (1, k),
        CurveSource::Crossing(k) => (2, k),
        CurveSource::Boundary => (3, 0),
        CurveSource::Seed => (4, 0),
    }
}

fn trace_seeds(tracer: &Tracer<'_>, seeds: &[Seed], base: &Frame) -> Result<Vec<StokesCurve>, GeometryError> {
    let results: Vec<Result<Option<StokesCurve>, GeometryError>> = seeds
        .par_iter()
        .map(|s| {
            let tag = |e: GeometryError| GeometryError::Seed {
                seed: format!("{:?} at {:.6}{:+.6}i", s.locus, s.frame.z.re, s.frame.z.im),
                source: Box::new(e),
            };
            let (verts, end) = match tracer.trace(&s.frame, s.locus, s.dir) {
                Ok(r) => r,
                Err(GeometryError::DegenerateTangent { .. }) => return Ok(None),
                Err(e) => return Err(tag(e)),
            };
            if verts.len() < 2 {
                return Ok(None);
            }
            let kind = canonical_kind(&verts, s.locus, base).map_err(tag)?;
            Ok(Some(StokesCurve { kind, involved: s.locus.indices(), source: s.source, end, vertices: verts }))
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(c) = r? {
            out.push(c);
        }
    }
    Ok(out)
}

/// Canonical labels of a curve, read at a vertex near its start by matching
/// `tau` values against the canonical frame continued from `z*`.
fn canonical_kind(verts: &[CurveVertex], l: Locus, base: &Frame) -> Result<CurveKind, GeometryError> {
    let m = 20.min((verts.len() - 1) / 2);
    let v = &verts[m];
    let f = approach(base, v.z, 0.0)?;
    let mut map = [0usize; 4];
    for (x, t) in v.taus.iter().enumerate() {
        let mut best = 0;
        for y in 1..4 {
            if (f.branches[y].tau - t).norm() < (f.branches[best].tau - t).norm() {
                best = y;
            }
        }
        map[x] = best;
    }
    Ok(l.relabel(&map))
}

/// Removes curves that are covered by a longer curve of the same family.
fn dedupe(mut curves: Vec<StokesCurve>, p: PhaseParams<f64>) -> Vec<StokesCurve> {
    curves.sort_by(|a, b| b.length().partial_cmp(&a.length()).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept: Vec<StokesCurve> = Vec::new();
    for c in curves {
        let n = c.vertices.len();
        let samples: Vec<usize> = if n <= 18 { (0..n).collect() } else { (0..=16).map(|s| s * (n - 1) / 16).collect() };
        let covered = kept.iter().any(|k| {
            if k.involved.len() != c.involved.len() {
                return false;
            }
            samples.iter().all(|&m| {
                let z = c.vertices[m].z;
                let (d, f) = distance_to_curve(z, k, p);
                match f {
                    Some(f) if d <= 1e-6 => {
                        let kt: Vec<C64> = k.involved.iter().map(|&x| f.branches[x].tau).collect();
                        let ct = c.involved_taus(m);
                        taus_match(&ct, &kt, 1e-4) || (ct.len() == 3 && taus_match(&[ct[1], ct[0], ct[2]], &kt, 1e-4))
                    }
                    _ => false,
                }
            })
        });
        if !covered {
            kept.push(c);
        }
    }
    kept
}

fn orient(a: C64, b: C64, c: C64) -> f64 {
    (b - a).re * (c - a).im - (b - a).im * (c - a).re
}

/// Proper intersection of segments `a0-a1` and `b0-b1`.
fn segment_intersection(a0: C64, a1: C64, b0: C64, b1: C64) -> Option<C64> {
    let scale = (a1 - a0).norm() * (b1 - b0).norm();
    let eps = 1e-12 * scale;
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    if d1.abs() <= eps || d2.abs() <= eps || d3.abs() <= eps || d4.abs() <= eps {
        let collinear = d1.abs() <= eps && d2.abs() <= eps;
        if collinear {
            return None;
        }
    }
    if (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) {
        let t = d1 / (d1 - d2);
        Some(a0 + (a1 - a0) * t)
    } else {
        None
    }
}

/// Refines a candidate intersection by Newton's method on both defining
/// functions. Returns `None` for tangential or overlapping pairs.
fn refine_crossing(z0: C64, fa: Frame, la: Locus, fb: Frame, lb: Locus) -> Option<C64> {
    let mut fa = continue_to(&fa, z0).ok()?;
    let mut fb = continue_to(&fb, z0).ok()?;
    for _ in 0..30 {
        let ea = locus_eval(&fa, la);
        let eb = locus_eval(&fb, lb);
        let ga = Complex::new(0.0, 1.0) * ea.deriv.conj();
        let gb = Complex::new(0.0, 1.0) * eb.deriv.conj();
        let det = ga.re * gb.im - ga.im * gb.re;
        let sin = det / (ga.norm() * gb.norm());
        if !(sin.abs() > 1e-6) {
            return None;
        }
        let dx = (-ea.phi * gb.im + eb.phi * ga.im) / det;
        let dy = (-ga.re * eb.phi + gb.re * ea.phi) / det;
        let z = fa.z + Complex::new(dx, dy);
        fa = continue_to(&fa, z).ok()?;
        fb = continue_to(&fb, z).ok()?;
        if dx.abs() + dy.abs() < 1e-14 * (1.0 + z.norm()) {
            break;
        }
    }
    let ea = locus_eval(&fa, la);
    let eb = locus_eval(&fb, lb);
    let ok = ea.converged(1e-10) && eb.converged(1e-10) && ea.re > 0.0 && eb.re > 0.0;
    ok.then_some(fa.z)
}

fn find_crossings(
    curves: &[StokesCurve],
    p: PhaseParams<f64>,
    domain: &Domain,
    tz: &[C64],
    vz: &[C64],
    cfg: &TraceConfig,
    warnings: &mut Vec<String>,
) -> Vec<CrossingPoint> {
    let boxes: Vec<(f64, f64, f64, f64)> = curves.iter().map(|c| c.bbox()).collect();
    let pairs: Vec<(usize, usize)> = (0..curves.len())
        .flat_map(|a| ((a + 1)..curves.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| {
            let (x, y) = (boxes[a], boxes[b]);
            x.0 <= y.1 && y.0 <= x.1 && x.2 <= y.3 && y.2 <= x.3
        })
        .collect();
    let found: Vec<(Vec<C64>, Vec<String>)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ca, cb) = (&curves[a], &curves[b]);
            let mut pts = Vec::new();
            let mut warn = Vec::new();
            for s in 0..ca.vertices.len().saturating_sub(1) {
                let (a0, a1) = (ca.vertices[s].z, ca.vertices[s + 1].z);
                let (sx0, sx1) = (a0.re.min(a1.re), a0.re.max(a1.re));
                let (sy0, sy1) = (a0.im.min(a1.im), a0.im.max(a1.im));
                for t in 0..cb.vertices.len().saturating_sub(1) {
                    let (b0, b1) = (cb.vertices[t].z, cb.vertices[t + 1].z);
                    if b0.re.max(b1.re) < sx0 || b0.re.min(b1.re) > sx1 || b0.im.max(b1.im) < sy0 || b0.im.min(b1.im) > sy1 {
                        continue;
                    }
                    let Some(zc) = segment_intersection(a0, a1, b0, b1) else { continue };
                    match refine_crossing(zc, ca.frame(s, p), ca.locus(), cb.frame(t, p), cb.locus()) {
                        Some(z) if (z - zc).norm() < 1e-2 => pts.push(z),
                        Some(_) => {}
                        None => {
                            if ca.kind.is_ordinary() != cb.kind.is_ordinary() {
                                warn.push(format!(
                                    "{} and {} nearly coincide near {:.6}{:+.6}i",
                                    ca.kind.name(),
                                    cb.kind.name(),
                                    zc.re,
                                    zc.im
                                ));
                            }
                        }
                    }
                }
            }
            (pts, warn)
        })
        .collect();
    let mut points: Vec<C64> = Vec::new();
    for (pts, warn) in found {
        warnings.extend(warn);
        for z in pts {
            if !domain.contains(z) {
                continue;
            }
            let near_special = tz.iter().chain(vz.iter()).any(|s| (s - z).norm() < 2.0 * cfg.snap_radius);
            if near_special {
                continue;
            }
            if points.iter().all(|q| (q - z).norm() > 1e-6) {
                points.push(z);
            }
        }
    }
    points.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(std::cmp::Ordering::Equal).then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal)));
    points
        .into_iter()
        .map(|z| {
            let ids: Vec<usize> = (0..curves.len())
                .filter(|&k| {
                    let b = boxes[k];
                    z.re >= b.0 - 1e-6 && z.re <= b.1 + 1e-6 && z.im >= b.2 - 1e-6 && z.im <= b.3 + 1e-6
                })
                .filter(|&k| distance_to_curve(z, &curves[k], p).0 <= 1e-8)
                .collect();
            let ord = ids.iter().filter(|&&k| curves[k].kind.is_ordinary()).count();
            let kind = if ord == ids.len() {
                CrossingKind::StokesCrossing
            } else if ord == 0 {
                CrossingKind::HigherCrossing
            } else {
                CrossingKind::Mixed
            };
            CrossingPoint { re: z.re, im: z.im, curves: ids, kind }
        })
        .filter(|c| c.curves.len() >= 2)
        .collect()
}

/// Traces a single curve of the given family from a seed near its locus,
/// in the direction of increasing real part.
pub fn trace_curve(
    kind: CurveKind,
    seed: C64,
    p: PhaseParams<f64>,
    domain: &Domain,
    cfg: &TraceConfig,
) -> Result<StokesCurve, GeometryError> {
    let base = canonical_frame(p)?;
    let f = approach(&base, seed, 0.0)?;
    let l = match kind {
        CurveKind::Ordinary { i, j } => Locus::Ordinary(i as usize - 1, j as usize - 1),
        CurveKind::Higher { i, k, j } => Locus::Higher(i as usize - 1, k as usize - 1, j as usize - 1),
    };
    let tz: Vec<C64> = singulant::turning_points(p)?.iter().map(|t| t.z()).collect();
    let vz: Vec<C64> = singulant::virtual_turning_points(p)?.iter().map(|t| t.z()).collect();
    let tracer = Tracer { domain, turning: &tz, virtuals: &vz, cfg };
    let (verts, end) = tracer.trace(&f, l, 1.0)?;
    Ok(StokesCurve { kind, involved: l.indices(), source: CurveSource::Seed, end, vertices: verts })
}

/// Traces `l_{i>j}` from a seed (labels 1-based).
pub fn trace_ordinary(i: u8, j: u8, seed: C64, p: PhaseParams<f64>, domain: &Domain) -> Result<StokesCurve, GeometryError> {
    trace_curve(CurveKind::Ordinary { i, j }, seed, p, domain, &TraceConfig::default())
}

/// Traces `h_{i>k;j}` from a seed (labels 1-based).
pub fn trace_higher(i: u8, k: u8, j: u8, seed: C64, p: PhaseParams<f64>, domain: &Domain) -> Result<StokesCurve, GeometryError> {
    trace_curve(CurveKind::Higher { i, k, j }, seed, p, domain, &TraceConfig::default())
}

/// Symmetric Hausdorff distance between two curves, with distances measured
/// to each curve's interpolated locus.
pub fn hausdorff(a: &StokesCurve, b: &StokesCurve, p: PhaseParams<f64>) -> f64 {
    let one = |x: &StokesCurve, y: &StokesCurve| {
        x.vertices.iter().map(|v| distance_to_curve(v.z, y, p).0).fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Kind of a path event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    /// Crossing of `l_{i>j}` (labels 1-based, as continued along the path).
    Ordinary { i: u8, j: u8 },
    /// Crossing of `h_{i>k;j}`.
    Higher { i: u8, k: u8, j: u8 },
}

/// One crossing of a query path with a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub arclength: f64,
    pub z: C64,
    /// Matching graph curve, when the curve was traced inside the domain.
    pub curve: Option<usize>,
    pub kind: EventKind,
    /// Sign of the change of the defining imaginary part along the path.
    pub direction: i8,
}

/// Options for [`path_crossings`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    /// Largest sampling step along the path.
    pub max_step: f64,
    /// Keep both `h_{i>k;j}` and the coincident `h_{k>i;j}` (otherwise only `i < k`).
    pub both_reciprocals: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { max_step: 2e-3, both_reciprocals: false }
    }
}

/// Ordered events where `path` crosses ordinary and higher-order curves.
///
/// Labels come from the frame `start` (at `path[0]`) continued along the
/// path. Events are located by sign changes of each defining imaginary part
/// between samples and refined by bisection; each is matched to a traced
/// curve by comparing the involved `tau` values.
pub fn path_crossings(
    path: &[C64],
    graph: &StokesGraph,
    start: &Frame,
    opts: &ScanOptions,
) -> Result<(Vec<CrossingEvent>, Frame), GeometryError> {
    let delta = graph.safe_distance();
    let mut obstacles: Vec<C64> = graph.special_points();
    obstacles.extend(graph.crossings.iter().map(|c| c.z()));
    for (s, w) in path.windows(2).enumerate() {
        for q in &obstacles {
            let (foot, _) = nearest_on_segment(*q, w[0], w[1]);
            if (foot - q).norm() < delta {
                return Err(GeometryError::PathTooCloseToCrossing { re: q.re, im: q.im, segment: s });
            }
        }
    }
    let mut loci: Vec<Locus> = Locus::all();
    if opts.both_reciprocals {
        let swapped: Vec<Locus> = loci
            .iter()
            .filter_map(|l| match *l {
                Locus::Higher(i, k, j) => Some(Locus::Higher(k, i, j)),
                Locus::Ordinary(..) => None,
            })
            .collect();
        loci.extend(swapped);
    }
    let mut events = Vec::new();
    let mut cur = *start;
    let mut arc = 0.0;
    for w in path.windows(2) {
        let len = (w[1] - w[0]).norm();
        let n = ((len / opts.max_step).ceil() as usize).max(1);
        for k in 1..=n {
            let z = w[0] + (w[1] - w[0]) * (k as f64 / n as f64);
            let next = continue_to(&cur, z)?;
            for &l in &loci {
                let (s0, s1) = (scan_value(&cur, l), scan_value(&next, l));
                if (s0.im > 0.0) == (s1.im > 0.0) {
                    continue;
                }
                let (f, t) = bisect_segment(&cur, next.z, l)?;
                let v = scan_value(&f, l);
                if v.re <= 0.0 {
                    continue;
                }
                let step = (next.z - cur.z).norm();
                let direction: i8 = if s1.im > 0.0 { 1 } else { -1 };
                let kind = match l {
                    Locus::Ordinary(i, j) => EventKind::Ordinary { i: i as u8 + 1, j: j as u8 + 1 },
                    Locus::Higher(i, kk, j) => EventKind::Higher { i: i as u8 + 1, k: kk as u8 + 1, j: j as u8 + 1 },
                };
                let curve = match_curve(&f, l, graph);
                events.push(CrossingEvent { arclength: arc + t * step, z: f.z, curve, kind, direction });
            }
            arc += (next.z - cur.z).norm();
            cur = next;
        }
    }
    events.sort_by(|a, b| a.arclength.partial_cmp(&b.arclength).unwrap_or(std::cmp::Ordering::Equal));
    Ok((events, cur))
}

fn bisect_segment(f0: &Frame, z1: C64, l: Locus) -> Result<(Frame, f64), GeometryError> {
    let z0 = f0.z;
    let sign0 = scan_value(f0, l).im > 0.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut flo = *f0;
    for _ in 0..55 {
        let mid = 0.5 * (lo + hi);
        let fm = continue_to(&flo, z0 + (z1 - z0) * mid)?;
        if (scan_value(&fm, l).im > 0.0) == sign0 {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok((flo, 0.5 * (lo + hi)))
}

fn match_curve(f: &Frame, l: Locus, graph: &StokesGraph) -> Option<usize> {
    let idx = l.indices();
    let taus: Vec<C64> = idx.iter().map(|&x| f.branches[x].tau).collect();
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in graph.curves.iter().enumerate() {
        if c.involved.len() != idx.len() {
            continue;
        }
        let b = c.bbox();
        let pad = 0.2;
        if f.z.re < b.0 - pad || f.z.re > b.1 + pad || f.z.im < b.2 - pad || f.z.im > b.3 + pad {
            continue;
        }
        let (d, g) = distance_to_curve(f.z, c, graph.params);
        let Some(g) = g else { continue };
        if d > 1e-5 {
            continue;
        }
        let ct: Vec<C64> = c.involved.iter().map(|&x| g.branches[x].tau).collect();
        let same = taus_match(&taus, &ct, 1e-4) || (ct.len() == 3 && taus_match(&[taus[1], taus[0], taus[2]], &ct, 1e-4));
        if same && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

/// Curves with an endpoint at a virtual turning point.
pub fn curves_from_virtual_points(graph: &StokesGraph) -> Vec<usize> {
    graph
        .curves
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c.source, CurveSource::VirtualPoint(_)) || matches!(c.end, CurveEnd::VirtualPoint(_)))
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::singulant::{frame_at, REFERENCE_PARAMS};

    fn reference() -> PhaseParams<f64> {
        REFERENCE_PARAMS
    }

    #[test]
    fn domain_rejects_empty_box() {
        assert!(matches!(Domain::new(1.0, 1.0, 0.0, 1.0), Err(GeometryError::EmptyDomain)));
        let d = Domain::new(-1.0, 2.0, -3.0, 4.0).unwrap();
        assert!(d.contains(C64::new(0.0, 0.0)));
        assert!(!d.contains(C64::new(2.5, 0.0)));
    }

    #[test]
    fn higher_locus_phase_is_argument_of_ratio() {
        let p = reference();
        let f = frame_at(C64::new(1.3, -0.4), p, None).unwrap();
        for l in Locus::all() {
            let (v, d) = locus_value(&f, l);
            let e = locus_eval(&f, l);
            match l {
                Locus::Ordinary(..) => {
                    assert_eq!(e.phi, v.im);
                    assert_eq!(e.deriv, d);
                }
                Locus::Higher(..) => {
                    assert!((e.phi - v.arg()).abs() < 1e-12);
                    assert!((e.deriv - d / v).norm() < 1e-9 * (1.0 + e.deriv.norm()));
                    assert_eq!(e.re > 0.0, v.re > 0.0);
                }
            }
        }
    }

    #[test]
    fn reciprocal_higher_loci_are_listed_once() {
        let all = Locus::all();
        assert_eq!(all.len(), 24);
        assert!(all.iter().all(|l| match *l {
            Locus::Higher(i, k, _) => i < k,
            Locus::Ordinary(..) => true,
        }));
    }

    #[test]
    fn traced_vertices_lie_on_the_locus() {
        let p = reference();
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        for c in &g.curves {
            let l = c.locus();
            for m in 0..c.vertices.len() {
                let f = c.frame(m, p);
                let e = locus_eval(&f, l);
                assert!(e.converged(1e-10), "{} vertex {m}: phi {}", c.kind.name(), e.phi);
                assert!(e.re >= -1e-9, "{} vertex {m} has negative real part", c.kind.name());
            }
        }
    }

    #[test]
    fn reference_graph_has_four_ordinary_crossings() {
        let p = reference();
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        assert_eq!(g.turning.len(), 3);
        assert_eq!(g.virtual_points.len(), 3);
        let ord = g.ordinary_crossings();
        assert_eq!(ord.len(), 4, "{ord:?}");
        let mut counts: Vec<usize> = ord.iter().map(|(_, n)| *n).collect();
        counts.sort();
        assert_eq!(counts, vec![3, 3, 3, 6]);
        let six = ord.iter().find(|(_, n)| *n == 6).unwrap().0;
        assert!((six - C64::new(5.176963, 0.0)).norm() < 1e-5);
        assert!(ord.iter().filter(|(z, _)| z.re < 0.0).count() == 3);
    }

    #[test]
    fn airy_like_panel_has_no_ordinary_crossings() {
        let p = PhaseParams::new(0.0, 0.0);
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        assert!(g.ordinary_crossings().is_empty());
        assert!(g.higher_crossings().is_empty());
    }

    #[test]
    fn pearcey_like_panels_have_no_higher_crossings() {
        for p in [PhaseParams::new(1.0, 0.0), PhaseParams::new(-1.0, 0.4f64.sqrt())] {
            let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
            assert!(g.higher_crossings().is_empty(), "{:?}", g.higher_crossings());
            assert!(!g.curves.is_empty());
        }
    }

    fn retrace(c: &StokesCurve, p: PhaseParams<f64>, d: &Domain, cfg: &TraceConfig) -> StokesCurve {
        let tz: Vec<C64> = singulant::turning_points(p).unwrap().iter().map(|t| t.z()).collect();
        let vz: Vec<C64> = singulant::virtual_turning_points(p).unwrap().iter().map(|t| t.z()).collect();
        let tracer = Tracer { domain: d, turning: &tz, virtuals: &vz, cfg };
        let mid = c.frame(c.vertices.len() / 2, p);
        let (vertices, end) = tracer.trace(&mid, c.locus(), 1.0).unwrap();
        StokesCurve { kind: c.kind, involved: c.involved.clone(), source: CurveSource::Seed, end, vertices }
    }

    #[test]
    fn halving_steps_moves_curves_by_less_than_tolerance() {
        let p = reference();
        let d = default_domain(p).unwrap();
        let g = build_graph(p, d, &GraphOptions::default()).unwrap();
        let cfg = TraceConfig::default();
        let mut checked = 0;
        for c in g.curves.iter().filter(|c| c.vertices.len() > 40).step_by(5) {
            let a = retrace(c, p, &d, &cfg);
            let b = retrace(c, p, &d, &cfg.halved());
            let h = hausdorff(&a, &b, p);
            assert!(h <= 1e-6, "{}: {h}", c.kind.name());
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn path_events_match_graph_curves() {
        let p = reference();
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        let start = canonical_frame(p).unwrap();
        let path = [start.z, C64::new(3.0, 3.5), C64::new(-3.0, 3.5)];
        let (events, end) = path_crossings(&path, &g, &start, &ScanOptions::default()).unwrap();
        assert!(!events.is_empty());
        assert!(events.windows(2).all(|w| w[0].arclength <= w[1].arclength));
        assert!(events.iter().all(|e| e.curve.is_some()), "{events:?}");
        assert!((end.z - path[2]).norm() < 1e-12);
    }

    #[test]
    fn reciprocal_events_have_opposite_directions() {
        let p = reference();
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        let start = canonical_frame(p).unwrap();
        let path = [start.z, C64::new(3.0, -3.0), C64::new(6.0, -1.0)];
        let opts = ScanOptions { both_reciprocals: true, ..ScanOptions::default() };
        let (events, _) = path_crossings(&path, &g, &start, &opts).unwrap();
        for e in &events {
            if let EventKind::Higher { i, k, j } = e.kind {
                let twin = events.iter().find(|x| x.kind == EventKind::Higher { i: k, k: i, j } && (x.z - e.z).norm() < 1e-9);
                assert_eq!(twin.map(|x| x.direction), Some(-e.direction));
            }
        }
    }

    #[test]
    fn paths_through_crossings_are_rejected() {
        let p = reference();
        let g = build_graph(p, default_domain(p).unwrap(), &GraphOptions::default()).unwrap();
        let start = canonical_frame(p).unwrap();
        let x = g.ordinary_crossings()[0].0;
        let path = [start.z, x];
        assert!(matches!(
            path_crossings(&path, &g, &start, &ScanOptions::default()),
            Err(GeometryError::PathTooCloseToCrossing { .. }) | Err(GeometryError::Singulant(_))
        ));
    }
}
