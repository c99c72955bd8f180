//! Steepest-descent analysis in the `t`-plane.
//!
//! Every saddle `t_i = -tau_i` carries a local level variable `u` defined by
//! `F(t) - chi_i = u^2`, with the branch of `t(u)` fixed by
//! `t'(0) = i psi_0^{(i)} / sqrt(pi)`. This ties the orientation of every
//! descent contour to the amplitude branch stored in the frame, so Stokes
//! constants, late terms and thimble coefficients all live in one gauge.
//!
//! * Descent contours at phase `arg eps = theta` follow `u = e^{i theta/2} w`
//!   with real `w`.
//! * Adjacency probes the descent contour of saddle `i` either side of the
//!   critical phase `arg(chi_j - chi_i)`.
//! * Late terms are Taylor coefficients of `t'(u)`, computed by the
//!   trapezoidal rule on a circle in the `u`-plane.
//! * The integral is a sum of thimble integrals, each evaluated by the
//!   trapezoidal rule in `w` on a slightly tilted contour, with integer
//!   coefficients from the valley homology of the original contour.

use crate::geometry::{Frame, C64};
use crate::singulant::{frame_at, phase, phase_dt, PhaseParams, SingulantError};
use crate::transport::{Coeff, ConnectionState, StokesMatrix, TransportError};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Half-width in radians of the phase probes around a critical phase.
pub const PROBE_OFFSET: f64 = 1e-3;
/// A descent path closer than this to another saddle is a collision.
pub const COLLISION_RADIUS: f64 = 1e-6;
/// Contour tilts used for the two independent integral decompositions.
pub const QUADRATURE_TILTS: [f64; 2] = [0.15, -0.15];
/// Radius of the late-term circle as a fraction of the distance to the
/// nearest branch point.
pub const CIRCLE_FRACTION: f64 = 0.93;
/// Nodes of the late-term circle.
pub const CIRCLE_NODES: usize = 2048;
/// Dominance factor `e^5` required at a calibration anchor.
pub const ANCHOR_DOMINANCE: f64 = 148.413_159_102_576_6;

/// Errors of the steepest-descent layer. Saddle labels are 1-based.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaddleError {
    #[error("descent path from saddle {saddle} passes within {distance:.2e} of saddle {other} at arg eps = {arg_eps}")]
    SaddleCollision { saddle: usize, other: usize, arg_eps: f64, distance: f64 },
    #[error("ambiguous connection probe for pair ({i}, {j})")]
    ProbeAmbiguity { i: usize, j: usize },
    #[error("late-term circle around saddle {saddle} does not close (mismatch {mismatch:.2e})")]
    LoopTooWide { saddle: usize, mismatch: f64 },
    #[error("late terms of saddle {i} are dominated by pair ({i}, {dominant}), not ({i}, {j})")]
    NonConvergence { i: usize, j: usize, dominant: usize },
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("anchor dominance ratio {ratio:.3e} is below e^5")]
    AnchorDegenerate { ratio: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Singulant(#[from] SingulantError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

fn check_label(label: usize) -> Result<usize, SaddleError> {
    if (1..=4).contains(&label) {
        Ok(label - 1)
    } else {
        Err(SaddleError::InvalidInput(format!("saddle label {label} out of range 1..=4")))
    }
}

/// Truncation radius for descent paths.
pub fn t_max(z: C64, p: PhaseParams<f64>) -> f64 {
    10.0 * (1.0 + z.norm() + p.a.abs() + p.b.abs()).powf(0.25)
}

/// Index of the valley of `exp(-F/eps)` at infinity containing the direction
/// of `t`, for `arg eps = theta`. Valley `k` is centred on
/// `arg t = (pi + theta + 2 pi k) / 5`; the original contour runs from
/// valley 4 to valley 0.
pub fn valley_index(t: C64, theta: f64) -> usize {
    let k = ((5.0 * t.arg() - PI - theta) / (2.0 * PI)).round() as i64;
    k.rem_euclid(5) as usize
}

/// `Gamma(n + 1/2)` by recurrence from `Gamma(1/2) = sqrt(pi)`.
pub fn gamma_half(n: usize) -> f64 {
    (0..n).fold(PI.sqrt(), |g, k| g * (k as f64 + 0.5))
}

/// `Gamma(n)` for `n >= 1` by recurrence from `Gamma(1) = 1`.
pub fn gamma_int(n: usize) -> f64 {
    (1..n).fold(1.0, |g, k| g * k as f64)
}

/// Branch of `t(u)` solving `F(t) - chi_i = u^2` next to saddle `i`.
struct LevelBranch {
    z: C64,
    params: PhaseParams<f64>,
    index: usize,
    origin: C64,
    chi: C64,
    slope0: C64,
    others: [(usize, C64); 3],
    theta: f64,
}

impl LevelBranch {
    fn new(frame: &Frame, index: usize, theta: f64) -> Self {
        let b = &frame.branches[index];
        let mut others = [(0, Complex::new(0.0, 0.0)); 3];
        for (slot, k) in (0..4).filter(|&k| k != index).enumerate() {
            others[slot] = (k + 1, frame.saddle(k));
        }
        Self {
            z: frame.z,
            params: frame.params,
            index,
            origin: frame.saddle(index),
            chi: b.chi,
            slope0: C64::i() * b.amp0 / PI.sqrt(),
            others,
            theta,
        }
    }

    fn residual(&self, t: C64, u: C64) -> C64 {
        phase(t, self.z, self.params) - self.chi - u * u
    }

    /// `dt/du`.
    fn slope(&self, t: C64, u: C64) -> C64 {
        if u.norm() == 0.0 {
            self.slope0
        } else {
            2.0 * u / phase_dt(t, self.z, self.params)
        }
    }

    /// Newton correction onto the level set. Iteration stops at relative
    /// step `1e-14`, or once the step stalls at roundoff level.
    fn newton(&self, mut t: C64, u: C64) -> Option<C64> {
        let mut prev = f64::INFINITY;
        for _ in 0..30 {
            let d = self.residual(t, u) / phase_dt(t, self.z, self.params);
            if !d.is_finite() {
                return None;
            }
            t -= d;
            let step = d.norm();
            let scale = 1.0 + t.norm();
            if step <= 1e-14 * scale || (step > 0.5 * prev && step <= 1e-9 * scale) {
                return Some(t);
            }
            prev = step;
        }
        None
    }

    fn nearest_other(&self, t: C64) -> (usize, f64) {
        self.others
            .iter()
            .map(|&(label, s)| (label, (t - s).norm()))
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
    }

    fn collision_error(&self, t: C64) -> SaddleError {
        let (other, distance) = self.nearest_other(t);
        SaddleError::SaddleCollision { saddle: self.index + 1, other, arg_eps: self.theta, distance }
    }

    /// Point at `u` on the branch, starting next to the saddle and moving
    /// radially in `u`.
    fn start(&self, u: C64) -> Result<C64, SaddleError> {
        if u.norm() == 0.0 {
            return Ok(self.origin);
        }
        let gap = self.nearest_other(self.origin).1;
        let r0 = (1e-2 * gap).min(u.norm());
        let u0 = u / u.norm() * r0;
        let t0 = self
            .newton(self.origin + self.slope0 * u0, u0)
            .ok_or_else(|| SaddleError::QuadratureFailure(format!("no start point next to saddle {}", self.index + 1)))?;
        self.advance(t0, u0, u)
    }

    /// Continues `t` along the straight segment `u0 -> u1` with adaptive
    /// fourth-order predictor steps and Newton correction.
    fn advance(&self, mut t: C64, u0: C64, u1: C64) -> Result<C64, SaddleError> {
        let total = u1 - u0;
        if total.norm() == 0.0 {
            return Ok(t);
        }
        let mut s = 0.0f64;
        let mut h = 1.0f64;
        while s < 1.0 {
            let s1 = (s + h).min(1.0);
            let ua = u0 + total * s;
            let ub = if s1 == 1.0 { u1 } else { u0 + total * s1 };
            match self.try_step(t, ua, ub) {
                Some(tn) => {
                    t = tn;
                    s = s1;
                    h = (h * 1.5).min(1.0);
                    if self.nearest_other(t).1 < COLLISION_RADIUS {
                        return Err(self.collision_error(t));
                    }
                }
                None => {
                    h *= 0.5;
                    if h < 1e-13 {
                        return Err(self.collision_error(t));
                    }
                }
            }
        }
        Ok(t)
    }

    fn try_step(&self, t: C64, ua: C64, ub: C64) -> Option<C64> {
        let du = ub - ua;
        let mid = ua + du * 0.5;
        let k1 = self.slope(t, ua) * du;
        let k2 = self.slope(t + k1 * 0.5, mid) * du;
        let k3 = self.slope(t + k2 * 0.5, mid) * du;
        let k4 = self.slope(t + k3, ub) * du;
        let pred = t + (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        let moved = (pred - t).norm();
        let limit = (0.25 * self.nearest_other(t).1).min(0.2 * (1.0 + t.norm()));
        if !pred.is_finite() || moved > limit {
            return None;
        }
        let tn = self.newton(pred, ub)?;
        if (tn - pred).norm() > 1e-2 * moved + 1e-12 * (1.0 + t.norm()) {
            return None;
        }
        Some(tn)
    }

    /// Continues outwards along `u = dir * w`, `w` from `w0` up, until
    /// `|t| >= radius`; returns the vertices visited.
    fn run_out(&self, mut t: C64, dir: C64, mut w: f64, radius: f64) -> Result<Vec<(f64, C64)>, SaddleError> {
        let mut out = Vec::new();
        let mut guard = 0;
        while t.norm() < radius {
            let speed = self.slope(t, dir * w).norm().max(1e-300);
            let dw = (0.05 * (1.0 + t.norm()) / speed).min(0.5 * w + 0.05).max(1e-6);
            t = self.advance(t, dir * w, dir * (w + dw))?;
            w += dw;
            out.push((w, t));
            guard += 1;
            if guard > 200_000 {
                return Err(SaddleError::QuadratureFailure(format!("descent from saddle {} does not reach |t| = {radius}", self.index + 1)));
            }
        }
        Ok(out)
    }
}

/// Descent contour of one saddle at a given phase of `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentPath {
    /// Saddle label (1-based).
    pub saddle: usize,
    /// Phase of `eps`.
    pub arg_eps: f64,
    /// Half-paths for `w < 0` and `w > 0`; the contour runs from the end of
    /// the first to the end of the second.
    pub halves: [Vec<C64>; 2],
    /// Values of `(F - chi_i)/eps` (real, increasing) at the vertices.
    pub levels: [Vec<f64>; 2],
    /// Sign of the traversal direction relative to the principal amplitude
    /// branch at the current point.
    pub orientation: i8,
}

impl DescentPath {
    /// Valleys reached by the two halves.
    pub fn valleys(&self) -> [usize; 2] {
        [0, 1].map(|h| valley_index(*self.halves[h].last().expect("non-empty half"), self.arg_eps))
    }

    /// Smallest distance from the contour to `q`.
    pub fn distance_to(&self, q: C64) -> f64 {
        self.halves.iter().flatten().map(|t| (t - q).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// Descent contour through saddle `i` (1-based) at `arg eps = arg_eps`,
/// using the labels and amplitude branches of `frame`.
pub fn descent_path_in(frame: &Frame, i: usize, arg_eps: f64) -> Result<DescentPath, SaddleError> {
    let idx = check_label(i)?;
    let br = LevelBranch::new(frame, idx, arg_eps);
    let radius = t_max(frame.z, frame.params);
    let rot = Complex::from_polar(1.0, 0.5 * arg_eps);
    let mut halves: [Vec<C64>; 2] = [Vec::new(), Vec::new()];
    let mut levels: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (h, sign) in [-1.0f64, 1.0].into_iter().enumerate() {
        let dir = rot * sign;
        let gap = br.nearest_other(br.origin).1;
        let w0 = 1e-3 * gap;
        let t0 = br.start(dir * w0)?;
        halves[h].push(br.origin);
        levels[h].push(0.0);
        halves[h].push(t0);
        levels[h].push(w0 * w0);
        for (w, t) in br.run_out(t0, dir, w0, radius)? {
            halves[h].push(t);
            levels[h].push(w * w);
        }
    }
    let principal = (PI.sqrt() / crate::singulant::amplitude_denominator(frame.branches[idx].tau, frame.params).sqrt()
        - frame.branches[idx].amp0)
        .norm()
        < 1e-8 * frame.branches[idx].amp0.norm();
    Ok(DescentPath { saddle: i, arg_eps, halves, levels, orientation: if principal { 1 } else { -1 } })
}

/// Descent contour through saddle `i` at `z`, with labels continued from `z*`.
pub fn descent_path(i: usize, z: C64, arg_eps: f64, p: PhaseParams<f64>) -> Result<DescentPath, SaddleError> {
    let frame = frame_at(z, p, None)?;
    descent_path_in(&frame, i, arg_eps)
}

/// Connection record for an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyRecord {
    pub i: usize,
    pub j: usize,
    /// Whether saddle `j`'s contour enters the deformation of saddle `i`'s.
    pub adjacent: u8,
    /// Parity of the orientation: `S_ij = (-1)^gamma A_ij`.
    pub gamma: u8,
}

impl AdjacencyRecord {
    /// `(-1)^gamma A_ij`.
    pub fn stokes(&self) -> i64 {
        if self.adjacent == 0 {
            0
        } else if self.gamma == 1 {
            -1
        } else {
            1
        }
    }
}

/// Adjacency of the ordered pair `(i, j)` in the labels of `frame`.
///
/// At the critical phase `arg eps* = arg(chi_j - chi_i)` the descent contour
/// of saddle `i` runs into saddle `j`. Each half of saddle `i`'s contour is
/// traced at `arg eps* -+ PROBE_OFFSET`; a half whose end valley changes
/// across the critical phase while passing next to saddle `j` contributes
/// `omega * eta`, where `eta = -+1` labels the half and `omega = +-1`
/// records whether saddle `j`'s contour at `eps*`, in its own orientation,
/// starts in the valley reached below the critical phase.
pub fn adjacency_in(frame: &Frame, i: usize, j: usize) -> Result<AdjacencyRecord, SaddleError> {
    let (ii, jj) = (check_label(i)?, check_label(j)?);
    if ii == jj {
        return Err(SaddleError::InvalidInput("adjacency needs distinct saddles".into()));
    }
    let critical = frame.chi_diff(ii, jj).arg();
    let target = frame.saddle(jj);
    let near = 0.2f64.min(0.5 * (frame.saddle(ii) - target).norm());
    let radius = t_max(frame.z, frame.params);
    let mut total = 0i64;
    let mut own: Option<DescentPath> = None;
    for eta in [-1i64, 1] {
        let mut ends = [0usize; 2];
        let mut closest = [f64::INFINITY; 2];
        for (k, theta) in [critical - PROBE_OFFSET, critical + PROBE_OFFSET].into_iter().enumerate() {
            let br = LevelBranch::new(frame, ii, theta);
            let dir = Complex::from_polar(1.0, 0.5 * theta) * eta as f64;
            let w0 = 1e-3 * br.nearest_other(br.origin).1;
            let t0 = br.start(dir * w0)?;
            let pts = br.run_out(t0, dir, w0, radius)?;
            let last = pts.last().map(|p| p.1).unwrap_or(t0);
            ends[k] = valley_index(last, critical);
            closest[k] = pts.iter().map(|p| (p.1 - target).norm()).fold(f64::INFINITY, f64::min);
        }
        if ends[0] == ends[1] {
            continue;
        }
        if closest[0] > near || closest[1] > near {
            return Err(SaddleError::ProbeAmbiguity { i, j });
        }
        if own.is_none() {
            own = Some(descent_path_in(frame, j, critical)?);
        }
        let cj = own.as_ref().expect("traced above");
        let [v_start, v_end] = cj.valleys();
        let omega = if v_start == ends[0] && v_end == ends[1] {
            1
        } else if v_end == ends[0] && v_start == ends[1] {
            -1
        } else {
            return Err(SaddleError::ProbeAmbiguity { i, j });
        };
        total += omega * eta;
    }
    match total {
        0 => Ok(AdjacencyRecord { i, j, adjacent: 0, gamma: 0 }),
        1 => Ok(AdjacencyRecord { i, j, adjacent: 1, gamma: 0 }),
        -1 => Ok(AdjacencyRecord { i, j, adjacent: 1, gamma: 1 }),
        _ => Err(SaddleError::ProbeAmbiguity { i, j }),
    }
}

/// Adjacency of `(i, j)` at `z`, with labels continued from `z*`.
pub fn adjacency(i: usize, j: usize, z: C64, p: PhaseParams<f64>) -> Result<AdjacencyRecord, SaddleError> {
    let frame = frame_at(z, p, None)?;
    adjacency_in(&frame, i, j)
}

/// Stokes matrix from the adjacency of all ordered pairs in `frame`.
pub fn base_stokes_constants_in(frame: &Frame) -> Result<StokesMatrix<i64>, SaddleError> {
    let mut entries = Vec::new();
    for i in 1..=4 {
        for j in 1..=4 {
            if i != j {
                let r = adjacency_in(frame, i, j)?;
                entries.push((i, j, r.stokes()));
            }
        }
    }
    Ok(StokesMatrix::from_entries(4, &entries)?)
}

/// Stokes matrix at `z` from adjacency, with labels continued from `z*`.
pub fn base_stokes_constants(z: C64, p: PhaseParams<f64>) -> Result<StokesMatrix<i64>, SaddleError> {
    let frame = frame_at(z, p, None)?;
    base_stokes_constants_in(&frame)
}

/// Late-term coefficients `psi_n^{(i)}` for `n = 0..=n_max`, in the
/// amplitude branch of `frame`.
///
/// `psi_n = Gamma(n + 1/2) [u^{2n}] t'(u) / i`, with the Taylor coefficient
/// taken by the trapezoidal rule on the circle
/// `|u| = CIRCLE_FRACTION * sqrt(min_j |chi_j - chi_i|)`.
pub fn late_terms_in(frame: &Frame, i: usize, n_max: usize) -> Result<Vec<C64>, SaddleError> {
    let idx = check_label(i)?;
    let br = LevelBranch::new(frame, idx, 0.0);
    let nearest = (0..4).filter(|&k| k != idx).map(|k| frame.chi_diff(idx, k).norm()).fold(f64::INFINITY, f64::min);
    let r = CIRCLE_FRACTION * nearest.sqrt();
    let m = CIRCLE_NODES;
    let nodes: Vec<C64> = (0..m).map(|k| Complex::from_polar(r, 2.0 * PI * k as f64 / m as f64)).collect();
    let mut t = br.start(nodes[0])?;
    let t_first = t;
    let mut slopes = Vec::with_capacity(m);
    slopes.push(br.slope(t, nodes[0]));
    for k in 1..m {
        t = br.advance(t, nodes[k - 1], nodes[k])?;
        slopes.push(br.slope(t, nodes[k]));
    }
    let t_back = br.advance(t, nodes[m - 1], nodes[0])?;
    let mismatch = (t_back - t_first).norm();
    if mismatch > 1e-9 * (1.0 + t_first.norm()) {
        return Err(SaddleError::LoopTooWide { saddle: i, mismatch });
    }
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let order = 2 * n;
        let mut acc = Complex::new(0.0, 0.0);
        for (k, g) in slopes.iter().enumerate() {
            let angle = -2.0 * PI * ((order * k) % m) as f64 / m as f64;
            acc += g * Complex::from_polar(1.0, angle);
        }
        let coeff = acc / m as f64 / r.powi(order as i32);
        out.push(coeff * gamma_half(n) / C64::i());
    }
    Ok(out)
}

/// Late term `psi_n^{(i)}(z)`, with labels and branches continued from `z*`.
pub fn late_term(n: usize, i: usize, z: C64, p: PhaseParams<f64>) -> Result<C64, SaddleError> {
    let frame = frame_at(z, p, None)?;
    Ok(late_terms_in(&frame, i, n)?[n])
}

/// Estimate of a Stokes constant from late terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub i: usize,
    pub j: usize,
    pub value: C64,
    pub error: f64,
    pub n_max: usize,
}

/// Relative window agreement required by [`stokes_constant_limit_in`].
pub const LIMIT_TOLERANCE: f64 = 1e-2;

/// Richardson order used by [`stokes_constant_limit_in`].
pub const RICHARDSON_ORDER: usize = 6;

/// Polynomial extrapolation to `1/n -> 0` through the points `(1/n, v_n)`.
fn extrapolate(ns: &[usize], vs: &[C64]) -> C64 {
    let x: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let mut p = vs.to_vec();
    let m = p.len();
    for level in 1..m {
        for k in 0..m - level {
            p[k] = (p[k + 1] * x[k] - p[k] * x[k + level]) / (x[k] - x[k + level]);
        }
    }
    p[0]
}

/// Stokes constant `S_ij` from the late terms of saddle `i`:
/// `2 pi i psi_n^{(i)} (chi_j - chi_i)^n / (Gamma(n) psi_0^{(j)})`,
/// extrapolated in `1/n`. The estimate is accepted when two consecutive
/// extrapolation windows agree to [`LIMIT_TOLERANCE`]; otherwise a nearer
/// singularity with a nonzero constant dominates the late terms and the
/// nearest singulant is reported.
pub fn stokes_constant_limit_in(frame: &Frame, i: usize, j: usize, n_max: usize) -> Result<LimitEstimate, SaddleError> {
    let (ii, jj) = (check_label(i)?, check_label(j)?);
    if ii == jj {
        return Err(SaddleError::InvalidInput("limit needs distinct saddles".into()));
    }
    if n_max < 20 {
        return Err(SaddleError::InvalidInput(format!("n_max = {n_max} is below 20")));
    }
    let psi = late_terms_in(frame, i, n_max)?;
    let delta = frame.chi_diff(ii, jj);
    let amp_j = frame.branches[jj].amp0;
    let estimate = |n: usize| 2.0 * PI * C64::i() * psi[n] * delta.powu(n as u32) / (gamma_int(n) * amp_j);
    let k = RICHARDSON_ORDER;
    let window = |end: usize| {
        let ns: Vec<usize> = (end - k..=end).collect();
        let vs: Vec<C64> = ns.iter().map(|&n| estimate(n)).collect();
        extrapolate(&ns, &vs)
    };
    let value = window(n_max);
    let error = (value - window(n_max - 1)).norm();
    if !(error <= LIMIT_TOLERANCE * (1.0 + value.norm())) {
        let dist = |k: usize| frame.chi_diff(ii, k).norm();
        let dominant = (0..4).filter(|&k| k != ii).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).expect("three candidates");
        return Err(SaddleError::NonConvergence { i, j, dominant: dominant + 1 });
    }
    Ok(LimitEstimate { i, j, value, error, n_max })
}

/// [`stokes_constant_limit_in`] at `z` with labels continued from `z*`.
pub fn stokes_constant_limit(i: usize, j: usize, z: C64, p: PhaseParams<f64>, n_max: usize) -> Result<LimitEstimate, SaddleError> {
    let frame = frame_at(z, p, None)?;
    stokes_constant_limit_in(&frame, i, j, n_max)
}

/// Thimble integral `int exp(-(F - chi_i)/eps) dt` along the tilted contour
/// of one saddle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThimbleIntegral {
    pub saddle: usize,
    pub value: C64,
    pub error: f64,
    /// Valleys at the start and end of the contour.
    pub valleys: [usize; 2],
    /// Trapezoid step in the scaled variable at convergence.
    pub step: f64,
}

/// Options of the integral evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    /// Relative tolerance per thimble.
    pub tol: f64,
    /// Contour tilts for the independent decompositions.
    pub tilts: Vec<f64>,
    /// Initial trapezoid step in the scaled variable.
    pub initial_step: f64,
    /// Maximum number of step halvings.
    pub max_halvings: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { tol: 1e-12, tilts: QUADRATURE_TILTS.to_vec(), initial_step: 0.5, max_halvings: 9 }
    }
}

/// Trapezoid sum with step `h` in `s = w / sqrt(eps)`; also returns the
/// last node `w` and the points reached there on both sides.
fn thimble_sum(br: &LevelBranch, eps: f64, tilt: f64, h: f64) -> Result<(C64, f64, C64, C64), SaddleError> {
    let rot = Complex::from_polar(1.0, 0.5 * tilt);
    let s_max = (46.0 / tilt.cos()).sqrt();
    let k_max = (s_max / h).ceil() as usize;
    let scale = eps.sqrt();
    let weight = |s: f64| (-Complex::from_polar(1.0, tilt) * (s * s)).exp();
    let mut sum = br.slope0 * rot * scale;
    let mut ends = [br.origin; 2];
    for (side, sign) in [-1.0f64, 1.0].into_iter().enumerate() {
        let mut t = br.origin;
        let mut u_prev = Complex::new(0.0, 0.0);
        for k in 1..=k_max {
            let s = sign * k as f64 * h;
            let u = rot * (s * scale);
            t = if k == 1 { br.start(u)? } else { br.advance(t, u_prev, u)? };
            u_prev = u;
            sum += weight(s) * br.slope(t, u) * rot * scale;
        }
        ends[side] = t;
    }
    Ok((sum * h, k_max as f64 * h * scale, ends[0], ends[1]))
}

/// Integral over the contour of saddle `i` (1-based) tilted to `arg = tilt`,
/// refined by step halving until the relative change is below `opts.tol`.
pub fn thimble_integral(frame: &Frame, i: usize, eps: f64, tilt: f64, opts: &QuadratureOptions) -> Result<ThimbleIntegral, SaddleError> {
    let idx = check_label(i)?;
    let br = LevelBranch::new(frame, idx, tilt);
    let mut h = opts.initial_step;
    let (mut prev, _, _, _) = thimble_sum(&br, eps, tilt, h)?;
    for _ in 0..opts.max_halvings {
        h *= 0.5;
        let (cur, w_end, end_neg, end_pos) = thimble_sum(&br, eps, tilt, h)?;
        let error = (cur - prev).norm();
        if error <= opts.tol * cur.norm() {
            let radius = t_max(frame.z, frame.params);
            let rot = Complex::from_polar(1.0, 0.5 * tilt);
            let mut valleys = [0usize; 2];
            for (side, (sign, t)) in [(-1.0, end_neg), (1.0, end_pos)].into_iter().enumerate() {
                let tail = br.run_out(t, rot * sign, w_end, radius)?;
                let last = tail.last().map(|p| p.1).unwrap_or(t);
                valleys[side] = valley_index(last, tilt);
            }
            return Ok(ThimbleIntegral { saddle: i, value: cur, error, valleys, step: h });
        }
        prev = cur;
    }
    Err(SaddleError::QuadratureFailure(format!("thimble of saddle {i} did not converge at tilt {tilt}")))
}

/// Integer coefficients `n_i` with `sum n_i C_i = L`, where `C_i` runs from
/// valley `valleys[i][0]` to `valleys[i][1]` and `L` from valley 4 to 0.
pub fn valley_decomposition(valleys: &[[usize; 2]; 4]) -> Result<[i32; 4], SaddleError> {
    let mut prev: [Option<(usize, usize, i32)>; 5] = [None; 5];
    let mut seen = [false; 5];
    let mut queue = std::collections::VecDeque::from([4usize]);
    seen[4] = true;
    while let Some(v) = queue.pop_front() {
        for (e, [a, b]) in valleys.iter().enumerate() {
            let step = if *a == v { Some((*b, 1)) } else if *b == v { Some((*a, -1)) } else { None };
            if let Some((w, dir)) = step {
                if !seen[w] {
                    seen[w] = true;
                    prev[w] = Some((v, e, dir));
                    queue.push_back(w);
                }
            }
        }
    }
    let tree = valleys.iter().all(|[a, b]| a != b) && seen.iter().all(|&s| s);
    if !tree {
        return Err(SaddleError::QuadratureFailure(format!("descent contours {valleys:?} do not span the valleys")));
    }
    let mut coeffs = [0i32; 4];
    let mut v = 0usize;
    while v != 4 {
        let (u, e, dir) = prev[v].expect("reachable");
        coeffs[e] += dir;
        v = u;
    }
    Ok(coeffs)
}

/// One decomposition of the integral at a fixed contour tilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub tilt: f64,
    pub value: C64,
    pub error: f64,
    /// Thimble coefficients in the gauge of the frame's amplitude branches.
    pub coefficients: [i32; 4],
    pub thimbles: Vec<ThimbleIntegral>,
}

/// Numerical value of the integral with its error estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralValue {
    pub z: C64,
    pub eps: f64,
    pub value: C64,
    /// Estimated absolute error: the larger of the quadrature error and the
    /// spread between decompositions.
    pub error: f64,
    pub decompositions: Vec<Decomposition>,
}

impl IntegralValue {
    /// Estimated relative error.
    pub fn relative_error(&self) -> f64 {
        self.error / self.value.norm()
    }

    /// Largest relative spread between decompositions.
    pub fn spread(&self) -> f64 {
        let v = self.value.norm();
        self.decompositions.iter().map(|d| (d.value - self.value).norm() / v).fold(0.0, f64::max)
    }
}

/// Integral decomposed at one tilt.
pub fn decompose(frame: &Frame, eps: f64, tilt: f64, opts: &QuadratureOptions) -> Result<Decomposition, SaddleError> {
    let thimbles: Vec<ThimbleIntegral> = (1..=4).map(|i| thimble_integral(frame, i, eps, tilt, opts)).collect::<Result<_, _>>()?;
    let valleys: [[usize; 2]; 4] = std::array::from_fn(|k| thimbles[k].valleys);
    let coefficients = valley_decomposition(&valleys)?;
    let prefactor = 1.0 / (C64::i() * eps.powf(0.2));
    let mut value = Complex::new(0.0, 0.0);
    let mut error = 0.0;
    for (k, th) in thimbles.iter().enumerate() {
        if coefficients[k] == 0 {
            continue;
        }
        let weight = (-frame.branches[k].chi / eps).exp() * prefactor * coefficients[k] as f64;
        value += weight * th.value;
        error += weight.norm() * th.error;
    }
    if !value.is_finite() {
        return Err(SaddleError::QuadratureFailure("integral overflows double precision".into()));
    }
    Ok(Decomposition { tilt, value, error, coefficients, thimbles })
}

/// The integral `(1/(i eps^{1/5})) int exp(-F/eps) dt` in the labels and
/// branches of `frame`.
pub fn integrate_in(frame: &Frame, eps: f64, opts: &QuadratureOptions) -> Result<IntegralValue, SaddleError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SaddleError::InvalidInput(format!("eps = {eps} must be positive")));
    }
    if opts.tilts.is_empty() {
        return Err(SaddleError::InvalidInput("at least one contour tilt is needed".into()));
    }
    let decompositions: Vec<Decomposition> = opts.tilts.iter().map(|&t| decompose(frame, eps, t, opts)).collect::<Result<_, _>>()?;
    let value = decompositions[0].value;
    let quad = decompositions.iter().map(|d| d.error).fold(0.0, f64::max);
    let spread = decompositions.iter().map(|d| (d.value - value).norm()).fold(0.0, f64::max);
    Ok(IntegralValue { z: frame.z, eps, value, error: quad.max(spread), decompositions })
}

/// The swallowtail integral at `z`, with labels continued from `z*`.
pub fn integrate_swallowtail(z: C64, p: PhaseParams<f64>, eps: f64) -> Result<IntegralValue, SaddleError> {
    let frame = frame_at(z, p, None)?;
    integrate_in(&frame, eps, &QuadratureOptions::default())
}

/// How many terms of each asymptotic series enter the transseries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesOrder {
    /// Leading term `psi_0` only.
    Leading,
    /// Truncation at `floor(min_j |chi_j - chi_i| / eps)` terms.
    Optimal,
}

/// Global normalization `c` of the transseries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub c: C64,
    pub eps: f64,
    /// Calibration point, if calibrated.
    pub anchor: Option<C64>,
}

impl Normalization {
    /// `c = -eps^{3/10}`: the saddle-point value in the reference gauge,
    /// where the original contour is minus the thimble of saddle 1 while
    /// `sigma_1 = beta_1`.
    pub fn analytic(eps: f64) -> Self {
        Self { c: Complex::new(-eps.powf(0.3), 0.0), eps, anchor: None }
    }
}

/// Number of terms of series `i` kept under `order`.
pub fn series_terms(frame: &Frame, i: usize, eps: f64, order: SeriesOrder) -> usize {
    match order {
        SeriesOrder::Leading => 1,
        SeriesOrder::Optimal => {
            let idx = i - 1;
            let nearest = (0..4).filter(|&k| k != idx).map(|k| frame.chi_diff(idx, k).norm()).fold(f64::INFINITY, f64::min);
            ((nearest / eps).floor() as usize).clamp(1, 60)
        }
    }
}

/// Series `sum_{n < N} psi_n^{(i)} eps^n` under `order`.
pub fn truncated_series(frame: &Frame, i: usize, eps: f64, order: SeriesOrder) -> Result<C64, SaddleError> {
    let n = series_terms(frame, i, eps, order);
    if n == 1 {
        return Ok(frame.branches[check_label(i)?].amp0);
    }
    let psi = late_terms_in(frame, i, n - 1)?;
    Ok(psi.iter().rev().fold(Complex::new(0.0, 0.0), |acc, c| acc * eps + c))
}

/// Unnormalized transseries terms `sigma_i(beta) S_i(eps) e^{-chi_i/eps}`.
pub fn transseries_terms<R: Coeff>(state: &ConnectionState<R>, beta: &[C64], eps: f64, order: SeriesOrder) -> Result<[C64; 4], SaddleError> {
    let frame = state.frame.ok_or_else(|| SaddleError::InvalidInput("state carries no frame".into()))?;
    if beta.len() != state.sigma.len() || state.sigma.len() != 4 {
        return Err(SaddleError::InvalidInput(format!("expected 4 beta values, got {}", beta.len())));
    }
    let mut out = [Complex::new(0.0, 0.0); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let s = state.sigma[k].eval_complex(beta);
        if s.norm() == 0.0 {
            continue;
        }
        let series = truncated_series(&frame, k + 1, eps, order)?;
        *slot = s * series * (-frame.branches[k].chi / eps).exp();
    }
    Ok(out)
}

/// Calibrates the normalization at the state's point against the integral.
/// The nonzero terms there must be dominated by one by at least `e^5`.
pub fn calibrate<R: Coeff>(anchor: &ConnectionState<R>, beta: &[C64], eps: f64, order: SeriesOrder) -> Result<Normalization, SaddleError> {
    let terms = transseries_terms(anchor, beta, eps, order)?;
    let mut mags: Vec<f64> = terms.iter().map(|t| t.norm()).filter(|m| *m > 0.0).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    if mags.is_empty() {
        return Err(SaddleError::AnchorDegenerate { ratio: 0.0 });
    }
    if mags.len() > 1 && mags[0] < ANCHOR_DOMINANCE * mags[1] {
        return Err(SaddleError::AnchorDegenerate { ratio: mags[0] / mags[1] });
    }
    let frame = anchor.frame.expect("checked by transseries_terms");
    let integral = integrate_in(&frame, eps, &QuadratureOptions::default())?;
    let sum: C64 = terms.iter().sum();
    Ok(Normalization { c: integral.value / sum, eps, anchor: Some(anchor.at) })
}

/// `c * sum_i sigma_i(beta) S_i(eps) e^{-chi_i/eps}` at the state's point.
pub fn transseries_eval<R: Coeff>(state: &ConnectionState<R>, beta: &[C64], norm: &Normalization, order: SeriesOrder) -> Result<C64, SaddleError> {
    let terms = transseries_terms(state, beta, norm.eps, order)?;
    Ok(norm.c * terms.iter().sum::<C64>())
}

/// Coefficient of exponential `j` (1-based) left after subtracting every
/// other term of the transseries from the integral.
pub fn extract_coefficient<R: Coeff>(
    state: &ConnectionState<R>,
    beta: &[C64],
    j: usize,
    norm: &Normalization,
    order: SeriesOrder,
) -> Result<C64, SaddleError> {
    let jj = check_label(j)?;
    let frame = state.frame.ok_or_else(|| SaddleError::InvalidInput("state carries no frame".into()))?;
    let integral = integrate_in(&frame, norm.eps, &QuadratureOptions::default())?;
    let terms = transseries_terms(state, beta, norm.eps, order)?;
    let others: C64 = terms.iter().enumerate().filter(|(k, _)| *k != jj).map(|(_, t)| t).sum();
    let unit = truncated_series(&frame, j, norm.eps, order)? * (-frame.branches[jj].chi / norm.eps).exp();
    Ok((integral.value / norm.c - others) / unit)
}

/// Coefficient extraction on both sides of an ordinary Stokes line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpReport {
    pub i: usize,
    pub j: usize,
    /// Point of the traced curve at the middle of the transect.
    pub crossing: C64,
    /// `Re(chi_j - chi_i)` at the crossing.
    pub re_gap: f64,
    pub before_point: C64,
    pub after_point: C64,
    /// Extracted coefficient of exponential `j` before and after.
    pub before: C64,
    pub after: C64,
    pub jump: C64,
    /// `S_ij sigma_i(beta)` on the incoming side.
    pub expected: C64,
}

impl JumpReport {
    /// `|jump - expected| / |expected|`.
    pub fn relative_error(&self) -> f64 {
        (self.jump - self.expected).norm() / self.expected.norm()
    }
}

/// Half-width of a jump transect in units of the Stokes smoothing width
/// `sqrt(2 eps Re(chi_j - chi_i))`.
pub const TRANSECT_WIDTHS: f64 = 2.0;

/// Extracts the jump of the coefficient of exponential `j` across the traced
/// line `l_{i>j}`.
///
/// The transect crosses the curve where `Re(chi_j - chi_i)` is closest to
/// `re_gap`, along the direction in which `Im(chi_j - chi_i)` increases, with
/// half-width [`TRANSECT_WIDTHS`] smoothing widths, clear of special points
/// and crossing points. The state is transported from `base` to the start of
/// the transect and then across it; `l_{i>j}` must be crossed once and no
/// other line may change `sigma_j`. On each side every other term,
/// optimally truncated, is subtracted from the integral.
#[allow(clippy::too_many_arguments)]
pub fn subdominant_jump<R: Coeff>(
    graph: &crate::geometry::StokesGraph,
    base: &ConnectionState<R>,
    beta: &[C64],
    i: usize,
    j: usize,
    re_gap: f64,
    norm: &Normalization,
) -> Result<JumpReport, SaddleError> {
    use crate::geometry::CurveKind;
    use crate::transport::{region_tables, transport, Automorphism, Probe, Route};
    let (ii, jj) = (check_label(i)?, check_label(j)?);
    let eps = norm.eps;
    let keep_out = 20.0 * graph.safe_distance();
    let mut obstacles = graph.special_points();
    obstacles.extend(graph.crossings.iter().map(|c| c.z()));
    let mut best: Option<(f64, Frame)> = None;
    for c in &graph.curves {
        if c.kind != (CurveKind::Ordinary { i: i as u8, j: j as u8 }) {
            continue;
        }
        for v in c.vertices.iter().skip(1) {
            let Ok(f) = frame_at(v.z, graph.params, None) else { continue };
            let d = f.chi_diff(ii, jj);
            if d.re <= 0.0 {
                continue;
            }
            let dtau = f.branches[jj].tau - f.branches[ii].tau;
            let offset = C64::i() * dtau.conj() / dtau.norm() * (TRANSECT_WIDTHS * (2.0 * eps * d.re).sqrt() / dtau.norm());
            let (za, zb) = (f.z - offset, f.z + offset);
            let clear = obstacles.iter().all(|q| segment_distance(*q, za, zb) > keep_out);
            let score = (d.re - re_gap).abs();
            if clear && graph.domain.contains(za) && graph.domain.contains(zb) && best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, f));
            }
        }
    }
    let (_, fc) = best.ok_or_else(|| SaddleError::InvalidInput(format!("no usable point on l{i}>{j}")))?;
    let zc = fc.z;
    let dtau = fc.branches[jj].tau - fc.branches[ii].tau;
    let gap = fc.chi_diff(ii, jj).re;
    let normal = C64::i() * dtau.conj() / dtau.norm();
    let half = TRANSECT_WIDTHS * (2.0 * eps * gap).sqrt() / dtau.norm();
    let (za, zb) = (zc - normal * half, zc + normal * half);
    let probe = Probe { label: "transect".into(), z: za, route: Route::Straight };
    let tables = region_tables(graph, base, &[probe])?;
    let state_a = tables.states.into_iter().next().expect("one probe").1;
    let state_b = transport(state_a.rebased(), &[za, zb], graph)?;
    let seen: Vec<Automorphism> = state_b.log.iter().map(|r| r.automorphism).collect();
    let own = seen.iter().filter(|a| **a == Automorphism::Stokes { i, j, direction: 1 }).count();
    let interfering = seen.iter().any(|a| match *a {
        Automorphism::Stokes { i: a_i, j: a_j, .. } => a_j == j && a_i != i,
        Automorphism::Higher { .. } => false,
    });
    if own != 1 || interfering {
        return Err(SaddleError::InvalidInput(format!("transect at {zc} crosses {seen:?}, expected l{i}>{j} once")));
    }
    let before = extract_coefficient(&state_a, beta, j, norm, SeriesOrder::Optimal)?;
    let after = extract_coefficient(&state_b, beta, j, norm, SeriesOrder::Optimal)?;
    let s_ij = state_a.stokes.get(i, j).to_f64().unwrap_or(f64::NAN);
    let expected = state_a.sigma[ii].eval_complex(beta) * s_ij;
    Ok(JumpReport { i, j, crossing: zc, re_gap: gap, before_point: za, after_point: zb, before, after, jump: after - before, expected })
}

fn segment_distance(q: C64, a: C64, b: C64) -> f64 {
    let d = b - a;
    let t = (((q - a) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0);
    (a + d * t - q).norm()
}

/// Leading far-field form `-i sqrt(pi) / sqrt(2 5^{1/4} alpha^3 z^{3/4})
/// exp(-4 alpha z^{5/4} / (5^{5/4} eps))` with `alpha = e^{3 i pi / 4}`,
/// principal branches throughout.
pub fn far_field_leading(z: C64, eps: f64) -> C64 {
    let alpha = Complex::from_polar(1.0, 0.75 * PI);
    let radicand = 2.0 * 5f64.powf(0.25) * alpha.powu(3) * z.powf(0.75);
    let exponent = -4.0 * alpha * z.powf(1.25) / (5f64.powf(1.25) * eps);
    -C64::i() * PI.sqrt() / radicand.sqrt() * exponent.exp()
}

/// Far-field singulant `4 alpha z^{5/4} / 5^{5/4}`.
pub fn far_field_singulant(z: C64) -> C64 {
    let alpha = Complex::from_polar(1.0, 0.75 * PI);
    4.0 * alpha * z.powf(1.25) / 5f64.powf(1.25)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::singulant::{canonical_frame, REFERENCE_PARAMS};

    fn base_frame() -> Frame {
        canonical_frame(REFERENCE_PARAMS).unwrap()
    }

    #[test]
    fn gamma_recurrences() {
        assert!((gamma_half(0) - PI.sqrt()).abs() < 1e-15);
        assert!((gamma_half(3) - 15.0 / 8.0 * PI.sqrt()).abs() < 1e-14);
        assert_eq!(gamma_int(1), 1.0);
        assert_eq!(gamma_int(6), 120.0);
    }

    #[test]
    fn valley_decomposition_follows_tree_path() {
        let v = [[4, 3], [3, 1], [0, 1], [2, 3]];
        assert_eq!(valley_decomposition(&v).unwrap(), [1, 1, -1, 0]);
        let cyclic = [[4, 3], [3, 4], [0, 1], [2, 3]];
        assert!(valley_decomposition(&cyclic).is_err());
    }

    #[test]
    fn descent_paths_stay_on_the_level_set() {
        let f = base_frame();
        for i in 1..=4 {
            for theta in [0.0, 0.7] {
                let d = descent_path_in(&f, i, theta).unwrap();
                let chi = f.branches[i - 1].chi;
                let eps_dir = Complex::from_polar(1.0, theta);
                for (h, lv) in d.halves.iter().zip(&d.levels) {
                    for w in lv.windows(2) {
                        assert!(w[1] > w[0]);
                    }
                    for t in h {
                        let g = (phase(*t, f.z, f.params) - chi) / eps_dir;
                        assert!(g.im.abs() <= 1e-10 * (1.0 + g.norm()), "saddle {i}: {g}");
                        assert!(g.re >= -1e-12);
                    }
                }
                let [a, b] = d.valleys();
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn descent_valleys_at_base_point() {
        let f = base_frame();
        let golden = [[0, 4], [4, 1], [2, 1], [3, 1]];
        for (i, g) in (1..=4).zip(golden) {
            assert_eq!(descent_path_in(&f, i, 0.0).unwrap().valleys(), g, "saddle {i}");
        }
    }

    #[test]
    fn original_contour_sectors_are_valleys_four_and_zero() {
        let lower = Complex::from_polar(50.0, -0.2 * PI);
        let upper = Complex::from_polar(50.0, 0.2 * PI);
        assert_eq!(valley_index(lower, 0.0), 4);
        assert_eq!(valley_index(upper, 0.0), 0);
    }

    #[test]
    fn adjacency_reproduces_base_constants() {
        let f = base_frame();
        let s = base_stokes_constants_in(&f).unwrap();
        assert_eq!(s, StokesMatrix::base());
        let r = adjacency_in(&f, 1, 3).unwrap();
        assert_eq!((r.adjacent, r.stokes()), (0, 0));
        let r = adjacency_in(&f, 1, 2).unwrap();
        assert_eq!((r.adjacent, r.gamma, r.stokes()), (1, 1, -1));
        for i in 1..=4 {
            assert_eq!(s.get(i, i), 0);
        }
    }

    #[test]
    fn region_c5_has_nonzero_s13() {
        let z = Complex::new(5.176963, 0.0) + Complex::from_polar(0.03, 30f64.to_radians());
        let s = base_stokes_constants(z, REFERENCE_PARAMS).unwrap();
        assert_eq!(s.get(1, 3), -1);
    }

    #[test]
    fn zeroth_late_term_matches_closed_form() {
        let f = base_frame();
        for i in 1..=4 {
            let lt = late_terms_in(&f, i, 0).unwrap();
            let amp = f.branches[i - 1].amp0;
            assert!((lt[0] - amp).norm() <= 1e-6 * amp.norm(), "saddle {i}");
        }
    }

    #[test]
    fn late_term_ratio_follows_nearest_singulant() {
        let f = base_frame();
        let lt = late_terms_in(&f, 1, 30).unwrap();
        let gap = f.chi_diff(0, 1).norm();
        assert!((gap - 0.718).abs() < 1e-3);
        let n = 29;
        let ratio = (lt[n + 1] / lt[n]).norm() / (n as f64 / gap);
        assert!((ratio - 1.0).abs() < 1e-3, "ratio {ratio}");
    }

    #[test]
    fn limit_recovers_nearest_stokes_constant() {
        let f = base_frame();
        let e = stokes_constant_limit_in(&f, 1, 2, 40).unwrap();
        assert!((e.value + 1.0).norm() < 1e-2, "{e:?}");
        assert!(matches!(stokes_constant_limit_in(&f, 1, 3, 40), Err(SaddleError::NonConvergence { dominant: 2, .. })));
        assert!(stokes_constant_limit_in(&f, 1, 2, 19).is_err());
    }

    #[test]
    fn limit_in_region_a1() {
        let e = stokes_constant_limit(3, 4, Complex::new(1.0, -1.0), REFERENCE_PARAMS, 30).unwrap();
        assert!((e.value - 1.0).norm() < 1e-2, "{e:?}");
    }

    #[test]
    fn geometric_and_limit_oracles_agree() {
        let f = base_frame();
        let s = base_stokes_constants_in(&f).unwrap();
        let mut converged = 0;
        for i in 1..=4 {
            for j in (1..=4).filter(|&j| j != i) {
                if let Ok(e) = stokes_constant_limit_in(&f, i, j, 30) {
                    assert!((e.value - s.get(i, j) as f64).norm() < 1e-2, "({i},{j}) {e:?}");
                    converged += 1;
                }
            }
        }
        assert!(converged >= 2);
    }

    #[test]
    fn integral_decompositions_agree() {
        let f = base_frame();
        let v = integrate_in(&f, 0.1, &QuadratureOptions::default()).unwrap();
        assert!(v.spread() <= 1e-8 * v.value.norm(), "spread {}", v.spread());
        assert!(v.relative_error() <= 1e-9);
        assert_eq!(v.decompositions[0].coefficients, [-1, 0, 0, 0]);
    }

    #[test]
    fn quadrature_halving_converges() {
        let f = base_frame();
        let opts = QuadratureOptions::default();
        let fine = thimble_integral(&f, 1, 0.1, 0.15, &opts).unwrap();
        let coarse = |h: f64| {
            let o = QuadratureOptions { initial_step: 2.0 * h, max_halvings: 1, tol: f64::INFINITY, ..opts.clone() };
            thimble_integral(&f, 1, 0.1, 0.15, &o).unwrap().value
        };
        let e1 = (coarse(1.6) - fine.value).norm();
        let e2 = (coarse(0.8) - fine.value).norm();
        assert!(e1 >= 4.0 * e2, "{e1} {e2}");
    }

    #[test]
    fn integral_is_continuous_across_a_stokes_line() {
        let p = REFERENCE_PARAMS;
        let centre = Complex::new(4.5185, 1.0829);
        let values: Vec<C64> = (-2..=2)
            .map(|k| integrate_swallowtail(centre + Complex::new(0.0, 1e-4 * k as f64), p, 0.1).unwrap().value)
            .collect();
        for w in values.windows(2) {
            assert!((w[1] - w[0]).norm() <= 1e-2 * w[0].norm());
        }
    }

    #[test]
    fn calibration_is_exact_at_the_anchor() {
        let base: ConnectionState<i64> = ConnectionState::base(REFERENCE_PARAMS).unwrap();
        let beta = [Complex::new(1.0, 0.0), C64::default(), C64::default(), C64::default()];
        let norm = calibrate(&base, &beta, 0.1, SeriesOrder::Optimal).unwrap();
        let ts = transseries_eval(&base, &beta, &norm, SeriesOrder::Optimal).unwrap();
        let v = integrate_swallowtail(base.at, REFERENCE_PARAMS, 0.1).unwrap().value;
        assert!((ts - v).norm() <= 1e-12 * v.norm());
        assert!((norm.c / Normalization::analytic(0.1).c - 1.0).norm() < 1e-3);
    }

    #[test]
    fn degenerate_anchor_is_rejected() {
        let base: ConnectionState<i64> = ConnectionState::base(REFERENCE_PARAMS).unwrap();
        let beta = [Complex::new(1.0, 0.0), Complex::new(1.0, 0.0), C64::default(), C64::default()];
        assert!(matches!(calibrate(&base, &beta, 10.0, SeriesOrder::Leading), Err(SaddleError::AnchorDegenerate { .. })));
    }

    #[test]
    fn far_field_matches_exact_term() {
        let z = Complex::from_polar(5.0, -0.75 * PI);
        let eps = 0.1;
        let f = frame_at(z, REFERENCE_PARAMS, None).unwrap();
        let v = integrate_in(&f, eps, &QuadratureOptions::default()).unwrap();
        let b = &f.branches[0];
        let term = Normalization::analytic(eps).c * b.amp0 * (-b.chi / eps).exp();
        assert!((v.value - term).norm() <= 5.0 * eps * v.value.norm());
    }

    #[test]
    fn invalid_labels_are_rejected() {
        let f = base_frame();
        assert!(matches!(descent_path_in(&f, 0, 0.0), Err(SaddleError::InvalidInput(_))));
        assert!(matches!(late_terms_in(&f, 5, 3), Err(SaddleError::InvalidInput(_))));
    }
}
