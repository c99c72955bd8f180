//! Saddles, singulants, leading amplitudes and special points of the
//! swallowtail phase `F(t, z) = -(t^5 - a t^3 - i b t^2 + z t)`.
//!
//! The integrand is `exp(-F/eps)`. Its saddles are `t_i = -tau_i`, where
//! `tau` solves `5 tau^4 - 3 a tau^2 + 2 i b tau + z = 0`, and the singulant
//! of branch `i` is `chi_i = F(t_i, z)`.
//!
//! Branch labels are not intrinsic. They are fixed once at the reference
//! point `z* = 3 + 0.5i` and carried elsewhere by continuation.

use crate::poly;
use crate::scalar::{cx, i_unit, sqrt_near, Cx, Real};
use num_complex::Complex;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the singulant layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SingulantError {
    /// Two saddle roots are too close to be ordered reliably.
    #[error("saddle roots nearly coincide at z = {re}+{im}i (gap {gap:e})")]
    RootConditioning { re: f64, im: f64, gap: f64 },
    /// Nearest-root matching between two frames is not a stable bijection.
    #[error("label matching is ambiguous at z = {re}+{im}i")]
    LabelAmbiguity { re: f64, im: f64 },
    /// Continuation step collapsed, which happens when a path hits a turning point.
    #[error("continuation stalled near a turning point at z = {re}+{im}i")]
    PathThroughTurningPoint { re: f64, im: f64 },
    /// The virtual-turning-point seed grid missed solutions.
    #[error("virtual turning point search found {found} of {expected} points")]
    SeedExhaustion { found: usize, expected: usize },
    /// Physical rescaling needs a nonzero first coordinate.
    #[error("x1 must be nonzero for the physical rescaling")]
    ZeroX1,
    /// Root finder failure.
    #[error(transparent)]
    Poly(#[from] poly::PolyError),
}

/// Shape parameters `(a, b)` of the phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> PhaseParams<T> {
    /// Creates a parameter pair.
    pub fn new(a: T, b: T) -> Self {
        Self { a, b }
    }

    /// Converts to `f64` parameters.
    pub fn to_f64(self) -> PhaseParams<f64> {
        PhaseParams::new(self.a.to_f64_lossy(), self.b.to_f64_lossy())
    }
}

/// Parameter pair whose reference-frame singulants are the tabulated ones.
pub const REFERENCE_PARAMS: PhaseParams<f64> = PhaseParams { a: 3.0, b: 1.0 };

/// Reference point where branch labels are defined.
pub const Z_STAR: (f64, f64) = (3.0, 0.5);

/// Singulant values at `z*` (4 decimal places) that define labels 1..4.
pub const REFERENCE_CHI: [(f64, f64); 4] = [
    (-1.0464, 0.7948),
    (-1.1944, 0.0920),
    (1.2212, 2.0196),
    (1.0196, 0.6936),
];

/// Orientation of each steepest-descent contour through the saddles at `z*`,
/// relative to the principal square root in the leading amplitude.
///
/// This fixes the sign convention of the amplitudes and therefore of the
/// Stokes constants (`S_ij -> s_i s_j S_ij` under a change).
pub const REFERENCE_ORIENTATION: [i8; 4] = [-1, 1, 1, 1];

/// The reference point `z*` as a complex number.
pub fn z_star<T: Real>() -> Cx<T> {
    cx(Z_STAR.0, Z_STAR.1)
}

/// Complex parameters used internally by homotopies.
#[derive(Debug, Clone, Copy)]
struct CParams<T> {
    a: Cx<T>,
    b: Cx<T>,
}

impl<T: Real> CParams<T> {
    fn from_real(p: PhaseParams<T>) -> Self {
        Self {
            a: Complex::new(p.a, T::zero()),
            b: Complex::new(p.b, T::zero()),
        }
    }
}

/// `F(t, z) = -(t^5 - a t^3 - i b t^2 + z t)`.
pub fn phase<T: Real>(t: Cx<T>, z: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    let t2 = t * t;
    -(t2 * t2 * t - t2 * t * p.a - i * t2 * p.b + z * t)
}

/// `dF/dt`.
pub fn phase_dt<T: Real>(t: Cx<T>, z: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    let t2 = t * t;
    -(t2 * t2 * T::lit(5.0) - t2 * p.a * T::lit(3.0) - i * t * p.b * T::lit(2.0) + z)
}

/// `d^2F/dt^2`.
pub fn phase_dtt<T: Real>(t: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    -(t * t * t * T::lit(20.0) - t * p.a * T::lit(6.0) - i * p.b * T::lit(2.0))
}

fn quartic_coeffs<T: Real>(z: Cx<T>, p: CParams<T>) -> [Cx<T>; 5] {
    let i = i_unit::<T>();
    [
        z,
        i * p.b * T::lit(2.0),
        -p.a * T::lit(3.0),
        Cx::new(T::zero(), T::zero()),
        Cx::new(T::lit(5.0), T::zero()),
    ]
}

/// Residual of the saddle quartic `5 tau^4 - 3 a tau^2 + 2 i b tau + z`.
pub fn quartic_residual<T: Real>(tau: Cx<T>, z: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    poly::eval(&quartic_coeffs(z, CParams::from_real(p)), tau)
}

/// `d/dtau` of the saddle quartic, `20 tau^3 - 6 a tau + 2 i b`.
fn quartic_dtau<T: Real>(tau: Cx<T>, p: CParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    tau * tau * tau * T::lit(20.0) - tau * p.a * T::lit(6.0) + i * p.b * T::lit(2.0)
}

/// The four roots `tau` of the saddle quartic, Newton-polished and sorted
/// lexicographically by `(re, im)`.
///
/// Fails with [`SingulantError::RootConditioning`] when two roots are within
/// `1e-9`, where an unlabelled ordering is meaningless.
pub fn saddle_roots<T: Real>(z: Cx<T>, p: PhaseParams<T>) -> Result<[Cx<T>; 4], SingulantError> {
    let mut r = raw_roots(z, CParams::from_real(p))?;
    r.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    let gap = min_gap(&r);
    if gap < coincidence_tol::<T>() {
        return Err(SingulantError::RootConditioning {
            re: z.re.to_f64_lossy(),
            im: z.im.to_f64_lossy(),
            gap: gap.to_f64_lossy(),
        });
    }
    Ok(r)
}

/// The four saddle roots at `z` ordered to lie closest to `reference`.
///
/// Unlike [`saddle_roots`] this accepts coincident roots, so it can label the
/// saddles exactly at a turning point.
pub fn saddle_roots_near<T: Real>(z: Cx<T>, p: PhaseParams<T>, reference: &[Cx<T>; 4]) -> Result<[Cx<T>; 4], SingulantError> {
    let r = raw_roots(z, CParams::from_real(p))?;
    let cost = |perm: &[usize; 4]| perm.iter().enumerate().fold(T::zero(), |acc, (k, &m)| acc + (r[m] - reference[k]).norm());
    let best = permutations4()
        .into_iter()
        .min_by(|x, y| cost(x).partial_cmp(&cost(y)).unwrap_or(std::cmp::Ordering::Equal))
        .expect("24 permutations");
    Ok(best.map(|m| r[m]))
}

fn coincidence_tol<T: Real>() -> T {
    T::lit(1e-9).max(T::sqrt_eps() * T::lit(10.0))
}

fn raw_roots<T: Real>(z: Cx<T>, p: CParams<T>) -> Result<[Cx<T>; 4], SingulantError> {
    let c = quartic_coeffs(z, p);
    let v = poly::roots(&c)?;
    let mut out = [Cx::new(T::zero(), T::zero()); 4];
    for (k, r) in v.into_iter().enumerate() {
        out[k] = r;
    }
    Ok(out)
}

fn min_gap<T: Real>(r: &[Cx<T>; 4]) -> T {
    let mut g = T::infinity();
    for i in 0..4 {
        for j in (i + 1)..4 {
            g = g.min((r[i] - r[j]).norm());
        }
    }
    g
}

/// Closed-form singulant `-(2a/5) tau^3 + (3ib/5) tau^2 + (4z/5) tau`.
pub fn singulant<T: Real>(tau: Cx<T>, z: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    let tau2 = tau * tau;
    tau2 * tau * (-p.a * T::lit(0.4)) + i * tau2 * (p.b * T::lit(0.6)) + z * tau * T::lit(0.8)
}

/// `chi(tau_j) - chi(tau_i)` in factored form.
pub fn chi_difference<T: Real>(tau_i: Cx<T>, tau_j: Cx<T>, z: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    let quad = tau_j * tau_j + tau_i * tau_j + tau_i * tau_i;
    let bracket = quad * (-p.a * T::lit(0.4)) + i * (tau_i + tau_j) * (p.b * T::lit(0.6)) + z * T::lit(0.8);
    (tau_j - tau_i) * bracket
}

/// Denominator `D = -10 tau^3 + 3 a tau - i b` of the leading amplitude
/// `psi_0 = sqrt(pi) / sqrt(D)`.
pub fn amplitude_denominator<T: Real>(tau: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    tau * tau * tau * T::lit(-10.0) + tau * (p.a * T::lit(3.0)) - i * p.b
}

/// One labelled branch of the transseries at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch<T> {
    /// Label in `1..=4`.
    pub label: u8,
    /// `tau_i = chi_i'(z)`; the saddle is at `t = -tau_i`.
    pub tau: Cx<T>,
    /// Singulant `chi_i(z)`.
    pub chi: Cx<T>,
    /// Leading amplitude `psi_0^{(i)}(z)` on the continued branch.
    pub amp0: Cx<T>,
    /// Prefactor exponent `alpha_i` (common to all branches).
    pub alpha: Rational64,
}

/// Common prefactor exponent: the integral normalization carries `eps^{3/10}`.
pub fn common_alpha() -> Rational64 {
    Rational64::new(-3, 10)
}

/// The four labelled branches at one point `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingulantFrame<T> {
    pub z: Cx<T>,
    pub params: PhaseParams<T>,
    /// Branches in label order (index `k` holds label `k + 1`).
    pub branches: [Branch<T>; 4],
}

impl<T: Real> SingulantFrame<T> {
    /// The four `tau` values in label order.
    pub fn taus(&self) -> [Cx<T>; 4] {
        self.branches.map(|b| b.tau)
    }

    /// The four singulants in label order.
    pub fn chis(&self) -> [Cx<T>; 4] {
        self.branches.map(|b| b.chi)
    }

    /// The four leading amplitudes in label order.
    pub fn amps(&self) -> [Cx<T>; 4] {
        self.branches.map(|b| b.amp0)
    }

    /// Saddle location `t_i = -tau_i` for the 0-based branch index.
    pub fn saddle(&self, k: usize) -> Cx<T> {
        -self.branches[k].tau
    }

    /// Smallest pairwise distance between the `tau` values.
    pub fn root_gap(&self) -> T {
        min_gap(&self.taus())
    }

    /// Frame built from already-labelled roots, with principal-branch
    /// amplitudes. Used where only `tau` and `chi` matter.
    pub fn from_taus(z: Cx<T>, p: PhaseParams<T>, taus: [Cx<T>; 4]) -> Self {
        let sq = taus.map(|t| amplitude_denominator(t, p).sqrt());
        Self::from_parts(z, p, taus, sq)
    }

    /// `chi_j - chi_i` for 0-based indices, evaluated in factored form so it
    /// keeps full relative accuracy when the two singulants nearly coincide.
    pub fn chi_diff(&self, i: usize, j: usize) -> Cx<T> {
        chi_difference(self.branches[i].tau, self.branches[j].tau, self.z, self.params)
    }

    fn from_parts(z: Cx<T>, p: PhaseParams<T>, taus: [Cx<T>; 4], roots_d: [Cx<T>; 4]) -> Self {
        let sqrt_pi = T::PI().sqrt();
        let branches = std::array::from_fn(|k| Branch {
            label: (k + 1) as u8,
            tau: taus[k],
            chi: singulant(taus[k], z, p),
            amp0: Complex::new(sqrt_pi, T::zero()) / roots_d[k],
            alpha: common_alpha(),
        });
        Self { z, params: p, branches }
    }

    /// Square roots of the amplitude denominators on the carried branch.
    fn sqrt_denominators(&self) -> [Cx<T>; 4] {
        let sqrt_pi = T::PI().sqrt();
        self.branches.map(|b| Complex::new(sqrt_pi, T::zero()) / b.amp0)
    }
}

/// Tries to move a frame to `z_new` in one step, enforcing label stability.
fn step_frame<T: Real>(prev: &SingulantFrame<T>, z_new: Cx<T>) -> Option<SingulantFrame<T>> {
    let p = prev.params;
    let cp = CParams::from_real(p);
    let taus_prev = prev.taus();
    let gap = min_gap(&taus_prev);
    let dz = z_new - prev.z;
    let tol = T::epsilon() * T::lit(64.0);
    let mut taus = taus_prev;
    for k in 0..4 {
        let d = quartic_dtau(taus_prev[k], cp);
        if d.norm() == T::zero() {
            return None;
        }
        let mut t = taus_prev[k] - dz / d;
        let mut converged = false;
        for _ in 0..12 {
            let f = poly::eval(&quartic_coeffs(z_new, cp), t);
            let df = quartic_dtau(t, cp);
            if df.norm() == T::zero() {
                return None;
            }
            let step = f / df;
            t = t - step;
            if step.norm() <= tol * (T::one() + t.norm()) {
                converged = true;
                break;
            }
        }
        if !converged {
            let f = poly::eval(&quartic_coeffs(z_new, cp), t);
            let scale = T::one() + z_new.norm();
            if f.norm() > T::sqrt_eps() * scale * T::lit(1e-4) {
                return None;
            }
        }
        if (t - taus_prev[k]).norm() >= gap * T::lit(0.5) {
            return None;
        }
        taus[k] = t;
    }
    let new_gap = min_gap(&taus);
    if !(new_gap > gap * T::lit(0.25)) {
        return None;
    }
    let sq_prev = prev.sqrt_denominators();
    let sq: [Cx<T>; 4] =
        std::array::from_fn(|k| sqrt_near(amplitude_denominator(taus[k], p), sq_prev[k]));
    Some(SingulantFrame::from_parts(z_new, p, taus, sq))
}

/// Continues a frame along the straight segment to `z_end` with adaptive steps.
pub fn continue_to<T: Real>(
    start: &SingulantFrame<T>,
    z_end: Cx<T>,
) -> Result<SingulantFrame<T>, SingulantError> {
    let mut cur = *start;
    let total = z_end - start.z;
    if total.norm() == T::zero() {
        return Ok(cur);
    }
    let mut s = T::zero();
    let mut h = T::one();
    let h_min = T::epsilon() * T::lit(16.0);
    while s < T::one() {
        let s_next = (s + h).min(T::one());
        let z_next = if s_next == T::one() { z_end } else { start.z + total * s_next };
        match step_frame(&cur, z_next) {
            Some(f) => {
                cur = f;
                s = s_next;
                h = (h * T::lit(2.0)).min(T::one());
            }
            None => {
                h = h * T::lit(0.5);
                if h < h_min {
                    return Err(SingulantError::PathThroughTurningPoint {
                        re: cur.z.re.to_f64_lossy(),
                        im: cur.z.im.to_f64_lossy(),
                    });
                }
            }
        }
    }
    Ok(cur)
}

/// Frames at every vertex of a polyline path, continued from `start`
/// (which must sit at `path[0]`), with adaptive refinement between vertices.
pub fn continue_frame<T: Real>(
    start: &SingulantFrame<T>,
    path: &[Cx<T>],
) -> Result<Vec<SingulantFrame<T>>, SingulantError> {
    let mut out = Vec::with_capacity(path.len());
    let mut cur = *start;
    for &z in path {
        cur = continue_to(&cur, z)?;
        out.push(cur);
    }
    Ok(out)
}

/// Labels the raw roots at `z*` for the reference parameters by matching the
/// tabulated singulants.
fn reference_frame<T: Real>() -> Result<SingulantFrame<T>, SingulantError> {
    let p = PhaseParams::new(T::lit(REFERENCE_PARAMS.a), T::lit(REFERENCE_PARAMS.b));
    let z = z_star::<T>();
    let roots = saddle_roots(z, p)?;
    let target: [Cx<T>; 4] = REFERENCE_CHI.map(|(re, im)| cx(re, im));
    let mut best = [0usize, 1, 2, 3];
    let mut best_cost = T::infinity();
    for perm in permutations4() {
        let cost = (0..4).fold(T::zero(), |acc, k| {
            acc + (singulant(roots[perm[k]], z, p) - target[k]).norm()
        });
        if cost < best_cost {
            best_cost = cost;
            best = perm;
        }
    }
    let taus = best.map(|k| roots[k]);
    let sq: [Cx<T>; 4] = std::array::from_fn(|k| {
        amplitude_denominator(taus[k], p).sqrt() * T::lit(f64::from(REFERENCE_ORIENTATION[k]))
    });
    Ok(SingulantFrame::from_parts(z, p, taus, sq))
}

/// All 24 permutations of four indices.
pub fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    if a != b && a != c && a != d && b != c && b != d && c != d {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
    }
    out
}

/// Carries the reference labelling at `z*` to other parameters by a
/// homotopy in `(a, b)` at fixed `z*`, detouring through complex parameter
/// values when the straight homotopy meets a root collision.
fn homotopy_frame<T: Real>(
    from: &SingulantFrame<T>,
    to: PhaseParams<T>,
) -> Result<SingulantFrame<T>, SingulantError> {
    let detours = [0.0, 0.35, -0.35, 0.8, -0.8];
    let mut last_err = None;
    for bump in detours {
        match homotopy_path(from, to, T::lit(bump)) {
            Ok(f) => return Ok(f),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one homotopy attempted"))
}

fn homotopy_path<T: Real>(
    from: &SingulantFrame<T>,
    to: PhaseParams<T>,
    bump: T,
) -> Result<SingulantFrame<T>, SingulantError> {
    let p0 = CParams::from_real(from.params);
    let p1 = CParams::from_real(to);
    let i = i_unit::<T>();
    let at = |s: T| -> CParams<T> {
        let w = i * (bump * s * (T::one() - s));
        CParams {
            a: p0.a + (p1.a - p0.a) * s + w,
            b: p0.b + (p1.b - p0.b) * s + w,
        }
    };
    let z = from.z;
    let mut taus = from.taus();
    let mut sq = from.sqrt_denominators();
    let mut s = T::zero();
    let mut h = T::lit(0.05);
    let h_min = T::epsilon() * T::lit(64.0);
    let tol = T::epsilon() * T::lit(64.0);
    while s < T::one() {
        let s_next = (s + h).min(T::one());
        let cp = at(s_next);
        let gap = min_gap(&taus);
        let mut ok = true;
        let mut cand = taus;
        for k in 0..4 {
            let mut t = taus[k];
            let mut conv = false;
            for _ in 0..30 {
                let f = poly::eval(&quartic_coeffs(z, cp), t);
                let df = quartic_dtau(t, cp);
                if df.norm() == T::zero() {
                    break;
                }
                let st = f / df;
                t = t - st;
                if st.norm() <= tol * (T::one() + t.norm()) {
                    conv = true;
                    break;
                }
            }
            if !conv || (t - taus[k]).norm() >= gap * T::lit(0.5) {
                ok = false;
                break;
            }
            cand[k] = t;
        }
        if ok && min_gap(&cand) > gap * T::lit(0.25) {
            let d_of = |t: Cx<T>| t * t * t * T::lit(-10.0) + t * cp.a * T::lit(3.0) - i * cp.b;
            for k in 0..4 {
                sq[k] = sqrt_near(d_of(cand[k]), sq[k]);
            }
            taus = cand;
            s = s_next;
            h = (h * T::lit(1.5)).min(T::lit(0.1));
        } else {
            h = h * T::lit(0.5);
            if h < h_min {
                return Err(SingulantError::LabelAmbiguity {
                    re: z.re.to_f64_lossy(),
                    im: z.im.to_f64_lossy(),
                });
            }
        }
    }
    Ok(SingulantFrame::from_parts(z, to, taus, sq))
}

/// Canonical labelled frame at `z*` for the given parameters.
pub fn canonical_frame<T: Real>(p: PhaseParams<T>) -> Result<SingulantFrame<T>, SingulantError> {
    let reference = reference_frame::<T>()?;
    if p.a == reference.params.a && p.b == reference.params.b {
        return Ok(reference);
    }
    homotopy_frame(&reference, p)
}

/// Labelled frame at `z`.
///
/// Without a reference frame the canonical frame at `z*` is continued along
/// the straight segment to `z`. With a reference frame, roots are matched to
/// the reference by nearest `tau`, which must be a stable bijection.
pub fn frame_at<T: Real>(
    z: Cx<T>,
    p: PhaseParams<T>,
    reference: Option<&SingulantFrame<T>>,
) -> Result<SingulantFrame<T>, SingulantError> {
    match reference {
        None => {
            let base = canonical_frame(p)?;
            continue_to(&base, z)
        }
        Some(r) => match_frame(r, z),
    }
}

fn match_frame<T: Real>(r: &SingulantFrame<T>, z: Cx<T>) -> Result<SingulantFrame<T>, SingulantError> {
    let p = r.params;
    let roots = raw_roots(z, CParams::from_real(p))?;
    let ambiguity = || SingulantError::LabelAmbiguity {
        re: z.re.to_f64_lossy(),
        im: z.im.to_f64_lossy(),
    };
    let gap_ref = r.root_gap();
    let mut used = [false; 4];
    let mut taus = r.taus();
    for (k, tr) in r.taus().iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_d = T::infinity();
        for (m, rm) in roots.iter().enumerate() {
            let d = (*rm - *tr).norm();
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        if used[best] || best_d >= gap_ref * T::lit(0.5) {
            return Err(ambiguity());
        }
        used[best] = true;
        taus[k] = roots[best];
    }
    let sq_prev = r.sqrt_denominators();
    let sq: [Cx<T>; 4] = std::array::from_fn(|k| sqrt_near(amplitude_denominator(taus[k], p), sq_prev[k]));
    Ok(SingulantFrame::from_parts(z, p, taus, sq))
}

/// Kind of special point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    /// Two saddles coalesce; the amplitude is singular.
    Turning,
    /// Two singulants coincide at distinct saddles.
    Virtual,
}

/// A turning point or virtual turning point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    pub re: f64,
    pub im: f64,
    pub kind: PointKind,
    /// Number of cubic roots mapping to this point (turning kind only).
    pub multiplicity: u8,
    /// Label pairs with equal singulants here, in the canonical labelling.
    pub pairs: Vec<(u8, u8)>,
}

impl TurningPoint {
    /// Location as a complex number.
    pub fn z(&self) -> Cx<f64> {
        Complex::new(self.re, self.im)
    }
}

/// Roots of `-10 t^3 + 3 a t - i b = 0`, the `tau` values of coalescing saddles.
pub fn turning_taus<T: Real>(p: PhaseParams<T>) -> Result<Vec<Cx<T>>, SingulantError> {
    let i = i_unit::<T>();
    let c = [
        -i * p.b,
        Complex::new(p.a * T::lit(3.0), T::zero()),
        Complex::new(T::zero(), T::zero()),
        Complex::new(T::lit(-10.0), T::zero()),
    ];
    Ok(poly::roots(&c)?)
}

/// `z = (3 t / 2)(a t - i b)` for a coalescence value `t`.
pub fn turning_z<T: Real>(t: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    t * T::lit(1.5) * (t * p.a - i * p.b)
}

/// Distinct turning points with multiplicity and coalescing label pairs.
pub fn turning_points(p: PhaseParams<f64>) -> Result<Vec<TurningPoint>, SingulantError> {
    let ts = turning_taus(p)?;
    let mut groups: Vec<(Cx<f64>, Vec<Cx<f64>>)> = Vec::new();
    for t in ts {
        let z = turning_z(t, p);
        match groups.iter_mut().find(|(zg, _)| (*zg - z).norm() <= 1e-8 * (1.0 + z.norm())) {
            Some(g) => g.1.push(t),
            None => groups.push((z, vec![t])),
        }
    }
    let base = canonical_frame(p)?;
    let mut out = Vec::with_capacity(groups.len());
    for (z, ts) in groups {
        let pairs = coalescing_pairs(&base, z, &ts)?;
        out.push(TurningPoint { re: z.re, im: z.im, kind: PointKind::Turning, multiplicity: ts.len() as u8, pairs });
    }
    sort_points(&mut out);
    Ok(out)
}

fn sort_points(v: &mut [TurningPoint]) {
    v.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Continues the canonical frame to just short of a turning point and reads
/// off which labels cluster at each coalescence value.
fn coalescing_pairs(
    base: &SingulantFrame<f64>,
    z_tp: Cx<f64>,
    ts: &[Cx<f64>],
) -> Result<Vec<(u8, u8)>, SingulantError> {
    let f = approach(base, z_tp, 1e-10)?;
    let mut pairs = Vec::new();
    for t in ts {
        let near: Vec<u8> = (0..4)
            .filter(|&k| (f.branches[k].tau - *t).norm() < 1e-2 * (1.0 + t.norm()))
            .map(|k| (k + 1) as u8)
            .collect();
        for x in 0..near.len() {
            for y in (x + 1)..near.len() {
                let pr = (near[x], near[y]);
                if !pairs.contains(&pr) {
                    pairs.push(pr);
                }
            }
        }
    }
    pairs.sort();
    Ok(pairs)
}

/// Frame continued from `base` towards `target`, stopping at relative
/// distance `offset` short of it. Falls back to a bent path through a
/// perpendicular waypoint when the straight path meets another turning point.
pub fn approach(
    base: &SingulantFrame<f64>,
    target: Cx<f64>,
    offset: f64,
) -> Result<SingulantFrame<f64>, SingulantError> {
    let dir = target - base.z;
    let len = dir.norm();
    if len == 0.0 {
        return Ok(*base);
    }
    let stop = target - dir / len * (offset * (1.0 + target.norm()));
    match continue_to(base, stop) {
        Ok(f) => Ok(f),
        Err(_) => {
            let perp = Complex::new(-dir.im, dir.re) / len;
            let mut last = None;
            for side in [0.3, -0.3, 0.7, -0.7] {
                let mid = base.z + dir * 0.5 + perp * (side * len);
                let attempt = continue_to(base, mid).and_then(|m| continue_to(&m, stop));
                match attempt {
                    Ok(f) => return Ok(f),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("detour attempted"))
        }
    }
}

/// `z(tau) = -5 tau^4 + 3 a tau^2 - 2 i b tau`, the quartic solved for `z`.
pub fn z_of_tau<T: Real>(tau: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    let t2 = tau * tau;
    t2 * t2 * T::lit(-5.0) + t2 * (p.a * T::lit(3.0)) - i * tau * (p.b * T::lit(2.0))
}

/// `w(tau) = -4 tau^5 + 2 a tau^3 - i b tau^2`, the singulant along `z(tau)`.
pub fn w_of_tau<T: Real>(tau: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    let t2 = tau * tau;
    t2 * t2 * tau * T::lit(-4.0) + t2 * tau * (p.a * T::lit(2.0)) - i * t2 * p.b
}

fn z_prime<T: Real>(tau: Cx<T>, p: PhaseParams<T>) -> Cx<T> {
    let i = i_unit::<T>();
    tau * tau * tau * T::lit(-20.0) + tau * (p.a * T::lit(6.0)) - i * p.b * T::lit(2.0)
}

/// Number of virtual turning points predicted algebraically.
///
/// Unordered root pairs with equal `z(tau)` and `w(tau)` satisfy, in terms of
/// `s = tau_1 + tau_2`, the sextic `25 s^6 - 35 a s^4 + 15 i b s^3 + 6 a^2 s^2
/// + 2 i a b s + 4 b^2 = 0`, whose roots include `s = 2 t` at each turning
/// point. The remaining roots are the virtual turning points.
pub fn virtual_point_sums(p: PhaseParams<f64>) -> Result<Vec<(Cx<f64>, Cx<f64>)>, SingulantError> {
    let i = Complex::new(0.0, 1.0);
    let (a, b) = (p.a, p.b);
    let c = [
        Complex::new(4.0 * b * b, 0.0),
        i * (2.0 * a * b),
        Complex::new(6.0 * a * a, 0.0),
        i * (15.0 * b),
        Complex::new(-35.0 * a, 0.0),
        Complex::new(0.0, 0.0),
        Complex::new(25.0, 0.0),
    ];
    let s_roots = poly::roots(&c)?;
    let mut out: Vec<(Cx<f64>, Cx<f64>)> = Vec::new();
    for s in s_roots {
        let (t1, t2) = if s.norm() < 1e-9 {
            if b.abs() > 1e-12 || a == 0.0 {
                continue;
            }
            let r = Complex::new(a / 2.0, 0.0).sqrt();
            (r, -r)
        } else {
            let prod = (s * s * s * 5.0 - s * (3.0 * a) + i * (2.0 * b)) / (s * 10.0);
            let disc = (s * s - prod * 4.0).sqrt();
            ((s + disc) / 2.0, (s - disc) / 2.0)
        };
        if (t1 - t2).norm() < 1e-4 {
            continue;
        }
        let z = z_of_tau(t1, p);
        if out.iter().all(|(zo, _)| (*zo - z).norm() > 1e-8 * (1.0 + z.norm())) {
            out.push((z, s));
        }
    }
    Ok(out)
}

/// Virtual turning points by Newton iteration on
/// `z(tau_1) = z(tau_2), w(tau_1) = w(tau_2)` from a 40x40 grid of `tau_1`
/// seeds, each paired with the other quartic roots at `z(tau_1)`.
pub fn virtual_turning_points(p: PhaseParams<f64>) -> Result<Vec<TurningPoint>, SingulantError> {
    let expected = virtual_point_sums(p)?.len();
    let radius = 3.0 * (1.0 + p.a.abs() + p.b.abs()).sqrt();
    let n = 40;
    let mut found: Vec<(Cx<f64>, Cx<f64>, Cx<f64>)> = Vec::new();
    let cp = CParams::from_real(p);
    let turning: Vec<Cx<f64>> = turning_taus(p)?.into_iter().map(|t| turning_z(t, p)).collect();
    let near_turning =
        |z: Cx<f64>| turning.iter().any(|zt| (*zt - z).norm() <= 1e-5 * (1.0 + z.norm()));
    for ix in 0..n {
        for iy in 0..n {
            let t1 = Complex::new(
                -radius + 2.0 * radius * ix as f64 / (n - 1) as f64,
                -radius + 2.0 * radius * iy as f64 / (n - 1) as f64,
            );
            let z0 = z_of_tau(t1, p);
            let Ok(others) = raw_roots(z0, cp) else { continue };
            for t2 in others {
                if (t2 - t1).norm() < 1e-6 {
                    continue;
                }
                if let Some((u1, u2)) = vtp_newton(t1, t2, p) {
                    let z = z_of_tau(u1, p);
                    if near_turning(z) {
                        continue;
                    }
                    if found.iter().all(|(zf, _, _)| (*zf - z).norm() > 1e-8 * (1.0 + z.norm())) {
                        found.push((z, u1, u2));
                    }
                }
            }
        }
    }
    if found.len() < expected {
        return Err(SingulantError::SeedExhaustion { found: found.len(), expected });
    }
    let base = canonical_frame(p)?;
    let mut out = Vec::with_capacity(found.len());
    for (z, u1, u2) in found {
        let f = approach(&base, z, 0.0)?;
        let label_of = |u: Cx<f64>| -> u8 {
            let mut best = 0;
            for k in 1..4 {
                if (f.branches[k].tau - u).norm() < (f.branches[best].tau - u).norm() {
                    best = k;
                }
            }
            (best + 1) as u8
        };
        let (x, y) = (label_of(u1), label_of(u2));
        let pair = if x < y { (x, y) } else { (y, x) };
        out.push(TurningPoint { re: z.re, im: z.im, kind: PointKind::Virtual, multiplicity: 1, pairs: vec![pair] });
    }
    sort_points(&mut out);
    Ok(out)
}

fn vtp_newton(mut t1: Cx<f64>, mut t2: Cx<f64>, p: PhaseParams<f64>) -> Option<(Cx<f64>, Cx<f64>)> {
    for _ in 0..60 {
        let f1 = z_of_tau(t1, p) - z_of_tau(t2, p);
        let f2 = w_of_tau(t1, p) - w_of_tau(t2, p);
        let (a11, a12) = (z_prime(t1, p), -z_prime(t2, p));
        let (a21, a22) = (t1 * z_prime(t1, p), -(t2 * z_prime(t2, p)));
        let det = a11 * a22 - a12 * a21;
        if det.norm() < 1e-300 {
            return None;
        }
        let d1 = (f1 * a22 - f2 * a12) / det;
        let d2 = (a11 * f2 - a21 * f1) / det;
        t1 -= d1;
        t2 -= d2;
        if !(t1.norm() < 1e6 && t2.norm() < 1e6) {
            return None;
        }
        if d1.norm() + d2.norm() < 1e-14 * (1.0 + t1.norm() + t2.norm()) {
            break;
        }
    }
    let res = (z_of_tau(t1, p) - z_of_tau(t2, p)).norm() + (w_of_tau(t1, p) - w_of_tau(t2, p)).norm();
    let scale = 1.0 + z_of_tau(t1, p).norm();
    if res <= 1e-10 * scale && (t1 - t2).norm() >= 1e-3 {
        Some((t1, t2))
    } else {
        None
    }
}

/// Number of distinct turning points: 1, 2 or 3.
///
/// Decided from the defining algebraic relations with relative tolerance
/// `1e-10`: all coincide iff `a = b = 0`; two coincide iff `b = 0` or
/// `a = -(5/2)^{1/3} |b|^{2/3}`.
pub fn coalescence_class(p: PhaseParams<f64>) -> u8 {
    let tol = 1e-10;
    let scale = 1.0 + p.a.abs() + p.b.abs();
    let a_zero = p.a.abs() <= tol * scale;
    let b_zero = p.b.abs() <= tol * scale;
    if a_zero && b_zero {
        return 1;
    }
    if b_zero {
        return 2;
    }
    let critical = -(2.5f64).cbrt() * p.b.abs().powf(2.0 / 3.0);
    if (p.a - critical).abs() <= tol * scale {
        return 2;
    }
    3
}

/// Maps physical coordinates to the rescaled problem with `|z| = 1`:
/// `eps = |x1|^{-5/4}`, `z = eps^{4/5} x1`, `b = eps^{3/5} x2`, `a = eps^{2/5} x3`.
pub fn from_physical(x1: f64, x2: f64, x3: f64) -> Result<(Cx<f64>, PhaseParams<f64>, f64), SingulantError> {
    if x1 == 0.0 || !x1.is_finite() {
        return Err(SingulantError::ZeroX1);
    }
    let eps = x1.abs().powf(-1.25);
    let z = Complex::new(eps.powf(0.8) * x1, 0.0);
    let p = PhaseParams::new(eps.powf(0.4) * x3, eps.powf(0.6) * x2);
    Ok((z, p, eps))
}

/// Inverse of [`from_physical`].
pub fn to_physical(z: Cx<f64>, p: PhaseParams<f64>, eps: f64) -> (Cx<f64>, f64, f64) {
    (z / eps.powf(0.8), p.b / eps.powf(0.6), p.a / eps.powf(0.4))
}
