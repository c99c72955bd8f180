//! Complex polynomial evaluation and simultaneous root finding.
//!
//! Coefficients are stored lowest degree first: `c[0] + c[1] x + ... + c[n] x^n`.
//! Roots come from Aberth–Ehrlich iteration followed by Newton polishing.

use crate::scalar::{Cx, Real};
use num_complex::Complex;
use num_traits::Zero;
use thiserror::Error;

/// Failures of the polynomial root finder.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    /// The leading coefficient vanishes.
    #[error("leading coefficient is zero")]
    ZeroLeading,
    /// Aberth iteration did not settle within the iteration budget.
    #[error("root iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// Evaluates the polynomial at `x` by Horner's rule.
pub fn eval<T: Real>(c: &[Cx<T>], x: Cx<T>) -> Cx<T> {
    c.iter().rev().fold(Cx::zero(), |acc, &ck| acc * x + ck)
}

/// Evaluates the polynomial and its first derivative at `x`.
pub fn eval_d<T: Real>(c: &[Cx<T>], x: Cx<T>) -> (Cx<T>, Cx<T>) {
    let mut p = Cx::zero();
    let mut dp = Cx::zero();
    for &ck in c.iter().rev() {
        dp = dp * x + p;
        p = p * x + ck;
    }
    (p, dp)
}

/// Coefficients of the derivative polynomial.
pub fn derivative<T: Real>(c: &[Cx<T>]) -> Vec<Cx<T>> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &ck)| ck * T::lit(k as f64))
        .collect()
}

/// One Newton step from `x`; returns `x` unchanged where the derivative vanishes.
pub fn newton_step<T: Real>(c: &[Cx<T>], x: Cx<T>) -> Cx<T> {
    let (p, dp) = eval_d(c, x);
    if dp.norm() > T::zero() {
        x - p / dp
    } else {
        x
    }
}

/// All roots of the polynomial, with multiplicity.
///
/// Exact zero roots (vanishing trailing coefficients) are split off first so
/// monomials such as `5x^4` are handled exactly.
pub fn roots<T: Real>(c: &[Cx<T>]) -> Result<Vec<Cx<T>>, PolyError> {
    let mut coeffs: Vec<Cx<T>> = c.to_vec();
    while coeffs.last().is_some_and(|v| v.is_zero()) {
        coeffs.pop();
    }
    if coeffs.is_empty() {
        return Err(PolyError::ZeroLeading);
    }
    let zeros = coeffs.iter().take_while(|v| v.is_zero()).count();
    let reduced = &coeffs[zeros..];
    let mut out = vec![Cx::zero(); zeros];
    out.extend(aberth(reduced)?);
    Ok(out)
}

fn aberth<T: Real>(c: &[Cx<T>]) -> Result<Vec<Cx<T>>, PolyError> {
    let n = c.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let lead = c[n];
    if lead.is_zero() {
        return Err(PolyError::ZeroLeading);
    }
    if n == 1 {
        return Ok(vec![-c[0] / lead]);
    }
    // Fujiwara-style radius for the initial circle.
    let mut radius = T::zero();
    for (k, ck) in c.iter().enumerate().take(n) {
        let r = (ck.norm() / lead.norm()).powf(T::one() / T::lit((n - k) as f64));
        radius = radius.max(r);
    }
    radius = radius.max(T::lit(1e-3));
    let two_pi = T::lit(2.0) * T::PI();
    let mut z: Vec<Cx<T>> = (0..n)
        .map(|k| {
            let theta = two_pi * T::lit(k as f64) / T::lit(n as f64) + T::lit(0.4);
            Complex::from_polar(radius, theta)
        })
        .collect();
    let tol = T::epsilon() * T::lit(4.0);
    let max_sweeps = 800;
    for sweep in 0..max_sweeps {
        let mut largest = T::zero();
        for k in 0..n {
            let (p, dp) = eval_d(c, z[k]);
            if p.is_zero() {
                continue;
            }
            let ratio = p / dp;
            let mut repulsion = Cx::zero();
            for (j, zj) in z.iter().enumerate() {
                if j != k {
                    let d = z[k] - zj;
                    if !d.is_zero() {
                        repulsion = repulsion + d.inv();
                    }
                }
            }
            let denom = Cx::new(T::one(), T::zero()) - ratio * repulsion;
            let step = if denom.is_zero() { ratio } else { ratio / denom };
            if step.re.is_finite() && step.im.is_finite() {
                z[k] = z[k] - step;
                let rel = step.norm() / (T::one() + z[k].norm());
                largest = largest.max(rel);
            }
        }
        if largest <= tol {
            break;
        }
        if sweep + 1 == max_sweeps && largest > T::sqrt_eps() {
            return Err(PolyError::NoConvergence(max_sweeps));
        }
    }
    for zk in z.iter_mut() {
        for _ in 0..3 {
            let next = newton_step(c, *zk);
            if !(next.re.is_finite() && next.im.is_finite()) {
                break;
            }
            if eval(c, next).norm() <= eval(c, *zk).norm() {
                *zk = next;
            } else {
                break;
            }
        }
    }
    Ok(z)
}
