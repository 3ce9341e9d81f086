//! Adaptive Gauss–Legendre quadrature on an interval.
//!
//! A 15-point Gauss–Legendre rule is applied per segment; a segment is
//! accepted when bisecting it no longer changes its contribution beyond its
//! share of the requested tolerance, otherwise the halves are refined
//! recursively.  The rule integrates polynomials up to degree 29 exactly, so
//! for the smooth integrands used in this crate (products of exponentials and
//! trigonometric factors) convergence is rapid.

use crate::scalar::Real;
use thiserror::Error;

/// Abscissae of the 15-point Gauss–Legendre rule on `[-1, 1]` (nonnegative
/// half; the rule is symmetric).
const GL15_NODES: [f64; 8] = [
    0.0,
    0.201_194_093_997_434_5,
    0.394_151_347_077_563_4,
    0.570_972_172_608_538_8,
    0.724_417_731_360_170_0,
    0.848_206_583_410_427_2,
    0.937_273_392_400_705_9,
    0.987_992_518_020_485_4,
];

/// Weights paired with [`GL15_NODES`].
const GL15_WEIGHTS: [f64; 8] = [
    0.202_578_241_925_561_3,
    0.198_431_485_327_111_6,
    0.186_161_000_015_562_2,
    0.166_269_205_816_993_9,
    0.139_570_677_926_154_3,
    0.107_159_220_467_171_9,
    0.070_366_047_488_108_1,
    0.030_753_241_996_117_3,
];

/// Maximum bisection depth before the integrator gives up.
const MAX_DEPTH: u32 = 52;

/// Failure modes of [`adaptive_gauss`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    /// The requested relative tolerance was not reached within the refinement
    /// budget; `achieved` reports the relative error estimate actually
    /// attained.
    #[error("quadrature did not reach relative tolerance {required:.3e} (achieved {achieved:.3e})")]
    NoConvergence { required: f64, achieved: f64 },
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult<T> {
    /// Integral estimate.
    pub value: T,
    /// Absolute error estimate accumulated over accepted segments.
    pub error: T,
    /// Number of integrand evaluations.
    pub evaluations: usize,
}

fn gl15<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> T {
    let centre = (a + b) * T::half();
    let radius = (b - a) * T::half();
    let mut sum = T::lit(GL15_WEIGHTS[0]) * f(centre);
    for i in 1..8 {
        let offset = radius * T::lit(GL15_NODES[i]);
        sum += T::lit(GL15_WEIGHTS[i]) * (f(centre - offset) + f(centre + offset));
    }
    sum * radius
}

/// Integrates `f` over `[a, b]` to the requested relative tolerance.
///
/// The tolerance is interpreted relative to the magnitude of the integral
/// (with a tiny absolute floor so that an exactly-zero integral converges).
pub fn adaptive_gauss<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    rel_tol: T,
) -> Result<QuadResult<T>, QuadError> {
    if a == b {
        return Ok(QuadResult { value: T::zero(), error: T::zero(), evaluations: 0 });
    }
    if b < a {
        let mut flipped = adaptive_gauss(f, b, a, rel_tol)?;
        flipped.value = -flipped.value;
        return Ok(flipped);
    }

    let whole = gl15(f, a, b);
    let mut evaluations = 15_usize;
    let scale = whole.abs().max(T::lit(1e-300));
    let total_len = b - a;

    let mut stack: Vec<(T, T, T, u32)> = vec![(a, b, whole, 0)];
    let mut accepted = T::zero();
    let mut error = T::zero();
    let mut worst_rel = T::zero();
    let mut failed = false;

    while let Some((lo, hi, estimate, depth)) = stack.pop() {
        let mid = (lo + hi) * T::half();
        let left = gl15(f, lo, mid);
        let right = gl15(f, mid, hi);
        evaluations += 30;
        let refined = left + right;
        let discrepancy = (refined - estimate).abs();
        let budget = rel_tol * scale * ((hi - lo) / total_len);
        if discrepancy <= budget {
            accepted += refined;
            error += discrepancy;
        } else if depth >= MAX_DEPTH {
            accepted += refined;
            error += discrepancy;
            worst_rel = worst_rel.max(discrepancy / scale);
            failed = true;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }

    if failed {
        return Err(QuadError::NoConvergence {
            required: rel_tol.to_f64().unwrap_or(f64::NAN),
            achieved: worst_rel.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(QuadResult { value: accepted, error, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_constants_exactly() {
        let one = |_: f64| 1.0;
        let got = gl15(&one, -1.0, 1.0);
        assert!((got - 2.0).abs() < 1e-15, "weight sum {got}");
    }

    #[test]
    fn single_panel_exact_for_degree_29() {
        // 15-point Gauss is exact through degree 2*15 - 1 = 29.
        let f = |t: f64| t.powi(29) + 3.0 * t.powi(14) - t;
        let exact = 1.0 / 30.0 + 3.0 / 15.0 - 0.5;
        let got = gl15(&f, 0.0, 1.0);
        assert!((got - exact).abs() < 1e-14, "got {got} want {exact}");
    }

    #[test]
    fn adaptive_handles_smooth_oscillation() {
        let f = |t: f64| t.sin();
        let res = adaptive_gauss(&f, 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((res.value - 2.0).abs() < 1e-12, "value {}", res.value);
    }

    #[test]
    fn adaptive_resolves_boundary_layer() {
        let f = |t: f64| (-100.0 * t).exp();
        let exact = (1.0 - (-100.0_f64).exp()) / 100.0;
        let res = adaptive_gauss(&f, 0.0, 1.0, 1e-12).unwrap();
        assert!(
            (res.value - exact).abs() < 1e-12 * exact,
            "value {} want {exact}",
            res.value
        );
    }

    #[test]
    fn reversed_interval_negates() {
        let f = |t: f64| t * t;
        let forward = adaptive_gauss(&f, 0.0, 2.0, 1e-12).unwrap();
        let backward = adaptive_gauss(&f, 2.0, 0.0, 1e-12).unwrap();
        assert!((forward.value + backward.value).abs() < 1e-14);
    }

    #[test]
    fn zero_length_interval_is_zero() {
        let f = |t: f64| t.exp();
        let res = adaptive_gauss(&f, 1.0, 1.0, 1e-12).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.evaluations, 0);
    }
}
