//! Scaled truncated-exponential helpers shared by the time steppers and the
//! error bounds.

use crate::scalar::Real;

/// Evaluates the exponential-integrator function
/// `phi_q(x) = (e^x - sum_{p<q} x^p/p!) / x^q = sum_{s>=0} x^s/(s+q)!`.
///
/// The subtracted form is catastrophically ill-conditioned near `x = 0` (it
/// amplifies rounding by `e^x q! / x^q`), so a power series is used for
/// `|x| < 10` and the direct form beyond, where both are machine-accurate.
/// `phi_0` is the plain exponential.
pub(crate) fn phi<T: Real>(q: usize, x: T) -> T {
    if q == 0 {
        return x.exp();
    }
    if x.abs() < T::lit(10.0) {
        phi_series(q, x)
    } else {
        phi_direct(q, x)
    }
}

/// `sum_{s>=0} x^s/(s+q)!`, truncated when a term no longer changes the sum.
fn phi_series<T: Real>(q: usize, x: T) -> T {
    let mut term = inv_factorial::<T>(q);
    let mut sum = term;
    for s in 1..200 {
        term = term * x / T::of_int((q + s) as i64);
        sum += term;
        if term.abs() <= sum.abs() * T::epsilon() {
            break;
        }
    }
    sum
}

fn phi_direct<T: Real>(q: usize, x: T) -> T {
    let mut partial = T::zero();
    let mut term = T::one();
    for p in 0..q {
        partial += term;
        term = term * x / T::of_int((p + 1) as i64);
    }
    let mut result = x.exp() - partial;
    for _ in 0..q {
        result /= x;
    }
    result
}

/// `1/q!` accumulated in the scalar type.
pub(crate) fn inv_factorial<T: Real>(q: usize) -> T {
    let mut value = T::one();
    for p in 1..=q {
        value /= T::of_int(p as i64);
    }
    value
}

/// `q!` accumulated in the scalar type.
pub(crate) fn factorial<T: Real>(q: usize) -> T {
    let mut value = T::one();
    for p in 1..=q {
        value *= T::of_int(p as i64);
    }
    value
}
