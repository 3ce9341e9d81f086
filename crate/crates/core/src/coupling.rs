//! Inter-patch coupling: the derived interpolation coefficient, the
//! nearest-neighbour edge forcing, Taylor-held forcing jets, and forcing
//! providers used by the time steppers.

use std::io::{self, Write};
use std::sync::Mutex;

use crate::geometry::PatchGeometry;
use crate::scalar::Real;
use crate::special::phi;
use thiserror::Error;

/// Largest supported Taylor order; beyond this the held-forcing correction
/// terms `delta_t^(Q+1)/(Q+1)!` are negligible for any practical step size.
pub const MAX_TAYLOR_ORDER: usize = 8;

/// Validation failures for coupling parameters and forcing histories.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    /// The patch-to-macroscale ratio must lie strictly inside `(0, 1/2)`.
    #[error("patch ratio must lie in (0, 1/2): got {value}")]
    BadRatio { value: f64 },
    /// Coupling strength is a homotopy parameter in `[0, 1]`.
    #[error("coupling strength must lie in [0, 1]: got {value}")]
    BadStrength { value: f64 },
    /// Taylor order must be a positive integer no larger than
    /// [`MAX_TAYLOR_ORDER`].
    #[error("Taylor order must lie in 1..={MAX_TAYLOR_ORDER}: got {value}")]
    BadOrder { value: usize },
    /// A derivative order was requested that the supplied jet does not hold.
    #[error("forcing derivative of order {order} requested but only orders 0..{available} supplied")]
    MissingDerivative { order: usize, available: usize },
    /// The mesoscale step must be positive.
    #[error("mesoscale step must be positive: got {value}")]
    BadStep { value: f64 },
    /// A schedule must take at least one step.
    #[error("mesoscale schedule must take at least one step")]
    EmptySchedule,
}

/// Interpolation coefficient of nearest-neighbour coupling: `1 - r^2 * gamma`.
///
/// For ratios `r` inside `(0, 1/2)` and strengths in `[0, 1]` the result lies
/// in `(0.75, 1]`.
pub fn nn_cos_ell<T: Real>(r: T, gamma: T) -> Result<T, CouplingError> {
    if !(r > T::zero() && r < T::half()) {
        return Err(CouplingError::BadRatio { value: r.to_f64().unwrap_or(f64::NAN) });
    }
    if !(gamma >= T::zero() && gamma <= T::one()) {
        return Err(CouplingError::BadStrength { value: gamma.to_f64().unwrap_or(f64::NAN) });
    }
    Ok(T::one() - r * r * gamma)
}

/// Nearest-neighbour edge forcing for a patch with macroscale neighbours
/// `u_prev` (left) and `u_next` (right):
///
/// `f_(+-) = (2a+1)/2 * r * gamma * [(r +- 1) u_next + (r -+ 1) u_prev]`.
///
/// Returns `(f_minus, f_plus)` for the left and right patch edges.
pub fn nn_forcing<T: Real>(r: T, gamma: T, core_half_width: usize, u_prev: T, u_next: T) -> (T, T) {
    let span = T::of_int(2 * core_half_width as i64 + 1);
    let scale = T::half() * span * r * gamma;
    let plus = scale * ((r + T::one()) * u_next + (r - T::one()) * u_prev);
    let minus = scale * ((r - T::one()) * u_next + (r + T::one()) * u_prev);
    (minus, plus)
}

/// Truncated Taylor data of the edge forcing about a base time: derivative
/// pairs `(f_minus^q, f_plus^q)` for `q = 0..order`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorJet<T> {
    base_time: T,
    derivatives: Vec<(T, T)>,
}

impl<T: Real> TaylorJet<T> {
    /// Builds a jet from explicit derivative pairs; `derivatives[q]` holds the
    /// `q`th time-derivative of `(f_minus, f_plus)` at `base_time`.
    pub fn new(base_time: T, derivatives: Vec<(T, T)>) -> Result<Self, CouplingError> {
        let order = derivatives.len();
        if order == 0 || order > MAX_TAYLOR_ORDER {
            return Err(CouplingError::BadOrder { value: order });
        }
        Ok(Self { base_time, derivatives })
    }

    /// Samples a provider's value and derivatives at `base_time` up to order
    /// `order - 1`.
    pub fn from_provider(
        provider: &dyn Forcing<T>,
        base_time: T,
        order: usize,
    ) -> Result<Self, CouplingError> {
        if order == 0 || order > MAX_TAYLOR_ORDER {
            return Err(CouplingError::BadOrder { value: order });
        }
        let derivatives =
            (0..order).map(|q| provider.derivative(q, base_time)).collect::<Vec<_>>();
        Ok(Self { base_time, derivatives })
    }

    /// The time the derivatives were sampled at.
    pub fn base_time(&self) -> T {
        self.base_time
    }

    /// Number of stored derivative orders (the Taylor order `Q`).
    pub fn order(&self) -> usize {
        self.derivatives.len()
    }

    /// The stored `q`th derivative pair.
    pub fn derivative(&self, q: usize) -> Result<(T, T), CouplingError> {
        self.derivatives
            .get(q)
            .copied()
            .ok_or(CouplingError::MissingDerivative { order: q, available: self.derivatives.len() })
    }
}

/// Extrapolates a jet forward by `offset >= 0`:
/// `sum_{q<Q} f^q(base) offset^q / q!` per edge (Horner evaluation).
pub fn taylor_extrapolate<T: Real>(jet: &TaylorJet<T>, offset: T) -> (T, T) {
    let mut minus = T::zero();
    let mut plus = T::zero();
    for (q, &(dm, dp)) in jet.derivatives.iter().enumerate().rev() {
        let q_t = T::of_int(q as i64 + 1);
        minus = dm + minus * offset / q_t;
        plus = dp + plus * offset / q_t;
    }
    (minus, plus)
}

/// Edge-forcing provider: values and time-derivatives of `(f_minus, f_plus)`.
///
/// Implementations must be pure functions of time so that patch workers can
/// sample them at schedule instants without coordination.
pub trait Forcing<T: Real>: Send + Sync {
    /// Forcing pair at time `t`.
    fn value(&self, t: T) -> (T, T) {
        self.derivative(0, t)
    }

    /// `order`th time-derivative pair at time `t` (order 0 is the value).
    fn derivative(&self, order: usize, t: T) -> (T, T);

    /// Exact convolution `int_0^t f(t0 + s) e^(lambda (t - s)) ds` per edge,
    /// when the provider has a closed form; returns `None` to request
    /// numerical quadrature.  `t0` is the absolute start time.
    fn convolution(&self, _lambda: T, _t0: T, _t: T) -> Option<(T, T)> {
        None
    }
}

/// No coupling at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroForcing;

impl<T: Real> Forcing<T> for ZeroForcing {
    fn derivative(&self, _order: usize, _t: T) -> (T, T) {
        (T::zero(), T::zero())
    }

    fn convolution(&self, _lambda: T, _t0: T, _t: T) -> Option<(T, T)> {
        Some((T::zero(), T::zero()))
    }
}

/// Time-independent forcing pair.
#[derive(Debug, Clone, Copy)]
pub struct ConstantForcing<T> {
    /// Left-edge value.
    pub minus: T,
    /// Right-edge value.
    pub plus: T,
}

impl<T: Real> Forcing<T> for ConstantForcing<T> {
    fn derivative(&self, order: usize, _t: T) -> (T, T) {
        if order == 0 {
            (self.minus, self.plus)
        } else {
            (T::zero(), T::zero())
        }
    }

    fn convolution(&self, lambda: T, _t0: T, t: T) -> Option<(T, T)> {
        // int_0^t e^(lambda (t - s)) ds = t phi_1(lambda t).
        let weight = t * phi(1, lambda * t);
        Some((self.minus * weight, self.plus * weight))
    }
}

/// Polynomial forcing `f(t) = sum_p c_p t^p` with independent coefficients per
/// edge.
#[derive(Debug, Clone)]
pub struct PolynomialForcing<T> {
    coefficients: Vec<(T, T)>,
}

impl<T: Real> PolynomialForcing<T> {
    /// Builds the polynomial from `(minus, plus)` coefficient pairs ordered by
    /// ascending power.
    pub fn new(coefficients: Vec<(T, T)>) -> Self {
        Self { coefficients }
    }

    fn eval_derivative(coefficients: &[(T, T)], order: usize, t: T, pick_plus: bool) -> T {
        let mut acc = T::zero();
        for (p, pair) in coefficients.iter().enumerate().rev() {
            if p < order {
                break;
            }
            let c = if pick_plus { pair.1 } else { pair.0 };
            // Falling-factorial weight p (p-1) ... (p-order+1).
            let mut weight = T::one();
            for step in 0..order {
                weight *= T::of_int((p - step) as i64);
            }
            acc = acc * t + c * weight;
        }
        acc
    }
}

impl<T: Real> Forcing<T> for PolynomialForcing<T> {
    fn derivative(&self, order: usize, t: T) -> (T, T) {
        (
            Self::eval_derivative(&self.coefficients, order, t, false),
            Self::eval_derivative(&self.coefficients, order, t, true),
        )
    }

    fn convolution(&self, lambda: T, t0: T, t: T) -> Option<(T, T)> {
        // Shift to s-coordinates: f(t0 + s) = sum_q f^q(t0) s^q / q!, and
        // int_0^t s^q e^(lambda (t - s)) ds = q! t^(q+1) phi_(q+1)(lambda t).
        let mut minus = T::zero();
        let mut plus = T::zero();
        let mut t_pow = t;
        for q in 0..self.coefficients.len() {
            let (dm, dp) = self.derivative(q, t0);
            let weight = t_pow * phi(q + 1, lambda * t);
            minus += dm * weight;
            plus += dp * weight;
            t_pow *= t;
        }
        Some((minus, plus))
    }
}

/// Sinusoidal forcing `f_(+-)(t) = amp_(+-) sin(omega t + phase)`.
#[derive(Debug, Clone, Copy)]
pub struct SinusoidForcing<T> {
    /// Left-edge amplitude.
    pub amp_minus: T,
    /// Right-edge amplitude.
    pub amp_plus: T,
    /// Angular frequency.
    pub omega: T,
    /// Phase offset.
    pub phase: T,
}

impl<T: Real> SinusoidForcing<T> {
    /// `f_(+-)(t) = sin t` on both edges.
    pub fn unit() -> Self {
        Self { amp_minus: T::one(), amp_plus: T::one(), omega: T::one(), phase: T::zero() }
    }
}

impl<T: Real> Forcing<T> for SinusoidForcing<T> {
    fn derivative(&self, order: usize, t: T) -> (T, T) {
        // d^q/dt^q sin(omega t + phase) = omega^q sin(omega t + phase + q pi/2).
        let shift = T::of_int(order as i64) * T::FRAC_PI_2();
        let factor = self.omega.powi(order as i32) * (self.omega * t + self.phase + shift).sin();
        (self.amp_minus * factor, self.amp_plus * factor)
    }

    fn convolution(&self, lambda: T, t0: T, t: T) -> Option<(T, T)> {
        // int_0^t sin(omega (t0+s) + phase) e^(lambda (t - s)) ds with
        // theta0 = omega t0 + phase, theta1 = omega (t0+t) + phase:
        // [e^(lambda t)(omega cos theta0 + lambda sin theta0)
        //   - (omega cos theta1 + lambda sin theta1)] / (lambda^2 + omega^2).
        let theta0 = self.omega * t0 + self.phase;
        let theta1 = self.omega * (t0 + t) + self.phase;
        let denom = lambda * lambda + self.omega * self.omega;
        if denom.abs() < T::lit(1e-300) {
            return None;
        }
        let value = ((lambda * t).exp() * (self.omega * theta0.cos() + lambda * theta0.sin())
            - (self.omega * theta1.cos() + lambda * theta1.sin()))
            / denom;
        Some((self.amp_minus * value, self.amp_plus * value))
    }
}

/// Forcing reconstructed from equispaced samples of the edge pair; derivatives
/// are estimated by backward divided differences, which is how a running patch
/// recovers them from its neighbours' transmitted histories.
#[derive(Debug, Clone)]
pub struct SampledForcing<T> {
    step: T,
    samples: Vec<(T, T)>,
}

impl<T: Real> SampledForcing<T> {
    /// Samples are values at times `0, step, 2 step, ...`.
    pub fn new(step: T, samples: Vec<(T, T)>) -> Result<Self, CouplingError> {
        if !(step > T::zero()) {
            return Err(CouplingError::BadStep { value: step.to_f64().unwrap_or(f64::NAN) });
        }
        if samples.is_empty() {
            return Err(CouplingError::EmptySchedule);
        }
        Ok(Self { step, samples })
    }

    fn nearest_index(&self, t: T) -> usize {
        let raw = (t / self.step).round().to_f64().unwrap_or(0.0) as i64;
        raw.clamp(0, self.samples.len() as i64 - 1) as usize
    }
}

impl<T: Real> Forcing<T> for SampledForcing<T> {
    fn derivative(&self, order: usize, t: T) -> (T, T) {
        let at = self.nearest_index(t);
        // Backward difference of the highest order the history supports.
        let order = order.min(at);
        let mut window: Vec<(T, T)> = self.samples[at - order..=at].to_vec();
        for level in 0..order {
            for i in 0..order - level {
                window[i] = (
                    (window[i + 1].0 - window[i].0) / self.step,
                    (window[i + 1].1 - window[i].1) / self.step,
                );
            }
        }
        window[0]
    }
}

/// Wrapper that records every `(time, order)` a provider is queried at; used
/// to verify that mesoscale runs touch neighbour data only at schedule
/// instants.
pub struct RecordingForcing<T, F> {
    inner: F,
    log: Mutex<Vec<(T, usize)>>,
}

impl<T: Real, F: Forcing<T>> RecordingForcing<T, F> {
    /// Wraps `inner` with an empty query log.
    pub fn new(inner: F) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    /// Snapshot of the recorded `(time, order)` queries.
    pub fn queries(&self) -> Vec<(T, usize)> {
        self.log.lock().expect("query log poisoned").clone()
    }
}

impl<T: Real, F: Forcing<T>> Forcing<T> for RecordingForcing<T, F> {
    fn derivative(&self, order: usize, t: T) -> (T, T) {
        self.log.lock().expect("query log poisoned").push((t, order));
        self.inner.derivative(order, t)
    }

    fn convolution(&self, lambda: T, t0: T, t: T) -> Option<(T, T)> {
        self.inner.convolution(lambda, t0, t)
    }
}

/// Parameters of the inter-patch coupling used by a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSpec<T> {
    /// Coupling strength (homotopy parameter in `[0, 1]`).
    pub gamma: T,
    /// Patch-to-macroscale ratio `r = (n - a)/N`.
    pub r: T,
    /// Interpolation coefficient applied to the core average.
    pub cos_ell: T,
    /// Number of Taylor terms held between refreshes.
    pub taylor_order: usize,
}

impl<T: Real> CouplingSpec<T> {
    /// Nearest-neighbour coupling for the given geometry and strength.
    pub fn nearest_neighbour(
        geometry: &PatchGeometry,
        gamma: T,
        taylor_order: usize,
    ) -> Result<Self, CouplingError> {
        if taylor_order == 0 || taylor_order > MAX_TAYLOR_ORDER {
            return Err(CouplingError::BadOrder { value: taylor_order });
        }
        let r = geometry.ratio_as::<T>();
        let cos_ell = nn_cos_ell(r, gamma)?;
        Ok(Self { gamma, r, cos_ell, taylor_order })
    }
}

/// Refresh schedule of a mesoscale-coupled run: derivative data is exchanged
/// at `m * delta_t` for `m = 0..steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MesoSchedule<T> {
    /// Interval between coupling refreshes.
    pub delta_t: T,
    /// Number of mesoscale steps taken.
    pub steps: usize,
    /// Number of Taylor terms transferred per refresh.
    pub taylor_order: usize,
}

impl<T: Real> MesoSchedule<T> {
    /// Validates the step size, count, and order.
    pub fn new(delta_t: T, steps: usize, taylor_order: usize) -> Result<Self, CouplingError> {
        if !(delta_t > T::zero()) {
            return Err(CouplingError::BadStep { value: delta_t.to_f64().unwrap_or(f64::NAN) });
        }
        if steps == 0 {
            return Err(CouplingError::EmptySchedule);
        }
        if taylor_order == 0 || taylor_order > MAX_TAYLOR_ORDER {
            return Err(CouplingError::BadOrder { value: taylor_order });
        }
        Ok(Self { delta_t, steps, taylor_order })
    }

    /// Total simulated time `steps * delta_t`.
    pub fn end_time(&self) -> T {
        T::of_int(self.steps as i64) * self.delta_t
    }

    /// Refresh instants `0, delta_t, ..., (steps-1) delta_t`.
    pub fn instants(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.steps).map(move |m| T::of_int(m as i64) * self.delta_t)
    }
}

/// Writes a held-forcing history as CSV with columns `m,t,f_minus,f_plus,q`.
pub fn write_f_history<T: Real, W: Write>(
    writer: &mut W,
    rows: &[(usize, T, T, T, usize)],
) -> io::Result<()> {
    writeln!(writer, "m,t,f_minus,f_plus,q")?;
    for &(m, t, minus, plus, q) in rows {
        writeln!(writer, "{m},{t:.17e},{minus:.17e},{plus:.17e},{q}")?;
    }
    Ok(())
}
