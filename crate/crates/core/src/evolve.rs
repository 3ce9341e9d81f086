//! Time evolution within one patch: the exact spectral solution under
//! continuous coupling, held-derivative mesoscale stepping over one or many
//! steps, the exact per-site remainder of the held scheme, and a direct
//! integration oracle.

use std::io::{self, Write};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::coupling::{CouplingError, Forcing, MesoSchedule, TaylorJet};
use crate::geometry::PatchGeometry;
use crate::operator::{OperatorError, PatchOperator};
use crate::quad::{adaptive_gauss, QuadError};
use crate::scalar::{Compensated, Real};
use crate::special::phi;
use crate::spectral::EigenSystem;

/// Relative tolerance used for convolution and remainder quadratures.
const QUAD_TOL: f64 = 1e-12;

/// Failure modes of the patch evolution routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvolveError {
    /// A convolution or remainder quadrature did not converge.
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    /// Invalid jet or schedule parameters.
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    /// Edge constraint could not be solved during direct integration.
    #[error(transparent)]
    Operator(#[from] OperatorError),
    /// The micro step must lie in `(0, 0.1]` for stable explicit stepping of
    /// a stencil with spectral radius 4.
    #[error("micro step must lie in (0, 0.1]: got {value}")]
    BadMicroStep { value: f64 },
    /// Negative evolution spans are not defined.
    #[error("evolution span must be nonnegative: got {value}")]
    BadSpan { value: f64 },
    /// The two field vectors belong to different patch geometries.
    #[error("field vectors belong to different geometries")]
    GeometryMismatch,
}

/// Microscale field on one patch: `2n+1` values indexed by the signed offset
/// `j = -n..=n`, stamped with the time they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector<T> {
    geometry: PatchGeometry,
    time: T,
    values: Array1<T>,
}

impl<T: Real> FieldVector<T> {
    /// The zero field at the given time.
    pub fn zeros(geometry: &PatchGeometry, time: T) -> Self {
        Self { geometry: *geometry, time, values: Array1::zeros(geometry.points()) }
    }

    /// Builds a field by evaluating `f` at every signed offset.
    pub fn from_fn(geometry: &PatchGeometry, time: T, mut f: impl FnMut(i64) -> T) -> Self {
        let n = geometry.half_width() as i64;
        let values = Array1::from_iter((-n..=n).map(|j| f(j)));
        Self { geometry: *geometry, time, values }
    }

    /// Wraps an existing storage vector (length `2n+1`).
    pub fn from_values(geometry: &PatchGeometry, time: T, values: Array1<T>) -> Self {
        assert_eq!(values.len(), geometry.points(), "field length must be 2n+1");
        Self { geometry: *geometry, time, values }
    }

    /// The patch geometry this field lives on.
    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    /// Time stamp.
    pub fn time(&self) -> T {
        self.time
    }

    /// Raw storage ordered from `j = -n` to `j = n`.
    pub fn values(&self) -> &Array1<T> {
        &self.values
    }

    /// Value at signed offset `j`.
    pub fn get(&self, j: i64) -> T {
        self.values[self.geometry.idx(j)]
    }

    /// Sets the value at signed offset `j`.
    pub fn set(&mut self, j: i64, value: T) {
        let i = self.geometry.idx(j);
        self.values[i] = value;
    }

    /// Copy with the two edge entries zeroed (multiplication by the mass
    /// matrix `B`).
    pub fn masked_interior(&self) -> Self {
        let mut out = self.clone();
        let m = out.values.len();
        out.values[0] = T::zero();
        out.values[m - 1] = T::zero();
        out
    }

    /// Core average: the macroscale reading of this patch.
    pub fn core_average(&self) -> T {
        let g = self.geometry;
        let span = T::of_int(2 * g.core_half_width() as i64 + 1);
        let mut sum = Compensated::default();
        for j in g.core() {
            sum.add(self.get(j));
        }
        sum.value() / span
    }

    /// Largest absolute difference over interior offsets `|j| <= n-1`.
    pub fn interior_max_diff(&self, other: &Self) -> Result<T, EvolveError> {
        if self.geometry != other.geometry {
            return Err(EvolveError::GeometryMismatch);
        }
        let m = self.values.len();
        let mut worst = T::zero();
        for i in 1..m - 1 {
            worst = worst.max((self.values[i] - other.values[i]).abs());
        }
        Ok(worst)
    }

    /// Largest absolute difference over all offsets including the edges.
    pub fn max_diff(&self, other: &Self) -> Result<T, EvolveError> {
        if self.geometry != other.geometry {
            return Err(EvolveError::GeometryMismatch);
        }
        let mut worst = T::zero();
        for (a, b) in self.values.iter().zip(other.values.iter()) {
            worst = worst.max((*a - *b).abs());
        }
        Ok(worst)
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-mode propagation data frozen at one step size: decay factors
/// `mu_k = e^(lambda_k delta_t)` together with the spectral basis, so that the
/// rank-one mode matrices `v_k z_k^T` can be applied without forming them.
#[derive(Debug, Clone)]
pub struct TransitionKernel<T> {
    geometry: PatchGeometry,
    delta_t: T,
    lambdas: Vec<T>,
    mus: Vec<T>,
    right: Vec<Array1<T>>,
    left: Vec<Array1<T>>,
}

impl<T: Real> TransitionKernel<T> {
    /// Freezes the eigen-system at step size `delta_t`.
    pub fn new(es: &EigenSystem<T>, delta_t: T) -> Self {
        let modes = es.modes();
        Self {
            geometry: *es.geometry(),
            delta_t,
            lambdas: modes.iter().map(|m| m.eigenvalue).collect(),
            mus: modes.iter().map(|m| (m.eigenvalue * delta_t).exp()).collect(),
            right: modes.iter().map(|m| m.right.clone()).collect(),
            left: modes.iter().map(|m| m.left.clone()).collect(),
        }
    }

    /// Number of modes (a complete basis holds `2n-1`).
    pub fn modes(&self) -> usize {
        self.lambdas.len()
    }

    /// Eigenvalue of mode `k`.
    pub fn lambda(&self, k: usize) -> T {
        self.lambdas[k]
    }

    /// Decay factor `e^(lambda_k delta_t)` of mode `k`.
    pub fn mu(&self, k: usize) -> T {
        self.mus[k]
    }

    /// The step size the kernel was frozen at.
    pub fn delta_t(&self) -> T {
        self.delta_t
    }

    /// Interior projection coefficient `z_k^T B u`.
    fn coefficient(&self, k: usize, u: &FieldVector<T>) -> T {
        let m = u.values.len();
        let mut acc = Compensated::default();
        for i in 1..m - 1 {
            acc.add(self.left[k][i] * u.values[i]);
        }
        acc.value()
    }

    /// Edge weights `((z_k)_{-n}, (z_k)_{+n})`.
    fn edge_weights(&self, k: usize) -> (T, T) {
        let m = self.left[k].len();
        (self.left[k][0], self.left[k][m - 1])
    }
}

/// Dense state-transition matrix `sum_k e^(lambda_k t) v_k z_k^T`.
pub fn transition_matrix<T: Real>(es: &EigenSystem<T>, t: T) -> Array2<T> {
    let m = es.geometry().points();
    let mut out = Array2::zeros((m, m));
    for mode in es.modes() {
        let decay = (mode.eigenvalue * t).exp();
        for r in 0..m {
            let w = decay * mode.right[r];
            for c in 0..m {
                out[(r, c)] += w * mode.left[c];
            }
        }
    }
    out
}

fn check_span<T: Real>(t: T) -> Result<(), EvolveError> {
    if t < T::zero() {
        return Err(EvolveError::BadSpan { value: t.to_f64().unwrap_or(f64::NAN) });
    }
    Ok(())
}

/// Evaluates the patch field at `u0.time + t` under continuous coupling:
///
/// `u(t) = T(t) B u0 + f(t) + sum_k v_k z_k^T int_0^t f(t') e^(lambda_k (t-t')) dt'`.
///
/// Convolution integrals use the provider's closed form when it declares one
/// and adaptive quadrature (relative tolerance `1e-12`) otherwise.
pub fn exact_solution<T: Real>(
    es: &EigenSystem<T>,
    u0: &FieldVector<T>,
    provider: &dyn Forcing<T>,
    t: T,
) -> Result<FieldVector<T>, EvolveError> {
    check_span(t)?;
    let g = *es.geometry();
    let t0 = u0.time;
    let m = g.points();
    let mut out = FieldVector::zeros(&g, t0 + t);

    for mode in es.modes() {
        let lambda = mode.eigenvalue;
        // Homogeneous part: e^(lambda t) v_k (z_k^T B u0).
        let mut coeff = Compensated::default();
        for i in 1..m - 1 {
            coeff.add(mode.left[i] * u0.values[i]);
        }
        let mut weight = (lambda * t).exp() * coeff.value();

        // Forcing convolution, weighted by the left edge entries.
        let (conv_minus, conv_plus) = match provider.convolution(lambda, t0, t) {
            Some(pair) => pair,
            None => {
                let tol = T::lit(QUAD_TOL);
                let minus = adaptive_gauss(
                    &|s| provider.value(t0 + s).0 * (lambda * (t - s)).exp(),
                    T::zero(),
                    t,
                    tol,
                )?;
                let plus = adaptive_gauss(
                    &|s| provider.value(t0 + s).1 * (lambda * (t - s)).exp(),
                    T::zero(),
                    t,
                    tol,
                )?;
                (minus.value, plus.value)
            }
        };
        weight += mode.left[0] * conv_minus + mode.left[m - 1] * conv_plus;

        for i in 0..m {
            out.values[i] += mode.right[i] * weight;
        }
    }

    // Forcing vector at the evaluation time enters the edges directly.
    let (f_minus, f_plus) = provider.value(t0 + t);
    out.values[0] += f_minus;
    out.values[m - 1] += f_plus;
    Ok(out)
}

/// Classical fourth-order one-step integration of the `2n-1` interior
/// equations with the edge values re-solved from the coupling constraint at
/// every stage; serves as an independent oracle for [`exact_solution`].
pub fn direct_integrate<T: Real>(
    op: &PatchOperator<T>,
    u0: &FieldVector<T>,
    provider: &dyn Forcing<T>,
    t: T,
    dt_micro: T,
) -> Result<FieldVector<T>, EvolveError> {
    check_span(t)?;
    if !(dt_micro > T::zero() && dt_micro <= T::lit(0.1)) {
        return Err(EvolveError::BadMicroStep { value: dt_micro.to_f64().unwrap_or(f64::NAN) });
    }
    let g = *op.geometry();
    let m = g.points();
    let n = g.half_width() as i64;

    let steps = (t / dt_micro).to_f64().unwrap_or(0.0).ceil().max(1.0) as usize;
    let h = t / T::of_int(steps as i64);

    // Interior state; edges are diagnostic.
    let mut state = u0.values.clone();
    let mut time = u0.time;

    let rhs = |interior_time: T, field: &Array1<T>| -> Result<Array1<T>, EvolveError> {
        let mut full = field.clone();
        let (fm, fp) = provider.value(interior_time);
        op.solve_edge_values(&mut full, fm, fp)?;
        let mut d = Array1::zeros(m);
        for j in -(n - 1)..=(n - 1) {
            let i = g.idx(j);
            d[i] = full[g.idx(j + 1)] - T::two() * full[i] + full[g.idx(j - 1)];
        }
        Ok(d)
    };

    let half = T::half();
    let sixth = T::one() / T::of_int(6);
    for _ in 0..steps {
        let k1 = rhs(time, &state)?;
        let k2 = rhs(time + half * h, &(&state + &(&k1 * (half * h))))?;
        let k3 = rhs(time + half * h, &(&state + &(&k2 * (half * h))))?;
        let k4 = rhs(time + h, &(&state + &(&k3 * h)))?;
        state = &state + &((&k1 + &(&k2 * T::two()) + &(&k3 * T::two()) + &k4) * (sixth * h));
        time += h;
    }

    let (fm, fp) = provider.value(time);
    op.solve_edge_values(&mut state, fm, fp)?;
    Ok(FieldVector { geometry: g, time, values: state })
}

/// One mesoscale step of size `delta_t` with the forcing held as the Taylor
/// jet sampled at the step start.  Returns the interior field `B u(delta_t)`
/// (edge entries zero):
///
/// `B u = sum_k B v_k z_k^T [mu_k B u0 + sum_{q=1..Q} f^(q-1) delta_t^q phi_q(lambda_k delta_t)]`,
///
/// where `phi_q` is the exponential-integrator function; its series form is
/// used for small `|lambda_k| delta_t` where the subtracted form
/// `lambda^(-q) (mu_k - truncated exponential)` would cancel catastrophically.
pub fn meso_step<T: Real>(
    kernel: &TransitionKernel<T>,
    u0: &FieldVector<T>,
    jet: &TaylorJet<T>,
) -> Result<FieldVector<T>, EvolveError> {
    if u0.geometry != kernel.geometry {
        return Err(EvolveError::GeometryMismatch);
    }
    let delta_t = kernel.delta_t;
    let m = kernel.geometry.points();
    let order = jet.order();

    let mut sums: Vec<Compensated<T>> = vec![Compensated::default(); m];
    for k in 0..kernel.modes() {
        let lambda = kernel.lambda(k);
        let (z_minus, z_plus) = kernel.edge_weights(k);
        let mut weight = kernel.mu(k) * kernel.coefficient(k, u0);
        let mut dt_pow = delta_t;
        for q in 1..=order {
            let (dm, dp) = jet.derivative(q - 1)?;
            weight += (z_minus * dm + z_plus * dp) * dt_pow * phi(q, lambda * delta_t);
            dt_pow *= delta_t;
        }
        for i in 1..m - 1 {
            sums[i].add(kernel.right[k][i] * weight);
        }
    }

    let mut out = FieldVector::zeros(&kernel.geometry, u0.time + delta_t);
    for i in 1..m - 1 {
        out.values[i] = sums[i].value();
    }
    Ok(out)
}

/// Per-mode, per-order forcing-derivative accumulators of a mesoscale run:
/// after `M` steps entry `(k, q)` equals
/// `sum_{m<M} mu_k^(M-m-1) f^q(m delta_t)` for each edge.
#[derive(Debug, Clone)]
pub struct MesoHistory<T> {
    accum_minus: Array2<T>,
    accum_plus: Array2<T>,
    steps: usize,
}

impl<T: Real> MesoHistory<T> {
    fn new(modes: usize, order: usize) -> Self {
        Self {
            accum_minus: Array2::zeros((modes, order)),
            accum_plus: Array2::zeros((modes, order)),
            steps: 0,
        }
    }

    /// Accumulated left-edge derivative sums, shape `(modes, Q)`.
    pub fn accum_minus(&self) -> &Array2<T> {
        &self.accum_minus
    }

    /// Accumulated right-edge derivative sums, shape `(modes, Q)`.
    pub fn accum_plus(&self) -> &Array2<T> {
        &self.accum_plus
    }

    /// Number of mesoscale steps folded in.
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn fold<'a>(&mut self, kernel: &TransitionKernel<T>, jet: &TaylorJet<T>) -> Result<(), EvolveError> {
        let (modes, order) = self.accum_minus.dim();
        for k in 0..modes {
            let mu = kernel.mu(k);
            for q in 0..order {
                let (dm, dp) = jet.derivative(q)?;
                self.accum_minus[(k, q)] = mu * self.accum_minus[(k, q)] + dm;
                self.accum_plus[(k, q)] = mu * self.accum_plus[(k, q)] + dp;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Runs `schedule.steps` mesoscale steps from `u0`, refreshing the provider
/// only at the schedule instants.  The state is reconstructed once at the end
/// from per-mode scalar accumulators (memory `O(modes * Q)`, no stored field
/// history); the result is identical to composing [`meso_step`] step by step.
pub fn meso_run<T: Real>(
    es: &EigenSystem<T>,
    u0: &FieldVector<T>,
    provider: &dyn Forcing<T>,
    schedule: &MesoSchedule<T>,
) -> Result<(FieldVector<T>, MesoHistory<T>), EvolveError> {
    let g = *es.geometry();
    if u0.geometry != g {
        return Err(EvolveError::GeometryMismatch);
    }
    let kernel = TransitionKernel::new(es, schedule.delta_t);
    let m = g.points();
    let order = schedule.taylor_order;

    let mut history = MesoHistory::new(kernel.modes(), order);
    for instant in schedule.instants() {
        let jet = TaylorJet::from_provider(provider, u0.time + instant, order)?;
        history.fold(&kernel, &jet)?;
    }

    let delta_t = schedule.delta_t;
    let mut sums: Vec<Compensated<T>> = vec![Compensated::default(); m];
    for k in 0..kernel.modes() {
        let lambda = kernel.lambda(k);
        let (z_minus, z_plus) = kernel.edge_weights(k);
        let mut weight = kernel.mu(k).powi(schedule.steps as i32) * kernel.coefficient(k, u0);
        let mut dt_pow = delta_t;
        for q in 1..=order {
            let held =
                z_minus * history.accum_minus[(k, q - 1)] + z_plus * history.accum_plus[(k, q - 1)];
            weight += held * dt_pow * phi(q, lambda * delta_t);
            dt_pow *= delta_t;
        }
        for i in 1..m - 1 {
            sums[i].add(kernel.right[k][i] * weight);
        }
    }

    let mut out = FieldVector::zeros(&g, u0.time + schedule.end_time());
    for i in 1..m - 1 {
        out.values[i] = sums[i].value();
    }
    Ok((out, history))
}

/// Exact per-site error of one held-forcing mesoscale step of size `delta_t`
/// starting at time zero, given the `Q`th forcing derivative on
/// `[0, delta_t]`:
///
/// `R_j = sum_k (v_k)_j int_0^dt [z_-(f_-^Q) + z_+(f_+^Q)](t') (dt-t')^Q phi_Q(lambda_k (dt-t')) dt'`
///
/// for interior `j`; the edge entries carry the constraint-induced rule
/// `R_(+-n) = -sum R_j` over the interior of the corresponding action region
/// (empty, hence zero, for `a = 0`).
pub fn remainder_exact<T: Real>(
    es: &EigenSystem<T>,
    provider: &dyn Forcing<T>,
    delta_t: T,
    taylor_order: usize,
) -> Result<FieldVector<T>, EvolveError> {
    check_span(delta_t)?;
    let g = *es.geometry();
    let m = g.points();
    let n = g.half_width() as i64;
    let q_order = taylor_order;
    let tol = T::lit(QUAD_TOL);

    let mut out = FieldVector::zeros(&g, delta_t);
    let mut sums: Vec<Compensated<T>> = vec![Compensated::default(); m];
    for mode in es.modes() {
        let lambda = mode.eigenvalue;
        let z_minus = mode.left[0];
        let z_plus = mode.left[m - 1];
        let kernel_weight = |s: T| -> T {
            let gap = delta_t - s;
            let (dm, dp) = provider.derivative(q_order, s);
            (z_minus * dm + z_plus * dp) * gap.powi(q_order as i32) * phi(q_order, lambda * gap)
        };
        let integral = adaptive_gauss(&kernel_weight, T::zero(), delta_t, tol)?.value;
        for i in 1..m - 1 {
            sums[i].add(mode.right[i] * integral);
        }
    }
    for i in 1..m - 1 {
        out.values[i] = sums[i].value();
    }

    for edge in [-n, n] {
        let mut acc = Compensated::default();
        for j in g.action(edge) {
            if j != edge {
                acc.add(out.get(j));
            }
        }
        out.set(edge, -acc.value());
    }
    Ok(out)
}

/// Writes a trajectory as CSV with columns `t,j,u_j`.
pub fn write_trajectory<T: Real, W: Write>(
    writer: &mut W,
    frames: &[FieldVector<T>],
) -> io::Result<()> {
    writeln!(writer, "t,j,u_j")?;
    for frame in frames {
        let n = frame.geometry.half_width() as i64;
        for j in -n..=n {
            writeln!(writer, "{:.17e},{j},{:.17e}", frame.time, frame.get(j))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{
        ConstantForcing, PolynomialForcing, RecordingForcing, SinusoidForcing, ZeroForcing,
    };
    use crate::spectral::analytic_eigensystem;

    fn setup(n: usize, a: usize) -> (PatchGeometry, PatchOperator<f64>, EigenSystem<f64>) {
        let g = PatchGeometry::new(n, a, 4 * n + 2).unwrap();
        let op = PatchOperator::new(&g, 0.91).unwrap();
        let es = analytic_eigensystem(&g, 0.91).unwrap();
        (g, op, es)
    }

    fn bump(g: &PatchGeometry) -> FieldVector<f64> {
        let n = g.half_width() as f64;
        FieldVector::from_fn(g, 0.0, |j| {
            let x = j as f64 / n;
            (-x * x).exp() * (1.0 + 0.5 * (3.0 * x).sin())
        })
    }

    #[test]
    fn transition_matrix_at_zero_reproduces_mass_plus_boundary() {
        for (n, a) in [(6usize, 0usize), (6, 2), (9, 7)] {
            let (_, op, es) = setup(n, a);
            let t0 = transition_matrix(&es, 0.0);
            let expect = op.mass() + &op.boundary_matrix();
            let worst = t0
                .iter()
                .zip(expect.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-9, "n={n} a={a}: residual {worst:e}");
        }
    }

    #[test]
    fn transition_semigroup_on_interior() {
        let (_, op, es) = setup(6, 2);
        let (t1, t2) = (0.1, 0.1);
        let a = transition_matrix(&es, t1).dot(op.mass()).dot(&transition_matrix(&es, t2)).dot(op.mass());
        let b = transition_matrix(&es, t1 + t2).dot(op.mass());
        let m = es.geometry().points();
        for r in 1..m - 1 {
            for c in 1..m - 1 {
                assert!((a[(r, c)] - b[(r, c)]).abs() < 1e-11, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn unforced_eigenmode_decays_exactly() {
        let (g, _, es) = setup(8, 3);
        let k = 2;
        let mode = &es.modes()[k];
        let u0 = FieldVector::from_values(&g, 0.0, mode.right.clone()).masked_interior();
        let t = 0.7;
        let got = exact_solution(&es, &u0, &ZeroForcing, t).unwrap();
        let decay = (mode.eigenvalue * t).exp();
        for j in -(8i64 - 1)..=(8 - 1) {
            let expect = decay * u0.get(j);
            assert!((got.get(j) - expect).abs() < 1e-12, "j={j}");
        }
    }

    #[test]
    fn null_data_stays_null() {
        let (g, op, es) = setup(6, 2);
        let u0 = FieldVector::zeros(&g, 0.0);
        let a = exact_solution(&es, &u0, &ZeroForcing, 0.5).unwrap();
        let b = direct_integrate(&op, &u0, &ZeroForcing, 0.5, 1e-3).unwrap();
        assert!(a.values().iter().all(|v| v.abs() < 1e-15));
        assert!(b.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn exact_matches_direct_for_constant_forcing() {
        let (g, op, es) = setup(20, 5);
        let u0 = bump(&g);
        let f = ConstantForcing { minus: 0.8, plus: -0.4 };
        let exact = exact_solution(&es, &u0, &f, 0.5).unwrap();
        let direct = direct_integrate(&op, &u0, &f, 0.5, 1e-3).unwrap();
        let diff = exact.interior_max_diff(&direct).unwrap();
        assert!(diff < 1e-8, "interior difference {diff:e}");
    }

    #[test]
    fn direct_integration_converges_at_order_four() {
        let (g, op, es) = setup(9, 2);
        let u0 = bump(&g);
        let f = SinusoidForcing::unit();
        let exact = exact_solution(&es, &u0, &f, 0.5).unwrap();
        let coarse = direct_integrate(&op, &u0, &f, 0.5, 0.05)
            .unwrap()
            .interior_max_diff(&exact)
            .unwrap();
        let fine = direct_integrate(&op, &u0, &f, 0.5, 0.025)
            .unwrap()
            .interior_max_diff(&exact)
            .unwrap();
        let ratio = coarse / fine;
        assert!(
            (11.0..22.0).contains(&ratio),
            "halving the step changed the error by {ratio:.2}x (coarse {coarse:e}, fine {fine:e})"
        );
        let _ = g;
    }

    #[test]
    fn direct_integration_decays_eigenmodes() {
        let (g, op, es) = setup(8, 3);
        let mode = &es.modes()[1];
        let u0 = FieldVector::from_values(&g, 0.0, mode.right.clone()).masked_interior();
        let got = direct_integrate(&op, &u0, &ZeroForcing, 0.5, 1e-3).unwrap();
        let decay = (mode.eigenvalue * 0.5).exp();
        for j in -(8i64 - 1)..=(8 - 1) {
            assert!((got.get(j) - decay * u0.get(j)).abs() < 1e-10, "j={j}");
        }
    }

    #[test]
    fn held_step_is_exact_for_polynomial_forcing() {
        let (g, _, es) = setup(20, 5);
        let u0 = bump(&g);
        let delta_t = 0.5;
        let kernel = TransitionKernel::new(&es, delta_t);

        // Constant forcing, Q = 1.
        let constant = ConstantForcing { minus: 0.8, plus: -0.4 };
        let jet = TaylorJet::from_provider(&constant, 0.0, 1).unwrap();
        let held = meso_step(&kernel, &u0, &jet).unwrap();
        let exact = exact_solution(&es, &u0, &constant, delta_t).unwrap();
        assert!(held.interior_max_diff(&exact).unwrap() < 1e-10);

        // Ramp forcing, Q = 2 is exact; Q = 1 deviates by exactly the
        // remainder field.
        let ramp = PolynomialForcing::new(vec![(0.0, 0.0), (1.0, 1.0)]);
        let jet2 = TaylorJet::from_provider(&ramp, 0.0, 2).unwrap();
        let held2 = meso_step(&kernel, &u0, &jet2).unwrap();
        let exact2 = exact_solution(&es, &u0, &ramp, delta_t).unwrap();
        assert!(held2.interior_max_diff(&exact2).unwrap() < 1e-10);

        let jet1 = TaylorJet::from_provider(&ramp, 0.0, 1).unwrap();
        let held1 = meso_step(&kernel, &u0, &jet1).unwrap();
        let remainder = remainder_exact(&es, &ramp, delta_t, 1).unwrap();
        let mut reconstructed = held1.clone();
        for j in -19i64..=19 {
            reconstructed.set(j, held1.get(j) + remainder.get(j));
        }
        assert!(reconstructed.interior_max_diff(&exact2).unwrap() < 1e-9);
    }

    #[test]
    fn held_step_without_forcing_is_pure_propagation() {
        let (g, _, es) = setup(9, 2);
        let u0 = bump(&g);
        let kernel = TransitionKernel::new(&es, 0.3);
        let jet = TaylorJet::from_provider(&ZeroForcing, 0.0, 1).unwrap();
        let held = meso_step(&kernel, &u0, &jet).unwrap();
        let exact = exact_solution(&es, &u0, &ZeroForcing, 0.3).unwrap();
        assert!(held.interior_max_diff(&exact).unwrap() < 1e-12);
    }

    #[test]
    fn consistency_triangle_for_smooth_forcing() {
        for a in [0usize, 5] {
            let (g, op, es) = setup(20, a);
            let u0 = bump(&g);
            let delta_t = 0.5;
            let f = SinusoidForcing::unit();
            let exact = exact_solution(&es, &u0, &f, delta_t).unwrap();
            let direct = direct_integrate(&op, &u0, &f, delta_t, 1e-3).unwrap();
            assert!(
                exact.interior_max_diff(&direct).unwrap() < 1e-8,
                "a={a}: exact vs direct"
            );
            for q in 1..=3usize {
                let kernel = TransitionKernel::new(&es, delta_t);
                let jet = TaylorJet::from_provider(&f, 0.0, q).unwrap();
                let held = meso_step(&kernel, &u0, &jet).unwrap();
                let remainder = remainder_exact(&es, &f, delta_t, q).unwrap();
                let mut worst = 0.0f64;
                for j in -19i64..=19 {
                    let triangle = exact.get(j) - held.get(j) - remainder.get(j);
                    worst = worst.max(triangle.abs());
                }
                assert!(worst < 1e-9, "a={a} Q={q}: triangle residual {worst:e}");
            }
        }
    }

    #[test]
    fn remainder_vanishes_when_jet_captures_forcing() {
        let (_, _, es) = setup(12, 4);
        let quadratic = PolynomialForcing::new(vec![(0.3, -1.0), (2.0, 0.7), (-0.5, 0.1)]);
        let r = remainder_exact(&es, &quadratic, 0.5, 3).unwrap();
        assert!(r.values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn remainder_edges_follow_action_rule() {
        let (g, _, es) = setup(12, 4);
        let f = SinusoidForcing::unit();
        let r = remainder_exact(&es, &f, 0.5, 1).unwrap();
        let n = g.half_width() as i64;
        for edge in [-n, n] {
            let sum: f64 = g.action(edge).filter(|j| *j != edge).map(|j| r.get(j)).sum();
            assert!((r.get(edge) + sum).abs() < 1e-14, "edge {edge}");
        }

        let (_, _, es0) = setup(12, 0);
        let r0 = remainder_exact(&es0, &f, 0.5, 1).unwrap();
        assert_eq!(r0.get(-12), 0.0);
        assert_eq!(r0.get(12), 0.0);
    }

    #[test]
    fn meso_run_composes_single_steps() {
        let (g, _, es) = setup(12, 3);
        let u0 = bump(&g);
        let f = SinusoidForcing::unit();
        let schedule = MesoSchedule::new(0.25, 4, 2).unwrap();
        let (run, history) = meso_run(&es, &u0, &f, &schedule).unwrap();
        assert_eq!(history.steps(), 4);

        let kernel = TransitionKernel::new(&es, 0.25);
        let mut state = u0;
        for m in 0..4 {
            let jet = TaylorJet::from_provider(&f, 0.25 * m as f64, 2).unwrap();
            state = meso_step(&kernel, &state, &jet).unwrap();
        }
        assert!(run.interior_max_diff(&state).unwrap() < 1e-12);
        assert!((run.time() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn meso_run_matches_exact_for_constant_forcing() {
        let (g, _, es) = setup(20, 5);
        let u0 = bump(&g);
        let f = ConstantForcing { minus: 0.8, plus: -0.4 };
        let schedule = MesoSchedule::new(0.5, 4, 1).unwrap();
        let (run, _) = meso_run(&es, &u0, &f, &schedule).unwrap();
        let exact = exact_solution(&es, &u0, &f, 2.0).unwrap();
        assert!(run.interior_max_diff(&exact).unwrap() < 1e-9);
    }

    #[test]
    fn meso_history_accumulates_weighted_derivatives() {
        let (g, _, es) = setup(8, 2);
        let u0 = FieldVector::zeros(&g, 0.0);
        let f = SinusoidForcing::unit();
        let schedule = MesoSchedule::new(0.4, 3, 2).unwrap();
        let (_, history) = meso_run(&es, &u0, &f, &schedule).unwrap();
        let kernel = TransitionKernel::new(&es, 0.4);
        for k in [0usize, 5, 10] {
            let mu = kernel.mu(k);
            for q in 0..2usize {
                let expect: f64 = (0..3)
                    .map(|m| mu.powi(2 - m as i32) * f.derivative(q, 0.4 * m as f64).1)
                    .sum();
                let got = history.accum_plus()[(k, q)];
                assert!((got - expect).abs() < 1e-13, "k={k} q={q}");
            }
        }
    }

    #[test]
    fn meso_run_queries_provider_only_at_instants() {
        let (g, _, es) = setup(8, 2);
        let u0 = bump(&g);
        let recorder = RecordingForcing::new(SinusoidForcing::unit());
        let schedule = MesoSchedule::new(0.5, 3, 2).unwrap();
        let _ = meso_run(&es, &u0, &recorder, &schedule).unwrap();
        let queries = recorder.queries();
        assert!(!queries.is_empty());
        for (t, order) in queries {
            assert!(order < 2);
            let nearest = (t / 0.5).round() * 0.5;
            assert!((t - nearest).abs() < 1e-12 && t < 1.5 - 1e-9, "query at t={t}");
        }
    }

    #[test]
    fn exact_solution_satisfies_coupling_condition() {
        let (g, op, es) = setup(12, 4);
        let u0 = bump(&g);
        let f = SinusoidForcing::unit();
        let t = 0.6;
        let u = exact_solution(&es, &u0, &f, t).unwrap();
        let span = 2.0 * g.core_half_width() as f64 + 1.0;
        let (fm, fp) = f.value(t);
        let core_avg = u.core_average();
        let n = g.half_width() as i64;
        for (edge, fval) in [(-n, fm), (n, fp)] {
            let action_avg: f64 =
                g.action(edge).map(|j| u.get(j)).sum::<f64>() / span;
            let rhs = op.cos_ell() * core_avg + fval / span;
            assert!((action_avg - rhs).abs() < 1e-10, "edge {edge}");
        }
    }

    #[test]
    fn order_scaling_of_held_step() {
        let (g, _, es) = setup(20, 5);
        let u0 = bump(&g);
        for q in 1..=3usize {
            // Forcing of polynomial degree exactly q: its (q+1)-th derivative
            // vanishes, so the held-step error isolates the delta_t^(q+1)
            // leading term instead of mixing in the next order.
            let mut coeffs = vec![(0.3, -0.2); q + 1];
            coeffs[q] = (0.8, -0.6);
            let f = PolynomialForcing::new(coeffs);
            let deltas = [0.4, 0.2, 0.1, 0.05];
            let mut logs = Vec::new();
            for &dt in &deltas {
                let kernel = TransitionKernel::new(&es, dt);
                let jet = TaylorJet::from_provider(&f, 0.0, q).unwrap();
                let held = meso_step(&kernel, &u0, &jet).unwrap();
                let exact = exact_solution(&es, &u0, &f, dt).unwrap();
                logs.push((dt.ln(), exact.interior_max_diff(&held).unwrap().ln()));
            }
            let mean_x: f64 = logs.iter().map(|p| p.0).sum::<f64>() / logs.len() as f64;
            let mean_y: f64 = logs.iter().map(|p| p.1).sum::<f64>() / logs.len() as f64;
            let slope: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum::<f64>()
                / logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum::<f64>();
            let target = (q + 1) as f64;
            assert!(
                (slope - target).abs() < 0.2,
                "Q={q}: fitted order {slope:.3}, expected {target}"
            );
        }
    }

    #[test]
    fn parameter_validation() {
        let (g, op, es) = setup(6, 2);
        let u0 = bump(&g);
        assert!(matches!(
            exact_solution(&es, &u0, &ZeroForcing, -0.1),
            Err(EvolveError::BadSpan { .. })
        ));
        assert!(matches!(
            direct_integrate(&op, &u0, &ZeroForcing, 0.5, 0.5),
            Err(EvolveError::BadMicroStep { .. })
        ));
        let other = FieldVector::zeros(&PatchGeometry::new(8, 2, 34).unwrap(), 0.0);
        let kernel = TransitionKernel::new(&es, 0.5);
        let jet = TaylorJet::from_provider(&ZeroForcing, 0.0, 1).unwrap();
        assert!(matches!(
            meso_step(&kernel, &other, &jet),
            Err(EvolveError::GeometryMismatch)
        ));
    }
}
