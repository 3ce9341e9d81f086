//! Assembly of the single-patch evolution operator and a dense numeric
//! eigensolver used to cross-check the closed-form eigen-system.
//!
//! The operator couples the second-difference stencil on interior points with
//! two algebraic rows at the patch edges.  Each edge row balances the mean
//! over the action region against the coupled mean over the core, so the edge
//! values are slaved to the interior.  Eliminating the edges yields a dense
//! `(2n-1)^2` matrix whose ordinary eigenproblem is equivalent to the
//! generalized one; reflection symmetry then splits it into independent even
//! and odd blocks with simple spectra.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::geometry::PatchGeometry;
use crate::linalg::{self, LinalgError};
use crate::scalar::Real;
use crate::spectral::{sort_modes, EigenSystem, Mode, Parity};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OperatorError {
    #[error("cos_ell = {value} must lie in (0, 1]")]
    BadCosEll { value: f64 },
    #[error("numeric spectrum has coinciding eigenvalue pairs {pairs:?}; eigenvectors are not separable")]
    DegenerateSpectrum { pairs: Vec<(f64, f64)> },
    #[error("dense eigenvalue iteration failed: {detail}")]
    EigenSolveFailed { detail: &'static str },
    #[error("eigenvector normalisation failed: z^T B v = {value:e} is numerically zero")]
    NormalisationFailed { value: f64 },
    #[error("eigen-system has {got} modes but the operator needs {expected} for a complete basis")]
    IncompleteBasis { expected: usize, got: usize },
    #[error("edge constraint row has vanishing diagonal; edge value is undetermined")]
    EdgeSolveSingular,
}

impl From<LinalgError> for OperatorError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::ComplexEigenvalues => {
                OperatorError::EigenSolveFailed { detail: "complex eigenvalues in a real-spectrum block" }
            }
            LinalgError::NoConvergence => {
                OperatorError::EigenSolveFailed { detail: "QR iteration did not converge" }
            }
        }
    }
}

/// Dense single-patch operator: mass matrix `B` and system matrix `L`.
#[derive(Debug, Clone)]
pub struct PatchOperator<T> {
    geometry: PatchGeometry,
    cos_ell: T,
    mass: Array2<T>,
    system: Array2<T>,
}

impl<T: Real> PatchOperator<T> {
    /// Assemble the operator for geometry `g` and coupling value `cos_ell`.
    ///
    /// `cos_ell` must lie in `(0, 1]`; values at or below `0.75` fall outside
    /// the range reachable by the nearest-neighbour coupling rule and only
    /// produce a warning so parameter sweeps can explore them.
    pub fn new(g: &PatchGeometry, cos_ell: T) -> Result<Self, OperatorError> {
        if !(cos_ell > T::zero() && cos_ell <= T::one()) {
            return Err(OperatorError::BadCosEll { value: to_f64(cos_ell) });
        }
        if cos_ell <= T::lit(0.75) {
            log::warn!(
                "cos_ell = {cos_ell} is at or below 0.75, outside the range generated by nearest-neighbour coupling"
            );
        }
        let n = g.half_width() as i64;
        let m = g.points();
        let mut mass = Array2::zeros((m, m));
        for i in 1..m - 1 {
            mass[(i, i)] = T::one();
        }
        let mut system = Array2::zeros((m, m));
        for j in -(n - 1)..=(n - 1) {
            let r = g.idx(j);
            system[(r, r)] = -T::two();
            system[(r, g.idx(j - 1))] = T::one();
            system[(r, g.idx(j + 1))] = T::one();
        }
        for edge in [-n, n] {
            let r = g.idx(edge);
            for j in g.action(edge) {
                system[(r, g.idx(j))] -= T::one();
            }
            for j in g.core() {
                system[(r, g.idx(j))] += cos_ell;
            }
        }
        Ok(Self { geometry: *g, cos_ell, mass, system })
    }

    #[inline]
    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    #[inline]
    pub fn cos_ell(&self) -> T {
        self.cos_ell
    }

    /// Mass matrix `B = diag(0, 1, ..., 1, 0)`.
    #[inline]
    pub fn mass(&self) -> &Array2<T> {
        &self.mass
    }

    /// System matrix `L`: stencil rows plus the two edge constraint rows.
    #[inline]
    pub fn system(&self) -> &Array2<T> {
        &self.system
    }

    /// Boundary matrix `A`: the edge rows and edge columns of `L`, zero
    /// elsewhere, with the four corner entries repeating `L`'s adjacent
    /// interior columns.  The corner rule is forced by the left-eigenvector
    /// edge convention `z_{+-n} = z_{+-(n-1)}`: the transition matrix at time
    /// zero then necessarily has equal corner and corner-adjacent entries, so
    /// `B + A` reproduces `sum_k v_k z_k^T` exactly.  For the common geometries
    /// `1 <= a <= n-2` the corners evaluate to `A_{+-n,+-n} = -1` and
    /// `A_{+-n,-+n} = 0`.
    pub fn boundary_matrix(&self) -> Array2<T> {
        let m = self.geometry.points();
        let mut a = Array2::zeros((m, m));
        for i in 0..m {
            a[(0, i)] = self.system[(0, i)];
            a[(m - 1, i)] = self.system[(m - 1, i)];
            a[(i, 0)] = self.system[(i, 0)];
            a[(i, m - 1)] = self.system[(i, m - 1)];
        }
        a[(0, 0)] = self.system[(0, 1)];
        a[(0, m - 1)] = self.system[(0, m - 2)];
        a[(m - 1, 0)] = self.system[(m - 1, 1)];
        a[(m - 1, m - 1)] = self.system[(m - 1, m - 2)];
        a
    }

    /// Overwrites the two edge entries of `values` with the unique values
    /// satisfying the constraint rows for the given edge forcing pair:
    /// row `+-n` of `L u + f = 0` solved for `u_{+-n}` given the interior.
    pub fn solve_edge_values(
        &self,
        values: &mut Array1<T>,
        f_minus: T,
        f_plus: T,
    ) -> Result<(), OperatorError> {
        let m = self.geometry.points();
        for (row, forcing) in [(0, f_minus), (m - 1, f_plus)] {
            let diag = self.system[(row, row)];
            if diag.abs() < T::lit(1e-12) {
                return Err(OperatorError::EdgeSolveSingular);
            }
            let mut acc = forcing;
            for col in 0..m {
                if col != row {
                    acc += self.system[(row, col)] * values[col];
                }
            }
            values[row] = -acc / diag;
        }
        Ok(())
    }

    /// Coefficients expressing an edge value as a combination of interior
    /// values: `u_edge = sum_j coeffs[j] u_j` (interior indexing, length
    /// `2n-1`).  Derived from the corresponding constraint row of `L`.
    pub fn edge_coefficients(&self, edge: i8) -> Array1<T> {
        let m = self.geometry.points();
        let r = if edge > 0 { m - 1 } else { 0 };
        let diag = self.system[(r, r)];
        let mut c = Array1::zeros(m - 2);
        for i in 1..m - 1 {
            c[i - 1] = -self.system[(r, i)] / diag;
        }
        c
    }

    /// Dense `(2n-1)^2` matrix of the edge-eliminated interior dynamics.  Its
    /// ordinary eigenproblem matches the generalized `(L - lambda B)` problem
    /// on both sides.
    pub fn reduced_matrix(&self) -> Array2<T> {
        let m = self.geometry.points();
        let mi = m - 2;
        let lminus = self.edge_coefficients(-1);
        let lplus = self.edge_coefficients(1);
        let mut d = Array2::zeros((mi, mi));
        for i in 0..mi {
            let row = i + 1;
            for j in 0..mi {
                d[(i, j)] = self.system[(row, j + 1)]
                    + self.system[(row, 0)] * lminus[j]
                    + self.system[(row, m - 1)] * lplus[j];
            }
        }
        d
    }

    /// Reflection-symmetric blocks of the reduced matrix.  The even block has
    /// size `n` (coordinates `0..n-1`), the odd block `n-1` (`1..n-1`).
    fn parity_blocks(&self) -> (Array2<T>, Array2<T>) {
        let n = self.geometry.half_width();
        let d = self.reduced_matrix();
        let c = n - 1; // reduced-matrix index of coordinate 0
        let even = Array2::from_shape_fn((n, n), |(i, j)| {
            let base = d[(c + i, c + j)];
            if j > 0 { base + d[(c + i, c - j)] } else { base }
        });
        let odd = Array2::from_shape_fn((n - 1, n - 1), |(i, j)| {
            d[(c + 1 + i, c + 1 + j)] - d[(c + 1 + i, c - 1 - j)]
        });
        (even, odd)
    }

    /// Eigen-system computed by dense QR iteration plus inverse iteration,
    /// entirely independent of the closed forms.  The returned system is
    /// biorthonormalized to working precision.
    pub fn numeric_eigensystem(&self) -> Result<EigenSystem<T>, OperatorError> {
        let n = self.geometry.half_width();
        let mi = 2 * n - 1;
        let (even_block, odd_block) = self.parity_blocks();

        let mut lambdas: Vec<(T, Parity)> = Vec::with_capacity(mi);
        for (block, parity) in [(&even_block, Parity::Even), (&odd_block, Parity::Odd)] {
            if block.nrows() == 0 {
                continue;
            }
            let eigs = linalg::dense_eigenvalues(block)?;
            let mut pairs = Vec::new();
            for w in eigs.windows(2) {
                if (w[1] - w[0]).abs() < T::lit(1e-9) * T::one().max(w[0].abs()) {
                    pairs.push((to_f64(w[0]), to_f64(w[1])));
                }
            }
            if !pairs.is_empty() {
                return Err(OperatorError::DegenerateSpectrum { pairs });
            }
            lambdas.extend(eigs.into_iter().map(|l| (l, parity)));
        }
        if lambdas.len() != mi {
            return Err(OperatorError::EigenSolveFailed { detail: "lost eigenvalues across parity blocks" });
        }

        let mut modes = Vec::with_capacity(mi);
        let mut rights_int: Vec<Array1<T>> = Vec::with_capacity(mi);
        let mut lefts_int: Vec<Array1<T>> = Vec::with_capacity(mi);
        for (idx, &(lambda, parity)) in lambdas.iter().enumerate() {
            let block = match parity {
                Parity::Even => &even_block,
                Parity::Odd => &odd_block,
            };
            let seed = 0x9e37_79b9 ^ ((idx as u64) << 8);
            let right_blk = solve_with_retries(block, lambda, false, seed)?;
            let left_blk = solve_with_retries(block, lambda, true, seed ^ 0xffff)?;
            let (v_int, z_int) = expand_parity(n, parity, &right_blk, &left_blk);
            rights_int.push(v_int);
            lefts_int.push(z_int);
            modes.push((idx, lambda, parity));
        }

        // Normalize right vectors over the full patch and fix the sign so the
        // largest-magnitude entry is positive.
        let lminus = self.edge_coefficients(-1);
        let lplus = self.edge_coefficients(1);
        let mut fulls: Vec<Array1<T>> = Vec::with_capacity(mi);
        for v_int in rights_int.iter_mut() {
            let full = expand_edges(v_int, &lminus, &lplus);
            let norm = full.iter().map(|x| *x * *x).sum::<T>().sqrt();
            let peak = full
                .iter()
                .cloned()
                .fold(T::zero(), |best, x| if x.abs() > best.abs() { x } else { best });
            let scale = if peak < T::zero() { -norm.recip() } else { norm.recip() };
            let scaled = full.mapv(|x| x * scale);
            v_int.mapv_inplace(|x| x * scale);
            fulls.push(scaled);
        }

        // First-pass left scaling so the Gram matrix is near the identity.
        for (z_int, v_int) in lefts_int.iter_mut().zip(rights_int.iter()) {
            let dot = z_int.dot(v_int);
            if dot.abs() < T::lit(1e-8) {
                return Err(OperatorError::NormalisationFailed { value: to_f64(dot) });
            }
            let inv = dot.recip();
            z_int.mapv_inplace(|x| x * inv);
        }

        // Global polish: replace Z by Z G^{-T} with G = Z^T V so that
        // z_k^T B v_k' is the identity to working precision.
        let mut gram = Array2::zeros((mi, mi));
        for (r, z) in lefts_int.iter().enumerate() {
            for (c, v) in rights_int.iter().enumerate() {
                gram[(r, c)] = z.dot(v);
            }
        }
        let mut gt = gram.t().to_owned();
        let mut perm = vec![0usize; mi];
        let floor = T::epsilon();
        linalg::lu_in_place(&mut gt, &mut perm, floor);
        let mut new_lefts: Vec<Array1<T>> = vec![Array1::zeros(mi); mi];
        for k in 0..mi {
            let mut e = Array1::zeros(mi);
            e[k] = T::one();
            linalg::lu_solve_in_place(&gt, &perm, &mut e);
            let mut zk = Array1::zeros(mi);
            for (j, z) in lefts_int.iter().enumerate() {
                let c = e[j];
                if c != T::zero() {
                    zk.scaled_add(c, z);
                }
            }
            new_lefts[k] = zk;
        }

        let mut out: Vec<Mode<T>> = Vec::with_capacity(mi);
        for ((idx, lambda, parity), (v_full, z_int)) in
            modes.into_iter().zip(fulls.into_iter().zip(new_lefts.into_iter()))
        {
            let m = self.geometry.points();
            let mut left = Array1::zeros(m);
            for i in 0..mi {
                left[i + 1] = z_int[i];
            }
            left[0] = left[1];
            left[m - 1] = left[m - 2];
            let wavenumber = recover_wavenumber(lambda, self.geometry.reduced_half_width());
            out.push(Mode { index: idx, wavenumber, eigenvalue: lambda, right: v_full, left, parity });
        }
        sort_modes(&mut out);
        for (i, mode) in out.iter_mut().enumerate() {
            mode.index = i;
        }
        Ok(EigenSystem::from_parts(out, self.geometry, self.cos_ell))
    }
}

/// Largest entry-wise residual of `sum_k v_k z_k^T = B + A` over the full
/// patch, given a complete biorthonormal eigen-system for the same operator.
pub fn verify_transition_identity<T: Real>(
    es: &EigenSystem<T>,
    op: &PatchOperator<T>,
) -> Result<T, OperatorError> {
    let m = op.geometry().points();
    let expected = m - 2;
    if es.modes().len() != expected {
        return Err(OperatorError::IncompleteBasis { expected, got: es.modes().len() });
    }
    let mut sum: Array2<T> = Array2::zeros((m, m));
    for mode in es.modes() {
        for r in 0..m {
            let vr = mode.right[r];
            if vr == T::zero() {
                continue;
            }
            for c in 0..m {
                sum[(r, c)] += vr * mode.left[c];
            }
        }
    }
    let target = op.mass() + &op.boundary_matrix();
    let mut worst = T::zero();
    for (s, t) in sum.iter().zip(target.iter()) {
        worst = worst.max((*s - *t).abs());
    }
    Ok(worst)
}

fn solve_with_retries<T: Real>(
    block: &Array2<T>,
    lambda: T,
    transpose: bool,
    seed: u64,
) -> Result<Array1<T>, OperatorError> {
    let mut last = LinalgError::NoConvergence;
    for attempt in 0..3u64 {
        match linalg::inverse_iteration(block, lambda, transpose, seed.wrapping_add(attempt * 1000)) {
            Ok(v) => return Ok(v),
            Err(e) => last = e,
        }
    }
    Err(last.into())
}

/// Map parity-block vectors back to interior coordinates `-(n-1) ..= n-1`.
fn expand_parity<T: Real>(
    n: usize,
    parity: Parity,
    right_blk: &Array1<T>,
    left_blk: &Array1<T>,
) -> (Array1<T>, Array1<T>) {
    let mi = 2 * n - 1;
    let c = n - 1;
    let mut v = Array1::zeros(mi);
    let mut z = Array1::zeros(mi);
    match parity {
        Parity::Even => {
            v[c] = right_blk[0];
            z[c] = T::two() * left_blk[0];
            for j in 1..n {
                v[c + j] = right_blk[j];
                v[c - j] = right_blk[j];
                z[c + j] = left_blk[j];
                z[c - j] = left_blk[j];
            }
        }
        Parity::Odd => {
            for j in 1..n {
                v[c + j] = right_blk[j - 1];
                v[c - j] = -right_blk[j - 1];
                z[c + j] = left_blk[j - 1];
                z[c - j] = -left_blk[j - 1];
            }
        }
    }
    (v, z)
}

fn expand_edges<T: Real>(v_int: &Array1<T>, lminus: &Array1<T>, lplus: &Array1<T>) -> Array1<T> {
    let mi = v_int.len();
    let mut full = Array1::zeros(mi + 2);
    for i in 0..mi {
        full[i + 1] = v_int[i];
    }
    full[0] = lminus.dot(v_int);
    full[mi + 1] = lplus.dot(v_int);
    full
}

/// Invert `lambda = -2(1 - cos(pi l / 2(n-a)))` for reporting purposes.
fn recover_wavenumber<T: Real>(lambda: T, b: usize) -> T {
    let c = (T::one() + lambda / T::two()).max(-T::one()).min(T::one());
    c.acos() * T::of_int(2 * b as i64) / T::PI()
}

#[inline]
fn to_f64<T: Real>(v: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&v).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::analytic_eigensystem;
    use approx::assert_relative_eq;

    fn geom(n: usize, a: usize) -> PatchGeometry {
        PatchGeometry::new(n, a, 4 * n + 2).unwrap()
    }

    #[test]
    fn assembled_rows_match_hand_computed_entries() {
        let op = PatchOperator::new(&geom(3, 1), 0.91f64).unwrap();
        let l = op.system();
        let g = geom(3, 1);
        // Interior row at j = 0.
        assert_eq!(l[(g.idx(0), g.idx(-1))], 1.0);
        assert_eq!(l[(g.idx(0), g.idx(0))], -2.0);
        assert_eq!(l[(g.idx(0), g.idx(1))], 1.0);
        // Right edge row: action {1,2,3} gets -1, core {-1,0,1} gets +cos_ell.
        assert_relative_eq!(l[(g.idx(3), g.idx(1))], -0.09, epsilon = 1e-15);
        assert_eq!(l[(g.idx(3), g.idx(2))], -1.0);
        assert_eq!(l[(g.idx(3), g.idx(3))], -1.0);
        assert_eq!(l[(g.idx(3), g.idx(-1))], 0.91);
        assert_eq!(l[(g.idx(3), g.idx(0))], 0.91);
        assert_eq!(l[(g.idx(3), g.idx(-2))], 0.0);
        assert_eq!(l[(g.idx(3), g.idx(-3))], 0.0);
        // Mirror edge row.
        assert_relative_eq!(l[(g.idx(-3), g.idx(-1))], -0.09, epsilon = 1e-15);
        assert_eq!(l[(g.idx(-3), g.idx(-3))], -1.0);
    }

    #[test]
    fn unbuffered_edge_row_is_pointwise() {
        let op = PatchOperator::new(&geom(20, 0), 0.91f64).unwrap();
        let g = geom(20, 0);
        let l = op.system();
        assert_eq!(l[(g.idx(20), g.idx(20))], -1.0);
        assert_eq!(l[(g.idx(20), g.idx(0))], 0.91);
        for j in -20i64..=19 {
            if j != 0 {
                assert_eq!(l[(g.idx(20), g.idx(j))], 0.0, "j={j}");
            }
        }
    }

    #[test]
    fn boundary_matrix_extracts_edge_rows_and_columns() {
        let op = PatchOperator::new(&geom(4, 2), 0.85f64).unwrap();
        let a = op.boundary_matrix();
        let g = geom(4, 2);
        let m = g.points();
        assert_eq!(a[(g.idx(4), g.idx(4))], -1.0);
        assert_eq!(a[(g.idx(4), g.idx(-4))], 0.0);
        assert_eq!(a[(g.idx(-4), g.idx(-4))], -1.0);
        for j in -3i64..=3 {
            let expect = if j == 3 { 1.0 } else { 0.0 };
            assert_eq!(a[(g.idx(j), g.idx(4))], expect, "column entry j={j}");
            let expect_m = if j == -3 { 1.0 } else { 0.0 };
            assert_eq!(a[(g.idx(j), g.idx(-4))], expect_m);
        }
        // Interior block is zero.
        for r in 1..m - 1 {
            for c in 1..m - 1 {
                assert_eq!(a[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn boundary_matrix_corners_follow_the_adjacent_column() {
        // Unbuffered patch: the edge row touches nothing next to the corners.
        let a0 = PatchOperator::new(&geom(5, 0), 0.91f64).unwrap().boundary_matrix();
        assert_eq!(a0[(10, 10)], 0.0);
        assert_eq!(a0[(10, 0)], 0.0);
        assert_eq!(a0[(0, 0)], 0.0);
        // Mid-range core: the classic -1 / 0 corners.
        let a2 = PatchOperator::new(&geom(5, 2), 0.91f64).unwrap().boundary_matrix();
        assert_eq!(a2[(10, 10)], -1.0);
        assert_eq!(a2[(10, 0)], 0.0);
        // Core as wide as possible: action and core both reach the far side.
        let a4 = PatchOperator::new(&geom(5, 4), 0.91f64).unwrap().boundary_matrix();
        assert_relative_eq!(a4[(10, 10)], -1.0 + 0.91, epsilon = 1e-15);
        assert_relative_eq!(a4[(10, 0)], 0.91, epsilon = 1e-15);
        assert_relative_eq!(a4[(0, 0)], -1.0 + 0.91, epsilon = 1e-15);
        assert_relative_eq!(a4[(0, 10)], 0.91, epsilon = 1e-15);
    }

    #[test]
    fn reduced_matrix_folds_constraints_into_adjacent_rows() {
        let op = PatchOperator::new(&geom(3, 1), 0.91f64).unwrap();
        let d = op.reduced_matrix();
        // Row of coordinate 2 (index 4): stencil + right-edge elimination.
        // u_3 = -u_2 - 0.09 u_1 + 0.91 u_0 + 0.91 u_{-1}.
        assert_relative_eq!(d[(4, 4)], -3.0, epsilon = 1e-15); // -2 + (-1)
        assert_relative_eq!(d[(4, 3)], 1.0 - 0.09, epsilon = 1e-15);
        assert_relative_eq!(d[(4, 2)], 0.91, epsilon = 1e-15);
        assert_relative_eq!(d[(4, 1)], 0.91, epsilon = 1e-15);
        assert_relative_eq!(d[(4, 0)], 0.0, epsilon = 1e-15);
        // Purely interior row is untouched.
        assert_eq!(d[(2, 1)], 1.0);
        assert_eq!(d[(2, 2)], -2.0);
        assert_eq!(d[(2, 3)], 1.0);
        assert_eq!(d[(2, 0)], 0.0);
    }

    #[test]
    fn eigenvector_of_reduced_matrix_solves_generalized_problem() {
        let op = PatchOperator::new(&geom(6, 2), 0.91f64).unwrap();
        let es = op.numeric_eigensystem().unwrap();
        let l = op.system();
        let b = op.mass();
        for mode in es.modes() {
            // (L - lambda B) v = 0 over every row, including edge rows.
            for r in 0..13 {
                let mut acc = 0.0;
                for c in 0..13 {
                    acc += (l[(r, c)] - mode.eigenvalue * b[(r, c)]) * mode.right[c];
                }
                assert!(acc.abs() < 1e-12, "row {r} mode {} residual {acc:e}", mode.index);
            }
        }
    }

    #[test]
    fn numeric_left_vectors_satisfy_reduced_adjoint_problem() {
        let op = PatchOperator::new(&geom(6, 2), 0.91f64).unwrap();
        let es = op.numeric_eigensystem().unwrap();
        let d = op.reduced_matrix();
        for mode in es.modes() {
            let mut worst = 0.0f64;
            for c in 0..11 {
                let mut acc = 0.0;
                for r in 0..11 {
                    acc += mode.left[r + 1] * d[(r, c)];
                }
                acc -= mode.eigenvalue * mode.left[c + 1];
                worst = worst.max(acc.abs());
            }
            assert!(worst < 1e-9, "mode {}: adjoint residual {worst:e}", mode.index);
        }
    }

    #[test]
    fn smallest_geometry_matches_lattice_eigenvalues() {
        // n=2, a=0: three modes; the middle one sits exactly at -2.
        let op = PatchOperator::new(&geom(2, 0), 0.91f64).unwrap();
        let es = op.numeric_eigensystem().unwrap();
        assert_eq!(es.modes().len(), 3);
        assert_relative_eq!(es.modes()[1].eigenvalue, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn numeric_biorthonormality_is_machine_tight() {
        for (n, a, cos_ell) in [(6, 2, 0.91), (12, 4, 0.75), (20, 5, 0.95)] {
            let op = PatchOperator::new(&geom(n, a), cos_ell).unwrap();
            let es = op.numeric_eigensystem().unwrap();
            let res = es.biorthonormality_residual();
            assert!(res < 1e-12, "n={n} a={a}: residual {res:e}");
        }
    }

    #[test]
    fn numeric_agrees_with_closed_forms() {
        for (n, a, cos_ell) in [(5usize, 0usize, 0.91f64), (6, 2, 0.91), (9, 4, 0.85), (20, 5, 0.65)]
        {
            let g = geom(n, a);
            let op = PatchOperator::new(&g, cos_ell).unwrap();
            let numeric = op.numeric_eigensystem().unwrap();
            let analytic = analytic_eigensystem(&g, cos_ell).unwrap();
            assert_eq!(numeric.modes().len(), analytic.modes().len());
            for (nm, am) in numeric.modes().iter().zip(analytic.modes()) {
                assert!(
                    (nm.eigenvalue - am.eigenvalue).abs() < 1e-11,
                    "n={n} a={a}: eigenvalues {} vs {}",
                    nm.eigenvalue,
                    am.eigenvalue
                );
                assert_eq!(nm.parity, am.parity, "n={n} a={a} k={}", am.index);
            }
        }
    }

    #[test]
    fn transition_identity_holds_for_both_constructions() {
        for (n, a, cos_ell) in [(5usize, 0usize, 0.91), (6, 2, 0.91), (20, 5, 0.85), (5, 4, 0.91)] {
            let g = geom(n, a);
            let op = PatchOperator::new(&g, cos_ell).unwrap();
            let numeric = op.numeric_eigensystem().unwrap();
            let analytic = analytic_eigensystem(&g, cos_ell).unwrap();
            let rn = verify_transition_identity(&numeric, &op).unwrap();
            let ra = verify_transition_identity(&analytic, &op).unwrap();
            assert!(rn < 1e-10, "numeric n={n} a={a}: {rn:e}");
            assert!(ra < 1e-10, "analytic n={n} a={a}: {ra:e}");
        }
    }

    #[test]
    fn degenerate_geometry_is_reported_not_mangled() {
        let op = PatchOperator::new(&geom(4, 1), 0.91f64).unwrap();
        match op.numeric_eigensystem() {
            Err(OperatorError::DegenerateSpectrum { pairs }) => {
                assert_eq!(pairs.len(), 1);
                let expect = -2.0 * (1.0 - (2.0 * std::f64::consts::PI / 3.0).cos());
                assert_relative_eq!(pairs[0].0, expect, epsilon = 1e-9);
            }
            other => panic!("expected degenerate-spectrum error, got {other:?}"),
        }
    }

    #[test]
    fn cos_ell_validation() {
        assert!(matches!(
            PatchOperator::new(&geom(4, 1), 0.0f64),
            Err(OperatorError::BadCosEll { .. })
        ));
        assert!(matches!(
            PatchOperator::new(&geom(4, 1), 1.2f64),
            Err(OperatorError::BadCosEll { .. })
        ));
        assert!(PatchOperator::new(&geom(4, 1), 1.0f64).is_ok());
    }

    #[test]
    fn incomplete_basis_is_rejected_by_identity_check() {
        let g = geom(6, 2);
        let op = PatchOperator::new(&g, 0.91f64).unwrap();
        let es = analytic_eigensystem(&g, 0.91f64).unwrap();
        let truncated = EigenSystem::from_parts(es.modes()[..5].to_vec(), g, 0.91);
        assert!(matches!(
            verify_transition_identity(&truncated, &op),
            Err(OperatorError::IncompleteBasis { expected: 11, got: 5 })
        ));
    }

    #[test]
    fn solved_edges_satisfy_the_constraint_rows() {
        for (n, a) in [(6usize, 0usize), (6, 2), (9, 7)] {
            let g = geom(n, a);
            let op = PatchOperator::new(&g, 0.91f64).unwrap();
            let m = g.points();
            let mut u = Array1::from_shape_fn(m, |i| 0.3 + (i as f64 * 0.7).sin());
            let (f_minus, f_plus) = (0.4, -1.1);
            op.solve_edge_values(&mut u, f_minus, f_plus).unwrap();
            for (row, f) in [(0, f_minus), (m - 1, f_plus)] {
                let residual: f64 =
                    (0..m).map(|c| op.system()[(row, c)] * u[c]).sum::<f64>() + f;
                assert!(residual.abs() < 1e-12, "row {row} residual {residual:e}");
            }
        }
    }

    #[test]
    fn mode_sum_maps_edge_forcing_consistently() {
        // For forcing-shaped vectors (f_-, 0, ..., 0, f_+) the rank-one mode
        // matrices satisfy B sum_k v_k z_k^T f = f + L f.
        for (n, a) in [(5usize, 0usize), (8, 3), (9, 8)] {
            let g = geom(n, a);
            let op = PatchOperator::new(&g, 0.91f64).unwrap();
            let es = analytic_eigensystem(&g, 0.91f64).unwrap();
            let m = g.points();
            let mut f = Array1::<f64>::zeros(m);
            f[0] = 0.8;
            f[m - 1] = -1.3;

            let mut mapped = Array1::<f64>::zeros(m);
            for mode in es.modes() {
                let weight = mode.left[0] * f[0] + mode.left[m - 1] * f[m - 1];
                for i in 1..m - 1 {
                    mapped[i] += mode.right[i] * weight;
                }
            }

            let expect = &f + &op.system().dot(&f);
            for i in 0..m {
                assert!(
                    (mapped[i] - expect[i]).abs() < 1e-10,
                    "n={n} a={a} entry {i}: {} vs {}",
                    mapped[i],
                    expect[i]
                );
            }
        }
    }
}
