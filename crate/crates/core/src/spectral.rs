//! Closed-form eigen-system of the single-patch evolution operator.
//!
//! The generalized eigenproblem pairs the interior diffusion stencil with two
//! algebraic boundary rows expressing the inter-patch coupling condition.  Its
//! spectrum splits into two families: `2(n-a)-1` "patch" modes whose
//! wavenumbers depend on the coupling angle `ell = arccos(cos_ell)`, and `2a`
//! "action-region" modes that come in equal-eigenvalue pairs.  Right
//! eigenvectors are plain cosine/sine lattice waves; left eigenvectors add
//! localized corrections around the core and the action regions.

use std::io::{self, Write};

use ndarray::Array1;
use thiserror::Error;

use crate::geometry::PatchGeometry;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    /// Sort rank used to break eigenvalue ties: even modes first.
    #[inline]
    pub(crate) fn rank(self) -> u8 {
        match self {
            Parity::Even => 0,
            Parity::Odd => 1,
        }
    }
}

/// One eigentriple of the patch operator.
#[derive(Debug, Clone)]
pub struct Mode<T> {
    /// Mode index `k`.
    pub index: usize,
    /// Wavenumber `l_k` associated with the eigenvalue.
    pub wavenumber: T,
    /// Eigenvalue `lambda_k` (real, in `[-4, 0]`).
    pub eigenvalue: T,
    /// Right eigenvector over the full patch, `j = -n ..= n`.
    pub right: Array1<T>,
    /// Left eigenvector over the full patch; the edge entries repeat the
    /// adjacent interior entries.
    pub left: Array1<T>,
    /// Symmetry of the right eigenvector under `j -> -j`.
    pub parity: Parity,
}

/// Complete biorthonormalized eigen-system of one patch.
#[derive(Debug, Clone)]
pub struct EigenSystem<T> {
    modes: Vec<Mode<T>>,
    geometry: PatchGeometry,
    cos_ell: T,
    ell: T,
}

/// A pair of coinciding eigenvalues between the two mode families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneratePair<T> {
    /// Mode index in the patch family (odd `k <= 2(n-a-1)`).
    pub lower: usize,
    /// Mode index in the action family (odd `k > 2(n-a-1)`).
    pub upper: usize,
    /// The shared eigenvalue.
    pub eigenvalue: T,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("cos_ell = {value} is outside (0, 1); the eigenvector normalisation needs sin(ell) > 0")]
    CosEllOutOfRange { value: f64 },
    #[error("eigenvalue denominator '{context}' has magnitude {value:e} <= 1e-12; system is (near-)degenerate")]
    DenominatorVanishes { context: &'static str, value: f64 },
    #[error("degenerate spectrum: mode pairs {pairs:?} share an eigenvalue; closed forms are not a basis here")]
    Degenerate { pairs: Vec<(usize, usize)> },
}

const DENOMINATOR_GUARD: f64 = 1e-12;

#[inline]
fn sign_pow(exponent: i64) -> f64 {
    if exponent.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `(-1)^(ceil(x/2))` for possibly negative integer `x`.
#[inline]
fn sign_ceil_half(x: i64) -> f64 {
    sign_pow(x.div_euclid(2) + x.rem_euclid(2))
}

/// `(sin, cos)` of the rational angle `p*pi/q` (`q > 0`).  Range reduction is
/// done in integer arithmetic, so the argument handed to the library trig
/// never exceeds `pi/4` and the absolute error stays at machine level no
/// matter how large `p` is.  Multiples of `pi/2` come out exact, which the
/// near-vanishing normalisation denominators of almost-degenerate mode pairs
/// depend on: naive evaluation at arguments of tens of radians loses several
/// digits exactly where the formulas amplify them most.
pub(crate) fn trig_pi_frac<T: Real>(p: i64, q: i64) -> (T, T) {
    debug_assert!(q > 0);
    let mut r = p.rem_euclid(2 * q);
    let mut s_neg = false;
    let mut c_neg = false;
    if r >= q {
        // x -> x - pi negates both sin and cos.
        r -= q;
        s_neg = !s_neg;
        c_neg = !c_neg;
    }
    if 2 * r > q {
        // x -> pi - x keeps sin and negates cos.
        r = q - r;
        c_neg = !c_neg;
    }
    let (mut s, mut c) = if 4 * r > q {
        // x -> pi/2 - x swaps sin and cos; the residual argument is < pi/4.
        let arg = T::PI() * T::of_int(q - 2 * r) / T::of_int(2 * q);
        (arg.cos(), arg.sin())
    } else {
        let arg = T::PI() * T::of_int(r) / T::of_int(q);
        (arg.sin(), arg.cos())
    };
    if s_neg {
        s = -s;
    }
    if c_neg {
        c = -c;
    }
    (s, c)
}

/// `(sin, cos)` of `p*pi/q + offset`: the rational part goes through
/// [`trig_pi_frac`] and the leftover through the angle-addition formulas.
/// Used by the patch modes whose wavenumbers shift by a multiple of the
/// coupling angle, so only the (small) irrational part is evaluated directly.
pub(crate) fn trig_pi_frac_offset<T: Real>(p: i64, q: i64, offset: T) -> (T, T) {
    let (sa, ca) = trig_pi_frac::<T>(p, q);
    let (sb, cb) = (offset.sin(), offset.cos());
    (sa * cb + ca * sb, ca * cb - sa * sb)
}

impl<T: Real> EigenSystem<T> {
    pub(crate) fn from_parts(modes: Vec<Mode<T>>, geometry: PatchGeometry, cos_ell: T) -> Self {
        Self { modes, geometry, cos_ell, ell: cos_ell.acos() }
    }

    #[inline]
    pub fn modes(&self) -> &[Mode<T>] {
        &self.modes
    }

    #[inline]
    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    #[inline]
    pub fn cos_ell(&self) -> T {
        self.cos_ell
    }

    /// Coupling angle `ell = arccos(cos_ell)`.
    #[inline]
    pub fn ell(&self) -> T {
        self.ell
    }

    /// Largest deviation of `z_k^T B v_k'` from the identity, over all mode
    /// pairs.  `B` zeroes the patch edges, so only interior entries enter.
    pub fn biorthonormality_residual(&self) -> T {
        let n = self.geometry.half_width();
        let mut worst = T::zero();
        for (k, zk) in self.modes.iter().enumerate() {
            for (kp, vk) in self.modes.iter().enumerate() {
                let mut dot = T::zero();
                for i in 1..2 * n {
                    dot += zk.left[i] * vk.right[i];
                }
                let target = if k == kp { T::one() } else { T::zero() };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Dump all modes as CSV, one row per `(k, j)`.
    pub fn write_modes_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "k,l_k,lambda_k,j,v,z")?;
        for mode in &self.modes {
            for i in 0..self.geometry.points() {
                let j = self.geometry.coord(i);
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    mode.index, mode.wavenumber, mode.eigenvalue, j, mode.right[i], mode.left[i]
                )?;
            }
        }
        Ok(())
    }
}

/// Shared construction data for the closed-form eigenvectors.
struct Builder<T> {
    n: usize,
    a: usize,
    /// Reduced half-width `n - a`.
    b: usize,
    cos_ell: T,
    ell: T,
    sin_ell: T,
}

impl<T: Real> Builder<T> {
    fn new(g: &PatchGeometry, cos_ell: T) -> Result<Self, SpectralError> {
        let ok = cos_ell > T::zero() && cos_ell < T::one();
        if !ok {
            return Err(SpectralError::CosEllOutOfRange { value: lossy_f64(cos_ell) });
        }
        let ell = cos_ell.acos();
        let sin_ell = ell.sin();
        if sin_ell.abs() <= T::lit(DENOMINATOR_GUARD) {
            return Err(SpectralError::DenominatorVanishes {
                context: "sin(ell)",
                value: lossy_f64(sin_ell),
            });
        }
        Ok(Self {
            n: g.half_width(),
            a: g.core_half_width(),
            b: g.reduced_half_width(),
            cos_ell,
            ell,
            sin_ell,
        })
    }

    /// Wavenumber of patch-family mode `k`.
    fn patch_wavenumber(&self, k: usize) -> T {
        let base = T::of_int(k as i64 + 1);
        if k % 2 == 0 {
            let shift = T::two() * self.ell / T::PI() - T::one();
            base + T::lit(sign_pow((k / 2) as i64)) * shift
        } else {
            base
        }
    }

    /// Right eigenvector: cosine (even k) or sine (odd k) lattice wave.
    /// `trig(m)` supplies `(sin, cos)` of `m * theta`; arguments use |j| so
    /// parity is exact in floating point.
    fn wave_with(&self, trig: &dyn Fn(i64) -> (T, T), norm: T, even: bool) -> Array1<T> {
        let n = self.n as i64;
        let mut v = Array1::zeros(2 * self.n + 1);
        for j in -n..=n {
            let (s, c) = trig(j.abs());
            let idx = (j + n) as usize;
            v[idx] = if even {
                norm * c
            } else {
                T::of_int(j.signum()) * norm * s
            };
        }
        v
    }

    /// Response of the left eigenvector to the action region at edge `+n`,
    /// as a function of the signed coordinate `s`.  The two formula branches
    /// meet consistently at `s = n - a`.
    fn action_response(n: i64, a: i64, s: i64, w: &dyn Fn(usize) -> T) -> T {
        if s < n - 2 * a || s > n - 1 {
            T::zero()
        } else if s <= n - a {
            w((s - (n - 2 * a)) as usize)
        } else {
            w((n - s) as usize)
        }
    }

    /// Left eigenvector assembled from the free-wave part `z'` and the
    /// localized corrections `w`.  Each edge's action region contributes its
    /// own response; the `-n` response is the mirror image of the `+n` one
    /// (with a sign for odd modes).  For wide cores the bands overlap — with
    /// each other and with the core correction — and simply superpose.
    fn left_vector(
        &self,
        zprime: impl Fn(i64) -> T,
        w: &dyn Fn(usize) -> T,
        even: bool,
    ) -> Array1<T> {
        let n = self.n as i64;
        let a = self.a as i64;
        let mut z = Array1::zeros(2 * self.n + 1);
        for j in -(n - 1)..=(n - 1) {
            let s = j.abs();
            let mut value = zprime(j);
            if even && s <= a {
                value -= T::two() * self.cos_ell * w((a - s) as usize);
            }
            let plus = Self::action_response(n, a, j, w);
            let minus = Self::action_response(n, a, -j, w);
            value += if even { plus + minus } else { plus - minus };
            z[(j + n) as usize] = value;
        }
        z[0] = z[1];
        z[2 * self.n] = z[2 * self.n - 1];
        z
    }
}

#[inline]
fn lossy_f64<T: Real>(v: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&v).unwrap_or(f64::NAN)
}

/// All coinciding eigenvalue pairs between the odd patch-family and odd
/// action-family modes.  The test is exact integer arithmetic on wavenumbers:
/// `l_k1 (2a+1) == l_k2 2(n-a)`.
pub fn detect_degeneracy<T: Real>(g: &PatchGeometry, cos_ell: T) -> Vec<DegeneratePair<T>> {
    let b = g.reduced_half_width();
    let a = g.core_half_width();
    let _ = cos_ell;
    let mut pairs = Vec::new();
    if a == 0 || b < 2 {
        return pairs;
    }
    for k1 in (1..=2 * (b - 1)).step_by(2) {
        let l1 = (k1 + 1) as u64;
        for m in (1..=2 * a).step_by(2) {
            let l2 = (m + 1) as u64;
            if l1 * (2 * a as u64 + 1) == l2 * 2 * b as u64 {
                let sin_half = trig_pi_frac::<T>(l1 as i64, 4 * b as i64).0;
                let lambda = -T::lit(4.0) * sin_half * sin_half;
                pairs.push(DegeneratePair { lower: k1, upper: m + 2 * (b - 1), eigenvalue: lambda });
            }
        }
    }
    pairs
}

/// Closed-form biorthonormal eigen-system for patch geometry `g` and coupling
/// value `cos_ell`.  Fails on degenerate `(n, a)` combinations and on
/// vanishing normalisation denominators.
pub fn analytic_eigensystem<T: Real>(
    g: &PatchGeometry,
    cos_ell: T,
) -> Result<EigenSystem<T>, SpectralError> {
    let bld = Builder::new(g, cos_ell)?;
    let degenerate = detect_degeneracy(g, cos_ell);
    if !degenerate.is_empty() {
        return Err(SpectralError::Degenerate {
            pairs: degenerate.iter().map(|p| (p.lower, p.upper)).collect(),
        });
    }

    let n = bld.n;
    let a = bld.a;
    let b = bld.b;
    let mut modes: Vec<Mode<T>> = Vec::with_capacity(2 * n - 1);

    let b_t = T::of_int(b as i64);
    let norm_even = (b_t * bld.sin_ell).sqrt().recip();
    let norm_odd = b_t.sqrt().recip();

    // Patch family: k = 0 ..= 2(n-a-1); wavenumbers scale with 2(n-a).  Even
    // wavenumbers carry an irrational shift of 2*ell/pi, split into an exact
    // rational-pi part plus a small offset so range reduction stays exact.
    let b_i = b as i64;
    for k in 0..=2 * (b - 1) {
        let even = k % 2 == 0;
        let l = bld.patch_wavenumber(k);
        let c_i = k as i64 + 1;
        let s_i: i64 = match (even, (k / 2) % 2 == 0) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => -1,
        };
        let ell = bld.ell;
        // (sin, cos) of m*theta, theta = l pi / 2(n-a):  m*theta equals
        // m(c-s) pi / 2(n-a) + s m ell / (n-a) with integer c = k+1, s = +-1.
        let theta_trig = |m: i64| -> (T, T) {
            if s_i == 0 {
                trig_pi_frac(m * c_i, 2 * b_i)
            } else {
                let offset = T::of_int(s_i * m) * ell / T::of_int(b_i);
                trig_pi_frac_offset(m * (c_i - s_i), 2 * b_i, offset)
            }
        };
        // (sin, cos) of m*theta/2, the quarter angle of the w correction.
        let quarter_trig = |m: i64| -> (T, T) {
            if s_i == 0 {
                trig_pi_frac(m * c_i, 4 * b_i)
            } else {
                let offset = T::of_int(s_i * m) * ell / T::of_int(2 * b_i);
                trig_pi_frac_offset(m * (c_i - s_i), 4 * b_i, offset)
            }
        };
        let sin_half = quarter_trig(1).0;
        let lambda = -T::lit(4.0) * sin_half * sin_half;
        let norm = if even { norm_even } else { norm_odd };
        let right = bld.wave_with(&theta_trig, norm, even);

        // Correction amplitude w for this mode (only needed when a > 0).
        let sgn = T::lit(sign_ceil_half(k as i64 - 1));
        let denom = T::two() * quarter_trig(2 * a as i64 + 1).0;
        if a > 0 && denom.abs() <= T::lit(DENOMINATOR_GUARD) {
            return Err(SpectralError::DenominatorVanishes {
                context: "2 sin((2a+1) l_k pi / 4(n-a))",
                value: lossy_f64(denom),
            });
        }
        let cos_quarter = quarter_trig(1).1;
        let w = |i: usize| -> T {
            sgn * (cos_quarter - quarter_trig(2 * i as i64 + 1).1) / denom * norm
        };

        let zprime = |j: i64| -> T {
            let m = j.abs();
            if m > b_i {
                return T::zero();
            }
            if even {
                // ell - s m theta = -s m (c-s) pi / 2(n-a) + ell (b-m)/b.
                let offset = ell * T::of_int(b_i - m) / T::of_int(b_i);
                norm * trig_pi_frac_offset(-s_i * m * (c_i - s_i), 2 * b_i, offset).0
            } else {
                T::of_int(j.signum()) * norm * theta_trig(m).0
            }
        };

        let left = bld.left_vector(zprime, &w, even);
        modes.push(Mode {
            index: k,
            wavenumber: l,
            eigenvalue: lambda,
            right,
            left,
            parity: if even { Parity::Even } else { Parity::Odd },
        });
    }

    // Action family: k = m + 2(n-a-1), m = 1 ..= 2a; wavenumbers scale with
    // 2a+1 and eigenvalues arrive in equal pairs.  All angles here are exact
    // rationals of pi.
    let span = T::of_int((2 * a + 1) as i64);
    let span_i = 2 * a as i64 + 1;
    for m in 1..=2 * a {
        let k = m + 2 * (b - 1);
        let even = k % 2 == 0;
        let l_int = (2 * m.div_ceil(2)) as i64;
        let l = T::of_int(l_int);
        // (sin, cos) of mm*theta (theta = l pi / (2a+1)) and of mm*theta/2.
        let theta_trig = |mm: i64| trig_pi_frac::<T>(mm * l_int, span_i);
        let half_trig = |mm: i64| trig_pi_frac::<T>(mm * l_int, 2 * span_i);
        let sin_half = half_trig(1).0;
        let lambda = -T::lit(4.0) * sin_half * sin_half;
        let norm = span.sqrt().recip();
        let right = bld.wave_with(&theta_trig, norm, even);

        // The 1/sqrt(2a+1) scale is fixed by the normalisation z_k^T B v_k = 1
        // that the state-transition identity requires.
        let sgn = T::lit(sign_ceil_half(m as i64 - 2));
        let factor = if m % 2 == 1 {
            let denom = theta_trig(b_i).0;
            if denom.abs() <= T::lit(DENOMINATOR_GUARD) {
                return Err(SpectralError::DenominatorVanishes {
                    context: "sin((n-a) l_k pi / (2a+1))",
                    value: lossy_f64(denom),
                });
            }
            (span.sqrt() * denom).recip()
        } else {
            let denom = theta_trig(b_i).1 - bld.cos_ell;
            if denom.abs() <= T::lit(DENOMINATOR_GUARD) {
                return Err(SpectralError::DenominatorVanishes {
                    context: "cos((n-a) l_k pi / (2a+1)) - cos_ell",
                    value: lossy_f64(denom),
                });
            }
            (span.sqrt() * denom).recip()
        };
        let cos_half = half_trig(1).1;
        let w = |i: usize| -> T {
            sgn * (cos_half - half_trig(2 * i as i64 + 1).1) * factor
        };

        let left = bld.left_vector(|_| T::zero(), &w, even);
        modes.push(Mode {
            index: k,
            wavenumber: l,
            eigenvalue: lambda,
            right,
            left,
            parity: if even { Parity::Even } else { Parity::Odd },
        });
    }

    sort_modes(&mut modes);
    Ok(EigenSystem::from_parts(modes, *g, cos_ell))
}

/// Ascending `|lambda|`; equal pairs ordered even-parity first.
pub(crate) fn sort_modes<T: Real>(modes: &mut [Mode<T>]) {
    modes.sort_by(|x, y| {
        x.eigenvalue
            .abs()
            .partial_cmp(&y.eigenvalue.abs())
            .expect("real eigenvalues")
            .then(x.parity.rank().cmp(&y.parity.rank()))
    });
    // Floating-point noise can leave a nearly-equal pair odd-first; repair.
    for i in 1..modes.len() {
        let tol = T::lit(1e-9) * T::one().max(modes[i].eigenvalue.abs());
        if (modes[i].eigenvalue - modes[i - 1].eigenvalue).abs() < tol
            && modes[i - 1].parity == Parity::Odd
            && modes[i].parity == Parity::Even
        {
            modes.swap(i - 1, i);
        }
    }
}
