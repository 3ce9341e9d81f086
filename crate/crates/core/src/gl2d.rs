//! Two-dimensional complex Ginzburg-Landau dynamics on a sparse periodic grid
//! of square patches, comparing per-micro-step neighbour exchange against
//! mesoscale exchange.
//!
//! Each patch solves the lattice equation
//! `du/dt = (1 + i*alpha) * lap4(u) + u - (1 + i*beta) * u |u|^2`
//! (`lap4` is the unscaled 5-point discrete Laplacian) at interior points
//! `|j_x|, |j_y| <= n-1`.  The four patch edges are not evolved: every edge
//! value is slaved to an interpolation built from the patch's own centre
//! value and the centre values of the four neighbouring patches,
//!
//! `u_edge(t) = U_self(t) * cos_ell(j_x, j_y) + f(t_exchange)`,
//!
//! where `f` blends the neighbour centres with quadratic-interpolation
//! weights.  The self term is always evaluated live, so the constraint tracks
//! the patch's internal dynamics, while the neighbour data in `f` refreshes
//! only when patches exchange messages: every integrator step under
//! [`CouplingMode::Continuous`] (the communication-heavy baseline) or every
//! mesoscale interval `delta_t` under [`CouplingMode::Mesoscale`].  With
//! `delta_t` equal to the integrator step the two cadences coincide exactly.
//!
//! Corner values (`|j_x| = |j_y| = n`) are carried in storage but never read
//! by the interior update and never constrained.

use std::io::{self, Write};

use ndarray::{s, Array2, Array4, ArrayView2, ArrayViewMut2};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scalar::{Compensated, Real};

/// Blow-up guard: any non-corner magnitude beyond this aborts the run.
const BLOW_UP_LIMIT: f64 = 1e6;

/// Relative slack when checking that a ratio of configured lengths or times
/// is an integer.
const RATIO_TOL: f64 = 1e-9;

/// Number of coarse steps taken by the start-up halving probe.
const PROBE_STEPS: usize = 8;

/// Domain-separation tag mixed into every per-point noise key.
const NOISE_STREAM_TAG: u64 = 1;

/// Failure modes of the Ginzburg-Landau patch simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlError {
    /// A scalar parameter is missing its required sign or finiteness.
    #[error("{name} must be finite and strictly positive: got {value}")]
    BadParameter { name: &'static str, value: f64 },
    /// The macroscale spacing must hold an integer number of microscale cells.
    #[error("macroscale spacing must be an integer multiple of the microscale spacing: H/h = {ratio}")]
    SpacingMismatch { ratio: f64 },
    /// The periodic domain must hold an integer number of macroscale cells.
    #[error("domain width must be an integer multiple of the macroscale spacing: width/H = {ratio}")]
    DomainMismatch { ratio: f64 },
    /// Patches of half-width `n` with `2n >= H/h` touch or overlap.
    #[error("patches must not touch: need n*h/H < 1/2, got n = {n} with H/h = {big_n}")]
    PatchesOverlap { n: usize, big_n: usize },
    /// The mesoscale interval must hold an integer number of micro steps.
    #[error("mesoscale interval must be a positive integer multiple of the micro step: delta_t/dt_micro = {ratio}")]
    CadenceMismatch { ratio: f64 },
    /// The requested horizon must hold an integer number of micro steps.
    #[error("end time must be a nonnegative integer multiple of the micro step: t_end/dt_micro = {ratio}")]
    HorizonMismatch { ratio: f64 },
    /// Snapshots can only be taken on the integrator's time grid.
    #[error("snapshot time {time} does not lie on the run's micro-step grid")]
    SnapshotOffGrid { time: f64 },
    /// Corner values carry no coupling condition.
    #[error("({jx}, {jy}) is a patch corner: corner values are never constrained")]
    CornerIndex { jx: isize, jy: isize },
    /// Coupling conditions exist only on the four patch edges.
    #[error("({jx}, {jy}) is not a patch-edge point")]
    NotAnEdge { jx: isize, jy: isize },
    /// A microscale magnitude left the trusted range during time stepping.
    #[error("field magnitude exceeded {BLOW_UP_LIMIT:e} at t = {time}: microscale blow-up")]
    BlowUp { time: f64 },
    /// The start-up halving probe rejected the configured micro step.
    #[error("micro step {dt} failed the halving stability probe: deviation {deviation:e}")]
    UnstableMicroStep { dt: f64, deviation: f64 },
    /// Queries must name a time that the run actually recorded.
    #[error("time {time} is not recorded in this run")]
    TimeNotRecorded { time: f64 },
    /// The two operands live on different patch grids.
    #[error("operands use different patch grids and cannot be combined")]
    GridMismatch,
}

/// Neighbour-data refresh cadence of a patch run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// Neighbour centre values refresh every integrator step.
    Continuous,
    /// Neighbour centre values refresh every mesoscale interval `delta_t`.
    Mesoscale,
}

impl std::fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CouplingMode::Continuous => write!(f, "continuous"),
            CouplingMode::Mesoscale => write!(f, "mesoscale"),
        }
    }
}

/// Parameters of the Ginzburg-Landau patch experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlConfig<T> {
    /// Imaginary part of the diffusion coefficient `1 + i*alpha`.
    pub alpha: T,
    /// Imaginary part of the cubic coefficient `1 + i*beta`.
    pub beta: T,
    /// Side length of the periodic square domain.
    pub domain_width: T,
    /// Microscale lattice spacing.
    pub h: T,
    /// Macroscale lattice spacing (patch-centre separation).
    pub big_h: T,
    /// Patch half-width in microscale cells; patch side is `2n+1` points.
    pub n: usize,
    /// Inter-patch coupling strength; `0` isolates the patches.
    pub gamma: T,
    /// Mesoscale exchange interval.
    pub delta_t: T,
    /// Micro integrator step.
    pub dt_micro: T,
    /// Final time of the run.
    pub t_end: T,
    /// Seed of the counter-based initial-noise generator.
    pub seed: u64,
    /// Amplitude of the sinusoidal part of the initial condition.
    pub init_amplitude: T,
    /// Standard deviation of the real Gaussian initial noise.
    pub noise_std: T,
    /// Use the literal asymmetric edge weight `1 - (r_x^2 - r_y^2)*gamma`
    /// instead of the symmetric `1 - (r_x^2 + r_y^2)*gamma`.  The asymmetric
    /// variant breaks x-y symmetry and does not reproduce constant fields;
    /// it exists for comparison only.
    pub as_printed: bool,
}

impl<T: Real> Default for GlConfig<T> {
    /// Reference configuration: periodic `20 x 20` domain, `4 x 4` patches
    /// (`H = 5`, `h = 0.25`, so `N = 20`), patch half-width `6` (`r = 0.3`),
    /// plane-wave parameters `alpha = 1`, `beta = 2`, full coupling, and a
    /// sinusoid of amplitude `0.5` plus real `N(0, 0.8)` noise.
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::two(),
            domain_width: T::lit(20.0),
            h: T::lit(0.25),
            big_h: T::lit(5.0),
            n: 6,
            gamma: T::one(),
            delta_t: T::lit(0.2),
            dt_micro: T::lit(1e-3),
            t_end: T::lit(0.4),
            seed: 0,
            init_amplitude: T::half(),
            noise_std: T::lit(0.8),
            as_printed: false,
        }
    }
}

/// Integer shape of a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlLattice {
    /// Microscale cells per macroscale cell, `N = H/h`.
    pub big_n: usize,
    /// Patches along each side of the periodic domain.
    pub patches_per_side: usize,
}

/// Rounds `ratio` to an integer, or reports `err` if it is not one.
fn integer_ratio<T: Real>(ratio: T, err: fn(f64) -> GlError) -> Result<usize, GlError> {
    let r = ratio.to_f64().unwrap_or(f64::NAN);
    let rounded = r.round();
    if !r.is_finite() || rounded < 1.0 || (r - rounded).abs() > RATIO_TOL * r.abs().max(1.0) {
        return Err(err(r));
    }
    Ok(rounded as usize)
}

impl<T: Real> GlConfig<T> {
    /// Validates the geometric invariants and returns the lattice shape.
    ///
    /// Requires `H/h` and `width/H` to be integers (to machine slack) and the
    /// patches to leave a gap: `n*h/H < 1/2`.
    pub fn lattice(&self) -> Result<GlLattice, GlError> {
        for (name, value) in [
            ("domain_width", self.domain_width),
            ("h", self.h),
            ("big_h", self.big_h),
            ("dt_micro", self.dt_micro),
        ] {
            let v = value.to_f64().unwrap_or(f64::NAN);
            if !v.is_finite() || v <= 0.0 {
                return Err(GlError::BadParameter { name, value: v });
            }
        }
        for (name, value) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("t_end", self.t_end),
            ("init_amplitude", self.init_amplitude),
            ("noise_std", self.noise_std),
            ("delta_t", self.delta_t),
        ] {
            let v = value.to_f64().unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(GlError::BadParameter { name, value: v });
            }
        }
        if self.n == 0 {
            return Err(GlError::BadParameter { name: "n", value: 0.0 });
        }
        let big_n = integer_ratio(self.big_h / self.h, |ratio| GlError::SpacingMismatch { ratio })?;
        let patches_per_side = integer_ratio(self.domain_width / self.big_h, |ratio| {
            GlError::DomainMismatch { ratio }
        })?;
        if 2 * self.n >= big_n {
            return Err(GlError::PatchesOverlap { n: self.n, big_n });
        }
        Ok(GlLattice { big_n, patches_per_side })
    }

    /// Interpolation offset `r_j = j*h/H` of the microscale offset `j`.
    pub fn interp_offset(&self, j: isize) -> T {
        T::of_int(j as i64) * self.h / self.big_h
    }
}

/// Microscale fields of every patch: a periodic `P x P` grid of patches, each
/// holding `(2n+1) x (2n+1)` complex lattice values indexed by the signed
/// offsets `j_x, j_y = -n..=n` from the patch centre.
///
/// The four corner values of each patch are dead storage: the interior update
/// never reads them and no coupling condition constrains them.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid2D<T> {
    patches_per_side: usize,
    n: usize,
    data: Array4<Complex<T>>,
}

impl<T: Real> PatchGrid2D<T> {
    /// An all-zero grid of `patches_per_side^2` patches of half-width `n`.
    pub fn new(patches_per_side: usize, n: usize) -> Self {
        let side = 2 * n + 1;
        Self {
            patches_per_side,
            n,
            data: Array4::zeros((patches_per_side, patches_per_side, side, side)),
        }
    }

    /// Patch half-width `n`.
    pub fn half_width(&self) -> usize {
        self.n
    }

    /// Number of patches along each side of the periodic macroscale grid.
    pub fn patches_per_side(&self) -> usize {
        self.patches_per_side
    }

    /// Points along each side of one patch, `2n+1`.
    pub fn points_per_side(&self) -> usize {
        2 * self.n + 1
    }

    /// Storage index of the signed offset `j`.
    fn idx(&self, j: isize) -> usize {
        let shifted = j + self.n as isize;
        assert!(
            (0..self.points_per_side() as isize).contains(&shifted),
            "offset {j} outside the patch half-width {}",
            self.n
        );
        shifted as usize
    }

    /// Value at signed offsets `(j_x, j_y)` of patch `(i_x, i_y)`.
    pub fn get(&self, ix: usize, iy: usize, jx: isize, jy: isize) -> Complex<T> {
        self.data[[ix, iy, self.idx(jx), self.idx(jy)]]
    }

    /// Overwrites the value at signed offsets `(j_x, j_y)` of patch `(i_x, i_y)`.
    pub fn set(&mut self, ix: usize, iy: usize, jx: isize, jy: isize, value: Complex<T>) {
        let (x, y) = (self.idx(jx), self.idx(jy));
        self.data[[ix, iy, x, y]] = value;
    }

    /// Centre value of patch `(i_x, i_y)` — the macroscale field of the patch.
    pub fn centre(&self, ix: usize, iy: usize) -> Complex<T> {
        self.data[[ix, iy, self.n, self.n]]
    }

    /// Read-only view of one patch's `(2n+1) x (2n+1)` field.
    pub fn patch(&self, ix: usize, iy: usize) -> ArrayView2<'_, Complex<T>> {
        self.data.slice(s![ix, iy, .., ..])
    }

    /// Macroscale fields of all patches: the `P x P` array of patch centres.
    pub fn macroscale(&self) -> Array2<Complex<T>> {
        let p = self.patches_per_side;
        Array2::from_shape_fn((p, p), |(ix, iy)| self.centre(ix, iy))
    }

    /// True when `(j_x, j_y)` is one of the four corner offsets.
    fn is_corner(&self, x: usize, y: usize) -> bool {
        let last = 2 * self.n;
        (x == 0 || x == last) && (y == 0 || y == last)
    }
}

/// Centre values of the four neighbouring patches, as last exchanged.
///
/// Under [`CouplingMode::Continuous`] the caller refreshes these every
/// integrator step; under [`CouplingMode::Mesoscale`] only at the mesoscale
/// boundaries, so mid-interval edge constraints use stale neighbour data by
/// design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroNeighbours<T> {
    /// Centre of patch `(i_x+1, i_y)`.
    pub east: Complex<T>,
    /// Centre of patch `(i_x-1, i_y)`.
    pub west: Complex<T>,
    /// Centre of patch `(i_x, i_y+1)`.
    pub north: Complex<T>,
    /// Centre of patch `(i_x, i_y-1)`.
    pub south: Complex<T>,
}

impl<T: Real> MacroNeighbours<T> {
    /// Periodic neighbour lookup in a `P x P` array of macroscale values.
    pub fn from_macro(macros: &Array2<Complex<T>>, ix: usize, iy: usize) -> Self {
        let p = macros.nrows();
        Self {
            east: macros[[(ix + 1) % p, iy]],
            west: macros[[(ix + p - 1) % p, iy]],
            north: macros[[ix, (iy + 1) % p]],
            south: macros[[ix, (iy + p - 1) % p]],
        }
    }
}

/// Edge weight multiplying the patch's own centre value.
///
/// Defaults to the symmetric quadratic-interpolation weight
/// `1 - (r_x^2 + r_y^2)*gamma`; the `as_printed` variant flips the sign of
/// the `r_y^2` term.
pub fn cos_ell_2d<T: Real>(cfg: &GlConfig<T>, jx: isize, jy: isize) -> T {
    let rx = cfg.interp_offset(jx);
    let ry = cfg.interp_offset(jy);
    let quad = if cfg.as_printed { rx * rx - ry * ry } else { rx * rx + ry * ry };
    T::one() - quad * cfg.gamma
}

/// Neighbour part `f` of the edge constraint: quadratic-interpolation blend
/// of the four neighbouring patch centres,
/// `f = (gamma/2) * r_x * [(r_x+1) U_east + (r_x-1) U_west]
///    + (gamma/2) * r_y * [(r_y+1) U_north + (r_y-1) U_south]`.
pub fn edge_forcing<T: Real>(
    cfg: &GlConfig<T>,
    neighbours: &MacroNeighbours<T>,
    jx: isize,
    jy: isize,
) -> Complex<T> {
    let rx = cfg.interp_offset(jx);
    let ry = cfg.interp_offset(jy);
    let half_gamma = T::half() * cfg.gamma;
    let one = T::one();
    let fx = (neighbours.east * (rx + one) + neighbours.west * (rx - one)) * (half_gamma * rx);
    let fy = (neighbours.north * (ry + one) + neighbours.south * (ry - one)) * (half_gamma * ry);
    fx + fy
}

/// Slaved value of the edge point `(j_x, j_y)`:
/// `U_self * cos_ell(j_x, j_y) + f(neighbours)`.
///
/// `u_self` is the patch's own centre value at the current time; `neighbours`
/// holds the four neighbour centres as of the last exchange (see
/// [`MacroNeighbours`]).  With `gamma = 0` the edge value reduces to
/// `u_self`, and for equal self and neighbour values the symmetric variant
/// reproduces the constant field exactly.
///
/// Errors when `(j_x, j_y)` is a corner (corners carry no condition) or not
/// on an edge at all.
pub fn gl_coupling_2d<T: Real>(
    cfg: &GlConfig<T>,
    u_self: Complex<T>,
    neighbours: &MacroNeighbours<T>,
    jx: isize,
    jy: isize,
) -> Result<Complex<T>, GlError> {
    let n = cfg.n as isize;
    let on_x_edge = jx.abs() == n;
    let on_y_edge = jy.abs() == n;
    if on_x_edge && on_y_edge {
        return Err(GlError::CornerIndex { jx, jy });
    }
    if !(on_x_edge || on_y_edge) || jx.abs() > n || jy.abs() > n {
        return Err(GlError::NotAnEdge { jx, jy });
    }
    Ok(u_self * cos_ell_2d(cfg, jx, jy) + edge_forcing(cfg, neighbours, jx, jy))
}

/// Interior time-derivative of one patch field.
///
/// Returns an array of the same `(2n+1) x (2n+1)` shape whose interior
/// (`|j_x|, |j_y| <= n-1`) holds
/// `(1 + i*alpha) * lap4(u) + u - (1 + i*beta) * u |u|^2`
/// and whose edge and corner entries are zero: edge values are slaved to the
/// coupling conditions, not evolved.  Corner values are never read.
pub fn gl_rhs<T: Real>(field: ArrayView2<'_, Complex<T>>, alpha: T, beta: T) -> Array2<Complex<T>> {
    let side = field.nrows();
    assert!(
        side == field.ncols() && side >= 3 && side % 2 == 1,
        "patch field must be square with odd side length >= 3"
    );
    let mut out = Array2::zeros((side, side));
    rhs_patch(&field, &mut out.view_mut(), alpha, beta, true);
    out
}

/// Stencil kernel shared by [`gl_rhs`] and the integrator.  With
/// `reaction = false` only the `(1 + i*alpha) * lap4(u)` diffusion part is
/// kept, which lets tests compare against per-axis second differences.
fn rhs_patch<T: Real>(
    field: &ArrayView2<'_, Complex<T>>,
    out: &mut ArrayViewMut2<'_, Complex<T>>,
    alpha: T,
    beta: T,
    reaction: bool,
) {
    let side = field.nrows();
    let diffusion = Complex::new(T::one(), alpha);
    let cubic = Complex::new(T::one(), beta);
    let four = T::lit(4.0);
    for x in 1..side - 1 {
        for y in 1..side - 1 {
            let u = field[[x, y]];
            let lap = field[[x + 1, y]] + field[[x - 1, y]] + field[[x, y + 1]]
                + field[[x, y - 1]]
                - u * four;
            out[[x, y]] = if reaction {
                diffusion * lap + u - cubic * u * u.norm_sqr()
            } else {
                diffusion * lap
            };
        }
    }
}

/// Real standard-normal draw for the microscale point `(j_x, j_y)` of patch
/// `(i_x, i_y)`.
///
/// The generator is counter-based: every lattice point owns an independent
/// ChaCha stream keyed by `(seed, i_x, i_y, j_x, j_y)`, so the draw depends
/// only on the key and patches may be initialised in any order or in
/// parallel.
fn noise_draw(seed: u64, ix: usize, iy: usize, x: usize, y: usize) -> f64 {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(((ix as u64) << 32) | iy as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(((x as u64) << 32) | y as u64).to_le_bytes());
    key[24..32].copy_from_slice(&NOISE_STREAM_TAG.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.sample(StandardNormal)
}

/// Initial microscale fields: a real sinusoid of one full period across the
/// domain plus independent real Gaussian noise at every lattice point,
/// `u = init_amplitude * sin(2 pi x / width) * sin(2 pi y / width)
///    + noise_std * eta`, `eta ~ N(0, 1)`.
///
/// All `(2n+1)^2` points of every patch are filled, including the edge points
/// (immediately re-slaved when a run starts) and the dead corner storage.
pub fn initial_grid<T: Real>(cfg: &GlConfig<T>) -> Result<PatchGrid2D<T>, GlError> {
    let lattice = cfg.lattice()?;
    let p = lattice.patches_per_side;
    let mut grid = PatchGrid2D::new(p, cfg.n);
    let two_pi = T::PI() * T::two();
    let n = cfg.n as i64;
    for ix in 0..p {
        for iy in 0..p {
            for x in 0..grid.points_per_side() {
                for y in 0..grid.points_per_side() {
                    let global_x = (ix as i64) * (lattice.big_n as i64) + (x as i64 - n);
                    let global_y = (iy as i64) * (lattice.big_n as i64) + (y as i64 - n);
                    let sx = (two_pi * T::of_int(global_x) * cfg.h / cfg.domain_width).sin();
                    let sy = (two_pi * T::of_int(global_y) * cfg.h / cfg.domain_width).sin();
                    let eta = T::lit(noise_draw(cfg.seed, ix, iy, x, y)) * cfg.noise_std;
                    grid.data[[ix, iy, x, y]] =
                        Complex::new(cfg.init_amplitude * sx * sy + eta, T::zero());
                }
            }
        }
    }
    Ok(grid)
}

/// Slaves every non-corner edge value of every patch to the coupling
/// condition, using each patch's live centre and the exchanged neighbour
/// centres in `frozen`.
fn apply_edges<T: Real>(grid: &mut PatchGrid2D<T>, frozen: &Array2<Complex<T>>, cfg: &GlConfig<T>) {
    let p = grid.patches_per_side;
    let n = grid.n as isize;
    for ix in 0..p {
        for iy in 0..p {
            let u_self = grid.centre(ix, iy);
            let neighbours = MacroNeighbours::from_macro(frozen, ix, iy);
            for t in (1 - n)..n {
                for (jx, jy) in [(n, t), (-n, t), (t, n), (t, -n)] {
                    let value = u_self * cos_ell_2d(cfg, jx, jy)
                        + edge_forcing(cfg, &neighbours, jx, jy);
                    grid.set(ix, iy, jx, jy, value);
                }
            }
        }
    }
}

/// Interior derivative of every patch; edge and corner entries stay zero.
fn rhs_all<T: Real>(grid: &PatchGrid2D<T>, cfg: &GlConfig<T>, out: &mut Array4<Complex<T>>) {
    let p = grid.patches_per_side;
    for ix in 0..p {
        for iy in 0..p {
            let field = grid.data.slice(s![ix, iy, .., ..]);
            let mut deriv = out.slice_mut(s![ix, iy, .., ..]);
            rhs_patch(&field, &mut deriv, cfg.alpha, cfg.beta, true);
        }
    }
}

/// Preallocated stage storage for the classical 4th-order step.
struct StageBufs<T> {
    base: Array4<Complex<T>>,
    k: [Array4<Complex<T>>; 4],
}

impl<T: Real> StageBufs<T> {
    fn new(grid: &PatchGrid2D<T>) -> Self {
        let shape = grid.data.raw_dim();
        Self {
            base: Array4::zeros(shape),
            k: [
                Array4::zeros(shape),
                Array4::zeros(shape),
                Array4::zeros(shape),
                Array4::zeros(shape),
            ],
        }
    }
}

/// Overwrites the interior of `grid` with `base + k * c`, then re-slaves the
/// edges from the stage's own centres and the exchanged neighbour data.
fn set_stage<T: Real>(
    grid: &mut PatchGrid2D<T>,
    base: &Array4<Complex<T>>,
    k: &Array4<Complex<T>>,
    c: T,
    frozen: &Array2<Complex<T>>,
    cfg: &GlConfig<T>,
) {
    let p = grid.patches_per_side;
    let side = grid.points_per_side();
    for ix in 0..p {
        for iy in 0..p {
            for x in 1..side - 1 {
                for y in 1..side - 1 {
                    grid.data[[ix, iy, x, y]] =
                        base[[ix, iy, x, y]] + k[[ix, iy, x, y]] * c;
                }
            }
        }
    }
    apply_edges(grid, frozen, cfg);
}

/// One classical 4th-order step of every patch interior.
///
/// All four stage derivatives read a consistent global stage state in which
/// each patch's edges are slaved to its live stage centre and the exchanged
/// neighbour data `frozen`; patches therefore never read each other's
/// in-progress updates and the result is independent of patch ordering.  The
/// caller re-slaves the edges of the accepted state.
fn step_rk4<T: Real>(
    grid: &mut PatchGrid2D<T>,
    frozen: &Array2<Complex<T>>,
    cfg: &GlConfig<T>,
    dt: T,
    bufs: &mut StageBufs<T>,
) {
    let half_dt = T::half() * dt;
    bufs.base.assign(&grid.data);
    rhs_all(grid, cfg, &mut bufs.k[0]);
    let base = bufs.base.clone();
    set_stage(grid, &base, &bufs.k[0], half_dt, frozen, cfg);
    rhs_all(grid, cfg, &mut bufs.k[1]);
    set_stage(grid, &base, &bufs.k[1], half_dt, frozen, cfg);
    rhs_all(grid, cfg, &mut bufs.k[2]);
    set_stage(grid, &base, &bufs.k[2], dt, frozen, cfg);
    rhs_all(grid, cfg, &mut bufs.k[3]);
    let sixth_dt = dt / T::lit(6.0);
    let p = grid.patches_per_side;
    let side = grid.points_per_side();
    let two = T::two();
    for ix in 0..p {
        for iy in 0..p {
            for x in 1..side - 1 {
                for y in 1..side - 1 {
                    let i = [ix, iy, x, y];
                    let slope = bufs.k[0][i]
                        + (bufs.k[1][i] + bufs.k[2][i]) * two
                        + bufs.k[3][i];
                    grid.data[i] = base[i] + slope * sixth_dt;
                }
            }
        }
    }
}

/// Checks every non-corner value for magnitude and finiteness.
fn check_blow_up<T: Real>(grid: &PatchGrid2D<T>, time: T) -> Result<(), GlError> {
    let limit = T::lit(BLOW_UP_LIMIT * BLOW_UP_LIMIT);
    let p = grid.patches_per_side;
    let side = grid.points_per_side();
    for ix in 0..p {
        for iy in 0..p {
            for x in 0..side {
                for y in 0..side {
                    if grid.is_corner(x, y) {
                        continue;
                    }
                    let u = grid.data[[ix, iy, x, y]];
                    let mag = u.norm_sqr();
                    if !mag.is_finite() || mag > limit {
                        return Err(GlError::BlowUp {
                            time: time.to_f64().unwrap_or(f64::NAN),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Advances a copy of `grid` by `steps` steps of size `dt` under per-step
/// neighbour exchange, without blow-up checks; used by the stability probe.
fn probe_advance<T: Real>(
    cfg: &GlConfig<T>,
    grid: &PatchGrid2D<T>,
    dt: T,
    steps: usize,
) -> PatchGrid2D<T> {
    let mut g = grid.clone();
    let mut bufs = StageBufs::new(&g);
    let mut frozen = g.macroscale();
    apply_edges(&mut g, &frozen, cfg);
    for _ in 0..steps {
        step_rk4(&mut g, &frozen, cfg, dt, &mut bufs);
        frozen = g.macroscale();
        apply_edges(&mut g, &frozen, cfg);
    }
    g
}

/// Start-up halving probe: advances the initial state a few steps with
/// `dt_micro` and with `dt_micro / 2` and rejects the configured step when
/// the two disagree grossly, which catches an unstable explicit step before
/// a long run is attempted.
fn stability_probe<T: Real>(cfg: &GlConfig<T>, grid: &PatchGrid2D<T>) -> Result<(), GlError> {
    let coarse = probe_advance(cfg, grid, cfg.dt_micro, PROBE_STEPS);
    let fine = probe_advance(cfg, grid, cfg.dt_micro * T::half(), 2 * PROBE_STEPS);
    let mut deviation = T::zero();
    let mut scale = T::one();
    let mut exploded = false;
    let side = coarse.points_per_side();
    for ix in 0..coarse.patches_per_side {
        for iy in 0..coarse.patches_per_side {
            for x in 1..side - 1 {
                for y in 1..side - 1 {
                    let d = (coarse.data[[ix, iy, x, y]] - fine.data[[ix, iy, x, y]]).norm_sqr();
                    let f = fine.data[[ix, iy, x, y]].norm_sqr();
                    // `max` ignores NaN, so non-finite stage values must be
                    // flagged explicitly.
                    exploded |= !(d.is_finite() && f.is_finite());
                    deviation = deviation.max(d);
                    scale = scale.max(f);
                }
            }
        }
    }
    let deviation = deviation.sqrt();
    let scale = scale.sqrt();
    if exploded || deviation > T::lit(0.01) * scale {
        return Err(GlError::UnstableMicroStep {
            dt: cfg.dt_micro.to_f64().unwrap_or(f64::NAN),
            deviation: deviation.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Completed patch run: the configuration it used, the macroscale fields at
/// every micro step, full-field snapshots at the requested times, and the
/// number of neighbour-exchange rounds performed.
#[derive(Debug, Clone, PartialEq)]
pub struct GlRun<T> {
    /// Configuration of the run.
    pub cfg: GlConfig<T>,
    /// Neighbour-data refresh cadence used.
    pub mode: CouplingMode,
    /// Recorded times, `0, dt_micro, 2 dt_micro, ..., t_end`.
    pub times: Vec<T>,
    /// Macroscale fields (patch centres) at each recorded time.
    pub macro_series: Vec<Array2<Complex<T>>>,
    /// Full microscale snapshots at the requested times.
    pub snapshots: Vec<(T, PatchGrid2D<T>)>,
    /// Neighbour-exchange rounds performed after the initial one.
    pub exchanges: usize,
}

impl<T: Real> GlRun<T> {
    /// Number of patches along each side of the macroscale grid.
    pub fn patches_per_side(&self) -> usize {
        self.macro_series[0].nrows()
    }

    /// Macroscale fields at the recorded time nearest to `t`, if `t` lies on
    /// the run's time grid (within half a micro step).
    pub fn macro_at(&self, t: T) -> Result<&Array2<Complex<T>>, GlError> {
        let tol = self.cfg.dt_micro * T::half();
        self.times
            .iter()
            .position(|&ti| (ti - t).abs() <= tol)
            .map(|i| &self.macro_series[i])
            .ok_or(GlError::TimeNotRecorded { time: t.to_f64().unwrap_or(f64::NAN) })
    }
}

/// Runs the Ginzburg-Landau patch experiment from the seeded initial
/// condition.  See [`run_from_state`] for the stepping semantics; this
/// front door additionally vets `dt_micro` with the halving probe.
pub fn run_gl2d<T: Real>(
    cfg: &GlConfig<T>,
    mode: CouplingMode,
    snapshot_times: &[T],
) -> Result<GlRun<T>, GlError> {
    let grid = initial_grid(cfg)?;
    stability_probe(cfg, &grid)?;
    run_from_state(cfg, mode, grid, snapshot_times)
}

/// Advances the given microscale state to `t_end` with classical 4th-order
/// steps of `dt_micro`, slaving patch edges to the coupling conditions.
///
/// Neighbour centre values are exchanged at `t = 0` and thereafter at the end
/// of every cadence interval — every step under continuous coupling, every
/// `delta_t` under mesoscale coupling — so between exchanges the neighbour
/// part of each edge constraint is held constant while the self part follows
/// the patch's live centre.  Macroscale fields are recorded at every step;
/// full-field snapshots are taken at the requested times, which must lie on
/// the step grid.  Unlike [`run_gl2d`], no stability probe is run: arbitrary
/// caller states (including deliberately poisoned ones) are accepted, and
/// any magnitude beyond `1e6` surfaces as [`GlError::BlowUp`].
pub fn run_from_state<T: Real>(
    cfg: &GlConfig<T>,
    mode: CouplingMode,
    mut grid: PatchGrid2D<T>,
    snapshot_times: &[T],
) -> Result<GlRun<T>, GlError> {
    let lattice = cfg.lattice()?;
    if grid.patches_per_side != lattice.patches_per_side || grid.n != cfg.n {
        return Err(GlError::GridMismatch);
    }
    let dt = cfg.dt_micro;
    let t_end = cfg.t_end.to_f64().unwrap_or(f64::NAN);
    if t_end < 0.0 || !t_end.is_finite() {
        return Err(GlError::BadParameter { name: "t_end", value: t_end });
    }
    let ratio = cfg.t_end / dt;
    let steps = if t_end == 0.0 {
        0
    } else {
        integer_ratio(ratio, |ratio| GlError::HorizonMismatch { ratio })?
    };
    let exchange_every = match mode {
        CouplingMode::Continuous => 1,
        CouplingMode::Mesoscale => {
            integer_ratio(cfg.delta_t / dt, |ratio| GlError::CadenceMismatch { ratio })?
        }
    };
    // Requested snapshot times, mapped onto step indices.
    let mut snap_steps: Vec<usize> = Vec::new();
    for &t in snapshot_times {
        let r = (t / dt).to_f64().unwrap_or(f64::NAN);
        let s = r.round();
        if !r.is_finite() || s < 0.0 || s > steps as f64 || (r - s).abs() > 1e-6 {
            return Err(GlError::SnapshotOffGrid { time: t.to_f64().unwrap_or(f64::NAN) });
        }
        let s = s as usize;
        if !snap_steps.contains(&s) {
            snap_steps.push(s);
        }
    }
    snap_steps.sort_unstable();

    let mut bufs = StageBufs::new(&grid);
    let mut frozen = grid.macroscale();
    apply_edges(&mut grid, &frozen, cfg);
    check_blow_up(&grid, T::zero())?;

    let mut run = GlRun {
        cfg: *cfg,
        mode,
        times: Vec::with_capacity(steps + 1),
        macro_series: Vec::with_capacity(steps + 1),
        snapshots: Vec::new(),
        exchanges: 0,
    };
    run.times.push(T::zero());
    run.macro_series.push(frozen.clone());
    if snap_steps.first() == Some(&0) {
        run.snapshots.push((T::zero(), grid.clone()));
    }

    for s in 0..steps {
        step_rk4(&mut grid, &frozen, cfg, dt, &mut bufs);
        let t_next = T::of_int((s + 1) as i64) * dt;
        if (s + 1) % exchange_every == 0 {
            frozen = grid.macroscale();
            run.exchanges += 1;
        }
        apply_edges(&mut grid, &frozen, cfg);
        check_blow_up(&grid, t_next)?;
        run.times.push(t_next);
        run.macro_series.push(grid.macroscale());
        if snap_steps.contains(&(s + 1)) {
            run.snapshots.push((t_next, grid.clone()));
        }
    }
    Ok(run)
}

/// Root-mean-square difference of the macroscale fields of two runs at a
/// common recorded time: `sqrt(mean over patches of |U_a - U_b|^2)`.
pub fn compare_macroscale<T: Real>(a: &GlRun<T>, b: &GlRun<T>, t: T) -> Result<T, GlError> {
    if a.patches_per_side() != b.patches_per_side() {
        return Err(GlError::GridMismatch);
    }
    let ua = a.macro_at(t)?;
    let ub = b.macro_at(t)?;
    let mut sum = Compensated::new();
    for (x, y) in ua.iter().zip(ub.iter()) {
        sum.add((*x - *y).norm_sqr());
    }
    let count = T::of_int((ua.len()) as i64);
    Ok((sum.value() / count).sqrt())
}

/// Writes every full-field snapshot of the run as CSV with columns
/// `t,i_x,i_y,j_x,j_y,re(u),im(u)`.
pub fn write_field_snapshots<T: Real, W: Write>(
    writer: &mut W,
    run: &GlRun<T>,
) -> io::Result<()> {
    writeln!(writer, "t,i_x,i_y,j_x,j_y,re(u),im(u)")?;
    for (t, grid) in &run.snapshots {
        let n = grid.half_width() as isize;
        for ix in 0..grid.patches_per_side() {
            for iy in 0..grid.patches_per_side() {
                for jx in -n..=n {
                    for jy in -n..=n {
                        let u = grid.get(ix, iy, jx, jy);
                        writeln!(
                            writer,
                            "{:.17e},{ix},{iy},{jx},{jy},{:.17e},{:.17e}",
                            t, u.re, u.im
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Writes the macroscale time series of the run as CSV with columns
/// `t,i_x,i_y,re(U),im(U),mode,delta_t,seed`.
pub fn write_macro_series<T: Real, W: Write>(writer: &mut W, run: &GlRun<T>) -> io::Result<()> {
    writeln!(writer, "t,i_x,i_y,re(U),im(U),mode,delta_t,seed")?;
    for (t, macros) in run.times.iter().zip(run.macro_series.iter()) {
        for ((ix, iy), u) in macros.indexed_iter() {
            writeln!(
                writer,
                "{:.17e},{ix},{iy},{:.17e},{:.17e},{},{:.17e},{}",
                t, u.re, u.im, run.mode, run.cfg.delta_t, run.cfg.seed
            )?;
        }
    }
    Ok(())
}
