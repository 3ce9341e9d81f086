//! Patch geometry on the microscale lattice.
//!
//! A patch is the index range `j = -n ..= n` of microscale points with spacing
//! `h`.  The central `2a+1` points form the core whose average defines the
//! macroscale value; the `2a+1` points nearest each edge form the action
//! regions through which patches couple; the points in between are the buffer.
//! Macroscale patch centres sit `N` microscale points apart, so the patch
//! ratio is `r = (n - a)/N`.

use std::ops::RangeInclusive;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("core half-width a = {a} must be smaller than the patch half-width n = {n}")]
    CoreTooWide { n: usize, a: usize },
    #[error("patch half-width n = {n} must satisfy n/N < 1/2 (N = {macro_ratio}) so neighbouring patches do not overlap")]
    PatchesOverlap { n: usize, macro_ratio: usize },
    #[error("macroscale step ratio N must be positive")]
    ZeroMacroRatio,
    #[error("microscale spacing h must be positive and finite, got {h}")]
    BadSpacing { h: f64 },
}

/// Integer description of one patch and its embedding in the macroscale grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGeometry {
    half_width: usize,
    core_half_width: usize,
    macro_ratio: usize,
    spacing: f64,
}

impl PatchGeometry {
    /// Geometry with unit microscale spacing.
    pub fn new(half_width: usize, core_half_width: usize, macro_ratio: usize) -> Result<Self, GeometryError> {
        Self::with_spacing(half_width, core_half_width, macro_ratio, 1.0)
    }

    pub fn with_spacing(
        half_width: usize,
        core_half_width: usize,
        macro_ratio: usize,
        spacing: f64,
    ) -> Result<Self, GeometryError> {
        if macro_ratio == 0 {
            return Err(GeometryError::ZeroMacroRatio);
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(GeometryError::BadSpacing { h: spacing });
        }
        if core_half_width >= half_width {
            return Err(GeometryError::CoreTooWide { n: half_width, a: core_half_width });
        }
        if 2 * half_width >= macro_ratio {
            return Err(GeometryError::PatchesOverlap { n: half_width, macro_ratio });
        }
        let g = Self { half_width, core_half_width, macro_ratio, spacing };
        if g.thin_buffer() {
            log::warn!(
                "patch buffer is a single point (n = a + 1 = {}); mesoscale errors decay little inside the patch",
                half_width
            );
        }
        Ok(g)
    }

    /// Patch half-width `n`.
    #[inline]
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// Core half-width `a`.
    #[inline]
    pub fn core_half_width(&self) -> usize {
        self.core_half_width
    }

    /// Microscale points per macroscale step, `N`.
    #[inline]
    pub fn macro_ratio(&self) -> usize {
        self.macro_ratio
    }

    /// Microscale spacing `h`.
    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Macroscale step `H = N h`.
    #[inline]
    pub fn macro_step(&self) -> f64 {
        self.macro_ratio as f64 * self.spacing
    }

    /// Patch ratio `r = (n - a)/N`; always in (0, 1/2).
    #[inline]
    pub fn ratio(&self) -> f64 {
        (self.half_width - self.core_half_width) as f64 / self.macro_ratio as f64
    }

    /// Patch ratio in the working scalar type.
    #[inline]
    pub fn ratio_as<T: Real>(&self) -> T {
        T::of_int((self.half_width - self.core_half_width) as i64) / T::of_int(self.macro_ratio as i64)
    }

    /// Reduced half-width `n - a`, the quantity that governs the patch modes.
    #[inline]
    pub fn reduced_half_width(&self) -> usize {
        self.half_width - self.core_half_width
    }

    /// True when the buffer is a single point (`n = a + 1`).
    #[inline]
    pub fn thin_buffer(&self) -> bool {
        self.half_width == self.core_half_width + 1
    }

    /// Number of microscale points in the patch, `2n + 1`.
    #[inline]
    pub fn points(&self) -> usize {
        2 * self.half_width + 1
    }

    /// Number of interior points, `2n - 1`.
    #[inline]
    pub fn interior_points(&self) -> usize {
        2 * self.half_width - 1
    }

    /// Array index of sub-patch coordinate `j` in [-n, n].
    #[inline]
    pub fn idx(&self, j: i64) -> usize {
        debug_assert!(j.unsigned_abs() as usize <= self.half_width);
        (j + self.half_width as i64) as usize
    }

    /// Sub-patch coordinate of array index `i`.
    #[inline]
    pub fn coord(&self, i: usize) -> i64 {
        i as i64 - self.half_width as i64
    }

    /// Core index range `-a ..= a`.
    #[inline]
    pub fn core(&self) -> RangeInclusive<i64> {
        let a = self.core_half_width as i64;
        -a..=a
    }

    /// Action region attached to edge `+n` (or `-n`), `n - 2a <= ±j <= n`.
    /// For wide cores (`a > n/2`) the range extends across the patch centre.
    pub fn action(&self, edge: i64) -> RangeInclusive<i64> {
        let n = self.half_width as i64;
        let a = self.core_half_width as i64;
        debug_assert!(edge == n || edge == -n);
        if edge > 0 {
            (n - 2 * a)..=n
        } else {
            -n..=(2 * a - n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_buffered_patch() {
        let g = PatchGeometry::new(8, 2, 20).unwrap();
        assert_eq!(g.ratio(), 0.3);
        assert_eq!(g.reduced_half_width(), 6);
        assert_eq!(g.macro_step(), 20.0);
        assert!(!g.thin_buffer());
    }

    #[test]
    fn core_as_wide_as_patch_rejected() {
        assert_eq!(
            PatchGeometry::new(4, 4, 20).unwrap_err(),
            GeometryError::CoreTooWide { n: 4, a: 4 }
        );
    }

    #[test]
    fn overlapping_patches_rejected() {
        assert_eq!(
            PatchGeometry::new(10, 0, 20).unwrap_err(),
            GeometryError::PatchesOverlap { n: 10, macro_ratio: 20 }
        );
    }

    #[test]
    fn thin_buffer_is_allowed_but_flagged() {
        let g = PatchGeometry::new(6, 5, 20).unwrap();
        assert!(g.thin_buffer());
    }

    #[test]
    fn index_round_trip_and_ranges() {
        let g = PatchGeometry::new(8, 2, 20).unwrap();
        assert_eq!(g.idx(-8), 0);
        assert_eq!(g.idx(0), 8);
        assert_eq!(g.idx(8), 16);
        assert_eq!(g.coord(0), -8);
        assert_eq!(g.core(), -2..=2);
        assert_eq!(g.action(8), 4..=8);
        assert_eq!(g.action(-8), -8..=-4);
    }

    #[test]
    fn wide_core_action_regions_cross_the_centre() {
        let g = PatchGeometry::new(5, 4, 20).unwrap();
        assert_eq!(g.action(5), -3..=5);
        assert_eq!(g.action(-5), -5..=3);
    }

    proptest! {
        // r N + a recovers n to rounding accuracy, and the ratio sits in the
        // open interval forced by the non-overlap constraint.
        #[test]
        fn ratio_reconstructs_half_width(n in 1usize..200, a in 0usize..200, big_n in 1usize..1000) {
            prop_assume!(a < n && 2 * n < big_n);
            let g = PatchGeometry::new(n, a, big_n).unwrap();
            prop_assert!((g.ratio() * big_n as f64 + a as f64 - n as f64).abs() < 1e-10);
            prop_assert!(g.ratio() > 0.0 && g.ratio() < 0.5);
        }

        #[test]
        fn every_valid_triple_constructs(n in 1usize..60, a in 0usize..60, big_n in 1usize..200) {
            let res = PatchGeometry::new(n, a, big_n);
            let valid = a < n && 2 * n < big_n && big_n > 0;
            prop_assert_eq!(res.is_ok(), valid);
        }
    }
}
