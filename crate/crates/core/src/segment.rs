//! Grid segments on `[-1, 0]` and the norms used throughout the crate.
//!
//! A [`Segment`] of resolution `N` stores the path at the `N + 1` points
//! `-1, -1 + h, ..., 0` with `h = 1/N`. Index `0` is `s = -1` and index `N`
//! is `s = 0` (the "head").
//!
//! Three norms are provided:
//!
//! * `sup_norm`: maximum absolute grid value;
//! * `l2_norm_sq`: trapezoidal quadrature of `s ↦ seg(s)²` over `[-1, 0]`;
//! * `m2_norm`: `sqrt(seg(0)² + l2_norm_sq)`, the Hilbert norm pairing the
//!   head value with the L2 body.
//!
//! Every grid statement about the sup-norm is an approximation of the
//! continuous sup up to grid resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Tolerance on `m2_norm == 1` for [`UnitSegment`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Uniform-grid sample of a path on `[-1, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Segment {
    values: Vec<f64>,
}

impl Segment {
    /// Builds a segment from its `N + 1` grid values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(SimError::InvalidResolution {
                got: values.len().saturating_sub(1),
                min: 1,
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SimError::NonFinite { index, value });
        }
        Ok(Self { values })
    }

    /// Builds a segment of resolution `n` and checks the value count.
    pub fn with_resolution(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n + 1 {
            return Err(SimError::LengthMismatch {
                expected: n + 1,
                got: values.len(),
            });
        }
        Self::new(values)
    }

    /// Samples `f` at the grid points `s_k = -1 + k/n`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 1.0 / n as f64;
        Self::new((0..=n).map(|k| f(-1.0 + k as f64 * h)).collect())
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n + 1])
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::constant(n, 0.0)
    }

    /// Grid resolution `N`.
    #[inline]
    pub fn resolution(&self) -> usize {
        self.values.len() - 1
    }

    /// Step size `h = 1/N`.
    #[inline]
    pub fn step(&self) -> f64 {
        1.0 / self.resolution() as f64
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at `s = 0`.
    #[inline]
    pub fn head(&self) -> f64 {
        self.values[self.resolution()]
    }

    /// Value at `s = -1`.
    #[inline]
    pub fn lagged(&self) -> f64 {
        self.values[0]
    }

    /// Grid index closest to the coordinate `s ∈ [-1, 0]`.
    pub fn index_of(&self, s: f64) -> usize {
        let n = self.resolution();
        (((s + 1.0) * n as f64).round().max(0.0) as usize).min(n)
    }

    /// Value at the grid point closest to `s`.
    pub fn value_at(&self, s: f64) -> f64 {
        self.values[self.index_of(s)]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Smallest absolute grid value.
    pub fn inf_abs(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Trapezoidal `∫_{-1}^0 seg(s)² ds`.
    pub fn l2_norm_sq(&self) -> f64 {
        trapezoid_sq(&self.values, 1.0)
    }

    pub fn l2_norm(&self) -> f64 {
        let sup = self.sup_norm();
        if sup == 0.0 {
            return 0.0;
        }
        sup * trapezoid_sq(&self.values, 1.0 / sup).sqrt()
    }

    /// `sqrt(seg(0)² + ‖seg‖₂²)`, computed on values scaled by the sup-norm
    /// so that amplitudes near the limits of `f64` neither underflow nor
    /// overflow.
    pub fn m2_norm(&self) -> f64 {
        let sup = self.sup_norm();
        if sup == 0.0 {
            return 0.0;
        }
        sup * scaled_m2_sq(&self.values, 1.0 / sup).sqrt()
    }

    /// Natural log of the M2 norm; `-inf` for the zero segment.
    pub fn log_m2_norm(&self) -> f64 {
        let sup = self.sup_norm();
        if sup == 0.0 {
            return f64::NEG_INFINITY;
        }
        sup.ln() + 0.5 * scaled_m2_sq(&self.values, 1.0 / sup).ln()
    }

    /// Splits the segment into its M2-unit direction and the log of its M2
    /// norm.
    pub fn project(&self) -> Result<(UnitSegment, f64)> {
        let sup = self.sup_norm();
        if sup == 0.0 {
            return Err(SimError::ZeroState);
        }
        let inv_sup = 1.0 / sup;
        let rel = scaled_m2_sq(&self.values, inv_sup).sqrt();
        let values = self.values.iter().map(|v| (v * inv_sup) / rel).collect();
        Ok((
            UnitSegment(Segment { values }),
            sup.ln() + rel.ln(),
        ))
    }

    /// `a * self`.
    pub fn scaled(&self, a: f64) -> Result<Segment> {
        Segment::new(self.values.iter().map(|v| a * v).collect())
    }

    /// `a * x + y`, pointwise.
    pub fn axpy(a: f64, x: &Segment, y: &Segment) -> Result<Segment> {
        check_same_resolution(x, y)?;
        Segment::new(
            x.values
                .iter()
                .zip(&y.values)
                .map(|(xv, yv)| a * xv + yv)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Segment) -> Result<Segment> {
        Segment::axpy(-1.0, other, self)
    }

    /// Largest pointwise absolute difference.
    pub fn max_abs_diff(&self, other: &Segment) -> Result<f64> {
        check_same_resolution(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

impl TryFrom<Vec<f64>> for Segment {
    type Error = SimError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Segment::new(values)
    }
}

impl From<Segment> for Vec<f64> {
    fn from(seg: Segment) -> Self {
        seg.values
    }
}

impl std::ops::Neg for &Segment {
    type Output = Segment;

    fn neg(self) -> Segment {
        Segment {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

pub(crate) fn check_same_resolution(a: &Segment, b: &Segment) -> Result<()> {
    if a.resolution() != b.resolution() {
        return Err(SimError::ResolutionMismatch {
            left: a.resolution(),
            right: b.resolution(),
        });
    }
    Ok(())
}

/// Trapezoid of `(scale·v)²` over a uniform grid covering an interval of
/// length one.
fn trapezoid_sq(values: &[f64], scale: f64) -> f64 {
    let n = values.len() - 1;
    let h = 1.0 / n as f64;
    let sq = |v: f64| (v * scale) * (v * scale);
    let interior: f64 = values[1..n].iter().map(|&v| sq(v)).sum();
    h * (0.5 * sq(values[0]) + interior + 0.5 * sq(values[n]))
}

fn scaled_m2_sq(values: &[f64], scale: f64) -> f64 {
    let head = values[values.len() - 1] * scale;
    head * head + trapezoid_sq(values, scale)
}

/// A segment on the M2 unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct UnitSegment(Segment);

impl UnitSegment {
    /// Accepts `seg` if its M2 norm is within `tol` of one.
    pub fn try_new(seg: Segment, tol: f64) -> Result<Self> {
        let norm = seg.m2_norm();
        if (norm - 1.0).abs() > tol {
            return Err(SimError::param(
                "unit segment",
                format!("M2 norm {norm} differs from 1 by more than {tol}"),
            ));
        }
        Ok(UnitSegment(seg))
    }

    pub fn as_segment(&self) -> &Segment {
        &self.0
    }

    pub fn into_segment(self) -> Segment {
        self.0
    }

    /// `s(0)²`.
    pub fn f(&self) -> f64 {
        let head = self.0.head();
        head * head
    }

    /// `2 s(0) s(-1)`.
    pub fn g(&self) -> f64 {
        2.0 * self.0.head() * self.0.lagged()
    }

    /// Drift of `log ‖X_t‖` on the sphere: `f/2 - g²/4`.
    pub fn psi(&self) -> f64 {
        psi_from_parts(self.0.head(), self.0.lagged(), 1.0)
    }
}

impl std::ops::Deref for UnitSegment {
    type Target = Segment;

    fn deref(&self) -> &Segment {
        &self.0
    }
}

/// `psi` of the segment with head `head`, lagged value `lagged` and squared
/// M2 norm `m2_sq`, without forming the normalized segment.
#[inline]
pub fn psi_from_parts(head: f64, lagged: f64, m2_sq: f64) -> f64 {
    let f = head * head / m2_sq;
    let g = 2.0 * head * lagged / m2_sq;
    0.5 * f - 0.25 * g * g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn seg(v: &[f64]) -> Segment {
        Segment::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(Segment::constant(4, 1.0).unwrap().sup_norm(), 1.0);
        assert_eq!(Segment::zeros(4).unwrap().sup_norm(), 0.0);
        assert_eq!(seg(&[-3.0, 1.0, 2.0, 0.0, 1.0]).sup_norm(), 3.0);
    }

    #[test]
    fn l2_norm_sq_examples() {
        for n in [1, 4, 17, 1000] {
            assert_relative_eq!(Segment::constant(n, 1.0).unwrap().l2_norm_sq(), 1.0, epsilon = 1e-14);
        }
        assert_eq!(Segment::zeros(8).unwrap().l2_norm_sq(), 0.0);
        // ∫_{-1}^0 s² ds = 1/3
        let lin = Segment::from_fn(1000, |s| s).unwrap();
        assert!((lin.l2_norm_sq() - 1.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn m2_norm_examples() {
        assert_relative_eq!(Segment::constant(16, 1.0).unwrap().m2_norm(), 2f64.sqrt(), epsilon = 1e-14);
        assert_eq!(Segment::zeros(16).unwrap().m2_norm(), 0.0);
        let lin = Segment::from_fn(1000, |s| s).unwrap();
        assert!((lin.m2_norm() - (1.0f64 / 3.0).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn project_examples() {
        let (unit, log) = Segment::constant(8, 1.0).unwrap().project().unwrap();
        for &v in unit.values() {
            assert_relative_eq!(v, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        }
        assert_relative_eq!(log, 2f64.sqrt().ln(), epsilon = 1e-15);

        let (again, log0) = unit.as_segment().project().unwrap();
        assert!(again.max_abs_diff(&unit).unwrap() < 1e-15);
        assert!(log0.abs() < 1e-15);

        assert_eq!(Segment::zeros(8).unwrap().project().unwrap_err(), SimError::ZeroState);
    }

    #[test]
    fn project_tiny_constant_does_not_underflow() {
        let c = 1e-300;
        let (unit, log) = Segment::constant(32, c).unwrap().project().unwrap();
        for &v in unit.values() {
            assert_relative_eq!(v, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        }
        assert_relative_eq!(log, c.ln() + 2f64.sqrt().ln(), max_relative = 1e-14);
        assert!((unit.m2_norm() - 1.0).abs() < UNIT_TOLERANCE);
    }

    #[test]
    fn functionals_on_projected_constant() {
        let (unit, _) = Segment::constant(8, 1.0).unwrap().project().unwrap();
        assert_relative_eq!(unit.f(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(unit.g(), 1.0, epsilon = 1e-15);
        assert!(unit.psi().abs() < 1e-15);
    }

    #[test]
    fn functionals_vanish_with_zero_head() {
        let (unit, _) = Segment::from_fn(10, |s| s).unwrap().project().unwrap();
        assert_eq!(unit.f(), 0.0);
        assert_eq!(unit.g(), 0.0);
        assert_eq!(unit.psi(), 0.0);
    }

    #[test]
    fn axpy_examples() {
        let x = seg(&[1.0, -2.0, 3.0]);
        assert!(Segment::axpy(-1.0, &x, &x).unwrap().is_zero());
        let y = seg(&[0.5, 0.25, 4.0]);
        assert_eq!(Segment::axpy(0.0, &x, &y).unwrap(), y);
        let one = Segment::constant(2, 1.0).unwrap();
        assert_eq!(Segment::axpy(2.0, &one, &one).unwrap(), Segment::constant(2, 3.0).unwrap());
        let other = Segment::constant(3, 1.0).unwrap();
        assert!(matches!(
            Segment::axpy(1.0, &x, &other),
            Err(SimError::ResolutionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Segment::new(vec![1.0]).is_err());
        assert!(matches!(
            Segment::new(vec![1.0, f64::NAN, 0.0]),
            Err(SimError::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            Segment::with_resolution(4, vec![0.0; 4]),
            Err(SimError::LengthMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn serde_roundtrip_validates() {
        let s = seg(&[0.5, -1.0, 2.0]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[0.5,-1.0,2.0]");
        assert_eq!(serde_json::from_str::<Segment>(&json).unwrap(), s);
        assert!(serde_json::from_str::<Segment>("[1.0]").is_err());
    }

    fn arb_segment() -> impl Strategy<Value = Segment> {
        (1usize..80).prop_flat_map(|n| {
            prop::collection::vec(-1e3f64..1e3, n + 1).prop_map(|v| Segment::new(v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn norm_sandwich(s in arb_segment()) {
            prop_assert!(s.m2_norm() <= 2f64.sqrt() * s.sup_norm() * (1.0 + 1e-14));
        }

        #[test]
        fn absolute_homogeneity(s in arb_segment(), c in -1e6f64..1e6) {
            let cs = s.scaled(c).unwrap();
            let tol = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE);
            prop_assert!(tol(cs.sup_norm(), c.abs() * s.sup_norm()));
            prop_assert!(tol(cs.m2_norm(), c.abs() * s.m2_norm()));
            prop_assert!(tol(cs.l2_norm(), c.abs() * s.l2_norm()));
            prop_assert!(tol(cs.l2_norm_sq(), c * c * s.l2_norm_sq()));
        }

        #[test]
        fn projection_is_unit_and_scale_invariant(s in arb_segment(), exp in -300i32..=300) {
            prop_assume!(!s.is_zero());
            let (unit, log) = s.project().unwrap();
            prop_assert!((unit.m2_norm() - 1.0).abs() <= UNIT_TOLERANCE);
            let c = 10f64.powi(exp);
            let (scaled_unit, scaled_log) = s.scaled(c).unwrap().project().unwrap();
            prop_assert!(scaled_unit.max_abs_diff(&unit).unwrap() <= 1e-12);
            prop_assert!((scaled_log - log - c.ln()).abs() <= 1e-9 * (1.0 + c.ln().abs()));
        }

        #[test]
        fn psi_bounded_on_sphere(s in arb_segment()) {
            prop_assume!(!s.is_zero());
            let (unit, _) = s.project().unwrap();
            prop_assert!(unit.f() <= 1.0 + 1e-12);
            prop_assert!(unit.psi() <= 0.5 + 1e-12);
        }
    }
}
