//! One-unit-interval steppers for `dX(t) = X(t-1) dW(t)` and the coupled
//! difference process.
//!
//! The grid step is `h = 1/N`, so the delay is exactly `N` steps and the
//! lagged coefficient at step `k` is the input segment's value at index `k`.
//! `X` uses explicit Euler–Maruyama. The difference `Z = X - Y` of the
//! coupled pair obeys `dZ = Z(t-1) dW - λρ Z dt`; it is advanced with an
//! exponential Euler step so that large `λ` never destabilizes the scheme:
//!
//! ```text
//! z_{k+1} = e^{-λρh} z_k + z_lag[k] ΔW_k
//! ```

use crate::error::{Result, SimError};
use crate::noise::{draw_noise, NoiseBlock, NoiseStream};
use crate::segment::{check_same_resolution, Segment, UnitSegment};

fn check_noise(seg: &Segment, noise: &NoiseBlock) -> Result<()> {
    if seg.resolution() != noise.resolution() {
        return Err(SimError::ResolutionMismatch {
            left: seg.resolution(),
            right: noise.resolution(),
        });
    }
    Ok(())
}

/// Advances the segment `X_t` to `X_{t+1}`.
pub fn advance_unit(seg: &Segment, noise: &NoiseBlock) -> Result<Segment> {
    check_noise(seg, noise)?;
    let lag = seg.values();
    let mut out = Vec::with_capacity(lag.len());
    let mut x = seg.head();
    out.push(x);
    for (lagged, dw) in lag.iter().zip(noise.increments()) {
        x += lagged * dw;
        out.push(x);
    }
    Segment::new(out)
}

/// Advances `(X_t, Z_t)` by one unit interval with the coupling drift
/// switched on (`rho = true`) or off for the whole interval.
///
/// With `lambda == 0` or `rho == false` both components follow
/// [`advance_unit`] bit for bit.
pub fn advance_coupled_unit(
    x: &Segment,
    z: &Segment,
    noise: &NoiseBlock,
    lambda: f64,
    rho: bool,
) -> Result<(Segment, Segment)> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(SimError::param("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    check_same_resolution(x, z)?;
    let x_next = advance_unit(x, noise)?;
    let z_next = advance_damped(z, noise, if rho { lambda } else { 0.0 })?;
    Ok((x_next, z_next))
}

fn advance_damped(z: &Segment, noise: &NoiseBlock, rate: f64) -> Result<Segment> {
    check_noise(z, noise)?;
    let decay = (-rate * z.step()).exp();
    let lag = z.values();
    let mut out = Vec::with_capacity(lag.len());
    let mut v = z.head();
    out.push(v);
    for (lagged, dw) in lag.iter().zip(noise.increments()) {
        v = decay * v + lagged * dw;
        out.push(v);
    }
    Segment::new(out)
}

/// Renormalized solution: the true segment is `exp(log_scale) · segment`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub segment: UnitSegment,
    pub log_scale: f64,
    pub t: u64,
}

/// Result of one renormalized step.
#[derive(Debug, Clone)]
pub struct UnitStep {
    /// The new state.
    pub state: PathState,
    /// `X_{t+1}` expressed in the scale of the previous state's unit segment.
    pub raw: Segment,
    /// `log ‖X_{t+1}‖ - log ‖X_t‖`.
    pub log_growth: f64,
}

impl PathState {
    /// Starts from `eta`, which is projected immediately.
    pub fn new(eta: &Segment) -> Result<Self> {
        let (segment, log_scale) = eta.project()?;
        Ok(Self {
            segment,
            log_scale,
            t: 0,
        })
    }

    pub fn resolution(&self) -> usize {
        self.segment.resolution()
    }

    /// `log ‖X_t‖`.
    pub fn log_m2_norm(&self) -> f64 {
        self.log_scale + self.segment.log_m2_norm()
    }

    /// `log ‖X_t‖` (sup-norm).
    pub fn log_sup_norm(&self) -> f64 {
        self.log_scale + self.segment.sup_norm().ln()
    }

    pub fn step(&self, noise: &NoiseBlock) -> Result<UnitStep> {
        let raw = advance_unit(&self.segment, noise).map_err(|e| match e {
            SimError::NonFinite { .. } => SimError::Overflow { t: self.t },
            other => other,
        })?;
        let (segment, log_growth) = match raw.project() {
            Ok(p) => p,
            Err(SimError::ZeroState) => return Err(SimError::ExtinctState { t: self.t + 1 }),
            Err(e) => return Err(e),
        };
        let state = PathState {
            segment,
            log_scale: self.log_scale + log_growth,
            t: self.t + 1,
        };
        Ok(UnitStep {
            state,
            raw,
            log_growth,
        })
    }
}

/// Advances `state` one unit interval and renormalizes.
pub fn advance_unit_renormalized(state: &PathState, noise: &NoiseBlock) -> Result<PathState> {
    state.step(noise).map(|s| s.state)
}

/// A single renormalized trajectory driven by its own noise stream.
#[derive(Debug, Clone)]
pub struct Trajectory {
    state: PathState,
    noise: NoiseStream,
}

/// One unit interval of a [`Trajectory`].
#[derive(Debug, Clone)]
pub struct Transition {
    /// State at the start of the interval.
    pub prev: PathState,
    /// End segment in the scale of `prev.segment`.
    pub raw: Segment,
    pub log_growth: f64,
}

impl Trajectory {
    pub fn new(eta: &Segment, noise: NoiseStream) -> Result<Self> {
        Ok(Self {
            state: PathState::new(eta)?,
            noise,
        })
    }

    pub fn state(&self) -> &PathState {
        &self.state
    }

    pub fn noise(&self) -> &NoiseStream {
        &self.noise
    }

    pub fn advance(&mut self) -> Result<Transition> {
        let block = draw_noise(&mut self.noise, self.state.resolution())?;
        let step = self.state.step(&block)?;
        let prev = std::mem::replace(&mut self.state, step.state);
        Ok(Transition {
            prev,
            raw: step.raw,
            log_growth: step.log_growth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_noise_freezes_head() {
        let seg = Segment::from_fn(8, |s| 3.0 + s).unwrap();
        let out = advance_unit(&seg, &NoiseBlock::zeros(8).unwrap()).unwrap();
        assert_eq!(out, Segment::constant(8, 3.0).unwrap());
    }

    #[test]
    fn constant_history_integrates_exactly() {
        let c = 2.5;
        let seg = Segment::constant(16, c).unwrap();
        let noise = draw_noise(&mut NoiseStream::new(9, 0), 16).unwrap();
        let out = advance_unit(&seg, &noise).unwrap();
        let mut w = 0.0;
        for (k, v) in out.values().iter().enumerate() {
            assert_relative_eq!(*v, c * (1.0 + w), epsilon = 1e-12);
            if k < 16 {
                w += noise.increments()[k];
            }
        }
        assert_relative_eq!(out.head(), c * (1.0 + w), epsilon = 1e-12);
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let seg = Segment::constant(8, 1.0).unwrap();
        assert!(matches!(
            advance_unit(&seg, &NoiseBlock::zeros(4).unwrap()),
            Err(SimError::ResolutionMismatch { .. })
        ));
        let z = Segment::constant(4, 1.0).unwrap();
        assert!(advance_coupled_unit(&seg, &z, &NoiseBlock::zeros(8).unwrap(), 1.0, true).is_err());
        assert!(advance_coupled_unit(&seg, &seg, &NoiseBlock::zeros(8).unwrap(), -1.0, true).is_err());
    }

    #[test]
    fn renormalized_zero_noise_from_constant() {
        let eta = Segment::constant(32, 1.0).unwrap();
        let mut state = PathState::new(&eta).unwrap();
        assert_relative_eq!(state.log_scale, 2f64.sqrt().ln(), epsilon = 1e-15);
        let zero = NoiseBlock::zeros(32).unwrap();
        for _ in 0..5 {
            let next = advance_unit_renormalized(&state, &zero).unwrap();
            for &v in next.segment.values() {
                assert_relative_eq!(v, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
            }
            assert!((next.log_scale - state.log_scale).abs() < 1e-15);
            state = next;
        }
        assert_eq!(state.t, 5);
    }

    #[test]
    fn renormalized_linearity() {
        let eta = Segment::from_fn(32, |s| (3.0 * s).cos() + 0.2).unwrap();
        let c = 1e10;
        let mut a = PathState::new(&eta).unwrap();
        let mut b = PathState::new(&eta.scaled(c).unwrap()).unwrap();
        let mut stream = NoiseStream::new(5, 0);
        for _ in 0..10 {
            let noise = draw_noise(&mut stream, 32).unwrap();
            a = advance_unit_renormalized(&a, &noise).unwrap();
            b = advance_unit_renormalized(&b, &noise).unwrap();
        }
        assert!(a.segment.max_abs_diff(&b.segment).unwrap() < 1e-12);
        assert_relative_eq!(b.log_scale - a.log_scale, c.ln(), epsilon = 1e-9);
    }

    #[test]
    fn long_run_stays_representable() {
        let mut state = PathState::new(&Segment::constant(64, 1.0).unwrap()).unwrap();
        let mut stream = NoiseStream::new(11, 0);
        for _ in 0..2000 {
            let noise = draw_noise(&mut stream, 64).unwrap();
            state = advance_unit_renormalized(&state, &noise).unwrap();
            assert!((state.segment.m2_norm() - 1.0).abs() < 1e-9);
        }
        assert!(state.log_scale.is_finite());
        assert_eq!(state.t, 2000);
    }

    #[test]
    fn extinct_state_reported() {
        // Zero head and zero noise: every advanced value is zero.
        let seg = Segment::new(vec![1.0, 1.0, 0.0]).unwrap();
        let mut state = PathState::new(&seg).unwrap();
        state.t = 7;
        let err = state.step(&NoiseBlock::zeros(2).unwrap()).unwrap_err();
        assert_eq!(err, SimError::ExtinctState { t: 8 });
    }

    #[test]
    fn coupled_without_drift_matches_uncoupled() {
        let x = Segment::from_fn(16, |s| 1.0 + s * s).unwrap();
        let z = Segment::from_fn(16, |s| (5.0 * s).sin() + 0.1).unwrap();
        let noise = draw_noise(&mut NoiseStream::new(3, 0), 16).unwrap();
        for (lambda, rho) in [(0.0, true), (5.0, false), (0.0, false)] {
            let (xn, zn) = advance_coupled_unit(&x, &z, &noise, lambda, rho).unwrap();
            assert_eq!(xn, advance_unit(&x, &noise).unwrap());
            assert_eq!(zn, advance_unit(&z, &noise).unwrap());
        }
    }

    #[test]
    fn merged_difference_stays_merged() {
        let x = Segment::constant(16, 1.0).unwrap();
        let z = Segment::zeros(16).unwrap();
        let noise = draw_noise(&mut NoiseStream::new(3, 0), 16).unwrap();
        for (lambda, rho) in [(0.0, false), (64.0, true), (1e6, true)] {
            let (_, zn) = advance_coupled_unit(&x, &z, &noise, lambda, rho).unwrap();
            assert!(zn.is_zero());
        }
    }

    #[test]
    fn exponential_product_under_zero_noise() {
        let n = 64;
        let x = Segment::constant(n, 1.0).unwrap();
        let (_, z) = advance_coupled_unit(&x, &x, &NoiseBlock::zeros(n).unwrap(), 1.0, true).unwrap();
        assert!((z.head() - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn stiff_drift_stays_finite() {
        let n = 32;
        let x = Segment::constant(n, 1.0).unwrap();
        let mut z = Segment::from_fn(n, |s| 1.0 - 2.0 * s).unwrap();
        let bounded = NoiseBlock::from_increments((0..n).map(|k| if k % 2 == 0 { 0.5 } else { -0.5 }).collect()).unwrap();
        for _ in 0..20 {
            let (_, zn) = advance_coupled_unit(&x, &z, &bounded, 1e6, true).unwrap();
            assert!(zn.values().iter().all(|v| v.is_finite()));
            z = zn;
        }
    }

    proptest! {
        #[test]
        fn scaling_equivariance(
            vals in prop::collection::vec(-10.0f64..10.0, 17),
            c in -1e3f64..1e3,
            seed in 0u64..1000,
        ) {
            let seg = Segment::new(vals).unwrap();
            let noise = draw_noise(&mut NoiseStream::new(seed, 0), 16).unwrap();
            let a = advance_unit(&seg.scaled(c).unwrap(), &noise).unwrap();
            let b = advance_unit(&seg, &noise).unwrap().scaled(c).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}
