//! Noise schedules, forward noising, reverse steps, Tweedie estimation, and
//! the differentiable sample-to-zero unroll.
//!
//! The unroll always takes deterministic (eta = 0) sub-steps, even when the
//! outer sampler is ancestral: it sits inside differentiated programs, and
//! both engines must see the same function. Its body is written against
//! [`AdContext`], so the exact computation that produces a guidance loss is
//! the one that gets differentiated, by either engine.

use crate::autodiff::{AdContext, EvalCtx};
use crate::error::{Error, Result};
use crate::numerics::rng::RngState;
use crate::numerics::tensor::Tensor;

/// Per-step noise amounts for a T-step process.
///
/// Index convention: `beta(t)` and `alpha(t)` are defined for `1 <= t <= T`,
/// `alpha_bar(t)` for `0 <= t <= T` with `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidSchedule {
                reason: format!("need at least 2 steps, got {steps}"),
            });
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule {
                reason: format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
            });
        }
        let mut beta = Vec::with_capacity(steps);
        let mut alpha = Vec::with_capacity(steps);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for i in 0..steps {
            let b = beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64;
            beta.push(b);
            alpha.push(1.0 - b);
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        let s = NoiseSchedule { steps, beta, alpha, alpha_bar };
        debug_assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        debug_assert!(s.alpha_bar[steps] > 0.0);
        Ok(s)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps {
            Ok(())
        } else {
            Err(Error::StepOutOfRange { t, steps: self.steps })
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
}

/// A noise predictor usable inside differentiated programs.
///
/// Implemented by the trained MLP and by fixed-output oracles in tests.
pub trait Denoiser {
    fn predict_in<C: AdContext>(&self, ctx: &mut C, z: &C::Value, t: usize) -> Result<C::Value>;

    fn predict(&self, z: &Tensor, t: usize) -> Result<Tensor> {
        let mut ctx = EvalCtx;
        let zv = z.clone();
        self.predict_in(&mut ctx, &zv, t)
    }
}

/// Denoiser that ignores its input and returns a fixed prediction; the
/// oracle for algebraic step checks.
#[derive(Debug, Clone)]
pub struct ConstDenoiser(pub Tensor);

impl Denoiser for ConstDenoiser {
    fn predict_in<C: AdContext>(&self, ctx: &mut C, _z: &C::Value, _t: usize) -> Result<C::Value> {
        Ok(ctx.constant(&self.0))
    }
}

/// Forward noising: `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_step(t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "q_sample",
            lhs: z0.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let ab = s.alpha_bar(t);
    z0.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt()))
}

/// Clean-data estimate from a noisy latent and a noise prediction:
/// `(z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`.
pub fn tweedie(z_t: &Tensor, t: usize, eps_pred: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_step(t)?;
    if z_t.shape() != eps_pred.shape() {
        return Err(Error::ShapeMismatch {
            op: "tweedie",
            lhs: z_t.shape().to_vec(),
            rhs: eps_pred.shape().to_vec(),
        });
    }
    let ab = s.alpha_bar(t);
    Ok(z_t.sub(&eps_pred.scale((1.0 - ab).sqrt()))?.scale(1.0 / ab.sqrt()))
}

/// Tweedie estimate built inside a differentiable program.
pub fn tweedie_in<C: AdContext>(
    ctx: &mut C,
    z: &C::Value,
    eps: &C::Value,
    t: usize,
    s: &NoiseSchedule,
) -> Result<C::Value> {
    let ab = s.alpha_bar(t);
    let noise_part = ctx.scale(eps, (1.0 - ab).sqrt());
    let centered = ctx.sub(z, &noise_part)?;
    Ok(ctx.scale(&centered, 1.0 / ab.sqrt()))
}

/// One deterministic (eta = 0) jump from level `a` down to level `b < a`,
/// through the Tweedie estimate.
fn ddim_jump_in<C: AdContext, D: Denoiser>(
    ctx: &mut C,
    model: &D,
    z: &C::Value,
    a: usize,
    b: usize,
    s: &NoiseSchedule,
) -> Result<C::Value> {
    let eps = model.predict_in(ctx, z, a)?;
    let z0 = tweedie_in(ctx, z, &eps, a, s)?;
    if b == 0 {
        return Ok(z0);
    }
    let ab = s.alpha_bar(b);
    let signal = ctx.scale(&z0, ab.sqrt());
    let noise = ctx.scale(&eps, (1.0 - ab).sqrt());
    ctx.add(&signal, &noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Stochastic DDPM posterior step with `sigma_t = sqrt(beta_t)`;
    /// no noise at t = 1.
    AncestralDdpm,
    /// Deterministic DDIM (eta = 0) step through the Tweedie estimate.
    DeterministicDdim,
}

/// Single reverse step from level `t` to `t - 1`.
pub fn denoise_step<D: Denoiser>(
    model: &D,
    z_t: &Tensor,
    t: usize,
    kind: StepKind,
    rng: Option<&mut RngState>,
    s: &NoiseSchedule,
) -> Result<Tensor> {
    s.check_step(t)?;
    match kind {
        StepKind::DeterministicDdim => {
            let mut ctx = EvalCtx;
            let z = z_t.clone();
            ddim_jump_in(&mut ctx, model, &z, t, t - 1, s)
        }
        StepKind::AncestralDdpm => {
            let eps = model.predict(z_t, t)?;
            let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
            let mean = z_t.sub(&eps.scale(coef))?.scale(1.0 / s.alpha(t).sqrt());
            if t == 1 {
                return Ok(mean);
            }
            let rng = rng.ok_or(Error::MissingRng { t })?;
            let xi = rng.gaussian(z_t.shape())?;
            mean.add(&xi.scale(s.beta(t).sqrt()))
        }
    }
}

/// Deterministic unroll from level `t` to 0, visiting stride-spaced levels
/// plus level 0; differentiable end to end.
pub fn sample_to_zero_in<C: AdContext, D: Denoiser>(
    ctx: &mut C,
    model: &D,
    z: &C::Value,
    t: usize,
    stride: usize,
    s: &NoiseSchedule,
) -> Result<C::Value> {
    s.check_step(t)?;
    if stride == 0 {
        return Err(Error::InvalidConfig { reason: "unroll stride must be positive".into() });
    }
    let mut cur = ctx.scale(z, 1.0);
    let mut level = t;
    while level > 0 {
        let next = level.saturating_sub(stride);
        cur = ddim_jump_in(ctx, model, &cur, level, next, s)?;
        level = next;
    }
    Ok(cur)
}

/// Plain-tensor entry point for the unroll.
pub fn sample_to_zero<D: Denoiser>(
    model: &D,
    z_t: &Tensor,
    t: usize,
    stride: usize,
    s: &NoiseSchedule,
) -> Result<Tensor> {
    let mut ctx = EvalCtx;
    let z = z_t.clone();
    sample_to_zero_in(&mut ctx, model, &z, t, stride, s)
}

/// Per-step record of a guided sampling run.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub t: usize,
    /// Objective value (batch mean) seen by the guidance update.
    pub loss: f64,
    /// Mean per-row directional derivative for forward-gradient updates;
    /// zero for reverse-mode strategies.
    pub directional: f64,
    /// Frobenius norm of the raw update direction `G_t`.
    pub update_norm: f64,
    /// True when a degenerate score direction fell back to a random guess.
    pub guess_fallback: bool,
    /// Tape scalars allocated while constructing the guess vector.
    pub guess_tape_scalars: u64,
    /// Peak live scalars attributable to this guidance update.
    pub update_peak_scalars: u64,
    /// Tape scalars allocated by this guidance update (guess construction
    /// excluded).
    pub update_tape_scalars: u64,
    /// Forward-class peak attributable to this guidance update.
    pub update_forward_scalars: u64,
}

/// Latents and guidance diagnostics for one sampling run.
///
/// `latents[0]` is `Z_T` and `latents[T]` is `Z_0`; diagnostics are present
/// exactly for guided steps.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub latents: Vec<Tensor>,
    pub steps: Vec<StepDiagnostics>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn constant_beta_schedule_products() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.alpha_bar(2), 0.25);
    }

    #[test]
    fn alpha_bar_matches_direct_product() {
        let s = schedule();
        // Independent recomputation of the running product.
        let mut prod = 1.0;
        for t in 1..=100 {
            let b = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 99.0;
            prod *= 1.0 - b;
            assert!((s.alpha_bar(t) - prod).abs() <= 1e-15 * prod.abs().max(1.0), "t={t}");
        }
        assert!(s.alpha_bar(100) > 0.0 && s.alpha_bar(100) < 1.0);
    }

    #[test]
    fn schedule_invariants_hold() {
        for (steps, lo, hi) in [(2, 0.3, 0.3), (10, 1e-3, 0.1), (100, 1e-4, 0.02)] {
            let s = NoiseSchedule::linear(steps, lo, hi).unwrap();
            for t in 1..=steps {
                assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                if t > 1 {
                    assert!(s.beta(t) >= s.beta(t - 1));
                }
            }
        }
    }

    #[test]
    fn schedule_rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
    }

    #[test]
    fn q_sample_zero_noise_scales_signal() {
        let s = schedule();
        let z0 = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let eps = Tensor::zeros(&[1, 2]).unwrap();
        let zt = q_sample(&z0, 40, &eps, &s).unwrap();
        let want = z0.scale(s.alpha_bar(40).sqrt());
        assert_eq!(zt, want);
    }

    #[test]
    fn q_sample_pure_noise_scales_basis_vector() {
        let s = schedule();
        let z0 = Tensor::zeros(&[1, 2]).unwrap();
        let e1 = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let zt = q_sample(&z0, 70, &e1, &s).unwrap();
        assert!((zt.get2(0, 0) - (1.0 - s.alpha_bar(70)).sqrt()).abs() < 1e-15);
        assert_eq!(zt.get2(0, 1), 0.0);
    }

    #[test]
    fn q_sample_near_identity_at_tiny_beta() {
        // abar_0 == 1 by convention; at t = 1 with a tiny beta the forward
        // noising is close to the identity on the signal.
        let s = NoiseSchedule::linear(10, 1e-9, 1e-8).unwrap();
        let z0 = Tensor::from_rows(&[vec![0.4, -0.7]]).unwrap();
        let eps = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let zt = q_sample(&z0, 1, &eps, &s).unwrap();
        let diff = zt.sub(&z0).unwrap().frobenius_norm();
        assert!(diff < 1e-4, "diff {diff}");
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn tweedie_inverts_q_sample() {
        let s = schedule();
        let z0 = Tensor::from_rows(&[vec![0.3, 0.4], vec![-1.0, 0.2]]).unwrap();
        let mut rng = RngState::new(11);
        let eps = rng.gaussian(&[2, 2]).unwrap();
        let zt = q_sample(&z0, 55, &eps, &s).unwrap();
        let back = tweedie(&zt, 55, &eps, &s).unwrap();
        let err = back.sub(&z0).unwrap().frobenius_norm();
        assert!(err <= 1e-12, "err {err}");
    }

    #[test]
    fn tweedie_zero_prediction_rescales() {
        let s = schedule();
        let zt = Tensor::from_rows(&[vec![0.5, -0.25]]).unwrap();
        let zero = Tensor::zeros(&[1, 2]).unwrap();
        let z0 = tweedie(&zt, 30, &zero, &s).unwrap();
        assert_eq!(z0, zt.scale(1.0 / s.alpha_bar(30).sqrt()));
    }

    #[test]
    fn step_bounds_are_checked() {
        let s = schedule();
        let z = Tensor::zeros(&[1, 2]).unwrap();
        assert!(matches!(
            q_sample(&z, 0, &z, &s),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(matches!(
            tweedie(&z, 101, &z, &s),
            Err(Error::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn last_step_adds_no_noise() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::from_rows(&[vec![0.1, -0.2]]).unwrap());
        let z = Tensor::from_rows(&[vec![0.6, 0.3]]).unwrap();
        // No rng supplied: fine at t = 1 for both kinds.
        let a = denoise_step(&model, &z, 1, StepKind::AncestralDdpm, None, &s).unwrap();
        let d = denoise_step(&model, &z, 1, StepKind::DeterministicDdim, None, &s).unwrap();
        assert!(a.all_finite() && d.all_finite());
        // And a second call is identical: nothing stochastic happened.
        let a2 = denoise_step(&model, &z, 1, StepKind::AncestralDdpm, None, &s).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn ancestral_step_requires_rng_above_t1() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::zeros(&[1, 2]).unwrap());
        let z = Tensor::zeros(&[1, 2]).unwrap();
        assert!(matches!(
            denoise_step(&model, &z, 5, StepKind::AncestralDdpm, None, &s),
            Err(Error::MissingRng { t: 5 })
        ));
    }

    #[test]
    fn ancestral_step_is_seed_deterministic() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::from_rows(&[vec![0.3, 0.1]]).unwrap());
        let z = Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let mut r1 = RngState::new(77);
        let mut r2 = RngState::new(77);
        let a = denoise_step(&model, &z, 9, StepKind::AncestralDdpm, Some(&mut r1), &s).unwrap();
        let b = denoise_step(&model, &z, 9, StepKind::AncestralDdpm, Some(&mut r2), &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ddim_step_with_oracle_prediction_renoises_true_signal() {
        let s = schedule();
        let z0 = Tensor::from_rows(&[vec![0.25, -0.5]]).unwrap();
        let mut rng = RngState::new(3);
        let eps = rng.gaussian(&[1, 2]).unwrap();
        let t = 60;
        let zt = q_sample(&z0, t, &eps, &s).unwrap();
        let model = ConstDenoiser(eps.clone());
        let stepped = denoise_step(&model, &zt, t, StepKind::DeterministicDdim, None, &s).unwrap();
        let want = q_sample(&z0, t - 1, &eps, &s).unwrap();
        let err = stepped.sub(&want).unwrap().frobenius_norm();
        assert!(err <= 1e-12, "err {err}");
    }

    #[test]
    fn unroll_from_t1_equals_tweedie() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::from_rows(&[vec![0.2, 0.4]]).unwrap());
        let z = Tensor::from_rows(&[vec![0.9, -0.3]]).unwrap();
        let unrolled = sample_to_zero(&model, &z, 1, 1, &s).unwrap();
        let eps = model.predict(&z, 1).unwrap();
        let tw = tweedie(&z, 1, &eps, &s).unwrap();
        assert_eq!(unrolled, tw);
    }

    #[test]
    fn degenerate_unroll_is_exactly_tweedie() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::from_rows(&[vec![-0.1, 0.6]]).unwrap());
        let z = Tensor::from_rows(&[vec![0.4, 0.8]]).unwrap();
        let t = 37;
        let one_jump = sample_to_zero(&model, &z, t, t, &s).unwrap();
        let eps = model.predict(&z, t).unwrap();
        let tw = tweedie(&z, t, &eps, &s).unwrap();
        assert_eq!(one_jump, tw);
        // Larger strides clamp to the same single jump.
        let clamped = sample_to_zero(&model, &z, t, t + 50, &s).unwrap();
        assert_eq!(clamped, tw);
    }

    #[test]
    fn unroll_is_bitwise_deterministic() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::from_rows(&[vec![0.05, -0.02]]).unwrap());
        let z = Tensor::from_rows(&[vec![0.2, 0.1]]).unwrap();
        let a = sample_to_zero(&model, &z, 20, 3, &s).unwrap();
        let b = sample_to_zero(&model, &z, 20, 3, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unroll_rejects_zero_stride() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::zeros(&[1, 2]).unwrap());
        let z = Tensor::zeros(&[1, 2]).unwrap();
        assert!(sample_to_zero(&model, &z, 10, 0, &s).is_err());
    }

    proptest! {
        #[test]
        fn q_sample_tweedie_roundtrip(
            z0v in proptest::collection::vec(-2.0f64..2.0, 6),
            epsv in proptest::collection::vec(-3.0f64..3.0, 6),
            t in 1usize..=100,
        ) {
            let s = schedule();
            let z0 = Tensor::new(&[3, 2], z0v).unwrap();
            let eps = Tensor::new(&[3, 2], epsv).unwrap();
            let zt = q_sample(&z0, t, &eps, &s).unwrap();
            let back = tweedie(&zt, t, &eps, &s).unwrap();
            prop_assert!(back.sub(&z0).unwrap().frobenius_norm() <= 1e-12);
        }
    }
}
