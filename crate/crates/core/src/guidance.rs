//! Training-free guidance over the toy sampler.
//!
//! Four strategies share one guidance objective, the loss of the unrolled
//! clean estimate:
//!
//! - `unguided`: plain sampling, no update;
//! - `tweedie`: reverse-mode gradient through the one-shot Tweedie estimate;
//! - `direct`: reverse-mode gradient through the full sample-to-zero unroll;
//! - `titan`: forward-gradient update `G = h V` with `h` the directional
//!   derivative along a guess vector `V`, computed by one dual-number pass
//!   with no tape.
//!
//! The batch axis holds independent samples, so the forward-gradient update
//! is applied per row: each row carries its own directional derivative
//! `h_i = <grad_i, V_i>` and update `h_i V_i`. This is the batched form of
//! the single-sample loop; collapsing the batch to one global projection
//! would scale per-sample guidance by `1/n` and drown it in the other rows'
//! noise. Diagnostics report the mean of `h_i`.

use crate::autodiff::{self, AdContext, Program, SumOf};
use crate::diffusion::{
    denoise_step, sample_to_zero_in, tweedie_in, Denoiser, NoiseSchedule, StepDiagnostics,
    StepKind, Trajectory,
};
use crate::error::{Error, Result};
use crate::numerics::meter::MemMeter;
use crate::numerics::rng::RngState;
use crate::numerics::tensor::Tensor;

/// Loss over a `[n, 2]` batch of points, reduced per row; the public
/// evaluation averages over the batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Squared circle residual `(x^2 + y^2 - target)^2`.
    Circle { target: f64 },
    /// Masked squared reconstruction `sum_j mask_j (p_j - target_j)^2`.
    Masked { mask: Vec<f64>, target: Vec<f64> },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match self {
            Objective::Circle { target } => {
                if *target > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig { reason: format!("circle target must be positive, got {target}") })
                }
            }
            Objective::Masked { mask, target } => {
                if mask.len() != target.len() {
                    return Err(Error::InvalidConfig {
                        reason: "mask and target lengths differ".into(),
                    });
                }
                if !mask.iter().all(|&m| m == 0.0 || m == 1.0) {
                    return Err(Error::InvalidConfig { reason: "mask entries must be 0 or 1".into() });
                }
                if !target.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidConfig { reason: "mask target must be finite".into() });
                }
                Ok(())
            }
        }
    }

    /// Per-row losses `[n]`, inside a differentiable program.
    pub fn rows_in<C: AdContext>(&self, ctx: &mut C, points: &C::Value) -> Result<C::Value> {
        match self {
            Objective::Circle { target } => {
                let sq = ctx.square(points);
                let r2 = ctx.sum_axis(&sq, 1)?;
                let resid = ctx.add_scalar(&r2, -target);
                Ok(ctx.square(&resid))
            }
            Objective::Masked { mask, target } => {
                let n = ctx.shape(points)[0];
                let mask_t = Tensor::new(&[mask.len()], mask.clone())?.tile_row(n)?;
                let target_t = Tensor::new(&[target.len()], target.clone())?.tile_row(n)?;
                let mc = ctx.constant(&mask_t);
                let tc = ctx.constant(&target_t);
                let diff = ctx.sub(points, &tc)?;
                let masked = ctx.mul(&diff, &mc)?;
                let sq = ctx.square(&masked);
                ctx.sum_axis(&sq, 1)
            }
        }
    }

    /// Batch-mean loss.
    pub fn eval(&self, points: &Tensor) -> Result<f64> {
        let mut ctx = autodiff::EvalCtx;
        let p = points.clone();
        let rows = self.rows_in(&mut ctx, &p)?;
        Ok(rows.mean_all())
    }

    /// Mean of `exp(-||masked residual||)` over rows; the likelihood form of
    /// the masked objective, reported as a diagnostic only.
    pub fn masked_likelihood(&self, points: &Tensor) -> Result<f64> {
        let mut ctx = autodiff::EvalCtx;
        let p = points.clone();
        let rows = self.rows_in(&mut ctx, &p)?;
        let mean = rows
            .data()
            .iter()
            .map(|&sq| (-sq.sqrt()).exp())
            .sum::<f64>()
            / rows.len() as f64;
        Ok(mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Unguided,
    Tweedie,
    Direct,
    Titan,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Unguided => "unguided",
            Strategy::Tweedie => "tweedie",
            Strategy::Direct => "direct",
            Strategy::Titan => "titan",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessKind {
    /// `V ~ N(0, I)`, unnormalized; unbiased, high variance.
    Random,
    /// Normalized denoiser output, deterministic per state.
    Score,
    /// Normalized gradient on a row subset, tiled cyclically over the batch.
    Sampled { frames: usize },
    /// Per-row normalized true gradient; validation hook that makes the
    /// forward-gradient update coincide with the reverse-mode one.
    TrueGradient,
}

impl GuessKind {
    pub fn name(&self) -> &'static str {
        match self {
            GuessKind::Random => "random",
            GuessKind::Score => "score",
            GuessKind::Sampled { .. } => "sampled",
            GuessKind::TrueGradient => "true-gradient",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterSampler {
    AncestralDdpm,
    DeterministicDdim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub strategy: Strategy,
    pub guess: GuessKind,
    /// Guidance step size, applied per sample.
    pub lambda: f64,
    /// Level spacing of the sample-to-zero unroll.
    pub stride: usize,
    pub outer: OuterSampler,
    pub seed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            strategy: Strategy::Titan,
            guess: GuessKind::Score,
            lambda: 0.1,
            stride: 1,
            outer: OuterSampler::AncestralDdpm,
            seed: 7,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(Error::InvalidConfig { reason: format!("lambda must be positive, got {}", self.lambda) });
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig { reason: "stride must be positive".into() });
        }
        if let GuessKind::Sampled { frames } = self.guess {
            if frames == 0 {
                return Err(Error::InvalidConfig { reason: "sampled guess needs frames >= 1".into() });
            }
        }
        Ok(())
    }
}

/// Per-row losses of the unrolled clean estimate: the guidance objective.
pub struct GuidanceRows<'a, D> {
    pub model: &'a D,
    pub objective: &'a Objective,
    pub t: usize,
    pub stride: usize,
    pub schedule: &'a NoiseSchedule,
}

impl<D: Denoiser> Program for GuidanceRows<'_, D> {
    fn build<C: AdContext>(&self, ctx: &mut C, inputs: &[C::Value]) -> Result<C::Value> {
        let z0 = sample_to_zero_in(ctx, self.model, &inputs[0], self.t, self.stride, self.schedule)?;
        self.objective.rows_in(ctx, &z0)
    }
}

/// Per-row losses of the one-shot Tweedie estimate (gradient flows through
/// the denoiser).
pub struct TweedieRows<'a, D> {
    pub model: &'a D,
    pub objective: &'a Objective,
    pub t: usize,
    pub schedule: &'a NoiseSchedule,
}

impl<D: Denoiser> Program for TweedieRows<'_, D> {
    fn build<C: AdContext>(&self, ctx: &mut C, inputs: &[C::Value]) -> Result<C::Value> {
        let eps = self.model.predict_in(ctx, &inputs[0], self.t)?;
        let z0 = tweedie_in(ctx, &inputs[0], &eps, self.t, self.schedule)?;
        self.objective.rows_in(ctx, &z0)
    }
}

/// Tweedie estimate with the noise prediction frozen as a constant; the
/// shallow graph behind the sampled guess.
struct FrozenTweedieRows<'a> {
    eps: &'a Tensor,
    objective: &'a Objective,
    t: usize,
    schedule: &'a NoiseSchedule,
}

impl Program for FrozenTweedieRows<'_> {
    fn build<C: AdContext>(&self, ctx: &mut C, inputs: &[C::Value]) -> Result<C::Value> {
        let eps = ctx.constant(self.eps);
        let z0 = tweedie_in(ctx, &inputs[0], &eps, self.t, self.schedule)?;
        self.objective.rows_in(ctx, &z0)
    }
}

/// Unnormalized Gaussian guess.
pub fn guess_random(rng: &mut RngState, shape: &[usize]) -> Result<Tensor> {
    rng.gaussian(shape)
}

/// Normalized denoiser output; deterministic for a fixed `(z_t, t)`.
///
/// Each batch row is an independent sample, so each row is normalized on
/// its own: row `i` of `V` is that sample's unit score direction, and
/// `||V|| = sqrt(n)`. For a single-row batch this is the whole-tensor
/// normalization.
pub fn guess_score<D: Denoiser>(model: &D, z_t: &Tensor, t: usize) -> Result<Tensor> {
    let eps = model.predict(z_t, t)?;
    if eps.frobenius_norm() == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    Ok(normalize_rows(&eps))
}

/// Subset gradient guess: reverse-mode gradient of the objective of the
/// frozen Tweedie estimate on `frames` rows, normalized per row and tiled
/// cyclically over the batch, so every sample receives a unit direction and
/// `||V|| = sqrt(n)`.
#[allow(clippy::too_many_arguments)]
pub fn guess_sampled<D: Denoiser>(
    model: &D,
    z_t: &Tensor,
    t: usize,
    objective: &Objective,
    frames: usize,
    rng: &mut RngState,
    s: &NoiseSchedule,
) -> Result<Tensor> {
    let n = z_t.shape()[0];
    if frames == 0 || frames > n {
        return Err(Error::FrameCount { frames, rows: n });
    }
    let rows = rng.choose_distinct(n, frames);
    let z_sub = z_t.slice_rows(&rows)?;
    let eps_sub = model.predict(&z_sub, t)?;
    let program = FrozenTweedieRows { eps: &eps_sub, objective, t, schedule: s };
    let (_, mut grads) = autodiff::grad_multi(&SumOf(&program), &[&z_sub])?;
    let g = grads.remove(0);
    if g.frobenius_norm() == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let g = normalize_rows(&g);
    let cols = z_t.shape()[1];
    let mut data = Vec::with_capacity(n * cols);
    for i in 0..n {
        let src = i % frames;
        for j in 0..cols {
            data.push(g.get2(src, j));
        }
    }
    Tensor::new(z_t.shape(), data)
}

/// `out[i, :] = h[i] * v[i, :]`.
fn scale_rows(v: &Tensor, h: &Tensor) -> Tensor {
    let n = v.shape()[0];
    let cols = v.shape()[1];
    let mut data = Vec::with_capacity(n * cols);
    for i in 0..n {
        for j in 0..cols {
            data.push(h.data()[i] * v.get2(i, j));
        }
    }
    Tensor::new(v.shape(), data).expect("same shape")
}

fn normalize_rows(g: &Tensor) -> Tensor {
    let n = g.shape()[0];
    let cols = g.shape()[1];
    let mut data = Vec::with_capacity(n * cols);
    for i in 0..n {
        let norm = (0..cols).map(|j| g.get2(i, j).powi(2)).sum::<f64>().sqrt();
        let inv = if norm == 0.0 { 0.0 } else { 1.0 / norm };
        for j in 0..cols {
            data.push(g.get2(i, j) * inv);
        }
    }
    Tensor::new(g.shape(), data).expect("same shape")
}

struct Guess {
    v: Tensor,
    fallback: bool,
    tape_scalars: u64,
}

#[allow(clippy::too_many_arguments)]
fn build_guess<D: Denoiser>(
    model: &D,
    z_t: &Tensor,
    t: usize,
    objective: &Objective,
    cfg: &GuidanceConfig,
    rng: &mut RngState,
    s: &NoiseSchedule,
    meter: &MemMeter,
) -> Result<Guess> {
    let tape_before = meter.stats().tape_total;
    let (v, fallback) = match cfg.guess {
        GuessKind::Random => (guess_random(rng, z_t.shape())?, false),
        GuessKind::Score => match guess_score(model, z_t, t) {
            Ok(v) => (v, false),
            Err(Error::DegenerateDirection) => (guess_random(rng, z_t.shape())?, true),
            Err(e) => return Err(e),
        },
        GuessKind::Sampled { frames } => {
            match guess_sampled(model, z_t, t, objective, frames, rng, s) {
                Ok(v) => (v, false),
                Err(Error::DegenerateDirection) => (guess_random(rng, z_t.shape())?, true),
                Err(e) => return Err(e),
            }
        }
        GuessKind::TrueGradient => {
            let program = GuidanceRows { model, objective, t, stride: cfg.stride, schedule: s };
            let (_, mut grads) = autodiff::grad_multi(&SumOf(&program), &[z_t])?;
            (normalize_rows(&grads.remove(0)), false)
        }
    };
    Ok(Guess { v, fallback, tape_scalars: meter.stats().tape_total - tape_before })
}

/// One forward-gradient guidance update: evaluate the guidance objective and
/// its per-row directional derivatives in a single dual-number pass, then
/// step along the guess. No reverse tape is touched on this path; the
/// sampled-guess construction is the one bounded exception and is attributed
/// separately in the diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn titan_step<D: Denoiser>(
    model: &D,
    z_t: &Tensor,
    t: usize,
    objective: &Objective,
    cfg: &GuidanceConfig,
    rng: &mut RngState,
    s: &NoiseSchedule,
    meter: &MemMeter,
) -> Result<(Tensor, StepDiagnostics)> {
    let guess = build_guess(model, z_t, t, objective, cfg, rng, s, meter)?;
    let (z_next, mut diag) = forward_gradient_step(model, z_t, t, objective, cfg, &guess.v, s, meter)?;
    diag.guess_fallback = guess.fallback;
    diag.guess_tape_scalars = guess.tape_scalars;
    Ok((z_next, diag))
}

/// The update for a given guess vector: one dual-number pass yields the
/// per-row losses and directional derivatives, then `G[i] = h[i] V[i]`.
#[allow(clippy::too_many_arguments)]
fn forward_gradient_step<D: Denoiser>(
    model: &D,
    z_t: &Tensor,
    t: usize,
    objective: &Objective,
    cfg: &GuidanceConfig,
    v: &Tensor,
    s: &NoiseSchedule,
    meter: &MemMeter,
) -> Result<(Tensor, StepDiagnostics)> {
    let tape_before = meter.stats().tape_total;
    let program = GuidanceRows { model, objective, t, stride: cfg.stride, schedule: s };
    let (losses, h) = autodiff::jvp_full(&program, &[z_t], &[v])?;
    assert_eq!(
        meter.stats().tape_total,
        tape_before,
        "forward-gradient evaluation must not allocate tape storage"
    );
    let g = scale_rows(v, &h);
    let z_next = z_t.sub(&g.scale(cfg.lambda))?;
    let diag = StepDiagnostics {
        t,
        loss: losses.mean_all(),
        directional: h.mean_all(),
        update_norm: g.frobenius_norm(),
        guess_fallback: false,
        guess_tape_scalars: 0,
        update_peak_scalars: 0,
        update_tape_scalars: 0,
        update_forward_scalars: 0,
    };
    Ok((z_next, diag))
}

fn reverse_step<P: Program>(
    program: &P,
    z_t: &Tensor,
    t: usize,
    lambda: f64,
) -> Result<(Tensor, StepDiagnostics)> {
    let (loss_sum, mut grads) = autodiff::grad_multi(&SumOf(program), &[z_t])?;
    let g = grads.remove(0);
    let z_next = z_t.sub(&g.scale(lambda))?;
    let n = z_t.shape()[0] as f64;
    let diag = StepDiagnostics {
        t,
        loss: loss_sum / n,
        directional: 0.0,
        update_norm: g.frobenius_norm(),
        guess_fallback: false,
        guess_tape_scalars: 0,
        update_peak_scalars: 0,
        update_tape_scalars: 0,
        update_forward_scalars: 0,
    };
    Ok((z_next, diag))
}

/// Applies one guidance update for the configured strategy, metering the
/// peak and tape scalars it costs. Returns `None` diagnostics for the
/// unguided strategy. Resets the thread meter's peaks on entry.
#[allow(clippy::too_many_arguments)]
pub fn guidance_update<D: Denoiser>(
    model: &D,
    z_t: &Tensor,
    t: usize,
    objective: &Objective,
    cfg: &GuidanceConfig,
    rng: &mut RngState,
    s: &NoiseSchedule,
    meter: &MemMeter,
) -> Result<(Tensor, Option<StepDiagnostics>)> {
    if cfg.strategy == Strategy::Unguided {
        return Ok((z_t.clone(), None));
    }
    let base_live = meter.stats().live_scalars;
    let base_forward = meter.stats().forward_live;
    meter.reset();
    let (z_next, mut diag) = match cfg.strategy {
        Strategy::Unguided => unreachable!(),
        Strategy::Titan => titan_step(model, z_t, t, objective, cfg, rng, s, meter)?,
        Strategy::Direct => {
            let program = GuidanceRows { model, objective, t, stride: cfg.stride, schedule: s };
            reverse_step(&program, z_t, t, cfg.lambda)?
        }
        Strategy::Tweedie => {
            let program = TweedieRows { model, objective, t, schedule: s };
            reverse_step(&program, z_t, t, cfg.lambda)?
        }
    };
    let end = meter.stats();
    diag.update_peak_scalars = end.peak_scalars.saturating_sub(base_live);
    diag.update_tape_scalars = end.tape_total.saturating_sub(diag.guess_tape_scalars);
    diag.update_forward_scalars = end.forward_peak.saturating_sub(base_forward);
    Ok((z_next, Some(diag)))
}

/// One row of the memory report: peaks for a single guidance update.
#[derive(Debug, Clone)]
pub struct MemRow {
    pub strategy: Strategy,
    pub guess: Option<GuessKind>,
    /// Unroll depth (the step level t at which the update ran).
    pub depth: usize,
    pub peak_scalars: u64,
    pub tape_scalars: u64,
    pub forward_scalars: u64,
}

/// Peak and cumulative live-scalar counts per strategy and unroll depth.
#[derive(Debug, Clone, Default)]
pub struct MemReport {
    pub rows: Vec<MemRow>,
}

impl MemReport {
    pub fn max_peak(&self) -> u64 {
        self.rows.iter().map(|r| r.peak_scalars).max().unwrap_or(0)
    }
}

/// Output of a guided sampling run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub samples: Tensor,
    pub trajectory: Trajectory,
    pub mem: MemReport,
}

const STREAM_INIT: u64 = 0x01;
const STREAM_STEP_NOISE: u64 = 0x02;
const STREAM_GUESS: u64 = 0x03;

/// Full guided sampling run: draw `Z_T ~ N(0, I)`, then for `t = T..1` take
/// the outer denoise step into level `t` and apply one guidance update, and
/// finally step from level 1 to 0.
pub fn run<D: Denoiser>(
    model: &D,
    objective: &Objective,
    cfg: &GuidanceConfig,
    n: usize,
    base: &RngState,
    s: &NoiseSchedule,
    meter: &MemMeter,
) -> Result<RunOutput> {
    cfg.validate()?;
    objective.validate()?;
    let mut init_rng = base.substream(STREAM_INIT);
    let mut noise_rng = base.substream(STREAM_STEP_NOISE);
    let mut guess_rng = base.substream(STREAM_GUESS);

    let kind = match cfg.outer {
        OuterSampler::AncestralDdpm => StepKind::AncestralDdpm,
        OuterSampler::DeterministicDdim => StepKind::DeterministicDdim,
    };

    let mut z = init_rng.gaussian(&[n, 2])?;
    let mut trajectory = Trajectory::default();
    let mut mem = MemReport::default();

    for t in (1..=s.steps()).rev() {
        if t < s.steps() {
            z = denoise_step(model, &z, t + 1, kind, Some(&mut noise_rng), s)?;
        }
        let (z_next, diag) = guidance_update(model, &z, t, objective, cfg, &mut guess_rng, s, meter)?;
        z = z_next;
        if let Some(d) = diag {
            mem.rows.push(MemRow {
                strategy: cfg.strategy,
                guess: (cfg.strategy == Strategy::Titan).then_some(cfg.guess),
                depth: t,
                peak_scalars: d.update_peak_scalars,
                tape_scalars: d.update_tape_scalars,
                forward_scalars: d.update_forward_scalars,
            });
            trajectory.steps.push(d);
        }
        trajectory.latents.push(z.clone());
    }
    z = denoise_step(model, &z, 1, kind, Some(&mut noise_rng), s)?;
    trajectory.latents.push(z.clone());

    if !z.all_finite() {
        // Divergent guidance surfaces in diagnostics rather than being
        // clamped; callers decide what to do with non-finite samples.
        debug_assert!(trajectory.steps.iter().any(|d| !d.loss.is_finite() || !d.update_norm.is_finite()));
    }
    Ok(RunOutput { samples: z, trajectory, mem })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ConstDenoiser;
    use crate::model::{DenoiserParams, TrainedModel};

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::linear(20, 1e-4, 0.02).unwrap()
    }

    fn random_model(seed: u64) -> TrainedModel {
        let mut rng = RngState::new(seed);
        TrainedModel { params: DenoiserParams::init(8, &mut rng), schedule_steps: 20 }
    }

    fn zero_model() -> TrainedModel {
        TrainedModel { params: DenoiserParams::zeros(8), schedule_steps: 20 }
    }

    /// Bit-pattern view; exact comparison that treats NaN as equal to itself,
    /// for determinism checks on runs that may diverge.
    fn bits(t: &Tensor) -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn circle_objective_values() {
        let obj = Objective::Circle { target: 0.3 };
        let on_circle = Tensor::from_rows(&[vec![0.3f64.sqrt(), 0.0]]).unwrap();
        assert!(obj.eval(&on_circle).unwrap().abs() <= 1e-15);
        let p = Tensor::from_rows(&[vec![0.3, 0.4]]).unwrap();
        assert!((obj.eval(&p).unwrap() - 0.0025).abs() <= 1e-15);
    }

    #[test]
    fn masked_objective_ignores_unmasked_coordinates() {
        let obj = Objective::Masked { mask: vec![1.0, 0.0], target: vec![0.7, 123.0] };
        let p = Tensor::from_rows(&[vec![0.7, 9.9]]).unwrap();
        assert_eq!(obj.eval(&p).unwrap(), 0.0);
        assert!((obj.masked_likelihood(&p).unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn objective_validation() {
        assert!(Objective::Circle { target: 0.0 }.validate().is_err());
        assert!(Objective::Masked { mask: vec![0.5, 1.0], target: vec![0.0, 0.0] }
            .validate()
            .is_err());
        assert!(Objective::Masked { mask: vec![1.0, 0.0], target: vec![0.7, 0.0] }
            .validate()
            .is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = GuidanceConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
        cfg.lambda = 0.1;
        cfg.stride = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_guess_is_seeded_and_unit_variance() {
        let mut a = RngState::new(40).substream(1);
        let mut b = RngState::new(40).substream(1);
        assert_eq!(
            guess_random(&mut a, &[4, 2]).unwrap(),
            guess_random(&mut b, &[4, 2]).unwrap()
        );
        let mut rng = RngState::new(41);
        let draws = guess_random(&mut rng, &[50_000, 2]).unwrap();
        for j in 0..2 {
            let n = 50_000;
            let mean: f64 = (0..n).map(|i| draws.get2(i, j)).sum::<f64>() / n as f64;
            let var: f64 =
                (0..n).map(|i| (draws.get2(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((var - 1.0).abs() < 0.02, "axis {j} var {var}");
        }
    }

    #[test]
    fn score_guess_normalizes_denoiser_output() {
        let s = schedule();
        let model = ConstDenoiser(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let z = Tensor::zeros(&[1, 2]).unwrap();
        let v = guess_score(&model, &z, 5).unwrap();
        assert!((v.get2(0, 0) - 0.6).abs() <= 1e-15);
        assert!((v.get2(0, 1) - 0.8).abs() <= 1e-15);
        assert!((v.frobenius_norm() - 1.0).abs() <= 1e-12);
        // Deterministic: same state twice.
        assert_eq!(v, guess_score(&model, &z, 5).unwrap());
        let _ = s;
    }

    #[test]
    fn score_guess_zero_output_is_degenerate() {
        let model = ConstDenoiser(Tensor::zeros(&[2, 2]).unwrap());
        let z = Tensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(
            guess_score(&model, &z, 3),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn sampled_guess_full_subset_is_normalized_gradient() {
        let s = schedule();
        let model = random_model(50);
        let obj = Objective::Circle { target: 0.3 };
        let mut rng = RngState::new(51);
        let z = rng.gaussian(&[6, 2]).unwrap();
        let mut guess_rng = RngState::new(52);
        let v = guess_sampled(&model, &z, 10, &obj, 6, &mut guess_rng, &s).unwrap();
        // Every row carries its own unit direction.
        assert!((v.frobenius_norm() - 6.0f64.sqrt()).abs() <= 1e-9);
        for i in 0..6 {
            let norm = (v.get2(i, 0).powi(2) + v.get2(i, 1).powi(2)).sqrt();
            assert!((norm - 1.0).abs() <= 1e-12, "row {i}");
        }
    }

    #[test]
    fn sampled_guess_tiles_cyclically() {
        let s = schedule();
        let model = random_model(53);
        let obj = Objective::Circle { target: 0.3 };
        let mut rng = RngState::new(54);
        let z = rng.gaussian(&[2, 2]).unwrap();
        let mut guess_rng = RngState::new(55);
        let v = guess_sampled(&model, &z, 8, &obj, 1, &mut guess_rng, &s).unwrap();
        assert_eq!(v.slice_rows(&[0]).unwrap(), v.slice_rows(&[1]).unwrap());
        assert!((v.frobenius_norm() - (2.0f64).sqrt()).abs() <= 1e-9);

        let mut g1 = RngState::new(56);
        let mut g2 = RngState::new(56);
        let z8 = rng.gaussian(&[8, 2]).unwrap();
        let a = guess_sampled(&model, &z8, 8, &obj, 2, &mut g1, &s).unwrap();
        let b = guess_sampled(&model, &z8, 8, &obj, 2, &mut g2, &s).unwrap();
        assert_eq!(a, b);
        assert!((a.frobenius_norm() - 8.0f64.sqrt()).abs() <= 1e-9);
    }

    #[test]
    fn sampled_guess_frame_bounds() {
        let s = schedule();
        let model = random_model(57);
        let obj = Objective::Circle { target: 0.3 };
        let z = Tensor::zeros(&[4, 2]).unwrap().add_scalar(0.3);
        let mut rng = RngState::new(58);
        assert!(matches!(
            guess_sampled(&model, &z, 5, &obj, 5, &mut rng, &s),
            Err(Error::FrameCount { frames: 5, rows: 4 })
        ));
        assert!(matches!(
            guess_sampled(&model, &z, 5, &obj, 0, &mut rng, &s),
            Err(Error::FrameCount { .. })
        ));
    }

    #[test]
    fn orthogonal_guess_leaves_latent_unchanged() {
        // With the zero denoiser at t = 1 the objective gradient at each row
        // is radial; a perpendicular guess has exactly zero directional
        // derivative and the update vanishes.
        let s = schedule();
        let model = zero_model();
        let obj = Objective::Circle { target: 0.3 };
        let cfg = GuidanceConfig { strategy: Strategy::Titan, ..Default::default() };
        let meter = MemMeter::new();
        let z = Tensor::from_rows(&[vec![0.3, 0.4]]).unwrap();
        let v = Tensor::from_rows(&[vec![-0.4, 0.3]]).unwrap();
        let (z_next, diag) =
            forward_gradient_step(&model, &z, 1, &obj, &cfg, &v, &s, &meter).unwrap();
        assert_eq!(diag.directional, 0.0);
        assert_eq!(diag.update_norm, 0.0);
        assert_eq!(z_next, z);
    }

    #[test]
    fn zero_lambda_keeps_latent_and_fills_diagnostics() {
        let s = schedule();
        let model = random_model(60);
        let obj = Objective::Circle { target: 0.3 };
        let cfg = GuidanceConfig {
            strategy: Strategy::Titan,
            guess: GuessKind::Random,
            lambda: 0.0,
            ..Default::default()
        };
        let meter = MemMeter::new();
        let mut rng = RngState::new(61);
        let z = rng.gaussian(&[3, 2]).unwrap();
        let mut guess_rng = RngState::new(62);
        let (z_next, diag) = titan_step(&model, &z, 7, &obj, &cfg, &mut guess_rng, &s, &meter).unwrap();
        assert_eq!(z_next, z);
        assert!(diag.loss.is_finite());
        assert!(diag.update_norm > 0.0);
    }

    #[test]
    fn titan_update_matches_closed_form_for_zero_denoiser() {
        // Zero denoiser, t = 1: the unroll is z / sqrt(abar_1), so
        // grad_i = 4 (||z_i||^2 / abar - c) z_i / abar, and the update is
        // lambda * <grad_i, V_i> V_i per row.
        let s = schedule();
        let model = zero_model();
        let obj = Objective::Circle { target: 0.3 };
        let cfg = GuidanceConfig { strategy: Strategy::Titan, ..Default::default() };
        let meter = MemMeter::new();
        let z = Tensor::from_rows(&[vec![0.3, 0.4], vec![-0.5, 0.2]]).unwrap();
        let mut vr = RngState::new(63);
        let v = vr.gaussian(&[2, 2]).unwrap();
        let (z_next, _) = forward_gradient_step(&model, &z, 1, &obj, &cfg, &v, &s, &meter).unwrap();

        let ab = s.alpha_bar(1);
        for i in 0..2 {
            let (x, y) = (z.get2(i, 0), z.get2(i, 1));
            let r2 = (x * x + y * y) / ab;
            let gscale = 4.0 * (r2 - 0.3) / ab;
            let g = [gscale * x, gscale * y];
            let h = g[0] * v.get2(i, 0) + g[1] * v.get2(i, 1);
            for j in 0..2 {
                let want = z.get2(i, j) - cfg.lambda * h * v.get2(i, j);
                let got = z_next.get2(i, j);
                assert!((got - want).abs() <= 1e-12, "row {i} col {j}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn per_row_directionals_match_reverse_gradients() {
        let s = schedule();
        let model = random_model(64);
        let obj = Objective::Circle { target: 0.3 };
        let mut rng = RngState::new(65);
        let z = rng.gaussian(&[5, 2]).unwrap();
        let v = rng.gaussian(&[5, 2]).unwrap();
        let t = 9;
        let program = GuidanceRows { model: &model, objective: &obj, t, stride: 1, schedule: &s };
        let (_, h) = autodiff::jvp_full(&program, &[&z], &[&v]).unwrap();
        let (_, mut grads) = autodiff::grad_multi(&SumOf(&program), &[&z]).unwrap();
        let g = grads.remove(0);
        for i in 0..5 {
            let want = g.get2(i, 0) * v.get2(i, 0) + g.get2(i, 1) * v.get2(i, 1);
            let got = h.data()[i];
            assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "row {i}");
        }
    }

    #[test]
    fn titan_paths_report_zero_update_tape() {
        let s = schedule();
        let model = random_model(66);
        let obj = Objective::Circle { target: 0.3 };
        let meter = MemMeter::new();
        let mut rng = RngState::new(67);
        let z = rng.gaussian(&[4, 2]).unwrap();
        for guess in [GuessKind::Random, GuessKind::Score, GuessKind::Sampled { frames: 2 }] {
            let cfg = GuidanceConfig { strategy: Strategy::Titan, guess, ..Default::default() };
            let mut guess_rng = RngState::new(68);
            let (_, diag) =
                guidance_update(&model, &z, 6, &obj, &cfg, &mut guess_rng, &s, &meter).unwrap();
            let d = diag.unwrap();
            assert_eq!(d.update_tape_scalars, 0, "guess {guess:?}");
            match guess {
                GuessKind::Sampled { .. } => assert!(d.guess_tape_scalars > 0),
                _ => assert_eq!(d.guess_tape_scalars, 0),
            }
        }
    }

    #[test]
    fn score_fallback_is_logged() {
        let s = schedule();
        let model = zero_model();
        let obj = Objective::Circle { target: 0.3 };
        let cfg = GuidanceConfig { strategy: Strategy::Titan, guess: GuessKind::Score, ..Default::default() };
        let meter = MemMeter::new();
        let mut rng = RngState::new(69);
        let z = rng.gaussian(&[2, 2]).unwrap();
        let mut guess_rng = RngState::new(70);
        let (_, diag) = titan_step(&model, &z, 4, &obj, &cfg, &mut guess_rng, &s, &meter).unwrap();
        assert!(diag.guess_fallback);
    }

    #[test]
    fn unguided_run_is_plain_ancestral_sampling() {
        let s = schedule();
        let model = random_model(71);
        let obj = Objective::Circle { target: 0.3 };
        let cfg = GuidanceConfig { strategy: Strategy::Unguided, ..Default::default() };
        let meter = MemMeter::new();
        let base = RngState::new(72);
        let out = run(&model, &obj, &cfg, 8, &base, &s, &meter).unwrap();

        let mut init_rng = base.substream(STREAM_INIT);
        let mut noise_rng = base.substream(STREAM_STEP_NOISE);
        let mut z = init_rng.gaussian(&[8, 2]).unwrap();
        for level in (2..=s.steps()).rev() {
            z = denoise_step(&model, &z, level, StepKind::AncestralDdpm, Some(&mut noise_rng), &s)
                .unwrap();
        }
        z = denoise_step(&model, &z, 1, StepKind::AncestralDdpm, None, &s).unwrap();
        assert_eq!(out.samples, z, "unguided run must be bitwise plain sampling");
        assert!(out.trajectory.steps.is_empty());
        assert_eq!(out.trajectory.latents.len(), s.steps() + 1);
        assert!(out.mem.rows.is_empty());
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let s = schedule();
        let model = random_model(73);
        let obj = Objective::Circle { target: 0.3 };
        for strategy in [Strategy::Tweedie, Strategy::Direct, Strategy::Titan] {
            let cfg = GuidanceConfig { strategy, guess: GuessKind::Random, ..Default::default() };
            let meter = MemMeter::new();
            let base = RngState::new(74);
            let a = run(&model, &obj, &cfg, 4, &base, &s, &meter).unwrap();
            let b = run(&model, &obj, &cfg, 4, &base, &s, &meter).unwrap();
            assert_eq!(bits(&a.samples), bits(&b.samples), "{strategy:?}");
            assert_eq!(a.trajectory.steps.len(), s.steps());
        }
    }

    #[test]
    fn degenerate_unroll_makes_direct_equal_tweedie() {
        let s = schedule();
        let model = random_model(75);
        let obj = Objective::Circle { target: 0.3 };
        let meter = MemMeter::new();
        let base = RngState::new(76);
        let direct = GuidanceConfig {
            strategy: Strategy::Direct,
            stride: s.steps(),
            ..Default::default()
        };
        let tweedie = GuidanceConfig { strategy: Strategy::Tweedie, ..Default::default() };
        let a = run(&model, &obj, &direct, 6, &base, &s, &meter).unwrap();
        let b = run(&model, &obj, &tweedie, 6, &base, &s, &meter).unwrap();
        assert_eq!(bits(&a.samples), bits(&b.samples));
        for (da, db) in a.trajectory.steps.iter().zip(&b.trajectory.steps) {
            assert_eq!(da.loss.to_bits(), db.loss.to_bits());
            assert_eq!(da.update_norm.to_bits(), db.update_norm.to_bits());
        }
    }
}
