//! The toy denoiser: a two-hidden-layer ReLU MLP over the 2D point plus a
//! sinusoidal time embedding, trained with the standard noise-prediction
//! objective. Weight gradients come from the reverse-mode engine; updates
//! are Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).

use crate::autodiff::{self, AdContext, Program};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::fmath;
use crate::numerics::rng::RngState;
use crate::numerics::tensor::Tensor;
use std::fmt::Write as _;
use std::path::Path;

pub const HIDDEN: usize = 64;
pub const POINT_DIM: usize = 2;
pub const DEFAULT_TIME_FREQS: usize = 8;

const CKPT_VERSION: &str = "fwdguide-ckpt-v1";

/// Sinusoidal time features: `[sin(w_k tau), cos(w_k tau)]` for
/// `tau = t / T`, `w_k = 2^k pi`, `k = 0..freqs`. Width `2 * freqs`.
pub fn embed_time(t: usize, steps: usize, freqs: usize) -> Tensor {
    debug_assert!(t >= 1 && t <= steps && freqs >= 1);
    let tau = t as f64 / steps as f64;
    let mut data = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        let omega = (1u64 << k) as f64 * std::f64::consts::PI;
        data.push(fmath::sin(omega * tau));
        data.push(fmath::cos(omega * tau));
    }
    Tensor::new(&[2 * freqs], data).expect("valid shape")
}

/// Weights of the denoiser MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub time_freqs: usize,
}

impl DenoiserParams {
    pub fn input_dim(freqs: usize) -> usize {
        POINT_DIM + 2 * freqs
    }

    /// He-style uniform fan-in initialization from the seeded stream.
    pub fn init(freqs: usize, rng: &mut RngState) -> Self {
        let in_dim = Self::input_dim(freqs);
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let limit = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * limit).collect();
            Tensor::new(shape, data).expect("valid shape")
        };
        DenoiserParams {
            w1: uniform(&[in_dim, HIDDEN], in_dim),
            b1: Tensor::zeros(&[HIDDEN]).unwrap(),
            w2: uniform(&[HIDDEN, HIDDEN], HIDDEN),
            b2: Tensor::zeros(&[HIDDEN]).unwrap(),
            w_out: uniform(&[HIDDEN, POINT_DIM], HIDDEN),
            b_out: Tensor::zeros(&[POINT_DIM]).unwrap(),
            time_freqs: freqs,
        }
    }

    pub fn zeros(freqs: usize) -> Self {
        let in_dim = Self::input_dim(freqs);
        DenoiserParams {
            w1: Tensor::zeros(&[in_dim, HIDDEN]).unwrap(),
            b1: Tensor::zeros(&[HIDDEN]).unwrap(),
            w2: Tensor::zeros(&[HIDDEN, HIDDEN]).unwrap(),
            b2: Tensor::zeros(&[HIDDEN]).unwrap(),
            w_out: Tensor::zeros(&[HIDDEN, POINT_DIM]).unwrap(),
            b_out: Tensor::zeros(&[POINT_DIM]).unwrap(),
            time_freqs: freqs,
        }
    }

    /// The two hidden layer widths, countable for conformance checks.
    pub fn hidden_widths(&self) -> [usize; 2] {
        [self.w1.shape()[1], self.w2.shape()[1]]
    }

    fn tensors(&self) -> [&Tensor; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w_out, &self.b_out]
    }

    fn names() -> [&'static str; 6] {
        ["w1", "b1", "w2", "b2", "w_out", "b_out"]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// Per-row time features for a batch with one level per sample.
pub fn embed_times(ts: &[usize], steps: usize, freqs: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = ts
        .iter()
        .map(|&t| embed_time(t, steps, freqs).data().to_vec())
        .collect();
    Tensor::from_rows(&rows).expect("valid shape")
}

/// The MLP body, shared between inference (weights as constants) and
/// training (weights as differentiated inputs). The time embedding enters
/// as a constant `[n, 2 freqs]` matrix, one row per sample.
fn mlp_forward<C: AdContext>(
    ctx: &mut C,
    z: &C::Value,
    emb: &Tensor,
    weights: &[&C::Value; 6],
) -> Result<C::Value> {
    let [w1, b1, w2, b2, w_out, b_out] = *weights;
    let embc = ctx.constant(emb);
    let x = ctx.concat_cols(z, &embc)?;
    let a1 = ctx.matmul(&x, w1)?;
    let a1 = ctx.add_bias(&a1, b1)?;
    let h1 = ctx.relu(&a1);
    let a2 = ctx.matmul(&h1, w2)?;
    let a2 = ctx.add_bias(&a2, b2)?;
    let h2 = ctx.relu(&a2);
    let out = ctx.matmul(&h2, w_out)?;
    ctx.add_bias(&out, b_out)
}

/// Schedule length the embedding normalizes against; carried next to the
/// params wherever the model is used.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: DenoiserParams,
    pub schedule_steps: usize,
}

impl Denoiser for TrainedModel {
    fn predict_in<C: AdContext>(&self, ctx: &mut C, z: &C::Value, t: usize) -> Result<C::Value> {
        let p = &self.params;
        let n = ctx.shape(z)[0];
        let emb = embed_time(t, self.schedule_steps, p.time_freqs).tile_row(n)?;
        let consts: Vec<C::Value> = p.tensors().iter().map(|t| ctx.constant(t)).collect();
        let refs: [&C::Value; 6] = [
            &consts[0], &consts[1], &consts[2], &consts[3], &consts[4], &consts[5],
        ];
        mlp_forward(ctx, z, &emb, &refs)
    }
}

/// Noise-prediction MSE over one batch, with the six weight tensors as
/// differentiated inputs. Each sample carries its own noise level.
struct DenoiseLoss<'a> {
    z_t: &'a Tensor,
    eps: &'a Tensor,
    emb: &'a Tensor,
}

impl Program for DenoiseLoss<'_> {
    fn arity(&self) -> usize {
        6
    }

    fn build<C: AdContext>(&self, ctx: &mut C, inputs: &[C::Value]) -> Result<C::Value> {
        let refs: [&C::Value; 6] = [
            &inputs[0], &inputs[1], &inputs[2], &inputs[3], &inputs[4], &inputs[5],
        ];
        let z = ctx.constant(self.z_t);
        let pred = mlp_forward(ctx, &z, self.emb, &refs)?;
        let target = ctx.constant(self.eps);
        let diff = ctx.sub(&pred, &target)?;
        let sq = ctx.square(&diff);
        Ok(ctx.mean_all(&sq))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Log a `(step, loss)` row every this many steps (the last step is
    /// always logged).
    pub log_every: usize,
    pub time_freqs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 4000,
            batch: 128,
            lr: 1e-3,
            seed: 7,
            log_every: 50,
            time_freqs: DEFAULT_TIME_FREQS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub seed: u64,
    pub step_count: usize,
    /// Mean loss per epoch, one epoch being `ceil(n / batch)` steps.
    pub epoch_mean_loss: Vec<f64>,
    pub final_loss: f64,
    /// Logged `(step, loss)` rows.
    pub logged: Vec<(usize, f64)>,
}

fn adam_update(
    param: &Tensor,
    grad: &Tensor,
    m: &Tensor,
    v: &Tensor,
    lr: f64,
    step: usize,
) -> (Tensor, Tensor, Tensor) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let t = step as f64 + 1.0;
    let bias1 = 1.0 - B1.powf(t);
    let bias2 = 1.0 - B2.powf(t);
    let n = param.len();
    let mut pd = Vec::with_capacity(n);
    let mut md = Vec::with_capacity(n);
    let mut vd = Vec::with_capacity(n);
    for i in 0..n {
        let g = grad.data()[i];
        let mi = B1 * m.data()[i] + (1.0 - B1) * g;
        let vi = B2 * v.data()[i] + (1.0 - B2) * g * g;
        let mhat = mi / bias1;
        let vhat = vi / bias2;
        pd.push(param.data()[i] - lr * mhat / (vhat.sqrt() + EPS));
        md.push(mi);
        vd.push(vi);
    }
    (
        Tensor::new(param.shape(), pd).unwrap(),
        Tensor::new(param.shape(), md).unwrap(),
        Tensor::new(param.shape(), vd).unwrap(),
    )
}

/// DDPM training: at each step, noise a random batch at a random level and
/// regress the noise. Deterministic given the seed.
pub fn train(data: &Tensor, s: &NoiseSchedule, cfg: &TrainConfig) -> Result<(DenoiserParams, TrainReport)> {
    let n = data.shape()[0];
    if cfg.batch < 1 || cfg.batch > n {
        return Err(Error::InvalidConfig {
            reason: format!("batch {} out of range 1..={n}", cfg.batch),
        });
    }
    let root = RngState::new(cfg.seed);
    let mut init_rng = root.substream(0x11);
    let mut batch_rng = root.substream(0x22);
    let mut level_rng = root.substream(0x33);
    let mut noise_rng = root.substream(0x44);

    let mut params = DenoiserParams::init(cfg.time_freqs, &mut init_rng);
    let mut moment1: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape()).unwrap()).collect();
    let mut moment2 = moment1.clone();

    let epoch_len = n.div_ceil(cfg.batch);
    let mut epoch_mean_loss = Vec::new();
    let mut epoch_acc = 0.0;
    let mut epoch_count = 0usize;
    let mut logged = Vec::new();
    let mut final_loss = f64::NAN;

    for step in 0..cfg.steps {
        let rows = batch_rng.choose_distinct(n, cfg.batch);
        let z0 = data.slice_rows(&rows)?;
        let levels: Vec<usize> = (0..cfg.batch).map(|_| 1 + level_rng.below(s.steps())).collect();
        let eps = noise_rng.gaussian(&[cfg.batch, POINT_DIM])?;
        // Forward-noise each sample at its own level.
        let mut zt_data = Vec::with_capacity(cfg.batch * POINT_DIM);
        for (i, &t) in levels.iter().enumerate() {
            let ab = s.alpha_bar(t);
            for j in 0..POINT_DIM {
                zt_data.push(ab.sqrt() * z0.get2(i, j) + (1.0 - ab).sqrt() * eps.get2(i, j));
            }
        }
        let z_t = Tensor::new(&[cfg.batch, POINT_DIM], zt_data)?;
        let emb = embed_times(&levels, s.steps(), cfg.time_freqs);

        let loss_program = DenoiseLoss {
            z_t: &z_t,
            eps: &eps,
            emb: &emb,
        };
        let inputs = params.tensors();
        let (loss, grads) = autodiff::grad_multi(&loss_program, &inputs)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }

        let mut updated = Vec::with_capacity(6);
        for (i, (p, g)) in params.tensors().iter().zip(&grads).enumerate() {
            let (np, nm, nv) = adam_update(p, g, &moment1[i], &moment2[i], cfg.lr, step);
            moment1[i] = nm;
            moment2[i] = nv;
            updated.push(np);
        }
        params = DenoiserParams {
            b_out: updated.pop().unwrap(),
            w_out: updated.pop().unwrap(),
            b2: updated.pop().unwrap(),
            w2: updated.pop().unwrap(),
            b1: updated.pop().unwrap(),
            w1: updated.pop().unwrap(),
            time_freqs: cfg.time_freqs,
        };

        epoch_acc += loss;
        epoch_count += 1;
        if epoch_count == epoch_len {
            epoch_mean_loss.push(epoch_acc / epoch_len as f64);
            epoch_acc = 0.0;
            epoch_count = 0;
        }
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            logged.push((step, loss));
        }
        final_loss = loss;
    }
    if epoch_count > 0 {
        epoch_mean_loss.push(epoch_acc / epoch_count as f64);
    }

    let report = TrainReport {
        seed: cfg.seed,
        step_count: cfg.steps,
        epoch_mean_loss,
        final_loss,
        logged,
    };
    Ok((params, report))
}

fn fmt_values(t: &Tensor, out: &mut String) {
    let cols = if t.rank() == 2 { t.shape()[1] } else { t.len() };
    for (i, v) in t.data().iter().enumerate() {
        write!(out, "{v}").unwrap();
        if (i + 1) % cols == 0 {
            out.push('\n');
        } else {
            out.push(' ');
        }
    }
}

/// Writes a versioned textual checkpoint; decimal values round-trip
/// losslessly. The write is atomic (temp file + rename).
pub fn save_params(params: &DenoiserParams, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{CKPT_VERSION}").unwrap();
    writeln!(out, "freqs {}", params.time_freqs).unwrap();
    for (name, t) in DenoiserParams::names().iter().zip(params.tensors()) {
        write!(out, "tensor {name}").unwrap();
        for d in t.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        fmt_values(t, &mut out);
    }
    writeln!(out, "end").unwrap();
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<DenoiserParams> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let malformed = |reason: &str| Error::MalformedCheckpoint { reason: reason.to_string() };

    let version = lines.next().ok_or_else(|| malformed("empty file"))?;
    if version != CKPT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version.to_string(),
            expected: CKPT_VERSION,
        });
    }
    let freqs_line = lines.next().ok_or_else(|| malformed("missing freqs line"))?;
    let freqs: usize = freqs_line
        .strip_prefix("freqs ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("bad freqs line"))?;

    let mut tensors = Vec::with_capacity(6);
    for name in DenoiserParams::names() {
        let header = lines.next().ok_or_else(|| malformed("truncated before tensor header"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") || parts.next() != Some(name) {
            return Err(malformed(&format!("expected tensor {name}")));
        }
        let shape: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| malformed("bad shape field")))
            .collect::<Result<_>>()?;
        let rows = if shape.len() == 2 { shape[0] } else { 1 };
        let mut data = Vec::new();
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| malformed("truncated tensor data"))?;
            for field in line.split_whitespace() {
                let v: f64 = field.parse().map_err(|_| malformed("bad float"))?;
                if !v.is_finite() {
                    return Err(malformed("non-finite value"));
                }
                data.push(v);
            }
        }
        tensors.push(Tensor::new(&shape, data)?);
    }
    if lines.next() != Some("end") {
        return Err(malformed("missing end marker"));
    }
    let b_out = tensors.pop().unwrap();
    let w_out = tensors.pop().unwrap();
    let b2 = tensors.pop().unwrap();
    let w2 = tensors.pop().unwrap();
    let b1 = tensors.pop().unwrap();
    let w1 = tensors.pop().unwrap();
    let params = DenoiserParams { w1, b1, w2, b2, w_out, b_out, time_freqs: freqs };
    if DenoiserParams::input_dim(freqs) != params.w1.shape()[0] {
        return Err(malformed("w1 shape disagrees with freqs"));
    }
    Ok(params)
}
