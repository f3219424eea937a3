//! Toy dataset generation, guidance-quality metrics, and the memory
//! benchmark comparing guidance strategies across unroll depths.

use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::Result;
use crate::guidance::{guidance_update, GuessKind, GuidanceConfig, MemReport, MemRow, Objective, Strategy};
use crate::numerics::fmath;
use crate::numerics::meter::MemMeter;
use crate::numerics::rng::RngState;
use crate::numerics::tensor::Tensor;

/// Raw moons generator point, before jitter and rescaling.
pub fn moon_point(theta: f64, outer: bool) -> (f64, f64) {
    if outer {
        (fmath::cos(theta), fmath::sin(theta))
    } else {
        (1.0 - fmath::cos(theta), 0.5 - fmath::sin(theta))
    }
}

/// Shifts to zero mean and scales to max-abs 1, per axis.
pub fn rescale_to_unit(points: &Tensor) -> Result<Tensor> {
    let n = points.shape()[0];
    let cols = points.shape()[1];
    let mut data = points.data().to_vec();
    for j in 0..cols {
        let mean: f64 = (0..n).map(|i| data[i * cols + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            data[i * cols + j] -= mean;
        }
        let max_abs = (0..n).map(|i| data[i * cols + j].abs()).fold(0.0, f64::max);
        if max_abs > 0.0 {
            for i in 0..n {
                data[i * cols + j] /= max_abs;
            }
        }
    }
    Tensor::new(points.shape(), data)
}

/// Two interleaved half-moons with Gaussian jitter, rescaled to zero mean
/// and max-abs 1 per axis.
pub fn make_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Tensor> {
    let root = RngState::new(seed);
    let mut angle_rng = root.substream(0xA);
    let mut jitter_rng = root.substream(0xB);
    let outer = n / 2;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let theta = angle_rng.uniform() * std::f64::consts::PI;
        let (mut x, mut y) = moon_point(theta, i < outer);
        x += noise_sigma * jitter_rng.standard_normal();
        y += noise_sigma * jitter_rng.standard_normal();
        rows.push(vec![x, y]);
    }
    rescale_to_unit(&Tensor::from_rows(&rows)?)
}

/// Guidance-quality summary for a sample set against the circle task.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Fraction of samples with `| ||p||^2 - c | < tol`.
    pub satisfaction_rate: f64,
    pub median_abs_residual: f64,
    /// Energy distance against the reference set.
    pub energy_distance: f64,
    /// Circular std of the angular position of satisfying samples.
    pub dispersion: f64,
}

/// Sum of a value multiset in ascending order: the total is a function of
/// the multiset alone, which makes energy distance exactly symmetric.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn pair_distances(x: &Tensor, y: &Tensor) -> Vec<f64> {
    let (nx, cols) = (x.shape()[0], x.shape()[1]);
    let ny = y.shape()[0];
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let d2: f64 = (0..cols)
                .map(|k| (x.get2(i, k) - y.get2(j, k)).powi(2))
                .sum();
            out.push(d2.sqrt());
        }
    }
    out
}

/// Energy distance over all ordered pairs:
/// `2 E||X - Y|| - E||X - X'|| - E||Y - Y'||`.
pub fn energy_distance(x: &Tensor, y: &Tensor) -> f64 {
    let nx = x.shape()[0] as f64;
    let ny = y.shape()[0] as f64;
    let cross = sorted_sum(pair_distances(x, y)) / (nx * ny);
    let within_x = sorted_sum(pair_distances(x, x)) / (nx * nx);
    let within_y = sorted_sum(pair_distances(y, y)) / (ny * ny);
    2.0 * cross - within_x - within_y
}

pub fn compute_metrics(samples: &Tensor, reference: &Tensor, c: f64, tol: f64) -> Metrics {
    let n = samples.shape()[0];
    let mut residuals: Vec<f64> = (0..n)
        .map(|i| {
            let r2 = samples.get2(i, 0).powi(2) + samples.get2(i, 1).powi(2);
            (r2 - c).abs()
        })
        .collect();
    let satisfying: Vec<usize> = (0..n).filter(|&i| residuals[i] < tol).collect();
    let satisfaction_rate = satisfying.len() as f64 / n as f64;

    residuals.sort_by(f64::total_cmp);
    let median_abs_residual = if n % 2 == 1 {
        residuals[n / 2]
    } else {
        0.5 * (residuals[n / 2 - 1] + residuals[n / 2])
    };

    let dispersion = if satisfying.len() < 2 {
        0.0
    } else {
        let (mut sx, mut sy) = (0.0, 0.0);
        for &i in &satisfying {
            let angle = samples.get2(i, 1).atan2(samples.get2(i, 0));
            sx += fmath::cos(angle);
            sy += fmath::sin(angle);
        }
        let m = satisfying.len() as f64;
        let r = ((sx / m).powi(2) + (sy / m).powi(2)).sqrt().clamp(1e-12, 1.0);
        (-2.0 * fmath::ln(r)).max(0.0).sqrt()
    };

    Metrics {
        satisfaction_rate,
        median_abs_residual,
        energy_distance: energy_distance(samples, reference),
        dispersion,
    }
}

/// Runs one guidance update per (strategy, depth) on a synthetic latent and
/// records the meter peaks.
#[allow(clippy::too_many_arguments)]
pub fn memory_bench<D: Denoiser>(
    model: &D,
    objective: &Objective,
    depths: &[usize],
    strategies: &[(Strategy, GuessKind)],
    n: usize,
    s: &NoiseSchedule,
    cfg: &GuidanceConfig,
    seed: u64,
    meter: &MemMeter,
) -> Result<MemReport> {
    let mut report = MemReport::default();
    for &(strategy, guess) in strategies {
        for &depth in depths {
            let mut rng = RngState::new(seed).substream(depth as u64);
            let z_t = rng.gaussian(&[n, 2])?;
            let step_cfg = GuidanceConfig { strategy, guess, ..*cfg };
            let mut guess_rng = RngState::new(seed).substream(0xF00 + depth as u64);
            let (_, diag) =
                guidance_update(model, &z_t, depth, objective, &step_cfg, &mut guess_rng, s, meter)?;
            let (peak, tape, forward) = match diag {
                Some(d) => (d.update_peak_scalars, d.update_tape_scalars, d.update_forward_scalars),
                None => (0, 0, 0),
            };
            report.rows.push(MemRow {
                strategy,
                guess: (strategy == Strategy::Titan).then_some(guess),
                depth,
                peak_scalars: peak,
                tape_scalars: tape,
                forward_scalars: forward,
            });
        }
    }
    Ok(report)
}
