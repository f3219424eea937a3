//! Counter-based seedable randomness.
//!
//! Draw `i` of a stream is a pure function of `(seed, i)`, so any stochastic
//! component can hold its own named substream and replay exactly. Gaussians
//! come from the inverse normal CDF (Acklam's rational approximation) over a
//! strictly-interior uniform, using only IEEE-exact arithmetic plus the
//! deterministic [`fmath::ln`](super::fmath::ln), so draws are bitwise
//! reproducible across runs and platforms.

use super::fmath;
use super::tensor::Tensor;
use crate::error::Result;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A (seed, position) pair; position counts draws taken so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    position: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, position: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// Derives an independent stream; the parent is left untouched.
    pub fn substream(&self, tag: u64) -> RngState {
        RngState {
            seed: mix(self.seed ^ mix(tag.wrapping_mul(GOLDEN).wrapping_add(GOLDEN))),
            position: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        mix(self.seed.wrapping_add(self.position.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / 9_007_199_254_740_992.0
    }

    pub fn standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    /// I.i.d. standard normal tensor.
    pub fn gaussian(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.standard_normal()).collect();
        Tensor::new(shape, data)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// `k` distinct indices from `0..n`, in draw order (partial Fisher-Yates).
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
            out.push(pool[i]);
        }
        out
    }
}

/// Inverse standard normal CDF, |relative error| < 1.2e-9 (Acklam).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * fmath::ln(p)).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p > 1.0 - P_LOW {
        let q = (-2.0 * fmath::ln(1.0 - p)).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_state_identical_draws() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        let ta = a.gaussian(&[3, 4]).unwrap();
        let tb = b.gaussian(&[3, 4]).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.position(), b.position());
        assert_eq!(a.position(), 12);
    }

    #[test]
    fn substreams_are_independent_of_parent_position() {
        let mut parent = RngState::new(7);
        let s1 = parent.substream(1);
        parent.next_u64();
        let s2 = parent.substream(1);
        assert_eq!(s1, s2);
        assert_ne!(s1, parent.substream(2));
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RngState::new(2024);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = rng.standard_normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn gaussian_ks_statistic_under_one_percent() {
        // Oracle normal CDF via Abramowitz-Stegun 7.1.26 erf, test-only.
        fn phi(x: f64) -> f64 {
            let t = 1.0 / (1.0 + 0.3275911 * x.abs() / std::f64::consts::SQRT_2);
            let erf = 1.0
                - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                    + 0.254829592)
                    * t
                    * (-x * x / 2.0).exp();
            if x >= 0.0 {
                0.5 * (1.0 + erf)
            } else {
                0.5 * (1.0 - erf)
            }
        }
        let mut rng = RngState::new(99);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let cdf = phi(x);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        assert!(ks < 0.01, "ks {ks}");
    }

    #[test]
    fn choose_distinct_is_distinct_and_deterministic() {
        let mut a = RngState::new(5).substream(3);
        let mut b = RngState::new(5).substream(3);
        let xa = a.choose_distinct(10, 6);
        let xb = b.choose_distinct(10, 6);
        assert_eq!(xa, xb);
        let mut sorted = xa.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
        assert!(xa.iter().all(|&i| i < 10));
    }
}
