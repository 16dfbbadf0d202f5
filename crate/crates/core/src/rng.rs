//! Seeded, splittable random streams and Brownian increments.
//!
//! Every stream is a ChaCha8 generator keyed by `seed` with the ChaCha stream
//! counter set to `stream_id`, so chain `i` of an ensemble can own
//! `RngStream::new(seed, i)` and produce the same draws on any thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream derived from this one's identity, not its position.
    /// Children with distinct `index` are distinct streams.
    pub fn child(&self, index: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)));
        RngStream::new(self.seed, id)
    }

    /// `n` independent per-chain streams for an ensemble.
    pub fn chains(&self, n: usize) -> Vec<RngStream> {
        (0..n as u64).map(|i| self.child(i)).collect()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.rng.sample(StandardNormal);
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `dW = sqrt(dt) ε` for a `d`-dimensional Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrement {
    pub dt: f64,
    pub noise: Vec<f64>,
}

pub fn draw_increment(rng: &mut RngStream, dt: f64, d: usize) -> Result<BrownianIncrement> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::arg(format!("increment dt must be positive, got {dt}")));
    }
    if d == 0 {
        return Err(Error::arg("increment dimension must be >= 1"));
    }
    let scale = dt.sqrt();
    let mut noise = vec![0.0; d];
    rng.fill_normal(&mut noise);
    noise.iter_mut().for_each(|v| *v *= scale);
    Ok(BrownianIncrement { dt, noise })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn unit_increment_mean() {
        let inc = draw_increment(&mut RngStream::new(1, 0), 1.0, 1_000_000).unwrap();
        let (m, _) = mean_var(&inc.noise);
        // sd of the mean is 1e-3; the band is 4 sd wide on each side
        assert!(m.abs() <= 0.004, "mean {m}");
    }

    #[test]
    fn increment_variance_is_dt() {
        let inc = draw_increment(&mut RngStream::new(1, 0), 0.25, 1_000_000).unwrap();
        let (_, v) = mean_var(&inc.noise);
        assert!((v / 0.25 - 1.0).abs() < 0.01, "var {v}");
    }

    #[test]
    fn deterministic_per_stream() {
        let a = draw_increment(&mut RngStream::new(7, 3), 0.1, 64).unwrap();
        let b = draw_increment(&mut RngStream::new(7, 3), 0.1, 64).unwrap();
        assert_eq!(a, b);
        let c = draw_increment(&mut RngStream::new(7, 4), 0.1, 64).unwrap();
        assert_ne!(a.noise, c.noise);
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        let n = 200_000;
        let a = draw_increment(&mut RngStream::new(11, 0).child(0), 1.0, n).unwrap();
        let b = draw_increment(&mut RngStream::new(11, 0).child(1), 1.0, n).unwrap();
        let corr = a.noise.iter().zip(&b.noise).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut rng = RngStream::new(0, 0);
        assert!(draw_increment(&mut rng, 0.0, 3).is_err());
        assert!(draw_increment(&mut rng, -1.0, 3).is_err());
        assert!(draw_increment(&mut rng, 1.0, 0).is_err());
    }
}
