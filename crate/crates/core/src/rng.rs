//! Seeded, counter-based random streams.
//!
//! A stream is identified by `(seed, stream_id)`. The generator is ChaCha8
//! keyed by the seed with the stream id selecting the ChaCha stream, so any
//! `(seed, layer, iteration, sample)` tuple can be regenerated on demand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Stream for a path of indices, e.g. `[layer, iteration, sample]`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        path.iter().fold(Self::new(seed, 0), |s, &p| s.child(p))
    }

    /// Sub-stream `id` of this stream.
    pub fn child(&self, id: u64) -> Self {
        let mixed =
            splitmix64(self.stream_id ^ splitmix64(id.wrapping_add(0x6a09_e667_f3bc_c909)));
        Self { seed: self.seed, stream_id: mixed }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// Fills `out` with inverted-dropout switches: 0 with probability `tau`,
/// `1/(1-tau)` otherwise.
pub fn fill_bernoulli_switches(rng: &mut impl Rng, tau: f64, out: &mut [f64]) {
    let keep = 1.0 / (1.0 - tau);
    for v in out {
        *v = if rng.gen::<f64>() < tau { 0.0 } else { keep };
    }
}

pub fn bernoulli_switches(stream: &RngStream, n: usize, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    if n == 0 {
        return Err(Error::Parameter("switch count must be positive".into()));
    }
    let mut data = vec![0.0; n];
    fill_bernoulli_switches(&mut stream.generator(), tau, &mut data);
    Ok(Tensor::from_vec(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_draws() {
        let s = RngStream::derive(42, &[1, 2, 3]);
        let a = bernoulli_switches(&s, 100, 0.3).unwrap();
        let b = bernoulli_switches(&s, 100, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_differ() {
        let a: u64 = RngStream::derive(42, &[0, 1]).generator().gen();
        let b: u64 = RngStream::derive(42, &[1, 0]).generator().gen();
        let c: u64 = RngStream::derive(43, &[0, 1]).generator().gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn half_tau_gives_zero_or_two() {
        let s = bernoulli_switches(&RngStream::new(1, 0), 1000, 0.5).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn tau_out_of_range() {
        for tau in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                bernoulli_switches(&RngStream::new(1, 0), 4, tau),
                Err(Error::Parameter(_))
            ));
        }
    }

    #[test]
    fn million_draws_mean_and_zero_fraction() {
        let n = 1_000_000;
        for (i, tau) in [0.25, 0.5, 0.75].into_iter().enumerate() {
            let s = bernoulli_switches(&RngStream::new(9, i as u64), n, tau).unwrap();
            let zeros = s.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
            let se = (tau * (1.0 - tau) / n as f64).sqrt();
            assert!((zeros - tau).abs() < 4.0 * se, "tau={tau} zero fraction {zeros}");

            let mean = s.sum() / n as f64;
            // Var[r] = tau / (1 - tau)
            let se_mean = (tau / (1.0 - tau) / n as f64).sqrt();
            assert!((mean - 1.0).abs() < 4.0 * se_mean, "tau={tau} mean {mean}");
        }
    }
}
