use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::{config_err, Result};
use crate::rng;

/// Half-width of the Xavier/Glorot uniform interval.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `[fan_in, fan_out]` matrix drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor> {
    xavier_tensor(&[fan_in, fan_out], fan_in, fan_out, seed)
}

/// Xavier-uniform tensor of arbitrary shape with explicit fan sizes
/// (convolution kernels count receptive-field elements in both fans).
pub fn xavier_tensor(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(config_err!("xavier init needs positive fans, got {fan_in}, {fan_out}"));
    }
    let bound = xavier_bound(fan_in, fan_out);
    let mut t = Tensor::zeros(shape)?;
    let mut rng = rng::stream(seed, "xavier", 0);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_within_bound() {
        let t = xavier_init(3, 3, 11).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(xavier_init(5, 7, 3).unwrap(), xavier_init(5, 7, 3).unwrap());
        assert_ne!(xavier_init(5, 7, 3).unwrap(), xavier_init(5, 7, 4).unwrap());
    }

    #[test]
    fn variance_matches_uniform_moment() {
        // Var of U(-a, a) is a^2 / 3 = 2 / (fan_in + fan_out) = 0.01.
        let t = xavier_init(100, 100, 5).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 0.01).abs() < 0.002, "{var}");
    }
}
