//! Weighted mixing of the original and back-translated training pools.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AugmentError;

/// Endless stream that picks pool `p` with probability `w_p / Σw`, then a
/// uniform element of that pool.
pub struct MixedSampler<'a, T> {
    pools: Vec<&'a [T]>,
    choose: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl<'a, T> MixedSampler<'a, T> {
    pub fn new(pools: &[&'a [T]], weights: &[f64], seed: u64) -> Result<Self, AugmentError> {
        if pools.len() != weights.len() {
            return Err(AugmentError::InvalidRatio(format!(
                "{} pools but {} weights",
                pools.len(),
                weights.len()
            )));
        }
        if let Some(p) = (0..pools.len()).find(|&p| weights[p] > 0.0 && pools[p].is_empty()) {
            return Err(AugmentError::EmptyWeightedPool(p));
        }
        let choose =
            WeightedIndex::new(weights).map_err(|e| AugmentError::InvalidRatio(e.to_string()))?;
        Ok(Self {
            pools: pools.to_vec(),
            choose,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Next `(pool index, example)`.
    pub fn draw(&mut self) -> (usize, &'a T) {
        let p = self.choose.sample(&mut self.rng);
        let pool = self.pools[p];
        (p, &pool[self.rng.random_range(0..pool.len())])
    }
}

impl<'a, T> Iterator for MixedSampler<'a, T> {
    type Item = (usize, &'a T);

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.draw())
    }
}

/// Materialises `size` draws of a [`MixedSampler`].
pub fn mix_datasets<T: Clone>(
    pools: &[&[T]],
    weights: &[f64],
    size: usize,
    seed: u64,
) -> Result<Vec<T>, AugmentError> {
    let sampler = MixedSampler::new(pools, weights, seed)?;
    Ok(sampler.take(size).map(|(_, x)| x.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_ratio_uses_one_pool() {
        let (a, b, c) = ([1, 2], [10], [20]);
        let s = MixedSampler::new(&[&a[..], &b[..], &c[..]], &[1.0, 0.0, 0.0], 0).unwrap();
        assert!(s.take(1000).all(|(p, v)| p == 0 && *v < 10));
    }

    #[test]
    fn seeded_and_validated() {
        let (a, b) = ([1, 2, 3], [4]);
        let draw = |seed| {
            MixedSampler::new(&[&a[..], &b[..]], &[3.0, 1.0], seed)
                .unwrap()
                .take(50)
                .map(|(_, v)| *v)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        let empty: [i32; 0] = [];
        assert!(matches!(
            MixedSampler::new(&[&a[..], &empty[..]], &[1.0, 1.0], 0),
            Err(AugmentError::EmptyWeightedPool(1))
        ));
        assert!(MixedSampler::new(&[&a[..]], &[0.0], 0).is_err());
    }
}
