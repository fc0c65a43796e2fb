use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::derive_seed;
use super::Domain;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub domain: Domain,
    pub index: usize,
}

/// Seeded per-epoch shuffle over the union of an indoor and an outdoor set.
#[derive(Clone, Debug)]
pub struct MixedBatchSampler {
    indoor: usize,
    outdoor: usize,
    batch_size: usize,
    seed: u64,
}

impl MixedBatchSampler {
    pub fn new(indoor: usize, outdoor: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if indoor == 0 || outdoor == 0 {
            return Err(Error::Parameter(format!(
                "mixed sampling needs both domains, got {indoor} indoor and {outdoor} outdoor"
            )));
        }
        Self::any(indoor, outdoor, batch_size, seed)
    }

    /// Like [`new`](Self::new) but allows one domain to be empty, for
    /// single-domain training runs.
    pub fn any(indoor: usize, outdoor: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        if indoor + outdoor == 0 {
            return Err(Error::Parameter("no samples to draw from".into()));
        }
        Ok(Self {
            indoor,
            outdoor,
            batch_size,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.indoor + self.outdoor
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len().div_ceil(self.batch_size)
    }

    /// Batches of epoch `epoch`; every sample appears exactly once and the
    /// last batch may be short.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<SampleRef>> {
        let mut all: Vec<SampleRef> = (0..self.indoor)
            .map(|index| SampleRef {
                domain: Domain::Indoor,
                index,
            })
            .chain((0..self.outdoor).map(|index| SampleRef {
                domain: Domain::Outdoor,
                index,
            }))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch as u64));
        all.shuffle(&mut rng);
        all.chunks(self.batch_size).map(<[SampleRef]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn epoch_covers_union_once() {
        let s = MixedBatchSampler::new(20, 17, 8, 1).unwrap();
        let batches = s.epoch(0);
        assert_eq!(batches.len(), 5);
        assert_eq!(batches.last().unwrap().len(), 5);
        let seen: HashSet<_> = batches.iter().flatten().copied().collect();
        assert_eq!(seen.len(), 37);
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 37);
    }

    #[test]
    fn seeded_order() {
        let a = MixedBatchSampler::new(20, 17, 8, 9).unwrap();
        let b = MixedBatchSampler::new(20, 17, 8, 9).unwrap();
        assert_eq!(a.epoch(3), b.epoch(3));
        assert_ne!(a.epoch(3), a.epoch(4));
        assert_ne!(a.epoch(0), MixedBatchSampler::new(20, 17, 8, 10).unwrap().epoch(0));
    }

    #[test]
    fn domain_ratio_over_batches() {
        // Count domains in the first batch of many epochs: each slot is a
        // draw without replacement, so the expected indoor share is 20/37.
        let s = MixedBatchSampler::new(20, 17, 8, 4).unwrap();
        let (mut indoor, mut total) = (0usize, 0usize);
        for e in 0..4000 {
            for r in &s.epoch(e)[0] {
                indoor += (r.domain == Domain::Indoor) as usize;
                total += 1;
            }
        }
        let share = indoor as f64 / total as f64;
        let expected = 20.0 / 37.0;
        assert!((share - expected).abs() / expected < 0.02, "{share}");
    }

    #[test]
    fn rejects_empty_sets() {
        assert!(MixedBatchSampler::new(0, 3, 2, 0).is_err());
        assert!(MixedBatchSampler::new(3, 0, 2, 0).is_err());
        assert!(MixedBatchSampler::new(3, 3, 0, 0).is_err());
        assert!(MixedBatchSampler::any(3, 0, 2, 0).is_ok());
    }
}
