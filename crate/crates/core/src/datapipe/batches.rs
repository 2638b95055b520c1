use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Epoch-wise seeded shuffling of `0..n` into batches; the last batch of an
/// epoch may be short. Batch `k` of the whole run is a pure function of
/// `(seed, k)`, so training can resume at any iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub n: usize,
    pub batch_size: usize,
    pub seed: u64,
}

pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> BatchPlan {
    assert!(n > 0, "dataset is empty");
    assert!(batch_size > 0, "batch size must be positive");
    BatchPlan { n, batch_size, seed }
}

impl BatchPlan {
    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn order(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.shuffle(&mut rng);
        idx
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        self.order(epoch).chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// The `k`-th batch counted from the start of training.
    pub fn batch_at(&self, k: u64) -> Vec<usize> {
        let per = self.batches_per_epoch() as u64;
        let order = self.order(k / per);
        let start = (k % per) as usize * self.batch_size;
        order[start..(start + self.batch_size).min(self.n)].to_vec()
    }

    /// Endless batch sequence, epoch after epoch.
    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..).map(move |k| self.batch_at(k))
    }
}
