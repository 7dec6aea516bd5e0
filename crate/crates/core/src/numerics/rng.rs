use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seeded random stream.
///
/// The pair `(seed, stream)` fully determines the draw sequence. Distinct
/// stream labels select distinct ChaCha streams, so components (init,
/// dropout, k-means, shuffling) can draw independently of each other.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: String,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: &str) -> Self {
        let digest = Sha256::digest(stream.as_bytes());
        let mut id = [0u8; 8];
        id.copy_from_slice(&digest[..8]);
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(u64::from_le_bytes(id));
        Self {
            seed,
            stream: stream.to_owned(),
            inner,
        }
    }

    /// A new independent stream nested under this one's label.
    pub fn fork(&self, label: &str) -> Self {
        Self::new(self.seed, &format!("{}/{label}", self.stream))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
