use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A named random stream. The generator state is derived from
/// `sha256(master_seed || name)`, so each purpose gets its own sequence and
/// adding draws to one stream never shifts another.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    name: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, name: impl Into<String>) -> Self {
        let name = name.into();
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        Self {
            master_seed,
            name,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Child stream `"<name>/<suffix>"` under the same master seed.
    pub fn fork(&self, suffix: &str) -> RngStream {
        RngStream::new(self.master_seed, format!("{}/{}", self.name, suffix))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
