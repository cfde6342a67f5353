//! Counter-based keyed random streams.
//!
//! Every random quantity is a pure function of a key `(domain, master seed,
//! replicate, item)`: the first three words fill the ChaCha8 key and the item
//! selects the stream, so a draw never depends on traversal order or on which
//! thread performs it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the uses of one master seed so their streams never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// Disorder variables; `item` is the vertex id.
    Disorder,
    /// Bootstrap resampling; `item` is the resample index.
    Bootstrap,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Disorder => 0x6470_7265_5f6f_6d67,
            StreamDomain::Bootstrap => 0x6470_7265_5f62_7374,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub domain: StreamDomain,
    pub master_seed: u64,
    pub replicate: u64,
}

impl StreamKey {
    pub fn new(domain: StreamDomain, master_seed: u64, replicate: u64) -> Self {
        Self { domain, master_seed, replicate }
    }

    fn seed(&self) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.replicate.to_le_bytes());
        seed[16..24].copy_from_slice(&self.domain.tag().to_le_bytes());
        seed
    }

    /// Independent stream for `item` under this key.
    pub fn stream(&self, item: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed());
        rng.set_stream(item);
        rng
    }
}
