//! The single seeded generator used everywhere randomness is needed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha20Rng;

/// Recorded in checkpoints and manifests so runs can be reproduced.
pub const RNG_ALGORITHM: &str = "chacha20/rand_chacha-0.9";

pub fn seeded(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Serializable position of a [`Rng`] stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (u128 is not JSON-portable).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            algorithm: RNG_ALGORITHM.to_string(),
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> crate::Result<Rng> {
        if self.algorithm != RNG_ALGORITHM {
            return Err(crate::Error::Data(format!(
                "rng algorithm `{}` is not `{RNG_ALGORITHM}`",
                self.algorithm
            )));
        }
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| crate::Error::Data(format!("bad rng word_pos `{}`", self.word_pos)))?;
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn state_roundtrip_continues_stream() {
        let mut a = seeded(42);
        for _ in 0..17 {
            let _: f64 = a.random();
        }
        let mut b = RngState::capture(&a).restore().unwrap();
        for _ in 0..50 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }
}
