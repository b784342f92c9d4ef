//! Named random substreams derived from a single experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for `(seed, name, index)`. Distinct names or
/// indices give unrelated streams; the same triple always replays the same
/// sequence.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = crc32fast::Hasher::new();
    h.update(name.as_bytes());
    rng.set_stream((u64::from(h.finalize()) << 32) ^ index);
    rng
}
