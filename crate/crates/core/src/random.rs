//! The single seeded generator every stochastic step draws from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Recorded in manifests so a run can be tied to its generator.
pub const GENERATOR: &str = "chacha8-v1";

pub type PipelineRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> PipelineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for a named sub-task, so adding draws in one stage
/// does not perturb another.
pub fn substream(seed: u64, label: &str) -> PipelineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // FNV-1a over the label selects the stream.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    rng.set_stream(h);
    rng
}
