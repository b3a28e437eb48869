//! Seeded random streams.
//!
//! Every estimator in this crate takes a 64-bit master seed and derives
//! independent substreams from `(seed, stream_index)` through the fixed
//! SplitMix64 expansion below. Results are therefore reproducible bit for
//! bit for a given seed, independent of thread scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the substream `stream` of a master seed as a ChaCha8 generator.
///
/// The 256-bit ChaCha key is the SplitMix64 expansion of
/// `seed ^ (stream + 1) * GOLDEN`.
pub fn derive_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed ^ (stream.wrapping_add(1)).wrapping_mul(GOLDEN);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Collapse `(seed, stream)` into a new 64-bit master seed for nested
/// estimators (e.g. the per-tree inner estimate of a quenched run).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut state = seed ^ (stream.wrapping_add(1)).wrapping_mul(GOLDEN);
    let a = splitmix64(&mut state);
    let b = splitmix64(&mut state);
    a ^ b.rotate_left(32)
}

/// Exact Poisson sampling by CDF inversion.
///
/// One uniform per draw for moderate intensities; large intensities are
/// split as Poisson(l) = Poisson(l/2) + Poisson(l/2), which is exact.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    assert!(lambda.is_finite() && lambda >= 0.0, "poisson intensity must be finite and >= 0");
    if lambda == 0.0 {
        return 0;
    }
    if lambda > 500.0 {
        let half = lambda / 2.0;
        return poisson(rng, half) + poisson(rng, half);
    }
    let u: f64 = rng.random();
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0u64;
    // Walk the CDF; the cap only guards against u landing in rounding
    // residue past the representable tail.
    let cap = (lambda + 20.0 * lambda.sqrt() + 120.0) as u64;
    while u > cdf && k < cap {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// Uniform time in `[0, beta)`.
pub fn uniform_time<R: Rng + ?Sized>(rng: &mut R, beta: f64) -> f64 {
    // random() is uniform on [0,1); scaling keeps the half-open interval.
    let t = rng.random::<f64>() * beta;
    if t >= beta {
        // Guard against rounding up to beta itself.
        0.0
    } else {
        t
    }
}
