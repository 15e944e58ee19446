//! Keyed random streams. Every stream is a pure function of its 64-bit key,
//! so cells, discrete steps and replications can be regenerated in any order.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Stream = Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const K1: u64 = 0xd6e8_feb8_6659_fd93;
const K2: u64 = 0xa076_1d64_78bd_642f;

/// Domain tags keep the key spaces of different consumers disjoint.
pub mod domain {
    pub const CELL: u64 = 0x63656c6c;
    pub const DISCRETE: u64 = 0x64697363;
    pub const REPLICATION: u64 = 0x7265706c;
    pub const BOOTSTRAP: u64 = 0x626f6f74;
    pub const SUBSAMPLE: u64 = 0x73756273;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with two indices.
#[inline]
pub fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    let h = mix64(seed.wrapping_add(GOLDEN));
    let h = mix64(h ^ a.wrapping_mul(K1).wrapping_add(GOLDEN));
    mix64(h ^ b.wrapping_mul(K2).wrapping_add(K1))
}

#[inline]
pub fn keyed(domain: u64, seed: u64, a: u64, b: u64) -> u64 {
    mix3(seed ^ mix64(domain), a, b)
}

#[inline]
pub fn stream(key: u64) -> Stream {
    Stream::seed_from_u64(key)
}

/// Human-readable form of [`replication_seed`], recorded in run manifests.
pub const REPLICATION_SEED_SCHEME: &str = "mix3(base ^ mix64(0x7265706c), horizon_index, rep); \
mix3(s, a, b) = m(m(m(s + G) ^ (a*K1 + G)) ^ (b*K2 + K1)), m = SplitMix64 finalizer, \
G = 0x9e3779b97f4a7c15";

/// Seed of replication `rep` at horizon index `horizon_index`.
pub fn replication_seed(base: u64, horizon_index: u64, rep: u64) -> u64 {
    keyed(domain::REPLICATION, base, horizon_index, rep)
}

/// Poisson draw: sequential inversion below mean 10, PTRS rejection above.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 || !mean.is_finite() {
        return 0;
    }
    if mean < 10.0 {
        poisson_inversion(rng, mean)
    } else {
        poisson_ptrs(rng, mean)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p < 1e-300 && cdf > 1.0 - 1e-15 {
            break;
        }
    }
    k
}

// Hörmann (1993), transformed rejection with squeeze.
fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = -mean + k * loglam - libm::lgamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}
