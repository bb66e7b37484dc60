//! Counter-based Gaussian noise.
//!
//! Every Brownian increment is a pure function of its [`NoiseKey`]. The
//! variate is produced by hashing the path coordinates (seed, box, sample,
//! realization) into a Philox4x32-10 key and encoding the step index,
//! component pair and time direction in the 128-bit counter. The same key
//! therefore yields the same bits no matter which thread asks for it or in
//! which order.

use serde::{Deserialize, Serialize};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps 53 random bits to the open interval (0, 1).
#[inline]
fn open_unit(hi: u32, lo: u32) -> f64 {
    let bits = (((hi as u64) << 32) | lo as u64) >> 11;
    (bits as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Identifies one Brownian path: everything in a [`NoiseKey`] except the
/// step and component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathKey {
    pub master_seed: u64,
    pub box_index: u64,
    pub sample_index: u64,
    pub realization_index: u64,
}

impl PathKey {
    pub fn new(master_seed: u64, box_index: u64, sample_index: u64, realization_index: u64) -> Self {
        Self {
            master_seed,
            box_index,
            sample_index,
            realization_index,
        }
    }

    /// Path shared by every point of one realization of one box.
    pub fn shared(master_seed: u64, box_index: u64, realization_index: u64) -> Self {
        Self::new(master_seed, box_index, 0, realization_index)
    }

    fn philox_key(&self) -> [u32; 2] {
        let mut h = splitmix64(self.master_seed);
        h = splitmix64(h ^ self.box_index);
        h = splitmix64(h ^ self.sample_index.rotate_left(21));
        h = splitmix64(h ^ self.realization_index.rotate_left(42));
        [h as u32, (h >> 32) as u32]
    }

    pub fn key(&self, step_index: i64, component: u32, backward: bool) -> NoiseKey {
        NoiseKey {
            path: *self,
            step_index,
            component,
            backward,
        }
    }

    /// Standard normal variate for one step and noise component.
    #[inline]
    pub fn normal(&self, step_index: i64, component: u32, backward: bool) -> f64 {
        self.key(step_index, component, backward).normal()
    }

    /// Fills `out` with the standard normals of components `0..out.len()`.
    pub fn normals(&self, step_index: i64, backward: bool, out: &mut [f64]) {
        let key = self.philox_key();
        let mut pair = 0u32;
        let mut i = 0;
        while i < out.len() {
            let (z0, z1) = box_muller(self.block(key, step_index, pair, backward));
            out[i] = z0;
            if i + 1 < out.len() {
                out[i + 1] = z1;
            }
            i += 2;
            pair += 1;
        }
    }

    #[inline]
    fn block(&self, key: [u32; 2], step_index: i64, pair: u32, backward: bool) -> [u32; 4] {
        let s = step_index as u64;
        philox4x32_10([s as u32, (s >> 32) as u32, pair, backward as u32], key)
    }
}

#[inline]
fn box_muller(block: [u32; 4]) -> (f64, f64) {
    let u1 = open_unit(block[0], block[1]);
    let u2 = open_unit(block[2], block[3]);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Full coordinate of a single standard-normal variate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub path: PathKey,
    pub step_index: i64,
    pub component: u32,
    /// Backward-in-time steps draw from a disjoint counter range.
    pub backward: bool,
}

impl NoiseKey {
    pub fn normal(&self) -> f64 {
        let key = self.path.philox_key();
        let (z0, z1) = box_muller(self.path.block(key, self.step_index, self.component / 2, self.backward));
        if self.component % 2 == 0 {
            z0
        } else {
            z1
        }
    }
}
