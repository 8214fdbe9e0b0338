//! Portable seeded standard-normal stream.
//!
//! Uniforms come from ChaCha8 (`rand_chacha`, seeded through
//! `SeedableRng::seed_from_u64`), which has a fixed, platform-independent
//! output sequence. Each pair of 64-bit words is turned into two N(0,1)
//! deviates with the basic Box–Muller transform:
//!
//! ```text
//! u1 = ((w1 >> 11) + 1) * 2^-53        in (0, 1]
//! u2 =  (w2 >> 11)      * 2^-53        in [0, 1)
//! z0 = sqrt(-2 ln u1) * cos(2 pi u2)
//! z1 = sqrt(-2 ln u1) * sin(2 pi u2)
//! ```
//!
//! `z0` is emitted before `z1`. Transcendentals go through `libm` so the
//! stream is bit-identical on every target.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INV_2_POW_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * INV_2_POW_53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * INV_2_POW_53;
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * libm::sin(theta));
        radius * libm::cos(theta)
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }
}
