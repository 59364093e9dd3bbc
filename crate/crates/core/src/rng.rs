//! Counter-based, splittable random streams.
//!
//! Every random quantity in the crate comes from a [`Stream`] addressed by a
//! [`StreamKey`]. Keys are derived from a 64-bit seed and split by integer
//! ids, so the value drawn at position `k` of stream `(seed, id, ...)` is a
//! pure function of those integers. The generator is versioned: any change
//! to the bit layout below must bump [`RNG_VERSION`].
//!
//! Layout (version 1):
//!
//! * `mix64` is the SplitMix64 finalizer.
//! * `StreamKey::new(seed) = mix64(seed ^ SEED_SALT)`.
//! * `key.split(id) = mix64(key ^ mix64(id + GOLDEN))`.
//! * The `k`-th `u64` of a stream is `mix64(key + mix64(k + GOLDEN))`
//!   (wrapping arithmetic).
//! * Uniforms on `(0, 1)` take the top 53 bits: `((u >> 11) + 0.5) * 2^-53`.
//! * Gaussians use Box–Muller on consecutive uniforms `(u1, u2)`:
//!   `sqrt(-2 ln u1) * cos(2π u2)` then `sqrt(-2 ln u1) * sin(2π u2)`.

pub const RNG_NAME: &str = "splitmix-counter";
pub const RNG_VERSION: u32 = 1;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0x5CA1_ED6D_0000_0001;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix64(seed ^ SEED_SALT))
    }

    /// Child key for sub-stream `id`. Splitting never perturbs siblings.
    pub fn split(self, id: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(id.wrapping_add(GOLDEN))))
    }

    pub fn stream(self) -> Stream {
        Stream {
            key: self.0,
            counter: 0,
            spare: None,
        }
    }

    /// A derived 64-bit seed, for handing to code that takes plain seeds.
    pub fn seed(self) -> u64 {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Stream {
    key: u64,
    counter: u64,
    spare: Option<f64>,
}

impl Stream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix64(self.key.wrapping_add(mix64(self.counter.wrapping_add(GOLDEN))));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw.
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_gaussian();
        }
    }
}
