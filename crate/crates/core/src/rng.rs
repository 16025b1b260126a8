//! Counter-based random substreams.
//!
//! Every random draw in the planner and simulator comes from a generator keyed by a
//! root seed and a path of indices (agent, step, rollout, ...). Results therefore do not
//! depend on the order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

pub type StreamRng = ChaCha8Rng;

/// Stream tags keep substreams for different purposes disjoint.
pub mod tag {
    pub const PLAN: u64 = 0x504c_414e;
    pub const EXEC: u64 = 0x4558_4543;
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const JITTER: u64 = 0x4a49_5454;
    pub const SCENE: u64 = 0x5343_454e;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies a position in the stream tree. Cheap to copy and extend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    pub fn child(self, index: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x1234_5678))))
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

/// One standard-normal draw, produced in `f64` and converted so that `f32` and `f64`
/// builds consume identical random sequences.
#[inline]
pub fn standard_normal<T: Real, R: rand::Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn children_are_distinct_and_stable() {
        let root = StreamKey::root(7);
        let a = root.child(1).child(2);
        let b = root.child(2).child(1);
        assert_ne!(a, b);
        assert_eq!(a, StreamKey::root(7).child(1).child(2));
        let x: u64 = a.rng().random();
        let y: u64 = a.rng().random();
        assert_eq!(x, y);
    }
}
