//! Shared inputs for the benchmarks.

use qsk_core::heisenberg::{sample_unit_ball, GroupDims, GroupPoint};
use qsk_core::rng;

/// `count` points of the unit ball, fixed by `seed`.
pub fn points(dims: GroupDims, count: usize, seed: u64) -> Vec<GroupPoint> {
    let mut r = rng::stream(seed, 0xBE7C);
    (0..count).map(|_| sample_unit_ball(dims, &mut r)).collect()
}
