//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatkin_core::pipeline::{reference_avatar, Framing};
use splatkin_core::splat::{render, CapsuleHumanoid, GaussianCloud, RenderOptions};
use splatkin_core::vcr::ViewRing;
use splatkin_core::Image;

pub fn avatar(count: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reference_avatar(&CapsuleHumanoid::default(), count, 0.85, &mut rng).expect("avatar")
}

/// Renders of `cloud` around the default ring.
pub fn ring_views(cloud: &GaussianCloud, size: usize) -> (ViewRing, Vec<Image>) {
    let ring = ViewRing::default();
    let framing = Framing { size, ..Framing::default() };
    let opts = RenderOptions::default();
    let views = ring
        .azimuths()
        .iter()
        .map(|&az| render(cloud, &framing.camera(az, 0.0), [1.0; 3], &opts).expect("render").color)
        .collect();
    (ring, views)
}
