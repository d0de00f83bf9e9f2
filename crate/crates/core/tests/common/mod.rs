#![allow(dead_code)]

use posekit_core::{BoundingBox, Keypoint, Skeleton, Visibility};
use rand::Rng;

/// Coordinates on a 1/256 grid: sums and differences of such values are
/// exact in f64, which the exact-invariance checks rely on.
pub fn grid_coord<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) * 256.0) as i64;
    lo + rng.gen_range(0..steps) as f64 / 256.0
}

/// All 25 keypoints labeled, COCO part drawn at random and midpoints derived.
pub fn complete_skeleton<R: Rng>(rng: &mut R, extent: f64) -> Skeleton {
    let coco = std::array::from_fn(|_| {
        Keypoint::new(
            grid_coord(rng, 0.0, extent),
            grid_coord(rng, 0.0, extent),
            if rng.gen_bool(0.8) {
                Visibility::Visible
            } else {
                Visibility::Occluded
            },
        )
    });
    Skeleton::from_coco(coco)
}

/// Like [`complete_skeleton`] but roughly `missing` of the COCO keypoints
/// unlabeled.
pub fn partial_skeleton<R: Rng>(rng: &mut R, extent: f64, missing: f64) -> Skeleton {
    let mut s = complete_skeleton(rng, extent);
    for k in &mut s.keypoints[..17] {
        if rng.gen_bool(missing) {
            *k = Keypoint::UNLABELED;
        }
    }
    s.derive_midpoints()
}

pub fn random_box<R: Rng>(rng: &mut R, extent: f64) -> BoundingBox {
    BoundingBox::new(
        grid_coord(rng, 0.0, extent / 2.0),
        grid_coord(rng, 0.0, extent / 2.0),
        grid_coord(rng, 1.0, extent),
        grid_coord(rng, 1.0, extent),
    )
    .unwrap()
}

/// Jitter every labeled keypoint by up to `amount` per axis; drop a few.
pub fn noisy_prediction<R: Rng>(rng: &mut R, gt: &Skeleton, amount: f64, drop: f64) -> Skeleton {
    let mut p = *gt;
    for k in &mut p.keypoints {
        if !k.is_labeled() || rng.gen_bool(drop) {
            *k = Keypoint::UNLABELED;
            continue;
        }
        k.x += grid_coord(rng, -amount, amount);
        k.y += grid_coord(rng, -amount, amount);
        k.v = Visibility::Visible;
    }
    p
}
