//! Geometric augmentation and box derivation for single-character crops.

use crate::skeleton::{BoundingBox, KeypointId, Skeleton, NUM_KEYPOINTS};

/// Mirror horizontally in an image `image_width` pixels wide and swap the
/// left/right keypoint slots. Uses the pixel-center convention
/// `x' = W - 1 - x`.
pub fn flip_lr(s: &Skeleton, image_width: f64) -> Skeleton {
    debug_assert!(image_width > 0.0);
    let reflected = s.map_points(|x, y| (image_width - 1.0 - x, y));
    let mut out = reflected;
    for id in KeypointId::all() {
        out.keypoints[id.mirrored().index()] = reflected.keypoints[id.index()];
    }
    out
}

/// Rotate keypoints rigidly by `theta` radians about `center`. The returned
/// box is the tight axis-aligned box around the rotated corners of `b`.
pub fn rotate(
    s: &Skeleton,
    b: &BoundingBox,
    theta: f64,
    center: (f64, f64),
) -> (Skeleton, BoundingBox) {
    let (sin, cos) = theta.sin_cos();
    let (cx, cy) = center;
    // Written as an offset from the input so theta = 0 is exactly the identity.
    let turn = |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        (
            x + ((cos - 1.0) * dx - sin * dy),
            y + (sin * dx + (cos - 1.0) * dy),
        )
    };
    let rotated = s.map_points(turn);
    let corners = b.corners().map(|(x, y)| turn(x, y));
    let (mut x0, mut y0) = corners[0];
    let (mut x1, mut y1) = corners[0];
    for &(x, y) in &corners[1..] {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let bbox = if theta == 0.0 {
        *b
    } else {
        BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    };
    (rotated, bbox)
}

/// Single-channel grid of values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Mask {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height, "mask size");
        Self {
            width,
            height,
            values,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f32) {
        self.values[row * self.width + col] = value;
    }
}

pub const DEFAULT_MASK_THRESHOLD: f32 = 0.5;

/// Tight box over every cell with value `>= threshold`, in cell units.
/// `None` means nothing passed, i.e. no character was found.
pub fn bbox_from_mask(mask: &Mask, threshold: f32) -> Option<BoundingBox> {
    let mut extent: Option<(usize, usize, usize, usize)> = None;
    for row in 0..mask.height {
        for col in 0..mask.width {
            if mask.get(col, row) >= threshold {
                let e = extent.get_or_insert((col, row, col, row));
                e.0 = e.0.min(col);
                e.1 = e.1.min(row);
                e.2 = e.2.max(col);
                e.3 = e.3.max(row);
            }
        }
    }
    extent.map(|(c0, r0, c1, r1)| BoundingBox {
        x: c0 as f64,
        y: r0 as f64,
        w: (c1 - c0 + 1) as f64,
        h: (r1 - r0 + 1) as f64,
    })
}

/// Square crop region, may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRegion {
    pub x: f64,
    pub y: f64,
    pub side: f64,
}

pub const DEFAULT_PAD_FRAC: f64 = 0.10;

/// Square crop centered on `b` whose side is `(1 + 2 * pad_frac)` times the
/// longest box edge. No clamping to the image; callers fill the overhang.
pub fn padded_crop_region(b: &BoundingBox, pad_frac: f64) -> CropRegion {
    debug_assert!(pad_frac >= 0.0);
    let side = b.longest_dim() * (1.0 + 2.0 * pad_frac);
    CropRegion {
        x: b.x - (side - b.w) / 2.0,
        y: b.y - (side - b.h) / 2.0,
        side,
    }
}

/// Map skeleton coordinates into the crop's frame, scaled so the crop spans
/// `out_size` units.
pub fn to_crop_frame(s: &Skeleton, crop: &CropRegion, out_size: f64) -> Skeleton {
    let scale = out_size / crop.side;
    s.map_points(|x, y| ((x - crop.x) * scale, (y - crop.y) * scale))
}

/// Pairwise distances over all 25 keypoints, used by the geometry checks.
pub fn pairwise_distances(s: &Skeleton) -> Vec<f64> {
    let mut out = Vec::with_capacity(NUM_KEYPOINTS * (NUM_KEYPOINTS - 1) / 2);
    for i in 0..NUM_KEYPOINTS {
        for j in i + 1..NUM_KEYPOINTS {
            out.push(s.keypoints[i].distance(&s.keypoints[j]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Keypoint, Visibility};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn flip_moves_left_wrist_to_right_slot() {
        let mut s = Skeleton::default();
        *s.get_mut(KeypointId::LEFT_WRIST) = Keypoint::visible(10.0, 40.0);
        let f = flip_lr(&s, 100.0);
        assert_eq!(*f.get(KeypointId::RIGHT_WRIST), Keypoint::visible(89.0, 40.0));
        assert!(!f.get(KeypointId::LEFT_WRIST).is_labeled());
    }

    #[test]
    fn flip_keeps_nose_slot() {
        let mut s = Skeleton::default();
        *s.get_mut(KeypointId::NOSE) = Keypoint::new(30.0, 5.0, Visibility::Occluded);
        let f = flip_lr(&s, 64.0);
        assert_eq!(*f.get(KeypointId::NOSE), Keypoint::new(33.0, 5.0, Visibility::Occluded));
    }

    #[test]
    fn rotate_zero_is_identity() {
        let s = Skeleton::from_coco(std::array::from_fn(|i| {
            Keypoint::visible(0.3 * i as f64, 7.1 - i as f64)
        }));
        let b = bb(0.1, 0.2, 10.3, 20.7);
        let (r, rb) = rotate(&s, &b, 0.0, (3.3, -1.2));
        assert_eq!(r, s);
        assert_eq!(rb, b);
    }

    #[test]
    fn rotate_half_turn_about_origin() {
        let mut s = Skeleton::default();
        *s.get_mut(KeypointId::NOSE) = Keypoint::visible(1.0, 0.0);
        let (r, _) = rotate(&s, &bb(0.0, 0.0, 1.0, 1.0), PI, (0.0, 0.0));
        let k = r.get(KeypointId::NOSE);
        assert!((k.x + 1.0).abs() < 1e-9 && k.y.abs() < 1e-9);
    }

    #[test]
    fn rotate_quarter_turn_swaps_box_extent() {
        let b = bb(0.0, 0.0, 10.0, 20.0);
        let (_, r) = rotate(&Skeleton::default(), &b, FRAC_PI_2, b.center());
        // corners (0,0),(10,0),(10,20),(0,20) about (5,10) land on x in [-5,15], y in [5,15]
        for (got, want) in [(r.x, -5.0), (r.y, 5.0), (r.w, 20.0), (r.h, 10.0)] {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn mask_fixtures() {
        let mut m = Mask::zeros(12, 10);
        assert_eq!(bbox_from_mask(&m, 0.5), None);
        m.set(3, 7, 1.0);
        assert_eq!(bbox_from_mask(&m, 0.5), Some(bb(3.0, 7.0, 1.0, 1.0)));
        let mut m = Mask::zeros(12, 10);
        m.set(2, 2, 0.9);
        m.set(9, 5, 0.5);
        m.set(11, 9, 0.49);
        assert_eq!(bbox_from_mask(&m, 0.5), Some(bb(2.0, 2.0, 8.0, 4.0)));
    }

    #[test]
    fn crop_fixtures() {
        let sq = bb(5.0, 7.0, 30.0, 30.0);
        assert_eq!(
            padded_crop_region(&sq, 0.0),
            CropRegion { x: 5.0, y: 7.0, side: 30.0 }
        );
        let wide = bb(0.0, 0.0, 100.0, 50.0);
        let c = padded_crop_region(&wide, DEFAULT_PAD_FRAC);
        assert_eq!(c, CropRegion { x: -10.0, y: -35.0, side: 120.0 });
        assert_eq!((c.x + c.side / 2.0, c.y + c.side / 2.0), wide.center());
    }

    #[test]
    fn crop_frame_maps_crop_to_output() {
        let mut s = Skeleton::default();
        *s.get_mut(KeypointId::NOSE) = Keypoint::visible(50.0, 25.0);
        let crop = CropRegion { x: -10.0, y: -35.0, side: 120.0 };
        let t = to_crop_frame(&s, &crop, 60.0);
        assert_eq!(*t.get(KeypointId::NOSE), Keypoint::visible(30.0, 30.0));
    }
}
