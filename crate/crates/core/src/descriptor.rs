//! Pairwise-distance pose descriptor.
//!
//! Keypoints are normalized by the longest bounding-box edge and every
//! unordered pair `(i, j)`, `i < j`, contributes its euclidean distance in
//! lexicographic pair order. With 25 keypoints the descriptor has 300
//! entries.

use crate::error::{Error, Result};
use crate::skeleton::{BoundingBox, Skeleton, NUM_KEYPOINTS};

pub const fn descriptor_len(keypoints: usize) -> usize {
    keypoints * keypoints.saturating_sub(1) / 2
}

pub const DESCRIPTOR_DIM: usize = descriptor_len(NUM_KEYPOINTS);

#[derive(Debug, Clone, PartialEq)]
pub struct PoseDescriptor {
    values: Vec<f32>,
}

impl PoseDescriptor {
    pub fn from_values(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Position of pair `(i, j)`, `i < j < k`, in the lexicographic ordering.
pub fn pair_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * (2 * k - i - 1) / 2 + (j - i - 1)
}

/// Descriptor of arbitrary points under normalizer `scale`.
///
/// Differences are taken on raw coordinates and divided by `scale`
/// afterwards, so a shared offset cancels before any rounding.
pub fn descriptor_from_points(points: &[(f64, f64)], scale: f64) -> PoseDescriptor {
    let k = points.len();
    let mut values = Vec::with_capacity(descriptor_len(k));
    for (i, &(xi, yi)) in points.iter().enumerate() {
        for &(xj, yj) in &points[i + 1..] {
            values.push(((xi - xj).hypot(yi - yj) / scale) as f32);
        }
    }
    PoseDescriptor { values }
}

/// Requires all 25 keypoints labeled.
pub fn descriptor(s: &Skeleton, b: &BoundingBox) -> Result<PoseDescriptor> {
    if let Some(id) = s.first_unlabeled() {
        return Err(Error::IncompleteSkeleton(id.name()));
    }
    let scale = b.longest_dim();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateBox { w: b.w, h: b.h });
    }
    let points: Vec<(f64, f64)> = s.keypoints.iter().map(|k| (k.x, k.y)).collect();
    Ok(descriptor_from_points(&points, scale))
}

/// Descriptor for a query; without a box the tight box around the
/// keypoints supplies the normalizer.
pub fn query_descriptor(s: &Skeleton, b: Option<&BoundingBox>) -> Result<PoseDescriptor> {
    if let Some(id) = s.first_unlabeled() {
        return Err(Error::IncompleteSkeleton(id.name()));
    }
    match b {
        Some(b) => descriptor(s, b),
        None => {
            let tight = s.tight_box().ok_or(Error::DegenerateBox { w: 0.0, h: 0.0 })?;
            descriptor(s, &tight)
        }
    }
}
