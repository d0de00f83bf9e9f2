//! Keypoint taxonomy and skeleton geometry.
//!
//! A skeleton always carries 25 keypoints: the 17 COCO keypoints in COCO
//! order followed by 8 limb midpoints (upper arms, forearms, thighs, shins).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_COCO_KEYPOINTS: usize = 17;
pub const NUM_KEYPOINTS: usize = 25;

/// Index of a keypoint in the 25-point skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeypointId(u8);

impl KeypointId {
    pub const NOSE: Self = Self(0);
    pub const LEFT_EYE: Self = Self(1);
    pub const RIGHT_EYE: Self = Self(2);
    pub const LEFT_EAR: Self = Self(3);
    pub const RIGHT_EAR: Self = Self(4);
    pub const LEFT_SHOULDER: Self = Self(5);
    pub const RIGHT_SHOULDER: Self = Self(6);
    pub const LEFT_ELBOW: Self = Self(7);
    pub const RIGHT_ELBOW: Self = Self(8);
    pub const LEFT_WRIST: Self = Self(9);
    pub const RIGHT_WRIST: Self = Self(10);
    pub const LEFT_HIP: Self = Self(11);
    pub const RIGHT_HIP: Self = Self(12);
    pub const LEFT_KNEE: Self = Self(13);
    pub const RIGHT_KNEE: Self = Self(14);
    pub const LEFT_ANKLE: Self = Self(15);
    pub const RIGHT_ANKLE: Self = Self(16);
    pub const MID_LEFT_UPPER_ARM: Self = Self(17);
    pub const MID_RIGHT_UPPER_ARM: Self = Self(18);
    pub const MID_LEFT_FOREARM: Self = Self(19);
    pub const MID_RIGHT_FOREARM: Self = Self(20);
    pub const MID_LEFT_THIGH: Self = Self(21);
    pub const MID_RIGHT_THIGH: Self = Self(22);
    pub const MID_LEFT_SHIN: Self = Self(23);
    pub const MID_RIGHT_SHIN: Self = Self(24);

    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_KEYPOINTS).then_some(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        KEYPOINT_NAMES[self.index()]
    }

    pub fn is_midpoint(self) -> bool {
        self.index() >= NUM_COCO_KEYPOINTS
    }

    /// The keypoint occupying the mirrored slot after a horizontal flip.
    pub fn mirrored(self) -> Self {
        Self(SWAP_TABLE[self.index()] as u8)
    }

    /// Limb endpoints for a midpoint keypoint.
    pub fn limb_endpoints(self) -> Option<(KeypointId, KeypointId)> {
        self.index()
            .checked_sub(NUM_COCO_KEYPOINTS)
            .map(|i| MIDPOINT_LIMBS[i])
    }

    pub fn all() -> impl Iterator<Item = KeypointId> {
        (0..NUM_KEYPOINTS as u8).map(Self)
    }
}

impl fmt::Display for KeypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KeypointId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KEYPOINT_NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| Self(i as u8))
            .ok_or_else(|| Error::SigmaTable(format!("unknown keypoint name `{s}`")))
    }
}

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "mid_left_upper_arm",
    "mid_right_upper_arm",
    "mid_left_forearm",
    "mid_right_forearm",
    "mid_left_thigh",
    "mid_right_thigh",
    "mid_left_shin",
    "mid_right_shin",
];

const SWAP_TABLE: [usize; NUM_KEYPOINTS] = [
    0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 18, 17, 20, 19, 22, 21, 24, 23,
];

const MIDPOINT_LIMBS: [(KeypointId, KeypointId); 8] = [
    (KeypointId::LEFT_SHOULDER, KeypointId::LEFT_ELBOW),
    (KeypointId::RIGHT_SHOULDER, KeypointId::RIGHT_ELBOW),
    (KeypointId::LEFT_ELBOW, KeypointId::LEFT_WRIST),
    (KeypointId::RIGHT_ELBOW, KeypointId::RIGHT_WRIST),
    (KeypointId::LEFT_HIP, KeypointId::LEFT_KNEE),
    (KeypointId::RIGHT_HIP, KeypointId::RIGHT_KNEE),
    (KeypointId::LEFT_KNEE, KeypointId::LEFT_ANKLE),
    (KeypointId::RIGHT_KNEE, KeypointId::RIGHT_ANKLE),
];

/// COCO visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum Visibility {
    #[default]
    NotLabeled = 0,
    Occluded = 1,
    Visible = 2,
}

impl Visibility {
    pub fn from_flag(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::NotLabeled),
            1 => Some(Self::Occluded),
            2 => Some(Self::Visible),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        self as u8
    }

    pub fn is_labeled(self) -> bool {
        self != Self::NotLabeled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: Visibility,
}

impl Keypoint {
    pub const UNLABELED: Self = Self {
        x: 0.0,
        y: 0.0,
        v: Visibility::NotLabeled,
    };

    pub fn new(x: f64, y: f64, v: Visibility) -> Self {
        Self { x, y, v }
    }

    pub fn visible(x: f64, y: f64) -> Self {
        Self::new(x, y, Visibility::Visible)
    }

    pub fn is_labeled(&self) -> bool {
        self.v.is_labeled()
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Fixed 25-slot skeleton indexed by [`KeypointId`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Skeleton {
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
}

impl Skeleton {
    pub fn new(keypoints: [Keypoint; NUM_KEYPOINTS]) -> Self {
        Self { keypoints }
    }

    /// Build from the 17 COCO keypoints; midpoints are derived.
    pub fn from_coco(coco: [Keypoint; NUM_COCO_KEYPOINTS]) -> Self {
        let mut s = Self::default();
        s.keypoints[..NUM_COCO_KEYPOINTS].copy_from_slice(&coco);
        s.derive_midpoints()
    }

    pub fn get(&self, id: KeypointId) -> &Keypoint {
        &self.keypoints[id.index()]
    }

    pub fn get_mut(&mut self, id: KeypointId) -> &mut Keypoint {
        &mut self.keypoints[id.index()]
    }

    pub fn is_complete(&self) -> bool {
        self.keypoints.iter().all(Keypoint::is_labeled)
    }

    pub fn first_unlabeled(&self) -> Option<KeypointId> {
        KeypointId::all().find(|id| !self.get(*id).is_labeled())
    }

    /// Overwrite slots 17..25 with limb midpoints of the COCO keypoints.
    ///
    /// The midpoint takes the weaker of the two endpoint visibilities, so a
    /// missing endpoint yields an unlabeled midpoint.
    pub fn derive_midpoints(mut self) -> Self {
        for id in KeypointId::all().filter(|id| id.is_midpoint()) {
            let (a, b) = id.limb_endpoints().expect("midpoint has endpoints");
            let (a, b) = (*self.get(a), *self.get(b));
            let v = a.v.min(b.v);
            *self.get_mut(id) = if v.is_labeled() {
                Keypoint::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0, v)
            } else {
                Keypoint::UNLABELED
            };
        }
        self
    }

    /// Tight axis-aligned box over the labeled keypoints.
    pub fn tight_box(&self) -> Option<BoundingBox> {
        let mut labeled = self.keypoints.iter().filter(|k| k.is_labeled());
        let first = labeled.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for k in labeled {
            x0 = x0.min(k.x);
            y0 = y0.min(k.y);
            x1 = x1.max(k.x);
            y1 = y1.max(k.y);
        }
        BoundingBox::new(x0, y0, x1 - x0, y1 - y0).ok()
    }

    pub fn map_points(mut self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        for k in &mut self.keypoints {
            (k.x, k.y) = f(k.x, k.y);
        }
        self
    }
}

/// Axis-aligned box, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() {
            Ok(Self { x, y, w, h })
        } else {
            Err(Error::DegenerateBox { w, h })
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn longest_dim(&self) -> f64 {
        self.w.max(self.h)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let (x1, y1) = (self.x + self.w, self.y + self.h);
        [(self.x, self.y), (x1, self.y), (x1, y1), (self.x, y1)]
    }
}

/// Per-keypoint OKS falloff constants.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSigmas {
    sigma: [f64; NUM_KEYPOINTS],
}

/// Published COCO keypoint evaluation constants, in COCO order.
pub const COCO_SIGMAS: [f64; NUM_COCO_KEYPOINTS] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// Relative slack accepted when a sigma file's midpoint rows are checked
/// against the endpoint mean (decimal text rarely round-trips exactly).
const MIDPOINT_SIGMA_TOLERANCE: f64 = 1e-9;

impl KeypointSigmas {
    /// Midpoint sigmas are the mean of their limb endpoints.
    pub fn from_coco(coco: [f64; NUM_COCO_KEYPOINTS]) -> Result<Self> {
        if let Some(i) = coco.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::SigmaTable(format!(
                "sigma for `{}` must be positive, got {}",
                KEYPOINT_NAMES[i], coco[i]
            )));
        }
        let mut sigma = [0.0; NUM_KEYPOINTS];
        sigma[..NUM_COCO_KEYPOINTS].copy_from_slice(&coco);
        for id in KeypointId::all().filter(|id| id.is_midpoint()) {
            let (a, b) = id.limb_endpoints().expect("midpoint has endpoints");
            sigma[id.index()] = (sigma[a.index()] + sigma[b.index()]) / 2.0;
        }
        Ok(Self { sigma })
    }

    pub fn get(&self, id: KeypointId) -> f64 {
        self.sigma[id.index()]
    }

    pub fn as_array(&self) -> &[f64; NUM_KEYPOINTS] {
        &self.sigma
    }

    /// Parse a 25-row `name kappa` table in keypoint order.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if rows.len() != NUM_KEYPOINTS {
            return Err(Error::SigmaTable(format!(
                "expected {NUM_KEYPOINTS} rows, found {}",
                rows.len()
            )));
        }
        let mut parsed = [0.0; NUM_KEYPOINTS];
        for (slot, (line, row)) in rows.iter().enumerate() {
            let mut fields = row.split_whitespace();
            let (Some(name), Some(kappa), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::SigmaTable(format!(
                    "line {line}: expected `name kappa`"
                )));
            };
            if name != KEYPOINT_NAMES[slot] {
                return Err(Error::SigmaTable(format!(
                    "line {line}: expected `{}`, found `{name}`",
                    KEYPOINT_NAMES[slot]
                )));
            }
            parsed[slot] = kappa
                .parse()
                .map_err(|e| Error::SigmaTable(format!("line {line}: {e}")))?;
        }
        let coco: [f64; NUM_COCO_KEYPOINTS] = parsed[..NUM_COCO_KEYPOINTS].try_into().unwrap();
        let sigmas = Self::from_coco(coco)?;
        for id in KeypointId::all().filter(|id| id.is_midpoint()) {
            let want = sigmas.get(id);
            let got = parsed[id.index()];
            if (got - want).abs() > MIDPOINT_SIGMA_TOLERANCE * want {
                return Err(Error::SigmaTable(format!(
                    "`{id}` is {got}, expected endpoint mean {want}"
                )));
            }
        }
        Ok(sigmas)
    }

    pub fn to_table(&self) -> String {
        KeypointId::all()
            .map(|id| format!("{} {}\n", id.name(), self.get(id)))
            .collect()
    }
}

impl Default for KeypointSigmas {
    fn default() -> Self {
        Self::from_coco(COCO_SIGMAS).expect("COCO sigmas are positive")
    }
}
