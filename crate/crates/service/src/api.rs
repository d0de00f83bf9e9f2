//! Wire schema shared with the query UI. Every document carries `v`.

use posekit_core::index::QueryResult;
use posekit_core::skeleton::{NUM_COCO_KEYPOINTS, NUM_KEYPOINTS};
use posekit_core::{BoundingBox, Keypoint, Skeleton, Visibility};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub v: u32,
    /// `[x, y, v]` triplets, 17 (COCO order) or 25 (full taxonomy).
    pub keypoints: Vec<[f64; 3]>,
    /// `[x, y, w, h]`; the tight box around the keypoints when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub v: u32,
    pub results: Vec<QueryResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub v: u32,
    pub status: String,
    pub rows: usize,
    pub dim: usize,
    /// Index file format version.
    pub version: u16,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub v: u32,
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    /// Stable machine-readable code.
    pub code: String,
    pub message: String,
}

/// Request problems, each mapped to one error code.
#[derive(Debug, Clone, PartialEq)]
pub enum Invalid {
    Malformed(String),
    Version(u32),
    KeypointCount(usize),
    Visibility { index: usize, flag: f64 },
    NonFinite,
    Incomplete(&'static str),
    DegenerateBox,
    ZeroK,
    KTooLarge { k: usize, max: usize },
}

impl Invalid {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Malformed(_) => "malformed_request",
            Self::Version(_) => "unsupported_version",
            Self::KeypointCount(_) => "keypoint_count",
            Self::Visibility { .. } => "invalid_visibility",
            Self::NonFinite => "non_finite",
            Self::Incomplete(_) => "incomplete_skeleton",
            Self::DegenerateBox => "degenerate_bbox",
            Self::ZeroK => "invalid_k",
            Self::KTooLarge { .. } => "k_too_large",
        }
    }

    pub fn message(&self) -> String {
        match self {
            Self::Malformed(m) => m.clone(),
            Self::Version(v) => format!("schema version {v} is not supported (expected {SCHEMA_VERSION})"),
            Self::KeypointCount(n) => {
                format!("expected {NUM_COCO_KEYPOINTS} or {NUM_KEYPOINTS} keypoints, got {n}")
            }
            Self::Visibility { index, flag } => format!("keypoint {index}: visibility {flag} is not 0, 1 or 2"),
            Self::NonFinite => "coordinates must be finite".into(),
            Self::Incomplete(name) => format!("incomplete skeleton: `{name}` is not labeled"),
            Self::DegenerateBox => "bbox needs positive width and height".into(),
            Self::ZeroK => "k must be at least 1".into(),
            Self::KTooLarge { k, max } => format!("k = {k} exceeds the limit of {max}"),
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            v: SCHEMA_VERSION,
            error: ErrorDetail {
                code: self.code().into(),
                message: self.message(),
            },
        }
    }
}

/// A validated query: complete skeleton, optional box, bounded k.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub skeleton: Skeleton,
    pub bbox: Option<BoundingBox>,
    pub k: usize,
}

impl QueryRequest {
    pub fn validate(&self, default_k: usize, max_k: usize) -> Result<Query, Invalid> {
        if self.v != SCHEMA_VERSION {
            return Err(Invalid::Version(self.v));
        }
        let mut points = Vec::with_capacity(self.keypoints.len());
        for (index, &[x, y, flag]) in self.keypoints.iter().enumerate() {
            let v = [0.0, 1.0, 2.0]
                .iter()
                .position(|f| *f == flag)
                .and_then(|i| Visibility::from_flag(i as u8))
                .ok_or(Invalid::Visibility { index, flag })?;
            if !(x.is_finite() && y.is_finite()) {
                return Err(Invalid::NonFinite);
            }
            points.push(Keypoint::new(x, y, v));
        }
        let skeleton = match points.len() {
            NUM_COCO_KEYPOINTS => Skeleton::from_coco(points.try_into().expect("17 points")),
            NUM_KEYPOINTS => Skeleton::new(points.try_into().expect("25 points")),
            n => return Err(Invalid::KeypointCount(n)),
        };
        if let Some(id) = skeleton.first_unlabeled() {
            return Err(Invalid::Incomplete(id.name()));
        }
        let bbox = match self.bbox {
            Some([x, y, w, h]) => {
                if ![x, y, w, h].iter().all(|c| c.is_finite()) {
                    return Err(Invalid::NonFinite);
                }
                Some(BoundingBox::new(x, y, w, h).map_err(|_| Invalid::DegenerateBox)?)
            }
            None => None,
        };
        let k = match self.k.unwrap_or(default_k) {
            0 => return Err(Invalid::ZeroK),
            k if k > max_k => return Err(Invalid::KTooLarge { k, max: max_k }),
            k => k,
        };
        Ok(Query { skeleton, bbox, k })
    }
}

impl From<&Skeleton> for QueryRequest {
    fn from(s: &Skeleton) -> Self {
        Self {
            v: SCHEMA_VERSION,
            keypoints: s.keypoints.iter().map(|k| [k.x, k.y, k.v.flag() as f64]).collect(),
            bbox: None,
            k: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coco_request() -> QueryRequest {
        QueryRequest {
            v: 1,
            keypoints: (0..17).map(|i| [i as f64, (i * i) as f64, 2.0]).collect(),
            bbox: None,
            k: None,
        }
    }

    #[test]
    fn coco_query_is_upgraded() {
        let q = coco_request().validate(10, 100).unwrap();
        assert_eq!(q.k, 10);
        assert!(q.skeleton.is_complete());
    }

    #[test]
    fn error_codes() {
        let mut r = coco_request();
        r.keypoints[9][2] = 0.0;
        assert_eq!(r.validate(10, 100).unwrap_err().code(), "incomplete_skeleton");

        let mut r = coco_request();
        r.keypoints[3][2] = 1.5;
        assert_eq!(r.validate(10, 100).unwrap_err().code(), "invalid_visibility");

        let mut r = coco_request();
        r.k = Some(0);
        assert_eq!(r.validate(10, 100).unwrap_err(), Invalid::ZeroK);
        r.k = Some(101);
        assert_eq!(r.validate(10, 100).unwrap_err().code(), "k_too_large");

        let mut r = coco_request();
        r.keypoints.pop();
        assert_eq!(r.validate(10, 100).unwrap_err(), Invalid::KeypointCount(16));

        let mut r = coco_request();
        r.bbox = Some([0.0, 0.0, 0.0, 4.0]);
        assert_eq!(r.validate(10, 100).unwrap_err(), Invalid::DegenerateBox);

        let mut r = coco_request();
        r.v = 2;
        assert_eq!(r.validate(10, 100).unwrap_err().code(), "unsupported_version");
    }

    #[test]
    fn request_round_trips_as_json() {
        let mut r = coco_request();
        r.bbox = Some([1.0, 2.0, 30.0, 40.0]);
        r.k = Some(3);
        let back: QueryRequest = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
