//! COCO-style keypoint documents, prediction files, grayscale masks and
//! train/val/test splits.
//!
//! 17-keypoint annotations are upgraded to 25 keypoints on load and the
//! derived midpoints are tagged as such, so writing a record back emits the
//! same 17 triplets. Malformed annotations are rejected, never repaired.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::augment::Mask;
use crate::error::{Error, Result};
use crate::metrics::EvalPair;
use crate::skeleton::{
    BoundingBox, Keypoint, KeypointId, Skeleton, Visibility, NUM_COCO_KEYPOINTS, NUM_KEYPOINTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Annotated,
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub file_name: Option<String>,
    pub skeleton: Skeleton,
    pub provenance: [Provenance; NUM_KEYPOINTS],
    pub bbox: BoundingBox,
    pub tags: Vec<String>,
}

impl AnnotationRecord {
    fn midpoints_derived(&self) -> bool {
        self.provenance[NUM_COCO_KEYPOINTS..]
            .iter()
            .all(|p| *p == Provenance::Derived)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    Malformed { message: String },
    KeypointCount { found: usize },
    InvalidVisibility { value: f64 },
    NonFinite,
    MissingBbox,
    DegenerateBbox,
    DuplicateId,
    UnknownImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position in the document's annotation array.
    pub index: usize,
    pub annotation_id: Option<u64>,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<AnnotationRecord>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Deserialize)]
struct RawDocument {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<Value>,
}

#[derive(Debug, Deserialize)]
struct RawImage {
    id: u64,
    #[serde(default)]
    file_name: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    #[serde(default)]
    id: Option<u64>,
    image_id: u64,
    keypoints: Vec<f64>,
    #[serde(default)]
    bbox: Option<Vec<f64>>,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    midpoint_provenance: Option<Vec<Provenance>>,
    #[serde(default)]
    score: Option<f64>,
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Document {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Decode `3 * K` numbers into a 25-keypoint skeleton. `strict_visibility`
/// requires COCO flags; otherwise any positive value counts as visible
/// (result files often carry confidences there).
fn decode_keypoints(
    values: &[f64],
    strict_visibility: bool,
) -> std::result::Result<(Skeleton, [Provenance; NUM_KEYPOINTS]), RejectReason> {
    let k = values.len() / 3;
    if !values.len().is_multiple_of(3) || (k != NUM_COCO_KEYPOINTS && k != NUM_KEYPOINTS) {
        return Err(RejectReason::KeypointCount { found: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RejectReason::NonFinite);
    }
    let mut s = Skeleton::default();
    for (slot, t) in values.chunks_exact(3).enumerate() {
        let v = if strict_visibility {
            match t[2] {
                0.0 => Visibility::NotLabeled,
                1.0 => Visibility::Occluded,
                2.0 => Visibility::Visible,
                value => return Err(RejectReason::InvalidVisibility { value }),
            }
        } else if t[2] > 0.0 {
            Visibility::Visible
        } else {
            Visibility::NotLabeled
        };
        s.keypoints[slot] = Keypoint::new(t[0], t[1], v);
    }
    let mut prov = [Provenance::Annotated; NUM_KEYPOINTS];
    if k == NUM_COCO_KEYPOINTS {
        s = s.derive_midpoints();
        prov[NUM_COCO_KEYPOINTS..].fill(Provenance::Derived);
    }
    Ok((s, prov))
}

fn decode_bbox(b: Option<&Vec<f64>>) -> std::result::Result<BoundingBox, RejectReason> {
    match b.map(Vec::as_slice) {
        Some(&[x, y, w, h]) => {
            if ![x, y, w, h].iter().all(|v| v.is_finite()) {
                return Err(RejectReason::NonFinite);
            }
            BoundingBox::new(x, y, w, h).map_err(|_| RejectReason::DegenerateBbox)
        }
        Some(_) => Err(RejectReason::Malformed {
            message: "bbox must have 4 numbers".into(),
        }),
        None => Err(RejectReason::MissingBbox),
    }
}

pub fn load_coco_keypoints(text: &str) -> Result<LoadReport> {
    let doc: RawDocument = parse_json(text)?;
    let files: HashMap<u64, Option<String>> =
        doc.images.into_iter().map(|i| (i.id, i.file_name)).collect();
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (index, value) in doc.annotations.into_iter().enumerate() {
        let id_hint = value.get("id").and_then(Value::as_u64);
        let reject = |reason| Rejection {
            index,
            annotation_id: id_hint,
            reason,
        };
        let raw: RawAnnotation = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(reject(RejectReason::Malformed {
                    message: e.to_string(),
                }));
                continue;
            }
        };
        let id = raw.id.unwrap_or(index as u64);
        let decoded = decode_keypoints(&raw.keypoints, true).and_then(|(s, mut prov)| {
            if let Some(mp) = &raw.midpoint_provenance {
                if mp.len() != NUM_KEYPOINTS - NUM_COCO_KEYPOINTS || raw.keypoints.len() != 3 * NUM_KEYPOINTS {
                    return Err(RejectReason::Malformed {
                        message: "midpoint_provenance needs 8 entries and 25 keypoints".into(),
                    });
                }
                prov[NUM_COCO_KEYPOINTS..].copy_from_slice(mp);
            }
            Ok((s, prov, decode_bbox(raw.bbox.as_ref())?))
        });
        let (skeleton, provenance, bbox) = match decoded {
            Ok(d) => d,
            Err(reason) => {
                report.rejected.push(reject(reason));
                continue;
            }
        };
        if !files.is_empty() && !files.contains_key(&raw.image_id) {
            report.rejected.push(reject(RejectReason::UnknownImage));
            continue;
        }
        if !seen.insert(id) {
            report.rejected.push(reject(RejectReason::DuplicateId));
            continue;
        }
        report.records.push(AnnotationRecord {
            id,
            image_id: raw.image_id,
            file_name: files.get(&raw.image_id).cloned().flatten(),
            skeleton,
            provenance,
            bbox,
            tags: raw.tags,
        });
    }
    Ok(report)
}

pub fn write_coco_keypoints(records: &[AnnotationRecord]) -> Value {
    let mut images: BTreeMap<u64, Option<&str>> = BTreeMap::new();
    for r in records {
        let entry = images.entry(r.image_id).or_default();
        if entry.is_none() {
            *entry = r.file_name.as_deref();
        }
    }
    let images: Vec<Value> = images
        .into_iter()
        .map(|(id, file)| match file {
            Some(f) => json!({ "id": id, "file_name": f }),
            None => json!({ "id": id }),
        })
        .collect();
    let annotations: Vec<Value> = records
        .iter()
        .map(|r| {
            let derived = r.midpoints_derived();
            let k = if derived { NUM_COCO_KEYPOINTS } else { NUM_KEYPOINTS };
            let keypoints: Vec<Value> = r.skeleton.keypoints[..k]
                .iter()
                .flat_map(|p| [json!(p.x), json!(p.y), json!(p.v.flag())])
                .collect();
            let mut a = json!({
                "id": r.id,
                "image_id": r.image_id,
                "category_id": 1,
                "keypoints": keypoints,
                "num_keypoints": r.skeleton.keypoints[..k].iter().filter(|p| p.is_labeled()).count(),
                "bbox": [r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h],
            });
            if !r.tags.is_empty() {
                a["tags"] = json!(r.tags);
            }
            let mixed = !derived && r.provenance[NUM_COCO_KEYPOINTS..].contains(&Provenance::Derived);
            if mixed {
                a["midpoint_provenance"] = json!(r.provenance[NUM_COCO_KEYPOINTS..]);
            }
            a
        })
        .collect();
    let keypoint_names: Vec<&str> = KeypointId::all().take(NUM_COCO_KEYPOINTS).map(|id| id.name()).collect();
    json!({
        "images": images,
        "annotations": annotations,
        "categories": [{ "id": 1, "name": "character", "keypoints": keypoint_names }],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: u64,
    pub skeleton: Skeleton,
    pub score: Option<f64>,
}

/// Predictions come either as a COCO results array
/// (`[{image_id, keypoints, score}]`) or as a full keypoint document.
pub fn load_predictions(text: &str) -> Result<(Vec<PredictionRecord>, Vec<Rejection>)> {
    let value: Value = parse_json(text)?;
    let entries = match value {
        Value::Array(items) => items,
        Value::Object(mut doc) => match doc.remove("annotations") {
            Some(Value::Array(items)) => items,
            _ => Vec::new(),
        },
        _ => {
            return Err(Error::Document {
                line: 1,
                column: 1,
                message: "expected an array or an object".into(),
            })
        }
    };
    let mut preds = Vec::new();
    let mut rejected = Vec::new();
    for (index, value) in entries.into_iter().enumerate() {
        let annotation_id = value.get("id").and_then(Value::as_u64);
        let outcome = serde_json::from_value::<RawAnnotation>(value)
            .map_err(|e| RejectReason::Malformed {
                message: e.to_string(),
            })
            .and_then(|raw| {
                let (skeleton, _) = decode_keypoints(&raw.keypoints, false)?;
                Ok(PredictionRecord {
                    image_id: raw.image_id,
                    skeleton,
                    score: raw.score,
                })
            });
        match outcome {
            Ok(p) => preds.push(p),
            Err(reason) => rejected.push(Rejection {
                index,
                annotation_id,
                reason,
            }),
        }
    }
    Ok((preds, rejected))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchReport {
    /// Ground-truth records with no prediction for their image.
    pub unmatched_gt: Vec<u64>,
    /// Ground-truth records without any labeled COCO keypoint.
    pub unlabeled_gt: Vec<u64>,
}

/// Pair each ground-truth record with the highest-scoring prediction for its
/// image (first one on equal scores).
pub fn match_predictions(
    gt: &[AnnotationRecord],
    preds: &[PredictionRecord],
) -> (Vec<EvalPair>, MatchReport) {
    let mut best: HashMap<u64, &PredictionRecord> = HashMap::new();
    for p in preds {
        let better = best
            .get(&p.image_id)
            .is_none_or(|cur| p.score.unwrap_or(0.0) > cur.score.unwrap_or(0.0));
        if better {
            best.insert(p.image_id, p);
        }
    }
    let mut pairs = Vec::new();
    let mut report = MatchReport::default();
    for r in gt {
        let Some(p) = best.get(&r.image_id) else {
            report.unmatched_gt.push(r.id);
            continue;
        };
        match EvalPair::new(r.skeleton, p.skeleton, r.bbox) {
            Ok(pair) => pairs.push(pair),
            Err(_) => report.unlabeled_gt.push(r.id),
        }
    }
    (pairs, report)
}

/// Read a single-channel 8- or 16-bit image into `[0, 1]`.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::Mask(e.to_string()))?;
    mask_from_image(img)
}

pub fn load_mask_from_memory(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Mask(e.to_string()))?;
    mask_from_image(img)
}

fn mask_from_image(img: image::DynamicImage) -> Result<Mask> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        image::DynamicImage::ImageLuma8(buf) => {
            buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        }
        image::DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()
        }
        other => {
            return Err(Error::Mask(format!(
                "expected a single-channel image, got {:?}",
                other.color()
            )))
        }
    };
    Ok(Mask::new(w, h, values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRatios {
    /// Train/val/test fractions summing to 1.
    Fractions([f64; 3]),
    /// Exact train/val/test sizes summing to the number of ids.
    Counts([usize; 3]),
}

impl SplitRatios {
    pub const EIGHTY_TEN_TEN: Self = Self::Fractions([0.8, 0.1, 0.1]);

    fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        match *self {
            Self::Counts(c) => {
                if c.iter().sum::<usize>() != n {
                    return Err(Error::SplitRatios(format!(
                        "counts {c:?} do not add up to {n} ids"
                    )));
                }
                Ok(c)
            }
            Self::Fractions(f) => {
                if f.iter().any(|v| v.is_nan() || *v < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::SplitRatios(format!("fractions {f:?} must sum to 1")));
                }
                // largest remainder
                let exact = f.map(|v| v * n as f64);
                let mut sizes = exact.map(|v| v.floor() as usize);
                let mut order = [0usize, 1, 2];
                order.sort_by(|&a, &b| {
                    (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor()))
                });
                let short = n - sizes.iter().sum::<usize>();
                for &i in order.iter().take(short) {
                    sizes[i] += 1;
                }
                Ok(sizes)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then consecutive cuts. Deterministic for a fixed seed.
pub fn split_assign<T: Clone>(ids: &[T], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit<T>> {
    let [a, b, _] = ratios.sizes(ids.len())?;
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(a + b);
    let val = shuffled.split_off(a);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        test,
    })
}

/// A file is itself; a directory expands to its files with the given
/// extension in lexicographic order.
pub fn expand_paths(path: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == extension));
    files.sort();
    Ok(files)
}
