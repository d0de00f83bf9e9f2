//! Single-instance keypoint evaluation: OKS@t, PCKh, PDJ and PCPm, with a
//! per-keypoint-group breakdown.
//!
//! All metrics are computed over the 17 COCO keypoints. Ground truth with
//! `v = 0` is ignored; a prediction with `v = 0` for a labeled ground-truth
//! keypoint counts as a miss. Thresholds are closed (`<=`).

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::skeleton::{BoundingBox, KeypointId, KeypointSigmas, Skeleton, NUM_COCO_KEYPOINTS};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPair {
    pub gt: Skeleton,
    pub pred: Skeleton,
    pub bbox: BoundingBox,
}

impl EvalPair {
    pub fn new(gt: Skeleton, pred: Skeleton, bbox: BoundingBox) -> Result<Self> {
        if bbox.area().is_nan() || bbox.area() <= 0.0 {
            return Err(Error::DegenerateBox { w: bbox.w, h: bbox.h });
        }
        if !coco_ids().any(|id| gt.get(id).is_labeled()) {
            return Err(Error::NoLabeledKeypoints);
        }
        Ok(Self { gt, pred, bbox })
    }

    /// Euclidean error of a labeled ground-truth keypoint; infinite when
    /// the prediction is missing, `None` when the ground truth is unlabeled.
    pub fn error(&self, id: KeypointId) -> Option<f64> {
        let (g, p) = (self.gt.get(id), self.pred.get(id));
        g.is_labeled().then(|| {
            if p.is_labeled() {
                g.distance(p)
            } else {
                f64::INFINITY
            }
        })
    }

    /// Per-keypoint similarity `exp(-d^2 / (2 s^2 kappa^2))` with `s^2` the
    /// box area.
    pub fn similarity(&self, id: KeypointId, sig: &KeypointSigmas) -> Option<f64> {
        let d = self.error(id)?;
        let k = sig.get(id);
        Some((-(d * d) / (2.0 * self.bbox.area() * k * k)).exp())
    }
}

fn coco_ids() -> impl Iterator<Item = KeypointId> {
    KeypointId::all().take(NUM_COCO_KEYPOINTS)
}

/// Neumaier-compensated sum, so accumulation order does not leak into
/// results.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

pub fn oks(pair: &EvalPair, sig: &KeypointSigmas) -> Result<f64> {
    let sims: Vec<f64> = coco_ids().filter_map(|id| pair.similarity(id, sig)).collect();
    if sims.is_empty() {
        return Err(Error::NoLabeledKeypoints);
    }
    Ok(compensated_sum(sims.iter().copied()) / sims.len() as f64)
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(t))
    }
}

/// Fraction of instances whose OKS is at least `t`.
pub fn oks_at(pairs: &[EvalPair], sig: &KeypointSigmas, t: f64) -> Result<f64> {
    Ok(oks_rate(pairs, sig, t)?.value.unwrap_or(0.0))
}

fn oks_rate(pairs: &[EvalPair], sig: &KeypointSigmas, t: f64) -> Result<Rate> {
    check_threshold(t)?;
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut hits = 0;
    for p in pairs {
        if oks(p, sig)? >= t {
            hits += 1;
        }
    }
    Ok(Rate::new(hits, pairs.len() as u64))
}

/// `hits / total` with its counts kept so rates can be pooled exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: u64,
    pub total: u64,
    pub value: Option<f64>,
}

impl Rate {
    pub fn new(hits: u64, total: u64) -> Self {
        Self {
            hits,
            total,
            value: (total > 0).then(|| hits as f64 / total as f64),
        }
    }

    pub fn pool(rates: impl IntoIterator<Item = Rate>) -> Self {
        let (h, t) = rates
            .into_iter()
            .fold((0, 0), |(h, t), r| (h + r.hits, t + r.total));
        Self::new(h, t)
    }
}

/// A rate plus the number of instances (or limbs) that could not be
/// scored because their normalizer was undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub rate: Rate,
    pub skipped: u64,
}

impl Scored {
    pub fn value(&self) -> f64 {
        self.rate.value.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadNormalizer {
    /// `factor` times the ground-truth ear-to-ear distance.
    EarToEar { factor: f64 },
}

impl Default for HeadNormalizer {
    fn default() -> Self {
        Self::EarToEar { factor: 2.0 }
    }
}

impl HeadNormalizer {
    pub fn head_size(&self, gt: &Skeleton) -> Option<f64> {
        match *self {
            Self::EarToEar { factor } => {
                positive(labeled_distance(gt, KeypointId::LEFT_EAR, KeypointId::RIGHT_EAR)? * factor)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorsoNormalizer {
    /// Left shoulder to right hip.
    #[default]
    TorsoDiameter,
    BboxDiagonal,
}

impl TorsoNormalizer {
    pub fn size(&self, gt: &Skeleton, bbox: &BoundingBox) -> Option<f64> {
        match self {
            Self::TorsoDiameter => {
                positive(labeled_distance(gt, KeypointId::LEFT_SHOULDER, KeypointId::RIGHT_HIP)?)
            }
            Self::BboxDiagonal => positive(bbox.diagonal()),
        }
    }
}

fn positive(v: f64) -> Option<f64> {
    (v > 0.0 && v.is_finite()).then_some(v)
}

fn labeled_distance(s: &Skeleton, a: KeypointId, b: KeypointId) -> Option<f64> {
    let (a, b) = (s.get(a), s.get(b));
    (a.is_labeled() && b.is_labeled()).then(|| a.distance(b))
}

/// A scored body part; in the breakdown it belongs to the group of `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limb {
    #[serde(with = "keypoint_name")]
    pub a: KeypointId,
    #[serde(with = "keypoint_name")]
    pub b: KeypointId,
}

impl Limb {
    pub const fn new(a: KeypointId, b: KeypointId) -> Self {
        Self { a, b }
    }

    /// Upper arms, forearms, thighs and shins.
    pub fn appendages() -> Vec<Limb> {
        use KeypointId as K;
        vec![
            Limb::new(K::LEFT_SHOULDER, K::LEFT_ELBOW),
            Limb::new(K::RIGHT_SHOULDER, K::RIGHT_ELBOW),
            Limb::new(K::LEFT_ELBOW, K::LEFT_WRIST),
            Limb::new(K::RIGHT_ELBOW, K::RIGHT_WRIST),
            Limb::new(K::LEFT_HIP, K::LEFT_KNEE),
            Limb::new(K::RIGHT_HIP, K::RIGHT_KNEE),
            Limb::new(K::LEFT_KNEE, K::LEFT_ANKLE),
            Limb::new(K::RIGHT_KNEE, K::RIGHT_ANKLE),
        ]
    }

    /// Shoulder-to-hip on each side.
    pub fn torso() -> Vec<Limb> {
        use KeypointId as K;
        vec![
            Limb::new(K::LEFT_SHOULDER, K::LEFT_HIP),
            Limb::new(K::RIGHT_SHOULDER, K::RIGHT_HIP),
        ]
    }
}

mod keypoint_name {
    use super::*;
    use serde::Deserializer;

    pub fn serialize<S: Serializer>(id: &KeypointId, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(id.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<KeypointId, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

pub fn pckh_at(pairs: &[EvalPair], alpha: f64, head: &HeadNormalizer) -> Result<Scored> {
    normalized_hits(pairs, alpha, &coco_ids().collect::<Vec<_>>(), |p| {
        head.head_size(&p.gt)
    })
}

pub fn pdj_at(pairs: &[EvalPair], frac: f64, torso: &TorsoNormalizer) -> Result<Scored> {
    normalized_hits(pairs, frac, &coco_ids().collect::<Vec<_>>(), |p| {
        torso.size(&p.gt, &p.bbox)
    })
}

/// Fraction of labeled keypoints in `ids` with error `<= scale * norm(p)`;
/// instances with no normalizer are skipped.
fn normalized_hits(
    pairs: &[EvalPair],
    scale: f64,
    ids: &[KeypointId],
    norm: impl Fn(&EvalPair) -> Option<f64>,
) -> Result<Scored> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let (mut hits, mut total, mut skipped) = (0, 0, 0);
    for p in pairs {
        let Some(n) = norm(p) else {
            skipped += 1;
            continue;
        };
        for &id in ids {
            if let Some(e) = p.error(id) {
                total += 1;
                if e <= scale * n {
                    hits += 1;
                }
            }
        }
    }
    Ok(Scored {
        rate: Rate::new(hits, total),
        skipped,
    })
}

/// Mean ground-truth length of each limb over the pairs where both of its
/// endpoints are labeled.
pub fn mean_limb_lengths(pairs: &[EvalPair], limbs: &[Limb]) -> Vec<Option<f64>> {
    limbs
        .iter()
        .map(|l| {
            let lengths: Vec<f64> = pairs
                .iter()
                .filter_map(|p| labeled_distance(&p.gt, l.a, l.b))
                .collect();
            (!lengths.is_empty())
                .then(|| compensated_sum(lengths.iter().copied()) / lengths.len() as f64)
        })
        .collect()
}

/// Per-limb `(hits, total, skipped)` for PCPm.
fn pcpm_counts(pairs: &[EvalPair], alpha: f64, limbs: &[Limb]) -> Vec<(u64, u64, u64)> {
    let means = mean_limb_lengths(pairs, limbs);
    limbs
        .iter()
        .zip(means)
        .map(|(l, mean)| {
            let (mut hits, mut total, mut skipped) = (0, 0, 0);
            for p in pairs {
                let (Some(ea), Some(eb)) = (p.error(l.a), p.error(l.b)) else {
                    skipped += 1;
                    continue;
                };
                let limit = alpha * mean.expect("labeled limb has a mean");
                total += 1;
                if ea <= limit && eb <= limit {
                    hits += 1;
                }
            }
            (hits, total, skipped)
        })
        .collect()
}

pub fn pcpm_at(pairs: &[EvalPair], alpha: f64, limbs: &[Limb]) -> Result<Scored> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let counts = pcpm_counts(pairs, alpha, limbs);
    Ok(Scored {
        rate: Rate::pool(counts.iter().map(|&(h, t, _)| Rate::new(h, t))),
        skipped: counts.iter().map(|c| c.2).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointGroup {
    Nose,
    Eyes,
    Ears,
    Shoulders,
    Elbows,
    Wrists,
    Hips,
    Knees,
    Ankles,
}

impl KeypointGroup {
    pub const ALL: [KeypointGroup; 9] = [
        Self::Nose,
        Self::Eyes,
        Self::Ears,
        Self::Shoulders,
        Self::Elbows,
        Self::Wrists,
        Self::Hips,
        Self::Knees,
        Self::Ankles,
    ];

    pub fn of(id: KeypointId) -> Option<Self> {
        match id.index() {
            0 => Some(Self::Nose),
            1..=16 => Some(Self::ALL[id.index().div_ceil(2)]),
            _ => None,
        }
    }

    pub fn members(self) -> Vec<KeypointId> {
        coco_ids().filter(|id| Self::of(*id) == Some(self)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub oks_thresholds: Vec<f64>,
    pub pckh_alpha: f64,
    pub head: HeadNormalizer,
    pub pdj_frac: f64,
    pub torso: TorsoNormalizer,
    pub pcpm_alpha: f64,
    pub limbs: Vec<Limb>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            oks_thresholds: vec![0.5, 0.75],
            pckh_alpha: 0.5,
            head: HeadNormalizer::default(),
            pdj_frac: 0.2,
            torso: TorsoNormalizer::default(),
            pcpm_alpha: 0.5,
            limbs: Limb::appendages(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRate {
    pub threshold: f64,
    pub rate: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_oks: f64,
    pub oks: Vec<ThresholdRate>,
    pub pckh: Scored,
    pub pdj: Scored,
    pub pcpm: Scored,
}

/// One breakdown row. OKS rates here count keypoints whose individual
/// similarity reaches the threshold; PCPm counts limbs whose distal end
/// (`Limb::b`) is in this group and is `None` when no limb ends here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: KeypointGroup,
    pub oks: Vec<ThresholdRate>,
    pub pckh: Rate,
    pub pdj: Rate,
    pub pcpm: Option<Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub instances: u64,
    pub aggregate: Aggregates,
    pub groups: Vec<GroupRow>,
    pub config: MetricConfig,
}

pub fn keypoint_breakdown(
    pairs: &[EvalPair],
    sig: &KeypointSigmas,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    for &t in &cfg.oks_thresholds {
        check_threshold(t)?;
    }
    let per_instance: Vec<f64> = pairs.iter().map(|p| oks(p, sig)).collect::<Result<_>>()?;
    let aggregate = Aggregates {
        mean_oks: compensated_sum(per_instance.iter().copied()) / pairs.len() as f64,
        oks: cfg
            .oks_thresholds
            .iter()
            .map(|&t| ThresholdRate {
                threshold: t,
                rate: Rate::new(
                    per_instance.iter().filter(|&&o| o >= t).count() as u64,
                    pairs.len() as u64,
                ),
            })
            .collect(),
        pckh: pckh_at(pairs, cfg.pckh_alpha, &cfg.head)?,
        pdj: pdj_at(pairs, cfg.pdj_frac, &cfg.torso)?,
        pcpm: pcpm_at(pairs, cfg.pcpm_alpha, &cfg.limbs)?,
    };

    let limb_counts = pcpm_counts(pairs, cfg.pcpm_alpha, &cfg.limbs);
    let groups = KeypointGroup::ALL
        .iter()
        .map(|&group| {
            let ids = group.members();
            let oks = cfg
                .oks_thresholds
                .iter()
                .map(|&t| {
                    let sims = pairs
                        .iter()
                        .flat_map(|p| ids.iter().filter_map(|&id| p.similarity(id, sig)));
                    let (hits, total) = sims.fold((0, 0), |(h, n), s| (h + (s >= t) as u64, n + 1));
                    ThresholdRate {
                        threshold: t,
                        rate: Rate::new(hits, total),
                    }
                })
                .collect();
            let pckh = normalized_hits(pairs, cfg.pckh_alpha, &ids, |p| cfg.head.head_size(&p.gt))?;
            let pdj = normalized_hits(pairs, cfg.pdj_frac, &ids, |p| cfg.torso.size(&p.gt, &p.bbox))?;
            let limbs: Vec<Rate> = cfg
                .limbs
                .iter()
                .zip(&limb_counts)
                .filter(|(l, _)| KeypointGroup::of(l.b) == Some(group))
                .map(|(_, &(h, t, _))| Rate::new(h, t))
                .collect();
            Ok(GroupRow {
                group,
                oks,
                pckh: pckh.rate,
                pdj: pdj.rate,
                pcpm: (!limbs.is_empty()).then(|| Rate::pool(limbs)),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MetricReport {
        version: REPORT_VERSION,
        instances: pairs.len() as u64,
        aggregate,
        groups,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Keypoint, Visibility};

    fn displaced(mut s: Skeleton, id: KeypointId, dx: f64, dy: f64) -> Skeleton {
        let k = s.get_mut(id);
        *k = Keypoint::new(k.x + dx, k.y + dy, k.v);
        s
    }

    fn single_point(id: KeypointId, x: f64, y: f64) -> Skeleton {
        let mut s = Skeleton::default();
        *s.get_mut(id) = Keypoint::visible(x, y);
        s
    }

    fn square(side: f64) -> BoundingBox {
        BoundingBox::new(0.0, 0.0, side, side).unwrap()
    }

    #[test]
    fn perfect_prediction_oks_is_one() {
        let gt = single_point(KeypointId::NOSE, 3.0, 4.0);
        let p = EvalPair::new(gt, gt, square(10.0)).unwrap();
        assert_eq!(oks(&p, &KeypointSigmas::default()).unwrap(), 1.0);
    }

    #[test]
    fn oks_at_sqrt2_sigma_is_inv_e() {
        let sig = KeypointSigmas::default();
        let s = 40.0;
        let d = s * sig.get(KeypointId::LEFT_WRIST) * 2f64.sqrt();
        let gt = single_point(KeypointId::LEFT_WRIST, 10.0, 10.0);
        let pred = single_point(KeypointId::LEFT_WRIST, 10.0 + d, 10.0);
        let p = EvalPair::new(gt, pred, square(s)).unwrap();
        assert!((oks(&p, &sig).unwrap() - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn oks_two_keypoint_mean() {
        let sig = KeypointSigmas::default();
        let s = 50.0;
        let (a, b) = (KeypointId::LEFT_HIP, KeypointId::RIGHT_KNEE);
        // exp(-d^2 / (2 s^2 k^2)) = exp(-0.5) at d = s k, exp(-2) at d = 2 s k
        let mut gt = Skeleton::default();
        *gt.get_mut(a) = Keypoint::visible(0.0, 0.0);
        *gt.get_mut(b) = Keypoint::visible(20.0, 20.0);
        let pred = displaced(displaced(gt, a, s * sig.get(a), 0.0), b, 0.0, 2.0 * s * sig.get(b));
        let p = EvalPair::new(gt, pred, square(s)).unwrap();
        assert!((oks(&p, &sig).unwrap() - 0.370_932_971_474_623).abs() < 1e-12);
    }

    #[test]
    fn oks_undefined_without_labels() {
        assert!(matches!(
            EvalPair::new(Skeleton::default(), Skeleton::default(), square(1.0)),
            Err(Error::NoLabeledKeypoints)
        ));
    }

    #[test]
    fn missing_prediction_is_a_miss() {
        let gt = single_point(KeypointId::NOSE, 3.0, 4.0);
        let p = EvalPair::new(gt, Skeleton::default(), square(10.0)).unwrap();
        assert_eq!(oks(&p, &KeypointSigmas::default()).unwrap(), 0.0);
    }

    #[test]
    fn oks_at_thresholds() {
        let sig = KeypointSigmas::default();
        let s = 100.0;
        let k = sig.get(KeypointId::NOSE);
        // exp(-d^2 / (2 s^2 k^2)) = 0.6
        let d = (-2.0 * 0.6f64.ln()).sqrt() * s * k;
        let gt = single_point(KeypointId::NOSE, 0.0, 0.0);
        let p = EvalPair::new(gt, single_point(KeypointId::NOSE, d, 0.0), square(s)).unwrap();
        assert!((oks(&p, &sig).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(oks_at(&[p], &sig, 0.5).unwrap(), 1.0);
        assert_eq!(oks_at(&[p], &sig, 0.75).unwrap(), 0.0);
        assert!(oks_at(&[], &sig, 0.5).is_err());
        assert!(oks_at(&[p], &sig, 1.0).is_err());
    }

    fn with_ears(ear_gap: f64) -> Skeleton {
        let mut s = Skeleton::default();
        *s.get_mut(KeypointId::LEFT_EAR) = Keypoint::visible(0.0, 0.0);
        *s.get_mut(KeypointId::RIGHT_EAR) = Keypoint::visible(ear_gap, 0.0);
        *s.get_mut(KeypointId::NOSE) = Keypoint::visible(ear_gap / 2.0, 10.0);
        s
    }

    #[test]
    fn pckh_boundaries() {
        // ear-to-ear 15px, factor 2 -> head size 30, alpha 0.5 -> 15px
        let head = HeadNormalizer::default();
        let gt = with_ears(15.0);
        let on = EvalPair::new(gt, displaced(gt, KeypointId::NOSE, 15.0, 0.0), square(50.0)).unwrap();
        let off = EvalPair::new(gt, displaced(gt, KeypointId::NOSE, 16.0, 0.0), square(50.0)).unwrap();
        assert_eq!(pckh_at(&[on], 0.5, &head).unwrap().rate, Rate::new(3, 3));
        assert_eq!(pckh_at(&[off], 0.5, &head).unwrap().rate, Rate::new(2, 3));
    }

    #[test]
    fn pckh_skips_instances_without_ears() {
        let gt = single_point(KeypointId::NOSE, 1.0, 1.0);
        let p = EvalPair::new(gt, gt, square(5.0)).unwrap();
        let ok = EvalPair::new(with_ears(10.0), with_ears(10.0), square(50.0)).unwrap();
        let s = pckh_at(&[p, ok], 0.5, &HeadNormalizer::default()).unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.rate, Rate::new(3, 3));
    }

    fn torso(len: f64) -> Skeleton {
        let mut s = Skeleton::default();
        *s.get_mut(KeypointId::LEFT_SHOULDER) = Keypoint::visible(0.0, 0.0);
        *s.get_mut(KeypointId::RIGHT_HIP) = Keypoint::visible(0.0, len);
        s
    }

    #[test]
    fn pdj_closed_threshold_and_skips() {
        let gt = torso(100.0);
        let pred = displaced(gt, KeypointId::RIGHT_HIP, 20.0, 0.0);
        let p = EvalPair::new(gt, pred, square(200.0)).unwrap();
        assert_eq!(pdj_at(&[p], 0.2, &TorsoNormalizer::default()).unwrap().rate, Rate::new(2, 2));
        let pred = displaced(gt, KeypointId::RIGHT_HIP, 20.5, 0.0);
        let p = EvalPair::new(gt, pred, square(200.0)).unwrap();
        assert_eq!(pdj_at(&[p], 0.2, &TorsoNormalizer::default()).unwrap().rate, Rate::new(1, 2));
        let no_torso = single_point(KeypointId::NOSE, 0.0, 0.0);
        let q = EvalPair::new(no_torso, no_torso, square(10.0)).unwrap();
        let s = pdj_at(&[q], 0.2, &TorsoNormalizer::default()).unwrap();
        assert_eq!((s.skipped, s.rate.total), (1, 0));
        let s = pdj_at(&[q], 0.2, &TorsoNormalizer::BboxDiagonal).unwrap();
        assert_eq!((s.skipped, s.rate), (0, Rate::new(1, 1)));
    }

    #[test]
    fn pdj_half_displaced() {
        let gt = torso(100.0);
        let pred = displaced(gt, KeypointId::LEFT_SHOULDER, 30.0, 0.0);
        let p = EvalPair::new(gt, pred, square(200.0)).unwrap();
        assert_eq!(pdj_at(&[p], 0.2, &TorsoNormalizer::default()).unwrap().value(), 0.5);
    }

    fn forearm(len: f64) -> Skeleton {
        let mut s = Skeleton::default();
        *s.get_mut(KeypointId::LEFT_ELBOW) = Keypoint::visible(0.0, 0.0);
        *s.get_mut(KeypointId::LEFT_WRIST) = Keypoint::visible(len, 0.0);
        s
    }

    #[test]
    fn pcpm_uses_mean_limb_length() {
        let limbs = [Limb::new(KeypointId::LEFT_ELBOW, KeypointId::LEFT_WRIST)];
        let short = forearm(10.0);
        let long = forearm(30.0);
        let bad = EvalPair::new(short, displaced(short, KeypointId::LEFT_WRIST, 0.0, 11.0), square(40.0)).unwrap();
        let good = EvalPair::new(long, long, square(40.0)).unwrap();
        assert_eq!(mean_limb_lengths(&[bad, good], &limbs), vec![Some(20.0)]);
        // 11 > 0.5 * 20
        assert_eq!(pcpm_at(&[bad, good], 0.5, &limbs).unwrap().rate, Rate::new(1, 2));
        let edge = EvalPair::new(short, displaced(short, KeypointId::LEFT_WRIST, 0.0, 10.0), square(40.0)).unwrap();
        assert_eq!(pcpm_at(&[edge, good], 0.5, &limbs).unwrap().rate, Rate::new(2, 2));
    }

    #[test]
    fn pcpm_skips_unlabeled_limbs() {
        let mut gt = forearm(10.0);
        gt.get_mut(KeypointId::LEFT_WRIST).v = Visibility::NotLabeled;
        let p = EvalPair::new(gt, gt, square(40.0)).unwrap();
        let s = pcpm_at(&[p], 0.5, &Limb::appendages()).unwrap();
        assert_eq!(s.skipped, 8);
        assert_eq!(s.rate.total, 0);
    }

    #[test]
    fn groups_cover_coco_once() {
        let mut seen = vec![];
        for g in KeypointGroup::ALL {
            seen.extend(g.members());
        }
        seen.sort();
        assert_eq!(seen, coco_ids().collect::<Vec<_>>());
        assert_eq!(KeypointGroup::of(KeypointId::RIGHT_ANKLE), Some(KeypointGroup::Ankles));
        assert_eq!(KeypointGroup::Eyes.members(), [KeypointId::LEFT_EYE, KeypointId::RIGHT_EYE]);
    }

    #[test]
    fn compensated_sum_is_order_independent() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
        assert_eq!(compensated_sum(vals.iter().rev().copied()), 2.0);
    }

    #[test]
    fn limb_config_serializes_by_name() {
        let json = serde_json::to_string(&Limb::torso()[0]).unwrap();
        assert_eq!(json, r#"{"a":"left_shoulder","b":"left_hip"}"#);
        let back: Limb = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Limb::torso()[0]);
    }
}
