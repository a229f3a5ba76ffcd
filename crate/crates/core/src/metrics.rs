//! Detection and counting evaluation.
//!
//! Detection quality: greedy IoU > 0.5 matching, average precision computed
//! as `sum_i P(i) * R(i) / annotations` over the score-ranked detections of
//! a class, mAP as the unweighted class mean, and pooled P/R/F1/accuracy.
//! Counting quality: `TP / (TP + FN + FP)` over per-class counts.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};

use crate::counter::{CountReport, Track};
use crate::detection::{ClassLabel, FrameDetections};
use crate::error::{Error, Result};
use crate::simulator::GroundTruth;

/// A ratio that may be undefined (zero denominator). Serialized as a number
/// or the string `"undefined"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined,
}

impl MetricValue {
    pub fn ratio(num: f64, den: f64) -> Self {
        if den > 0.0 {
            MetricValue::Defined(num / den)
        } else {
            MetricValue::Undefined
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(v),
            MetricValue::Undefined => None,
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Defined(v) => s.serialize_f64(*v),
            MetricValue::Undefined => s.serialize_str("undefined"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Recall, precision, F1 and accuracy of a confusion tally.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PooledScores {
    pub recall: MetricValue,
    pub precision: MetricValue,
    pub f1: MetricValue,
    pub accuracy: MetricValue,
}

pub fn pooled_scores(c: &ConfusionCounts) -> PooledScores {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let recall = MetricValue::ratio(tp, tp + fn_);
    let precision = MetricValue::ratio(tp, tp + fp);
    let f1 = match (recall, precision) {
        (MetricValue::Defined(r), MetricValue::Defined(p)) => {
            if r + p > 0.0 {
                MetricValue::Defined(2.0 * p * r / (p + r))
            } else {
                MetricValue::Undefined
            }
        }
        _ => MetricValue::Undefined,
    };
    PooledScores {
        recall,
        precision,
        f1,
        accuracy: MetricValue::ratio(tp, tp + fp + fn_),
    }
}

/// Detections of one class ranked by descending score, with running
/// precision and recall.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedDetectionList {
    pub scores: Vec<f64>,
    pub is_tp: Vec<bool>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub num_annotations: u64,
}

impl RankedDetectionList {
    /// Rank `(score, is_tp)` outcomes. Equal scores keep their input order.
    pub fn new(mut outcomes: Vec<(f64, bool)>, num_annotations: u64) -> Self {
        outcomes.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut precision = Vec::with_capacity(outcomes.len());
        let mut recall = Vec::with_capacity(outcomes.len());
        let mut tp = 0u64;
        for (i, &(_, hit)) in outcomes.iter().enumerate() {
            tp += u64::from(hit);
            precision.push(tp as f64 / (i + 1) as f64);
            recall.push(if num_annotations > 0 {
                (tp as f64 / num_annotations as f64).min(1.0)
            } else {
                0.0
            });
        }
        Self {
            scores: outcomes.iter().map(|o| o.0).collect(),
            is_tp: outcomes.iter().map(|o| o.1).collect(),
            precision,
            recall,
            num_annotations,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// `sum_i Precision(i) * Recall(i) / annotations` over the ranked list.
pub fn average_precision(list: &RankedDetectionList) -> Result<f64> {
    if list.num_annotations == 0 {
        return Err(Error::UndefinedAp);
    }
    let sum: f64 = list.precision.iter().zip(&list.recall).map(|(p, r)| p * r).sum();
    Ok(sum / list.num_annotations as f64)
}

/// Unweighted mean of per-class APs.
pub fn mean_average_precision(per_class: &[f64]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::EmptyApList);
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Matching result for one class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMatch {
    pub counts: ConfusionCounts,
    pub ranked: RankedDetectionList,
}

type Tally = (Vec<(f64, bool)>, ConfusionCounts, u64);

/// Greedy IoU matching of detections against ground-truth boxes, frame by
/// frame and class by class. Higher-scoring detections pick first and take
/// the unmatched ground truth of highest IoU, provided IoU > `iou_threshold`.
pub fn match_detections(
    dets: &[FrameDetections],
    gts: &[FrameDetections],
    iou_threshold: f64,
) -> Result<BTreeMap<ClassLabel, ClassMatch>> {
    if dets.len() != gts.len() {
        let position = dets.len().min(gts.len());
        return Err(Error::FrameMismatch {
            position,
            detections: dets.get(position).map_or(u64::MAX, |f| f.frame_index),
            truth: gts.get(position).map_or(u64::MAX, |f| f.frame_index),
        });
    }
    // per class: (score, hit) outcomes, counts, annotations
    let mut outcomes: BTreeMap<ClassLabel, Tally> =
        ClassLabel::ALL.iter().map(|&c| (c, Default::default())).collect();

    for (position, (df, gf)) in dets.iter().zip(gts).enumerate() {
        if df.frame_index != gf.frame_index {
            return Err(Error::FrameMismatch {
                position,
                detections: df.frame_index,
                truth: gf.frame_index,
            });
        }
        for class in ClassLabel::ALL {
            let mut ds: Vec<_> = df.detections.iter().filter(|d| d.class == class).collect();
            ds.sort_by(|a, b| b.score().total_cmp(&a.score()));
            let gs: Vec<_> = gf.detections.iter().filter(|g| g.class == class).collect();
            let mut taken = vec![false; gs.len()];
            let entry = outcomes.get_mut(&class).expect("all classes present");
            entry.2 += gs.len() as u64;
            for d in ds {
                let mut best: Option<(f64, usize)> = None;
                for (gi, g) in gs.iter().enumerate() {
                    if taken[gi] {
                        continue;
                    }
                    let iou = d.bbox.iou(&g.bbox);
                    if iou > iou_threshold && best.is_none_or(|(b, _)| iou > b) {
                        best = Some((iou, gi));
                    }
                }
                let hit = if let Some((_, gi)) = best {
                    taken[gi] = true;
                    entry.1.tp += 1;
                    true
                } else {
                    entry.1.fp += 1;
                    false
                };
                entry.0.push((d.score(), hit));
            }
            entry.1.fn_ += taken.iter().filter(|t| !**t).count() as u64;
        }
    }

    Ok(outcomes
        .into_iter()
        .map(|(class, (outs, counts, ann))| {
            (
                class,
                ClassMatch {
                    counts,
                    ranked: RankedDetectionList::new(outs, ann),
                },
            )
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub ap: MetricValue,
    pub counts: ConfusionCounts,
    pub scores: PooledScores,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub iou_threshold: f64,
    pub per_class: BTreeMap<ClassLabel, ClassMetrics>,
    /// Mean AP over the classes that have annotations.
    pub map: MetricValue,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub pooled: PooledScores,
}

pub fn evaluate_detections(dets: &[FrameDetections], gts: &[FrameDetections], iou_threshold: f64) -> Result<DetectionMetrics> {
    let matched = match_detections(dets, gts, iou_threshold)?;
    let mut total = ConfusionCounts::default();
    let mut aps = Vec::new();
    let mut per_class = BTreeMap::new();
    for (class, m) in matched {
        total += m.counts;
        let ap = match average_precision(&m.ranked) {
            Ok(v) => {
                aps.push(v);
                MetricValue::Defined(v)
            }
            Err(Error::UndefinedAp) => MetricValue::Undefined,
            Err(e) => return Err(e),
        };
        per_class.insert(
            class,
            ClassMetrics {
                ap,
                counts: m.counts,
                scores: pooled_scores(&m.counts),
            },
        );
    }
    let map = mean_average_precision(&aps).map_or(MetricValue::Undefined, MetricValue::Defined);
    Ok(DetectionMetrics {
        iou_threshold,
        per_class,
        map,
        counts: total,
        pooled: pooled_scores(&total),
    })
}

/// Per-class object counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ClassCounts {
    pub open: u64,
    pub closed: u64,
}

impl ClassCounts {
    pub fn get(&self, class: ClassLabel) -> u64 {
        match class {
            ClassLabel::OpenMouth => self.open,
            ClassLabel::ClosedMouth => self.closed,
        }
    }

    pub fn total(&self) -> u64 {
        self.open + self.closed
    }
}

impl From<&CountReport> for ClassCounts {
    fn from(r: &CountReport) -> Self {
        Self {
            open: r.open_count,
            closed: r.closed_count,
        }
    }
}

impl From<&GroundTruth> for ClassCounts {
    fn from(t: &GroundTruth) -> Self {
        Self {
            open: t.open,
            closed: t.closed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountingAccuracy {
    pub mode: &'static str,
    pub counts: ConfusionCounts,
    pub accuracy: MetricValue,
}

fn counting_result(mode: &'static str, counts: ConfusionCounts) -> CountingAccuracy {
    CountingAccuracy {
        mode,
        accuracy: pooled_scores(&counts).accuracy,
        counts,
    }
}

/// Count-clamping accuracy: per class `tp = min(counted, truth)`, missing
/// objects are FN and surplus ones FP.
pub fn counting_accuracy(counted: &ClassCounts, truth: &ClassCounts) -> CountingAccuracy {
    let mut c = ConfusionCounts::default();
    for class in ClassLabel::ALL {
        let (n, t) = (counted.get(class), truth.get(class));
        c.tp += n.min(t);
        c.fn_ += t.saturating_sub(n);
        c.fp += n.saturating_sub(t);
    }
    counting_result("clamped", c)
}

/// Accuracy from a tally of correctly counted objects per class plus the
/// number of extra (spurious or misclassified) counts.
pub fn counting_accuracy_from_tally(correct: &ClassCounts, extra: u64, truth: &ClassCounts) -> CountingAccuracy {
    let tp = correct.total();
    counting_result(
        "tally",
        ConfusionCounts {
            tp,
            fp: extra,
            fn_: truth.total().saturating_sub(tp),
        },
    )
}

/// Identity-aware accuracy against simulator ground truth.
///
/// Each track member votes for the truth object whose box at that frame has
/// the nearest center within `max_dist`; a track belongs to its majority
/// object. An object's best-supported track is a TP if its class is right.
/// Every other track is FP, and objects without a correct track are FN.
pub fn counting_accuracy_matched<'a>(
    tracks: impl IntoIterator<Item = &'a Track>,
    truth: &GroundTruth,
    max_dist: f64,
) -> CountingAccuracy {
    // claims[object] = (votes, track id, track class)
    let mut claims: BTreeMap<usize, Vec<(usize, u64, ClassLabel)>> = BTreeMap::new();
    let mut c = ConfusionCounts::default();
    for track in tracks {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for m in track.members() {
            let mc = m.center();
            let nearest = truth
                .objects
                .iter()
                .enumerate()
                .filter_map(|(oi, o)| o.box_at(m.frame_index).map(|b| (b.center().distance(&mc), oi)))
                .filter(|(d, _)| *d <= max_dist)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((_, oi)) = nearest {
                *votes.entry(oi).or_default() += 1;
            }
        }
        let best = votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((oi, n)) => claims.entry(oi).or_default().push((n, track.id, track.class())),
            None => c.fp += 1,
        }
    }
    for (oi, obj) in truth.objects.iter().enumerate() {
        let Some(mut cs) = claims.remove(&oi) else {
            c.fn_ += 1;
            continue;
        };
        cs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        if cs[0].2 == obj.class {
            c.tp += 1;
        } else {
            c.fn_ += 1;
            c.fp += 1;
        }
        c.fp += cs.len() as u64 - 1;
    }
    counting_result("matched", c)
}
