use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point};

/// Shell class of a detected object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "open")]
    OpenMouth,
    #[serde(rename = "closed")]
    ClosedMouth,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::OpenMouth, ClassLabel::ClosedMouth];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::OpenMouth => "open",
            ClassLabel::ClosedMouth => "closed",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(ClassLabel::OpenMouth),
            "closed" => Ok(ClassLabel::ClosedMouth),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}

/// One detected object in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub frame_index: u64,
    pub bbox: BBox,
    pub class: ClassLabel,
    score: f64,
}

impl Detection {
    pub fn new(frame_index: u64, bbox: BBox, class: ClassLabel, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            frame_index,
            bbox,
            class,
            score,
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    #[inline]
    pub fn center(&self) -> Point {
        self.bbox.center()
    }

    /// Total order used for canonical frame layout: center y, center x,
    /// class, then the remaining fields so that the order is total.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        let (a, b) = (self.center(), other.center());
        a.y.total_cmp(&b.y)
            .then(a.x.total_cmp(&b.x))
            .then(self.class.cmp(&other.class))
            .then(self.bbox.x1().total_cmp(&other.bbox.x1()))
            .then(self.bbox.y1().total_cmp(&other.bbox.y1()))
            .then(self.bbox.x2().total_cmp(&other.bbox.x2()))
            .then(self.bbox.y2().total_cmp(&other.bbox.y2()))
            .then(self.score.total_cmp(&other.score))
    }
}

/// The detections reported for one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub detections: Vec<Detection>,
}

impl FrameDetections {
    pub fn new(frame_index: u64, detections: Vec<Detection>) -> Result<Self> {
        if let Some(d) = detections.iter().find(|d| d.frame_index != frame_index) {
            return Err(Error::Frame {
                frame: frame_index,
                field: "frame_index",
                message: format!("member detection belongs to frame {}", d.frame_index),
            });
        }
        Ok(Self {
            frame_index,
            detections,
        })
    }

    pub fn empty(frame_index: u64) -> Self {
        Self {
            frame_index,
            detections: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Sort detections into canonical order (see [`Detection::canonical_cmp`]).
    pub fn canonicalize(&mut self) {
        self.detections.sort_by(Detection::canonical_cmp);
    }

    /// Copy without the detections scoring below `min_score`.
    pub fn filtered(&self, min_score: f64) -> FrameDetections {
        FrameDetections {
            frame_index: self.frame_index,
            detections: self
                .detections
                .iter()
                .filter(|d| d.score >= min_score)
                .copied()
                .collect(),
        }
    }
}
