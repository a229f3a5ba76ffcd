//! Synthetic conveyor detection streams with exact ground truth.
//!
//! Objects enter at a fixed height near the top of the frame, one lane per
//! object, and move straight down at a constant per-object speed until their
//! center leaves the image. [`perturb`] then layers detector-style noise on
//! top: dropouts, center jitter, open objects showing their closed side, and
//! merged boxes for objects that touch.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::{ClassLabel, Detection, FrameDetections};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageGeometry, Point};

/// Belt speed in pixels per second used by [`Scenario::at_fps`].
pub const BELT_PX_PER_SECOND: f64 = 600.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: ImageGeometry,
    pub num_objects: usize,
    pub open_fraction: f64,
    /// Mean speed in px/frame; per-object speeds are uniform in `mean ± jitter`.
    pub speed_mean: f64,
    pub speed_jitter: f64,
    /// Frames between nominal arrivals, uniform in `[min, max]`.
    pub entry_spacing: (u32, u32),
    /// Lane x-centers; each object picks one uniformly.
    pub lanes: Vec<f64>,
    /// Center height of every object on its first frame.
    pub entry_y: f64,
    /// Nominal box width and height; each side varies by `± size_jitter` (relative).
    pub box_size: (f64, f64),
    pub size_jitter: f64,
    /// Minimum center distance between two objects within a frame and across
    /// consecutive frames. Arrivals are delayed until it holds.
    pub min_separation: f64,
    /// Delay arrivals that would land on a frame where another object leaves,
    /// so the per-frame detection count always grows on arrival frames.
    pub avoid_entry_exit_collisions: bool,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            geometry: ImageGeometry::default(),
            num_objects: 50,
            open_fraction: 0.7,
            speed_mean: 10.0,
            speed_jitter: 3.0,
            entry_spacing: (2, 8),
            lanes: (1..=7).map(|i| 100.0 * i as f64).collect(),
            entry_y: 25.0,
            box_size: (30.0, 40.0),
            size_jitter: 0.1,
            min_separation: 50.0,
            avoid_entry_exit_collisions: true,
            seed: 0,
        }
    }
}

impl Scenario {
    /// Speed preset for a camera recording at `fps` frames per second.
    pub fn at_fps(mut self, fps: f64) -> Self {
        self.speed_mean = BELT_PX_PER_SECOND / fps;
        self.speed_jitter = self.speed_mean * 0.3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.speed_mean.is_finite() && self.speed_jitter >= 0.0 && self.speed_mean - self.speed_jitter > 0.0) {
            return bad(format!(
                "speed must stay positive: mean {} jitter {}",
                self.speed_mean, self.speed_jitter
            ));
        }
        if !(0.0..=1.0).contains(&self.open_fraction) {
            return bad(format!("open_fraction {} outside [0, 1]", self.open_fraction));
        }
        if self.lanes.is_empty() || self.lanes.iter().any(|&x| !(0.0..=self.geometry.width()).contains(&x)) {
            return bad("lanes must be non-empty and inside the image width".into());
        }
        if self.entry_spacing.0 > self.entry_spacing.1 {
            return bad(format!("entry spacing {:?} has min > max", self.entry_spacing));
        }
        if !(self.entry_y >= 0.0 && self.entry_y < self.geometry.height()) {
            return bad(format!("entry_y {} outside the image", self.entry_y));
        }
        let (w, h) = self.box_size;
        if !(w > 0.0 && h > 0.0 && (0.0..1.0).contains(&self.size_jitter)) {
            return bad("box size must be positive and size_jitter in [0, 1)".into());
        }
        if self.min_separation.is_nan() || self.min_separation < 0.0 {
            return bad("min_separation must be non-negative".into());
        }
        Ok(())
    }
}

/// Detector-style noise applied by [`perturb`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// Probability that a detection is missed.
    pub dropout_prob: f64,
    /// Longest run of consecutive misses per object.
    pub max_consecutive_dropout: u32,
    /// Standard deviation of the Gaussian center offset, px.
    pub jitter_sigma: f64,
    /// Per-frame probability that an open object shows its open side.
    pub flip_open_visible_prob: f64,
    /// Objects whose centers are closer than this are reported as one box.
    pub merge_distance: f64,
    /// Ensure every open object is labeled open on at least one emitted frame
    /// with center y below this value.
    pub ensure_open_before_y: Option<f64>,
}

impl NoiseProfile {
    /// The identity profile: output equals input.
    pub fn none() -> Self {
        Self {
            dropout_prob: 0.0,
            max_consecutive_dropout: 0,
            jitter_sigma: 0.0,
            flip_open_visible_prob: 1.0,
            merge_distance: 0.0,
            ensure_open_before_y: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("dropout_prob", self.dropout_prob), ("flip_open_visible_prob", self.flip_open_visible_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite() && self.merge_distance >= 0.0) {
            return Err(Error::InvalidConfig("jitter_sigma and merge_distance must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub frame: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub id: u64,
    pub class: ClassLabel,
    pub entry_frame: u64,
    /// Last frame the object is visible in.
    pub exit_frame: u64,
    pub trajectory: Vec<TruthPoint>,
}

impl TruthObject {
    /// Box at `frame`, if visible.
    pub fn box_at(&self, frame: u64) -> Option<&BBox> {
        let k = frame.checked_sub(self.entry_frame)? as usize;
        self.trajectory.get(k).map(|p| &p.bbox)
    }

    fn center_at(&self, frame: u64) -> Option<Point> {
        self.box_at(frame).map(BBox::center)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: u64,
    pub open: u64,
    pub closed: u64,
    pub objects: Vec<TruthObject>,
}

impl GroundTruth {
    pub fn total(&self) -> u64 {
        self.open + self.closed
    }

    /// Totals recomputed from the per-object records.
    pub fn is_consistent(&self) -> bool {
        let open = self.objects.iter().filter(|o| o.class == ClassLabel::OpenMouth).count() as u64;
        open == self.open && self.objects.len() as u64 == self.total()
    }
}

/// A generated stream together with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulated {
    pub geometry: ImageGeometry,
    pub stream: Vec<FrameDetections>,
    pub truth: GroundTruth,
}

fn uniform(rng: &mut ChaCha8Rng, center: f64, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(center - half_width..=center + half_width)
    } else {
        center
    }
}

fn trajectory(s: &Scenario, entry: u64, x: f64, speed: f64, w: f64, h: f64) -> Vec<TruthPoint> {
    let mut out = Vec::new();
    for k in 0u64.. {
        let cy = s.entry_y + speed * k as f64;
        if cy >= s.geometry.height() {
            break;
        }
        match BBox::centered_clipped(x, cy, w, h, &s.geometry) {
            Some(bbox) => out.push(TruthPoint { frame: entry + k, bbox }),
            None => break,
        }
    }
    out
}

fn conflicts(s: &Scenario, cand: &TruthObject, placed: &[TruthObject]) -> bool {
    let departure = cand.exit_frame + 1;
    for other in placed {
        if other.exit_frame + 1 < cand.entry_frame || departure < other.entry_frame {
            continue;
        }
        if s.avoid_entry_exit_collisions
            && (cand.entry_frame == other.exit_frame + 1 || departure == other.entry_frame)
        {
            return true;
        }
        if s.min_separation > 0.0 {
            let lo = cand.entry_frame.max(other.entry_frame).saturating_sub(1);
            let hi = cand.exit_frame.min(other.exit_frame) + 1;
            for t in lo..=hi {
                let pairs = [
                    (cand.center_at(t), other.center_at(t)),
                    (cand.center_at(t), t.checked_sub(1).and_then(|u| other.center_at(u))),
                    (t.checked_sub(1).and_then(|u| cand.center_at(u)), other.center_at(t)),
                ];
                for (a, b) in pairs {
                    if let (Some(a), Some(b)) = (a, b) {
                        if a.distance(&b) <= s.min_separation {
                            return true;
                        }
                    }
                }
            }
        }
    }
    false
}

/// Generate a noise-free stream and its ground truth. Deterministic in `seed`.
pub fn generate(scenario: &Scenario) -> Result<Simulated> {
    scenario.validate()?;
    let s = scenario;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut placed: Vec<TruthObject> = Vec::with_capacity(s.num_objects);
    let mut nominal = 0u64;
    for id in 0..s.num_objects as u64 {
        if id > 0 {
            nominal += u64::from(rng.random_range(s.entry_spacing.0..=s.entry_spacing.1));
        }
        let class = if rng.random_bool(s.open_fraction) {
            ClassLabel::OpenMouth
        } else {
            ClassLabel::ClosedMouth
        };
        let speed = uniform(&mut rng, s.speed_mean, s.speed_jitter);
        let w = s.box_size.0 * uniform(&mut rng, 1.0, s.size_jitter);
        let h = s.box_size.1 * uniform(&mut rng, 1.0, s.size_jitter);
        let x = s.lanes[rng.random_range(0..s.lanes.len())];

        let mut entry = nominal;
        let obj = loop {
            let traj = trajectory(s, entry, x, speed, w, h);
            if traj.is_empty() {
                return Err(Error::InvalidConfig("objects are never visible in this geometry".into()));
            }
            let cand = TruthObject {
                id,
                class,
                entry_frame: entry,
                exit_frame: entry + traj.len() as u64 - 1,
                trajectory: traj,
            };
            if !conflicts(s, &cand, &placed) {
                break cand;
            }
            entry += 1;
        };
        placed.push(obj);
    }

    // scores are drawn after placement so they do not disturb the layout
    let frames = placed.iter().map(|o| o.exit_frame + 1).max().unwrap_or(0);
    let mut stream: Vec<FrameDetections> = (0..frames).map(FrameDetections::empty).collect();
    for o in &placed {
        for p in &o.trajectory {
            let score = rng.random_range(0.7..1.0);
            stream[p.frame as usize]
                .detections
                .push(Detection::new(p.frame, p.bbox, o.class, score)?);
        }
    }
    for f in &mut stream {
        f.canonicalize();
    }

    let open = placed.iter().filter(|o| o.class == ClassLabel::OpenMouth).count() as u64;
    let truth = GroundTruth {
        frames,
        open,
        closed: placed.len() as u64 - open,
        objects: placed,
    };
    Ok(Simulated {
        geometry: s.geometry,
        stream,
        truth,
    })
}

/// Per-object noise decisions, indexed by trajectory position.
struct ObjectPlan {
    dropped: Vec<bool>,
    open_visible: Vec<bool>,
}

fn plan_object(o: &TruthObject, noise: &NoiseProfile, rng: &mut ChaCha8Rng) -> ObjectPlan {
    let n = o.trajectory.len();
    let mut dropped = vec![false; n];
    let mut run = 0u32;
    for d in dropped.iter_mut() {
        if noise.dropout_prob > 0.0 && run < noise.max_consecutive_dropout && rng.random_bool(noise.dropout_prob) {
            *d = true;
            run += 1;
        } else {
            run = 0;
        }
    }

    let mut open_visible = vec![true; n];
    if o.class == ClassLabel::OpenMouth && noise.flip_open_visible_prob < 1.0 {
        let eligible: Vec<usize> = match noise.ensure_open_before_y {
            Some(limit) => (0..n)
                .filter(|&k| !dropped[k] && o.trajectory[k].bbox.center().y < limit)
                .collect(),
            None => Vec::new(),
        };
        const MAX_RETRIES: usize = 64;
        for attempt in 0.. {
            for v in open_visible.iter_mut() {
                *v = rng.random_bool(noise.flip_open_visible_prob);
            }
            if noise.ensure_open_before_y.is_none() || eligible.iter().any(|&k| open_visible[k]) {
                break;
            }
            if attempt + 1 == MAX_RETRIES {
                if let Some(&k) = eligible.first() {
                    open_visible[k] = true;
                }
                break;
            }
        }
    }
    ObjectPlan { dropped, open_visible }
}

/// Merge detections closer than `dist`, closest pair first. The merged box is
/// the union, labeled with the class of the upper object.
fn merge_close(dets: &mut Vec<Detection>, dist: f64) -> Result<()> {
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..dets.len() {
            for j in i + 1..dets.len() {
                let d = dets[i].center().distance(&dets[j].center());
                if d < dist && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else {
            return Ok(());
        };
        let (a, b) = (dets[i], dets[j]);
        let upper = if a.center().y <= b.center().y { a } else { b };
        let merged = Detection::new(a.frame_index, a.bbox.union(&b.bbox), upper.class, a.score().max(b.score()))?;
        dets.swap_remove(j);
        dets[i] = merged;
    }
}

fn box_key(frame: u64, b: &BBox) -> (u64, [u64; 4]) {
    (frame, [b.x1().to_bits(), b.y1().to_bits(), b.x2().to_bits(), b.y2().to_bits()])
}

/// Apply `noise` to a generated stream. Detections are attributed to truth
/// objects by their exact box; anything unattributed passes through.
/// Ground truth is never modified.
pub fn perturb(
    stream: &[FrameDetections],
    truth: &GroundTruth,
    geometry: &ImageGeometry,
    noise: &NoiseProfile,
    seed: u64,
) -> Result<Vec<FrameDetections>> {
    noise.validate()?;
    let mut plan_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed);
    jitter_rng.set_stream(1);

    let plans: Vec<ObjectPlan> = truth.objects.iter().map(|o| plan_object(o, noise, &mut plan_rng)).collect();
    let mut owner: HashMap<(u64, [u64; 4]), (usize, usize)> = HashMap::new();
    for (oi, o) in truth.objects.iter().enumerate() {
        for (k, p) in o.trajectory.iter().enumerate() {
            owner.insert(box_key(p.frame, &p.bbox), (oi, k));
        }
    }
    let normal = (noise.jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, noise.jitter_sigma).expect("sigma validated"));

    let mut out = Vec::with_capacity(stream.len());
    for frame in stream {
        let mut dets = Vec::with_capacity(frame.len());
        for det in &frame.detections {
            let Some(&(oi, k)) = owner.get(&box_key(frame.frame_index, &det.bbox)) else {
                dets.push(*det);
                continue;
            };
            let plan = &plans[oi];
            if plan.dropped[k] {
                continue;
            }
            let class = if truth.objects[oi].class == ClassLabel::OpenMouth && !plan.open_visible[k] {
                ClassLabel::ClosedMouth
            } else {
                det.class
            };
            let bbox = match &normal {
                Some(n) => {
                    let (dx, dy) = (n.sample(&mut jitter_rng), n.sample(&mut jitter_rng));
                    let c = det.center();
                    let (cx, cy) = ((c.x + dx).max(0.0), (c.y + dy).max(0.0));
                    match BBox::centered_clipped(cx, cy, det.bbox.width(), det.bbox.height(), geometry) {
                        Some(b) => b,
                        None => continue,
                    }
                }
                None => det.bbox,
            };
            dets.push(Detection::new(frame.frame_index, bbox, class, det.score())?);
        }
        if noise.merge_distance > 0.0 {
            merge_close(&mut dets, noise.merge_distance)?;
        }
        let mut f = FrameDetections::new(frame.frame_index, dets)?;
        f.canonicalize();
        out.push(f);
    }
    Ok(out)
}
