//! Streaming track-and-count state machine for a top-to-bottom conveyor.
//!
//! Counting runs in two passes over a video's detections:
//!
//! 1. Every consecutive frame pair is matched by center distance and the
//!    unmatched detections near the top of the frame are averaged into the
//!    *initial threshold*, the lower edge of the entering area.
//! 2. The pairs are replayed frame by frame. Matched detections extend the
//!    track of their predecessor. Unmatched detections either open a new
//!    track (entering area, and the frame holds more detections than the
//!    previous one) or go to the lost list, where they are retried against
//!    the frames 2 to `lost_lookback` back. Nothing in the exiting area
//!    (`y >= end_threshold`) is ever added to a track.
//!
//! A track counts as open-mouth if any of its detections was labeled open.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::assignment::{assign, nearest_within, AssignmentSet};
use crate::detection::{ClassLabel, Detection, FrameDetections};
use crate::error::{Error, Result};
use crate::exec::{map_range, ExecMode};
use crate::geometry::ImageGeometry;

/// Reference frame height the default thresholds were chosen for.
pub const REFERENCE_HEIGHT: f64 = 600.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterConfig {
    pub geometry: ImageGeometry,
    /// Largest center distance (px) accepted between consecutive frames.
    pub assign_dist: f64,
    /// Unmatched detections above this y are initial-threshold candidates.
    pub entering_candidate_cap: f64,
    /// Start of the exiting area.
    pub end_threshold: f64,
    /// How many frames back lost detections are retried.
    pub lost_lookback: u32,
    /// Detections scoring below this are dropped before counting.
    pub min_score: f64,
}

impl CounterConfig {
    /// Defaults for a frame of the given size: 20 px assignment cap, and the
    /// 200 / 500 px thresholds of a 600 px frame scaled as 1/3 and 5/6 of
    /// the height.
    pub fn for_geometry(geometry: ImageGeometry) -> Self {
        let h = geometry.height();
        Self {
            geometry,
            assign_dist: 20.0,
            entering_candidate_cap: h / 3.0,
            end_threshold: 5.0 * h / 6.0,
            lost_lookback: 6,
            min_score: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let h = self.geometry.height();
        if !(self.assign_dist.is_finite() && self.assign_dist > 0.0) {
            return bad(format!("assign_dist must be positive, got {}", self.assign_dist));
        }
        if !(0.0 < self.entering_candidate_cap
            && self.entering_candidate_cap < self.end_threshold
            && self.end_threshold < h)
        {
            return bad(format!(
                "need 0 < entering_candidate_cap ({}) < end_threshold ({}) < height ({h})",
                self.entering_candidate_cap, self.end_threshold
            ));
        }
        if self.lost_lookback < 2 {
            return bad(format!("lost_lookback must be at least 2, got {}", self.lost_lookback));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return bad(format!("min_score must be in [0, 1], got {}", self.min_score));
        }
        Ok(())
    }
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self::for_geometry(ImageGeometry::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Entering,
    Middle,
    Exiting,
}

/// Zone of a center height given the two thresholds.
pub fn zone_of_y(y: f64, initial_threshold: f64, end_threshold: f64) -> Zone {
    if y >= end_threshold {
        Zone::Exiting
    } else if y <= initial_threshold {
        Zone::Entering
    } else {
        Zone::Middle
    }
}

/// Zone of a detection's center for the given state and configuration.
pub fn zone_of(det: &Detection, state: &CounterState, config: &CounterConfig) -> Zone {
    zone_of_y(det.center().y, state.initial_threshold, config.end_threshold)
}

/// Outcome of the initial-threshold calibration pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub initial_threshold: f64,
    pub candidates: usize,
    /// No candidates were found; the threshold fell back to the candidate cap.
    pub empty: bool,
}

/// Greedy assignments for every frame against its predecessor. Entry 0 marks
/// every detection of the first frame as unassigned.
pub fn pair_assignments(stream: &[FrameDetections], assign_dist: f64, mode: ExecMode) -> Vec<AssignmentSet> {
    map_range(mode, stream.len(), |i| {
        if i == 0 {
            AssignmentSet::all_new(stream[0].len())
        } else {
            assign(&stream[i - 1].detections, &stream[i].detections, assign_dist)
        }
    })
}

/// Mean center height of the unmatched detections above the candidate cap,
/// over every consecutive frame pair.
pub fn calibrate_from_assignments(
    stream: &[FrameDetections],
    assignments: &[AssignmentSet],
    config: &CounterConfig,
) -> Calibration {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (frame, set) in stream.iter().zip(assignments).skip(1) {
        for &j in &set.unassigned_curr {
            let y = frame.detections[j].center().y;
            if y < config.entering_candidate_cap {
                sum += y;
                n += 1;
            }
        }
    }
    if n == 0 {
        Calibration {
            initial_threshold: config.entering_candidate_cap,
            candidates: 0,
            empty: true,
        }
    } else {
        Calibration {
            initial_threshold: sum / n as f64,
            candidates: n,
            empty: false,
        }
    }
}

pub fn calibrate_initial_threshold(stream: &[FrameDetections], config: &CounterConfig) -> Calibration {
    let sets = pair_assignments(stream, config.assign_dist, ExecMode::Sequential);
    calibrate_from_assignments(stream, &sets, config)
}

/// One physical object followed across frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    members: Vec<Detection>,
    latched_open: bool,
}

impl Track {
    fn start(id: u64, first: Detection) -> Self {
        Self {
            id,
            latched_open: first.class == ClassLabel::OpenMouth,
            members: vec![first],
        }
    }

    fn push(&mut self, det: Detection) -> Result<()> {
        let last = self.last_frame();
        if det.frame_index <= last {
            return Err(Error::Invariant(format!(
                "track {} would receive frame {} after frame {last}",
                self.id, det.frame_index
            )));
        }
        self.latched_open |= det.class == ClassLabel::OpenMouth;
        self.members.push(det);
        Ok(())
    }

    pub fn members(&self) -> &[Detection] {
        &self.members
    }

    pub fn latched_open(&self) -> bool {
        self.latched_open
    }

    pub fn class(&self) -> ClassLabel {
        if self.latched_open {
            ClassLabel::OpenMouth
        } else {
            ClassLabel::ClosedMouth
        }
    }

    pub fn first_frame(&self) -> u64 {
        self.members[0].frame_index
    }

    pub fn last_frame(&self) -> u64 {
        self.members[self.members.len() - 1].frame_index
    }

    pub fn summary(&self) -> TrackSummary {
        TrackSummary {
            id: self.id,
            first_frame: self.first_frame(),
            last_frame: self.last_frame(),
            detections: self.members.len(),
            class: self.class(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackSummary {
    pub id: u64,
    pub first_frame: u64,
    pub last_frame: u64,
    pub detections: usize,
    pub class: ClassLabel,
}

/// A processed frame kept for lost-detection recovery.
#[derive(Clone, Debug)]
struct HistoryFrame {
    frame: FrameDetections,
    track_of: Vec<Option<u64>>,
    /// Matched to the following frame, or consumed by a recovery.
    linked_forward: Vec<bool>,
}

/// Event counters, mostly for diagnostics and tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CounterStats {
    pub frames: u64,
    pub extended: u64,
    pub started: u64,
    pub rejected_exiting: u64,
    /// Matched to a previous detection that belongs to no track.
    pub orphan_links: u64,
    pub lost_pushed: u64,
    pub lost_recovered: u64,
    pub lost_rejected: u64,
    /// Largest number of history frames held at any point.
    pub peak_history: usize,
}

/// Per-stream streaming state.
#[derive(Clone, Debug)]
pub struct CounterState {
    pub initial_threshold: f64,
    lookback: usize,
    tracks: BTreeMap<u64, Track>,
    history: VecDeque<HistoryFrame>,
    lost: Vec<(Detection, u32)>,
    next_track_id: u64,
    stats: CounterStats,
}

impl CounterState {
    pub fn new(initial_threshold: f64, config: &CounterConfig) -> Self {
        Self {
            initial_threshold,
            lookback: config.lost_lookback as usize,
            tracks: BTreeMap::new(),
            history: VecDeque::with_capacity(config.lost_lookback as usize + 1),
            lost: Vec::new(),
            next_track_id: 0,
            stats: CounterStats::default(),
        }
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    pub fn stats(&self) -> &CounterStats {
        &self.stats
    }

    /// Number of past frames currently retained.
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Lost detections of the last frame that could not be recovered, with
    /// the largest gap (in frames) that was tried.
    pub fn lost(&self) -> &[(Detection, u32)] {
        &self.lost
    }

    /// Advance by one frame.
    ///
    /// `assignment` must match the most recently processed frame (or an empty
    /// frame if there is none) against `curr`; see [`pair_assignments`].
    pub fn process_frame(
        &mut self,
        curr: &FrameDetections,
        assignment: &AssignmentSet,
        config: &CounterConfig,
    ) -> Result<()> {
        let end = config.end_threshold;
        let initial = self.initial_threshold;
        let zone = |d: &Detection| zone_of_y(d.center().y, initial, end);
        let n = curr.len();
        let prev_len = self.history.back().map_or(0, |h| h.frame.len());
        check_assignment(assignment, prev_len, n)?;
        if let Some(prev) = self.history.back() {
            if prev.frame.frame_index >= curr.frame_index {
                return Err(Error::FrameOrder {
                    frame: curr.frame_index,
                    previous: prev.frame.frame_index,
                });
            }
        }

        let mut track_of = vec![None; n];

        // matched pairs extend the predecessor's track
        for &(p, c) in &assignment.pairs {
            let prev = self.history.back_mut().expect("pairs imply a previous frame");
            prev.linked_forward[p] = true;
            let (pd, cd) = (&prev.frame.detections[p], &curr.detections[c]);
            if zone(pd) == Zone::Exiting || zone(cd) == Zone::Exiting {
                self.stats.rejected_exiting += 1;
                continue;
            }
            match prev.track_of[p] {
                Some(id) => {
                    self.tracks.get_mut(&id).expect("history references live tracks").push(*cd)?;
                    track_of[c] = Some(id);
                    self.stats.extended += 1;
                }
                None => {
                    log::trace!("frame {}: detection {c} follows an untracked detection", curr.frame_index);
                    self.stats.orphan_links += 1;
                }
            }
        }

        // unmatched detections: reject, start a track, or try recovery
        let grew = n > prev_len;
        let mut lost = Vec::new();
        for &c in &assignment.unassigned_curr {
            let det = curr.detections[c];
            match zone(&det) {
                Zone::Exiting => self.stats.rejected_exiting += 1,
                Zone::Entering if grew => {
                    let id = self.next_track_id;
                    self.next_track_id += 1;
                    self.tracks.insert(id, Track::start(id, det));
                    track_of[c] = Some(id);
                    self.stats.started += 1;
                }
                _ => lost.push(c),
            }
        }

        self.lost.clear();
        self.stats.lost_pushed += lost.len() as u64;
        for c in lost {
            let det = curr.detections[c];
            match self.recover(&det, config)? {
                Some(id) => {
                    track_of[c] = Some(id);
                    self.stats.lost_recovered += 1;
                }
                None => {
                    self.lost.push((det, config.lost_lookback));
                    self.stats.lost_rejected += 1;
                }
            }
        }

        self.history.push_back(HistoryFrame {
            frame: curr.clone(),
            track_of,
            linked_forward: vec![false; n],
        });
        while self.history.len() > self.lookback {
            self.history.pop_front();
        }
        self.stats.peak_history = self.stats.peak_history.max(self.history.len());
        self.stats.frames += 1;
        Ok(())
    }

    /// Retry `det` against the frames 2..=lookback before it, nearest gap
    /// first, using the gap-scaled distance cap. Returns the extended track.
    fn recover(&mut self, det: &Detection, config: &CounterConfig) -> Result<Option<u64>> {
        for gap in 2..=config.lost_lookback {
            let Some(target) = det.frame_index.checked_sub(u64::from(gap)) else {
                break;
            };
            let Some(hist) = self.history.iter_mut().rev().find(|h| h.frame.frame_index == target) else {
                continue;
            };
            let cap = f64::from(gap) * config.assign_dist;
            let linked = &hist.linked_forward;
            let Some(i) = nearest_within(&hist.frame.detections, det, cap, |i| !linked[i]) else {
                continue;
            };
            hist.linked_forward[i] = true;
            return match hist.track_of[i] {
                Some(id) => {
                    self.tracks.get_mut(&id).expect("history references live tracks").push(*det)?;
                    Ok(Some(id))
                }
                None => Ok(None),
            };
        }
        Ok(None)
    }

    pub fn finalize(&self) -> CountReport {
        let tracks: Vec<_> = self.tracks.values().map(Track::summary).collect();
        let open_count = tracks.iter().filter(|t| t.class == ClassLabel::OpenMouth).count() as u64;
        let total_count = tracks.len() as u64;
        CountReport {
            open_count,
            closed_count: total_count - open_count,
            total_count,
            tracks,
            stats: self.stats,
            calibration: None,
            config: None,
        }
    }
}

fn check_assignment(set: &AssignmentSet, prev_len: usize, curr_len: usize) -> Result<()> {
    let mut seen_p = vec![false; prev_len];
    let mut seen_c = vec![false; curr_len];
    for &(p, c) in &set.pairs {
        if p >= prev_len || c >= curr_len || seen_p[p] || seen_c[c] {
            return Err(Error::Invariant(format!(
                "assignment pair ({p}, {c}) is out of range or repeated for lists of {prev_len} and {curr_len}"
            )));
        }
        seen_p[p] = true;
        seen_c[c] = true;
    }
    for &c in &set.unassigned_curr {
        if c >= curr_len || seen_c[c] {
            return Err(Error::Invariant(format!("unassigned index {c} is out of range or also paired")));
        }
        seen_c[c] = true;
    }
    if seen_c.iter().any(|s| !s) {
        return Err(Error::Invariant("assignment does not cover every current detection".into()));
    }
    Ok(())
}

/// Per-class counts for one video.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountReport {
    pub open_count: u64,
    pub closed_count: u64,
    pub total_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<CounterConfig>,
    pub stats: CounterStats,
    pub tracks: Vec<TrackSummary>,
}

pub fn finalize(state: &CounterState) -> CountReport {
    state.finalize()
}

/// Full counter run: final state plus its report.
#[derive(Clone, Debug)]
pub struct CountRun {
    pub report: CountReport,
    pub state: CounterState,
}

/// Count a whole video with the default execution mode.
pub fn count_video(stream: &[FrameDetections], config: &CounterConfig) -> Result<CountReport> {
    Ok(run_counter(stream, config, ExecMode::default())?.report)
}

/// Two-pass counting: filter by score, calibrate on cached pair assignments,
/// replay every frame, finalize. The assignment pass runs under `mode`; the
/// replay is inherently sequential.
pub fn run_counter(stream: &[FrameDetections], config: &CounterConfig, mode: ExecMode) -> Result<CountRun> {
    config.validate()?;
    for w in stream.windows(2) {
        if w[1].frame_index <= w[0].frame_index {
            return Err(Error::FrameOrder {
                frame: w[1].frame_index,
                previous: w[0].frame_index,
            });
        }
    }
    let filtered: Vec<FrameDetections> = stream.iter().map(|f| f.filtered(config.min_score)).collect();
    let sets = pair_assignments(&filtered, config.assign_dist, mode);
    let calibration = calibrate_from_assignments(&filtered, &sets, config);

    let mut state = CounterState::new(calibration.initial_threshold, config);
    for (frame, set) in filtered.iter().zip(&sets) {
        state.process_frame(frame, set, config)?;
    }
    let mut report = state.finalize();
    report.calibration = Some(calibration);
    report.config = Some(*config);
    Ok(CountRun { report, state })
}
