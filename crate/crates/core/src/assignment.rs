//! Class-blind association of detections between two frames by center distance.

use serde::Serialize;

use crate::detection::Detection;
use crate::error::{Error, Result};

/// Result of matching a previous detection list against a current one.
///
/// `pairs` holds `(previous index, current index)` in the order they were
/// chosen (closest first). Together with the two unassigned lists it
/// partitions both inputs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AssignmentSet {
    pub pairs: Vec<(usize, usize)>,
    pub unassigned_prev: Vec<usize>,
    pub unassigned_curr: Vec<usize>,
}

impl AssignmentSet {
    /// Everything in `curr` unassigned; used for a frame without predecessor.
    pub fn all_new(curr_len: usize) -> Self {
        Self {
            pairs: Vec::new(),
            unassigned_prev: Vec::new(),
            unassigned_curr: (0..curr_len).collect(),
        }
    }

    /// For each current index, the matched previous index.
    pub fn prev_of_curr(&self, curr_len: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; curr_len];
        for &(p, c) in &self.pairs {
            out[c] = Some(p);
        }
        out
    }

    /// For each previous index, whether it was matched forward.
    pub fn prev_matched(&self, prev_len: usize) -> Vec<bool> {
        let mut out = vec![false; prev_len];
        for &(p, _) in &self.pairs {
            out[p] = true;
        }
        out
    }
}

/// Greedy closest-pair-first matching of `prev` against `curr`.
///
/// Repeatedly takes the unmatched cross pair with the smallest center
/// distance not exceeding `max_dist` until none is left. Equal distances are
/// broken by the smaller previous index, then the smaller current index.
/// Class labels are ignored.
///
/// # Panics
///
/// If `max_dist` is not a positive number.
pub fn assign(prev: &[Detection], curr: &[Detection], max_dist: f64) -> AssignmentSet {
    assert!(max_dist > 0.0, "assignment cap must be positive, got {max_dist}");

    let curr_centers: Vec<_> = curr.iter().map(Detection::center).collect();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in prev.iter().enumerate() {
        let pc = p.center();
        for (j, cc) in curr_centers.iter().enumerate() {
            // cheap reject before the square root
            if (pc.y - cc.y).abs() > max_dist || (pc.x - cc.x).abs() > max_dist {
                continue;
            }
            let d = pc.distance(cc);
            if d <= max_dist {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut prev_used = vec![false; prev.len()];
    let mut curr_used = vec![false; curr.len()];
    let mut pairs = Vec::with_capacity(prev.len().min(curr.len()));
    for (_, i, j) in candidates {
        if prev_used[i] || curr_used[j] {
            continue;
        }
        prev_used[i] = true;
        curr_used[j] = true;
        pairs.push((i, j));
    }

    AssignmentSet {
        pairs,
        unassigned_prev: (0..prev.len()).filter(|&i| !prev_used[i]).collect(),
        unassigned_curr: (0..curr.len()).filter(|&j| !curr_used[j]).collect(),
    }
}

/// Closest detection in `history` whose center is within `cap` of `det`,
/// considering only indices accepted by `eligible`. Ties go to the smaller index.
pub fn nearest_within(
    history: &[Detection],
    det: &Detection,
    cap: f64,
    mut eligible: impl FnMut(usize) -> bool,
) -> Option<usize> {
    let c = det.center();
    let mut best: Option<(f64, usize)> = None;
    for (i, h) in history.iter().enumerate() {
        if !eligible(i) {
            continue;
        }
        let d = h.center().distance(&c);
        if d <= cap && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

/// Match `det` against a frame `gap` frames in the past, with the distance
/// cap scaled to `gap * base_dist` (constant conveyor speed).
pub fn assign_with_gap(
    history: &[Detection],
    det: &Detection,
    gap: u32,
    base_dist: f64,
) -> Result<Option<usize>> {
    if gap < 2 {
        return Err(Error::InvalidGap(gap));
    }
    Ok(nearest_within(history, det, f64::from(gap) * base_dist, |_| true))
}
