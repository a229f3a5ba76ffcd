//! Acceptance gate. Every criterion writes one `PASS`/`FAIL` line with the
//! measured value to stderr before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use conveyor_count::assignment::assign;
use conveyor_count::counter::{pair_assignments, CounterState};
use conveyor_count::io::{read_stream, write_stream, DetectionStream};
use conveyor_count::metrics::{
    average_precision, counting_accuracy, counting_accuracy_from_tally, counting_accuracy_matched,
    mean_average_precision, pooled_scores, ClassCounts, ConfusionCounts, RankedDetectionList,
};
use conveyor_count::simulator::Simulated;
use conveyor_count::{
    generate, perturb, run_counter, BBox, ClassLabel, CounterConfig, Detection, ExecMode, NoiseProfile, Scenario,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id} [{verdict}] {name}: {detail} ({elapsed:.2?})\n");
    // bypass the harness capture so passing criteria show up too
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Seed-swept scenarios with 20 to 200 objects.
fn swept_scenario(seed: u64) -> Scenario {
    Scenario {
        num_objects: 20 + (seed as usize % 100) * 180 / 99,
        seed,
        ..Scenario::default()
    }
}

fn simulate(scenario: &Scenario, noise: &NoiseProfile) -> Simulated {
    let mut sim = generate(scenario).unwrap();
    sim.stream = perturb(&sim.stream, &sim.truth, &sim.geometry, noise, scenario.seed).unwrap();
    sim
}

#[test]
fn criterion_1_counting_accuracy_from_tally() {
    let t = Instant::now();
    let correct = ClassCounts { open: 397, closed: 145 };
    let truth = ClassCounts { open: 409, closed: 152 };
    let acc = counting_accuracy_from_tally(&correct, 11, &truth).accuracy.value().unwrap();
    let pass = close(acc, 0.9475, 1e-4);
    report(1, "counting accuracy reproduction", pass, &format!("accuracy {acc:.6}, expected 0.9475 +/- 1e-4"), t.elapsed());
    assert!(pass);
}

#[test]
fn criterion_2_map_arithmetic() {
    let t = Instant::now();
    let map = mean_average_precision(&[0.9072, 0.9467]).unwrap();
    let pass = close(map, 0.9270, 5e-4);
    report(2, "mAP arithmetic", pass, &format!("mAP {map:.6}, expected 0.9270 +/- 5e-4"), t.elapsed());
    assert!(pass);
}

#[test]
fn criterion_3_detection_metrics() {
    let t = Instant::now();
    let s = pooled_scores(&ConfusionCounts { tp: 736, fp: 82, fn_: 41 });
    let got = [
        ("recall", s.recall.value().unwrap(), 0.9472),
        ("precision", s.precision.value().unwrap(), 0.8997),
        ("f1", s.f1.value().unwrap(), 0.9228),
        ("accuracy", s.accuracy.value().unwrap(), 0.8568),
    ];
    let pass = got.iter().all(|&(_, v, e)| close(v, e, 1e-4));
    let detail = got
        .iter()
        .map(|(n, v, e)| format!("{n} {v:.6} (want {e})"))
        .collect::<Vec<_>>()
        .join(", ");
    report(3, "detection metrics", pass, &detail, t.elapsed());
    assert!(pass);
}

#[test]
fn criterion_4_perfect_streams_are_exact() {
    let t = Instant::now();
    let cfg = CounterConfig::default();
    let mut failures = Vec::new();
    let mut objects = 0;
    for seed in 0..100 {
        let sim = simulate(&swept_scenario(seed), &NoiseProfile::none());
        objects += sim.truth.total();
        let run = run_counter(&sim.stream, &cfg, ExecMode::Sequential).unwrap();
        let matched = counting_accuracy_matched(run.state.tracks(), &sim.truth, cfg.assign_dist);
        let clamped = counting_accuracy(&ClassCounts::from(&run.report), &ClassCounts::from(&sim.truth));
        if matched.accuracy.value() != Some(1.0) || clamped.accuracy.value() != Some(1.0) {
            failures.push((seed, matched.counts));
        }
    }
    let elapsed = t.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    report(
        4,
        "perfect-stream exactness",
        pass,
        &format!("100 scenarios, {objects} objects, {} below 1.0 {:?}", failures.len(), failures),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_5_class_flips() {
    let t = Instant::now();
    let cfg = CounterConfig::default();
    let noise = NoiseProfile {
        flip_open_visible_prob: 0.3,
        ensure_open_before_y: Some(cfg.end_threshold),
        ..NoiseProfile::none()
    };
    let mut failures = Vec::new();
    let mut flipped = 0usize;
    for seed in 0..100 {
        let sim = simulate(&swept_scenario(seed), &noise);
        flipped += sim.stream.iter().flat_map(|f| &f.detections).filter(|d| d.class == ClassLabel::ClosedMouth).count();
        let run = run_counter(&sim.stream, &cfg, ExecMode::Sequential).unwrap();
        let got = ClassCounts::from(&run.report);
        let want = ClassCounts::from(&sim.truth);
        let matched = counting_accuracy_matched(run.state.tracks(), &sim.truth, cfg.assign_dist);
        if got != want || matched.accuracy.value() != Some(1.0) {
            failures.push((seed, got, want));
        }
    }
    let elapsed = t.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    report(
        5,
        "class-flip robustness",
        pass,
        &format!("100 scenarios, {flipped} closed-labeled detections, {} mismatched {:?}", failures.len(), failures),
        elapsed,
    );
    assert!(pass);
}

struct DropoutRun {
    counts: ConfusionCounts,
    dropped: usize,
    emitted: usize,
    worst: f64,
}

fn dropout_run(dropout_prob: f64, max_burst: u32) -> DropoutRun {
    let cfg = CounterConfig::default();
    let noise = NoiseProfile {
        dropout_prob,
        max_consecutive_dropout: max_burst,
        ..NoiseProfile::none()
    };
    let mut out = DropoutRun {
        counts: ConfusionCounts::default(),
        dropped: 0,
        emitted: 0,
        worst: 1.0,
    };
    for seed in 0..50 {
        let scenario = swept_scenario(seed);
        let clean = generate(&scenario).unwrap();
        let noisy = perturb(&clean.stream, &clean.truth, &clean.geometry, &noise, seed).unwrap();
        let before: usize = clean.stream.iter().map(|f| f.len()).sum();
        let after: usize = noisy.iter().map(|f| f.len()).sum();
        out.dropped += before - after;
        out.emitted += before;
        let run = run_counter(&noisy, &cfg, ExecMode::Sequential).unwrap();
        let m = counting_accuracy_matched(run.state.tracks(), &clean.truth, cfg.assign_dist);
        out.worst = out.worst.min(m.accuracy.value().unwrap());
        out.counts += m.counts;
    }
    out
}

#[test]
fn criterion_6_dropout_recovery() {
    let t = Instant::now();
    // Upper end of the allowed regime: bursts of up to 5 frames, about 10% dropped.
    let run = dropout_run(0.1, 5);
    let fraction = run.dropped as f64 / run.emitted as f64;
    let acc = pooled_scores(&run.counts).accuracy.value().unwrap();
    let light = dropout_run(0.01, 5);
    let light_acc = pooled_scores(&light.counts).accuracy.value().unwrap();
    let pass = fraction <= 0.10 && acc >= 0.95;
    report(
        6,
        "dropout recovery",
        pass,
        &format!(
            "50 scenarios, {:.2}% dropped, accuracy {acc:.4} (worst {:.4}) {:?}, need >= 0.95; \
             at {:.2}% dropped: accuracy {light_acc:.4} {:?}",
            100.0 * fraction,
            run.worst,
            run.counts,
            100.0 * light.dropped as f64 / light.emitted as f64,
            light.counts,
        ),
        t.elapsed(),
    );
    assert!(fraction <= 0.10, "dropout regime exceeded: {fraction}");
    assert!(acc >= 0.95, "counting accuracy {acc} below 0.95");
}

/// Dense stream for timing: 19 lanes 40 px apart and near back-to-back
/// arrivals, truncated to 2227 frames.
fn dense_stream() -> Vec<conveyor_count::FrameDetections> {
    let scenario = Scenario {
        num_objects: 1450,
        entry_spacing: (0, 3),
        lanes: (0..19).map(|i| 40.0 + 40.0 * i as f64).collect(),
        min_separation: 30.0,
        box_size: (28.0, 36.0),
        seed: 3,
        ..Scenario::default()
    };
    let mut stream = generate(&scenario).unwrap().stream;
    stream.truncate(2227);
    stream
}

#[test]
fn criterion_7_throughput() {
    let t = Instant::now();
    let stream = dense_stream();
    let per_frame = stream.iter().map(|f| f.len()).sum::<usize>() as f64 / stream.len() as f64;
    let cfg = CounterConfig::default();
    let mut times: Vec<Duration> = (0..3)
        .map(|_| {
            let start = Instant::now();
            let run = run_counter(&stream, &cfg, ExecMode::Sequential).unwrap();
            let elapsed = start.elapsed();
            assert!(run.report.total_count > 0);
            elapsed
        })
        .collect();
    times.sort();
    let fps = stream.len() as f64 / times[1].as_secs_f64();
    let elapsed = t.elapsed();
    let pass = stream.len() == 2227 && fps >= 300.0 && elapsed < Duration::from_secs(10);
    report(
        7,
        "throughput",
        pass,
        &format!(
            "{} frames, {per_frame:.1} detections/frame, median {:.2?} on one core = {fps:.0} frames/s, need >= 300",
            stream.len(),
            times[1]
        ),
        elapsed,
    );
    assert!(pass);
}

fn random_detections(rng: &mut ChaCha8Rng, frame: u64, n: usize, extent: f64) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..extent);
            let y = rng.random_range(0.0..extent);
            let class = if rng.random_bool(0.5) { ClassLabel::OpenMouth } else { ClassLabel::ClosedMouth };
            Detection::new(frame, BBox::new(x, y, x + 20.0, y + 20.0).unwrap(), class, 0.9).unwrap()
        })
        .collect()
}

fn assignment_properties() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pairs = 0;
    for case in 0..10_000 {
        let np = rng.random_range(0..12);
        let nc = rng.random_range(0..12);
        let extent = rng.random_range(10.0..200.0);
        let cap = rng.random_range(1.0..60.0);
        let prev = random_detections(&mut rng, 0, np, extent);
        let curr = random_detections(&mut rng, 1, nc, extent);
        let a = assign(&prev, &curr, cap);
        if a != assign(&prev, &curr, cap) {
            return Err(format!("case {case}: nondeterministic"));
        }
        let mut seen_p = vec![false; np];
        let mut seen_c = vec![false; nc];
        for &(p, c) in &a.pairs {
            if seen_p[p] || seen_c[c] {
                return Err(format!("case {case}: index reused in {:?}", a.pairs));
            }
            seen_p[p] = true;
            seen_c[c] = true;
            let d = prev[p].center().distance(&curr[c].center());
            if d > cap {
                return Err(format!("case {case}: pair ({p}, {c}) at {d} exceeds cap {cap}"));
            }
        }
        for &c in &a.unassigned_curr {
            if seen_c[c] {
                return Err(format!("case {case}: current {c} both paired and unassigned"));
            }
            seen_c[c] = true;
        }
        if seen_c.iter().any(|s| !s) {
            return Err(format!("case {case}: a current detection is unaccounted for"));
        }
        pairs += a.pairs.len();
    }
    Ok(pairs)
}

/// Direct recomputation: for each cut-off `k` count hits among the `k`
/// best-scored detections.
fn brute_force_ap(outcomes: &[(f64, bool)], annotations: u64) -> f64 {
    let mut sum = 0.0;
    for k in 1..=outcomes.len() {
        let hits = outcomes
            .iter()
            .filter(|o| outcomes.iter().filter(|p| p.0 > o.0).count() < k)
            .filter(|o| o.1)
            .count() as f64;
        let recall = (hits / annotations as f64).min(1.0);
        sum += hits / k as f64 * recall;
    }
    sum / annotations as f64
}

fn ap_properties() -> Result<usize, String> {
    let mut instances = 0;
    for n in 0..=5usize {
        for mask in 0u32..(1 << n) {
            // distinct scores, presented in a scrambled order
            let outcomes: Vec<(f64, bool)> = (0..n)
                .map(|i| {
                    let rank = (i + mask as usize) % n;
                    (1.0 - rank as f64 / 10.0, mask >> i & 1 == 1)
                })
                .collect();
            let hits = mask.count_ones() as u64;
            for annotations in hits.max(1)..=hits + 2 {
                let got = average_precision(&RankedDetectionList::new(outcomes.clone(), annotations)).unwrap();
                let want = brute_force_ap(&outcomes, annotations);
                if (got - want).abs() > 1e-12 {
                    return Err(format!("{outcomes:?} with {annotations} annotations: {got} != {want}"));
                }
                instances += 1;
            }
        }
    }
    Ok(instances)
}

fn memory_properties() -> Result<usize, String> {
    let cfg = CounterConfig::default();
    let stream = dense_stream();
    let sets = pair_assignments(&stream, cfg.assign_dist, ExecMode::Sequential);
    let mut state = CounterState::new(25.0, &cfg);
    let bound = cfg.lost_lookback as usize;
    for (frame, set) in stream.iter().zip(&sets) {
        state.process_frame(frame, set, &cfg).map_err(|e| e.to_string())?;
        if state.history_len() > bound {
            return Err(format!("frame {}: {} history frames held", frame.frame_index, state.history_len()));
        }
        if state.lost().len() > frame.len() {
            return Err(format!("frame {}: lost list outgrew the frame", frame.frame_index));
        }
    }
    let peak = state.stats().peak_history;
    if peak > bound {
        return Err(format!("peak history {peak} exceeds {bound}"));
    }
    Ok(peak)
}

fn round_trip_properties() -> Result<usize, String> {
    let noise = NoiseProfile {
        dropout_prob: 0.05,
        max_consecutive_dropout: 3,
        jitter_sigma: 1.5,
        flip_open_visible_prob: 0.3,
        merge_distance: 12.0,
        ensure_open_before_y: None,
    };
    let mut bytes = 0;
    for seed in 0..20 {
        let sim = simulate(&swept_scenario(seed * 5), &noise);
        let stream = DetectionStream {
            geometry: sim.geometry,
            fps: Some(60.0),
            frames: sim.stream,
        };
        let mut first = Vec::new();
        write_stream(&mut first, &stream).map_err(|e| e.to_string())?;
        let parsed = read_stream(first.as_slice()).map_err(|e| e.to_string())?;
        if parsed != stream {
            return Err(format!("seed {seed}: parsed stream differs"));
        }
        let mut second = Vec::new();
        write_stream(&mut second, &parsed).map_err(|e| e.to_string())?;
        if first != second {
            return Err(format!("seed {seed}: rewritten bytes differ"));
        }
        bytes += first.len();
    }
    Ok(bytes)
}

#[test]
fn criterion_8_property_suites() {
    let t = Instant::now();
    let results = [
        ("assignment", assignment_properties().map(|n| format!("10000 instances, {n} pairs"))),
        ("average precision", ap_properties().map(|n| format!("{n} instances"))),
        ("memory", memory_properties().map(|p| format!("peak history {p} frames"))),
        ("round trip", round_trip_properties().map(|b| format!("20 streams, {b} bytes"))),
    ];
    let pass = results.iter().all(|(_, r)| r.is_ok());
    let detail = results
        .iter()
        .map(|(n, r)| match r {
            Ok(s) => format!("{n}: ok ({s})"),
            Err(e) => format!("{n}: {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    report(8, "property suites", pass, &detail, t.elapsed());
    assert!(pass);
}
