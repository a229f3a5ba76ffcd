//! Independent streams fanned out over worker threads, one state per stream.

use crate::counter::{run_counter, CountReport, CountRun, CounterConfig};
use crate::detection::FrameDetections;
use crate::error::Result;
use crate::exec::{map_slice, ExecMode};
use crate::simulator::{generate, perturb, NoiseProfile, Scenario, Simulated};

/// Count several videos. Within each video the assignment pass runs
/// sequentially; the parallelism is across videos.
pub fn count_many(streams: &[Vec<FrameDetections>], config: &CounterConfig, mode: ExecMode) -> Vec<Result<CountReport>> {
    map_slice(mode, streams, |s| run_counter(s, config, ExecMode::Sequential).map(|r| r.report))
}

/// Like [`count_many`] but keeps the final states (tracks) as well.
pub fn run_many(streams: &[Vec<FrameDetections>], config: &CounterConfig, mode: ExecMode) -> Vec<Result<CountRun>> {
    map_slice(mode, streams, |s| run_counter(s, config, ExecMode::Sequential))
}

/// Generate and perturb a batch of scenarios; the noise seed of each
/// scenario is its own `seed`.
pub fn simulate_many(scenarios: &[Scenario], noise: &NoiseProfile, mode: ExecMode) -> Vec<Result<Simulated>> {
    map_slice(mode, scenarios, |s| {
        let mut sim = generate(s)?;
        sim.stream = perturb(&sim.stream, &sim.truth, &sim.geometry, noise, s.seed)?;
        Ok(sim)
    })
}
