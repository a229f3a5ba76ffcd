//! Streaming track-and-count engine for objects moving down a conveyor.
//!
//! The crate consumes per-frame detection lists (from any detector, or from
//! the built-in [`simulator`]), links detections across frames into tracks,
//! and reports how many open-mouth and closed-mouth objects passed through.
//! [`metrics`] provides the detection and counting evaluation used to judge
//! both the detector output and the counts.

pub mod assignment;
pub mod batch;
pub mod counter;
pub mod detection;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod simulator;

pub use assignment::{assign, assign_with_gap, AssignmentSet};
pub use counter::{count_video, run_counter, CountReport, CounterConfig, CounterState, Track, Zone};
pub use detection::{ClassLabel, Detection, FrameDetections};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use geometry::{BBox, ImageGeometry, Point};
pub use simulator::{generate, perturb, GroundTruth, NoiseProfile, Scenario};
