use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conveyor_count::batch::run_many;
use conveyor_count::counter::CountReport;
use conveyor_count::io::{self, DetectionStream, TruthFile};
use conveyor_count::metrics::{
    counting_accuracy, counting_accuracy_from_tally, counting_accuracy_matched, evaluate_detections, ClassCounts,
};
use conveyor_count::{generate, perturb, CounterConfig, Error, ExecMode, NoiseProfile, Result, Scenario};
use log::info;
use serde::Serialize;

const OUT_DIR_ENV: &str = "CONVEYOR_COUNT_OUT_DIR";

#[derive(Parser)]
#[command(name = "conveyor-count", version, about = "Count open- and closed-mouth objects on a conveyor from per-frame detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic detection stream and its ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Count objects in one or more detection streams.
    Count(CountArgs),
    /// Score a detection stream against ground-truth boxes.
    EvalDetections(EvalDetectionsArgs),
    /// Score counts against ground truth.
    EvalCounts(EvalCountsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    objects: usize,
    #[arg(long, default_value_t = 0.7)]
    open_fraction: f64,
    /// Mean speed in px/frame.
    #[arg(long, default_value_t = 10.0)]
    speed: f64,
    #[arg(long, default_value_t = 3.0)]
    speed_jitter: f64,
    /// Frames between arrivals, as MIN,MAX.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [2u32, 8])]
    spacing: Vec<u32>,
    #[arg(long, default_value_t = 800.0)]
    width: f64,
    #[arg(long, default_value_t = 600.0)]
    height: f64,
    /// Frame rate recorded in the stream header.
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    max_dropout_run: u32,
    /// Gaussian center jitter, px.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Per-frame probability that an open object is labeled open.
    #[arg(long, default_value_t = 1.0)]
    open_visible: f64,
    #[arg(long, default_value_t = 0.0)]
    merge_distance: f64,
    /// Guarantee an open label on some frame above this y.
    #[arg(long)]
    ensure_open_before: Option<f64>,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
    /// Base file name; defaults to `sim-<seed>`.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Exec {
    Sequential,
    Parallel,
}

impl From<Exec> for ExecMode {
    fn from(e: Exec) -> Self {
        match e {
            Exec::Sequential => ExecMode::Sequential,
            Exec::Parallel => ExecMode::Parallel,
        }
    }
}

#[derive(Args)]
struct ThresholdArgs {
    /// Largest center distance between consecutive frames, px.
    #[arg(long)]
    assign_dist: Option<f64>,
    /// Only unmatched detections above this y calibrate the entering area.
    #[arg(long)]
    enter_cap: Option<f64>,
    /// Start of the exiting area, px.
    #[arg(long)]
    end_threshold: Option<f64>,
    /// Frames searched back for lost detections.
    #[arg(long)]
    lost_lookback: Option<u32>,
    #[arg(long)]
    min_score: Option<f64>,
}

impl ThresholdArgs {
    fn config(&self, stream: &DetectionStream) -> Result<CounterConfig> {
        let mut c = CounterConfig::for_geometry(stream.geometry);
        if let Some(v) = self.assign_dist {
            c.assign_dist = v;
        }
        if let Some(v) = self.enter_cap {
            c.entering_candidate_cap = v;
        }
        if let Some(v) = self.end_threshold {
            c.end_threshold = v;
        }
        if let Some(v) = self.lost_lookback {
            c.lost_lookback = v;
        }
        if let Some(v) = self.min_score {
            c.min_score = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct CountArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Report file (single input only). Without it and without an output
    /// directory the report goes to stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Write `<input stem>.counts.json` here for every input.
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, value_enum, default_value = "parallel")]
    exec: Exec,
    /// Print frames per second for every input to stderr.
    #[arg(long)]
    report_throughput: bool,
}

#[derive(Args)]
struct EvalDetectionsArgs {
    detections: PathBuf,
    /// Ground truth: a `.truth.json` sidecar or a detection stream.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCountsArgs {
    /// Ground-truth sidecar; alternatively pass --truth-open/--truth-closed.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, requires = "truth_closed")]
    truth_open: Option<u64>,
    #[arg(long, requires = "truth_open")]
    truth_closed: Option<u64>,
    /// Count report written by `count`.
    #[arg(long, conflicts_with_all = ["stream", "counted_open", "correct_open"])]
    report: Option<PathBuf>,
    /// Detection stream to count and match track by track against the sidecar.
    #[arg(long, requires = "truth", conflicts_with_all = ["counted_open", "correct_open"])]
    stream: Option<PathBuf>,
    #[arg(long, requires = "counted_closed", conflicts_with = "correct_open")]
    counted_open: Option<u64>,
    #[arg(long, requires = "counted_open")]
    counted_closed: Option<u64>,
    /// Tally mode: correctly counted open objects.
    #[arg(long, requires_all = ["correct_closed", "extra"])]
    correct_open: Option<u64>,
    #[arg(long, requires = "correct_open")]
    correct_closed: Option<u64>,
    /// Tally mode: spurious or misclassified counts.
    #[arg(long, requires = "correct_open")]
    extra: Option<u64>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => io::write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scenario = Scenario {
        geometry: conveyor_count::ImageGeometry::new(args.width, args.height)?,
        num_objects: args.objects,
        open_fraction: args.open_fraction,
        speed_mean: args.speed,
        speed_jitter: args.speed_jitter,
        entry_spacing: (args.spacing[0], args.spacing[1]),
        seed: args.seed,
        ..Scenario::default()
    };
    let noise = NoiseProfile {
        dropout_prob: args.dropout,
        max_consecutive_dropout: args.max_dropout_run,
        jitter_sigma: args.jitter,
        flip_open_visible_prob: args.open_visible,
        merge_distance: args.merge_distance,
        ensure_open_before_y: args.ensure_open_before,
    };
    let sim = generate(&scenario)?;
    let frames = perturb(&sim.stream, &sim.truth, &sim.geometry, &noise, args.seed)?;
    let stream = DetectionStream {
        geometry: sim.geometry,
        fps: args.fps,
        frames,
    };
    let name = args.name.unwrap_or_else(|| format!("sim-{}", args.seed));
    let stream_path = args.out_dir.join(format!("{name}.jsonl"));
    let truth_path = args.out_dir.join(format!("{name}.truth.json"));
    let mut bytes = Vec::new();
    io::write_stream(&mut bytes, &stream)?;
    io::write_file(&stream_path, &bytes)?;
    let mut truth = serde_json::to_string_pretty(&TruthFile::new(&sim.geometry, sim.truth))?;
    truth.push('\n');
    io::write_file(&truth_path, truth.as_bytes())?;
    info!("wrote {} and {}", stream_path.display(), truth_path.display());
    Ok(())
}

#[derive(Serialize)]
struct CountOutput<'a> {
    input: String,
    #[serde(flatten)]
    report: &'a CountReport,
}

fn count(args: CountArgs) -> Result<()> {
    if args.output.is_some() && args.inputs.len() > 1 {
        return Err(Error::InvalidConfig("--output takes a single input; use --out-dir for several".into()));
    }
    let streams = args
        .inputs
        .iter()
        .map(|p| io::parse_stream(p))
        .collect::<Result<Vec<_>>>()?;
    let configs = streams
        .iter()
        .map(|s| args.thresholds.config(s))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::with_capacity(streams.len());
    if configs.windows(2).all(|w| w[0] == w[1]) && streams.len() > 1 {
        let frames: Vec<_> = streams.iter().map(|s| s.frames.clone()).collect();
        let start = Instant::now();
        runs = run_many(&frames, &configs[0], args.exec.into())
            .into_iter()
            .map(|r| r.map(|run| (run.report, None)))
            .collect::<Result<Vec<_>>>()?;
        if args.report_throughput {
            let total: usize = frames.iter().map(Vec::len).sum();
            let secs = start.elapsed().as_secs_f64();
            eprintln!("batch: {total} frames in {secs:.4} s ({:.0} frames/s)", total as f64 / secs);
        }
    } else {
        for (s, c) in streams.iter().zip(&configs) {
            let start = Instant::now();
            let run = conveyor_count::run_counter(&s.frames, c, args.exec.into())?;
            runs.push((run.report, Some(start.elapsed())));
        }
    }
    for (path, (report, elapsed)) in args.inputs.iter().zip(&runs) {
        if let (true, Some(e)) = (args.report_throughput, elapsed) {
            let n = report.stats.frames as f64;
            eprintln!(
                "{}: {n} frames in {:.4} s ({:.0} frames/s)",
                path.display(),
                e.as_secs_f64(),
                n / e.as_secs_f64()
            );
        }
        let text = io::report_json(
            "conveyor-counts",
            &CountOutput {
                input: path.display().to_string(),
                report,
            },
        )?;
        let target = match (&args.output, &args.out_dir) {
            (Some(o), _) => Some(o.clone()),
            (None, Some(dir)) => {
                let stem = path.file_stem().map_or("stream".into(), |s| s.to_string_lossy().into_owned());
                Some(dir.join(format!("{stem}.counts.json")))
            }
            (None, None) => None,
        };
        emit(&text, target.as_deref())?;
        info!(
            "{}: open {} closed {} total {}",
            path.display(),
            report.open_count,
            report.closed_count,
            report.total_count
        );
    }
    Ok(())
}

fn load_truth_frames(path: &Path) -> Result<Vec<conveyor_count::FrameDetections>> {
    if path.extension().is_some_and(|e| e == "json") {
        io::read_truth(path)?.frame_boxes()
    } else {
        Ok(io::parse_stream(path)?.frames)
    }
}

fn eval_detections(args: EvalDetectionsArgs) -> Result<()> {
    let dets = io::parse_stream(&args.detections)?.frames;
    let truth = load_truth_frames(&args.truth)?;
    let metrics = evaluate_detections(&dets, &truth, args.iou)?;
    emit(&io::report_json("conveyor-detection-metrics", &metrics)?, args.output.as_deref())
}

fn report_counts(path: &Path) -> Result<ClassCounts> {
    let value: serde_json::Value = serde_json::from_str(&io::read_text(path)?)?;
    let field = |name: &str| {
        value.get(name).and_then(serde_json::Value::as_u64).ok_or_else(|| {
            Error::InvalidConfig(format!("{}: missing or non-integer {name:?}", path.display()))
        })
    };
    Ok(ClassCounts {
        open: field("open_count")?,
        closed: field("closed_count")?,
    })
}

fn eval_counts(args: EvalCountsArgs) -> Result<()> {
    let sidecar = args.truth.as_deref().map(io::read_truth).transpose()?;
    let truth = match (&sidecar, args.truth_open, args.truth_closed) {
        (Some(t), _, _) => ClassCounts::from(&t.truth),
        (None, Some(open), Some(closed)) => ClassCounts { open, closed },
        _ => return Err(Error::InvalidConfig("ground truth needs --truth or --truth-open/--truth-closed".into())),
    };
    let result = if let Some(path) = &args.stream {
        let stream = io::parse_stream(path)?;
        let config = args.thresholds.config(&stream)?;
        let run = conveyor_count::run_counter(&stream.frames, &config, ExecMode::default())?;
        let t = &sidecar.as_ref().expect("clap requires --truth with --stream").truth;
        counting_accuracy_matched(run.state.tracks(), t, config.assign_dist)
    } else if let (Some(open), Some(closed), Some(extra)) = (args.correct_open, args.correct_closed, args.extra) {
        counting_accuracy_from_tally(&ClassCounts { open, closed }, extra, &truth)
    } else if let (Some(open), Some(closed)) = (args.counted_open, args.counted_closed) {
        counting_accuracy(&ClassCounts { open, closed }, &truth)
    } else if let Some(path) = &args.report {
        counting_accuracy(&report_counts(path)?, &truth)
    } else {
        return Err(Error::InvalidConfig(
            "pass one of --report, --stream, --counted-open/--counted-closed or --correct-open/--correct-closed/--extra".into(),
        ));
    };
    emit(&io::report_json("conveyor-count-metrics", &result)?, args.output.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Count(a) => count(a),
        Command::EvalDetections(a) => eval_detections(a),
        Command::EvalCounts(a) => eval_counts(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
