//! File formats.
//!
//! Detection streams are JSON Lines: a header record followed by one record
//! per frame.
//!
//! ```text
//! {"format":"conveyor-detections","version":1,"width":800.0,"height":600.0,"frames":2,"fps":60.0}
//! {"frame":0,"detections":[{"box":[85.0,5.0,115.0,45.0],"class":"open","score":0.93}]}
//! {"frame":1,"detections":[]}
//! ```
//!
//! Frames must appear in strictly increasing order; frames missing from the
//! file are read as empty. Ground-truth sidecars and reports are single JSON
//! documents that carry the same `format` / `version` header fields.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{ClassLabel, Detection, FrameDetections};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageGeometry};
use crate::simulator::GroundTruth;

pub const FORMAT_VERSION: u32 = 1;
pub const STREAM_FORMAT: &str = "conveyor-detections";
pub const TRUTH_FORMAT: &str = "conveyor-truth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub format: String,
    pub version: u32,
    pub width: f64,
    pub height: f64,
    pub frames: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: u64,
    detections: Vec<DetectionRecord>,
}

/// A parsed detection stream.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionStream {
    pub geometry: ImageGeometry,
    pub fps: Option<f64>,
    pub frames: Vec<FrameDetections>,
}

fn check_format(found: &str, version: u32, expected: &'static str) -> Result<()> {
    if found != expected || version != FORMAT_VERSION {
        return Err(Error::Format {
            expected,
            found: format!("{found} v{version}"),
        });
    }
    Ok(())
}

fn at(frame: u64, field: &'static str, e: Error) -> Error {
    Error::AtFrame {
        frame,
        field,
        source: Box::new(e),
    }
}

fn validate_detection(frame: u64, rec: DetectionRecord, geometry: &ImageGeometry) -> Result<Detection> {
    let [x1, y1, x2, y2] = rec.bbox;
    let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| at(frame, "box", e))?;
    if !bbox.within(geometry) {
        return Err(Error::Frame {
            frame,
            field: "box",
            message: format!(
                "({x1}, {y1}, {x2}, {y2}) extends past the {}x{} image",
                geometry.width(),
                geometry.height()
            ),
        });
    }
    let class: ClassLabel = rec.class.parse().map_err(|e| at(frame, "class", e))?;
    Detection::new(frame, bbox, class, rec.score).map_err(|e| at(frame, "score", e))
}

/// Parse and validate a detection stream. All-or-nothing: the first problem
/// aborts with an error naming the frame and field.
pub fn read_stream(reader: impl Read) -> Result<DetectionStream> {
    let mut lines = BufReader::new(reader).lines().enumerate().filter(|(_, l)| match l {
        Ok(l) => !l.trim().is_empty(),
        Err(_) => true,
    });
    let syntax = |line: usize, message: String| Error::Syntax { line: line + 1, message };
    let io_err = |e| Error::Io {
        path: "<stream>".into(),
        source: e,
    };

    let (hline, header) = lines.next().ok_or_else(|| syntax(0, "missing header record".into()))?;
    let header: StreamHeader =
        serde_json::from_str(&header.map_err(io_err)?).map_err(|e| syntax(hline, format!("header: {e}")))?;
    check_format(&header.format, header.version, STREAM_FORMAT)?;
    let geometry = ImageGeometry::new(header.width, header.height)?;

    let mut frames: Vec<FrameDetections> = Vec::with_capacity(header.frames as usize);
    let mut previous: Option<u64> = None;
    for (ln, line) in lines {
        let rec: FrameRecord =
            serde_json::from_str(&line.map_err(io_err)?).map_err(|e| syntax(ln, e.to_string()))?;
        if let Some(p) = previous {
            if rec.frame <= p {
                return Err(Error::FrameOrder {
                    frame: rec.frame,
                    previous: p,
                });
            }
        }
        if rec.frame >= header.frames {
            return Err(Error::Frame {
                frame: rec.frame,
                field: "frame",
                message: format!("header declares only {} frames", header.frames),
            });
        }
        for missing in frames.len() as u64..rec.frame {
            frames.push(FrameDetections::empty(missing));
        }
        let dets = rec
            .detections
            .into_iter()
            .map(|d| validate_detection(rec.frame, d, &geometry))
            .collect::<Result<Vec<_>>>()?;
        let mut f = FrameDetections::new(rec.frame, dets)?;
        f.canonicalize();
        frames.push(f);
        previous = Some(rec.frame);
    }
    for missing in frames.len() as u64..header.frames {
        frames.push(FrameDetections::empty(missing));
    }
    Ok(DetectionStream {
        geometry,
        fps: header.fps,
        frames,
    })
}

pub fn write_stream(mut w: impl Write, stream: &DetectionStream) -> Result<()> {
    let header = StreamHeader {
        format: STREAM_FORMAT.into(),
        version: FORMAT_VERSION,
        width: stream.geometry.width(),
        height: stream.geometry.height(),
        frames: stream.frames.last().map_or(0, |f| f.frame_index + 1),
        fps: stream.fps,
    };
    let io_err = |e| Error::Io {
        path: "<stream>".into(),
        source: e,
    };
    writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io_err)?;
    for f in &stream.frames {
        let rec = FrameRecord {
            frame: f.frame_index,
            detections: f
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    bbox: d.bbox.into(),
                    class: d.class.as_str().into(),
                    score: d.score(),
                })
                .collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(io_err)?;
    }
    Ok(())
}

pub fn parse_stream(path: &Path) -> Result<DetectionStream> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_stream(file)
}

/// Ground-truth sidecar written next to simulated streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format: String,
    pub version: u32,
    pub width: f64,
    pub height: f64,
    pub truth: GroundTruth,
}

impl TruthFile {
    pub fn new(geometry: &ImageGeometry, truth: GroundTruth) -> Self {
        Self {
            format: TRUTH_FORMAT.into(),
            version: FORMAT_VERSION,
            width: geometry.width(),
            height: geometry.height(),
            truth,
        }
    }

    /// Per-frame truth boxes (score 1.0) aligned with the stream frames.
    pub fn frame_boxes(&self) -> Result<Vec<FrameDetections>> {
        let mut frames: Vec<FrameDetections> = (0..self.truth.frames).map(FrameDetections::empty).collect();
        for o in &self.truth.objects {
            for p in &o.trajectory {
                let f = frames.get_mut(p.frame as usize).ok_or_else(|| Error::Frame {
                    frame: p.frame,
                    field: "trajectory",
                    message: format!("object {} is outside the {} declared frames", o.id, self.truth.frames),
                })?;
                f.detections.push(Detection::new(p.frame, p.bbox, o.class, 1.0)?);
            }
        }
        for f in &mut frames {
            f.canonicalize();
        }
        Ok(frames)
    }
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    let text = read_text(path)?;
    let t: TruthFile = serde_json::from_str(&text)?;
    check_format(&t.format, t.version, TRUTH_FORMAT)?;
    if !t.truth.is_consistent() {
        return Err(Error::InvalidConfig(format!(
            "{}: totals disagree with the per-object records",
            path.display()
        )));
    }
    Ok(t)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let wrap = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(wrap)?;
    }
    fs::write(path, contents).map_err(wrap)
}

/// Serialize a report body under the common `format` / `version` header.
pub fn report_json<T: Serialize>(format: &str, body: &T) -> Result<String> {
    let mut value = serde_json::to_value(body)?;
    let mut out = serde_json::Map::new();
    out.insert("format".into(), format.into());
    out.insert("version".into(), FORMAT_VERSION.into());
    if let serde_json::Value::Object(fields) = value.take() {
        out.extend(fields);
    } else {
        out.insert("body".into(), value);
    }
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(out))?;
    s.push('\n');
    Ok(s)
}
