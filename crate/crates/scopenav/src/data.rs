//! Dataset serialization, ingestion of external detector output in the
//! YOLO text convention, and the windowing shared by training and eval.
//!
//! The dataset file is line-delimited text with a versioned header:
//!
//! ```text
//! scopenav-dataset v1 n=8 fields=video_id<TAB>frame_index<TAB>pose(depth,pitch,yaw)|-<TAB>det{presence cx cy w h}xN
//! train0<TAB>0<TAB>0 0.01 -0.02<TAB>1 0.5 0.5 0.2 0.1 0 0 0 0 0 ...
//! ```
//!
//! Fields are tab-separated; numbers inside a field are space-separated
//! and printed with the shortest representation that parses back to the
//! identical f64, so write -> read is lossless.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Angle, BBox};
use crate::model::{DetectionFrame, DetectionSequence, Slot};
use crate::scene::{CameraPose, LabeledFrame};

pub const DATASET_FORMAT: &str = "scopenav-dataset";
pub const DATASET_VERSION: u32 = 1;

/// One frame of one video: detections plus the pose when the source is
/// synthetic.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u64,
    pub pose: Option<CameraPose>,
    pub detections: DetectionFrame,
}

impl FrameRecord {
    pub fn validate(&self) -> Result<()> {
        if self.video_id.is_empty()
            || self
                .video_id
                .chars()
                .any(|c| c == '\t' || c == '\n' || c == '\r')
        {
            return Err(Error::Input(format!(
                "video_id {:?} empty or contains separators",
                self.video_id
            )));
        }
        if let Some(p) = &self.pose {
            if !p.depth.is_finite() {
                return Err(Error::Input("non-finite pose depth".into()));
            }
        }
        self.detections.validate_input().map_err(|e| {
            Error::Input(format!(
                "record {}:{}: {e}",
                self.video_id, self.frame_index
            ))
        })
    }
}

/// Converts simulator output into dataset records.
pub fn records_from_trajectory(video_id: &str, frames: &[LabeledFrame]) -> Vec<FrameRecord> {
    frames
        .iter()
        .map(|f| FrameRecord {
            video_id: video_id.to_string(),
            frame_index: f.frame_index,
            pose: Some(f.pose),
            detections: f.detections.clone(),
        })
        .collect()
}

fn check_order(frames: &[FrameRecord]) -> Result<()> {
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    for r in frames {
        if let Some(prev) = last.get(r.video_id.as_str()) {
            if r.frame_index <= *prev {
                return Err(Error::Input(format!(
                    "record {}:{}: frame_index not strictly increasing (previous {prev})",
                    r.video_id, r.frame_index
                )));
            }
        }
        last.insert(&r.video_id, r.frame_index);
    }
    Ok(())
}

/// Writes records as the versioned line format. Records must satisfy the
/// invariants ([`FrameRecord::validate`], strictly increasing indices).
pub fn write_dataset(frames: &[FrameRecord], path: &Path) -> Result<()> {
    let n = match frames.first() {
        Some(f) => f.detections.n_classes(),
        None => 0,
    };
    for r in frames {
        r.validate()?;
        if r.detections.n_classes() != n {
            return Err(Error::Input(format!(
                "record {}:{}: class count {} != {}",
                r.video_id,
                r.frame_index,
                r.detections.n_classes(),
                n
            )));
        }
    }
    check_order(frames)?;

    let mut out = String::new();
    writeln!(
        out,
        "{DATASET_FORMAT} v{DATASET_VERSION} n={n} \
         fields=video_id|frame_index|pose(depth,pitch,yaw)--|det{{presence cx cy w h}}xN"
    )
    .expect("string write");
    for r in frames {
        out.push_str(&r.video_id);
        out.push('\t');
        write!(out, "{}", r.frame_index).expect("string write");
        out.push('\t');
        match &r.pose {
            Some(p) => write!(
                out,
                "{} {} {}",
                p.depth,
                p.pitch.radians(),
                p.yaw.radians()
            )
            .expect("string write"),
            None => out.push('-'),
        }
        out.push('\t');
        for (i, s) in r.detections.slots.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(
                out,
                "{} {} {} {} {}",
                s.presence, s.bbox.cx, s.bbox.cy, s.bbox.w, s.bbox.h
            )
            .expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads and validates a dataset file.
pub fn read_dataset(path: &Path) -> Result<Vec<FrameRecord>> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path_str.clone(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, missing header".into()))?;
    let mut head_parts = header.split_whitespace();
    let fmt = head_parts.next().unwrap_or("");
    if fmt != DATASET_FORMAT {
        return Err(Error::Format {
            path: path_str,
            msg: format!("format {fmt:?}, expected {DATASET_FORMAT:?}"),
        });
    }
    let ver = head_parts.next().unwrap_or("");
    if ver != format!("v{DATASET_VERSION}") {
        return Err(Error::Format {
            path: path_str,
            msg: format!("version {ver:?}, expected v{DATASET_VERSION}"),
        });
    }
    let n_part = head_parts.next().unwrap_or("");
    let n: usize = n_part
        .strip_prefix("n=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(1, format!("bad class count field {n_part:?}")))?;

    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                line_no,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let video_id = fields[0].to_string();
        let frame_index: u64 = fields[1]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad frame_index: {e}")))?;
        let pose = if fields[2] == "-" {
            None
        } else {
            let vals: Vec<f64> = fields[2]
                .split(' ')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(line_no, format!("bad pose: {e}")))?;
            if vals.len() != 3 {
                return Err(parse_err(
                    line_no,
                    format!("pose needs 3 values, got {}", vals.len()),
                ));
            }
            Some(CameraPose {
                depth: vals[0],
                pitch: Angle::from_radians(vals[1])
                    .map_err(|e| parse_err(line_no, format!("bad pitch: {e}")))?,
                yaw: Angle::from_radians(vals[2])
                    .map_err(|e| parse_err(line_no, format!("bad yaw: {e}")))?,
            })
        };
        let vals: Vec<f64> = fields[3]
            .split(' ')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(line_no, format!("bad detection value: {e}")))?;
        if vals.len() != 5 * n {
            return Err(parse_err(
                line_no,
                format!("expected {} detection values, got {}", 5 * n, vals.len()),
            ));
        }
        let slots = vals
            .chunks_exact(5)
            .map(|c| Slot {
                presence: c[0],
                bbox: BBox {
                    cx: c[1],
                    cy: c[2],
                    w: c[3],
                    h: c[4],
                },
            })
            .collect();
        let record = FrameRecord {
            video_id,
            frame_index,
            pose,
            detections: DetectionFrame { slots },
        };
        record
            .validate()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        frames.push(record);
    }
    check_order(&frames)?;
    Ok(frames)
}

/// Class bookkeeping for detector output: total id space, ids to drop
/// (e.g. the instrument class), and the dense remap of the survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    n_total: usize,
    drop_ids: BTreeSet<usize>,
}

impl ClassMap {
    pub fn new(n_total: usize, drop_ids: impl IntoIterator<Item = usize>) -> Result<ClassMap> {
        let drop_ids: BTreeSet<usize> = drop_ids.into_iter().collect();
        if n_total == 0 {
            return Err(Error::Config("class map needs n_total >= 1".into()));
        }
        if let Some(&bad) = drop_ids.iter().find(|&&id| id >= n_total) {
            return Err(Error::Config(format!(
                "drop id {bad} outside class range [0, {n_total})"
            )));
        }
        if drop_ids.len() == n_total {
            return Err(Error::Config("class map drops every class".into()));
        }
        Ok(ClassMap { n_total, drop_ids })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Classes that survive the drop list.
    pub fn n_kept(&self) -> usize {
        self.n_total - self.drop_ids.len()
    }

    /// Dense new id for an old id, or `None` when dropped.
    pub fn remap(&self, old: usize) -> Option<usize> {
        if old >= self.n_total || self.drop_ids.contains(&old) {
            return None;
        }
        Some(old - self.drop_ids.iter().filter(|&&d| d < old).count())
    }
}

struct YoloLine {
    class_id: usize,
    bbox: BBox,
    confidence: Option<f64>,
}

fn parse_yolo_line(line: &str) -> std::result::Result<YoloLine, String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 && parts.len() != 6 {
        return Err(format!("expected 5 or 6 columns, got {}", parts.len()));
    }
    let class_id: usize = parts[0]
        .parse()
        .map_err(|e| format!("bad class id {:?}: {e}", parts[0]))?;
    let mut vals = [0.0f64; 4];
    for (v, p) in vals.iter_mut().zip(&parts[1..5]) {
        *v = p
            .parse()
            .map_err(|e| format!("bad coordinate {p:?}: {e}"))?;
    }
    let bbox = BBox {
        cx: vals[0],
        cy: vals[1],
        w: vals[2],
        h: vals[3],
    };
    if !bbox.is_finite() || !bbox.in_unit_square() {
        return Err(format!("box {bbox:?} not normalized to [0,1]"));
    }
    let confidence = match parts.get(5) {
        Some(p) => Some(
            p.parse::<f64>()
                .map_err(|e| format!("bad confidence {p:?}: {e}"))?,
        ),
        None => None,
    };
    Ok(YoloLine {
        class_id,
        bbox,
        confidence,
    })
}

fn numeric_stem(path: &Path) -> Result<u64> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    stem.parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("label file stem {stem:?} is not a numeric frame index"),
    })
}

fn label_files(dir: &Path) -> Result<Vec<(u64, std::path::PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) == Some("txt") {
            files.push((numeric_stem(&path)?, path));
        }
    }
    files.sort_by_key(|(idx, _)| *idx);
    Ok(files)
}

/// Ingests a directory of per-frame YOLO label files
/// (`class cx cy w h [confidence]`, normalized center-format).
///
/// The directory is either one video (contains `.txt` files directly,
/// video id = directory name) or one subdirectory per video. Frames with
/// original index not divisible by `fps_stride` are dropped and the
/// survivors are re-indexed by `index / fps_stride`; duplicate classes in
/// one frame keep the highest confidence (first line when none carries a
/// confidence column).
pub fn ingest_yolo_labels(
    dir: &Path,
    class_map: &ClassMap,
    fps_stride: u64,
) -> Result<Vec<FrameRecord>> {
    if fps_stride == 0 {
        return Err(Error::Config("fps_stride must be >= 1".into()));
    }
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let own_name = |p: &Path| {
        p.file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("video")
            .to_string()
    };

    let mut videos: Vec<(String, Vec<(u64, std::path::PathBuf)>)> = Vec::new();
    let direct = label_files(dir)?;
    if !direct.is_empty() {
        videos.push((own_name(dir), direct));
    } else {
        let mut subdirs: Vec<std::path::PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let files = label_files(&sub)?;
            if !files.is_empty() {
                videos.push((own_name(&sub), files));
            }
        }
    }
    if videos.is_empty() {
        return Err(Error::Input(format!(
            "no .txt label files under {}",
            dir.display()
        )));
    }

    let mut records = Vec::new();
    for (video_id, files) in videos {
        for (orig_index, path) in files {
            if orig_index % fps_stride != 0 {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            let mut best: BTreeMap<usize, YoloLine> = BTreeMap::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = parse_yolo_line(line).map_err(|msg| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg,
                })?;
                if parsed.class_id >= class_map.n_total() {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        msg: format!(
                            "class id {} outside [0, {})",
                            parsed.class_id,
                            class_map.n_total()
                        ),
                    });
                }
                let Some(new_id) = class_map.remap(parsed.class_id) else {
                    continue;
                };
                match best.get(&new_id) {
                    Some(cur) if parsed.confidence <= cur.confidence => {}
                    _ => {
                        best.insert(new_id, parsed);
                    }
                }
            }
            let mut detections = DetectionFrame::zeroed(class_map.n_kept());
            for (new_id, line) in best {
                detections.slots[new_id] = Slot {
                    presence: 1.0,
                    bbox: line.bbox,
                };
            }
            records.push(FrameRecord {
                video_id: video_id.clone(),
                frame_index: orig_index / fps_stride,
                pose: None,
                detections,
            });
        }
    }
    Ok(records)
}

/// Writes records back out as YOLO label files, one subdirectory per
/// video, `<frame_index:06>.txt` per frame. The inverse of
/// [`ingest_yolo_labels`] at stride 1 (poses are not representable).
pub fn export_yolo_labels(frames: &[FrameRecord], dir: &Path) -> Result<()> {
    for r in frames {
        r.validate()?;
        let vdir = dir.join(&r.video_id);
        std::fs::create_dir_all(&vdir)?;
        let mut out = String::new();
        for (class_id, s) in r.detections.slots.iter().enumerate() {
            if s.presence == 1.0 {
                writeln!(
                    out,
                    "{class_id} {} {} {} {}",
                    s.bbox.cx, s.bbox.cy, s.bbox.w, s.bbox.h
                )
                .expect("string write");
            }
        }
        std::fs::write(vdir.join(format!("{:06}.txt", r.frame_index)), out)?;
    }
    Ok(())
}

/// A length-`s` window of contiguous frames: `frames[start..end]`, target
/// is the last frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

/// Enumerates every contiguous length-`s` window. Windows never cross
/// video boundaries, and frame-index gaps break contiguity.
///
/// Records must be grouped by video (each video id appears as one
/// consecutive block) with strictly increasing indices inside a video.
pub fn windows(frames: &[FrameRecord], s: usize) -> Result<Vec<Window>> {
    if s == 0 {
        return Err(Error::Config("window length must be >= 1".into()));
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        let video = frames[i].video_id.as_str();
        if !seen.insert(video) {
            return Err(Error::Input(format!(
                "video {video:?} is not grouped: records reappear after another video"
            )));
        }
        let mut j = i + 1;
        while j < frames.len() && frames[j].video_id == video {
            if frames[j].frame_index <= frames[j - 1].frame_index {
                return Err(Error::Input(format!(
                    "video {video:?}: frame_index not strictly increasing at {}",
                    frames[j].frame_index
                )));
            }
            j += 1;
        }
        // Split [i, j) into maximal runs of consecutive indices.
        let mut run_start = i;
        for k in i..j {
            let run_breaks = k + 1 == j || frames[k + 1].frame_index != frames[k].frame_index + 1;
            if run_breaks {
                let len = k + 1 - run_start;
                if len >= s {
                    for w in 0..=len - s {
                        out.push(Window {
                            start: run_start + w,
                            end: run_start + w + s,
                        });
                    }
                }
                run_start = k + 1;
            }
        }
        i = j;
    }
    Ok(out)
}

/// Materializes the window as a sequence (for the model API).
pub fn sequence_at(frames: &[FrameRecord], w: Window) -> DetectionSequence {
    DetectionSequence {
        frames: frames[w.start..w.end]
            .iter()
            .map(|r| r.detections.clone())
            .collect(),
    }
}
