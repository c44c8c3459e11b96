//! Frame containers, Cholec80-style annotation files and dataset layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/frames/videoNN.frames
//! <dir>/phase_annotations/videoNN-phase.txt
//! <dir>/tool_annotations/videoNN-tool.txt
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{derive_seed, generate_video, VideoRecord};
use super::spec::{WorkflowSpec, PHASE_NAMES, TOOL_NAMES};
use crate::error::{Error, IoContext, Result};
use crate::parallel::{map_range, Exec};

pub const FRAME_MAGIC: &[u8; 4] = b"MTRF";
pub const FRAME_VERSION: u32 = 1;

/// Writes `(T, C, H, W)` frames as little-endian f32 after a u32 header
/// `magic, version, T, C, H, W`.
pub fn write_frames(path: &Path, frames: &[f32], shape: [usize; 3]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n == 0 || frames.len() % n != 0 {
        return Err(Error::dim(format!(
            "{} values do not divide into frames of shape {shape:?}",
            frames.len()
        )));
    }
    let mut buf = Vec::with_capacity(24 + frames.len() * 4);
    buf.extend_from_slice(FRAME_MAGIC);
    for v in [FRAME_VERSION, (frames.len() / n) as u32, shape[0] as u32, shape[1] as u32, shape[2] as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in frames {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).at(path)
}

/// Reads a frame container, returning the pixels and `(C, H, W)`.
pub fn read_frames(path: &Path) -> Result<(Vec<f32>, [usize; 3])> {
    let buf = fs::read(path).at(path)?;
    let bad = |msg: &str| Error::Load(format!("{}: {msg}", path.display()));
    if buf.len() < 24 || &buf[..4] != FRAME_MAGIC {
        return Err(bad("not a frame container"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != FRAME_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (t, shape) = (word(1), [word(2), word(3), word(4)]);
    let n = t * shape.iter().product::<usize>();
    if buf.len() != 24 + 4 * n {
        return Err(bad("truncated pixel data"));
    }
    let frames = buf[24..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((frames, shape))
}

/// Column names used when reading annotation files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationSchema {
    pub frame_column: String,
    pub phase_column: String,
    pub tool_columns: Vec<String>,
    /// Phase names in label order.
    pub phase_names: Vec<String>,
}

impl Default for AnnotationSchema {
    fn default() -> Self {
        Self {
            frame_column: "Frame".into(),
            phase_column: "Phase".into(),
            tool_columns: TOOL_NAMES.iter().map(|s| s.to_string()).collect(),
            phase_names: PHASE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Labels resampled to 1 fps.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedLabels {
    /// Index of each kept frame at 1 fps.
    pub frame_indices: Vec<usize>,
    pub phases: Vec<usize>,
    pub tools: Vec<Vec<u8>>,
    /// Subsampled phase frames without a matching tool row.
    pub dropped: usize,
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).at(path)?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(false)
        .from_reader(file))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

fn column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| parse_err(path, 1, format!("missing column {name:?}")))
}

/// Reads phase and tool annotations and aligns them at 1 fps.
///
/// Phase rows are kept at frame indices `0, fps_phase, 2 fps_phase, ...`;
/// each kept frame is matched to the tool row with the same frame index and
/// dropped (and counted) when no such row exists.
pub fn load_annotations(
    phase_file: &Path,
    tool_file: &Path,
    fps_phase: usize,
    fps_tool: usize,
    schema: &AnnotationSchema,
) -> Result<AlignedLabels> {
    if fps_phase == 0 || fps_tool == 0 || fps_phase % fps_tool != 0 {
        return Err(Error::config(format!(
            "phase fps {fps_phase} must be a positive multiple of tool fps {fps_tool}"
        )));
    }
    let mut tools: HashMap<usize, Vec<u8>> = HashMap::new();
    let mut rdr = tsv_reader(tool_file)?;
    let headers = rdr.headers().map_err(|e| csv_err(tool_file, e))?.clone();
    let fcol = column(tool_file, &headers, &schema.frame_column)?;
    let tcols = schema
        .tool_columns
        .iter()
        .map(|n| column(tool_file, &headers, n))
        .collect::<Result<Vec<_>>>()?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(tool_file, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let frame = rec[fcol]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(tool_file, line, format!("bad frame index {:?}", &rec[fcol])))?;
        let row = tcols
            .iter()
            .map(|&i| match rec[i].trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(parse_err(tool_file, line, format!("tool value {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        tools.insert(frame, row);
    }

    let mut out = AlignedLabels {
        frame_indices: Vec::new(),
        phases: Vec::new(),
        tools: Vec::new(),
        dropped: 0,
    };
    let mut rdr = tsv_reader(phase_file)?;
    let headers = rdr.headers().map_err(|e| csv_err(phase_file, e))?.clone();
    let fcol = column(phase_file, &headers, &schema.frame_column)?;
    let pcol = column(phase_file, &headers, &schema.phase_column)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(phase_file, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let frame = rec[fcol]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(phase_file, line, format!("bad frame index {:?}", &rec[fcol])))?;
        let name = rec[pcol].trim();
        let phase = schema
            .phase_names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(phase_file, line, format!("unknown phase {name:?}")))?;
        if frame % fps_phase != 0 {
            continue;
        }
        match tools.get(&frame) {
            Some(row) => {
                out.frame_indices.push(frame / fps_phase);
                out.phases.push(phase);
                out.tools.push(row.clone());
            }
            None => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        log::warn!(
            "{}: {} frames without tool annotation dropped",
            phase_file.display(),
            out.dropped
        );
    }
    Ok(out)
}

/// Disjoint train and test video ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_videos: Vec<String>,
    pub test_videos: Vec<String>,
}

impl DatasetSplit {
    /// First `round(n * ratio)` ids train, the rest test.
    pub fn by_ratio(ids: &[String], ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::config(format!("train ratio {ratio} outside [0, 1]")));
        }
        let k = (ids.len() as f64 * ratio).round() as usize;
        let split = Self {
            train_videos: ids[..k].to_vec(),
            test_videos: ids[k..].to_vec(),
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_videos.is_empty() || self.test_videos.is_empty() {
            return Err(Error::config("train and test splits must both be non-empty"));
        }
        if self.train_videos.iter().any(|v| self.test_videos.contains(v)) {
            return Err(Error::config("train and test splits overlap"));
        }
        Ok(())
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateOptions {
    pub num_videos: usize,
    pub train_ratio: f64,
    /// Frame rate of the phase annotation rows.
    pub phase_fps: usize,
    /// Frame rate of the tool annotation rows.
    pub tool_fps: usize,
    pub seed: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            num_videos: 20,
            train_ratio: 0.5,
            phase_fps: 25,
            tool_fps: 1,
            seed: 0,
        }
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: WorkflowSpec,
    pub options: GenerateOptions,
    pub split: DatasetSplit,
    pub frame_shape: [usize; 3],
    #[serde(default)]
    pub schema: AnnotationSchema,
}

/// In-memory dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    fn pick(&self, ids: &[String]) -> Vec<&VideoRecord> {
        ids.iter().filter_map(|id| self.video(id)).collect()
    }

    pub fn train(&self) -> Vec<&VideoRecord> {
        self.pick(&self.manifest.split.train_videos)
    }

    pub fn test(&self) -> Vec<&VideoRecord> {
        self.pick(&self.manifest.split.test_videos)
    }
}

pub fn video_id(index: usize) -> String {
    format!("video{:02}", index + 1)
}

fn frames_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("frames").join(format!("{id}.frames"))
}

pub fn phase_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("phase_annotations").join(format!("{id}-phase.txt"))
}

pub fn tool_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("tool_annotations").join(format!("{id}-tool.txt"))
}

fn write_annotations(dir: &Path, v: &VideoRecord, opts: &GenerateOptions) -> Result<()> {
    let mut phase = String::from("Frame\tPhase\n");
    for (t, &z) in v.phase_labels.iter().enumerate() {
        for k in 0..opts.phase_fps {
            phase.push_str(&format!("{}\t{}\n", t * opts.phase_fps + k, PHASE_NAMES[z]));
        }
    }
    let path = phase_path(dir, &v.video_id);
    fs::write(&path, phase).at(&path)?;
    let mut tool = format!("Frame\t{}\n", TOOL_NAMES[..v.tool_labels.first().map_or(0, Vec::len)].join("\t"));
    let step = opts.phase_fps / opts.tool_fps;
    for (t, row) in v.tool_labels.iter().enumerate() {
        for k in 0..opts.tool_fps {
            let cells: Vec<String> = row.iter().map(u8::to_string).collect();
            tool.push_str(&format!("{}\t{}\n", t * opts.phase_fps + k * step, cells.join("\t")));
        }
    }
    let path = tool_path(dir, &v.video_id);
    fs::write(&path, tool).at(&path)
}

/// Generates `options.num_videos` videos and writes them under `out_dir`.
pub fn generate_dataset(spec: &WorkflowSpec, options: &GenerateOptions, out_dir: &Path, exec: Exec) -> Result<Dataset> {
    spec.validate()?;
    if options.num_videos < 2 {
        return Err(Error::config("need at least two videos for a train/test split"));
    }
    if options.phase_fps == 0 || options.tool_fps == 0 || options.phase_fps % options.tool_fps != 0 {
        return Err(Error::config("phase_fps must be a positive multiple of tool_fps"));
    }
    let ids: Vec<String> = (0..options.num_videos).map(video_id).collect();
    let split = DatasetSplit::by_ratio(&ids, options.train_ratio)?;
    for sub in ["frames", "phase_annotations", "tool_annotations"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).at(&p)?;
    }
    let videos = map_range(options.num_videos, exec, |i| -> Result<VideoRecord> {
        let v = generate_video(spec, &ids[i], derive_seed(options.seed, i as u64))?;
        write_frames(&frames_path(out_dir, &v.video_id), &v.frames, v.frame_shape)?;
        write_annotations(out_dir, &v, options)?;
        Ok(v)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        spec: spec.clone(),
        options: options.clone(),
        split,
        frame_shape: videos[0].frame_shape,
        schema: AnnotationSchema::default(),
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json")).at(&path)?;
    Ok(Dataset { manifest, videos })
}

/// Loads a dataset written by [`generate_dataset`] (or laid out the same way).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).at(&path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| parse_err(&path, e.line() as u64, e.to_string()))?;
    manifest.split.validate()?;
    let ids: Vec<String> = manifest
        .split
        .train_videos
        .iter()
        .chain(&manifest.split.test_videos)
        .cloned()
        .collect();
    let opts = &manifest.options;
    let videos = ids
        .iter()
        .map(|id| {
            let (frames, shape) = read_frames(&frames_path(dir, id))?;
            let labels = load_annotations(
                &phase_path(dir, id),
                &tool_path(dir, id),
                opts.phase_fps,
                opts.tool_fps,
                &manifest.schema,
            )?;
            let n: usize = shape.iter().product();
            let total = frames.len() / n;
            let mut kept = Vec::with_capacity(labels.frame_indices.len() * n);
            for &t in &labels.frame_indices {
                if t >= total {
                    return Err(Error::Alignment {
                        msg: format!("{id}: annotation frame {t} beyond {total} stored frames"),
                        missing: vec![(id.clone(), t)],
                    });
                }
                kept.extend_from_slice(&frames[t * n..(t + 1) * n]);
            }
            let v = VideoRecord {
                video_id: id.clone(),
                frames: kept,
                frame_shape: shape,
                phase_labels: labels.phases,
                tool_labels: labels.tools,
            };
            v.validate()?;
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, videos })
}
