//! Demonstration directories: `states.jsonl` plus one PNG folder per camera.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use super::{Action, Gripper};
use crate::error::{Error, Result};
use crate::geometry::{pose_from_array, pose_to_array};

pub const STATES_FILE: &str = "states.jsonl";

/// Relative tolerance on the spacing of consecutive timestamps.
const RATE_TOLERANCE: f64 = 1e-6;

/// Zero-padded frame file name shared by every camera folder.
pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Conventional folder name for camera `i`.
pub fn camera_dir_name(i: usize) -> String {
    format!("cam{i}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoStep {
    pub timestamp: f64,
    pub q: Vec<f64>,
    pub gripper: Gripper,
    pub ee_pose: Isometry3<f64>,
}

/// One line of `states.jsonl`. Emitted episodes also carry the action
/// leading from this step to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub timestamp: f64,
    pub q: Vec<f64>,
    pub gripper: Gripper,
    pub ee_pose: [f64; 7],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
}

impl StateRecord {
    pub fn from_step(step: &DemoStep, action: Option<Action>) -> Self {
        Self {
            timestamp: step.timestamp,
            q: step.q.clone(),
            gripper: step.gripper,
            ee_pose: pose_to_array(&step.ee_pose),
            action,
        }
    }
}

/// A recorded demonstration at a constant control rate. Timestamps are
/// strictly increasing and evenly spaced; every step has the same joint
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDemo {
    steps: Vec<DemoStep>,
    cameras: Vec<String>,
    root: Option<PathBuf>,
}

impl ExpertDemo {
    pub fn new(steps: Vec<DemoStep>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::invalid("a demonstration needs at least one timestep"));
        };
        let dof = first.q.len();
        for (k, s) in steps.iter().enumerate() {
            if s.q.len() != dof {
                return Err(Error::Data {
                    index: k,
                    message: format!("joint dimension {} differs from {dof}", s.q.len()),
                });
            }
            if !s.timestamp.is_finite() || s.q.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data {
                    index: k,
                    message: "non-finite timestamp or joint value".into(),
                });
            }
        }
        if steps.len() >= 2 {
            let dt = steps[1].timestamp - steps[0].timestamp;
            for (k, w) in steps.windows(2).enumerate() {
                let d = w[1].timestamp - w[0].timestamp;
                if !(d > 0.0) || (d - dt).abs() > RATE_TOLERANCE * dt.abs().max(1.0) {
                    return Err(Error::Data {
                        index: k + 1,
                        message: format!("timestamps must advance at a constant rate (step {d}, expected {dt})"),
                    });
                }
            }
        }
        Ok(Self {
            steps,
            cameras: Vec::new(),
            root: None,
        })
    }

    pub fn steps(&self) -> &[DemoStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dof(&self) -> usize {
        self.steps[0].q.len()
    }

    /// Control rate in Hz; `None` for a single-step demo.
    pub fn rate_hz(&self) -> Option<f64> {
        (self.steps.len() >= 2).then(|| 1.0 / (self.steps[1].timestamp - self.steps[0].timestamp))
    }

    /// Camera folder names found next to `states.jsonl`, sorted.
    pub fn cameras(&self) -> &[String] {
        &self.cameras
    }

    /// Path of frame `index` for `camera`, when loaded from disk.
    pub fn image_path(&self, camera: &str, index: usize) -> Option<PathBuf> {
        let root = self.root.as_ref()?;
        (index < self.steps.len()).then(|| root.join(camera).join(frame_name(index)))
    }

    /// Reads `states.jsonl`; extra fields such as stored actions are
    /// accepted. Subdirectories become camera folders.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(STATES_FILE);
        let records = read_states(&path)?;
        let steps = records
            .into_iter()
            .enumerate()
            .map(|(k, r)| {
                Ok(DemoStep {
                    timestamp: r.timestamp,
                    q: r.q,
                    gripper: r.gripper,
                    ee_pose: pose_from_array(&r.ee_pose).map_err(|e| Error::Data {
                        index: k,
                        message: e.to_string(),
                    })?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut demo = Self::new(steps)?;
        let mut cameras = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            if entry.path().is_dir() {
                cameras.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        cameras.sort();
        demo.cameras = cameras;
        demo.root = Some(dir.to_path_buf());
        Ok(demo)
    }
}

pub fn read_states(path: &Path) -> Result<Vec<StateRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StateRecord = serde_json::from_str(&line).map_err(|e| Error::Data {
            index: k,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// One JSON object per line, in order.
pub fn write_states(path: &Path, records: &[StateRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
