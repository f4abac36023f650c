//! Episode folders in the same layout as ingested demonstrations.

use std::fs;
use std::path::{Path, PathBuf};

use splatgen_core::trajectory::{camera_dir_name, frame_name, write_states, StateRecord, STATES_FILE};

use crate::error::{PipelineError, Result};

/// States with their actions plus 8-bit RGB frames, `frames[camera][step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    pub records: Vec<StateRecord>,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<Vec<u8>>>,
}

impl EpisodeData {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

/// Writes `states.jsonl` and `cam<i>/<frame>.png` into a hidden sibling
/// folder, then renames it to `path`, replacing an older episode there. On
/// failure nothing is left behind. The parent folder must exist.
pub fn write_episode(data: &EpisodeData, path: &Path) -> Result<()> {
    for (c, frames) in data.frames.iter().enumerate() {
        if frames.len() != data.records.len() {
            return Err(PipelineError::Core(splatgen_core::Error::InvalidArgument(format!(
                "camera {c} has {} frames for {} states",
                frames.len(),
                data.records.len()
            ))));
        }
    }
    let tmp = partial_path(path);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    let written = fill(data, &tmp).and_then(|()| {
        if path.exists() {
            fs::remove_dir_all(path).map_err(|e| PipelineError::io(path, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
    });
    if written.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    written
}

fn fill(data: &EpisodeData, dir: &Path) -> Result<()> {
    write_states(&dir.join(STATES_FILE), &data.records)?;
    for (c, frames) in data.frames.iter().enumerate() {
        let cam_dir = dir.join(camera_dir_name(c));
        fs::create_dir(&cam_dir).map_err(|e| PipelineError::io(&cam_dir, e))?;
        for (k, rgb) in frames.iter().enumerate() {
            let p = cam_dir.join(frame_name(k));
            image::save_buffer(&p, rgb, data.width as u32, data.height as u32, image::ExtendedColorType::Rgb8).map_err(|e| match e {
                image::ImageError::IoError(io) => PipelineError::io(&p, io),
                other => PipelineError::Core(splatgen_core::Error::Image(other.to_string())),
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
    use splatgen_core::trajectory::{read_states, Action, DemoStep, ExpertDemo, Gripper};

    fn episode(n: usize, cams: usize) -> EpisodeData {
        let records = (0..n)
            .map(|k| {
                let t = k as f64;
                let step = DemoStep {
                    timestamp: t / 10.0,
                    q: vec![0.1 * t, -0.3 + 1e-7 * t, 1.0 / 3.0],
                    gripper: if k < n / 2 { Gripper::Open } else { Gripper::Closed },
                    ee_pose: Isometry3::from_parts(
                        Translation3::new(0.4 + 0.01 * t, -0.2, 0.3 + 1.0 / 7.0),
                        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.05 * t),
                    ),
                };
                let action = Action {
                    translation: [0.01, 0.0, 1e-9 * t],
                    rotation: [0.0, 0.0, 0.05],
                    gripper: step.gripper,
                };
                StateRecord::from_step(&step, Some(action))
            })
            .collect();
        let (width, height) = (5, 4);
        let frames = (0..cams)
            .map(|c| (0..n).map(|k| vec![(c * 40 + k) as u8; width * height * 3]).collect())
            .collect();
        EpisodeData {
            records,
            width,
            height,
            frames,
        }
    }

    #[test]
    fn ten_steps_give_ten_states_and_frames_per_camera() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        write_episode(&episode(10, 2), &out).unwrap();
        let text = fs::read_to_string(out.join(STATES_FILE)).unwrap();
        assert_eq!(text.lines().count(), 10);
        for c in 0..2 {
            let mut names: Vec<String> = fs::read_dir(out.join(camera_dir_name(c)))
                .unwrap()
                .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect();
            names.sort();
            assert_eq!(names, (0..10).map(frame_name).collect::<Vec<_>>());
        }
        let img = image::open(out.join("cam1").join(frame_name(3))).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (5, 4));
        assert!(img.pixels().all(|p| p.0 == [43, 43, 43]));
        assert!(!partial_path(&out).exists());
    }

    #[test]
    fn states_round_trip_through_the_demo_reader() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        let data = episode(10, 1);
        write_episode(&data, &out).unwrap();
        let back = read_states(&out.join(STATES_FILE)).unwrap();
        assert_eq!(back.len(), data.records.len());
        for (a, b) in data.records.iter().zip(&back) {
            assert_eq!(a.gripper, b.gripper);
            let pairs = a.q.iter().zip(&b.q).chain(a.ee_pose.iter().zip(&b.ee_pose));
            for (x, y) in pairs.chain([(&a.timestamp, &b.timestamp)]) {
                assert!((x - y).abs() < 1e-9);
            }
            let (aa, ba) = (a.action.unwrap(), b.action.unwrap());
            for (x, y) in aa.translation.iter().chain(&aa.rotation).zip(ba.translation.iter().chain(&ba.rotation)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let demo = ExpertDemo::load_dir(&out).unwrap();
        assert_eq!(demo.len(), 10);
        assert_eq!(demo.cameras(), ["cam0".to_string()]);
    }

    #[test]
    fn rewriting_replaces_the_old_episode() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        write_episode(&episode(10, 2), &out).unwrap();
        write_episode(&episode(3, 1), &out).unwrap();
        assert!(!out.join("cam1").exists());
        assert_eq!(fs::read_dir(out.join("cam0")).unwrap().count(), 3);
    }

    #[test]
    fn unwritable_path_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let out = blocker.join("ep");
        assert!(matches!(write_episode(&episode(4, 2), &out), Err(PipelineError::Io { .. })));
        assert!(!out.exists());
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(entries, vec![std::ffi::OsString::from("file")]);
    }

    #[test]
    fn frame_count_mismatch_is_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ep");
        let mut data = episode(4, 2);
        data.frames[1].pop();
        assert!(write_episode(&data, &out).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
