//! Dataset ingestion: the TUM RGB-D directory layout and the in-memory
//! sequence type shared with the synthetic generator.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::image::{ColorImage, DepthImage, ImageBuf};
use crate::scene::{CameraFrame, CameraIntrinsics, PoseSE3};

/// Raw 16-bit depth units per meter in TUM recordings.
pub const TUM_DEPTH_SCALE: f64 = 5000.0;
/// Maximum timestamp gap for rgb/depth/ground-truth association.
pub const ASSOCIATION_WINDOW: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct DatasetSequence {
    pub frames: Vec<CameraFrame>,
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera poses aligned 1:1 with `frames`, when available.
    pub ground_truth_poses: Option<Vec<PoseSE3>>,
    pub depth_scale: f64,
    pub timestamps: Vec<f64>,
}

impl DatasetSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::DatasetFormat {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// (timestamp, remainder-of-line tokens)
fn parse_stamped_lines(path: &Path) -> Result<Vec<(f64, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| format_err(path, e.to_string()))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let stamp: f64 = tokens
            .next()
            .unwrap()
            .parse()
            .map_err(|_| format_err(path, format!("bad timestamp on line {}", ln + 1)))?;
        out.push((stamp, tokens.map(str::to_owned).collect()));
    }
    Ok(out)
}

/// Index of the entry with the nearest timestamp, if within the window.
fn nearest_within(stamps: &[f64], t: f64, window: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in stamps.iter().enumerate() {
        let gap = (s - t).abs();
        if gap <= window && best.map_or(true, |(_, g)| gap < g) {
            best = Some((i, gap));
        }
    }
    best.map(|(i, _)| i)
}

fn load_rgb_png(path: &Path) -> Result<ColorImage> {
    let img = image::open(path)
        .map_err(|e| format_err(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width(), img.height());
    let mut out = ColorImage::black(w, h);
    for (x, y, px) in img.enumerate_pixels() {
        let i = out.idx(x, y);
        out.data[i] = Vector3::new(
            px[0] as f64 / 255.0,
            px[1] as f64 / 255.0,
            px[2] as f64 / 255.0,
        );
    }
    Ok(out)
}

fn load_depth_png(path: &Path, depth_scale: f64) -> Result<DepthImage> {
    let img = image::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(d) => d,
        other => other.to_luma16(),
    };
    let (w, h) = (img.width(), img.height());
    let mut out = ImageBuf::filled(w, h, 0.0);
    for (x, y, px) in img.enumerate_pixels() {
        let i = out.idx(x, y);
        out.data[i] = px[0] as f64 / depth_scale;
    }
    Ok(out)
}

/// Default TUM Freiburg intrinsics, overridden by an optional
/// `calibration.txt` (one line: fx fy cx cy) in the sequence root.
fn tum_intrinsics(root: &Path, width: u32, height: u32) -> Result<CameraIntrinsics> {
    let calib = root.join("calibration.txt");
    if calib.exists() {
        let text = fs::read_to_string(&calib).map_err(|e| format_err(&calib, e.to_string()))?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format_err(&calib, "non-numeric entry")))
            .collect::<Result<_>>()?;
        if vals.len() != 4 {
            return Err(format_err(&calib, "expected 4 values: fx fy cx cy"));
        }
        return Ok(CameraIntrinsics::new(vals[0], vals[1], vals[2], vals[3], width, height));
    }
    Ok(CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, width, height))
}

/// Load a TUM RGB-D sequence: `rgb.txt` and `depth.txt` associated by
/// nearest timestamp within 20 ms, depth scaled to meters, and ground-truth
/// poses (camera-to-world in the file, stored as world-to-camera) attached
/// when `groundtruth.txt` exists. Frames that cannot be associated are
/// dropped.
pub fn load_tum(root: &Path, max_frames: Option<usize>) -> Result<DatasetSequence> {
    let rgb_list = parse_stamped_lines(&root.join("rgb.txt"))?;
    let depth_list = parse_stamped_lines(&root.join("depth.txt"))?;
    let gt_path = root.join("groundtruth.txt");
    let gt_list = if gt_path.exists() {
        Some(parse_stamped_lines(&gt_path)?)
    } else {
        None
    };

    let depth_stamps: Vec<f64> = depth_list.iter().map(|(t, _)| *t).collect();
    let gt_stamps: Option<Vec<f64>> = gt_list
        .as_ref()
        .map(|l| l.iter().map(|(t, _)| *t).collect());

    let mut frames = Vec::new();
    let mut poses = Vec::new();
    let mut timestamps = Vec::new();
    let mut depth_used = vec![false; depth_list.len()];
    let mut intrinsics: Option<CameraIntrinsics> = None;

    for (frame_id, (t_rgb, rgb_tokens)) in rgb_list.iter().enumerate() {
        if let Some(m) = max_frames {
            if frames.len() >= m {
                break;
            }
        }
        let Some(di) = nearest_within(&depth_stamps, *t_rgb, ASSOCIATION_WINDOW) else {
            continue;
        };
        if depth_used[di] {
            continue;
        }
        let gt_pose = match (&gt_list, &gt_stamps) {
            (Some(gt), Some(stamps)) => {
                let Some(gi) = nearest_within(stamps, *t_rgb, ASSOCIATION_WINDOW) else {
                    continue; // ground truth present but none close enough
                };
                let v = &gt[gi].1;
                if v.len() != 7 {
                    return Err(format_err(&gt_path, "pose lines need tx ty tz qx qy qz qw"));
                }
                let nums: Vec<f64> = v
                    .iter()
                    .map(|s| s.parse().map_err(|_| format_err(&gt_path, "non-numeric pose")))
                    .collect::<Result<_>>()?;
                let cam_to_world = PoseSE3::new(
                    UnitQuaternion::from_quaternion(Quaternion::new(
                        nums[6], nums[3], nums[4], nums[5],
                    )),
                    Vector3::new(nums[0], nums[1], nums[2]),
                );
                Some(cam_to_world.inverse())
            }
            _ => None,
        };

        let rgb_rel = rgb_tokens
            .first()
            .ok_or_else(|| format_err(&root.join("rgb.txt"), "missing image path"))?;
        let depth_rel = depth_list[di]
            .1
            .first()
            .ok_or_else(|| format_err(&root.join("depth.txt"), "missing image path"))?;
        let color = load_rgb_png(&root.join(PathBuf::from(rgb_rel)))?;
        let depth = load_depth_png(&root.join(PathBuf::from(depth_rel)), TUM_DEPTH_SCALE)?;
        if color.width != depth.width || color.height != depth.height {
            return Err(format_err(
                root,
                format!(
                    "frame {frame_id}: rgb {}x{} vs depth {}x{}",
                    color.width, color.height, depth.width, depth.height
                ),
            ));
        }
        depth_used[di] = true;
        if intrinsics.is_none() {
            intrinsics = Some(tum_intrinsics(root, color.width, color.height)?);
        }
        frames.push(CameraFrame {
            frame_id: frame_id as u64,
            color_image: color,
            depth_image: depth,
        });
        timestamps.push(*t_rgb);
        if let Some(p) = gt_pose {
            poses.push(p);
        }
    }

    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ground_truth_poses = if gt_list.is_some() && poses.len() == frames.len() {
        Some(poses)
    } else {
        None
    };
    Ok(DatasetSequence {
        intrinsics: intrinsics.unwrap(),
        frames,
        ground_truth_poses,
        depth_scale: TUM_DEPTH_SCALE,
        timestamps,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fixture_loads_with_association_rules() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_tum_fixture(dir.path(), true).unwrap();
        let seq = load_tum(dir.path(), None).unwrap();
        // Frame 2's depth stamp is 30 ms away, outside the window.
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.frames[0].color_image.width, 8);
        // Raw depth 5000 is exactly one meter.
        assert_relative_eq!(seq.frames[0].depth_image.data[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(seq.frames[1].depth_image.data[0], 1.1, epsilon = 1e-12);

        let gt = seq.ground_truth_poses.as_ref().unwrap();
        assert_eq!(gt.len(), 2);
        // File stores camera-to-world; identity rotation with tx = 0.1 becomes
        // translation -0.1 in the world-to-camera convention.
        assert_relative_eq!(gt[1].translation.x, -0.1, epsilon = 1e-12);
    }

    #[test]
    fn max_frames_truncates() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_tum_fixture(dir.path(), false).unwrap();
        let seq = load_tum(dir.path(), Some(1)).unwrap();
        assert_eq!(seq.len(), 1);
        assert!(seq.ground_truth_poses.is_none());
    }

    #[test]
    fn missing_listing_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        match load_tum(dir.path(), None) {
            Err(Error::DatasetFormat { path, .. }) => assert!(path.contains("rgb.txt")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn all_pairs_out_of_window_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_tum_fixture(dir.path(), false).unwrap();
        // Rewrite depth.txt with stamps 1 s away from every rgb stamp.
        let text = std::fs::read_to_string(dir.path().join("depth.txt")).unwrap();
        let shifted: String = text
            .lines()
            .map(|l| {
                let mut it = l.split_whitespace();
                let t: f64 = it.next().unwrap().parse().unwrap();
                format!("{:.6} {}\n", t + 1.0, it.next().unwrap())
            })
            .collect();
        std::fs::write(dir.path().join("depth.txt"), shifted).unwrap();
        assert!(matches!(load_tum(dir.path(), None), Err(Error::EmptyDataset)));
    }
}
