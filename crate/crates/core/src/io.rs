//! Frame directories, track files and detection files.
//!
//! Tracks and detections are JSON lines. A detections file starts with a
//! header object naming the detector, config hash, warm-up length and frame
//! count, followed by one object per detection.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::DetectorKind;
use crate::error::{Result, StmdError};
use crate::eval::Detection;
use crate::pixelgrid::Grid2D;
use crate::synthgen::TrackPoint;

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| StmdError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| StmdError::io(path, e))?;
    tmp.persist(path).map_err(|e| StmdError::io(path, e.error))?;
    Ok(())
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary 8-bit PGM bytes of a grid with values in `[0, 1]`.
pub fn encode_pgm(grid: &Grid2D) -> Vec<u8> {
    let (h, w) = grid.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(grid.as_slice().iter().map(|&v| to_u8(v)));
    out
}

pub fn write_pgm(path: &Path, grid: &Grid2D) -> Result<()> {
    atomic_write(path, &encode_pgm(grid))
}

/// Reads an 8-bit grayscale PGM or PNG into `[0, 1]`.
pub fn read_frame(path: &Path) -> Result<Grid2D> {
    let img = image::ImageReader::open(path)
        .map_err(|e| StmdError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| StmdError::io(path, e))?
        .decode()
        .map_err(|e| StmdError::format(path, e.to_string()))?;
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    Grid2D::from_vec(h, w, luma.into_raw().into_iter().map(|b| b as f32 / 255.0).collect())
}

/// `.pgm` and `.png` files of a directory in lexicographic order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| StmdError::io(dir, e))? {
        let path = entry.map_err(|e| StmdError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "png")) && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// All frames of a directory; they must share one size.
pub fn read_frames(dir: &Path) -> Result<Vec<Grid2D>> {
    let mut frames: Vec<Grid2D> = Vec::new();
    for path in list_frames(dir)? {
        let f = read_frame(&path)?;
        if let Some(first) = frames.first() {
            if first.shape() != f.shape() {
                return Err(StmdError::format(
                    &path,
                    format!("frame is {:?}, earlier frames are {:?}", f.shape(), first.shape()),
                ));
            }
        }
        frames.push(f);
    }
    Ok(frames)
}

/// Writes `frame_00000.pgm`, `frame_00001.pgm`, ... into `dir`.
pub fn write_frames(dir: &Path, frames: &[Grid2D]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| StmdError::io(dir, e))?;
    let digits = frames.len().saturating_sub(1).to_string().len().max(5);
    for (i, f) in frames.iter().enumerate() {
        write_pgm(&dir.join(format!("frame_{i:0digits$}.pgm")), f)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    frame_index: usize,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    heading_radians: f64,
}

pub fn encode_track(track: &[TrackPoint]) -> String {
    let mut s = String::new();
    for p in track {
        let rec = TrackRecord {
            frame_index: p.frame_index,
            x: p.center[0],
            y: p.center[1],
            vx: p.velocity[0],
            vy: p.velocity[1],
            heading_radians: p.heading,
        };
        s.push_str(&serde_json::to_string(&rec).expect("track record serializes"));
        s.push('\n');
    }
    s
}

pub fn write_track(path: &Path, track: &[TrackPoint]) -> Result<()> {
    atomic_write(path, encode_track(track).as_bytes())
}

pub fn parse_track(path: &Path, text: &str) -> Result<Vec<TrackPoint>> {
    let mut track = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: TrackRecord =
            serde_json::from_str(line).map_err(|e| StmdError::format(path, format!("line {}: {e}", n + 1)))?;
        if r.frame_index != track.len() {
            return Err(StmdError::format(
                path,
                format!("line {}: frame_index {} out of sequence", n + 1, r.frame_index),
            ));
        }
        track.push(TrackPoint {
            frame_index: r.frame_index,
            center: [r.x, r.y],
            velocity: [r.vx, r.vy],
            heading: r.heading_radians,
        });
    }
    Ok(track)
}

pub fn read_track(path: &Path) -> Result<Vec<TrackPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| StmdError::io(path, e))?;
    parse_track(path, &text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsHeader {
    pub detector: DetectorKind,
    pub config_hash: String,
    pub warmup_frames: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    frame: usize,
    x: f64,
    y: f64,
    score: f64,
    direction_deg: Option<f64>,
}

pub fn encode_detections(header: &DetectionsHeader, per_frame: &[Vec<Detection>]) -> String {
    let mut s = serde_json::to_string(header).expect("header serializes");
    s.push('\n');
    for d in per_frame.iter().flatten() {
        let rec = DetectionRecord {
            frame: d.frame_index,
            x: d.position[0],
            y: d.position[1],
            score: d.score,
            direction_deg: d.direction.map(f64::to_degrees),
        };
        s.push_str(&serde_json::to_string(&rec).expect("detection serializes"));
        s.push('\n');
    }
    s
}

/// Header and detections grouped by frame (`header.frames` groups).
pub fn parse_detections(path: &Path, text: &str) -> Result<(DetectionsHeader, Vec<Vec<Detection>>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| StmdError::format(path, "missing header line"))?;
    let header: DetectionsHeader =
        serde_json::from_str(first).map_err(|e| StmdError::format(path, format!("header: {e}")))?;
    let mut per_frame = vec![Vec::new(); header.frames];
    for (n, line) in lines {
        let r: DetectionRecord =
            serde_json::from_str(line).map_err(|e| StmdError::format(path, format!("line {}: {e}", n + 1)))?;
        let slot = per_frame.get_mut(r.frame).ok_or_else(|| {
            StmdError::format(
                path,
                format!(
                    "line {}: frame {} beyond the {} declared frames",
                    n + 1,
                    r.frame,
                    header.frames
                ),
            )
        })?;
        slot.push(Detection {
            frame_index: r.frame,
            position: [r.x, r.y],
            score: r.score,
            direction: r.direction_deg.map(f64::to_radians),
        });
    }
    Ok((header, per_frame))
}

pub fn read_detections(path: &Path) -> Result<(DetectionsHeader, Vec<Vec<Detection>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| StmdError::io(path, e))?;
    parse_detections(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::from_fn(3, 4, |r, c| ((r * 4 + c) * 20) as f32 / 255.0);
        let p = dir.path().join("a.pgm");
        write_pgm(&p, &g).unwrap();
        let back = read_frame(&p).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn frames_sort_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.pgm", "a.pgm", "c.txt"] {
            std::fs::write(dir.path().join(name), encode_pgm(&Grid2D::zeros(2, 2))).unwrap();
        }
        let names: Vec<_> = list_frames(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["a.pgm", "b.pgm"]);
    }

    #[test]
    fn detections_round_trip() {
        let header = DetectionsHeader {
            detector: DetectorKind::StmdNet,
            config_hash: "abc".into(),
            warmup_frames: 2,
            frames: 3,
        };
        let per_frame = vec![
            vec![],
            vec![Detection {
                frame_index: 1,
                position: [4.0, 5.0],
                score: 0.25,
                direction: Some(1.0),
            }],
            vec![Detection {
                frame_index: 2,
                position: [1.0, 2.0],
                score: 3.5,
                direction: None,
            }],
        ];
        let text = encode_detections(&header, &per_frame);
        let (h, back) = parse_detections(Path::new("x"), &text).unwrap();
        assert_eq!(h, header);
        assert_eq!(back[2], per_frame[2]);
        assert!((back[1][0].direction.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn track_round_trip() {
        let track = vec![TrackPoint {
            frame_index: 0,
            center: [1.5, 2.25],
            velocity: [0.5, -1.0],
            heading: 5.0,
        }];
        assert_eq!(parse_track(Path::new("t"), &encode_track(&track)).unwrap(), track);
    }
}
