use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, Scene, FRAME_HEIGHT, FRAME_WIDTH};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraIntrinsics, DepthMap, Pose};

/// Stored depth unit: millimeters per meter.
pub const DEPTH_SCALE_MM: f64 = 1000.0;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    scene_id: String,
    class_names: Vec<String>,
    boxes: Vec<BoxRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRecord {
    center: [f64; 3],
    size: [f64; 3],
    class_id: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CamFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

fn depth_name(i: usize) -> String {
    format!("frame_{i:04}.depth")
}

fn cam_name(i: usize) -> String {
    format!("frame_{i:04}.cam.json")
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::ingest(path, e.to_string()))
}

/// Writes `scene` as `meta.json` plus one depth raster and camera file per frame.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::ingest(dir, e.to_string()))?;
    let meta = MetaFile {
        scene_id: scene.id.clone(),
        class_names: scene.class_names.clone(),
        boxes: scene.gt.iter().map(|b| BoxRecord { center: b.center, size: b.size, class_id: b.class_id }).collect(),
    };
    write(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    for f in &scene.frames {
        let mut bytes = Vec::with_capacity(f.depth.data.len() * 2);
        for d in &f.depth.data {
            let mm = (d * DEPTH_SCALE_MM).round();
            if mm > u16::MAX as f64 {
                return Err(Error::Validation(format!("depth {d} m exceeds the 16-bit millimeter range")));
            }
            bytes.extend_from_slice(&(mm as u16).to_le_bytes());
        }
        write(&dir.join(depth_name(f.index)), &bytes)?;
        let k = &f.intrinsics;
        let cam = CamFile {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            r: f.pose.rotation_row_major(),
            t: f.pose.translation(),
        };
        write(&dir.join(cam_name(f.index)), serde_json::to_string_pretty(&cam)?.as_bytes())?;
    }
    Ok(())
}

/// Reads a scene directory, converting depth to meters and resizing every
/// raster to the standard 320×240 by nearest neighbor.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::ingest(&meta_path, e.to_string()))?;
    let meta: MetaFile = serde_json::from_str(&text).map_err(|e| Error::ingest(&meta_path, e.to_string()))?;
    let gt: Vec<Box3D> =
        meta.boxes.iter().map(|b| Box3D::new(b.center, b.size, b.class_id, 1.0)).collect();

    let mut frames = Vec::new();
    loop {
        let i = frames.len();
        let cam_path = dir.join(cam_name(i));
        if !cam_path.exists() {
            break;
        }
        let text = fs::read_to_string(&cam_path).map_err(|e| Error::ingest(&cam_path, e.to_string()))?;
        let cam: CamFile = serde_json::from_str(&text).map_err(|e| Error::ingest(&cam_path, e.to_string()))?;
        let intr = CameraIntrinsics::new(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
            .map_err(|e| Error::ingest(&cam_path, e.to_string()))?;
        let pose = Pose::from_parts(cam.r, cam.t)
            .map_err(|e| Error::Validation(format!("{}: {e}", cam_path.display())))?;

        let depth_path = dir.join(depth_name(i));
        let raw = fs::read(&depth_path).map_err(|e| Error::ingest(&depth_path, e.to_string()))?;
        if raw.len() != 2 * cam.width * cam.height {
            return Err(Error::ingest(
                &depth_path,
                format!("{} bytes, expected {} for {}x{}", raw.len(), 2 * cam.width * cam.height, cam.width, cam.height),
            ));
        }
        let data = raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / DEPTH_SCALE_MM)
            .collect();
        let depth = DepthMap::new(cam.width, cam.height, data)?;
        let (depth, intr) = if cam.width != FRAME_WIDTH || cam.height != FRAME_HEIGHT {
            (depth.resize_nearest(FRAME_WIDTH, FRAME_HEIGHT), intr.rescaled(FRAME_WIDTH, FRAME_HEIGHT))
        } else {
            (depth, intr)
        };
        frames.push(Frame { depth, intrinsics: intr, pose, index: i });
    }
    let scene = Scene { id: meta.scene_id, class_names: meta.class_names, frames, gt };
    scene.validate().map_err(|e| match e {
        Error::EmptyScene => Error::ingest(dir.join(cam_name(0)), "no frames found"),
        other => other,
    })?;
    Ok(scene)
}
