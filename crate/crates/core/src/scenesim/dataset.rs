//! Line-delimited JSON datasets, one scene per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{quantize, DomainName, DomainTag, LidarPoint, Scene};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, CameraModel};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDomain {
    name: DomainName,
    severity: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireBox {
    c: [f64; 3],
    s: [f64; 3],
    yaw: f64,
    cls: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireCamera {
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    hw: [u32; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireScene {
    id: String,
    domain: WireDomain,
    gt: Vec<WireBox>,
    pts: Vec<[f64; 4]>,
    cams: Vec<WireCamera>,
}

fn q3(v: &Vector3<f64>) -> [f64; 3] {
    [quantize(v.x), quantize(v.y), quantize(v.z)]
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    std::array::from_fn(|i| quantize(m[(i / 3, i % 3)]))
}

impl From<&Scene> for WireScene {
    fn from(s: &Scene) -> Self {
        WireScene {
            id: s.id.clone(),
            domain: WireDomain {
                name: s.domain.name,
                severity: quantize(s.domain.severity),
            },
            gt: s
                .gt_boxes
                .iter()
                .map(|b| WireBox {
                    c: q3(&b.center),
                    s: q3(&b.size),
                    yaw: quantize(b.yaw),
                    cls: b.class_id,
                })
                .collect(),
            pts: s
                .points
                .iter()
                .map(|p| {
                    let [x, y, z] = q3(&p.position);
                    [x, y, z, quantize(p.intensity)]
                })
                .collect(),
            cams: s
                .cameras
                .iter()
                .map(|c| WireCamera {
                    k: row_major(c.intrinsics()),
                    r: row_major(c.rotation()),
                    t: q3(c.translation()),
                    hw: [c.height(), c.width()],
                })
                .collect(),
        }
    }
}

impl WireScene {
    fn into_scene(self) -> Result<Scene> {
        let domain = DomainTag::new(self.domain.name, self.domain.severity)?;
        let gt_boxes = self
            .gt
            .into_iter()
            .map(|b| Box3D::new(Vector3::from(b.c), Vector3::from(b.s), b.yaw, 1.0, b.cls))
            .collect::<Result<Vec<_>>>()?;
        let points = self
            .pts
            .into_iter()
            .map(|[x, y, z, i]| LidarPoint {
                position: Vector3::new(x, y, z),
                intensity: i,
            })
            .collect();
        let cameras = self
            .cams
            .into_iter()
            .map(|c| {
                CameraModel::new(
                    Matrix3::from_row_slice(&c.k),
                    Matrix3::from_row_slice(&c.r),
                    Vector3::from(c.t),
                    c.hw[0],
                    c.hw[1],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            id: self.id,
            gt_boxes,
            points,
            cameras,
            domain,
        })
    }
}

/// Serializes one scene to a single JSON line (no trailing newline).
pub(crate) fn scene_to_line(scene: &Scene) -> String {
    serde_json::to_string(&WireScene::from(scene)).expect("scene serialization is infallible")
}

/// Writes one JSON scene per line, creating parent directories as needed.
pub fn write_dataset(scenes: &[Scene], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in scenes {
        w.write_all(scene_to_line(s).as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub(crate) fn parse_dataset(text: &str) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            scene: scenes.len(),
            offset: start,
            message,
        };
        let wire: WireScene = serde_json::from_str(body).map_err(|e| parse_err(e.to_string()))?;
        scenes.push(wire.into_scene().map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenesim::{apply_domain, generate_scene, SimConfig};

    #[test]
    fn round_trip_is_exact() {
        let cfg = SimConfig::default();
        let scenes: Vec<Scene> = (0..10)
            .map(|i| {
                let s = generate_scene(&cfg, i).unwrap();
                apply_domain(&s, DomainTag::new(DomainName::ALL[i as usize % 4], 0.6).unwrap(), i)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&scenes, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), scenes);
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        write_dataset(&[], &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 0);
        assert!(read_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn truncated_file_names_line() {
        let cfg = SimConfig::default();
        let scenes: Vec<Scene> = (0..3).map(|i| generate_scene(&cfg, i).unwrap()).collect();
        let text: String = scenes.iter().map(|s| scene_to_line(s) + "\n").collect();
        let cut = &text[..text.len() - 40];
        let second_line_start = scene_to_line(&scenes[0]).len() + scene_to_line(&scenes[1]).len() + 2;
        match parse_dataset(cut) {
            Err(Error::Parse { line, scene, offset, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(scene, 2);
                assert_eq!(offset, second_line_start);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_camera_is_a_parse_error() {
        let s = generate_scene(&SimConfig::default(), 0).unwrap();
        let line = scene_to_line(&s).replacen("\"hw\":[96,160]", "\"hw\":[0,160]", 1);
        assert!(matches!(parse_dataset(&line), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn wire_field_names() {
        let s = generate_scene(&SimConfig::default(), 0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&scene_to_line(&s)).unwrap();
        for key in ["id", "domain", "gt", "pts", "cams"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["domain"]["name"], "source");
        let cam = &v["cams"][0];
        assert_eq!(cam["K"].as_array().unwrap().len(), 9);
        assert_eq!(cam["hw"], serde_json::json!([96, 160]));
        let gt = &v["gt"][0];
        assert!(gt.get("c").is_some() && gt.get("s").is_some() && gt.get("yaw").is_some() && gt.get("cls").is_some());
        assert_eq!(v["pts"][0].as_array().unwrap().len(), 4);
    }
}
