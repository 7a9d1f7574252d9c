//! Plain-text `key=value` configuration files.
//!
//! One `key=value` pair per line; `#` starts a comment; blank lines are
//! ignored; keys may repeat (scene object lists rely on this). Camera files
//! carry intrinsics as `fx, fy, cx, cy, width, height` and the pose as 12
//! whitespace- or comma-separated floats (row-major 3x3 rotation, then the
//! translation), under the `pose` key.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CmfError, Result};
use crate::geometry::{Intrinsics, RigidPose};

/// Ordered key/value pairs from a config file.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    pairs: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CmfError::Format(format!(
                    "line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(KvFile { pairs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CmfError::io(path, e))?;
        KvFile::parse(&text).map_err(|e| match e {
            CmfError::Format(detail) => CmfError::parse(path, detail),
            other => other,
        })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| CmfError::Format(format!("missing required key {key:?}")))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        parse_f64(key, self.require(key)?)
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        v.parse().map_err(|_| {
            CmfError::Format(format!(
                "key {key:?}: expected an unsigned integer, got {v:?}"
            ))
        })
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| parse_f64(key, v)).transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| {
                    CmfError::Format(format!(
                        "key {key:?}: expected an unsigned integer, got {v:?}"
                    ))
                })
            })
            .transpose()
    }
}

pub fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| CmfError::Format(format!("key {key:?}: expected a number, got {v:?}")))
}

/// Split a list of floats separated by whitespace and/or commas.
pub fn parse_floats(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

/// Pose from 12 floats: row-major 3x3 rotation, then translation.
pub fn parse_pose(key: &str, v: &str) -> Result<RigidPose> {
    let f = parse_floats(key, v)?;
    if f.len() != 12 {
        return Err(CmfError::Format(format!(
            "key {key:?}: pose needs 12 floats, got {}",
            f.len()
        )));
    }
    RigidPose::new(
        [[f[0], f[1], f[2]], [f[3], f[4], f[5]], [f[6], f[7], f[8]]],
        [f[9], f[10], f[11]],
    )
}

pub fn intrinsics_from_kv(kv: &KvFile) -> Result<Intrinsics> {
    Intrinsics::new(
        kv.require_f64("fx")?,
        kv.require_f64("fy")?,
        kv.require_f64("cx")?,
        kv.require_f64("cy")?,
        kv.require_usize("width")?,
        kv.require_usize("height")?,
    )
}

/// Camera file: intrinsics plus an optional pose line.
pub fn read_camera_file(path: impl AsRef<Path>) -> Result<(Intrinsics, Option<RigidPose>)> {
    let kv = KvFile::load(&path)?;
    let intrinsics = intrinsics_from_kv(&kv)?;
    let pose = kv.get("pose").map(|v| parse_pose("pose", v)).transpose()?;
    Ok((intrinsics, pose))
}

pub fn format_pose(pose: &RigidPose) -> String {
    let mut s = String::new();
    for row in &pose.rotation {
        for v in row {
            let _ = write!(s, "{v} ");
        }
    }
    let t = &pose.translation;
    let _ = write!(s, "{} {} {}", t[0], t[1], t[2]);
    s
}

pub fn write_camera_file(
    path: impl AsRef<Path>,
    intrinsics: &Intrinsics,
    pose: Option<&RigidPose>,
) -> Result<()> {
    let mut text = format!(
        "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\n",
        intrinsics.fx,
        intrinsics.fy,
        intrinsics.cx,
        intrinsics.cy,
        intrinsics.width,
        intrinsics.height
    );
    if let Some(p) = pose {
        text.push_str(&format!("pose={}\n", format_pose(p)));
    }
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| CmfError::io(path, e))
}
