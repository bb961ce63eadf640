use std::fs;
use std::path::Path;

use super::{Apr3dModel, AprModel, LbfModel, Pipeline, PoseModel};
use crate::error::{Error, Result};
use crate::geom::Shape2D;
use crate::imgproc::{HogVariant, PhogConfig};

/// Version of the bundle directory layout.
pub const BUNDLE_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.txt";
const REFERENCE: &str = "reference.txt";
const MODEL: &str = "model.bin";

/// Ordered `key = value` metadata stored as `manifest.txt`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }
}

fn describe_phog(p: &PhogConfig) -> String {
    let levels: Vec<String> = p.levels.iter().map(|l| l.to_string()).collect();
    let hog = match p.hog.variant {
        HogVariant::Basic => "basic",
        HogVariant::Extended => "extended",
    };
    format!("patch={} levels={} hog={hog}", p.patch_side, levels.join(","))
}

/// One `x y` line per landmark in frame coordinates, printed with the
/// shortest representation that parses back to the same value.
fn format_reference(shape: &Shape2D) -> String {
    shape
        .points()
        .iter()
        .map(|p| format!("{:?} {:?}\n", p.x, p.y))
        .collect()
}

fn parse_reference(text: &str, path: &Path) -> Result<Shape2D> {
    let mut flat = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, i + 1, format!("bad coordinate line `{line}`")))?;
        if xy.len() != 2 {
            return Err(Error::parse(path, i + 1, "expected `x y`"));
        }
        flat.extend(xy);
    }
    Shape2D::from_flat(&flat).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// A trained model bundle: pipeline stages, optional head-pose model and
/// the manifest describing them. On disk it is a directory holding
/// `manifest.txt`, `reference.txt` and one `<stage>/model.bin` per stage
/// (`apr`, `3dapr`, `lbf`, `pose`).
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub pipeline: Option<Pipeline>,
    pub pose: Option<PoseModel>,
}

impl Bundle {
    pub fn new(pipeline: Option<Pipeline>, pose: Option<PoseModel>) -> Self {
        Bundle {
            manifest: Manifest::default(),
            pipeline,
            pose,
        }
    }

    fn stage_list(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if let Some(p) = &self.pipeline {
            if p.apr.is_some() {
                v.push("apr");
            }
            if p.apr3d.is_some() {
                v.push("3dapr");
            }
            if p.lbf.is_some() {
                v.push("lbf");
            }
        }
        if self.pose.is_some() {
            v.push("pose");
        }
        v
    }

    /// Writes the bundle, replacing stage files already present in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = Manifest::default();
        manifest.set("format_version", BUNDLE_VERSION.to_string());
        manifest.set("stages", self.stage_list().join(","));
        let write = |stage: &str, bytes: Vec<u8>| -> Result<()> {
            let d = dir.join(stage);
            fs::create_dir_all(&d)?;
            fs::write(d.join(MODEL), bytes)?;
            Ok(())
        };
        if let Some(p) = &self.pipeline {
            manifest.set("landmarks", p.reference.len().to_string());
            let scheme = if p.reference.len() == 68 { "ibug68" } else { "custom" };
            manifest.set("landmark_scheme", scheme);
            fs::write(dir.join(REFERENCE), format_reference(&p.reference))?;
            if let Some(m) = &p.apr {
                manifest.set("apr.features", describe_phog(&m.phog));
                write("apr", m.to_bytes())?;
            }
            if let Some(m) = &p.apr3d {
                manifest.set("3dapr.features", describe_phog(&m.phog));
                write("3dapr", m.to_bytes())?;
            }
            if let Some(m) = &p.lbf {
                manifest.set("lbf.features", describe_phog(&m.phog));
                write("lbf", m.to_bytes())?;
            }
        }
        if let Some(m) = &self.pose {
            manifest.set("pose.features", describe_phog(&m.phog));
            write("pose", m.to_bytes())?;
        }
        for (k, v) in self.manifest.entries() {
            if manifest.get(k).is_none() {
                manifest.set(k, v.clone());
            }
        }
        fs::write(dir.join(MANIFEST), manifest.to_text())?;
        Ok(())
    }

    /// Reads the stages listed in the manifest.
    pub fn load(dir: &Path) -> Result<Bundle> {
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::parse(&mpath, 0, e.to_string()))?;
        let manifest = Manifest::parse(&text, &mpath)?;
        match manifest.get("format_version") {
            Some(v) if v == BUNDLE_VERSION.to_string() => {}
            other => {
                return Err(Error::Format(format!(
                    "{}: unsupported bundle version {other:?}",
                    dir.display()
                )))
            }
        }
        let stages: Vec<&str> = manifest
            .get("stages")
            .unwrap_or("")
            .split(',')
            .filter(|s| !s.is_empty())
            .collect();
        let read = |stage: &str| fs::read(dir.join(stage).join(MODEL));
        let has = |s: &str| stages.contains(&s);
        let pipeline = if has("apr") || has("3dapr") || has("lbf") || dir.join(REFERENCE).is_file() {
            let rpath = dir.join(REFERENCE);
            let reference = parse_reference(&fs::read_to_string(&rpath)?, &rpath)?;
            let p = Pipeline {
                apr: has("apr")
                    .then(|| read("apr").map_err(Error::from).and_then(|b| AprModel::from_bytes(&b)))
                    .transpose()?,
                apr3d: has("3dapr")
                    .then(|| {
                        read("3dapr")
                            .map_err(Error::from)
                            .and_then(|b| Apr3dModel::from_bytes(&b))
                    })
                    .transpose()?,
                lbf: has("lbf")
                    .then(|| read("lbf").map_err(Error::from).and_then(|b| LbfModel::from_bytes(&b)))
                    .transpose()?,
                reference,
            };
            Some(p)
        } else {
            None
        };
        let pose = has("pose")
            .then(|| {
                read("pose")
                    .map_err(Error::from)
                    .and_then(|b| PoseModel::from_bytes(&b))
            })
            .transpose()?;
        for s in &stages {
            if !["apr", "3dapr", "lbf", "pose"].contains(s) {
                return Err(Error::Format(format!("unknown stage `{s}` in manifest")));
            }
        }
        Ok(Bundle {
            manifest,
            pipeline,
            pose,
        })
    }

    /// Loads `dir` when it holds a bundle, otherwise starts an empty one.
    pub fn load_or_default(dir: &Path) -> Result<Bundle> {
        if dir.join(MANIFEST).is_file() {
            Self::load(dir)
        } else {
            Ok(Bundle::new(None, None))
        }
    }
}
