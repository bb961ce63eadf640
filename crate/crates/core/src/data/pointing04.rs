use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use walkdir::WalkDir;

use super::{face_name, is_image_file, AnnotatedFace, BBox, PoseLabel};
use crate::error::{Error, Result};

/// Fields encoded in a Pointing'04 file name, e.g. `personne01146+0-30.jpg`:
/// person 01, series 1, image 46, tilt +0, pan -30.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pointing04Name {
    pub person: u32,
    pub series: u32,
    pub index: u32,
    /// Vertical angle (pitch) in degrees.
    pub tilt: i32,
    /// Horizontal angle (yaw) in degrees.
    pub pan: i32,
}

fn pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^personne(\d{2})(\d)(\d+)([+\-\x{2212}]\d+)([+\-\x{2212}]\d+)\.(?i:jpe?g|png)$")
            .expect("valid regex")
    })
}

fn signed(s: &str) -> i32 {
    let v: i32 = s.trim_start_matches(['+', '-', '\u{2212}']).parse().unwrap_or(0);
    if s.starts_with(['-', '\u{2212}']) {
        -v
    } else {
        v
    }
}

/// Parses a Pointing'04 file name. Both ASCII `-` and U+2212 are accepted
/// as minus signs.
pub fn parse_pointing04_name(filename: &str) -> Result<Pointing04Name> {
    let caps = pattern()
        .captures(filename)
        .ok_or_else(|| Error::invalid(format!("`{filename}` is not a Pointing'04 image name")))?;
    let num = |i: usize| {
        caps[i]
            .parse::<u32>()
            .map_err(|_| Error::invalid(format!("bad number in `{filename}`")))
    };
    Ok(Pointing04Name {
        person: num(1)?,
        series: num(2)?,
        index: num(3)?,
        tilt: signed(&caps[4]),
        pan: signed(&caps[5]),
    })
}

/// Scans `root` recursively for Pointing'04 images. Boxes come from
/// `bboxes` (keyed by file name); images without an entry use the whole
/// image. Faces are returned sorted by file name.
pub fn load_pointing04(root: &Path, bboxes: &BTreeMap<String, BBox>) -> Result<Vec<(AnnotatedFace, Pointing04Name)>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        let path = entry.path();
        if !entry.file_type().is_file() || !is_image_file(path) {
            continue;
        }
        let name = face_name(path);
        let Ok(meta) = parse_pointing04_name(&name) else {
            continue;
        };
        let bbox = match bboxes.get(&name) {
            Some(b) => *b,
            None => {
                let (w, h) = image::image_dimensions(path)?;
                BBox::new(0.0, 0.0, w as f64, h as f64)?
            }
        };
        out.push((
            AnnotatedFace {
                name,
                image_path: Some(path.to_path_buf()),
                shape: None,
                bbox,
                pose: Some(PoseLabel {
                    yaw: meta.pan as f64,
                    pitch: meta.tilt as f64,
                }),
            },
            meta,
        ));
    }
    out.sort_by(|a, b| a.0.name.cmp(&b.0.name));
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "no Pointing'04 images under {}",
            root.display()
        )));
    }
    Ok(out)
}

/// Train/test index sets of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per recording session: fold `i` tests on the `i`-th distinct
/// series number and trains on the rest.
pub fn session_folds(names: &[Pointing04Name]) -> Vec<Fold> {
    let mut sessions: Vec<u32> = names.iter().map(|n| n.series).collect();
    sessions.sort_unstable();
    sessions.dedup();
    sessions
        .iter()
        .map(|&s| {
            let (test, train) = (0..names.len()).partition(|&i| names[i].series == s);
            Fold { train, test }
        })
        .collect()
}

/// `k` folds over a seeded random permutation of `0..n`; fold sizes differ
/// by at most one.
pub fn shuffled_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::invalid(format!("cannot make {k} folds from {n} items")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let mut test = perm[lo..hi].to_vec();
            let mut train: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
            test.sort_unstable();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect())
}
