use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use krfws::config::Config;
use krfws::data::{
    face_name, load_bboxes, load_image, load_landmark_face, load_list, load_pts, make_300w_splits, normalize_face,
    synth_faces, BBox, DatasetSplit, FaceImage, NormalizedFace, SplitName,
};
use krfws::geom::{MeanShape3D, Shape2D};
use krfws::par::{derive_seed, Executor};

use crate::{CliError, CliResult, LandmarkSource};

/// Seed stream of synthetic training faces.
pub const SYNTH_TRAIN_STREAM: u64 = 1;
/// Seed stream of synthetic evaluation faces, disjoint from training.
pub const SYNTH_TEST_STREAM: u64 = 2;

pub enum Item {
    File(PathBuf),
    Face(Box<FaceImage>),
}

/// One image of a dataset with the subset it is reported under.
pub struct Member {
    pub subset: String,
    pub item: Item,
}

impl Member {
    pub fn name(&self) -> String {
        match &self.item {
            Item::File(p) => face_name(p),
            Item::Face(f) => f.face.name.clone(),
        }
    }

    pub fn ground_truth(&self) -> CliResult<Shape2D> {
        match &self.item {
            Item::File(p) => Ok(load_pts(&p.with_extension("pts"))?),
            Item::Face(f) => f
                .face
                .shape
                .clone()
                .ok_or_else(|| CliError::Data(format!("{} has no annotation", f.face.name))),
        }
    }

    pub fn load(&self, bboxes: &BTreeMap<String, BBox>) -> CliResult<FaceImage> {
        match &self.item {
            Item::File(p) => Ok(load_landmark_face(p, bboxes)?),
            Item::Face(f) => Ok((**f).clone()),
        }
    }
}

/// File a prediction for image `name` is stored in.
pub fn prediction_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(Path::new(name).with_extension("pts"))
}

pub fn mean_shape(path: Option<&Path>) -> CliResult<MeanShape3D> {
    Ok(match path {
        Some(p) => MeanShape3D::load(p)?,
        None => MeanShape3D::builtin_68(),
    })
}

pub fn bboxes(path: Option<&Path>) -> CliResult<BTreeMap<String, BBox>> {
    Ok(match path {
        Some(p) => load_bboxes(p)?,
        None => BTreeMap::new(),
    })
}

fn files(subset: &str, paths: Vec<PathBuf>) -> Vec<Member> {
    paths
        .into_iter()
        .map(|p| Member {
            subset: subset.to_string(),
            item: Item::File(p),
        })
        .collect()
}

fn synthetic(count: usize, stream: u64, cfg: &Config, mean3d: &MeanShape3D) -> CliResult<Vec<Member>> {
    if count == 0 {
        return Err(CliError::Usage("--synth needs at least one face".into()));
    }
    Ok(synth_faces(count, derive_seed(cfg.seed, stream), mean3d, &cfg.synth)?
        .into_iter()
        .map(|f| Member {
            subset: "synthetic".into(),
            item: Item::Face(Box::new(f)),
        })
        .collect())
}

fn one_source(src: &LandmarkSource) -> CliResult<()> {
    let given = [src.w300.is_some(), src.list.is_some(), src.synth.is_some()];
    match given.iter().filter(|&&g| g).count() {
        1 => Ok(()),
        _ => Err(CliError::Usage("give exactly one of --w300, --list or --synth".into())),
    }
}

/// Training images: the 300-W training subsets, a list or synthetic faces.
pub fn training_members(src: &LandmarkSource, cfg: &Config, mean3d: &MeanShape3D) -> CliResult<Vec<Member>> {
    one_source(src)?;
    if let Some(root) = &src.w300 {
        return Ok(files("train", make_300w_splits(root)?.train));
    }
    if let Some(list) = &src.list {
        return Ok(files("train", load_list(list)?));
    }
    synthetic(src.synth.unwrap_or(0), SYNTH_TRAIN_STREAM, cfg, mean3d)
}

/// Evaluation images of `split`. Full 300-W evaluation lists the common
/// subset first, then the challenging one.
pub fn evaluation_members(
    src: &LandmarkSource,
    split: SplitName,
    cfg: &Config,
    mean3d: &MeanShape3D,
) -> CliResult<Vec<Member>> {
    one_source(src)?;
    if let Some(root) = &src.w300 {
        let s = make_300w_splits(root)?;
        let part = |d: DatasetSplit| files(d.name.as_str(), d.members);
        return match split {
            SplitName::Common => Ok(part(s.common)),
            SplitName::Challenging => Ok(part(s.challenging)),
            SplitName::Full => {
                let mut v = part(s.common);
                v.extend(part(s.challenging));
                Ok(v)
            }
            SplitName::Custom => Err(CliError::Usage("a custom split is read with --list".into())),
        };
    }
    if let Some(list) = &src.list {
        return Ok(files("custom", DatasetSplit::from_list(list)?.members));
    }
    synthetic(src.synth.unwrap_or(0), SYNTH_TEST_STREAM, cfg, mean3d)
}

/// Loads and normalizes the members; the raw images are dropped as soon as
/// they are resampled.
pub fn normalized(
    members: &[Member],
    bboxes: &BTreeMap<String, BBox>,
    exec: Executor,
) -> CliResult<Vec<NormalizedFace>> {
    log::info!("loading {} faces", members.len());
    exec.try_map(members.len(), |i| {
        let face = members[i].load(bboxes)?;
        Ok(normalize_face(&face)?)
    })
}

/// An unannotated image with its box (whole image without a box entry).
pub fn plain_face(path: &Path, bboxes: &BTreeMap<String, BBox>) -> CliResult<NormalizedFace> {
    let name = face_name(path);
    let image = load_image(path)?;
    let bbox = match bboxes.get(&name) {
        Some(b) => *b,
        None => {
            log::warn!("{name}: no box given, using the whole image");
            BBox::new(0.0, 0.0, image.width() as f64, image.height() as f64)?
        }
    };
    let face = FaceImage {
        image,
        face: krfws::data::AnnotatedFace {
            name,
            image_path: Some(path.to_path_buf()),
            shape: None,
            bbox,
            pose: None,
        },
    };
    Ok(normalize_face(&face)?)
}
