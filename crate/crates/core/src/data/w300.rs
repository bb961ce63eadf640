use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{is_image_file, load_list};
use crate::error::{Error, Result};

/// Expected image counts of the standard 300-W packaging.
pub const W300_TRAIN: usize = 3148;
pub const W300_COMMON: usize = 554;
pub const W300_CHALLENGING: usize = 135;

/// Evaluation subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Common,
    Challenging,
    Full,
    Custom,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Common => "common",
            SplitName::Challenging => "challenging",
            SplitName::Full => "full",
            SplitName::Custom => "custom",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "common" => Ok(SplitName::Common),
            "challenging" => Ok(SplitName::Challenging),
            "full" => Ok(SplitName::Full),
            "custom" => Ok(SplitName::Custom),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub members: Vec<PathBuf>,
}

impl DatasetSplit {
    /// A custom split holding exactly the images named in a list file.
    pub fn from_list(path: &Path) -> Result<Self> {
        Ok(DatasetSplit {
            name: SplitName::Custom,
            members: load_list(path)?,
        })
    }
}

/// The 300-W protocol: training on AFW and the HELEN/LFPW training sets,
/// testing on the HELEN/LFPW test sets (common) and IBUG (challenging).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct W300Splits {
    pub train: Vec<PathBuf>,
    pub common: DatasetSplit,
    pub challenging: DatasetSplit,
}

impl W300Splits {
    /// Common followed by challenging.
    pub fn full(&self) -> DatasetSplit {
        DatasetSplit {
            name: SplitName::Full,
            members: self
                .common
                .members
                .iter()
                .chain(&self.challenging.members)
                .cloned()
                .collect(),
        }
    }
}

/// Annotated images (those with a sibling `.pts`) below `dir`, sorted.
/// A missing directory yields an empty list.
fn annotated_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        log::warn!("{} not found; its subset is empty", dir.display());
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        let p = entry.path();
        if entry.file_type().is_file() && is_image_file(p) && p.with_extension("pts").is_file() {
            out.push(p.to_path_buf());
        }
    }
    Ok(out)
}

fn check_count(what: &str, actual: usize, expected: usize) {
    if actual != expected {
        log::warn!("{what}: found {actual} annotated images, the standard packaging has {expected}");
    }
}

/// Builds the 300-W splits from a root laid out as `afw/`,
/// `helen/{trainset,testset}/`, `lfpw/{trainset,testset}/` and `ibug/`.
/// Count deviations from the standard packaging are logged as warnings.
pub fn make_300w_splits(root: &Path) -> Result<W300Splits> {
    if !root.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", root.display())));
    }
    let mut train = annotated_images(&root.join("afw"))?;
    train.extend(annotated_images(&root.join("helen/trainset"))?);
    train.extend(annotated_images(&root.join("lfpw/trainset"))?);
    let mut common = annotated_images(&root.join("helen/testset"))?;
    common.extend(annotated_images(&root.join("lfpw/testset"))?);
    let challenging = annotated_images(&root.join("ibug"))?;
    check_count("training set", train.len(), W300_TRAIN);
    check_count("common subset", common.len(), W300_COMMON);
    check_count("challenging subset", challenging.len(), W300_CHALLENGING);
    Ok(W300Splits {
        train,
        common: DatasetSplit {
            name: SplitName::Common,
            members: common,
        },
        challenging: DatasetSplit {
            name: SplitName::Challenging,
            members: challenging,
        },
    })
}
