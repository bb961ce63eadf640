//! Flat `key = value` run configuration. Every hyperparameter of the
//! pipeline has a named key; unknown keys are rejected. `#` starts a
//! comment line.
//!
//! Descriptor keys: `<stage>.patch` (patch side), `<stage>.levels` (comma
//! separated cell sizes) and `<stage>.hog` (`basic` or `extended`).
//! `<stage>.max_depth = 0` means unbounded depth.

use std::fmt::Write as _;
use std::path::Path;

use crate::align::{LbfConfig, PerturbConfig, StageConfig};
use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::forest::{ForestParams, TreeParams};
use crate::imgproc::{HogParams, HogVariant, PhogConfig};
use crate::linclf::SvmParams;

/// Per-stage forest and descriptor settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StageKeys {
    pub iterations: usize,
    pub trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples: usize,
    pub phog: PhogConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub svm: SvmParams,
    pub k: usize,
    pub weighted: bool,
    pub bagging: f64,
    pub kmeans_restarts: usize,
    pub apr: StageKeys,
    pub apr3d: StageKeys,
    pub lbf: StageKeys,
    pub lbf_lambdas: Vec<f64>,
    pub lbf_holdout: f64,
    /// Initial shapes per training image for the LBF stage.
    pub lbf_inits: usize,
    pub pose: StageKeys,
    pub perturb: PerturbConfig,
    /// Synthetic benchmark sizes.
    pub synth_train: usize,
    pub synth_test: usize,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        let face = PhogConfig::face_default;
        Config {
            seed: 0,
            svm: SvmParams::default(),
            k: 2,
            weighted: true,
            bagging: 0.63,
            kmeans_restarts: 10,
            apr: StageKeys {
                iterations: 2,
                trees: 10,
                max_depth: None,
                min_samples: 5,
                phog: face(),
            },
            apr3d: StageKeys {
                iterations: 1,
                trees: 10,
                max_depth: None,
                min_samples: 5,
                phog: face(),
            },
            lbf: StageKeys {
                iterations: 5,
                trees: 5,
                max_depth: Some(7),
                min_samples: 5,
                phog: PhogConfig::landmark_default(),
            },
            lbf_lambdas: vec![0.1, 1.0, 10.0],
            lbf_holdout: 0.2,
            lbf_inits: 10,
            pose: StageKeys {
                iterations: 1,
                trees: 20,
                max_depth: None,
                min_samples: 5,
                phog: face(),
            },
            perturb: PerturbConfig::default(),
            synth_train: 200,
            synth_test: 200,
            synth: SynthConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl StageKeys {
    fn set(&mut self, stage: &str, field: &str, v: &str) -> Result<bool> {
        let key = format!("{stage}.{field}");
        match field {
            "iterations" => self.iterations = parse_num(&key, v)?,
            "trees" => self.trees = parse_num(&key, v)?,
            "max_depth" => {
                let d: usize = parse_num(&key, v)?;
                self.max_depth = (d > 0).then_some(d);
            }
            "min_samples" => self.min_samples = parse_num(&key, v)?,
            "patch" => self.phog.patch_side = parse_num(&key, v)?,
            "levels" => self.phog.levels = parse_list(&key, v)?,
            "hog" => {
                self.phog.hog = match v {
                    "basic" => HogParams::default(),
                    "extended" => HogParams::extended(),
                    _ => return Err(Error::invalid(format!("`{key}`: expected basic or extended"))),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn write(&self, out: &mut String, stage: &str) {
        let _ = writeln!(out, "{stage}.iterations = {}", self.iterations);
        let _ = writeln!(out, "{stage}.trees = {}", self.trees);
        let _ = writeln!(out, "{stage}.max_depth = {}", self.max_depth.unwrap_or(0));
        let _ = writeln!(out, "{stage}.min_samples = {}", self.min_samples);
        let _ = writeln!(out, "{stage}.patch = {}", self.phog.patch_side);
        let _ = writeln!(out, "{stage}.levels = {}", join(&self.phog.levels));
        let hog = match self.phog.hog.variant {
            HogVariant::Basic => "basic",
            HogVariant::Extended => "extended",
        };
        let _ = writeln!(out, "{stage}.hog = {hog}");
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        Self::parse(&text, path)
    }

    /// Parses a config, starting from the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        c.validate().map_err(|e| Error::parse(path, 0, e.to_string()))?;
        Ok(c)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "svm.cost" => self.svm.cost = parse_num(key, v)?,
            "svm.tol" => self.svm.tol = parse_num(key, v)?,
            "svm.max_iter" => self.svm.max_iter = parse_num(key, v)?,
            "forest.k" => self.k = parse_num(key, v)?,
            "forest.weighted" => self.weighted = parse_bool(key, v)?,
            "forest.bagging" => self.bagging = parse_num(key, v)?,
            "forest.kmeans_restarts" => self.kmeans_restarts = parse_num(key, v)?,
            "lbf.lambdas" => self.lbf_lambdas = parse_list(key, v)?,
            "lbf.holdout" => self.lbf_holdout = parse_num(key, v)?,
            "lbf.inits" => self.lbf_inits = parse_num(key, v)?,
            "perturb.count" => self.perturb.count = parse_num(key, v)?,
            "perturb.scale" => self.perturb.scale = parse_num(key, v)?,
            "perturb.translation" => self.perturb.translation = parse_num(key, v)?,
            "perturb.rotation_deg" => self.perturb.rotation_deg = parse_num(key, v)?,
            "synth.train" => self.synth_train = parse_num(key, v)?,
            "synth.test" => self.synth_test = parse_num(key, v)?,
            "synth.image_side" => self.synth.image_side = parse_num(key, v)?,
            "synth.face_width" => self.synth.face_width = parse_num(key, v)?,
            "synth.shape_jitter" => self.synth.shape_jitter = parse_num(key, v)?,
            "synth.pixel_noise" => self.synth.pixel_noise = parse_num(key, v)?,
            "synth.annotation_noise" => self.synth.annotation_noise = parse_num(key, v)?,
            _ => {
                let known = match key.split_once('.') {
                    Some(("apr", f)) => self.apr.set("apr", f, v)?,
                    Some(("3dapr", f)) => self.apr3d.set("3dapr", f, v)?,
                    Some(("lbf", f)) => self.lbf.set("lbf", f, v)?,
                    Some(("pose", f)) => self.pose.set("pose", f, v)?,
                    _ => false,
                };
                if !known {
                    return Err(Error::invalid(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("apr", &self.apr),
            ("3dapr", &self.apr3d),
            ("lbf", &self.lbf),
            ("pose", &self.pose),
        ] {
            if s.iterations == 0 || s.trees == 0 {
                return Err(Error::invalid(format!(
                    "{name}: iterations and trees must be at least 1"
                )));
            }
            s.phog
                .descriptor_len()
                .map_err(|e| Error::invalid(format!("{name} descriptor: {e}")))?;
        }
        if self.apr3d.iterations != 1 {
            return Err(Error::invalid("3dapr.iterations must be 1"));
        }
        if self.k < 2 {
            return Err(Error::invalid("forest.k must be at least 2"));
        }
        if !(self.svm.cost > 0.0 && self.svm.tol > 0.0) {
            return Err(Error::invalid("svm.cost and svm.tol must be positive"));
        }
        if self.lbf_lambdas.is_empty() || self.lbf_lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("lbf.lambdas must be positive"));
        }
        if self.perturb.count == 0 || self.lbf_inits == 0 {
            return Err(Error::invalid("perturb.count and lbf.inits must be at least 1"));
        }
        Ok(())
    }

    /// Every key with its current value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "svm.cost = {}", self.svm.cost);
        let _ = writeln!(s, "svm.tol = {}", self.svm.tol);
        let _ = writeln!(s, "svm.max_iter = {}", self.svm.max_iter);
        let _ = writeln!(s, "forest.k = {}", self.k);
        let _ = writeln!(s, "forest.weighted = {}", self.weighted);
        let _ = writeln!(s, "forest.bagging = {}", self.bagging);
        let _ = writeln!(s, "forest.kmeans_restarts = {}", self.kmeans_restarts);
        self.apr.write(&mut s, "apr");
        self.apr3d.write(&mut s, "3dapr");
        self.lbf.write(&mut s, "lbf");
        let _ = writeln!(s, "lbf.lambdas = {}", join(&self.lbf_lambdas));
        let _ = writeln!(s, "lbf.holdout = {}", self.lbf_holdout);
        let _ = writeln!(s, "lbf.inits = {}", self.lbf_inits);
        self.pose.write(&mut s, "pose");
        let _ = writeln!(s, "perturb.count = {}", self.perturb.count);
        let _ = writeln!(s, "perturb.scale = {}", self.perturb.scale);
        let _ = writeln!(s, "perturb.translation = {}", self.perturb.translation);
        let _ = writeln!(s, "perturb.rotation_deg = {}", self.perturb.rotation_deg);
        let _ = writeln!(s, "synth.train = {}", self.synth_train);
        let _ = writeln!(s, "synth.test = {}", self.synth_test);
        let _ = writeln!(s, "synth.image_side = {}", self.synth.image_side);
        let _ = writeln!(s, "synth.face_width = {}", self.synth.face_width);
        let _ = writeln!(s, "synth.shape_jitter = {}", self.synth.shape_jitter);
        let _ = writeln!(s, "synth.pixel_noise = {}", self.synth.pixel_noise);
        let _ = writeln!(s, "synth.annotation_noise = {}", self.synth.annotation_noise);
        s
    }

    /// Forest parameters of a stage; `salt` separates the seeds of stages.
    pub fn forest(&self, stage: &StageKeys, salt: u64) -> ForestParams {
        ForestParams {
            trees: stage.trees,
            bagging_fraction: self.bagging,
            seed: crate::par::derive_seed(self.seed, salt),
            tree: TreeParams {
                k: self.k,
                max_depth: stage.max_depth,
                min_samples: stage.min_samples,
                weighted: self.weighted,
                kmeans_restarts: self.kmeans_restarts,
                svm: self.svm,
            },
        }
    }

    fn stage(&self, stage: &StageKeys, salt: u64) -> StageConfig {
        StageConfig {
            iterations: stage.iterations,
            forest: self.forest(stage, salt),
            phog: stage.phog.clone(),
        }
    }

    pub fn apr_stage(&self) -> StageConfig {
        self.stage(&self.apr, 1)
    }

    pub fn apr3d_stage(&self) -> StageConfig {
        self.stage(&self.apr3d, 2)
    }

    pub fn lbf_config(&self) -> LbfConfig {
        LbfConfig {
            stage: self.stage(&self.lbf, 3),
            lambdas: self.lbf_lambdas.clone(),
            holdout: self.lbf_holdout,
        }
    }

    pub fn pose_forest(&self) -> ForestParams {
        self.forest(&self.pose, 4)
    }
}
