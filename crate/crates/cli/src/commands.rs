use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use krfws::align::{extend_pipeline, train_pipeline, Bundle, Pipeline, PoseModel, Stages};
use krfws::data::{
    load_image, load_list, load_pointing04, load_pts, normalize_face, save_pts, session_folds, shuffled_folds,
    synth_faces, FaceImage, Fold, NormalizedFace, PoseLabel, SplitName,
};
use krfws::eval::{normalized_error, pose_mae, EvalReport, EvalRow, NormMode};
use krfws::par::{derive_seed, Executor};

use crate::input::{self, prediction_file, Member, SYNTH_TRAIN_STREAM};
use crate::report::{num, write_csv, write_run_manifest};
use crate::{parse_stages, CliError, CliResult, ConfigArgs, LandmarkSource};

fn exec() -> Executor {
    Executor::default()
}

fn describe_source(src: &LandmarkSource) -> Vec<(&'static str, String)> {
    let mut v = Vec::new();
    if let Some(p) = &src.w300 {
        v.push(("w300", p.display().to_string()));
    }
    if let Some(p) = &src.list {
        v.push(("list", p.display().to_string()));
    }
    if let Some(n) = src.synth {
        v.push(("synth", n.to_string()));
    }
    if let Some(p) = &src.bboxes {
        v.push(("bboxes", p.display().to_string()));
    }
    v
}

fn available(p: &Pipeline) -> Stages {
    Stages {
        apr: p.apr.is_some(),
        apr3d: p.apr3d.is_some(),
        lbf: p.lbf.is_some(),
    }
}

fn stages_or_available(requested: Option<&str>, p: &Pipeline) -> CliResult<Stages> {
    match requested {
        Some(s) => parse_stages(s),
        None => Ok(available(p)),
    }
}

pub fn train_stage(
    command: &str,
    cfg_args: &ConfigArgs,
    src: &LandmarkSource,
    out: &Path,
    stages: Stages,
) -> CliResult<()> {
    let cfg = cfg_args.load()?;
    let mean3d = input::mean_shape(cfg_args.mean_shape.as_deref())?;
    let boxes = input::bboxes(src.bboxes.as_deref())?;
    let members = input::training_members(src, &cfg, &mean3d)?;
    let faces = input::normalized(&members, &boxes, exec())?;

    let mut bundle = Bundle::load_or_default(out)?;
    let start = Instant::now();
    let pipeline = extend_pipeline(bundle.pipeline.take(), &faces, &cfg, &mean3d, stages, exec())?;
    log::info!("{command} finished in {:.1} s", start.elapsed().as_secs_f64());
    bundle.pipeline = Some(pipeline);
    let stage = command.trim_start_matches("train-");
    bundle.manifest.set(&format!("{stage}.seed"), cfg.seed.to_string());
    bundle
        .manifest
        .set(&format!("{stage}.train_images"), faces.len().to_string());
    bundle.save(out)?;

    let mut inputs = describe_source(src);
    inputs.push(("train_images", faces.len().to_string()));
    write_run_manifest(out, &format!("run-{command}.txt"), command, &inputs, Some(&cfg))
}

pub struct PoseJob<'a> {
    pub config: &'a ConfigArgs,
    pub pointing04: Option<&'a Path>,
    pub synth: Option<usize>,
    pub bboxes: Option<&'a Path>,
    pub folds: Option<usize>,
    pub weighted: Option<bool>,
    pub out: &'a Path,
}

struct PoseData {
    names: Vec<String>,
    faces: Vec<NormalizedFace>,
    labels: Vec<PoseLabel>,
    /// Session folds when the data has sessions.
    sessions: Option<Vec<Fold>>,
}

fn pose_data(job: &PoseJob, cfg: &krfws::config::Config) -> CliResult<PoseData> {
    match (job.pointing04, job.synth) {
        (Some(root), None) => {
            let boxes = input::bboxes(job.bboxes)?;
            let found = load_pointing04(root, &boxes)?;
            log::info!("loading {} Pointing'04 images", found.len());
            let faces = exec().try_map(found.len(), |i| {
                let face = &found[i].0;
                let path = face.image_path.as_ref().expect("scanned from disk");
                let img = FaceImage {
                    image: load_image(path)?,
                    face: face.clone(),
                };
                normalize_face(&img)
            })?;
            let metas: Vec<_> = found.iter().map(|f| f.1).collect();
            Ok(PoseData {
                names: found.iter().map(|f| f.0.name.clone()).collect(),
                labels: found.iter().map(|f| f.0.pose.expect("parsed from name")).collect(),
                faces,
                sessions: Some(session_folds(&metas)),
            })
        }
        (None, Some(count)) => {
            let mean3d = input::mean_shape(job.config.mean_shape.as_deref())?;
            let raw = synth_faces(count, derive_seed(cfg.seed, SYNTH_TRAIN_STREAM), &mean3d, &cfg.synth)?;
            let faces = exec().try_map(raw.len(), |i| normalize_face(&raw[i]))?;
            Ok(PoseData {
                names: raw.iter().map(|f| f.face.name.clone()).collect(),
                labels: raw
                    .iter()
                    .map(|f| f.face.pose.expect("synthetic faces carry poses"))
                    .collect(),
                faces,
                sessions: None,
            })
        }
        _ => Err(CliError::Usage("give exactly one of --pointing04 or --synth".into())),
    }
}

pub fn train_pose(job: &PoseJob) -> CliResult<()> {
    let mut cfg = job.config.load()?;
    if let Some(w) = job.weighted {
        cfg.weighted = w;
    }
    let data = pose_data(job, &cfg)?;
    let phog = &cfg.pose.phog;
    let params = cfg.pose_forest();
    let feats = exec().try_map(data.faces.len(), |i| PoseModel::feature(phog, &data.faces[i].image))?;
    let mut inputs: Vec<(&str, String)> = Vec::new();
    if let Some(p) = job.pointing04 {
        inputs.push(("pointing04", p.display().to_string()));
    }
    if let Some(n) = job.synth {
        inputs.push(("synth", n.to_string()));
    }
    inputs.push(("images", data.faces.len().to_string()));

    let Some(k) = job.folds else {
        let start = Instant::now();
        let model = PoseModel::train_features(&feats, &data.labels, phog, &params, exec())?;
        log::info!("pose model trained in {:.1} s", start.elapsed().as_secs_f64());
        let mut bundle = Bundle::load_or_default(job.out)?;
        bundle.pose = Some(model);
        bundle.manifest.set("pose.seed", cfg.seed.to_string());
        bundle.manifest.set("pose.train_images", data.faces.len().to_string());
        bundle.save(job.out)?;
        return write_run_manifest(job.out, "run-train-pose.txt", "train-pose", &inputs, Some(&cfg));
    };

    let folds = match (k, data.sessions) {
        (2, Some(s)) if s.len() == 2 => s,
        (2, Some(s)) => {
            return Err(CliError::Data(format!(
                "2-fold validation needs exactly two sessions, found {}",
                s.len()
            )))
        }
        _ => shuffled_folds(data.faces.len(), k, derive_seed(cfg.seed, 5))?,
    };
    let mut preds = vec![None; data.faces.len()];
    let mut fold_of = vec![0; data.faces.len()];
    let mut summary = Vec::new();
    let mut fold_maes = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let start = Instant::now();
        let tf: Vec<Vec<f64>> = fold.train.iter().map(|&i| feats[i].clone()).collect();
        let tl: Vec<PoseLabel> = fold.train.iter().map(|&i| data.labels[i]).collect();
        let model = PoseModel::train_features(&tf, &tl, phog, &params, exec())?;
        log::info!("fold {} trained in {:.1} s", f + 1, start.elapsed().as_secs_f64());
        let p = exec().try_map(fold.test.len(), |j| model.predict_feature(&feats[fold.test[j]]))?;
        for (&i, label) in fold.test.iter().zip(p) {
            preds[i] = Some(label);
            fold_of[i] = f + 1;
        }
        let pairs: Vec<(f64, f64)> = fold
            .test
            .iter()
            .map(|&i| preds[i].map(|l| (l.yaw, l.pitch)).unwrap())
            .collect();
        let truth: Vec<(f64, f64)> = fold
            .test
            .iter()
            .map(|&i| (data.labels[i].yaw, data.labels[i].pitch))
            .collect();
        let m = pose_mae(&pairs, &truth)?;
        fold_maes.push(m);
        summary.push(vec![
            (f + 1).to_string(),
            fold.test.len().to_string(),
            num(m.yaw),
            num(m.pitch),
            num(m.average),
        ]);
    }
    let mean = |g: fn(&krfws::eval::PoseMae) -> f64| fold_maes.iter().map(g).sum::<f64>() / fold_maes.len() as f64;
    let (yaw, pitch, avg) = (mean(|m| m.yaw), mean(|m| m.pitch), mean(|m| m.average));
    summary.push(vec![
        "mean".into(),
        data.faces.len().to_string(),
        num(yaw),
        num(pitch),
        num(avg),
    ]);
    println!("pose MAE over {k} folds: yaw {yaw:.3}, pitch {pitch:.3}, average {avg:.3}");

    let rows: Vec<Vec<String>> = (0..data.faces.len())
        .filter_map(|i| {
            let p = preds[i]?;
            Some(vec![
                data.names[i].clone(),
                fold_of[i].to_string(),
                num(data.labels[i].yaw),
                num(data.labels[i].pitch),
                num(p.yaw),
                num(p.pitch),
            ])
        })
        .collect();
    write_csv(
        &job.out.join("pose_predictions.csv"),
        &["name", "fold", "yaw", "pitch", "pred_yaw", "pred_pitch"],
        &rows,
    )?;
    write_csv(
        &job.out.join("pose_mae.csv"),
        &["fold", "images", "yaw_mae", "pitch_mae", "average_mae"],
        &summary,
    )?;
    inputs.push(("folds", k.to_string()));
    write_run_manifest(job.out, "run.txt", "train-pose", &inputs, Some(&cfg))
}

pub struct EvalJob<'a> {
    pub config: &'a ConfigArgs,
    pub source: &'a LandmarkSource,
    pub split: &'a str,
    pub norm: &'a str,
    pub pred: Option<&'a Path>,
    pub model: Option<&'a Path>,
    pub stages: Option<&'a str>,
    pub out: &'a Path,
}

fn parse_norm(s: &str) -> CliResult<NormMode> {
    s.parse().map_err(|e: krfws::Error| CliError::Usage(e.to_string()))
}

fn write_report(out: &Path, report: &EvalReport) -> CliResult<()> {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.name.clone(), r.subset.clone(), num(r.error)])
        .collect();
    write_csv(&out.join("errors.csv"), &["name", "subset", "error"], &rows)?;
    let mut summary: Vec<Vec<String>> = Vec::new();
    for (subset, n, mean) in report.subset_means() {
        println!("{subset}: {n} images, mean {} error {mean:.3}%", report.mode.as_str());
        summary.push(vec![subset, n.to_string(), num(mean)]);
    }
    if let Some(all) = report.full_mean() {
        println!(
            "all: {} images, mean {} error {all:.3}%",
            report.rows.len(),
            report.mode.as_str()
        );
        summary.push(vec!["all".into(), report.rows.len().to_string(), num(all)]);
    }
    write_csv(&out.join("summary.csv"), &["subset", "images", "mean_error"], &summary)
}

pub fn eval(job: &EvalJob) -> CliResult<()> {
    let cfg = job.config.load()?;
    let split: SplitName = job
        .split
        .parse()
        .map_err(|e: krfws::Error| CliError::Usage(e.to_string()))?;
    let mode = parse_norm(job.norm)?;
    let mean3d = input::mean_shape(job.config.mean_shape.as_deref())?;
    let members = input::evaluation_members(job.source, split, &cfg, &mean3d)?;
    let mut inputs = describe_source(job.source);
    inputs.push(("split", split.as_str().to_string()));
    inputs.push(("norm", mode.as_str().to_string()));

    let errors: Vec<f64> = match (job.pred, job.model) {
        (Some(dir), None) => {
            inputs.push(("pred", dir.display().to_string()));
            exec().try_map(members.len(), |i| {
                let m = &members[i];
                let pred = load_pts(&prediction_file(dir, &m.name()))?;
                Ok::<_, CliError>(normalized_error(&pred, &m.ground_truth()?, mode)?)
            })?
        }
        (None, Some(dir)) => {
            inputs.push(("model", dir.display().to_string()));
            let bundle = Bundle::load(dir)?;
            let pipeline = bundle
                .pipeline
                .ok_or_else(|| CliError::Data(format!("{} holds no alignment stages", dir.display())))?;
            let stages = stages_or_available(job.stages, &pipeline)?;
            let boxes = input::bboxes(job.source.bboxes.as_deref())?;
            exec().try_map(members.len(), |i| {
                let m = &members[i];
                let face = m.load(&boxes)?;
                let norm = normalize_face(&face)?;
                let pred = norm
                    .frame
                    .shape_from_frame(&pipeline.run_normalized(&norm.image, stages)?)?;
                Ok::<_, CliError>(normalized_error(&pred, &m.ground_truth()?, mode)?)
            })?
        }
        _ => return Err(CliError::Usage("give exactly one of --pred or --model".into())),
    };
    let report = EvalReport {
        mode,
        rows: members
            .iter()
            .zip(errors)
            .map(|(m, error)| EvalRow {
                name: m.name(),
                subset: m.subset.clone(),
                error,
            })
            .collect(),
    };
    write_report(job.out, &report)?;
    write_run_manifest(job.out, "run.txt", "eval", &inputs, Some(&cfg))
}

pub fn predict(
    model: &Path,
    list: Option<&Path>,
    images: &[PathBuf],
    bboxes: Option<&Path>,
    stages: Option<&str>,
    out: &Path,
) -> CliResult<()> {
    let bundle = Bundle::load(model)?;
    if bundle.pipeline.is_none() && bundle.pose.is_none() {
        return Err(CliError::Data(format!("{} holds no models", model.display())));
    }
    let mut paths = images.to_vec();
    if let Some(l) = list {
        paths.extend(load_list(l)?);
    }
    if paths.is_empty() {
        return Err(CliError::Usage("no images given".into()));
    }
    let names: Vec<String> = paths.iter().map(|p| krfws::data::face_name(p)).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(CliError::Usage("image file names must be unique".into()));
    }
    let stages = match &bundle.pipeline {
        Some(p) => stages_or_available(stages, p)?,
        None => Stages::NONE,
    };
    let boxes = input::bboxes(bboxes)?;
    std::fs::create_dir_all(out)?;
    let poses = exec().try_map(paths.len(), |i| {
        let norm = input::plain_face(&paths[i], &boxes)?;
        if let Some(p) = &bundle.pipeline {
            let shape = norm.frame.shape_from_frame(&p.run_normalized(&norm.image, stages)?)?;
            save_pts(&prediction_file(out, &names[i]), &shape)?;
        }
        bundle
            .pose
            .as_ref()
            .map(|m| m.predict(&norm.image))
            .transpose()
            .map_err(CliError::from)
    })?;
    if bundle.pose.is_some() {
        let rows: Vec<Vec<String>> = names
            .iter()
            .zip(&poses)
            .map(|(n, p)| {
                let p = p.expect("pose model present");
                vec![n.clone(), num(p.yaw), num(p.pitch)]
            })
            .collect();
        write_csv(&out.join("poses.csv"), &["name", "yaw", "pitch"], &rows)?;
    }
    let inputs = [
        ("model", model.display().to_string()),
        ("images", paths.len().to_string()),
    ];
    write_run_manifest(out, "run.txt", "predict", &inputs, None)
}

pub fn synth_bench(cfg_args: &ConfigArgs, norm: &str, out: &Path) -> CliResult<()> {
    let cfg = cfg_args.load()?;
    let mode = parse_norm(norm)?;
    let mean3d = input::mean_shape(cfg_args.mean_shape.as_deref())?;
    let train_src = LandmarkSource {
        w300: None,
        list: None,
        synth: Some(cfg.synth_train),
        bboxes: None,
    };
    let test_src = LandmarkSource {
        synth: Some(cfg.synth_test),
        ..train_src.clone()
    };
    let train: Vec<Member> = input::training_members(&train_src, &cfg, &mean3d)?;
    let test: Vec<Member> = input::evaluation_members(&test_src, SplitName::Custom, &cfg, &mean3d)?;
    let none = Default::default();
    let faces = input::normalized(&train, &none, exec())?;

    let start = Instant::now();
    let pipeline = train_pipeline(&faces, &cfg, &mean3d, Stages::ALL, exec())?;
    log::info!("pipeline trained in {:.1} s", start.elapsed().as_secs_f64());
    let mut bundle = Bundle::new(Some(pipeline), None);
    bundle.manifest.set("seed", cfg.seed.to_string());
    bundle.manifest.set("train_images", faces.len().to_string());
    bundle.save(&out.join("model"))?;
    let pipeline = bundle.pipeline.as_ref().expect("just trained");

    let traces = exec().try_map(test.len(), |i| {
        let m = &test[i];
        let norm = normalize_face(&m.load(&none)?)?;
        let gt = m.ground_truth()?;
        pipeline
            .trace(&norm.image, Stages::ALL)?
            .into_iter()
            .map(|(label, s)| Ok((label, normalized_error(&norm.frame.shape_from_frame(&s)?, &gt, mode)?)))
            .collect::<CliResult<Vec<(String, f64)>>>()
    })?;
    let labels: Vec<String> = traces[0].iter().map(|t| t.0.clone()).collect();
    let mut header = vec!["name"];
    header.extend(labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = test
        .iter()
        .zip(&traces)
        .map(|(m, t)| std::iter::once(m.name()).chain(t.iter().map(|e| num(e.1))).collect())
        .collect();
    write_csv(&out.join("errors.csv"), &header, &rows)?;
    let stage_rows: Vec<Vec<String>> = labels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let mean = traces.iter().map(|t| t[k].1).sum::<f64>() / traces.len() as f64;
            println!("{l}: mean {} error {mean:.3}%", mode.as_str());
            vec![l.clone(), num(mean)]
        })
        .collect();
    write_csv(&out.join("stages.csv"), &["stage", "mean_error"], &stage_rows)?;
    let inputs = [
        ("train_images", faces.len().to_string()),
        ("test_images", test.len().to_string()),
        ("norm", mode.as_str().to_string()),
    ];
    write_run_manifest(out, "run.txt", "synth-bench", &inputs, Some(&cfg))
}
