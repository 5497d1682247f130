use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use gaze_core::bench::{bench_pipeline, classify_frame, BenchError};
use gaze_core::cascade::{detect_in, load_cascade_file, save_cascade_file, CascadeModel};
use gaze_core::cnn::{load_model_file, save_model_file};
use gaze_core::dataset::{
    augment, load_manifest_file, load_samples, save_manifest_file, split_shuffle, AugmentConfig, AugmentOps, Manifest,
    ManifestEntry, Origin,
};
use gaze_core::imaging::{integral, write_pgm_file};
use gaze_core::par::{self, Exec};
use gaze_core::preprocess::{locate_eyes_in, select_face, Pipeline, PipelineConfig};
use gaze_core::synth::{gen_dataset, scene_set_item, train_scene_cascade, CascadeRecipe};
use gaze_core::train::{cross_validate, evaluate, history_csv, shuffle_experiment, train, Hyper};
use gaze_core::{seed, ArchConfig, Network, Sample};

use crate::*;

pub fn run(cli: Cli) -> Result<()> {
    let exec = exec_for(cli.threads)?;
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => synth(a, seed, exec),
        Command::Augment(a) => augment_cmd(a, seed, exec),
        Command::Split(a) => split(a, seed),
        Command::Train(a) => train_cmd(a, seed, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Crossval(a) => crossval(a, seed, exec),
        Command::Detect(a) => detect(a, exec),
        Command::Infer(a) => infer(a, exec),
        Command::Bench(a) => bench(a, exec),
        Command::TrainCascade(a) => train_cascade(a, seed, exec),
    }
}

fn exec_for(threads: Option<usize>) -> Result<Exec> {
    match threads {
        None => Ok(Exec::Parallel),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Domain(format!("thread pool: {e}")))?;
            Ok(Exec::Parallel)
        }
    }
}

fn need(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} not found", path.display())))
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    need(path, "manifest")?;
    Ok(load_manifest_file(path)?)
}

fn samples(path: &Path, exec: Exec) -> Result<(Manifest, Vec<Sample>)> {
    let m = read_manifest(path)?;
    let s = load_samples(&m, &base_dir(path), exec)?;
    Ok((m, s))
}

fn hyper(h: &HyperArgs, seed: u64) -> Hyper {
    Hyper { lr: h.lr, momentum: h.momentum, batch: h.batch, epochs: h.epochs, lr_decay: h.lr_decay, seed }
}

fn cascade(path: &Path, what: &str) -> Result<CascadeModel> {
    need(path, what)?;
    Ok(load_cascade_file(path)?)
}

fn network(path: &Path) -> Result<Network<f32>> {
    need(path, "model")?;
    Ok(load_model_file(path)?)
}

fn pipeline_config(d: &DetectorArgs) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.face.min_width = Some(d.min_face);
    c
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, text)?)
}

fn synth(a: SynthArgs, seed: u64, exec: Exec) -> Result<()> {
    match a.kind {
        SynthKind::Eyes => {
            let m = gen_dataset(a.subjects, a.per_label, seed, &a.out, exec)?;
            println!("{}", json!({ "entries": m.len(), "manifest": a.out.join("manifest.jsonl") }));
        }
        SynthKind::Scenes => {
            std::fs::create_dir_all(&a.out)?;
            let lines = par::map_range(exec, a.count, |i| -> Result<String> {
                let (img, truth) = scene_set_item(seed, i);
                let name = format!("scene_{i:04}");
                write_pgm_file(&img, a.out.join(format!("{name}.pgm")))?;
                Ok(json!({ "frame": name, "truth": truth }).to_string())
            });
            let mut text = String::new();
            for l in lines {
                text.push_str(&l?);
                text.push('\n');
            }
            write(&a.out.join("scenes.jsonl"), &text)?;
            println!("{}", json!({ "scenes": a.count, "truth": a.out.join("scenes.jsonl") }));
        }
    }
    Ok(())
}

fn augment_cmd(a: AugmentArgs, seed: u64, exec: Exec) -> Result<()> {
    let (m, samples) = samples(&a.manifest, exec)?;
    let cfg = AugmentConfig {
        multiplier: a.multiplier,
        ops: AugmentOps {
            translate: !a.no_translate,
            rotate: !a.no_rotate,
            brightness: !a.no_brightness,
            contrast: !a.no_contrast,
            horizontal_flip: !a.no_flip,
        },
        seed,
    };
    let jobs: Vec<(&ManifestEntry, &Sample)> = m.entries.iter().zip(&samples).collect();
    let out = &a.out;
    let expanded = par::map(exec, &jobs, |&(e, s)| -> Result<Vec<ManifestEntry>> {
        let stem = e.path.strip_suffix(".pgm").unwrap_or(&e.path);
        let key = seed::hash_str(&s.source_frame);
        let mut entries = Vec::with_capacity(cfg.multiplier);
        for (i, x) in augment(s, &cfg)?.into_iter().enumerate() {
            let path = format!("{stem}_a{i:03}.pgm");
            let file = out.join(&path);
            if let Some(dir) = file.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_pgm_file(&x.gray_or_binary(), &file)?;
            let (origin, seed_tag) =
                if i == 0 { (Origin::Original, e.seed_tag) } else { (Origin::Augmented, seed::derive(seed, &[key, i as u64])) };
            entries.push(ManifestEntry { path, label: x.label()?, subject: e.subject.clone(), origin, seed_tag });
        }
        Ok(entries)
    });
    let mut entries = Vec::with_capacity(m.len() * cfg.multiplier);
    for e in expanded {
        entries.extend(e?);
    }
    let aug = Manifest::new(entries)?;
    save_manifest_file(&aug, out.join("manifest.jsonl"))?;
    println!("{}", json!({ "inputs": m.len(), "entries": aug.len(), "manifest": out.join("manifest.jsonl") }));
    Ok(())
}

/// Entry paths stay relative when the output manifest sits next to the
/// input one and become absolute otherwise.
fn rebase(m: Manifest, from: &Path, to: &Path) -> Result<Manifest> {
    let canon = |p: &Path| std::fs::canonicalize(if p.as_os_str().is_empty() { Path::new(".") } else { p });
    let src = canon(from)?;
    if let Some(dst) = to.parent() {
        std::fs::create_dir_all(if dst.as_os_str().is_empty() { Path::new(".") } else { dst })?;
        if canon(dst)? == src {
            return Ok(m);
        }
    }
    let entries = m
        .entries
        .into_iter()
        .map(|mut e| {
            e.path = src.join(&e.path).to_string_lossy().into_owned();
            e
        })
        .collect();
    Ok(Manifest { entries })
}

fn split(a: SplitArgs, seed: u64) -> Result<()> {
    let m = read_manifest(&a.manifest)?;
    let s = split_shuffle(&m, a.test_fraction, seed, a.stratify)?;
    let from = base_dir(&a.manifest);
    save_manifest_file(&rebase(m.select(&s.train), &from, &a.train_out)?, &a.train_out)?;
    save_manifest_file(&rebase(m.select(&s.test), &from, &a.test_out)?, &a.test_out)?;
    println!("{}", json!({ "train": s.train.len(), "test": s.test.len() }));
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64, exec: Exec) -> Result<()> {
    let (_, tr) = samples(&a.manifest, exec)?;
    let val = a.val_manifest.as_deref().map(|p| samples(p, exec)).transpose()?.map(|(_, s)| s);
    let h = hyper(&a.hyper, seed);
    let net = Network::init(ArchConfig::with_channels(a.hyper.conv1, a.hyper.conv2), seed)?;
    let (net, history) = train(net, &tr, &h, val.as_deref(), exec)?;
    save_model_file(&net, &a.out)?;
    let csv = history_csv(&history);
    match &a.history_out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn eval(a: EvalArgs, exec: Exec) -> Result<()> {
    let net = network(&a.model)?;
    let (_, set) = samples(&a.manifest, exec)?;
    let m = evaluate(&net, &set, exec)?;
    if let Some(p) = &a.confusion_out {
        write(p, &m.confusion_csv())?;
    }
    println!("{}", m.to_json());
    Ok(())
}

fn crossval(a: CrossvalArgs, seed: u64, exec: Exec) -> Result<()> {
    let (_, set) = samples(&a.manifest, exec)?;
    let h = hyper(&a.hyper, seed);
    let arch = ArchConfig::with_channels(a.hyper.conv1, a.hyper.conv2);
    let report = cross_validate(&set, arch, a.k, &h, exec)?;
    print!("{}", report.table());
    let shuffled = if a.compare_shuffle {
        let (_, s) = shuffle_experiment(&set, arch, 1.0 / a.k as f64, false, &h, exec)?;
        println!("grouped {:.4}  shuffled {:.4}", report.mean_accuracy, s.metrics.accuracy);
        Some(s.metrics.accuracy)
    } else {
        None
    };
    if let Some(p) = &a.json_out {
        write(p, &serde_json::to_string_pretty(&json!({ "grouped": report, "shuffled_accuracy": shuffled })).expect("json"))?;
    }
    Ok(())
}

fn detect(a: DetectArgs, exec: Exec) -> Result<()> {
    let face_model = cascade(&a.detectors.face_model, "face model")?;
    let eye_model = cascade(&a.detectors.eye_model, "eye model")?;
    let config = pipeline_config(&a.detectors);
    let frames = frames::load(&a.frames)?;
    let mut out = String::new();
    for (id, img) in &frames {
        let ii = integral(img);
        let face = select_face(&detect_in(&ii, &face_model, &img.bounds(), &config.face, exec)).map(|d| d.bbox);
        let eyes = face.map(|f| locate_eyes_in(&ii, &f, &eye_model, &config.eye, exec));
        let line = match (face, eyes) {
            (None, _) => json!({ "frame": id, "status": "NO_FACE", "face": null, "eyes": null }),
            (Some(f), Some(Ok(e))) => json!({ "frame": id, "status": "ok", "face": f, "eyes": e }),
            (Some(f), _) => json!({ "frame": id, "status": "NO_EYES", "face": f, "eyes": null }),
        };
        let _ = writeln!(out, "{line}");
    }
    print!("{out}");
    Ok(())
}

fn infer(a: InferArgs, exec: Exec) -> Result<()> {
    let net = network(&a.model)?;
    let face_model = cascade(&a.detectors.face_model, "face model")?;
    let eye_model = cascade(&a.detectors.eye_model, "eye model")?;
    let p = Pipeline { face_model: &face_model, eye_model: &eye_model, config: pipeline_config(&a.detectors), exec };
    for (id, img) in frames::load(&a.frames)? {
        let t = classify_frame(&p, &net, &img, exec)?;
        println!("{id},{},{:.3}", t.outcome, t.total.as_secs_f64() * 1e3);
    }
    Ok(())
}

fn bench(a: BenchArgs, exec: Exec) -> Result<()> {
    let net = network(&a.model)?;
    let face_model = cascade(&a.detectors.face_model, "face model")?;
    let eye_model = cascade(&a.detectors.eye_model, "eye model")?;
    let frames: Vec<_> = frames::load(&a.frames)?.into_iter().map(|(_, f)| f).collect();
    let report = bench_pipeline(&frames, &face_model, &eye_model, &net, &pipeline_config(&a.detectors), a.repetitions, exec)
        .map_err(|e| match e {
            BenchError::TooFewFrames(_) | BenchError::MixedSizes { .. } => CliError::Usage(e.to_string()),
            e => e.into(),
        })?;
    println!("{report}");
    if let Some(p) = &a.json_out {
        write(p, &report.to_json())?;
    }
    Ok(())
}

fn train_cascade(a: TrainCascadeArgs, seed: u64, exec: Exec) -> Result<()> {
    let mut recipe = match a.target {
        CascadeTarget::Face => CascadeRecipe::face(seed),
        CascadeTarget::Eye => CascadeRecipe::eye(seed),
    };
    if let Some(n) = a.scenes {
        recipe.scenes = n;
    }
    if let Some(n) = a.max_stages {
        recipe.train.max_stages = n;
    }
    let model = train_scene_cascade(&recipe, exec)?;
    save_cascade_file(&model, &a.out)?;
    println!("{}", json!({ "stages": model.stages().len(), "weak_classifiers": model.weak_count() }));
    Ok(())
}
