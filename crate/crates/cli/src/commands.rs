use std::collections::BTreeSet;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use log::info;
use occspot_core::augment::{beam_resample, ResampleFactor, DEFAULT_MERGE_THRESHOLD_DEG};
use occspot_core::balance::{class_stats, sampling_weights, FrameSummary};
use occspot_core::learn::{self, evaluate, miou, read_checkpoint, write_checkpoint, ModelParams};
use occspot_core::occ::{make_occupancy, write_grid};
use occspot_core::pipeline::{
    finetune_set, pretrain_set, segmentation_set, simulate_split, PipelineConfig, SceneSequence, Split,
};
use occspot_core::rng::{self, Stream};
use occspot_core::synth::{read_sequence_dir, write_sequence_dir, SequenceFrame};
use occspot_core::theory::run_sweeps;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{digest_input, Manifest, StagedDir, StagedFiles};

const SEQUENCE_META: &str = "sequence.json";

fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| format!("{}: at `{}`: {}", path.display(), e.path(), e.inner()))
}

/// Parse and validate a pipeline config; the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    let cfg = match path {
        None => PipelineConfig::default(),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            PipelineConfig::from_json(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate().map_err(CliError::config)?;
    Ok(cfg)
}

/// A single sequence directory, or every sequence directory directly below
/// `dir` in name order.
pub fn load_sequences(dir: &Path) -> CliResult<Vec<SceneSequence>> {
    let load = |d: &Path| -> CliResult<SceneSequence> {
        let (meta, frames) = read_sequence_dir(d).map_err(|e| CliError::data(format!("{}: {e}", d.display())))?;
        Ok(SceneSequence { meta, frames })
    };
    if dir.join(SEQUENCE_META).is_file() {
        return Ok(vec![load(dir)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SEQUENCE_META).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::data(format!("no sequences under {}", dir.display())));
    }
    dirs.iter().map(|d| load(d)).collect()
}

fn check_keyframe(cfg: &PipelineConfig, seqs: &[SceneSequence]) -> CliResult<()> {
    let key = cfg.data.sequence.keyframe();
    match seqs.iter().find(|s| s.frames.len() <= key) {
        Some(s) => Err(CliError::data(format!(
            "keyframe {key} is out of range for a sequence of {} frames",
            s.frames.len()
        ))),
        None => Ok(()),
    }
}

pub fn gen_scenes(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> CliResult<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.map_or_else(|| cfg.paths.data_dir.clone(), Path::to_path_buf);
    let stage = StagedDir::new(&out)?;
    let mut counts = serde_json::Map::new();
    for split in [Split::Pretrain, Split::Finetune, Split::Eval] {
        let seqs = simulate_split(&cfg.data, cfg.seed, split)?;
        for (i, s) in seqs.iter().enumerate() {
            let dir = stage.path().join(split.name()).join(format!("seq_{i:04}"));
            write_sequence_dir(&dir, &s.meta, &s.frames)?;
        }
        info!("{}: {} sequences", split.name(), seqs.len());
        counts.insert(split.name().into(), seqs.len().into());
    }
    let mut cfg_bytes = serde_json::to_vec_pretty(&cfg).expect("config serializes");
    cfg_bytes.push(b'\n');
    fs::write(stage.path().join("config.json"), cfg_bytes)?;
    let manifest = Manifest::new("gen-scenes", json!({ "sequences": counts })).with_config(&cfg);
    let done = stage.commit(manifest)?;
    info!("wrote {}", done.display());
    Ok(())
}

pub fn make_occ(config: &Path, sequence: &Path, out: &Path, keyframe: Option<usize>) -> CliResult<()> {
    let cfg = load_config(Some(config))?;
    let (meta, frames) = read_sequence_dir(sequence)?;
    let key = keyframe.or(cfg.data.sequence.keyframe).unwrap_or(frames.len() / 2);
    if key >= frames.len() {
        return Err(CliError::data(format!(
            "keyframe {key} out of range for {} frames",
            frames.len()
        )));
    }
    let grid = make_occupancy(&frames, &meta, &cfg.data.grid, key, &cfg.data.occ, &cfg.loss_weights()?)?;
    let mut bytes = Vec::new();
    write_grid(&mut bytes, &grid)?;
    let mut staged = StagedFiles::new();
    staged.add(out, &bytes)?;
    let manifest = Manifest::new("make-occ", json!({ "keyframe": key }))
        .with_config(&cfg)
        .input("sequence", sequence)?;
    staged.commit(out, manifest)?;
    info!("{}: {} occupied cells", out.display(), grid.nonzero_count());
    Ok(())
}

pub fn resample(factor: f64, seed: u64, input: &Path, out: &Path) -> CliResult<()> {
    let factor = ResampleFactor::new(factor).map_err(CliError::config)?;
    let (meta, frames) = read_sequence_dir(input)?;
    let resampled: Vec<SequenceFrame> = frames
        .iter()
        .enumerate()
        .map(|(t, f)| SequenceFrame {
            cloud: beam_resample(
                &f.cloud,
                factor,
                rng::child_seed(seed, Stream::Augment, t as u64),
                DEFAULT_MERGE_THRESHOLD_DEG,
            ),
            boxes: f.boxes.clone(),
        })
        .collect();
    let stage = StagedDir::new(out)?;
    write_sequence_dir(stage.path(), &meta, &resampled)?;
    let mut manifest = Manifest::new("resample", json!({ "factor": factor.value() })).input("sequence", input)?;
    manifest.seed = Some(seed);
    stage.commit(manifest)?;
    Ok(())
}

/// Per-class instance counts, as read by `balance-weights`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountsFile {
    classes: Vec<u8>,
    counts: Vec<u64>,
}

pub fn balance_weights(stats: &Path) -> CliResult<()> {
    let bytes = fs::read(stats).map_err(|e| CliError::data(format!("{}: {e}", stats.display())))?;
    let file: CountsFile = parse_json(stats, &bytes).map_err(CliError::Data)?;
    if file.classes.len() != file.counts.len() {
        return Err(CliError::data("`classes` and `counts` differ in length"));
    }
    if file.classes.iter().collect::<BTreeSet<_>>().len() != file.classes.len() {
        return Err(CliError::data("`classes` contains duplicates"));
    }
    let summary: FrameSummary = file.classes.iter().copied().zip(file.counts.iter().copied()).collect();
    let s = sampling_weights(&class_stats(&[summary], &file.classes)?)?;
    println!("{}", serde_json::to_string_pretty(&s).expect("weights serialize"));
    Ok(())
}

fn checkpoint_bytes(params: &ModelParams, seed: u64, hyper: serde_json::Value) -> CliResult<Vec<u8>> {
    if !params.is_finite() {
        return Err(CliError::Numerical("training produced non-finite parameters".into()));
    }
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, params, seed, hyper)?;
    Ok(bytes)
}

fn trace_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("trace.json")
}

fn write_run(out: &Path, ckpt: Vec<u8>, trace: &learn::LossTrace, manifest: Manifest) -> CliResult<()> {
    let mut staged = StagedFiles::new();
    staged.add(out, &ckpt)?;
    let mut trace_bytes = serde_json::to_vec_pretty(trace).expect("trace serializes");
    trace_bytes.push(b'\n');
    staged.add(&trace_path(out), &trace_bytes)?;
    staged.commit(out, manifest)?;
    info!("wrote {}", out.display());
    Ok(())
}

pub fn pretrain(config: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(config)?;
    let data_dir = cfg.paths.data_dir.join(Split::Pretrain.name());
    let seqs = load_sequences(&data_dir)?;
    check_keyframe(&cfg, &seqs)?;
    let set = pretrain_set(&cfg, &seqs)?;
    drop(seqs);
    let train = cfg.effective(&cfg.pretrain);
    let (params, trace) = learn::pretrain(&set, &cfg.model, &train, &cfg.loss_weights()?)?;
    let out = out.map_or_else(|| cfg.paths.out_dir.join("pretrain.spck"), Path::to_path_buf);
    let hyper = json!({ "stage": "pretrain", "pipeline": cfg });
    let ckpt = checkpoint_bytes(&params, train.seed, hyper)?;
    let manifest = Manifest::new("pretrain", json!({ "scenes": set.items.len() }))
        .with_config(&cfg)
        .input("data", &data_dir)?;
    write_run(&out, ckpt, &trace, manifest)
}

pub fn finetune(config: Option<&Path>, ckpt: Option<&Path>, labels: usize, out: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(config)?;
    if labels == 0 {
        return Err(CliError::Config("--labels must be at least 1".into()));
    }
    let data_dir = cfg.paths.data_dir.join(Split::Finetune.name());
    let mut seqs = load_sequences(&data_dir)?;
    if labels > seqs.len() {
        return Err(CliError::data(format!(
            "--labels {labels} exceeds the {} labeled scenes in {}",
            seqs.len(),
            data_dir.display()
        )));
    }
    seqs.truncate(labels);
    check_keyframe(&cfg, &seqs)?;
    let set = finetune_set(&cfg, &seqs)?;
    let init = ckpt
        .map(|p| {
            let f = File::open(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            Ok::<_, CliError>(read_checkpoint(f)?.0)
        })
        .transpose()?;
    let train = cfg.effective(&cfg.finetune);
    let (params, trace) = learn::finetune_segmentation(init.as_ref(), &set, &cfg.model, &train, &cfg.loss_weights()?)?;
    let out = out.map_or_else(|| cfg.paths.out_dir.join("finetune.spck"), Path::to_path_buf);
    let init_digest = ckpt.map(digest_input).transpose()?;
    let hyper = json!({ "stage": "finetune", "labels": labels, "init": init_digest, "pipeline": cfg });
    let bytes = checkpoint_bytes(&params, train.seed, hyper)?;
    let mut manifest = Manifest::new("finetune", json!({ "labels": labels, "pretrained": ckpt.is_some() }))
        .with_config(&cfg)
        .input("data", &data_dir)?;
    if let Some(p) = ckpt {
        manifest = manifest.input("checkpoint", p)?;
    }
    write_run(&out, bytes, &trace, manifest)
}

pub fn eval_miou(ckpt: &Path, dataset: &Path) -> CliResult<()> {
    let f = File::open(ckpt).map_err(|e| CliError::data(format!("{}: {e}", ckpt.display())))?;
    let (params, header) = read_checkpoint(f)?;
    let pipeline = header
        .hyper
        .get("pipeline")
        .cloned()
        .ok_or_else(|| CliError::data("checkpoint carries no pipeline config"))?;
    let cfg: PipelineConfig =
        serde_json::from_value(pipeline).map_err(|e| CliError::data(format!("checkpoint config: {e}")))?;
    let seqs = load_sequences(dataset)?;
    check_keyframe(&cfg, &seqs)?;
    let samples = segmentation_set(&cfg, &seqs)?;
    let report = miou(&evaluate(&params, &samples)?, true);
    let out = json!({ "scenes": samples.len(), "miou": report.miou, "per_class": report.per_class });
    println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
    Ok(())
}

pub fn theory_check(sweeps: usize, seed: u64) -> CliResult<()> {
    if sweeps == 0 {
        return Err(CliError::Config("--sweeps must be at least 1".into()));
    }
    let summary = run_sweeps(sweeps, seed)?;
    let min_slack = summary.bayes_bound.worst_margin;
    let mut out = serde_json::to_value(&summary).expect("summary serializes");
    out["min_slack"] = min_slack.into();
    out["all_hold"] = summary.all_hold().into();
    println!("{}", serde_json::to_string_pretty(&out).expect("summary serializes"));
    if !summary.all_hold() {
        return Err(CliError::Numerical("counterexamples found".into()));
    }
    Ok(())
}
