//! Command-line pipelines: synthetic data, pseudo ground truth, training,
//! inference, evaluation and downsampling.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::codec::DecodeParams;
use crate::datapipe::{
    degrade, filter_detections, load_pgm16, normalize, parse_detection_lines, save_pgm16, synth_detections,
    synth_scene, AnnotationSet, DepthImage, FilterParams, ImageAnnotation, Sample, SceneSpec, DEFAULT_D_MAX,
};
use crate::eval::{predict, PckAccumulator};
use crate::model::ModelConfig;
use crate::trainer::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const ANNOTATIONS_FILE: &str = "annotations.json";

#[derive(Debug, Parser)]
#[command(name = "depthpose", version, about = "Multi-person pose estimation on low-resolution depth images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic depth scenes with ground-truth annotations.
    Synth(SynthArgs),
    /// Filter color-image detections into pseudo ground truth.
    PseudoGt(PseudoGtArgs),
    /// Train a model on a directory of depth images and annotations.
    Train(TrainArgs),
    /// Estimate poses on one depth image.
    Infer(InferArgs),
    /// Score predictions against ground truth with PCK.
    Eval(EvalArgs),
    /// Write bicubically downsampled copies of every PGM in a directory.
    Downsample(DownsampleArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub num: usize,
    #[arg(long, default_value_t = 3)]
    pub max_persons: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write noisy color-detector style detections (JSON lines) here.
    #[arg(long)]
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PseudoGtArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub box_thresh: f32,
    #[arg(long, default_value_t = 0.35)]
    pub kp_thresh: f32,
    #[arg(long, default_value_t = 4)]
    pub min_kp: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame size recorded for every image.
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 480)]
    pub height: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// RunConfig JSON; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Low-resolution depth PGM (or full resolution with --hr).
    #[arg(long)]
    pub image: PathBuf,
    /// Single forward pass instead of the flip test.
    #[arg(long)]
    pub no_flip: bool,
    /// The image is full resolution and is degraded by the model's factor first.
    #[arg(long)]
    pub hr: bool,
    /// Overrides the factor stored with the checkpoint.
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f32,
    #[arg(long, default_value = "model")]
    pub label: String,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    #[arg(long, value_parser = parse_factor)]
    pub factor: usize,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_D_MAX)]
    pub d_max: f32,
}

fn parse_factor(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(f @ (8 | 10)) => Ok(f),
        _ => Err(format!("factor must be 8 or 10, got {s}")),
    }
}

/// Everything a run needs. Files may give any subset of keys; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub decode: DecodeParams,
    /// Depth in millimetres mapped to 255.
    pub d_max: f32,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Training images scored every `train.eval_every` iterations.
    pub eval_images: usize,
    pub alpha: f32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            decode: DecodeParams::default(),
            d_max: DEFAULT_D_MAX,
            data: None,
            out: None,
            eval_images: 8,
            alpha: 0.2,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::PseudoGt(a) => cmd_pseudo_gt(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Downsample(a) => cmd_downsample(&a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    AnnotationSet::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let topo = ModelConfig::desk().topology;
    let mut set = AnnotationSet::new(topo);
    let mut dets = Vec::new();
    for i in 0..a.num as u64 {
        let seed = a.seed.wrapping_add(i);
        let spec = SceneSpec::random_up_to(seed, a.max_persons.max(1));
        let (img, skels) = synth_scene(&spec);
        let id = format!("scene_{seed:05}");
        save_pgm16(&img, a.out.join(format!("{id}.pgm"))).with_context(|| format!("writing {id}.pgm"))?;
        if a.detections.is_some() {
            dets.push(synth_detections(&id, &skels, seed));
        }
        set.images.insert(
            id,
            ImageAnnotation {
                size: (img.width, img.height),
                skeletons: skels,
            },
        );
    }
    write_file(&a.out.join(ANNOTATIONS_FILE), set.to_json())?;
    if let Some(path) = &a.detections {
        write_file(path, crate::datapipe::detection_lines(&dets))?;
    }
    println!("wrote {} scenes to {}", a.num, a.out.display());
    Ok(())
}

pub fn cmd_pseudo_gt(a: &PseudoGtArgs) -> Result<()> {
    let text = fs::read_to_string(&a.detections).with_context(|| format!("reading {}", a.detections.display()))?;
    let (recs, mut errors) = parse_detection_lines(&text);
    let params = FilterParams {
        box_thresh: a.box_thresh,
        kp_thresh: a.kp_thresh,
        min_kp: a.min_kp,
    };
    let topo = ModelConfig::desk().topology;
    let (set, invalid) = filter_detections(&recs, &params, &topo, (a.width, a.height));
    errors.extend(invalid);
    for e in &errors {
        let at = match (&e.line, &e.image_id) {
            (Some(l), _) => format!("line {l}"),
            (None, Some(id)) => format!("image {id}"),
            (None, None) => "input".into(),
        };
        eprintln!("warning: skipped {at}: {}", e.message);
    }
    let total: usize = recs.iter().map(|r| r.boxes.len()).sum();
    let kept: usize = set.images.values().map(|i| i.skeletons.len()).sum();
    write_file(&a.out, set.to_json())?;
    println!("kept {kept} dropped {} skipped {}", total - kept, errors.len());
    Ok(())
}

/// Loads `annotations.json` and the matching PGMs from `dir` as samples.
pub fn load_dataset(dir: &Path, factor: usize, d_max: f32, topo: &crate::codec::JointTopology) -> Result<Vec<Sample>> {
    let set = read_annotations(&dir.join(ANNOTATIONS_FILE))?;
    if set.topology != *topo {
        bail!("annotation topology differs from the model topology");
    }
    set.images
        .iter()
        .map(|(id, ann)| {
            let path = dir.join(format!("{id}.pgm"));
            let img = load_pgm16(&path).with_context(|| format!("reading {}", path.display()))?;
            if (img.width, img.height) != ann.size {
                bail!("{id}: image is {}x{}, annotation says {:?}", img.width, img.height, ann.size);
            }
            Sample::from_depth(id.clone(), &img, ann.skeletons.clone(), factor, topo, d_max)
                .with_context(|| format!("preparing {id}"))
        })
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        rc.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        rc.out = Some(o.clone());
    }
    if let Some(n) = a.iters {
        rc.train.total_iters = n;
    }
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    let data_dir = rc.data.clone().context("no data directory (use --data or the config's \"data\")")?;
    let out_dir = rc.out.clone().context("no output directory (use --out or the config's \"out\")")?;
    rc.train.validate()?;
    let data = load_dataset(&data_dir, rc.train.factor, rc.d_max, &rc.train.model.topology)?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_file(&out_dir.join("run_config.json"), serde_json::to_string_pretty(&rc)?)?;

    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(rc.train.clone(), &data, &load_checkpoint(p)?)?,
        None => Trainer::new(rc.train.clone(), &data)?,
    };
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let eval_set = &data[..rc.eval_images.min(data.len())];
    let (ckpt_every, eval_every) = (rc.train.checkpoint_every, rc.train.eval_every);
    let total = rc.train.total_iters;
    let mut eval_log = Vec::new();
    trainer.run(total, Some(&mut log), |t, e| {
        let done = e.iter + 1;
        if done % 50 == 0 || done == total {
            log::info!("iter {done}/{total} total {:.6} l_p {:.6} lr {}", e.total, e.l_p, e.lr);
        }
        if ckpt_every > 0 && done % ckpt_every == 0 && done < total {
            save_checkpoint(out_dir.join(format!("ckpt_{done:06}.dpck")), &t.checkpoint())?;
        }
        if eval_every > 0 && done % eval_every == 0 && !eval_set.is_empty() {
            let mut acc = PckAccumulator::new(rc.alpha, &rc.train.model.topology);
            for s in eval_set {
                match predict(t.model(), &s.lr, s.factor, false, &rc.decode) {
                    Ok(preds) => acc.add_image(&preds, &s.skeletons),
                    Err(e) => {
                        log::warn!("evaluation at iter {done} failed: {e}");
                        return Ok(());
                    }
                }
            }
            if let Ok(r) = acc.report() {
                log::info!("iter {done}: training-image PCK@{} average {:.1}", rc.alpha, r.average);
                eval_log.push(format!("{{\"iter\":{done},\"report\":{}}}", serde_json::to_string(&r).expect("reports serialize")));
            }
        }
        Ok(())
    })?;
    log.flush()?;
    if !eval_log.is_empty() {
        write_file(&out_dir.join("eval_log.jsonl"), eval_log.join("\n") + "\n")?;
    }
    let final_path = out_dir.join("final.dpck");
    save_checkpoint(&final_path, &trainer.checkpoint())?;
    println!("trained {} iterations; checkpoint {}", trainer.iteration(), final_path.display());
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let factor = a
        .factor
        .or(ckpt.config.as_ref().map(|c| c.factor))
        .unwrap_or(rc.train.factor);
    parse_factor(&factor.to_string()).map_err(anyhow::Error::msg)?;
    let model = ckpt.to_model()?;
    let img = load_pgm16(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let mut lr = normalize(&img, rc.d_max);
    if a.hr {
        lr = degrade(&lr, factor)?.0;
    }
    let skeletons = predict(&model, &lr, factor, !a.no_flip, &rc.decode)?;
    let id = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let mut set = AnnotationSet::new(model.config().topology.clone());
    let size = (lr.shape()[2] * factor, lr.shape()[1] * factor);
    println!("{id}: {} persons", skeletons.len());
    set.images.insert(id, ImageAnnotation { size, skeletons });
    write_file(&a.out, set.to_json())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = read_annotations(&a.pred)?;
    let gt = read_annotations(&a.gt)?;
    if pred.topology != gt.topology {
        bail!("prediction and ground-truth topologies differ");
    }
    let mut acc = PckAccumulator::new(a.alpha, &gt.topology);
    for (id, g) in &gt.images {
        let p = pred.images.get(id).map_or(&[][..], |p| &p.skeletons[..]);
        acc.add_image(p, &g.skeletons);
    }
    for id in pred.images.keys().filter(|id| !gt.images.contains_key(*id)) {
        log::warn!("prediction for unknown image {id} ignored");
    }
    let report = acc.report()?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table(&a.label));
    }
    Ok(())
}

/// Back to millimetres, inverting `normalize`.
fn to_depth(lr: &crate::tensor::Tensor<f32>, d_max: f32) -> Result<DepthImage> {
    let (h, w) = (lr.shape()[1], lr.shape()[2]);
    let raw = lr
        .data()
        .iter()
        .map(|&v| (v / 255.0 * d_max).round().clamp(0.0, 65535.0) as u16)
        .collect();
    Ok(DepthImage::new(w, h, raw)?)
}

pub fn cmd_downsample(a: &DownsampleArgs) -> Result<()> {
    let mut inputs: Vec<PathBuf> = fs::read_dir(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    inputs.sort();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for p in &inputs {
        let img = load_pgm16(p).with_context(|| format!("reading {}", p.display()))?;
        let (lr, _) = degrade(&normalize(&img, a.d_max), a.factor).with_context(|| format!("degrading {}", p.display()))?;
        let name = p.file_name().expect("listed files have names");
        save_pgm16(&to_depth(&lr, a.d_max)?, a.out.join(name))?;
    }
    println!("downsampled {} images by {}", inputs.len(), a.factor);
    Ok(())
}
