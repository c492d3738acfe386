//! Command implementations behind the `posecast` binary.

pub mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use posecast_core::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig};
use posecast_core::motion::{load_scene, save_scene, save_scene_with, synth_scene, Behavior, Scene, SynthConfig};
use posecast_core::training::{evaluate, evaluate_baseline, make_samples, train, ReportMeta, TrainConfig};
use posecast_core::{Error, Result};

pub use manifest::{content_hash, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "posecast", version, about = "Multi-person 3D pose forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic multi-person scenes.
    Gen(GenArgs),
    /// Train a model on a directory of scenes.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a directory of scenes.
    Eval(EvalArgs),
    /// Forecast the frames following a scene.
    Predict(PredictArgs),
    /// Export attention weights or trajectory indices as CSV.
    Dump(DumpArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 3)]
    pub persons: usize,
    #[arg(long, default_value_t = 76)]
    pub frames: usize,
    #[arg(long, default_value_t = 8)]
    pub scenes: usize,
    #[arg(long, default_value = "mixed")]
    pub behavior: Behavior,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of scene files (or a single scene file).
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Ablation flags, repeated or comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub ablation: Vec<String>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Horizons in seconds.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.6,1.0")]
    pub horizons: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also report the zero-velocity baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Observed frames per scene; defaults to the value stored in the checkpoint.
    #[arg(long)]
    pub observed: Option<usize>,
    /// Writes the report here (plus a manifest) instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DumpWhat {
    /// Encoder self-attention of one block, `M×M`, averaged over heads.
    Attention,
    /// Decoder cross-attention of one layer, `P×M`, averaged over heads.
    CrossAttention,
    /// Token-pair bias index matrix, `M×M`.
    Psi,
    /// Per-window trajectory distances and their indices.
    TrpeIndices,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum)]
    pub what: DumpWhat,
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: format!("config {}", path.display()),
            message: e.to_string(),
        })
    }
}

/// Process exit code for an error: 3 for I/O failures, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        2
    } else {
        3
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Dump(a) => cmd_dump(&a),
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `<file>.manifest.json` next to a single-file output.
fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn scene_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let cfg = SynthConfig {
        persons: a.persons,
        frames: a.frames,
        fps: a.fps,
        behavior: a.behavior,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    if a.scenes == 0 {
        return Err(Error::validation("scenes", "must be positive"));
    }
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new(
        "gen",
        serde_json::json!({
            "persons": a.persons,
            "frames": a.frames,
            "scenes": a.scenes,
            "behavior": a.behavior.to_string(),
            "fps": a.fps,
        }),
        Some(a.seed),
    );
    for i in 0..a.scenes {
        let scene = synth_scene(&cfg, scene_seed(a.seed, i))?;
        let path = a.out.join(format!("scene_{i:04}.json"));
        save_scene(&path, &scene)?;
        manifest.output(&path)?;
    }
    manifest.write(&a.out.join("manifest.json"))
}

/// Scene files under `path` (sorted, manifests skipped), or `path` itself.
pub fn scene_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(path, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if p.extension().is_some_and(|x| x == "json") && !name.ends_with("manifest.json") {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::validation(path.display().to_string(), "no scene files found"));
    }
    Ok(out)
}

fn load_scenes(path: &Path) -> Result<(Vec<PathBuf>, Vec<Scene>)> {
    let paths = scene_paths(path)?;
    let scenes = paths
        .iter()
        .map(|p| {
            load_scene(p).map_err(|e| match e {
                Error::Io { .. } => e,
                other => Error::validation(p.display().to_string(), other.to_string()),
            })
        })
        .collect::<Result<_>>()?;
    Ok((paths, scenes))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for flag in &a.ablation {
        cfg.train.ablation.set(flag.trim())?;
    }
    cfg.train.ablation.validate()?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    let model_cfg = cfg.train.model_config(&cfg.model)?;
    let (paths, scenes) = load_scenes(&a.data)?;
    let mut model = Model::new(model_cfg, cfg.train.seed)?;
    let report = train(&mut model, &scenes, &cfg.train)?;

    create_dir(&a.out)?;
    let ckpt_path = a.out.join("checkpoint.json");
    let loss_path = a.out.join("loss.csv");
    save_checkpoint(&ckpt_path, &Checkpoint::new(model, Some(cfg.train.observed_frames)))?;
    write_text(&loss_path, &report.loss_csv())?;

    let mut manifest = RunManifest::new("train", to_value(&cfg), Some(cfg.train.seed));
    paths.iter().for_each(|p| manifest.input(p));
    manifest.output(&ckpt_path)?;
    manifest.output(&loss_path)?;
    manifest.checkpoint_hash = manifest.output_hashes.get(&ckpt_path.display().to_string()).cloned();
    manifest.write(&a.out.join("manifest.json"))
}

fn checkpoint_with_hash(path: &Path) -> Result<(Checkpoint, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((load_checkpoint(path)?, content_hash(&bytes)))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (ckpt, hash) = checkpoint_with_hash(&a.ckpt)?;
    let observed = a
        .observed
        .or(ckpt.observed_frames)
        .ok_or_else(|| Error::validation("observed", "not stored in the checkpoint; pass --observed"))?;
    let model = &ckpt.model;
    let (paths, scenes) = load_scenes(&a.data)?;
    let samples = make_samples(&scenes, observed, model.config.horizon)?;
    let mut report = evaluate(model, &samples, &a.horizons)?;
    if a.baseline {
        let base = evaluate_baseline(&samples, &a.horizons)?;
        report.extend_prefixed(&base, "zero_velocity");
    }
    report.meta = ReportMeta {
        seed: None,
        config_hash: Some(content_hash(&serde_json::to_vec(&model.config).expect("serializable"))),
        dataset_id: Some(a.data.display().to_string()),
    };
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json()? + "\n",
    };
    match &a.out {
        None => print!("{text}"),
        Some(out) => {
            write_text(out, &text)?;
            let mut manifest = RunManifest::new(
                "eval",
                serde_json::json!({
                    "horizons": a.horizons,
                    "format": format!("{:?}", a.format).to_lowercase(),
                    "baseline": a.baseline,
                    "observed": observed,
                }),
                None,
            );
            manifest.input(&a.ckpt);
            paths.iter().for_each(|p| manifest.input(p));
            manifest.checkpoint_hash = Some(hash);
            manifest.output(out)?;
            manifest.write(&sibling_manifest(out))?;
        }
    }
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (ckpt, hash) = checkpoint_with_hash(&a.ckpt)?;
    let observed = load_scene(&a.scene)?;
    let predicted = ckpt.model.predict(&observed)?;
    let mut persons = Vec::with_capacity(observed.num_persons());
    for (o, p) in observed.persons.iter().zip(&predicted.persons) {
        persons.push(o.concat(p)?);
    }
    let full = Scene::new(observed.fps, observed.unit, observed.skeleton.clone(), persons)?;
    save_scene_with(&a.out, &full, Some(observed.num_frames()))?;
    let mut manifest = RunManifest::new("predict", serde_json::json!({}), None);
    manifest.input(&a.ckpt);
    manifest.input(&a.scene);
    manifest.checkpoint_hash = Some(hash);
    manifest.output(&a.out)?;
    manifest.write(&sibling_manifest(&a.out))
}

fn matrix_csv(rows: usize, cols: usize, at: impl Fn(usize, usize) -> String) -> String {
    let mut s = String::from("row");
    for j in 0..cols {
        write!(s, ",{j}").unwrap();
    }
    s.push('\n');
    for i in 0..rows {
        write!(s, "{i}").unwrap();
        for j in 0..cols {
            write!(s, ",{}", at(i, j)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn cmd_dump(a: &DumpArgs) -> Result<()> {
    let (ckpt, hash) = checkpoint_with_hash(&a.ckpt)?;
    let model = &ckpt.model;
    let scene = load_scene(&a.scene)?;
    let text = match a.what {
        DumpWhat::Attention | DumpWhat::CrossAttention => {
            let dump = model.attention(&scene)?;
            let maps = if a.what == DumpWhat::Attention {
                &dump.encoder
            } else {
                &dump.decoder_cross
            };
            let m = maps.get(a.layer).ok_or_else(|| {
                Error::validation("layer", format!("{} out of range for {} layers", a.layer, maps.len()))
            })?;
            let (r, c) = m.dims2()?;
            matrix_csv(r, c, |i, j| format!("{:?}", m.at2(i, j)))
        }
        DumpWhat::Psi | DumpWhat::TrpeIndices => {
            let prep = model.prepare(&scene)?;
            let (Some(psi), Some(sim)) = (&prep.psi, &prep.similarity) else {
                return Err(Error::validation(
                    "what",
                    "the model was built without the trajectory bias",
                ));
            };
            if a.what == DumpWhat::Psi {
                matrix_csv(psi.size(), psi.size(), |i, j| psi.get(i, j).to_string())
            } else {
                let mut s = String::from("person_a,person_b,window,distance,index\n");
                for m in 0..sim.persons {
                    for n in 0..sim.persons {
                        for w in 0..sim.windows {
                            let d = sim.get(m, n, w);
                            let idx = if m == n {
                                model.config.trpe.index(0.0)
                            } else {
                                model.config.trpe.index(model.config.trpe.scale * d)
                            };
                            writeln!(s, "{m},{n},{w},{d:?},{idx}").unwrap();
                        }
                    }
                }
                s
            }
        }
    };
    write_text(&a.out, &text)?;
    let mut manifest = RunManifest::new(
        "dump",
        serde_json::json!({ "what": format!("{:?}", a.what), "layer": a.layer }),
        None,
    );
    manifest.input(&a.ckpt);
    manifest.input(&a.scene);
    manifest.checkpoint_hash = Some(hash);
    manifest.output(&a.out)?;
    manifest.write(&sibling_manifest(&a.out))
}
