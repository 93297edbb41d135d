//! The `pointgen` command line: dataset preparation, training,
//! reconstruction, sampling, evaluation and rendering, each leaving a
//! [`RunManifest`] that `pointgen rerun` can replay.

pub mod manifest;
pub mod render;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use pointgen::geometry::{load_mesh, read_xyz, synthetic_dataset, write_ply, write_xyz, Axis3, MeshFormat, PointCloud, ShapeKind};
use pointgen::metrics::{chamfer_with, ChamferMode, MetricsReport};
use pointgen::models::{DecoderKind, EncoderKind, MadeConfig, ModelConfig, ModelSpec};
use pointgen::rng::{self, streams};
use pointgen::training::{evaluate, fit, EvalMode, IdentityModel, Network, PointModel, TrainConfig, TrainedModel};

pub use manifest::{RunManifest, MANIFEST_FILE};

pub const LOG_FILE: &str = "train.log";
pub const REPORT_FILE: &str = "report.txt";
pub const TABLE_FILE: &str = "table.txt";

#[derive(Debug, Parser, Serialize)]
#[command(name = "pointgen", version, about = "Generative models for 3-D point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Sample normalized point clouds from synthetic shapes or mesh files.
    MakeDataset(MakeDatasetArgs),
    /// Train a VAE variant or the MADE density model.
    Train(TrainArgs),
    /// Encode and decode clouds with a trained VAE.
    Reconstruct(ReconstructArgs),
    /// Draw clouds from a trained model.
    Sample(SampleArgs),
    /// Score a model or a set of generated clouds against references.
    Evaluate(EvaluateArgs),
    /// Render clouds as XY/XZ/YZ projections in SVG.
    Render(RenderArgs),
    /// Replay the command recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MakeDataset(_) => "make-dataset",
            Command::Train(_) => "train",
            Command::Reconstruct(_) => "reconstruct",
            Command::Sample(_) => "sample",
            Command::Evaluate(_) => "evaluate",
            Command::Render(_) => "render",
            Command::Rerun(_) => "rerun",
        }
    }

    fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::MakeDataset(a) => Some(&mut a.out),
            Command::Train(a) => Some(&mut a.out),
            Command::Reconstruct(a) => Some(&mut a.out),
            Command::Sample(a) => Some(&mut a.out),
            Command::Evaluate(a) => a.out.as_mut(),
            Command::Render(a) => Some(&mut a.out),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Sphere,
    Box,
    Cylinder,
    Cross,
}

impl From<KindArg> for ShapeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sphere => ShapeKind::Sphere,
            KindArg::Box => ShapeKind::Box,
            KindArg::Cylinder => ShapeKind::Cylinder,
            KindArg::Cross => ShapeKind::Cross,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Vae,
    Made,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderArg {
    Pointnet,
    Transformer,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Pointnet => EncoderKind::PointNet,
            EncoderArg::Transformer => EncoderKind::Transformer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderArg {
    Mlp,
    Nade,
}

impl From<DecoderArg> for DecoderKind {
    fn from(d: DecoderArg) -> Self {
        match d {
            DecoderArg::Mlp => DecoderKind::Mlp,
            DecoderArg::Nade => DecoderKind::Nade,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis3 {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis3::X,
            AxisArg::Y => Axis3::Y,
            AxisArg::Z => Axis3::Z,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    Xyz,
    Ply,
}

impl FormatArg {
    fn extension(self) -> &'static str {
        match self {
            FormatArg::Xyz => "xyz",
            FormatArg::Ply => "ply",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Reconstruction,
    Generation,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeDatasetArgs {
    /// Synthetic shape family.
    #[arg(long, conflicts_with = "mesh_dir", required_unless_present = "mesh_dir")]
    pub kind: Option<KindArg>,
    /// Directory of .off/.obj meshes; one cloud per readable mesh.
    #[arg(long)]
    pub mesh_dir: Option<PathBuf>,
    /// Number of clouds (synthetic) or at most this many meshes.
    #[arg(long, default_value_t = 8)]
    pub n_shapes: usize,
    #[arg(long, default_value_t = 2048)]
    pub n_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and optimizer flags. Architecture options left unset keep their
/// defaults; options of the other model family are rejected.
#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory of .xyz clouds, all with the same point count.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Vae)]
    pub model: ModelArg,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderArg>,
    /// Inverse autoregressive flow layers on the latent (0 = none).
    #[arg(long)]
    pub flow_layers: Option<usize>,
    #[arg(long)]
    pub flow_hidden: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub nade_groups: Option<usize>,
    #[arg(long)]
    pub nade_group_latent: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub nade_widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub nade_embed_widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub conv_widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub encoder_fc: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub decoder_widths: Option<Vec<usize>>,
    #[arg(long)]
    pub transformer_layers: Option<usize>,
    #[arg(long)]
    pub transformer_heads: Option<usize>,
    #[arg(long)]
    pub transformer_dim: Option<usize>,
    #[arg(long)]
    pub transformer_ff: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub transformer_embed: Option<Vec<usize>>,
    #[arg(long)]
    pub made_hidden: Option<usize>,
    #[arg(long)]
    pub made_layers: Option<usize>,
    /// Axis clouds are sorted along for autoregressive models.
    #[arg(long, value_enum)]
    pub sort_axis: Option<AxisArg>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub kl_weight: f64,
    /// Weight of the sum-of-sigma penalty (MADE only).
    #[arg(long, default_value_t = 0.01)]
    pub sigma_weight: f64,
    /// Checkpoint every this many epochs (and always after the last one).
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

/// Optional expectations checked against the checkpoint's sidecar.
#[derive(Debug, Args, Serialize)]
pub struct ExpectArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderArg>,
    #[arg(long)]
    pub flow_layers: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    /// Directory holding the checkpoint and its sidecar.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input .xyz files or directories of them.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Xyz)]
    pub format: FormatArg,
    /// Use squared distances in the reported Chamfer distance.
    #[arg(long)]
    pub squared: bool,
    #[command(flatten)]
    pub expect: ExpectArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Xyz)]
    pub format: FormatArg,
    /// Also write the partial cloud after every autoregressive step.
    #[arg(long)]
    pub emit_steps: bool,
    #[command(flatten)]
    pub expect: ExpectArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Directory holding the checkpoint and its sidecar.
    #[arg(long, conflicts_with = "generated", required_unless_present = "generated")]
    pub checkpoint: Option<PathBuf>,
    /// Pre-generated clouds to score instead of a model (generation mode).
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Reconstruction)]
    pub mode: ModeArg,
    /// Generated clouds to draw; defaults to the reference count.
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Squared instead of plain Euclidean distances inside Chamfer.
    #[arg(long)]
    pub squared: bool,
    /// Row label in the table; derived from the model by default.
    #[arg(long)]
    pub label: Option<String>,
    /// Also write the report, table and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub expect: ExpectArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    /// .xyz files or directories of them.
    #[arg(required = true)]
    pub clouds: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a command touched, for its manifest.
#[derive(Default)]
struct Outcome {
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    results: Value,
}

/// Run a parsed command line; `args` is the raw argument list recorded in
/// the manifest.
pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Rerun(r) => rerun(&r),
        command => execute(command, args),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("POINTGEN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("POINTGEN_THREADS must be a positive integer, got `{v}`"))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(command: Command, args: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let config = serde_json::to_value(&command)?;
    let name = command.name();
    let (outcome, manifest_dir) = match &command {
        Command::MakeDataset(a) => (make_dataset(a)?, Some(a.out.clone())),
        Command::Train(a) => (train(a)?, Some(a.out.clone())),
        Command::Reconstruct(a) => (reconstruct(a)?, Some(a.out.clone())),
        Command::Sample(a) => (sample(a)?, Some(a.out.clone())),
        Command::Evaluate(a) => (evaluate_cmd(a)?, a.out.clone()),
        Command::Render(a) => (render(a)?, Some(a.out.clone())),
        Command::Rerun(_) => unreachable!("handled by run"),
    };
    if let Some(dir) = manifest_dir {
        let manifest = RunManifest {
            command: name.to_string(),
            args,
            config: config.get(name).cloned().unwrap_or(config),
            seed: outcome.seed,
            cwd: std::env::current_dir()?,
            inputs: outcome.inputs,
            outputs: outcome.outputs,
            results: outcome.results,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: start.elapsed().as_secs_f64(),
        };
        manifest.write_atomic(&dir)?;
    }
    Ok(())
}

fn rerun(r: &RerunArgs) -> Result<()> {
    let manifest = RunManifest::read(&r.manifest)?;
    let mut argv = vec!["pointgen".to_string()];
    argv.extend(manifest.args.iter().cloned());
    let mut cli = Cli::try_parse_from(&argv).map_err(|e| anyhow!("manifest arguments no longer parse: {e}"))?;
    if let Command::Rerun(_) = cli.command {
        bail!("manifest records a rerun, which cannot be replayed");
    }
    let mut args = manifest.args.clone();
    if let Some(out) = &r.out {
        let out = std::path::absolute(out)?;
        match cli.command.out_mut() {
            Some(slot) => *slot = out.clone(),
            None => bail!("the recorded {} command has no output directory", manifest.command),
        }
        args = replace_out(&args, &out);
    }
    std::env::set_current_dir(&manifest.cwd)
        .with_context(|| format!("cannot enter recorded directory {}", manifest.cwd.display()))?;
    execute(cli.command, args)
}

/// `args` with the value of `--out` replaced.
fn replace_out(args: &[String], out: &Path) -> Vec<String> {
    let out = out.display().to_string();
    let mut res = Vec::with_capacity(args.len() + 2);
    let mut it = args.iter();
    let mut seen = false;
    while let Some(a) = it.next() {
        if a == "--out" {
            res.push(a.clone());
            res.push(out.clone());
            it.next();
            seen = true;
        } else if a.starts_with("--out=") {
            res.push(format!("--out={out}"));
            seen = true;
        } else {
            res.push(a.clone());
        }
    }
    if !seen {
        res.push("--out".into());
        res.push(out);
    }
    res
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Every `.xyz` under the given files or directories, directories listed in
/// name order.
pub fn collect_xyz(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "xyz"))
                .collect();
            entries.sort();
            if entries.is_empty() {
                bail!("no .xyz files in {}", p.display());
            }
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn read_clouds(files: &[PathBuf]) -> Result<Vec<PointCloud>> {
    files
        .iter()
        .map(|f| read_xyz(f).with_context(|| format!("cannot read {}", f.display())))
        .collect()
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| anyhow!("cannot derive a file name from {}", path.display()))
}

fn write_cloud(cloud: &PointCloud, path: &Path, format: FormatArg) -> Result<()> {
    match format {
        FormatArg::Xyz => write_xyz(cloud, path),
        FormatArg::Ply => write_ply(cloud, path),
    }
    .with_context(|| format!("cannot write {}", path.display()))
}

fn make_dataset(a: &MakeDatasetArgs) -> Result<Outcome> {
    if a.n_points == 0 {
        bail!("--n-points must be positive");
    }
    create_dir(&a.out)?;
    let mut outcome = Outcome {
        seed: Some(a.seed),
        ..Outcome::default()
    };
    if let Some(kind) = a.kind {
        if a.n_shapes == 0 {
            bail!("--n-shapes must be positive");
        }
        let kind = ShapeKind::from(kind);
        let clouds = synthetic_dataset(kind, a.n_shapes, a.n_points, a.seed)?;
        for (i, cloud) in clouds.iter().enumerate() {
            let path = a.out.join(format!("{}_{i:04}.xyz", kind.name()));
            write_cloud(cloud, &path, FormatArg::Xyz)?;
            outcome.outputs.push(path);
        }
        return Ok(outcome);
    }
    let dir = a.mesh_dir.as_ref().expect("clap requires --kind or --mesh-dir");
    let mut meshes: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| MeshFormat::from_path(p).is_some())
        .collect();
    meshes.sort();
    meshes.truncate(a.n_shapes);
    if meshes.is_empty() {
        bail!("no .off or .obj meshes in {}", dir.display());
    }
    // one surface seed per listed mesh, so a bad file does not shift the rest
    let mut seeds = rng::stream(a.seed, streams::SURFACE);
    let mut failures = Vec::new();
    for path in &meshes {
        let seed: u64 = rand::Rng::random(&mut seeds);
        let cloud = MeshFormat::from_path(path)
            .ok_or_else(|| anyhow!("unknown mesh format"))
            .and_then(|f| Ok(load_mesh(path, f)?))
            .and_then(|m| Ok(pointgen::geometry::sample_surface(&m.normalized()?, a.n_points, seed)?));
        match cloud {
            Ok(cloud) => {
                let out = a.out.join(format!("{}.xyz", stem(path)?));
                write_cloud(&cloud, &out, FormatArg::Xyz)?;
                outcome.inputs.push(path.clone());
                outcome.outputs.push(out);
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e:#}", path.display());
                failures.push(path.display().to_string());
            }
        }
    }
    if outcome.outputs.is_empty() {
        bail!("no readable meshes; failed: {}", failures.join(", "));
    }
    outcome.results = json!({ "skipped": failures });
    Ok(outcome)
}

const VAE_ONLY: &[&str] = &[
    "encoder",
    "decoder",
    "flow-layers",
    "flow-hidden",
    "latent-dim",
    "nade-groups",
    "nade-group-latent",
    "nade-widths",
    "nade-embed-widths",
    "conv-widths",
    "encoder-fc",
    "decoder-widths",
    "transformer-layers",
    "transformer-heads",
    "transformer-dim",
    "transformer-ff",
    "transformer-embed",
    "kl-weight",
];

/// Architecture from the training flags and the dataset's point count.
pub fn model_spec(a: &TrainArgs, n_points: usize) -> Result<ModelSpec> {
    let vae_flags = [
        a.encoder.is_some(),
        a.decoder.is_some(),
        a.flow_layers.is_some(),
        a.flow_hidden.is_some(),
        a.latent_dim.is_some(),
        a.nade_groups.is_some(),
        a.nade_group_latent.is_some(),
        a.nade_widths.is_some(),
        a.nade_embed_widths.is_some(),
        a.conv_widths.is_some(),
        a.encoder_fc.is_some(),
        a.decoder_widths.is_some(),
        a.transformer_layers.is_some(),
        a.transformer_heads.is_some(),
        a.transformer_dim.is_some(),
        a.transformer_ff.is_some(),
        a.transformer_embed.is_some(),
        a.kl_weight != 1.0,
    ];
    let spec = match a.model {
        ModelArg::Made => {
            if let Some(i) = vae_flags.iter().position(|&set| set) {
                bail!("--{} does not apply to --model made", VAE_ONLY[i]);
            }
            let d = MadeConfig::default();
            ModelSpec::Made(MadeConfig {
                n_points,
                hidden: a.made_hidden.unwrap_or(d.hidden),
                layers: a.made_layers.unwrap_or(d.layers),
                sort_axis: a.sort_axis.map_or(d.sort_axis, Axis3::from),
            })
        }
        ModelArg::Vae => {
            if a.made_hidden.is_some() {
                bail!("--made-hidden requires --model made");
            }
            if a.made_layers.is_some() {
                bail!("--made-layers requires --model made");
            }
            let d = ModelConfig::default();
            let t = d.transformer.clone();
            ModelSpec::Vae(ModelConfig {
                n_points,
                latent_dim: a.latent_dim.unwrap_or(d.latent_dim),
                encoder: a.encoder.map_or(d.encoder, EncoderKind::from),
                decoder: a.decoder.map_or(d.decoder, DecoderKind::from),
                flow_layers: a.flow_layers.unwrap_or(d.flow_layers),
                nade_groups: a.nade_groups.unwrap_or(d.nade_groups),
                nade_group_latent: a.nade_group_latent.unwrap_or(d.nade_group_latent),
                transformer: pointgen::models::TransformerConfig {
                    layers: a.transformer_layers.unwrap_or(t.layers),
                    heads: a.transformer_heads.unwrap_or(t.heads),
                    model_dim: a.transformer_dim.unwrap_or(t.model_dim),
                    ff_dim: a.transformer_ff.unwrap_or(t.ff_dim),
                    embed_widths: a.transformer_embed.clone().unwrap_or(t.embed_widths),
                },
                conv_widths: a.conv_widths.clone().unwrap_or(d.conv_widths),
                encoder_fc: a.encoder_fc.clone().unwrap_or(d.encoder_fc),
                decoder_widths: a.decoder_widths.clone().unwrap_or(d.decoder_widths),
                flow_hidden: a.flow_hidden.unwrap_or(d.flow_hidden),
                nade_widths: a.nade_widths.clone().unwrap_or(d.nade_widths),
                nade_embed_widths: a.nade_embed_widths.clone().unwrap_or(d.nade_embed_widths),
                sort_axis: a.sort_axis.map_or(d.sort_axis, Axis3::from),
            })
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Writes every line to both sinks.
struct Tee<A, B>(A, B);

impl<A: Write, B: Write> Write for Tee<A, B> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write_all(buf)?;
        self.1.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

fn train(a: &TrainArgs) -> Result<Outcome> {
    let files = collect_xyz(std::slice::from_ref(&a.data))?;
    let clouds = read_clouds(&files)?;
    let spec = model_spec(a, clouds[0].len())?;
    let network = Network::from_spec(&spec)?;
    create_dir(&a.out)?;
    let config = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        kl_weight: a.kl_weight,
        sigma_l1_weight: if a.model == ModelArg::Made { a.sigma_weight } else { 0.0 },
        eval_every: a.eval_every,
        checkpoint_dir: Some(a.out.clone()),
        val_fraction: a.val_fraction,
    };
    let log_path = a.out.join(LOG_FILE);
    let log_file = fs::File::create(&log_path).with_context(|| format!("cannot write {}", log_path.display()))?;
    let mut log = Tee(io::BufWriter::new(log_file), io::stdout().lock());
    fit(&clouds, network, &config, &mut log)?;
    log.flush()?;
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: files,
        outputs: vec![
            a.out.join(pointgen::training::CHECKPOINT_FILE),
            a.out.join(pointgen::training::SIDECAR_FILE),
            log_path,
        ],
        results: json!({ "model": model_label(&spec) }),
    })
}

/// Table label of an architecture: `VAE`, `VAE+Trx`, `VAE+Flow`, `VAE+AR`,
/// their combinations, or `MADE`.
pub fn model_label(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::Made(_) => "MADE".into(),
        ModelSpec::Vae(c) => {
            let mut s = String::from("VAE");
            if c.encoder == EncoderKind::Transformer {
                s.push_str("+Trx");
            }
            if c.flow_layers > 0 {
                s.push_str("+Flow");
            }
            if c.decoder == DecoderKind::Nade {
                s.push_str("+AR");
            }
            s
        }
    }
}

fn load_checked(dir: &Path, expect: &ExpectArgs) -> Result<(Network, pointgen::numeric::ParameterStore)> {
    let (network, store) = Network::load(dir).with_context(|| format!("cannot load checkpoint from {}", dir.display()))?;
    let spec = network.spec();
    let mismatch = |what: &str, have: String, want: String| -> Result<()> {
        if have != want {
            bail!("architecture mismatch: checkpoint has {what}={have}, but --{what} {want} was given");
        }
        Ok(())
    };
    let model = match spec {
        ModelSpec::Vae(_) => ModelArg::Vae,
        ModelSpec::Made(_) => ModelArg::Made,
    };
    if let Some(m) = expect.model {
        mismatch("model", format!("{model:?}").to_lowercase(), format!("{m:?}").to_lowercase())?;
    }
    let vae = match &spec {
        ModelSpec::Vae(c) => Some(c),
        ModelSpec::Made(_) => None,
    };
    let name = |c: Option<String>| c.unwrap_or_else(|| "none".into());
    if let Some(e) = expect.encoder {
        let have = vae.map(|c| match c.encoder {
            EncoderKind::PointNet => "pointnet".to_string(),
            EncoderKind::Transformer => "transformer".to_string(),
        });
        mismatch("encoder", name(have), format!("{e:?}").to_lowercase())?;
    }
    if let Some(d) = expect.decoder {
        let have = vae.map(|c| match c.decoder {
            DecoderKind::Mlp => "mlp".to_string(),
            DecoderKind::Nade => "nade".to_string(),
        });
        mismatch("decoder", name(have), format!("{d:?}").to_lowercase())?;
    }
    if let Some(t) = expect.flow_layers {
        mismatch("flow-layers", name(vae.map(|c| c.flow_layers.to_string())), t.to_string())?;
    }
    Ok((network, store))
}

fn chamfer_mode(squared: bool) -> ChamferMode {
    if squared {
        ChamferMode::Squared
    } else {
        ChamferMode::L2
    }
}

fn reconstruct(a: &ReconstructArgs) -> Result<Outcome> {
    let (network, store) = load_checked(&a.checkpoint, &a.expect)?;
    let Network::Vae(model) = &network else {
        bail!("the MADE model has no encoder and cannot reconstruct");
    };
    let files = collect_xyz(&a.inputs)?;
    let clouds = read_clouds(&files)?;
    create_dir(&a.out)?;
    let mode = chamfer_mode(a.squared);
    let mut outputs = Vec::with_capacity(files.len());
    let mut results = Vec::with_capacity(files.len());
    for (file, cloud) in files.iter().zip(&clouds) {
        let out = a.out.join(format!("{}.{}", stem(file)?, a.format.extension()));
        if outputs.contains(&out) {
            bail!("two inputs map to the same output {}", out.display());
        }
        let recon = model
            .reconstruct(&store, cloud)
            .with_context(|| format!("cannot reconstruct {}", file.display()))?;
        write_cloud(&recon, &out, a.format)?;
        let cd = chamfer_with(cloud.points(), recon.points(), mode)?;
        println!("{}\tchamfer={cd}", out.display());
        results.push(json!({
            "input": file,
            "output": out,
            "chamfer": cd,
            "chamfer_mode": mode.name(),
        }));
        outputs.push(out);
    }
    Ok(Outcome {
        seed: None,
        inputs: files,
        outputs,
        results: Value::Array(results),
    })
}

fn sample(a: &SampleArgs) -> Result<Outcome> {
    let (network, store) = load_checked(&a.checkpoint, &a.expect)?;
    if a.n_samples == 0 {
        bail!("--n-samples must be positive");
    }
    create_dir(&a.out)?;
    let mut rng = rng::stream(a.seed, streams::SAMPLE);
    let ext = a.format.extension();
    let mut outputs = Vec::new();
    for i in 0..a.n_samples {
        let path = a.out.join(format!("sample_{i:04}.{ext}"));
        let cloud = match &network {
            Network::Vae(model) => {
                let z = model.sample_latent(&mut rng);
                if a.emit_steps {
                    if model.config().decoder != DecoderKind::Nade {
                        bail!("--emit-steps needs an autoregressive (nade) decoder");
                    }
                    let steps = model.decode_steps(&store, &z)?;
                    for (k, step) in steps.iter().enumerate() {
                        let p = a.out.join(format!("sample_{i:04}_step_{}.{ext}", k + 1));
                        write_cloud(step, &p, a.format)?;
                        outputs.push(p);
                    }
                    steps.into_iter().last().expect("at least one group")
                } else {
                    model.decode(&store, &z)?
                }
            }
            Network::Made(model) => {
                if a.emit_steps {
                    bail!("--emit-steps needs an autoregressive (nade) decoder");
                }
                model.sample(&store, &mut rng)?.cloud
            }
        };
        write_cloud(&cloud, &path, a.format)?;
        outputs.push(path);
    }
    Ok(Outcome {
        seed: Some(a.seed),
        inputs: vec![a.checkpoint.clone()],
        outputs,
        results: Value::Null,
    })
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<Outcome> {
    let ref_files = collect_xyz(std::slice::from_ref(&a.references))?;
    let references = read_clouds(&ref_files)?;
    let chamfer = chamfer_mode(a.squared);
    let mut inputs = ref_files;
    let (report, label) = if let Some(dir) = &a.generated {
        if a.mode != ModeArg::Generation {
            bail!("--generated clouds can only be scored with --mode generation");
        }
        let files = collect_xyz(std::slice::from_ref(dir))?;
        let generated = read_clouds(&files)?;
        let n = a.n_samples.unwrap_or(generated.len());
        let model = IdentityModel::new(generated);
        inputs.extend(files);
        let (report, _) = evaluate(&model, &references, EvalMode::Generation { n_samples: n }, a.seed, chamfer)?;
        (report, a.label.clone().unwrap_or_else(|| "Generated".into()))
    } else {
        let dir = a.checkpoint.as_ref().expect("clap requires --checkpoint or --generated");
        let (network, store) = load_checked(dir, &a.expect)?;
        let model: &dyn PointModel = &TrainedModel {
            network: &network,
            store: &store,
        };
        let mode = match a.mode {
            ModeArg::Reconstruction => EvalMode::Reconstruction,
            ModeArg::Generation => EvalMode::Generation {
                n_samples: a.n_samples.unwrap_or(references.len()),
            },
        };
        inputs.push(dir.clone());
        let (report, _) = evaluate(model, &references, mode, a.seed, chamfer)?;
        (report, a.label.clone().unwrap_or_else(|| model_label(&network.spec())))
    };
    let kv = report.to_key_values();
    let table = MetricsReport::table(&[(label, report)]);
    print!("{kv}\n{table}");
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        create_dir(out)?;
        for (name, text) in [(REPORT_FILE, &kv), (TABLE_FILE, &table)] {
            let path = out.join(name);
            fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
            outputs.push(path);
        }
    }
    Ok(Outcome {
        seed: Some(a.seed),
        inputs,
        outputs,
        results: Value::Null,
    })
}

fn render(a: &RenderArgs) -> Result<Outcome> {
    let files = collect_xyz(&a.clouds)?;
    create_dir(&a.out)?;
    let mut outputs: Vec<PathBuf> = Vec::with_capacity(files.len());
    for file in &files {
        let cloud = read_xyz(file).with_context(|| format!("cannot read {}", file.display()))?;
        let name = stem(file)?;
        let path = a.out.join(format!("{name}.svg"));
        if outputs.contains(&path) {
            bail!("two inputs map to the same output {}", path.display());
        }
        fs::write(&path, render::render_svg(&cloud, &name)).with_context(|| format!("cannot write {}", path.display()))?;
        outputs.push(path);
    }
    Ok(Outcome {
        seed: None,
        inputs: files,
        outputs,
        results: Value::Null,
    })
}
