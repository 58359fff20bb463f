//! The `artkit` command line: argument parsing and one function per
//! subcommand. Every command prints JSON lines to stdout and leaves a
//! `run.json` describing how its outputs were made.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use artkit_tensor::Rng;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::artformer::{edit, evaluate, examples, train_artformer, ArtFormer, Decoded};
use crate::artic::{export_urdf, from_json, to_json, ArticTree};
use crate::cache::{load_caches, object_targets, preprocess};
use crate::dataset::{build_dataset, Corpus, CorpusObject, OBJECT_FORMAT};
use crate::error::{Error, Result};
use crate::io::{hash_file, read, read_json, sha256_hex, to_json_bytes, write_atomic, write_json};
use crate::metrics::{id_matrices, id_signature, por, set_metrics, EvalConfig, ObjectGeometry};
use crate::pipeline::{generate, generated_geometry, Profile};
use crate::prior::{train_prior, PartRecord, ShapePrior};

#[derive(Debug, Parser)]
#[command(name = "artkit", version, about = "Text-conditioned articulated object generation")]
pub struct Cli {
    /// Built-in hyperparameter profile.
    #[arg(long, global = true, default_value = "desk")]
    pub profile: String,
    /// Profile JSON file; overrides `--profile`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "ARTKIT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "ARTKIT_THREADS")]
    pub threads: Option<usize>,
    /// Run single-threaded so every reduction happens in a fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Directory holding the dataset, checkpoints and caches.
    #[arg(long, global = true, default_value = "artkit-run")]
    pub workdir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Shape prior training and part caches.
    Prior {
        #[command(subcommand)]
        command: PriorCommand,
    },
    /// Articulation transformer training.
    Artformer {
        #[command(subcommand)]
        command: ArtformerCommand,
    },
    /// Sample objects for a prompt.
    Generate {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Output directory (default `<workdir>/generated`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write each decode trace next to its object.
        #[arg(long)]
        trace: bool,
    },
    /// Remove subtrees of an object and regrow them for a prompt.
    Edit {
        #[arg(long)]
        object: PathBuf,
        /// Node ids to remove, with their descendants.
        #[arg(long, value_delimiter = ',', required = true)]
        remove: Vec<usize>,
        #[arg(long)]
        text: String,
        /// Output file (default `<workdir>/edited.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// POR, ID and MMD / COV / 1-NNA of a generated set against a reference.
    Evaluate {
        #[arg(long)]
        gen: PathBuf,
        /// A directory of object files or a dataset directory.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Split used when `--ref` is a dataset.
        #[arg(long, default_value = "test")]
        split: String,
        /// Report file (default `<workdir>/report.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Part meshes, optionally wrapped in a URDF.
    Export {
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved profile as JSON.
    Profile,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    Build {
        /// Number of objects (default from the profile).
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PriorCommand {
    Train {
        #[arg(long)]
        vae_steps: Option<usize>,
        #[arg(long)]
        diffusion_steps: Option<usize>,
    },
    /// Cache `z`, `c_s` and codebook logits for every part.
    Preprocess,
}

#[derive(Debug, Subcommand)]
pub enum ArtformerCommand {
    Train {
        #[arg(long)]
        steps: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Obj,
    Urdf,
}

/// Standard artifact locations under the work directory.
pub struct Paths {
    pub data: PathBuf,
    pub prior: PathBuf,
    pub caches: PathBuf,
    pub artformer: PathBuf,
}

impl Paths {
    pub fn new(workdir: &Path) -> Self {
        Paths {
            data: workdir.join("data"),
            prior: workdir.join("prior.ckpt"),
            caches: workdir.join("caches"),
            artformer: workdir.join("artformer.ckpt"),
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    args: &'a [String],
    profile: &'a Profile,
    seed: Option<u64>,
    deterministic: bool,
    inputs: BTreeMap<String, String>,
}

fn emit(v: Value) {
    println!("{v}");
}

struct Ctx {
    args: Vec<String>,
    profile: Profile,
    seed: Option<u64>,
    deterministic: bool,
    paths: Paths,
}

impl Ctx {
    fn seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("`{command}` needs a seed: pass --seed or set ARTKIT_SEED")))
    }

    fn record(&self, path: &Path, inputs: BTreeMap<String, String>) -> Result<()> {
        let r = RunRecord {
            args: &self.args,
            profile: &self.profile,
            seed: self.seed,
            deterministic: self.deterministic,
            inputs,
        };
        write_json(path, &r)
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::parse_from(&args);
    let threads = if cli.deterministic { 1 } else { cli.threads.unwrap_or(0) };
    // Fails only if a pool already exists, e.g. when called twice in one
    // process; the existing pool is then kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let profile = match &cli.config {
        Some(path) => read_json::<Profile>(path)?,
        None => Profile::by_name(&cli.profile)?,
    };
    profile.prior.check()?;
    profile.artformer.check()?;
    profile.eval.check()?;
    let ctx = Ctx {
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        profile,
        seed: cli.seed,
        deterministic: cli.deterministic,
        paths: Paths::new(&cli.workdir),
    };
    match cli.command {
        Command::Dataset {
            command: DatasetCommand::Build { count },
        } => dataset_build(&ctx, count),
        Command::Prior {
            command: PriorCommand::Train { vae_steps, diffusion_steps },
        } => prior_train(&ctx, vae_steps, diffusion_steps),
        Command::Prior {
            command: PriorCommand::Preprocess,
        } => prior_preprocess(&ctx),
        Command::Artformer {
            command: ArtformerCommand::Train { steps },
        } => artformer_train(&ctx, steps),
        Command::Generate { text, samples, out, trace } => {
            let out = out.unwrap_or_else(|| cli.workdir.join("generated"));
            generate_cmd(&ctx, &text, samples, &out, trace)
        }
        Command::Edit { object, remove, text, out } => {
            let out = out.unwrap_or_else(|| cli.workdir.join("edited.json"));
            edit_cmd(&ctx, &object, &remove, &text, &out)
        }
        Command::Evaluate {
            gen,
            reference,
            split,
            out,
        } => {
            let out = out.unwrap_or_else(|| cli.workdir.join("report.json"));
            evaluate_cmd(&ctx, &gen, &reference, &split, &out)
        }
        Command::Export { format, object, out } => export_cmd(&ctx, format, &object, &out),
        Command::Profile => {
            print!("{}", String::from_utf8_lossy(&to_json_bytes(&ctx.profile)));
            Ok(())
        }
    }
}

fn dataset_build(ctx: &Ctx, count: Option<usize>) -> Result<()> {
    let seed = ctx.seed("dataset build")?;
    let count = count.unwrap_or(ctx.profile.dataset_count);
    let m = build_dataset(&ctx.paths.data, count, ctx.profile.split, seed)?;
    ctx.record(&ctx.paths.data.join("run.json"), BTreeMap::new())?;
    emit(json!({
        "event": "done",
        "command": "dataset build",
        "objects": m.count,
        "train": m.splits.train.len(),
        "val": m.splits.val.len(),
        "test": m.splits.test.len(),
        "manifest_sha256": hash_file(&ctx.paths.data.join("manifest.json"))?,
    }));
    Ok(())
}

fn prior_train(ctx: &Ctx, vae_steps: Option<usize>, diffusion_steps: Option<usize>) -> Result<()> {
    let seed = ctx.seed("prior train")?;
    let corpus = Corpus::load(&ctx.paths.data)?;
    let parts = PartRecord::from_split(&corpus, "train")?;
    let mut tc = ctx.profile.prior_train.clone();
    tc.vae_steps = vae_steps.unwrap_or(tc.vae_steps);
    tc.diffusion_steps = diffusion_steps.unwrap_or(tc.diffusion_steps);
    let mut prior = ShapePrior::new(&ctx.profile.prior, seed)?;
    train_prior(&mut prior, &parts, &tc, &mut Rng::seed(seed), &mut |l| {
        let mut v = json!({"event": "step", "stage": l.stage, "step": l.step, "loss": l.loss, "grad_norm": l.grad_norm});
        for (k, x) in &l.terms {
            v[*k] = json!(x);
        }
        emit(v);
    })?;
    prior.save(&ctx.paths.prior)?;
    let inputs = BTreeMap::from([("dataset".to_string(), hash_file(&ctx.paths.data.join("manifest.json"))?)]);
    ctx.record(&ctx.paths.prior.with_extension("run.json"), inputs)?;
    emit(json!({
        "event": "done",
        "command": "prior train",
        "parts": parts.len(),
        "latent_scale": prior.latent_scale,
        "checkpoint_sha256": hash_file(&ctx.paths.prior)?,
    }));
    Ok(())
}

fn prior_preprocess(ctx: &Ctx) -> Result<()> {
    let seed = ctx.seed("prior preprocess")?;
    // Load first so a missing checkpoint is reported before any work.
    ShapePrior::load(&ctx.paths.prior)?;
    let m = preprocess(&ctx.paths.data, &ctx.paths.prior, &ctx.paths.caches, seed)?;
    let inputs = BTreeMap::from([
        ("dataset".to_string(), m.dataset_sha256.clone()),
        ("prior".to_string(), m.prior_sha256.clone()),
    ]);
    ctx.record(&ctx.paths.caches.join("run.json"), inputs)?;
    emit(json!({"event": "done", "command": "prior preprocess", "objects": m.objects.len()}));
    Ok(())
}

fn artformer_train(ctx: &Ctx, steps: Option<usize>) -> Result<()> {
    let seed = ctx.seed("artformer train")?;
    let corpus = Corpus::load(&ctx.paths.data)?;
    let prior = ShapePrior::load(&ctx.paths.prior)?;
    let caches = load_caches(&ctx.paths.caches, &ctx.paths.data, &ctx.paths.prior)?;
    let train = examples(&corpus.split("train")?, &caches)?;
    let val = examples(&corpus.split("val")?, &caches)?;
    let mut tc = ctx.profile.artformer_train.clone();
    tc.steps = steps.unwrap_or(tc.steps);
    let (p, cfg) = (&prior.cfg, &ctx.profile.artformer);
    let mut model = ArtFormer::new(cfg, p.d_z, p.c_s, p.codebook_rows, seed)?;
    train_artformer(&mut model, &train, &tc, &mut Rng::seed(seed), &mut |l| {
        emit(json!({"event": "step", "stage": "artformer", "step": l.step, "grad_norm": l.grad_norm, "terms": l.terms}));
    })?;
    let prior_sha256 = hash_file(&ctx.paths.prior)?;
    model.save(&ctx.paths.artformer, &prior_sha256)?;
    let inputs = BTreeMap::from([
        ("dataset".to_string(), hash_file(&ctx.paths.data.join("manifest.json"))?),
        ("prior".to_string(), prior_sha256),
        ("caches".to_string(), hash_file(&ctx.paths.caches.join("cache.json"))?),
    ]);
    ctx.record(&ctx.paths.artformer.with_extension("run.json"), inputs)?;
    let held_out = if val.is_empty() { Value::Null } else { json!(evaluate(&model, &val)?) };
    emit(json!({
        "event": "done",
        "command": "artformer train",
        "train_objects": train.len(),
        "val": held_out,
        "checkpoint_sha256": hash_file(&ctx.paths.artformer)?,
    }));
    Ok(())
}

/// The transformer and the prior it was trained against.
fn load_models(paths: &Paths) -> Result<(ArtFormer, ShapePrior, String)> {
    let prior = ShapePrior::load(&paths.prior)?;
    let (model, stamp) = ArtFormer::load(&paths.artformer)?;
    let prior_sha256 = hash_file(&paths.prior)?;
    if stamp != prior_sha256 {
        return Err(Error::Stale {
            what: "artformer checkpoint's prior hash",
            expected: prior_sha256,
            found: stamp,
            producer: "artformer train",
        });
    }
    Ok((model, prior, prior_sha256))
}

fn decode_summary(file: &Path, d: &Decoded) -> Value {
    json!({
        "file": file.display().to_string(),
        "nodes": d.tree.len(),
        "outcome": d.outcome,
        "rounds": d.rounds,
        "joints": d.tree.count_root_joints(),
    })
}

fn write_tree(path: &Path, tree: &ArticTree) -> Result<()> {
    let mut text = to_json(tree);
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn generate_cmd(ctx: &Ctx, text: &str, samples: usize, out: &Path, trace: bool) -> Result<()> {
    let seed = ctx.seed("generate")?;
    let (model, prior, prior_sha256) = load_models(&ctx.paths)?;
    for i in 0..samples {
        // One stream per sample, so sample i does not depend on how many
        // were requested.
        let d = generate(&model, &prior, text, &mut Rng::stream(seed, i as u64))?;
        let file = out.join(format!("sample_{i:03}.json"));
        write_tree(&file, &d.tree)?;
        if trace {
            write_json(&out.join(format!("sample_{i:03}.trace.json")), &d)?;
        }
        let mut v = decode_summary(&file, &d);
        v["event"] = json!("sample");
        emit(v);
    }
    let inputs = BTreeMap::from([
        ("prior".to_string(), prior_sha256),
        ("artformer".to_string(), hash_file(&ctx.paths.artformer)?),
    ]);
    ctx.record(&out.join("run.json"), inputs)?;
    emit(json!({"event": "done", "command": "generate", "samples": samples, "out": out.display().to_string()}));
    Ok(())
}

/// An object file: either a corpus object or a bare `artic/1` tree.
enum ObjectFile {
    Corpus(Box<CorpusObject>),
    Tree(ArticTree),
}

impl ObjectFile {
    fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
        let head: Value = serde_json::from_str(text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
        if head.get("format").and_then(Value::as_str) == Some(OBJECT_FORMAT) {
            Ok(ObjectFile::Corpus(Box::new(read_json(path)?)))
        } else {
            from_json(text).map(ObjectFile::Tree).map_err(|e| match e {
                Error::Parse { path: field, msg } => Error::Parse {
                    path: field,
                    msg: format!("{}: {msg}", path.display()),
                },
                other => other,
            })
        }
    }

    fn tree(&self) -> &ArticTree {
        match self {
            ObjectFile::Corpus(o) => &o.tree,
            ObjectFile::Tree(t) => t,
        }
    }
}

/// Loads the prior on first use only; corpus objects need none.
struct LazyPrior<'a> {
    path: &'a Path,
    prior: Option<ShapePrior>,
}

impl LazyPrior<'_> {
    fn get(&mut self) -> Result<&ShapePrior> {
        if self.prior.is_none() {
            self.prior = Some(ShapePrior::load(self.path)?);
        }
        Ok(self.prior.as_ref().expect("loaded above"))
    }
}

fn geometry(name: &str, file: &ObjectFile, prior: &mut LazyPrior, res: usize) -> Result<ObjectGeometry> {
    match file {
        ObjectFile::Corpus(o) => {
            let mut g = ObjectGeometry::from_corpus(o);
            g.name = name.to_string();
            Ok(g)
        }
        ObjectFile::Tree(t) => generated_geometry(prior.get()?, name, t, res),
    }
}

fn edit_cmd(ctx: &Ctx, object: &Path, remove: &[usize], text: &str, out: &Path) -> Result<()> {
    let seed = ctx.seed("edit")?;
    let file = ObjectFile::load(object)?;
    let (model, prior, prior_sha256) = load_models(&ctx.paths)?;
    let tree = match &file {
        // Corpus parts are analytic; give them latents first.
        ObjectFile::Corpus(o) => {
            let mut tree = o.tree.clone();
            let targets = object_targets(&prior, o, &mut Rng::stream(seed, 1))?;
            for (n, t) in tree.nodes.iter_mut().zip(targets) {
                n.z = t.z;
            }
            tree
        }
        ObjectFile::Tree(t) => t.clone(),
    };
    let d = edit(&model, &prior, &tree, remove, text, model.limits(), &mut Rng::seed(seed))?;
    write_tree(out, &d.tree)?;
    let inputs = BTreeMap::from([
        ("object".to_string(), hash_file(object)?),
        ("prior".to_string(), prior_sha256),
        ("artformer".to_string(), hash_file(&ctx.paths.artformer)?),
    ]);
    ctx.record(&out.with_extension("run.json"), inputs)?;
    let mut v = decode_summary(out, &d);
    v["event"] = json!("done");
    v["command"] = json!("edit");
    emit(v);
    Ok(())
}

/// Object files of a directory in name order, skipping run records and
/// decode traces.
fn object_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".json") && !name.ends_with("run.json") && !name.ends_with(".trace.json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Named objects of a directory or a dataset split, plus the names of any
/// empty objects that were left out.
fn object_set(dir: &Path, split: &str, prior: &mut LazyPrior, res: usize) -> Result<(Vec<ObjectGeometry>, Vec<String>)> {
    if dir.join("manifest.json").exists() {
        let corpus = Corpus::load(dir)?;
        let objects = corpus.split(split)?.into_iter().map(ObjectGeometry::from_corpus).collect();
        return Ok((objects, Vec::new()));
    }
    let mut objects = Vec::new();
    let mut empty = Vec::new();
    for path in object_files(dir)? {
        let name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let file = ObjectFile::load(&path)?;
        if file.tree().is_empty() {
            empty.push(name);
            continue;
        }
        objects.push(geometry(&name, &file, prior, res)?);
    }
    Ok((objects, empty))
}

fn dir_hash(dir: &Path) -> Result<String> {
    if dir.join("manifest.json").exists() {
        return hash_file(&dir.join("manifest.json"));
    }
    let mut all = String::new();
    for f in object_files(dir)? {
        all.push_str(&hash_file(&f)?);
    }
    Ok(sha256_hex(all.as_bytes()))
}

#[derive(Serialize)]
struct MatrixRef {
    path: String,
    rows: usize,
    cols: usize,
    dtype: &'static str,
    /// Row and column order: every generated object, then every reference.
    order: &'static str,
}

#[derive(Serialize)]
struct Report<'a> {
    format: &'static str,
    gen: Vec<String>,
    reference: Vec<String>,
    empty_generated: Vec<String>,
    por: BTreeMap<String, f64>,
    mean_por: f64,
    id_matrix: MatrixRef,
    mmd: f64,
    cov: f64,
    nna: f64,
    config: &'a EvalConfig,
    seed: u64,
}

fn evaluate_cmd(ctx: &Ctx, gen: &Path, reference: &Path, split: &str, out: &Path) -> Result<()> {
    let mut cfg = ctx.profile.eval.clone();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let mut prior = LazyPrior {
        path: &ctx.paths.prior,
        prior: None,
    };
    let res = ctx.profile.decode_res;
    let (gens, empty) = object_set(gen, split, &mut prior, res)?;
    let (refs, _) = object_set(reference, split, &mut prior, res)?;
    if gens.is_empty() || refs.is_empty() {
        return Err(Error::Config(format!(
            "nothing to compare: {} generated and {} reference objects",
            gens.len(),
            refs.len()
        )));
    }
    let mut pors = BTreeMap::new();
    for g in &gens {
        let v = por(g, &cfg)?;
        emit(json!({"event": "por", "object": g.name, "por": v}));
        pors.insert(g.name.clone(), v);
    }
    let sig = |set: &[ObjectGeometry]| set.iter().map(|o| id_signature(o, &cfg)).collect::<Result<Vec<_>>>();
    let (gs, rs) = (sig(&gens)?, sig(&refs)?);
    let d = id_matrices(&gs, &rs);
    let m = set_metrics(&d);

    // Pooled square matrix, generated first.
    let (ng, nr) = (gs.len(), rs.len());
    let n = ng + nr;
    let mut bytes = Vec::with_capacity(n * n * 4);
    for i in 0..n {
        for j in 0..n {
            let v = match (i < ng, j < ng) {
                (true, true) => d.gen_gen[i][j],
                (true, false) => d.gen_ref[i][j - ng],
                (false, true) => d.gen_ref[j][i - ng],
                (false, false) => d.ref_ref[i - ng][j - ng],
            };
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let matrix_path = out.with_extension("id.bin");
    write_atomic(&matrix_path, &bytes)?;
    let report = Report {
        format: "artkit-report/1",
        gen: gens.iter().map(|g| g.name.clone()).collect(),
        reference: refs.iter().map(|r| r.name.clone()).collect(),
        empty_generated: empty,
        mean_por: pors.values().sum::<f64>() / pors.len() as f64,
        por: pors,
        id_matrix: MatrixRef {
            path: matrix_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            rows: n,
            cols: n,
            dtype: "f32le",
            order: "gen, ref",
        },
        mmd: m.mmd,
        cov: m.cov,
        nna: m.nna,
        config: &cfg,
        seed: cfg.seed,
    };
    write_json(out, &report)?;
    let inputs = BTreeMap::from([("gen".to_string(), dir_hash(gen)?), ("ref".to_string(), dir_hash(reference)?)]);
    ctx.record(&out.with_extension("run.json"), inputs)?;
    emit(json!({
        "event": "done",
        "command": "evaluate",
        "mean_por": report.mean_por,
        "mmd": m.mmd,
        "cov": m.cov,
        "nna": m.nna,
        "report": out.display().to_string(),
    }));
    Ok(())
}

fn export_cmd(ctx: &Ctx, format: ExportFormat, object: &Path, out: &Path) -> Result<()> {
    let file = ObjectFile::load(object)?;
    let name = object.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "object".into());
    let mut prior = LazyPrior {
        path: &ctx.paths.prior,
        prior: None,
    };
    let geo = geometry(&name, &file, &mut prior, ctx.profile.decode_res)?;
    let meshes = geo.part_meshes(ctx.profile.eval.mesh_res)?;
    let mut refs = Vec::with_capacity(meshes.len());
    for (i, m) in meshes.iter().enumerate() {
        if m.is_empty() {
            refs.push(None);
            continue;
        }
        let rel = format!("part_{i}.obj");
        write_atomic(&out.join(&rel), m.to_obj().as_bytes())?;
        refs.push(Some(rel));
    }
    let main = match format {
        ExportFormat::Obj => {
            let all = artkit_geometry::Mesh::merged(&meshes);
            let path = out.join(format!("{name}.obj"));
            write_atomic(&path, all.to_obj().as_bytes())?;
            path
        }
        ExportFormat::Urdf => {
            let path = out.join(format!("{name}.urdf"));
            write_atomic(&path, export_urdf(&geo.tree, &name, &refs)?.as_bytes())?;
            path
        }
    };
    let inputs = BTreeMap::from([("object".to_string(), hash_file(object)?)]);
    ctx.record(&out.join("run.json"), inputs)?;
    emit(json!({
        "event": "done",
        "command": "export",
        "file": main.display().to_string(),
        "parts": refs.iter().filter(|r| r.is_some()).count(),
    }));
    Ok(())
}
