//! Command-line front end: `describe`, `simmap`, `eval`, `params`,
//! `selftest`, plus `init` for writing a freshly initialized model.
//!
//! A JSON config file (`--config`) supplies defaults; command-line flags
//! override it. Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Deserialize;

use crate::aggregation::{
    count_parameters, match_kernel_similarity, similarity_heatmap, FeatureTensor, HeadVariant, ParameterConfig,
    SpatialKernel,
};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{
    evaluate_matching, evaluate_retrieval, evaluate_verification, load_pair_labels, load_retrieval_labels,
};
use crate::io::{encode_pgm, import_tensor, load_descriptors, read_patch, save_descriptors, DescriptorSet};
use crate::model::{Model, ModelConfig};
use crate::position_encoding::{GridGeometry, GridPos};

#[derive(Debug, Parser)]
#[command(name = "emk", about = "Spatially encoded local patch descriptors")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct GlobalArgs {
    /// Model file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub s: Option<u32>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Describe PGM patches or EMKT tensors into an EMKD file.
    Describe {
        /// Files or directories (scanned for .pgm and .emkt, sorted by name).
        inputs: Vec<PathBuf>,
    },
    /// Similarity heat-map of one position of patch A against patch B.
    Simmap {
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
        /// 1-based grid position "i,j".
        #[arg(long)]
        pos: Option<String>,
    },
    /// Evaluate descriptors against label files.
    Eval {
        /// verification, matching or retrieval.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        a: Option<PathBuf>,
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Parameter counts of the convolutional part and every head.
    Params {
        #[arg(long)]
        json: bool,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Write an orthogonally initialized model.
    Init {
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        shared_conv: bool,
    },
}

/// Values a config file may provide.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub variant: Option<String>,
    pub s: Option<u32>,
    pub kappa: Option<f64>,
    pub patch_size: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub task: Option<String>,
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub pos: Option<String>,
    pub json: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad config {}: {e}", path.display())))
    }

    fn merge(mut self, g: &GlobalArgs) -> Self {
        if g.model.is_some() {
            self.model = g.model.clone();
        }
        if g.variant.is_some() {
            self.variant = g.variant.clone();
        }
        if g.s.is_some() {
            self.s = g.s;
        }
        if g.out.is_some() {
            self.out = g.out.clone();
        }
        if g.seed.is_some() {
            self.seed = g.seed;
        }
        self
    }

    fn required<'a, T>(value: &'a Option<T>, what: &str) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| invalid(format!("missing required --{what}")))
    }

    fn load_model(&self) -> Result<Model> {
        let path = Self::required(&self.model, "model")?;
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("model file {} not found", path.display()),
            )));
        }
        let model = Model::load(path)?;
        if let Some(v) = &self.variant {
            let v: HeadVariant = v.parse()?;
            if v != model.variant() {
                return Err(Error::Config(format!("--variant {v} but model is {}", model.variant())));
            }
        }
        if let Some(s) = self.s {
            if s != model.head().s() {
                return Err(Error::Config(format!("--s {s} but model has s={}", model.head().s())));
            }
        }
        if let Some(n) = self.patch_size {
            if n != model.patch_size() {
                return Err(Error::Config(format!("patch size {n} but model expects {}", model.patch_size())));
            }
        }
        Ok(model)
    }
}

/// Input files in argument order; directories contribute their `.pgm` and
/// `.emkt` files sorted by name.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for path in inputs {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "emkt")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(path.clone());
        }
    }
    Ok(out)
}

fn is_tensor_file(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("emkt")
}

fn features_of(model: &Model, path: &Path) -> Result<Vec<FeatureTensor>> {
    if is_tensor_file(path) {
        let t = import_tensor(path)?;
        Ok(model.variant().systems().iter().map(|_| t.clone()).collect())
    } else {
        model.features(&read_patch(path)?)
    }
}

pub fn cmd_describe(cfg: &RunConfig) -> Result<DescriptorSet> {
    let model = cfg.load_model()?;
    let files = expand_inputs(&cfg.inputs)?;
    if files.is_empty() {
        return Err(invalid("no input patches given"));
    }
    let out = RunConfig::required(&cfg.out, "out")?;
    let mut rows = Array2::zeros((files.len(), model.head().output_dim()));
    // PGM patches go through the batched path; tensors are described directly
    let patches = files
        .iter()
        .filter(|p| !is_tensor_file(p))
        .map(read_patch)
        .collect::<Result<Vec<_>>>()?;
    let mut from_patches = model.describe_patches(&patches)?.into_iter();
    for (i, path) in files.iter().enumerate() {
        let desc = if is_tensor_file(path) {
            model.describe_tensors(&features_of(&model, path)?)?
        } else {
            from_patches.next().expect("one descriptor per patch")
        };
        rows.row_mut(i).assign(desc.normalized());
    }
    let set = DescriptorSet::new(rows);
    save_descriptors(out, &set)?;
    Ok(set)
}

fn parse_pos(text: &str) -> Result<GridPos> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [i, j] => Ok(GridPos::new(
            i.parse().map_err(|_| invalid(format!("bad position '{text}'")))?,
            j.parse().map_err(|_| invalid(format!("bad position '{text}'")))?,
        )),
        _ => Err(invalid(format!("position must be 'i,j', got '{text}'"))),
    }
}

/// Raw similarities of position `p` of patch `a` to every position of `b`,
/// and the same row rescaled to `[0, 1]`, both as `n x n` grids.
pub fn simmap_values(model: &Model, a: &Path, b: &Path, p: GridPos) -> Result<(Array2<f64>, Array2<f64>)> {
    let fa = features_of(model, a)?;
    let fb = features_of(model, b)?;
    let n = fa[0].n();
    let geom = GridGeometry::new(n)?;
    geom.check(p)?;
    let tables = model.tables(n)?;
    let kernel = SpatialKernel::new(model.head(), &tables);
    let ra: Vec<&FeatureTensor> = fa.iter().collect();
    let rb: Vec<&FeatureTensor> = fb.iter().collect();
    let sim = match_kernel_similarity(&kernel, &ra, &rb)?;
    let raw = sim
        .map
        .row(geom.flat_index(p))
        .to_owned()
        .into_shape_with_order((n, n))
        .expect("n^2 entries");
    let heat = similarity_heatmap(&kernel, &ra, &rb, p)?;
    Ok((raw, heat))
}

pub fn cmd_simmap(cfg: &RunConfig) -> Result<PathBuf> {
    let model = cfg.load_model()?;
    let a = RunConfig::required(&cfg.a, "a")?;
    let b = RunConfig::required(&cfg.b, "b")?;
    let p = parse_pos(RunConfig::required(&cfg.pos, "pos")?)?;
    let out = RunConfig::required(&cfg.out, "out")?;
    let (raw, heat) = simmap_values(&model, a, b, p)?;
    let pgm = out.with_extension("pgm");
    std::fs::write(&pgm, encode_pgm(&heat))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(out.with_extension("csv"))?;
    for row in raw.rows() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(pgm)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let task = RunConfig::required(&cfg.task, "task")?;
    let a = load_descriptors(RunConfig::required(&cfg.a, "a")?)?;
    let b = match &cfg.b {
        Some(path) => load_descriptors(path)?,
        None => a.clone(),
    };
    let labels = RunConfig::required(&cfg.labels, "labels")?;
    let reports = match task.as_str() {
        "verification" => evaluate_verification(&a, &b, &load_pair_labels(labels)?)?,
        "matching" => evaluate_matching(&a, &b, &load_pair_labels(labels)?)?,
        "retrieval" => evaluate_retrieval(&a, &b, &load_retrieval_labels(labels)?)?,
        other => return Err(invalid(format!("unknown task '{other}'"))),
    };
    let json = serde_json::to_string_pretty(&reports)?;
    if let Some(out) = &cfg.out {
        std::fs::write(out, &json)?;
    }
    Ok(json)
}

const PARAM_MODELS: [&str; 5] = ["hardnet", "xy", "rhotheta", "combined", "combined-separate"];

pub fn cmd_params(cfg: &RunConfig) -> Result<String> {
    let mut config = ParameterConfig::default();
    if let Some(s) = cfg.s {
        if s == 0 {
            return Err(invalid("s must be at least 1"));
        }
        config.frequencies = vec![s];
    }
    let mut report = count_parameters(&config);
    if let Some(v) = cfg.variant.as_deref().filter(|v| *v != "all") {
        if !PARAM_MODELS.contains(&v) {
            return Err(invalid(format!(
                "unknown variant '{v}', expected one of all, {}",
                PARAM_MODELS.join(", ")
            )));
        }
        report.models.retain(|m| m.model == v);
    }
    Ok(if cfg.json.unwrap_or(false) {
        serde_json::to_string_pretty(&report)?
    } else {
        report.to_text()
    })
}

pub fn cmd_selftest() -> (bool, String) {
    let checks = crate::selftest::run();
    let mut text = String::new();
    for c in &checks {
        text.push_str(&format!("{} {} ({})\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    let ok = checks.iter().all(|c| c.passed);
    text.push_str(&format!(
        "{}/{} checks passed\n",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    ));
    (ok, text)
}

pub fn cmd_init(cfg: &RunConfig, patch_size: Option<usize>, shared_conv: bool) -> Result<Model> {
    let out = RunConfig::required(&cfg.out, "out")?;
    let mut mc = ModelConfig::default();
    if let Some(v) = &cfg.variant {
        mc.variant = v.parse()?;
    }
    if let Some(s) = cfg.s {
        mc.s = s;
    }
    if let Some(k) = cfg.kappa {
        mc.kappa_x = k;
        mc.kappa_y = k;
        mc.kappa_rho = k;
        mc.kappa_theta = k;
    }
    if let Some(n) = patch_size.or(cfg.patch_size) {
        mc.patch_size = n;
    }
    mc.separate_conv = !shared_conv;
    let model = Model::random(&mc, cfg.seed.unwrap_or(0))?;
    model.save(out)?;
    Ok(model)
}

fn configure_threads() {
    if let Some(k) = std::env::var("EMK_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if k > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let base = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.merge(&cli.global);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Describe { inputs } => {
            if !inputs.is_empty() {
                cfg.inputs = inputs;
            }
            let set = cmd_describe(&cfg)?;
            writeln!(out, "wrote {} descriptors of dimension {}", set.len(), set.dim())?;
        }
        Command::Simmap { a, b, pos } => {
            cfg.a = a.or(cfg.a);
            cfg.b = b.or(cfg.b);
            cfg.pos = pos.or(cfg.pos);
            let path = cmd_simmap(&cfg)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        Command::Eval { task, a, b, labels } => {
            cfg.task = task.or(cfg.task);
            cfg.a = a.or(cfg.a);
            cfg.b = b.or(cfg.b);
            cfg.labels = labels.or(cfg.labels);
            writeln!(out, "{}", cmd_eval(&cfg)?)?;
        }
        Command::Params { json } => {
            if json {
                cfg.json = Some(true);
            }
            write!(out, "{}", cmd_params(&cfg)?)?;
        }
        Command::Selftest => {
            let (ok, text) = cmd_selftest();
            write!(out, "{text}")?;
            if !ok {
                return Ok(3);
            }
        }
        Command::Init { patch_size, shared_conv } => {
            let model = cmd_init(&cfg, patch_size, shared_conv)?;
            writeln!(
                out,
                "wrote {} model, n={}, D={}",
                model.variant(),
                model.n(),
                model.head().output_dim()
            )?;
        }
    }
    Ok(0)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
