use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dsattr_core::attributes::{scale_stats, DEFAULT_BINS};
use dsattr_core::flops::{model_flops, resolution_sweep, ColorMode, FlopsReport, ModelSpec};
use dsattr_core::io::{
    flops_markdown, read_grouping, read_log, scale_markdown, similarity_markdown, to_structured,
    write_annotations, write_embeddings, write_grouping, ReportFormat,
};
use dsattr_core::selection::recommend;
use dsattr_core::similarity::EmbeddingSet;
use dsattr_core::{synth, ClassGrouping, Error, ScaleStats};
use serde::Serialize;

use crate::config::{Config, SetKey, DEFAULT_BIND};
use crate::error::Outcome;
use crate::render;
use crate::workspace::{
    self, choose_color, default_log_path, evaluate, load_annotations, load_set, record_ladder,
    working_color, working_grouping, LogStore, Workspace,
};

#[derive(Debug, Parser)]
#[command(name = "dsattr", version, about = "Size lightweight CNNs from dataset attributes")]
pub struct Cli {
    /// Config file; its settings apply unless overridden by flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report file format: structured (JSON) or markdown.
    #[arg(long, default_value = "structured", value_parser = parse_format)]
    pub format: ReportFormat,
    /// Report file path [default: <report_dir>/<command>.<ext>].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ColorMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_key(s: &str) -> Result<SetKey, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// One embedding set: a file, or a key into the config registry.
#[derive(Debug, Args)]
pub struct SetArgs {
    /// Embedding manifest (`.semb`).
    #[arg(long, value_name = "FILE", conflicts_with = "set")]
    pub embeddings: Option<PathBuf>,
    /// Registered set, e.g. `color/64` [default: highest-resolution color set].
    #[arg(long, value_name = "KEY", value_parser = parse_key)]
    pub set: Option<SetKey>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Object-scale statistics from bounding-box annotations.
    AnalyzeScale {
        /// COCO-style instances file.
        #[arg(long, value_name = "FILE")]
        annotations: Option<PathBuf>,
        /// Grouping applied to the class labels.
        #[arg(long, value_name = "FILE")]
        grouping: Option<PathBuf>,
        /// Rescale boxes to this longer image side before measuring pixels.
        #[arg(long)]
        resolution: Option<u32>,
        /// Histogram bins.
        #[arg(long)]
        bins: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Convolution FLOPs of a network spec in color or gray mode.
    EstimateFlops {
        /// Spec file, or a built-in spec name (`vgg19-32`, `enb0-32`).
        #[arg(long, value_name = "SPEC")]
        model: Option<PathBuf>,
        /// Input mode for the first layer: color or gray.
        #[arg(long, default_value = "color", value_parser = parse_mode)]
        mode: ColorMode,
        /// Also report totals at these square input sizes.
        #[arg(long = "size", value_name = "PX")]
        sizes: Vec<u32>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Similarity report (S1, sigma2, S2 matrix, S2 max, delta S2) of one embedding set.
    Similarity {
        #[command(flatten)]
        set: SetArgs,
        /// Grouping file [default: identity].
        #[arg(long, value_name = "FILE")]
        grouping: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Evaluate a class grouping and record it in the decision log.
    SelectClasses {
        #[command(flatten)]
        set: SetArgs,
        /// Grouping file to evaluate [default: identity].
        #[arg(long, value_name = "FILE")]
        grouping: Option<PathBuf>,
        /// Decision log [default: config `log`, else <report_dir>/decisions.jsonl].
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Choose color or gray input by comparing worst-case S2, and record it.
    SelectColor {
        /// Color embedding manifest.
        #[arg(long = "color", value_name = "FILE", requires = "gray_file")]
        color_file: Option<PathBuf>,
        /// Gray embedding manifest from the same embedding space.
        #[arg(long = "gray", value_name = "FILE", requires = "color_file")]
        gray_file: Option<PathBuf>,
        /// Registered resolution to compare at [default: highest with both modes].
        #[arg(long, conflicts_with = "color_file")]
        resolution: Option<u32>,
        /// Grouping file [default: best grouping in the log, else identity].
        #[arg(long, value_name = "FILE")]
        grouping: Option<PathBuf>,
        /// Decide per class instead of for the whole network.
        #[arg(long)]
        per_class: bool,
        /// Decision log [default: config `log`, else <report_dir>/decisions.jsonl].
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Walk the resolution ladder and record every rung.
    SelectResolution {
        /// Embedding manifests, one per rung [default: registered sets].
        #[arg(long = "embeddings", value_name = "FILE", num_args = 1..)]
        embeddings: Vec<PathBuf>,
        /// Rung resolutions [default: config `ladder`].
        #[arg(long = "resolution", value_name = "PX", conflicts_with = "embeddings")]
        resolutions: Vec<u32>,
        /// Color mode of the registered sets to use [default: from the log].
        #[arg(long, value_parser = parse_mode, conflicts_with = "embeddings")]
        mode: Option<ColorMode>,
        /// Grouping file [default: best grouping in the log, else identity].
        #[arg(long, value_name = "FILE")]
        grouping: Option<PathBuf>,
        /// Annotations for small-object warnings [default: config `annotations`].
        #[arg(long, value_name = "FILE")]
        annotations: Option<PathBuf>,
        /// Decision log [default: config `log`, else <report_dir>/decisions.jsonl].
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Combine the logged decisions into a model-size recommendation.
    Recommend {
        /// Annotations for the object-scale bound [default: config `annotations`].
        #[arg(long, value_name = "FILE")]
        annotations: Option<PathBuf>,
        /// Spec file or built-in name for a FLOP estimate.
        #[arg(long, value_name = "SPEC")]
        model: Option<PathBuf>,
        /// Decision log [default: config `log`, else <report_dir>/decisions.jsonl].
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print the decision log.
    Log {
        /// Decision log [default: config `log`, else <report_dir>/decisions.jsonl].
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Serve the HTTP API over one session.
    Serve {
        /// Listen address [default: config `bind`, else 127.0.0.1:8700].
        #[arg(long)]
        bind: Option<String>,
        /// Decision log [default: config `log`, else <report_dir>/decisions.jsonl].
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Write the seeded synthetic fixture: embedding sets, annotations, groupings and a config.
    Synth {
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Seed [default: config `seed`, else 2024].
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::AnalyzeScale { .. } => "analyze-scale",
            Command::EstimateFlops { .. } => "estimate-flops",
            Command::Similarity { .. } => "similarity",
            Command::SelectClasses { .. } => "select-classes",
            Command::SelectColor { .. } => "select-color",
            Command::SelectResolution { .. } => "select-resolution",
            Command::Recommend { .. } => "recommend",
            Command::Log { .. } => "log",
            Command::Serve { .. } => "serve",
            Command::Synth { .. } => "synth",
        }
    }
}

pub const DEFAULT_SEED: u64 = 2024;

fn need<T>(value: Option<T>, what: &str) -> Result<T, Error> {
    value.ok_or_else(|| Error::input(format!("{what} not given on the command line or in the config")))
}

/// Writes the report file and echoes the markdown rendering to stdout.
fn emit(config: &Config, command: &str, output: &OutputArgs, value: &impl Serialize, markdown: String) -> Outcome<()> {
    let (text, ext) = match output.format {
        ReportFormat::Structured => (to_structured(value), "json"),
        ReportFormat::Markdown => (markdown.clone(), "md"),
    };
    let path = output
        .out
        .clone()
        .unwrap_or_else(|| config.report_dir().join(format!("{command}.{ext}")));
    write_text(&path, &text)?;
    print!("{markdown}");
    eprintln!("report written to {}", path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

/// Resolves one embedding set from a file or the registry.
fn pick_set(config: &Config, args: &SetArgs) -> Result<(SetKey, EmbeddingSet<f64>), Error> {
    if let Some(path) = &args.embeddings {
        return load_set(path, None);
    }
    let registry = config.registry()?;
    let key = match args.set {
        Some(k) => k,
        None => {
            let color = registry.keys().filter(|k| k.mode == ColorMode::Color).max_by_key(|k| k.resolution);
            *color
                .or_else(|| registry.keys().max_by_key(|k| k.resolution))
                .ok_or_else(|| Error::input("no --embeddings given and no embedding sets registered"))?
        }
    };
    let path = registry
        .get(&key)
        .ok_or_else(|| Error::input(format!("no embedding set registered for `{key}`")))?;
    load_set(path, Some(key))
}

fn grouping_or(path: Option<&Path>, fallback: impl FnOnce() -> ClassGrouping) -> Result<ClassGrouping, Error> {
    match path {
        Some(p) => read_grouping(p),
        None => Ok(fallback()),
    }
}

#[derive(Serialize)]
struct FlopsOutput<'a> {
    #[serde(flatten)]
    report: &'a FlopsReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    sweep: Vec<SweepRow>,
}

#[derive(Serialize)]
struct SweepRow {
    size: u32,
    flops: u64,
}

pub fn run(cli: Cli) -> Outcome<()> {
    let config = load_config(cli.config.as_deref())?;
    let name = cli.command.name();
    match cli.command {
        Command::AnalyzeScale {
            annotations,
            grouping,
            resolution,
            bins,
            output,
        } => {
            let path = need(annotations.or(config.annotations.clone()), "annotations")?;
            let anns = load_annotations(&path)?;
            let grouping = grouping.as_deref().map(read_grouping).transpose()?;
            let bins = bins.or(config.bins).unwrap_or(DEFAULT_BINS);
            let stats: ScaleStats = scale_stats(&anns, grouping.as_ref(), resolution, bins)?;
            emit(&config, name, &output, &stats, scale_markdown(&stats))
        }
        Command::EstimateFlops {
            model,
            mode,
            sizes,
            output,
        } => {
            let path = need(model.or(config.model.clone()), "model")?;
            let spec = ModelSpec::load_or_builtin(&path)?;
            let report = model_flops(&spec, mode)?;
            let sweep: Vec<SweepRow> = resolution_sweep(&spec, &sizes, mode)?
                .into_iter()
                .map(|(size, flops)| SweepRow { size, flops })
                .collect();
            let mut md = flops_markdown(&report);
            if !sweep.is_empty() {
                md.push_str("\n| input | kFLOPS |\n|---:|---:|\n");
                for r in &sweep {
                    md.push_str(&format!("| {0}x{0} | {1} |\n", r.size, dsattr_core::flops::format_kflops(r.flops)));
                }
            }
            emit(&config, name, &output, &FlopsOutput { report: &report, sweep }, md)
        }
        Command::Similarity { set, grouping, output } => {
            let (_, set) = pick_set(&config, &set)?;
            let g = grouping_or(grouping.as_deref(), || ClassGrouping::identity(set.class_counts().keys()))?;
            let report = workspace::report(&set, &g)?;
            emit(&config, name, &output, &report, similarity_markdown(&report))
        }
        Command::SelectClasses {
            set,
            grouping,
            log,
            output,
        } => {
            let (key, set) = pick_set(&config, &set)?;
            let g = grouping_or(grouping.as_deref(), || ClassGrouping::identity(set.class_counts().keys()))?;
            let mut store = LogStore::open(Some(&log.unwrap_or_else(|| default_log_path(&config))))?;
            let eval = store.commit(|log| evaluate(log, &set, key, &g, &config.thresholds))?;
            emit(&config, name, &output, &eval, render::evaluation(&eval))
        }
        Command::SelectColor {
            color_file,
            gray_file,
            resolution,
            grouping,
            per_class,
            log,
            output,
        } => {
            let (color, gray, res) = match (color_file, gray_file) {
                (Some(c), Some(g)) => {
                    let (ck, cs) = load_set(&c, None)?;
                    let (gk, gs) = load_set(&g, None)?;
                    if ck.mode != ColorMode::Color || gk.mode != ColorMode::Gray {
                        return Err(Error::input(format!("--color must be a color set and --gray a gray set (got {ck} and {gk})")).into());
                    }
                    if ck.resolution != gk.resolution {
                        return Err(Error::input(format!("color set is at {} px, gray set at {} px", ck.resolution, gk.resolution)).into());
                    }
                    (cs, gs, ck.resolution)
                }
                _ => {
                    let registry = config.registry()?;
                    let res = match resolution {
                        Some(r) => r,
                        None => registry
                            .keys()
                            .filter(|k| k.mode == ColorMode::Color)
                            .filter(|k| registry.contains_key(&SetKey::new(ColorMode::Gray, k.resolution)))
                            .map(|k| k.resolution)
                            .max()
                            .ok_or_else(|| Error::input("no resolution has both a color and a gray set registered"))?,
                    };
                    let get = |mode| {
                        let key = SetKey::new(mode, res);
                        let path = registry
                            .get(&key)
                            .ok_or_else(|| Error::input(format!("no embedding set registered for `{key}`")))?;
                        load_set(path, Some(key)).map(|(_, s)| s)
                    };
                    (get(ColorMode::Color)?, get(ColorMode::Gray)?, res)
                }
            };
            let mut store = LogStore::open(Some(&log.unwrap_or_else(|| default_log_path(&config))))?;
            let g = grouping_or(grouping.as_deref(), || working_grouping(store.log(), &color))?;
            let sel = store.commit(|log| choose_color(log, &color, &gray, &g, res, per_class))?;
            emit(&config, name, &output, &sel, render::color_selection(&sel))
        }
        Command::SelectResolution {
            embeddings,
            resolutions,
            mode,
            grouping,
            annotations,
            log,
            output,
        } => {
            let mut store = LogStore::open(Some(&log.unwrap_or_else(|| default_log_path(&config))))?;
            let color = working_color(store.log());
            let mut sets = BTreeMap::new();
            let mut set_mode = None;
            if embeddings.is_empty() {
                let mode = mode.unwrap_or_else(|| color.network_mode());
                let registry = config.registry()?;
                let rungs = if !resolutions.is_empty() {
                    resolutions.clone()
                } else if let Some(l) = &config.ladder {
                    l.clone()
                } else {
                    registry.keys().filter(|k| k.mode == mode).map(|k| k.resolution).collect()
                };
                for r in rungs {
                    let key = SetKey::new(mode, r);
                    let path = registry
                        .get(&key)
                        .ok_or_else(|| Error::input(format!("resolution ladder: no embedding set registered for `{key}`")))?;
                    sets.insert(r, load_set(path, Some(key))?.1);
                }
                set_mode = Some(mode);
            } else {
                for path in &embeddings {
                    let (key, set) = load_set(path, None)?;
                    if set_mode.is_some_and(|m| m != key.mode) {
                        return Err(Error::input("ladder sets mix color modes").into());
                    }
                    set_mode = Some(key.mode);
                    if sets.insert(key.resolution, set).is_some() {
                        return Err(Error::input(format!("two ladder sets at {} px", key.resolution)).into());
                    }
                }
            }
            let set_mode = set_mode.expect("at least one set");
            let choice = match color {
                c if c.network_mode() == set_mode => c,
                _ => set_mode.into(),
            };
            let first = sets.values().next().ok_or_else(|| Error::input("resolution ladder needs embedding sets"))?;
            let g = grouping_or(grouping.as_deref(), || working_grouping(store.log(), first))?;
            let scales = match annotations.or(config.annotations.clone()) {
                Some(p) => Some(workspace::class_max_scale(
                    &load_annotations(&p)?,
                    &g,
                    config.bins.unwrap_or(DEFAULT_BINS),
                )?),
                None => None,
            };
            let rungs: Vec<u32> = sets.keys().copied().collect();
            let outcome = workspace::ladder(&rungs, &sets, &g, scales.as_ref(), &config.thresholds)?;
            let sel = store.commit(|log| Ok(record_ladder(log, outcome, choice, &config.thresholds)))?;
            emit(&config, name, &output, &sel, render::ladder_selection(&sel))
        }
        Command::Recommend {
            annotations,
            model,
            log,
            output,
        } => {
            let log = read_log::<f64>(log.unwrap_or_else(|| default_log_path(&config)))?;
            log.ensure_complete()?;
            let path = need(annotations.or(config.annotations.clone()), "annotations")?;
            let anns = load_annotations(&path)?;
            let spec = model.or(config.model.clone()).map(ModelSpec::load_or_builtin).transpose()?;
            let rec = recommend(&log, &anns, spec.as_ref(), &config.thresholds)?;
            emit(&config, name, &output, &rec, render::recommendation(&rec))
        }
        Command::Log { log } => {
            let log = read_log::<f64>(log.unwrap_or_else(|| default_log_path(&config)))?;
            print!("{}", render::log(&log));
            Ok(())
        }
        Command::Serve { bind, log } => {
            let mut config = config;
            if log.is_some() {
                config.log = log;
            }
            let bind = bind.or(config.bind.clone()).unwrap_or_else(|| DEFAULT_BIND.into());
            let store = LogStore::open(config.log.as_deref())?;
            let ws = Workspace::load(config)?;
            crate::server::serve(ws, store, &bind)
        }
        Command::Synth { out, seed } => {
            let seed = seed.or(config.seed).unwrap_or(DEFAULT_SEED);
            write_fixture(&out, seed)?;
            eprintln!("fixture written to {}", out.display());
            Ok(())
        }
    }
}

/// Writes the pipeline fixture and a config that registers it.
pub fn write_fixture(dir: &Path, seed: u64) -> Outcome<()> {
    let fx = synth::pipeline_fixture(seed);
    let mut cfg = String::from(
        "# Synthetic pipeline fixture written by `dsattr synth`.\n\
         annotations = \"annotations.json\"\n\
         log = \"decisions.jsonl\"\n\
         report_dir = \"reports\"\n\
         model = \"enb0-32\"\n\
         bins = 20\n",
    );
    cfg.push_str(&format!("seed = {seed}\nbind = \"{DEFAULT_BIND}\"\n"));
    let ladder: Vec<String> = synth::FIXTURE_LADDER.iter().map(u32::to_string).collect();
    cfg.push_str(&format!("ladder = [{}]\n", ladder.join(", ")));
    let mut grouping_files = Vec::new();
    for g in fx.groupings.iter().filter(|g| g.name != dsattr_core::grouping::IDENTITY) {
        let rel = format!("groupings/{}.toml", g.name);
        write_grouping(dir.join(&rel), g)?;
        grouping_files.push(format!("\"{rel}\""));
    }
    cfg.push_str(&format!("groupings = [{}]\n\n[embeddings]\n", grouping_files.join(", ")));
    for s in &fx.sets {
        let rel = format!("sets/{}.semb", s.file_stem);
        write_embeddings(dir.join(&rel), &s.set, &s.meta)?;
        cfg.push_str(&format!(
            "\"{}\" = \"{rel}\"\n",
            SetKey::new(s.meta.color_mode, s.meta.resolution)
        ));
    }
    write_annotations(dir.join("annotations.json"), &fx.annotations)?;
    write_text(&dir.join("dsattr.toml"), &cfg)?;
    Ok(())
}
