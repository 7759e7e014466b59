//! Loaded inputs and the operations shared by the command line and the HTTP
//! service. Both front ends call these functions, so they produce identical
//! numbers for identical inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dsattr_core::attributes::{scale_stats, DEFAULT_BINS};
use dsattr_core::io::{read_annotations, read_embeddings, read_grouping, LockedLog};
use dsattr_core::selection::{
    evaluate_grouping, grouping_guidance, log_color_decision, log_ladder, log_per_class_color,
    resolution_ladder, select_color, select_color_per_class, ColorDecision, DecisionLog,
    GuidanceRow, LadderOutcome, PerClassColor,
};
use dsattr_core::similarity::{similarity_report, EmbeddingSet, SimilarityReport};
use dsattr_core::{
    BBoxAnnotation, ClassGrouping, ColorChoice, ColorMode, Error, ModelSpec, Procedure, Result,
    Thresholds,
};
use serde::Serialize;

use crate::config::{Config, SetKey};

/// Everything a session reads but never changes: registered embedding sets,
/// named groupings, annotations and the model spec.
#[derive(Debug, Default)]
pub struct Workspace {
    pub config: Config,
    pub sets: BTreeMap<SetKey, EmbeddingSet<f64>>,
    pub groupings: BTreeMap<String, ClassGrouping>,
    pub annotations: Option<Vec<BBoxAnnotation>>,
    pub model: Option<ModelSpec>,
}

/// Reads one embedding set and checks it carries the configuration it is registered under.
pub fn load_set(path: &Path, key: Option<SetKey>) -> Result<(SetKey, EmbeddingSet<f64>)> {
    let (manifest, set) = read_embeddings::<f64>(path)?;
    let found = SetKey::new(manifest.color_mode, manifest.resolution);
    if let Some(key) = key {
        if key != found {
            return Err(Error::input(format!(
                "{} is registered as `{key}` but its manifest says `{found}`",
                path.display()
            )));
        }
    }
    Ok((found, set))
}

/// Reads annotations, reporting rejected records on stderr.
pub fn load_annotations(path: &Path) -> Result<Vec<BBoxAnnotation>> {
    let import = read_annotations(path)?;
    for r in &import.rejects {
        eprintln!(
            "{}: rejected annotation #{} ({}): {}",
            path.display(),
            r.index,
            r.id.as_deref().unwrap_or("no id"),
            r.reason
        );
    }
    Ok(import.annotations)
}

impl Workspace {
    pub fn load(config: Config) -> Result<Self> {
        let mut sets = BTreeMap::new();
        for (key, path) in config.registry()? {
            let (_, set) = load_set(&path, Some(key))?;
            sets.insert(key, set);
        }
        let mut groupings = BTreeMap::new();
        for path in &config.groupings {
            let g = read_grouping(path)?;
            g.check()?;
            if groupings.insert(g.name.clone(), g).is_some() {
                return Err(Error::input(format!("{}: duplicate grouping name", path.display())));
            }
        }
        let annotations = config.annotations.as_deref().map(load_annotations).transpose()?;
        let model = config.model.as_deref().map(ModelSpec::load_or_builtin).transpose()?;
        Ok(Self {
            config,
            sets,
            groupings,
            annotations,
            model,
        })
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.config.thresholds
    }

    pub fn set(&self, key: SetKey) -> Result<&EmbeddingSet<f64>> {
        self.sets
            .get(&key)
            .ok_or_else(|| Error::input(format!("no embedding set registered for `{key}`")))
    }

    /// Highest-resolution color set, or the highest-resolution set of any mode.
    pub fn default_key(&self) -> Result<SetKey> {
        let by_res = |mode: Option<ColorMode>| {
            self.sets
                .keys()
                .filter(|k| mode.is_none_or(|m| k.mode == m))
                .max_by_key(|k| k.resolution)
                .copied()
        };
        by_res(Some(ColorMode::Color))
            .or_else(|| by_res(None))
            .ok_or_else(|| Error::input("no embedding sets registered"))
    }

    /// Looks a grouping up by name: `identity`, a configured grouping file, or
    /// the latest grouping of that name evaluated in the log.
    pub fn grouping(&self, name: &str, log: &DecisionLog<f64>) -> Result<ClassGrouping> {
        if name == dsattr_core::grouping::IDENTITY {
            return Ok(ClassGrouping::identity(self.set(self.default_key()?)?.class_counts().keys()));
        }
        if let Some(g) = self.groupings.get(name) {
            return Ok(g.clone());
        }
        log.entries()
            .iter()
            .rev()
            .filter_map(|e| e.grouping.as_ref())
            .find(|g| g.name == name)
            .cloned()
            .ok_or_else(|| Error::input(format!("unknown grouping `{name}`")))
    }

    pub fn grouping_names(&self, log: &DecisionLog<f64>) -> Vec<String> {
        let mut names: Vec<String> = vec![dsattr_core::grouping::IDENTITY.to_string()];
        names.extend(self.groupings.keys().cloned());
        for g in log.entries().iter().filter_map(|e| e.grouping.as_ref()) {
            if !names.contains(&g.name) {
                names.push(g.name.clone());
            }
        }
        names
    }

    /// Resolutions of the ladder: the configured ones, else every registered
    /// resolution in `mode`.
    pub fn ladder_resolutions(&self, mode: ColorMode) -> Vec<u32> {
        match &self.config.ladder {
            Some(l) => l.clone(),
            None => self.sets.keys().filter(|k| k.mode == mode).map(|k| k.resolution).collect(),
        }
    }

    /// Largest object scale per grouped class, when annotations are available.
    pub fn class_max_scale(&self, grouping: &ClassGrouping) -> Result<Option<BTreeMap<String, f64>>> {
        let Some(annotations) = &self.annotations else {
            return Ok(None);
        };
        class_max_scale(annotations, grouping, self.config.bins.unwrap_or(DEFAULT_BINS)).map(Some)
    }
}

pub fn class_max_scale(
    annotations: &[BBoxAnnotation],
    grouping: &ClassGrouping,
    bins: usize,
) -> Result<BTreeMap<String, f64>> {
    let stats = scale_stats(annotations, Some(grouping), None, bins)?;
    Ok(stats.per_class.into_iter().map(|(c, s)| (c, s.max_scale)).collect())
}

/// Grouping currently favoured by class selection, else identity over `set`.
pub fn working_grouping(log: &DecisionLog<f64>, set: &EmbeddingSet<f64>) -> ClassGrouping {
    log.best(Procedure::Classes)
        .and_then(|e| e.grouping.clone())
        .unwrap_or_else(|| ClassGrouping::identity(set.class_counts().keys()))
}

/// Color handling currently favoured by color selection, else full color.
pub fn working_color(log: &DecisionLog<f64>) -> ColorChoice {
    log.best(Procedure::Color)
        .map(|e| e.config.color_mode.clone())
        .unwrap_or(ColorChoice::Color)
}

/// Checks a grouping is well formed and covers exactly the classes of `set`.
pub fn check_grouping(grouping: &ClassGrouping, set: &EmbeddingSet<f64>) -> Result<()> {
    let classes = set.class_counts();
    grouping.check_against(classes.keys().map(String::as_str))
}

/// The decision log a session appends to: a locked file, or memory only.
#[derive(Debug)]
pub enum LogStore {
    File(LockedLog<f64>),
    Memory { log: DecisionLog<f64>, committed: usize },
}

impl LogStore {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        Ok(match path {
            Some(p) => LogStore::File(LockedLog::open(p)?),
            None => LogStore::memory(),
        })
    }

    pub fn memory() -> Self {
        LogStore::Memory {
            log: DecisionLog::new(),
            committed: 0,
        }
    }

    pub fn log(&self) -> &DecisionLog<f64> {
        match self {
            LogStore::File(f) => f.log(),
            LogStore::Memory { log, .. } => log,
        }
    }

    /// Runs `f` against the log and keeps its appends only if it succeeds and
    /// they reach disk.
    pub fn commit<R>(&mut self, f: impl FnOnce(&mut DecisionLog<f64>) -> Result<R>) -> Result<R> {
        let result = match self {
            LogStore::File(file) => f(file.log_mut()).and_then(|r| file.persist().map(|_| r)),
            LogStore::Memory { log, .. } => f(log),
        };
        match self {
            LogStore::File(file) => {
                if result.is_err() {
                    file.discard_pending();
                }
            }
            LogStore::Memory { log, committed } => {
                if result.is_err() && log.len() > *committed {
                    *log = DecisionLog::replay(log.entries()[..*committed].to_vec());
                }
                *committed = log.len();
            }
        }
        result
    }
}

pub fn default_log_path(config: &Config) -> PathBuf {
    config
        .log
        .clone()
        .unwrap_or_else(|| config.report_dir().join("decisions.jsonl"))
}

/// Result of evaluating a grouping: the report fields at top level, plus where
/// the evaluation landed in the log and the per-class guidance.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    #[serde(flatten)]
    pub report: SimilarityReport<f64>,
    pub seq: u64,
    pub is_best_so_far: bool,
    pub best_seq: u64,
    pub guidance: Vec<GuidanceRow<f64>>,
}

pub fn evaluate(
    log: &mut DecisionLog<f64>,
    set: &EmbeddingSet<f64>,
    key: SetKey,
    grouping: &ClassGrouping,
    thresholds: &Thresholds,
) -> Result<Evaluation> {
    check_grouping(grouping, set)?;
    let guidance = grouping_guidance(set, grouping)?;
    let (report, entry) = evaluate_grouping(log, set, grouping, key.mode, key.resolution, thresholds)?;
    let best_seq = log.best(Procedure::Classes).map(|e| e.seq).unwrap_or(entry.seq);
    Ok(Evaluation {
        report,
        seq: entry.seq,
        is_best_so_far: entry.is_best_so_far,
        best_seq,
        guidance,
    })
}

/// A plain report, validating the grouping the same way an evaluation does.
pub fn report(set: &EmbeddingSet<f64>, grouping: &ClassGrouping) -> Result<SimilarityReport<f64>> {
    check_grouping(grouping, set)?;
    similarity_report(set, grouping)
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum ColorOutcome {
    Whole(Box<ColorDecision<f64>>),
    PerClass(PerClassColor<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct ColorSelection {
    pub grouping_name: String,
    pub resolution: u32,
    pub color_mode: ColorChoice,
    #[serde(flatten)]
    pub outcome: ColorOutcome,
    pub seq: u64,
    pub is_best_so_far: bool,
}

pub fn choose_color(
    log: &mut DecisionLog<f64>,
    color: &EmbeddingSet<f64>,
    gray: &EmbeddingSet<f64>,
    grouping: &ClassGrouping,
    resolution: u32,
    per_class: bool,
) -> Result<ColorSelection> {
    check_grouping(grouping, color)?;
    let (outcome, entry) = if per_class {
        let pc = select_color_per_class(color, gray, grouping)?;
        let report = similarity_report(color, grouping)?;
        let entry = log_per_class_color(log, &pc, report, &grouping.name, resolution);
        (ColorOutcome::PerClass(pc), entry)
    } else {
        let d = select_color(color, gray, grouping)?;
        let entry = log_color_decision(log, &d, &grouping.name, resolution);
        (ColorOutcome::Whole(Box::new(d)), entry)
    };
    Ok(ColorSelection {
        grouping_name: grouping.name.clone(),
        resolution,
        color_mode: entry.config.color_mode.clone(),
        outcome,
        seq: entry.seq,
        is_best_so_far: entry.is_best_so_far,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderSelection {
    #[serde(flatten)]
    pub outcome: LadderOutcome<f64>,
    pub color_mode: ColorChoice,
    /// Log sequence numbers of the rungs, in rung order.
    pub seqs: Vec<u64>,
}

/// Runs the ladder over `sets` without touching the log.
pub fn ladder(
    resolutions: &[u32],
    sets: &BTreeMap<u32, EmbeddingSet<f64>>,
    grouping: &ClassGrouping,
    class_max_scale: Option<&BTreeMap<String, f64>>,
    thresholds: &Thresholds,
) -> Result<LadderOutcome<f64>> {
    for set in sets.values() {
        check_grouping(grouping, set)?;
    }
    resolution_ladder(resolutions, sets, grouping, class_max_scale, thresholds)
}

pub fn record_ladder(
    log: &mut DecisionLog<f64>,
    outcome: LadderOutcome<f64>,
    color: ColorChoice,
    thresholds: &Thresholds,
) -> LadderSelection {
    let seqs = log_ladder(log, &outcome, color.clone(), thresholds)
        .iter()
        .map(|e| e.seq)
        .collect();
    LadderSelection {
        outcome,
        color_mode: color,
        seqs,
    }
}
