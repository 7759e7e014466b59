//! Class-grouping, color-mode and resolution selection, recorded in a decision log.
//!
//! Each procedure evaluates candidate configurations with the similarity
//! metrics and keeps a running best. For class groupings and resolution rungs
//! the best is the strict running argmin of ΔS2 (earlier candidates win ties);
//! for color mode the most recent decision stands.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::attributes::{ceil_pixels, min_layers, scale_stats, BBoxAnnotation, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::flops::{model_flops, ColorMode, ModelSpec};
use crate::grouping::ClassGrouping;
use crate::scalar::Scalar;
use crate::similarity::{
    report_from_partition, ClassPartition, ClassSimilarityStats, EmbeddingSet, SimilarityReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    Classes,
    Color,
    Resolution,
}

impl Procedure {
    pub const ALL: [Procedure; 3] = [Procedure::Classes, Procedure::Color, Procedure::Resolution];

    pub fn as_str(self) -> &'static str {
        match self {
            Procedure::Classes => "classes",
            Procedure::Color => "color",
            Procedure::Resolution => "resolution",
        }
    }
}

/// Color handling of a configuration: one mode for all classes, or one per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorChoice {
    Color,
    Gray,
    PerClass(BTreeMap<String, ColorMode>),
}

impl ColorChoice {
    /// Mode the network input must support.
    pub fn network_mode(&self) -> ColorMode {
        match self {
            ColorChoice::Gray => ColorMode::Gray,
            ColorChoice::Color | ColorChoice::PerClass(_) => ColorMode::Color,
        }
    }
}

impl From<ColorMode> for ColorChoice {
    fn from(m: ColorMode) -> Self {
        match m {
            ColorMode::Color => ColorChoice::Color,
            ColorMode::Gray => ColorChoice::Gray,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigKey {
    pub grouping_name: String,
    pub color_mode: ColorChoice,
    /// Longer image side in pixels; 0 when the source set does not record it.
    pub resolution: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LogEntry<T> {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub procedure: Procedure,
    pub config: ConfigKey,
    pub report: SimilarityReport<T>,
    pub is_best_so_far: bool,
    pub note: String,
    /// The grouping evaluated, for class-selection entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<ClassGrouping>,
}

/// True when `a` beats the incumbent `b`: smaller ΔS2, with any defined ΔS2
/// ranking ahead of an undefined one (non-positive mean S2), and Ŝ2 deciding
/// between two undefined ones.
fn strictly_better<T: Scalar>(a: &SimilarityReport<T>, b: &SimilarityReport<T>) -> bool {
    argmin_delta(&[(b.delta_s2, b.s2_max), (a.delta_s2, a.s2_max)]) == Some(1)
}

/// Index of the best candidate by ΔS2 (with Ŝ2 as the fallback for undefined
/// ΔS2); the earliest candidate wins ties. `None` for an empty slice.
pub fn argmin_delta<T: Scalar>(candidates: &[(Option<T>, T)]) -> Option<usize> {
    let key = |c: &(Option<T>, T)| match c.0 {
        Some(d) => (0u8, d),
        None => (1u8, c.1),
    };
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let (ka, kb) = (key(c), key(&candidates[b]));
                ka.0 < kb.0 || (ka.0 == kb.0 && ka.1 < kb.1)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Append-only record of procedure iterations.
///
/// `is_best_so_far` on the in-memory entries always reflects the current best
/// per procedure; at most one entry per procedure carries it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DecisionLog<T> {
    entries: Vec<LogEntry<T>>,
}

impl<T: Scalar> Default for DecisionLog<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl<T: Scalar> DecisionLog<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a log from stored entries, recomputing every best-so-far flag.
    pub fn replay(entries: impl IntoIterator<Item = LogEntry<T>>) -> Self {
        let mut log = Self::new();
        for mut e in entries {
            e.is_best_so_far = false;
            log.push_entry(e);
        }
        log
    }

    pub fn entries(&self) -> &[LogEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self, procedure: Procedure) -> Option<&LogEntry<T>> {
        self.entries
            .iter()
            .find(|e| e.procedure == procedure && e.is_best_so_far)
    }

    /// Procedures with no entry yet.
    pub fn missing(&self) -> Vec<Procedure> {
        Procedure::ALL
            .into_iter()
            .filter(|p| self.best(*p).is_none())
            .collect()
    }

    /// Fails with a state error naming every procedure that has no entry yet.
    pub fn ensure_complete(&self) -> Result<()> {
        let missing = self.missing();
        if missing.is_empty() {
            return Ok(());
        }
        let names: Vec<&str> = missing.iter().map(|p| p.as_str()).collect();
        Err(Error::State(format!(
            "cannot recommend yet; run these selection procedures first: {}",
            names.join(", ")
        )))
    }

    fn push_entry(&mut self, mut entry: LogEntry<T>) -> &LogEntry<T> {
        let current = self
            .entries
            .iter()
            .position(|e| e.procedure == entry.procedure && e.is_best_so_far);
        let wins = match (entry.procedure, current) {
            (_, None) => true,
            (Procedure::Color, Some(_)) => true,
            (_, Some(i)) => strictly_better(&entry.report, &self.entries[i].report),
        };
        if wins {
            if let Some(i) = current {
                self.entries[i].is_best_so_far = false;
            }
        }
        entry.is_best_so_far = wins;
        self.entries.push(entry);
        self.entries.last().expect("just pushed")
    }

    /// Appends a new entry stamped with the next sequence number and the current time.
    pub fn append(
        &mut self,
        procedure: Procedure,
        config: ConfigKey,
        report: SimilarityReport<T>,
        note: impl Into<String>,
        grouping: Option<ClassGrouping>,
    ) -> &LogEntry<T> {
        let seq = self.entries.last().map_or(0, |e| e.seq + 1);
        self.push_entry(LogEntry {
            seq,
            timestamp_ms: now_ms(),
            procedure,
            config,
            report,
            is_best_so_far: false,
            note: note.into(),
            grouping,
        })
    }
}

/// Tunable thresholds for the procedures and the recommendation warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// ΔS2 at or below which a procedure may stop. Off by default.
    pub stop_delta_s2: Option<f64>,
    /// Smallest object side (px) at which fine texture is assumed to survive.
    pub bmax_warning_px: u64,
    /// Grouped-class counts at or below this are "few classes".
    pub few_classes: usize,
    /// Ŝ2 at or above this is "high".
    pub high_s2: f64,
    /// Allowed deviation (px) from exact halving between ladder rungs.
    pub ladder_tolerance_px: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            stop_delta_s2: None,
            bmax_warning_px: 8,
            few_classes: 3,
            high_s2: 0.5,
            ladder_tolerance_px: 1.0,
        }
    }
}

fn stop_note<T: Scalar>(report: &SimilarityReport<T>, thresholds: &Thresholds) -> String {
    match (thresholds.stop_delta_s2, report.delta_s2) {
        (Some(stop), Some(d)) if d.as_f64() <= stop => {
            format!("delta_s2 {:.6} <= stop threshold {stop}; may exit", d.as_f64())
        }
        _ => String::new(),
    }
}

/// Evaluates a class grouping and records it.
pub fn evaluate_grouping<T: Scalar>(
    log: &mut DecisionLog<T>,
    set: &EmbeddingSet<T>,
    grouping: &ClassGrouping,
    color: ColorMode,
    resolution: u32,
    thresholds: &Thresholds,
) -> Result<(SimilarityReport<T>, LogEntry<T>)> {
    let partition = ClassPartition::grouped(set, grouping)?;
    let report = report_from_partition(&partition, &set.config_tag, &grouping.name);
    let config = ConfigKey {
        grouping_name: grouping.name.clone(),
        color_mode: color.into(),
        resolution,
    };
    let note = stop_note(&report, thresholds);
    let entry = log
        .append(Procedure::Classes, config, report.clone(), note, Some(grouping.clone()))
        .clone();
    Ok((report, entry))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GuidanceRow<T> {
    pub class_id: String,
    pub size: usize,
    pub stats: Option<ClassSimilarityStats<T>>,
    /// Set when the class cannot be scored.
    pub flag: Option<String>,
}

/// Per grouped class S1 and σ², worst first: unscorable classes, then ascending S1.
pub fn grouping_guidance<T: Scalar>(
    set: &EmbeddingSet<T>,
    grouping: &ClassGrouping,
) -> Result<Vec<GuidanceRow<T>>> {
    let partition = ClassPartition::grouped(set, grouping)?;
    let mut rows: Vec<GuidanceRow<T>> = partition
        .blocks
        .iter()
        .map(|b| {
            let stats = b.intra_stats();
            let flag = stats.is_none().then(|| {
                format!("insufficient instances ({}); need at least 2", b.len())
            });
            GuidanceRow {
                class_id: b.class_id.clone(),
                size: b.len(),
                stats,
                flag,
            }
        })
        .collect();
    rows.sort_by(|a, b| match (&a.stats, &b.stats) {
        (None, None) => a.class_id.cmp(&b.class_id),
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x
            .s1
            .partial_cmp(&y.s1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.class_id.cmp(&b.class_id)),
    });
    Ok(rows)
}

fn check_paired<T: Scalar>(color: &EmbeddingSet<T>, gray: &EmbeddingSet<T>) -> Result<()> {
    if color.space_id != gray.space_id {
        return Err(Error::input(format!(
            "color and gray sets come from different embedding spaces ({:?} vs {:?})",
            color.space_id, gray.space_id
        )));
    }
    if color.dimension() != gray.dimension() {
        return Err(Error::DimensionMismatch {
            expected: color.dimension(),
            found: gray.dimension(),
        });
    }
    if color.len() != gray.len() {
        return Err(Error::input(format!(
            "color set has {} instances, gray set has {}",
            color.len(),
            gray.len()
        )));
    }
    for r in color.records() {
        match gray.get(&r.instance_id) {
            None => {
                return Err(Error::input(format!(
                    "instance `{}` missing from gray set",
                    r.instance_id
                )))
            }
            Some(g) if g.class_id != r.class_id => {
                return Err(Error::input(format!(
                    "instance `{}` is `{}` in color set but `{}` in gray set",
                    r.instance_id, r.class_id, g.class_id
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ColorDecision<T> {
    pub mode: ColorMode,
    pub s2_max_color: T,
    pub s2_max_gray: T,
    pub color_report: SimilarityReport<T>,
    pub gray_report: SimilarityReport<T>,
}

/// Grayscale iff Ŝ2(gray) <= Ŝ2(color).
pub fn select_color<T: Scalar>(
    color: &EmbeddingSet<T>,
    gray: &EmbeddingSet<T>,
    grouping: &ClassGrouping,
) -> Result<ColorDecision<T>> {
    check_paired(color, gray)?;
    let color_report = report_from_partition(
        &ClassPartition::grouped(color, grouping)?,
        &color.config_tag,
        &grouping.name,
    );
    let gray_report = report_from_partition(
        &ClassPartition::grouped(gray, grouping)?,
        &gray.config_tag,
        &grouping.name,
    );
    let mode = if gray_report.s2_max <= color_report.s2_max {
        ColorMode::Gray
    } else {
        ColorMode::Color
    };
    Ok(ColorDecision {
        mode,
        s2_max_color: color_report.s2_max,
        s2_max_gray: gray_report.s2_max,
        color_report,
        gray_report,
    })
}

/// Records a color decision; the report stored is that of the chosen mode.
pub fn log_color_decision<T: Scalar>(
    log: &mut DecisionLog<T>,
    decision: &ColorDecision<T>,
    grouping_name: &str,
    resolution: u32,
) -> LogEntry<T> {
    let report = match decision.mode {
        ColorMode::Gray => decision.gray_report.clone(),
        ColorMode::Color => decision.color_report.clone(),
    };
    let note = format!(
        "s2_max gray {} vs color {}",
        decision.s2_max_gray, decision.s2_max_color
    );
    log.append(
        Procedure::Color,
        ConfigKey {
            grouping_name: grouping_name.to_string(),
            color_mode: decision.mode.into(),
            resolution,
        },
        report,
        note,
        None,
    )
    .clone()
}

/// Worst-case S2 of one class against all others for each (anchor, other) mode pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PerClassColorRow<T> {
    pub class_id: String,
    pub gray_gray: T,
    pub gray_color: T,
    pub color_gray: T,
    pub color_color: T,
    pub mode: ColorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PerClassColor<T> {
    pub rows: Vec<PerClassColorRow<T>>,
    pub note: String,
}

impl<T: Scalar> PerClassColor<T> {
    pub fn modes(&self) -> BTreeMap<String, ColorMode> {
        self.rows
            .iter()
            .map(|r| (r.class_id.clone(), r.mode))
            .collect()
    }
}

pub const PER_CLASS_NOTE: &str =
    "per-class color selection may improve accuracy but does not directly reduce computation";

/// Per-class color assignment: a class goes gray iff both of its gray-anchored
/// worst-case similarities are strictly below both color-anchored ones.
pub fn select_color_per_class<T: Scalar>(
    color: &EmbeddingSet<T>,
    gray: &EmbeddingSet<T>,
    grouping: &ClassGrouping,
) -> Result<PerClassColor<T>> {
    check_paired(color, gray)?;
    let pc = ClassPartition::grouped(color, grouping)?;
    let pg = ClassPartition::grouped(gray, grouping)?;
    let k = pc.blocks.len();
    let worst = |anchor: &ClassPartition<T>, other: &ClassPartition<T>, i: usize| -> T {
        (0..k)
            .filter(|&j| j != i)
            .map(|j| anchor.blocks[i].mean_similarity_with(&other.blocks[j]))
            .fold(T::neg_infinity(), T::max)
    };
    let rows = (0..k)
        .map(|i| {
            let gg = worst(&pg, &pg, i);
            let gc = worst(&pg, &pc, i);
            let cg = worst(&pc, &pg, i);
            let cc = worst(&pc, &pc, i);
            let mode = if gg.max(gc) < cg.min(cc) {
                ColorMode::Gray
            } else {
                ColorMode::Color
            };
            PerClassColorRow {
                class_id: pc.blocks[i].class_id.clone(),
                gray_gray: gg,
                gray_color: gc,
                color_gray: cg,
                color_color: cc,
                mode,
            }
        })
        .collect();
    Ok(PerClassColor {
        rows,
        note: PER_CLASS_NOTE.to_string(),
    })
}

/// Records a per-class assignment. The stored report is the color one, since a
/// network serving mixed classes still takes color input.
pub fn log_per_class_color<T: Scalar>(
    log: &mut DecisionLog<T>,
    decision: &PerClassColor<T>,
    color_report: SimilarityReport<T>,
    grouping_name: &str,
    resolution: u32,
) -> LogEntry<T> {
    let gray: Vec<&str> = decision
        .rows
        .iter()
        .filter(|r| r.mode == ColorMode::Gray)
        .map(|r| r.class_id.as_str())
        .collect();
    let note = format!("gray classes: [{}]; {}", gray.join(", "), decision.note);
    log.append(
        Procedure::Color,
        ConfigKey {
            grouping_name: grouping_name.to_string(),
            color_mode: ColorChoice::PerClass(decision.modes()),
            resolution,
        },
        color_report,
        note,
        None,
    )
    .clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LadderRung<T> {
    pub resolution: u32,
    pub s2_max: T,
    pub delta_s2: Option<T>,
    pub report: SimilarityReport<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LadderOutcome<T> {
    pub grouping_name: String,
    /// Rungs in descending resolution.
    pub rungs: Vec<LadderRung<T>>,
    pub chosen: u32,
    pub warnings: Vec<String>,
}

/// Texture-loss warnings for classes whose largest object shrinks below the threshold.
pub fn small_object_warnings(
    class_max_scale: &BTreeMap<String, f64>,
    resolution: u32,
    thresholds: &Thresholds,
) -> Vec<String> {
    class_max_scale
        .iter()
        .filter_map(|(class, &scale)| {
            let b = ceil_pixels(scale * resolution as f64);
            (b < thresholds.bmax_warning_px).then(|| {
                format!(
                    "class `{class}`: largest object is {b} px at resolution {resolution} \
                     (< {} px); reducing resolution also reduces scale and may erase texture",
                    thresholds.bmax_warning_px
                )
            })
        })
        .collect()
}

/// Evaluates ΔS2 at each resolution and picks the lowest. Rungs are processed in
/// descending resolution whatever the input order, so ties go to the higher one.
pub fn resolution_ladder<T: Scalar>(
    resolutions: &[u32],
    sets: &BTreeMap<u32, EmbeddingSet<T>>,
    grouping: &ClassGrouping,
    class_max_scale: Option<&BTreeMap<String, f64>>,
    thresholds: &Thresholds,
) -> Result<LadderOutcome<T>> {
    let mut order: Vec<u32> = resolutions.to_vec();
    order.sort_unstable_by(|a, b| b.cmp(a));
    order.dedup();
    if order.len() < 2 {
        return Err(Error::input("resolution ladder needs at least 2 distinct resolutions"));
    }
    if order.last() == Some(&0) {
        return Err(Error::input("resolution ladder: resolutions must be positive"));
    }
    for w in order.windows(2) {
        let expected = w[0] as f64 / 2.0;
        if (w[1] as f64 - expected).abs() > thresholds.ladder_tolerance_px {
            return Err(Error::input(format!(
                "resolution ladder: {} does not halve {} (expected {expected} ± {} px)",
                w[1], w[0], thresholds.ladder_tolerance_px
            )));
        }
    }
    let mut rungs = Vec::with_capacity(order.len());
    for &r in &order {
        let set = sets.get(&r).ok_or_else(|| {
            Error::input(format!("resolution ladder: no embedding set for resolution {r}"))
        })?;
        let partition = ClassPartition::grouped(set, grouping)?;
        let report = report_from_partition(&partition, &set.config_tag, &grouping.name);
        rungs.push(LadderRung {
            resolution: r,
            s2_max: report.s2_max,
            delta_s2: report.delta_s2,
            report,
        });
    }
    let keys: Vec<(Option<T>, T)> = rungs.iter().map(|r| (r.delta_s2, r.s2_max)).collect();
    let best = argmin_delta(&keys).expect("at least two rungs");
    let chosen = rungs[best].resolution;
    let warnings = class_max_scale
        .map(|m| small_object_warnings(m, chosen, thresholds))
        .unwrap_or_default();
    Ok(LadderOutcome {
        grouping_name: grouping.name.clone(),
        rungs,
        chosen,
        warnings,
    })
}

/// Appends one resolution entry per rung, highest resolution first.
pub fn log_ladder<T: Scalar>(
    log: &mut DecisionLog<T>,
    outcome: &LadderOutcome<T>,
    color: ColorChoice,
    thresholds: &Thresholds,
) -> Vec<LogEntry<T>> {
    outcome
        .rungs
        .iter()
        .map(|rung| {
            let mut note = stop_note(&rung.report, thresholds);
            if rung.resolution == outcome.chosen && !outcome.warnings.is_empty() {
                if !note.is_empty() {
                    note.push_str("; ");
                }
                note.push_str(&outcome.warnings.join("; "));
            }
            log.append(
                Procedure::Resolution,
                ConfigKey {
                    grouping_name: outcome.grouping_name.clone(),
                    color_mode: color.clone(),
                    resolution: rung.resolution,
                },
                rung.report.clone(),
                note,
                None,
            )
            .clone()
        })
        .collect()
}

/// Largest object side in pixels at a resolution, and the layer bound it implies.
pub fn layer_bound(max_scale: f64, resolution: u32) -> Result<(u64, u32)> {
    if !(max_scale > 0.0 && max_scale <= 1.0) {
        return Err(Error::input(format!("object scale {max_scale} outside (0, 1]")));
    }
    if resolution == 0 {
        return Err(Error::input("resolution must be positive"));
    }
    let b = ceil_pixels(max_scale * resolution as f64);
    Ok((b, min_layers(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub config: ConfigKey,
    pub grouped_classes: Vec<String>,
    pub max_object_scale: f64,
    pub b_max_at_resolution: u64,
    pub min_layers: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops_estimate: Option<u64>,
    pub s2_max: f64,
    pub delta_s2: Option<f64>,
    pub warnings: Vec<String>,
}

/// Combines the best entry of every procedure into a model-size recommendation.
pub fn recommend<T: Scalar>(
    log: &DecisionLog<T>,
    annotations: &[BBoxAnnotation],
    model: Option<&ModelSpec>,
    thresholds: &Thresholds,
) -> Result<Recommendation> {
    log.ensure_complete()?;
    let classes = log.best(Procedure::Classes).expect("checked");
    let color = log.best(Procedure::Color).expect("checked");
    let resolution = log.best(Procedure::Resolution).expect("checked");
    let grouping = classes
        .grouping
        .as_ref()
        .ok_or_else(|| Error::State("class-selection entry carries no grouping".into()))?;
    let res = resolution.config.resolution;
    if res == 0 {
        return Err(Error::State("resolution entry has no resolution".into()));
    }

    let present: BTreeSet<&str> = annotations.iter().map(|a| a.class_id.as_str()).collect();
    for c in &present {
        grouping.target(c)?;
    }
    let stats = scale_stats(annotations, Some(grouping), Some(res), DEFAULT_BINS)?;
    let max_scale = stats.overall.max_scale;
    let (b_max, layers) = layer_bound(max_scale, res)?;

    let mut warnings = Vec::new();
    let per_class_max: BTreeMap<String, f64> = stats
        .per_class
        .iter()
        .map(|(c, s)| (c.clone(), s.max_scale))
        .collect();
    warnings.extend(small_object_warnings(&per_class_max, res, thresholds));

    let k = classes.report.classes.len();
    let s2_max = classes.report.s2_max.as_f64();
    if k <= thresholds.few_classes && s2_max >= thresholds.high_s2 {
        warnings.push(format!(
            "only {k} grouped classes with s2_max {s2_max:.4} >= {}: the worst pair `{}`/`{}` is \
             genuinely similar rather than an artifact of many classes; consider merging it",
            thresholds.high_s2, classes.report.argmax_pair.0, classes.report.argmax_pair.1
        ));
    }
    if matches!(color.config.color_mode, ColorChoice::PerClass(_)) {
        warnings.push(PER_CLASS_NOTE.to_string());
    }

    let color_mode = color.config.color_mode.clone();
    let (model_name, flops_estimate) = match model {
        Some(m) => {
            let report = model_flops(&m.at_size(res), color_mode.network_mode())?;
            (Some(m.name.clone()), Some(report.total))
        }
        None => (None, None),
    };

    Ok(Recommendation {
        config: ConfigKey {
            grouping_name: grouping.name.clone(),
            color_mode,
            resolution: res,
        },
        grouped_classes: classes.report.classes.clone(),
        max_object_scale: max_scale,
        b_max_at_resolution: b_max,
        min_layers: layers,
        model: model_name,
        flops_estimate,
        s2_max,
        delta_s2: classes.report.delta_s2.map(Scalar::as_f64),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::similarity_report;

    fn two_class() -> EmbeddingSet<f64> {
        let mut s = EmbeddingSet::new(2, "t").unwrap();
        s.push("a1", "a", vec![1.0, 0.0]).unwrap();
        s.push("a2", "a", vec![1.0, 0.1]).unwrap();
        s.push("b1", "b", vec![0.0, 1.0]).unwrap();
        s.push("b2", "b", vec![0.2, 1.0]).unwrap();
        s
    }

    #[test]
    fn identity_grouping_on_two_classes_has_zero_delta() {
        let s = two_class();
        let mut log = DecisionLog::new();
        let (r, e) = evaluate_grouping(
            &mut log,
            &s,
            &ClassGrouping::identity(["a", "b"]),
            ColorMode::Color,
            64,
            &Thresholds::default(),
        )
        .unwrap();
        assert_eq!(r.delta_s2, Some(0.0));
        assert!(e.is_best_so_far);
        assert_eq!(e.seq, 0);
    }

    #[test]
    fn unknown_class_in_grouping() {
        let s = two_class();
        let g = ClassGrouping::identity(["a", "b", "zebra"]);
        let mut log = DecisionLog::new();
        let err = evaluate_grouping(&mut log, &s, &g, ColorMode::Color, 0, &Thresholds::default());
        assert!(matches!(err, Err(Error::UnknownClass(c)) if c == "zebra"));
        assert!(log.is_empty());
    }

    fn report_with_delta(d: Option<f64>, s2_max: f64) -> SimilarityReport<f64> {
        let s = two_class();
        let mut r = similarity_report(&s, &ClassGrouping::identity(["a", "b"])).unwrap();
        r.delta_s2 = d;
        r.s2_max = s2_max;
        r
    }

    fn key() -> ConfigKey {
        ConfigKey {
            grouping_name: "g".into(),
            color_mode: ColorChoice::Color,
            resolution: 1,
        }
    }

    #[test]
    fn best_is_strict_running_argmin() {
        let mut log = DecisionLog::new();
        log.append(Procedure::Classes, key(), report_with_delta(Some(0.5), 0.5), "", None);
        log.append(Procedure::Classes, key(), report_with_delta(Some(0.7), 0.5), "", None);
        assert_eq!(log.best(Procedure::Classes).unwrap().seq, 0);
        log.append(Procedure::Classes, key(), report_with_delta(Some(0.5), 0.5), "", None);
        assert_eq!(log.best(Procedure::Classes).unwrap().seq, 0, "tie keeps earlier");
        log.append(Procedure::Classes, key(), report_with_delta(Some(0.1), 0.5), "", None);
        assert_eq!(log.best(Procedure::Classes).unwrap().seq, 3);
        assert_eq!(log.entries().iter().filter(|e| e.is_best_so_far).count(), 1);
    }

    #[test]
    fn undefined_delta_ranks_last() {
        let mut log = DecisionLog::new();
        log.append(Procedure::Classes, key(), report_with_delta(None, -0.2), "", None);
        assert!(log.best(Procedure::Classes).is_some());
        log.append(Procedure::Classes, key(), report_with_delta(Some(3.0), 0.9), "", None);
        assert_eq!(log.best(Procedure::Classes).unwrap().seq, 1);
        log.append(Procedure::Classes, key(), report_with_delta(None, -0.5), "", None);
        assert_eq!(log.best(Procedure::Classes).unwrap().seq, 1);
    }

    #[test]
    fn procedures_tracked_separately_and_replay_matches() {
        let mut log = DecisionLog::new();
        log.append(Procedure::Classes, key(), report_with_delta(Some(0.4), 0.5), "", None);
        log.append(Procedure::Resolution, key(), report_with_delta(Some(0.9), 0.5), "", None);
        log.append(Procedure::Color, key(), report_with_delta(Some(0.9), 0.5), "", None);
        log.append(Procedure::Color, key(), report_with_delta(Some(0.95), 0.5), "", None);
        log.append(Procedure::Resolution, key(), report_with_delta(Some(0.2), 0.5), "", None);
        assert_eq!(log.best(Procedure::Color).unwrap().seq, 3, "latest color decision stands");
        assert_eq!(log.best(Procedure::Resolution).unwrap().seq, 4);
        assert!(log.missing().is_empty());
        let replayed = DecisionLog::replay(log.entries().to_vec());
        assert_eq!(replayed, log);
    }

    #[test]
    fn stop_threshold_note() {
        let s = two_class();
        let mut log = DecisionLog::new();
        let t = Thresholds {
            stop_delta_s2: Some(0.1),
            ..Thresholds::default()
        };
        let (_, e) = evaluate_grouping(
            &mut log,
            &s,
            &ClassGrouping::identity(["a", "b"]),
            ColorMode::Color,
            0,
            &t,
        )
        .unwrap();
        assert!(e.note.contains("may exit"));
    }

    #[test]
    fn guidance_flags_singletons_first() {
        let mut s = two_class();
        s.push("c1", "c", vec![-1.0, -1.0]).unwrap();
        let rows = grouping_guidance(&s, &ClassGrouping::identity(["a", "b", "c"])).unwrap();
        assert_eq!(rows[0].class_id, "c");
        assert!(rows[0].flag.is_some());
        assert!(rows[1].stats.as_ref().unwrap().s1 <= rows[2].stats.as_ref().unwrap().s1);
    }

    #[test]
    fn color_identical_sets_choose_gray() {
        let s = two_class();
        let g = ClassGrouping::identity(["a", "b"]);
        let d = select_color(&s, &s, &g).unwrap();
        assert_eq!(d.mode, ColorMode::Gray);
        assert_eq!(d.s2_max_color, d.s2_max_gray);
        let pc = select_color_per_class(&s, &s, &g).unwrap();
        assert!(pc.rows.iter().all(|r| r.mode == ColorMode::Color));
        assert_eq!(pc.rows.len(), 2);
    }

    #[test]
    fn color_sets_must_pair() {
        let s = two_class();
        let mut other = EmbeddingSet::new(2, "g").unwrap();
        other.push("a1", "a", vec![1.0, 0.0]).unwrap();
        other.push("a2", "a", vec![1.0, 0.1]).unwrap();
        other.push("b1", "b", vec![0.0, 1.0]).unwrap();
        other.push("zz", "b", vec![0.2, 1.0]).unwrap();
        let g = ClassGrouping::identity(["a", "b"]);
        assert!(select_color(&s, &other, &g).is_err());
        let spaced = two_class().with_space("m1");
        assert!(select_color(&s, &spaced, &g).is_err());
    }

    #[test]
    fn ladder_validation() {
        let g = ClassGrouping::identity(["a", "b"]);
        let mut sets = BTreeMap::new();
        sets.insert(64, two_class());
        let t = Thresholds::default();
        let err = resolution_ladder(&[64, 32], &sets, &g, None, &t).unwrap_err();
        assert!(err.to_string().contains("32"));
        sets.insert(20, two_class());
        assert!(resolution_ladder(&[64, 20], &sets, &g, None, &t).is_err());
        assert!(resolution_ladder(&[64], &sets, &g, None, &t).is_err());
        sets.insert(33, two_class());
        assert!(resolution_ladder(&[64, 33], &sets, &g, None, &t).is_ok());
    }

    #[test]
    fn argmin_examples() {
        assert_eq!(argmin_delta(&[(Some(0.2), 0.5), (Some(0.5), 0.5)]), Some(0));
        assert_eq!(argmin_delta(&[(Some(0.3), 0.5), (Some(0.25), 0.5), (Some(0.6), 0.5)]), Some(1));
        assert_eq!(argmin_delta(&[(Some(0.3), 0.5), (Some(0.3), 0.1)]), Some(0));
        assert_eq!(argmin_delta(&[(None, -0.1), (Some(9.0), 0.9)]), Some(1));
        assert_eq!(argmin_delta::<f64>(&[]), None);
    }

    #[test]
    fn layer_bound_examples() {
        assert_eq!(layer_bound(0.5, 500).unwrap(), (250, 7));
        assert_eq!(layer_bound(1.0, 15).unwrap(), (15, 3));
        assert!(layer_bound(0.0, 10).is_err());
        assert!(layer_bound(0.5, 0).is_err());
    }

    #[test]
    fn recommend_lists_missing() {
        let log = DecisionLog::<f64>::new();
        let err = recommend(&log, &[], None, &Thresholds::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::State(_)));
        assert!(msg.contains("classes") && msg.contains("color") && msg.contains("resolution"));
    }

    #[test]
    fn small_object_warning_threshold() {
        let mut m = BTreeMap::new();
        m.insert("tiny".to_string(), 0.05);
        m.insert("big".to_string(), 0.5);
        let w = small_object_warnings(&m, 100, &Thresholds::default());
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("tiny"));
        assert!(small_object_warnings(&m, 160, &Thresholds::default()).is_empty());
    }

    #[test]
    fn per_class_entry_records_assignment() {
        let color = two_class();
        let mut gray = EmbeddingSet::new(2, "g").unwrap();
        gray.push("a1", "a", vec![-1.0, 0.0]).unwrap();
        gray.push("a2", "a", vec![-1.0, -0.1]).unwrap();
        gray.push("b1", "b", vec![0.0, 1.0]).unwrap();
        gray.push("b2", "b", vec![0.2, 1.0]).unwrap();
        let g = ClassGrouping::identity(["a", "b"]);
        let pc = select_color_per_class(&color, &gray, &g).unwrap();
        let mut log = DecisionLog::new();
        let report = similarity_report(&color, &g).unwrap();
        let e = log_per_class_color(&mut log, &pc, report.clone(), "identity", 64);
        assert_eq!(e.procedure, Procedure::Color);
        assert_eq!(e.report, report);
        assert_eq!(e.config.color_mode, ColorChoice::PerClass(pc.modes()));
        assert_eq!(e.config.color_mode.network_mode(), ColorMode::Color);
        assert!(e.note.contains(PER_CLASS_NOTE));
    }
}
