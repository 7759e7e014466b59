//! File formats: COCO-style annotations, embedding sets, reports and the decision log.
//!
//! Embedding sets are two files side by side: a TOML manifest (`*.semb`) and a
//! payload of little-endian `f32` values, row-major, one row per record in
//! manifest order. The manifest carries a SHA-256 of the payload.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::attributes::{BBoxAnnotation, ScaleStats};
use crate::error::{Error, Result};
use crate::flops::{format_kflops, ColorMode, FlopsReport};
use crate::grouping::ClassGrouping;
use crate::scalar::Scalar;
use crate::selection::{DecisionLog, LogEntry};
use crate::similarity::{EmbeddingSet, SimilarityReport};

pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Annotations

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    /// Position of the record in the source `annotations` array.
    pub index: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationImport {
    pub annotations: Vec<BBoxAnnotation>,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<Value>,
    annotations: Vec<Value>,
    categories: Vec<Value>,
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// Parses a COCO instances file (the `images`, `annotations` and `categories`
/// arrays). Records that are malformed or violate box invariants are returned
/// as rejects, never silently dropped or repaired.
pub fn parse_annotations(text: &str, context: &str) -> Result<AnnotationImport> {
    let coco: CocoFile = serde_json::from_str(text).map_err(|e| {
        Error::format(
            context,
            format!("line {}, column {}: {e}", e.line(), e.column()),
        )
    })?;

    let mut images: HashMap<String, (f64, f64)> = HashMap::new();
    for (i, img) in coco.images.iter().enumerate() {
        let id = img.get("id").and_then(id_string);
        let w = img.get("width").and_then(Value::as_f64);
        let h = img.get("height").and_then(Value::as_f64);
        match (id, w, h) {
            (Some(id), Some(w), Some(h)) => {
                images.insert(id, (w, h));
            }
            _ => {
                return Err(Error::format(
                    context,
                    format!("images[{i}]: needs id, width and height"),
                ))
            }
        }
    }
    let mut categories: HashMap<String, String> = HashMap::new();
    for (i, cat) in coco.categories.iter().enumerate() {
        let id = cat.get("id").and_then(id_string);
        let name = cat.get("name").and_then(Value::as_str);
        match (id, name) {
            (Some(id), Some(name)) => {
                categories.insert(id, name.to_string());
            }
            _ => {
                return Err(Error::format(
                    context,
                    format!("categories[{i}]: needs id and name"),
                ))
            }
        }
    }

    let mut out = AnnotationImport {
        annotations: Vec::new(),
        rejects: Vec::new(),
    };
    for (index, rec) in coco.annotations.iter().enumerate() {
        let id = rec.get("id").and_then(id_string);
        let reject = |reason: String| Reject {
            index,
            id: id.clone(),
            reason,
        };
        let Some(instance_id) = id.clone() else {
            out.rejects.push(reject("missing id".into()));
            continue;
        };
        let Some(image_id) = rec.get("image_id").and_then(id_string) else {
            out.rejects.push(reject("missing image_id".into()));
            continue;
        };
        let Some(&(image_w, image_h)) = images.get(&image_id) else {
            out.rejects.push(reject(format!("unknown image_id {image_id}")));
            continue;
        };
        let Some(cat) = rec.get("category_id").and_then(id_string) else {
            out.rejects.push(reject("missing category_id".into()));
            continue;
        };
        let Some(class_id) = categories.get(&cat) else {
            out.rejects.push(reject(format!("unknown category_id {cat}")));
            continue;
        };
        let bbox: Option<Vec<f64>> = rec
            .get("bbox")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect());
        let Some([x, y, w, h]) = bbox.as_deref().and_then(|b| <[f64; 4]>::try_from(b).ok()) else {
            out.rejects.push(reject("bbox must be [x, y, w, h]".into()));
            continue;
        };
        let ann = BBoxAnnotation {
            instance_id,
            class_id: class_id.clone(),
            image_id,
            x,
            y,
            w,
            h,
            image_w,
            image_h,
        };
        match ann.violation() {
            Some(reason) => out.rejects.push(reject(reason)),
            None => out.annotations.push(ann),
        }
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationImport> {
    let path = path.as_ref();
    parse_annotations(&read_text(path)?, &path.display().to_string())
}

/// Writes annotations as a minimal COCO instances file.
pub fn write_annotations(path: impl AsRef<Path>, annotations: &[BBoxAnnotation]) -> Result<()> {
    let mut images: Vec<(String, f64, f64)> = Vec::new();
    let mut cats: Vec<String> = Vec::new();
    for a in annotations {
        if !images.iter().any(|(id, _, _)| id == &a.image_id) {
            images.push((a.image_id.clone(), a.image_w, a.image_h));
        }
        if !cats.contains(&a.class_id) {
            cats.push(a.class_id.clone());
        }
    }
    let json_id = |s: &str| -> Value {
        s.parse::<u64>()
            .map(Value::from)
            .unwrap_or_else(|_| Value::from(s))
    };
    let doc = serde_json::json!({
        "images": images.iter().map(|(id, w, h)| serde_json::json!({
            "id": json_id(id), "width": w, "height": h,
        })).collect::<Vec<_>>(),
        "categories": cats.iter().enumerate().map(|(i, name)| serde_json::json!({
            "id": i + 1, "name": name,
        })).collect::<Vec<_>>(),
        "annotations": annotations.iter().map(|a| serde_json::json!({
            "id": json_id(&a.instance_id),
            "image_id": json_id(&a.image_id),
            "category_id": cats.iter().position(|c| c == &a.class_id).unwrap() + 1,
            "bbox": [a.x, a.y, a.w, a.h],
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&doc).expect("json");
    write_bytes(path.as_ref(), text.as_bytes())
}

// ---------------------------------------------------------------------------
// Groupings

pub fn read_grouping(path: impl AsRef<Path>) -> Result<ClassGrouping> {
    let path = path.as_ref();
    let g: ClassGrouping =
        toml::from_str(&read_text(path)?).map_err(|e| Error::format(path.display().to_string(), e))?;
    g.check()?;
    Ok(g)
}

pub fn write_grouping(path: impl AsRef<Path>, grouping: &ClassGrouping) -> Result<()> {
    let text = toml::to_string(grouping).expect("grouping serializes");
    write_bytes(path.as_ref(), text.as_bytes())
}

// ---------------------------------------------------------------------------
// Embedding sets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub format_version: u32,
    pub dimension: usize,
    pub record_count: usize,
    pub config_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_id: Option<String>,
    pub color_mode: ColorMode,
    /// Longer image side in pixels the embeddings were extracted at.
    pub resolution: u32,
    pub grouping_name: String,
    /// Payload file, relative to the manifest.
    pub payload: String,
    /// `sha256:<hex>` of the payload bytes.
    pub checksum: String,
    pub instance_ids: Vec<String>,
    pub class_ids: Vec<String>,
}

/// Metadata written alongside the vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMeta {
    pub color_mode: ColorMode,
    pub resolution: u32,
    pub grouping_name: String,
}

impl Default for SetMeta {
    fn default() -> Self {
        Self {
            color_mode: ColorMode::Color,
            resolution: 0,
            grouping_name: crate::grouping::IDENTITY.to_string(),
        }
    }
}

fn sha256_tag(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

/// Writes `<name>.semb` and `<name>.f32`.
pub fn write_embeddings<T: Scalar>(
    path: impl AsRef<Path>,
    set: &EmbeddingSet<T>,
    meta: &SetMeta,
) -> Result<EmbeddingManifest> {
    let path = path.as_ref();
    let payload = payload_path(path);
    let mut bytes = Vec::with_capacity(set.len() * set.dimension() * 4);
    for r in set.records() {
        for v in r.vector.values() {
            bytes.extend_from_slice(&v.to_stored().to_le_bytes());
        }
    }
    let manifest = EmbeddingManifest {
        format_version: EMBEDDING_FORMAT_VERSION,
        dimension: set.dimension(),
        record_count: set.len(),
        config_tag: set.config_tag.clone(),
        space_id: set.space_id.clone(),
        color_mode: meta.color_mode,
        resolution: meta.resolution,
        grouping_name: meta.grouping_name.clone(),
        payload: payload
            .file_name()
            .expect("payload has a file name")
            .to_string_lossy()
            .into_owned(),
        checksum: sha256_tag(&bytes),
        instance_ids: set.records().iter().map(|r| r.instance_id.clone()).collect(),
        class_ids: set.records().iter().map(|r| r.class_id.clone()).collect(),
    };
    write_bytes(&payload, &bytes)?;
    let text = toml::to_string(&manifest).expect("manifest serializes");
    write_bytes(path, text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<EmbeddingManifest> {
    let path = path.as_ref();
    let m: EmbeddingManifest =
        toml::from_str(&read_text(path)?).map_err(|e| Error::format(path.display().to_string(), e))?;
    if m.format_version != EMBEDDING_FORMAT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!("unsupported format_version {}", m.format_version),
        ));
    }
    if m.instance_ids.len() != m.record_count || m.class_ids.len() != m.record_count {
        return Err(Error::format(
            path.display().to_string(),
            format!(
                "record_count {} disagrees with {} instance ids / {} class ids",
                m.record_count,
                m.instance_ids.len(),
                m.class_ids.len()
            ),
        ));
    }
    Ok(m)
}

/// Loads and validates an embedding set: checksum, payload size, dimensions,
/// unique ids and nonzero vectors.
pub fn read_embeddings<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(EmbeddingManifest, EmbeddingSet<T>)> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let payload = path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&manifest.payload);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let actual = sha256_tag(&bytes);
    if actual != manifest.checksum {
        return Err(Error::Checksum {
            path: payload,
            expected: manifest.checksum.clone(),
            actual,
        });
    }
    let expected_len = manifest.record_count * manifest.dimension * 4;
    if bytes.len() != expected_len {
        return Err(Error::DimensionMismatch {
            expected: expected_len / 4,
            found: bytes.len() / 4,
        });
    }
    let mut set = EmbeddingSet::new(manifest.dimension, manifest.config_tag.clone())?;
    set.space_id = manifest.space_id.clone();
    let row_bytes = manifest.dimension * 4;
    for (i, row) in bytes.chunks_exact(row_bytes.max(1)).enumerate() {
        let values = row
            .chunks_exact(4)
            .map(|b| T::from_stored(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        set.push(
            manifest.instance_ids[i].clone(),
            manifest.class_ids[i].clone(),
            values,
        )?;
    }
    Ok((manifest, set))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Structured,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" | "json" => Ok(ReportFormat::Structured),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::input(format!("unknown report format `{other}`"))),
        }
    }
}

/// Pretty JSON with a trailing newline; field order is the struct order.
pub fn to_structured<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn fmt_opt<T: Scalar>(v: Option<T>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.6}", x.as_f64()))
}

pub fn similarity_markdown<T: Scalar>(report: &SimilarityReport<T>) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Similarity report: {}\n", report.config_tag);
    let _ = writeln!(md, "- grouping: `{}`", report.grouping_name);
    let _ = writeln!(md, "- classes: {}", report.classes.len());
    let _ = writeln!(
        md,
        "- **Ŝ2 = {:.6}** (`{}` / `{}`)",
        report.s2_max.as_f64(),
        report.argmax_pair.0,
        report.argmax_pair.1
    );
    let _ = writeln!(md, "- mean S2 = {:.6}", report.s2_mean.as_f64());
    let _ = writeln!(md, "- **ΔS2 = {}**\n", fmt_opt(report.delta_s2));

    let _ = writeln!(md, "## Intra-class similarity\n");
    let _ = writeln!(md, "| class | n | S1 | σ² | pairs |");
    let _ = writeln!(md, "|---|---:|---:|---:|---:|");
    for (class, size) in report.classes.iter().zip(&report.class_sizes) {
        match report.per_class.iter().find(|s| &s.class_id == class) {
            Some(s) => {
                let _ = writeln!(
                    md,
                    "| {class} | {size} | {:.6} | {:.6} | {} |",
                    s.s1.as_f64(),
                    s.sigma2.as_f64(),
                    s.pair_count
                );
            }
            None => {
                let _ = writeln!(md, "| {class} | {size} | insufficient | - | 0 |");
            }
        }
    }

    let _ = writeln!(md, "\n## Inter-class similarity (S2)\n");
    let _ = write!(md, "| |");
    for c in &report.classes {
        let _ = write!(md, " {c} |");
    }
    let _ = write!(md, "\n|---|");
    for _ in &report.classes {
        let _ = write!(md, "---:|");
    }
    md.push('\n');
    for (c, row) in report.classes.iter().zip(&report.s2_matrix) {
        let _ = write!(md, "| {c} |");
        for cell in row {
            match cell {
                Some(v) => {
                    let _ = write!(md, " {:.6} |", v.as_f64());
                }
                None => md.push_str(" - |"),
            }
        }
        md.push('\n');
    }
    md
}

pub fn render_similarity<T: Scalar>(report: &SimilarityReport<T>, format: ReportFormat) -> String {
    match format {
        ReportFormat::Structured => to_structured(report),
        ReportFormat::Markdown => similarity_markdown(report),
    }
}

pub fn write_report<T: Scalar>(
    path: impl AsRef<Path>,
    report: &SimilarityReport<T>,
    format: ReportFormat,
) -> Result<()> {
    write_bytes(path.as_ref(), render_similarity(report, format).as_bytes())
}

pub fn flops_markdown(report: &FlopsReport) -> String {
    let mut md = String::new();
    let _ = writeln!(
        md,
        "# FLOPs: {} at {}x{} ({})\n",
        report.model, report.input_w, report.input_h, report.mode
    );
    let _ = writeln!(md, "| layer | out | kFLOPS |");
    let _ = writeln!(md, "|---|---|---:|");
    for l in &report.per_layer {
        let _ = writeln!(md, "| {} | {}x{} | {} |", l.name, l.out_w, l.out_h, format_kflops(l.flops));
    }
    let _ = writeln!(md, "\n- total: {} kFLOPS", format_kflops(report.total));
    if let Some(first) = report.per_layer.first() {
        let _ = writeln!(md, "- layer 1 ({}): {} kFLOPS", report.mode, format_kflops(first.flops));
    }
    let _ = writeln!(
        md,
        "- layer 1 color / gray: {} / {} kFLOPS",
        format_kflops(report.layer1_color),
        format_kflops(report.layer1_gray)
    );
    let _ = writeln!(
        md,
        "- all layers color / gray: {} / {} kFLOPS",
        format_kflops(report.total_color),
        format_kflops(report.total_gray)
    );
    let _ = writeln!(md, "- gray/color ratio: {:.1}%", report.gray_to_color_ratio * 100.0);
    md
}

pub fn scale_markdown(stats: &ScaleStats) -> String {
    let mut md = String::new();
    let res = stats
        .resolution
        .map_or_else(|| "native".to_string(), |r| format!("{r} px"));
    let _ = writeln!(md, "# Object scale (resolution: {res})\n");
    let _ = writeln!(md, "| class | n | min | median | max | b_max px |");
    let _ = writeln!(md, "|---|---:|---:|---:|---:|---:|");
    let rows = stats
        .per_class
        .iter()
        .map(|(c, s)| (c.as_str(), s))
        .chain(std::iter::once(("(all)", &stats.overall)));
    for (c, s) in rows {
        let _ = writeln!(
            md,
            "| {c} | {} | {:.4} | {:.4} | {:.4} | {} |",
            s.count, s.min_scale, s.median_scale, s.max_scale, s.b_max
        );
    }
    let _ = writeln!(md, "\n## Histogram (all classes)\n");
    let _ = writeln!(md, "| scale | count |");
    let _ = writeln!(md, "|---|---:|");
    for b in &stats.overall.histogram {
        let _ = writeln!(md, "| {:.2}-{:.2} | {} |", b.low, b.high, b.count);
    }
    md
}

// ---------------------------------------------------------------------------
// Decision log (JSON Lines)

/// Appends one entry as a JSON line. `is_best_so_far` records the flag at the
/// moment of appending; readers replay the file to get current flags.
pub fn append_log_entry<T: Scalar>(path: impl AsRef<Path>, entry: &LogEntry<T>) -> Result<()> {
    let path = path.as_ref();
    let mut f = open_log_file(path)?;
    f.lock().map_err(|e| Error::io(path, e))?;
    write_log_line(&mut f, path, entry)
}

fn open_log_file(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn write_log_line<T: Scalar>(f: &mut File, path: &Path, entry: &LogEntry<T>) -> Result<()> {
    let mut line = serde_json::to_string(entry).expect("entry serializes");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

fn parse_log<T: Scalar>(reader: impl BufRead, path: &Path) -> Result<Vec<LogEntry<T>>> {
    let mut entries = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry<T> = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{} line {}", path.display(), n + 1), e))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Reads a log file; a missing file is an empty log.
pub fn read_log<T: Scalar>(path: impl AsRef<Path>) -> Result<DecisionLog<T>> {
    let path = path.as_ref();
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(DecisionLog::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    Ok(DecisionLog::replay(parse_log(BufReader::new(f), path)?))
}

/// A decision log file opened for writing. Holds an exclusive lock on the file
/// until dropped, so only one writer appends at a time.
#[derive(Debug)]
pub struct LockedLog<T> {
    file: File,
    path: PathBuf,
    log: DecisionLog<T>,
    persisted: usize,
}

impl<T: Scalar> LockedLog<T> {
    /// Opens (creating if needed) and locks the log. Fails with a state error
    /// if another writer holds the lock.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = open_log_file(&path)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => {
                return Err(Error::State(format!(
                    "decision log {} is in use by another writer",
                    path.display()
                )))
            }
            Err(fs::TryLockError::Error(e)) => return Err(Error::io(&path, e)),
        }
        let entries = parse_log(BufReader::new(&file), &path)?;
        let log = DecisionLog::replay(entries);
        let persisted = log.len();
        Ok(Self { file, path, log, persisted })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log(&self) -> &DecisionLog<T> {
        &self.log
    }

    /// In-memory log; entries appended here are written by [`LockedLog::persist`].
    pub fn log_mut(&mut self) -> &mut DecisionLog<T> {
        &mut self.log
    }

    /// Writes every entry appended since the last call.
    pub fn persist(&mut self) -> Result<()> {
        while self.persisted < self.log.len() {
            let entry = &self.log.entries()[self.persisted];
            write_log_line(&mut self.file, &self.path, entry)?;
            self.persisted += 1;
        }
        Ok(())
    }

    /// Number of entries appended in memory but not yet written.
    pub fn pending(&self) -> usize {
        self.log.len() - self.persisted
    }

    /// Drops entries appended since the last persist.
    pub fn discard_pending(&mut self) {
        if self.pending() > 0 {
            let kept = self.log.entries()[..self.persisted].to_vec();
            self.log = DecisionLog::replay(kept);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::ClassGrouping;
    use crate::similarity::similarity_report;

    const MINIMAL: &str = r#"{
        "images": [{"id": 1, "width": 640, "height": 480, "file_name": "a.jpg"}],
        "categories": [{"id": 3, "name": "car"}],
        "annotations": [{"id": 10, "image_id": 1, "category_id": 3, "bbox": [5, 5, 100, 50]}]
    }"#;

    #[test]
    fn minimal_coco() {
        let imp = parse_annotations(MINIMAL, "t").unwrap();
        assert_eq!(imp.annotations.len(), 1);
        let a = &imp.annotations[0];
        assert_eq!((a.class_id.as_str(), a.instance_id.as_str()), ("car", "10"));
        assert_eq!((a.image_w, a.image_h, a.w), (640.0, 480.0, 100.0));
        assert!(imp.rejects.is_empty());
    }

    #[test]
    fn out_of_bounds_box_is_rejected() {
        let text = MINIMAL.replace("[5, 5, 100, 50]", "[600, 5, 100, 50]");
        let imp = parse_annotations(&text, "t").unwrap();
        assert!(imp.annotations.is_empty());
        assert_eq!(imp.rejects.len(), 1);
        assert_eq!(imp.rejects[0].id.as_deref(), Some("10"));
        assert!(imp.rejects[0].reason.contains("exceeds"));
    }

    #[test]
    fn malformed_records_are_rejected_not_fatal() {
        let text = r#"{
            "images": [{"id": 1, "width": 10, "height": 10}],
            "categories": [{"id": 1, "name": "a"}],
            "annotations": [
                {"id": 1, "image_id": 2, "category_id": 1, "bbox": [0, 0, 1, 1]},
                {"id": 2, "image_id": 1, "category_id": 9, "bbox": [0, 0, 1, 1]},
                {"id": 3, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1]},
                {"id": 4, "image_id": 1, "category_id": 1, "bbox": [0, 0, 0, 1]},
                {"id": 5, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1]}
            ]
        }"#;
        let imp = parse_annotations(text, "t").unwrap();
        assert_eq!(imp.annotations.len(), 1);
        assert_eq!(imp.rejects.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn unparseable_reports_position() {
        let err = parse_annotations("{\n \"images\": [,]\n}", "bad.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.json") && msg.contains("line 2"), "{msg}");
    }

    fn small_set() -> EmbeddingSet<f32> {
        let mut s = EmbeddingSet::new(3, "fx-64-color").unwrap().with_space("m1");
        s.push("i0", "a", vec![1.0, 0.5, -0.25]).unwrap();
        s.push("i1", "a", vec![0.1, 0.2, 0.3]).unwrap();
        s.push("i2", "b", vec![-1.5, 1e-7, 3.0e5]).unwrap();
        s
    }

    #[test]
    fn embeddings_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.semb");
        let set = small_set();
        write_embeddings(&p, &set, &SetMeta::default()).unwrap();
        let (m, back) = read_embeddings::<f32>(&p).unwrap();
        assert_eq!(m.record_count, 3);
        assert_eq!(m.space_id.as_deref(), Some("m1"));
        for (a, b) in set.records().iter().zip(back.records()) {
            assert_eq!(a.instance_id, b.instance_id);
            assert_eq!(a.class_id, b.class_id);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.vector.values()), bits(b.vector.values()));
        }
    }

    #[test]
    fn truncated_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.semb");
        write_embeddings(&p, &small_set(), &SetMeta::default()).unwrap();
        let payload = dir.path().join("fx.f32");
        let bytes = fs::read(&payload).unwrap();
        fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_embeddings::<f64>(&p), Err(Error::Checksum { .. })));
    }

    #[test]
    fn zero_vector_in_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.semb");
        write_embeddings(&p, &small_set(), &SetMeta::default()).unwrap();
        let payload = dir.path().join("z.f32");
        let mut bytes = fs::read(&payload).unwrap();
        bytes[12..24].fill(0);
        fs::write(&payload, &bytes).unwrap();
        let mut m = read_manifest(&p).unwrap();
        m.checksum = sha256_tag(&bytes);
        fs::write(&p, toml::to_string(&m).unwrap()).unwrap();
        assert!(matches!(read_embeddings::<f64>(&p), Err(Error::ZeroVector(id)) if id == "i1"));
    }

    #[test]
    fn wrong_record_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.semb");
        write_embeddings(&p, &small_set(), &SetMeta::default()).unwrap();
        let mut m = read_manifest(&p).unwrap();
        m.dimension = 2;
        fs::write(&p, toml::to_string(&m).unwrap()).unwrap();
        assert!(matches!(read_embeddings::<f64>(&p), Err(Error::DimensionMismatch { .. })));
        m.record_count = 7;
        fs::write(&p, toml::to_string(&m).unwrap()).unwrap();
        assert!(matches!(read_embeddings::<f64>(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn markdown_has_headline_and_tables() {
        let set = small_set().cast::<f64>();
        let r = similarity_report(&set, &ClassGrouping::identity(["a", "b"])).unwrap();
        let md = similarity_markdown(&r);
        assert!(md.contains("Ŝ2 ="));
        assert!(md.contains("ΔS2 ="));
        assert!(md.contains("| a | 2 |"));
        assert!(md.contains("| b | 1 | insufficient"));
        assert!(md.contains("| a | - |"));
    }

    #[test]
    fn log_file_replays() {
        use crate::flops::ColorMode;
        use crate::selection::{evaluate_grouping, Thresholds};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let set = small_set().cast::<f64>();
        let mut log = DecisionLog::new();
        for _ in 0..2 {
            let (_, e) = evaluate_grouping(
                &mut log,
                &set,
                &ClassGrouping::identity(["a", "b"]),
                ColorMode::Color,
                64,
                &Thresholds::default(),
            )
            .unwrap();
            append_log_entry(&path, &e).unwrap();
        }
        let back: DecisionLog<f64> = read_log(&path).unwrap();
        assert_eq!(back, log);
        assert!(read_log::<f64>(dir.path().join("absent.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn locked_log_is_exclusive_and_persists_new_entries() {
        use crate::flops::ColorMode;
        use crate::selection::{evaluate_grouping, Thresholds};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/log.jsonl");
        let set = small_set().cast::<f64>();
        let g = ClassGrouping::identity(["a", "b"]);
        let t = Thresholds::default();
        {
            let mut w = LockedLog::<f64>::open(&path).unwrap();
            assert!(matches!(LockedLog::<f64>::open(&path), Err(Error::State(_))));
            evaluate_grouping(w.log_mut(), &set, &g, ColorMode::Color, 64, &t).unwrap();
            evaluate_grouping(w.log_mut(), &set, &g, ColorMode::Color, 64, &t).unwrap();
            assert_eq!(w.pending(), 2);
            w.persist().unwrap();
            evaluate_grouping(w.log_mut(), &set, &g, ColorMode::Color, 64, &t).unwrap();
            w.discard_pending();
            assert_eq!(w.log().len(), 2);
        }
        let mut w = LockedLog::<f64>::open(&path).unwrap();
        assert_eq!(w.log().len(), 2);
        evaluate_grouping(w.log_mut(), &set, &g, ColorMode::Color, 64, &t).unwrap();
        w.persist().unwrap();
        drop(w);
        let back: DecisionLog<f64> = read_log(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.entries()[2].seq, 2);
    }
}
