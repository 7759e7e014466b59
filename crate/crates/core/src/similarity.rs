//! Intra- and inter-class similarity over embedding vectors.
//!
//! All statistics use cosine similarity. Vectors are normalized once when a
//! class partition is built; class means then follow from per-class vector
//! sums, so the S2 matrix costs O(n·d) instead of O(n²·d). Only the
//! intra-class variance needs an explicit pass over instance pairs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::ClassGrouping;
use crate::scalar::Scalar;

/// A latent vector with a declared dimension and nonzero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("embedding vector must have dimension >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("embedding vector has non-finite components"));
        }
        let v = Self(values);
        if v.norm() <= T::zero() {
            return Err(Error::input("embedding vector has zero norm"));
        }
        Ok(v)
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> T {
        dot(&self.0, &self.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<T> {
    pub instance_id: String,
    pub class_id: String,
    pub vector: EmbeddingVector<T>,
}

/// Embeddings of every instance in one dataset configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    dimension: usize,
    /// Resolution / color / grouping configuration the set was extracted under.
    pub config_tag: String,
    /// Embedding model the vectors came from. Cross-set comparisons require a match.
    pub space_id: Option<String>,
    records: Vec<EmbeddingRecord<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(dimension: usize, config_tag: impl Into<String>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::input("embedding dimension must be >= 1"));
        }
        Ok(Self {
            dimension,
            config_tag: config_tag.into(),
            space_id: None,
            records: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn with_space(mut self, space_id: impl Into<String>) -> Self {
        self.space_id = Some(space_id.into());
        self
    }

    pub fn push(
        &mut self,
        instance_id: impl Into<String>,
        class_id: impl Into<String>,
        values: Vec<T>,
    ) -> Result<()> {
        let instance_id = instance_id.into();
        if values.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: values.len(),
            });
        }
        if self.index.contains_key(&instance_id) {
            return Err(Error::input(format!(
                "duplicate instance id `{instance_id}`"
            )));
        }
        let vector = EmbeddingVector::new(values).map_err(|e| match e {
            Error::Input(msg) if msg.contains("zero norm") => Error::ZeroVector(instance_id.clone()),
            other => other,
        })?;
        self.index.insert(instance_id.clone(), self.records.len());
        self.records.push(EmbeddingRecord {
            instance_id,
            class_id: class_id.into(),
            vector,
        });
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord<T>] {
        &self.records
    }

    pub fn get(&self, instance_id: &str) -> Option<&EmbeddingRecord<T>> {
        self.index.get(instance_id).map(|&i| &self.records[i])
    }

    /// Class ids with their instance counts, sorted by id.
    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.class_id.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Converts element type, e.g. to run an `f32` set through `f64` statistics.
    pub fn cast<U: Scalar>(&self) -> EmbeddingSet<U> {
        let records = self
            .records
            .iter()
            .map(|r| EmbeddingRecord {
                instance_id: r.instance_id.clone(),
                class_id: r.class_id.clone(),
                vector: EmbeddingVector(
                    r.vector
                        .values()
                        .iter()
                        .map(|v| U::from(*v).expect("float cast"))
                        .collect(),
                ),
            })
            .collect();
        EmbeddingSet {
            dimension: self.dimension,
            config_tag: self.config_tag.clone(),
            space_id: self.space_id.clone(),
            records,
            index: self.index.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassSimilarityStats<T> {
    pub class_id: String,
    /// Mean pairwise cosine within the class.
    pub s1: T,
    /// Population variance of the pairwise cosines.
    pub sigma2: T,
    /// Number of unordered distinct pairs, n(n-1)/2.
    pub pair_count: u64,
}

/// Per-class statistics, the pairwise S2 matrix and its worst-case summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SimilarityReport<T> {
    pub config_tag: String,
    pub grouping_name: String,
    /// Grouped class ids in matrix order (sorted).
    pub classes: Vec<String>,
    pub class_sizes: Vec<usize>,
    pub per_class: Vec<ClassSimilarityStats<T>>,
    /// Grouped classes with fewer than two instances; no S1 is reported for them.
    pub insufficient_classes: Vec<String>,
    /// Symmetric, diagonal is `None`.
    pub s2_matrix: Vec<Vec<Option<T>>>,
    pub s2_max: T,
    pub s2_mean: T,
    /// `None` when `s2_mean <= 0`.
    pub delta_s2: Option<T>,
    pub argmax_pair: (String, String),
}

/// Worst-case summary of an S2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterClassSummary<T> {
    pub s2_max: T,
    pub s2_mean: T,
    pub delta_s2: Option<T>,
    /// Matrix indices (m < n) of the first pair attaining the maximum.
    pub argmax: (usize, usize),
}

impl<T: Scalar> InterClassSummary<T> {
    /// Summarizes the strict upper triangle of a square matrix, scanning row-major
    /// so the earliest pair wins ties.
    pub fn from_matrix(matrix: &[Vec<Option<T>>]) -> Result<Self> {
        let k = matrix.len();
        if k < 2 {
            return Err(Error::input(format!(
                "inter-class summary needs at least 2 classes, got {k}"
            )));
        }
        let mut best: Option<(T, (usize, usize))> = None;
        let mut sum = T::zero();
        let mut count = 0usize;
        for (m, row) in matrix.iter().enumerate() {
            if row.len() != k {
                return Err(Error::input("S2 matrix is not square"));
            }
            for (n, cell) in row.iter().enumerate().skip(m + 1) {
                let v = cell.ok_or_else(|| Error::input(format!("S2[{m}][{n}] is undefined")))?;
                sum = sum + v;
                count += 1;
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, (m, n)));
                }
            }
        }
        let (s2_max, argmax) = best.expect("k >= 2 gives at least one pair");
        let s2_mean = sum / <T as Scalar>::from_usize(count);
        Ok(Self {
            s2_max,
            s2_mean,
            delta_s2: delta_s2(s2_max, s2_mean),
            argmax,
        })
    }
}

/// Normalized gap between the worst pair and the average pair.
pub fn delta_s2<T: Scalar>(s2_max: T, s2_mean: T) -> Option<T> {
    (s2_mean > T::zero()).then(|| (s2_max - s2_mean) / s2_mean)
}

/// Dot product with a fixed four-lane summation order.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let (ra, rb) = (chunks_a.remainder(), chunks_b.remainder());
    for (x, y) in chunks_a.zip(chunks_b) {
        acc[0] = acc[0] + x[0] * y[0];
        acc[1] = acc[1] + x[1] * y[1];
        acc[2] = acc[2] + x[2] * y[2];
        acc[3] = acc[3] + x[3] * y[3];
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn clamp_unit<T: Scalar>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

/// Cosine similarity of two vectors: dot(a, b) / (|a| |b|).
pub fn cosine<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na <= T::zero() || nb <= T::zero() {
        return Err(Error::input("cosine of a zero-norm vector"));
    }
    Ok(clamp_unit(dot(a.values(), b.values()) / (na * nb)))
}

/// Similarity between two unit vectors. The single place the distance is defined
/// for pairwise passes.
#[inline]
fn unit_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    clamp_unit(dot(a, b))
}

/// Unit-normalized vectors of one (possibly grouped) class, stored contiguously.
#[derive(Debug, Clone)]
pub struct ClassBlock<T> {
    pub class_id: String,
    dimension: usize,
    units: Vec<T>,
    sum: Vec<T>,
    sum_sq_norms: T,
}

impl<T: Scalar> ClassBlock<T> {
    fn new(class_id: String, dimension: usize) -> Self {
        Self {
            class_id,
            dimension,
            units: Vec::new(),
            sum: vec![T::zero(); dimension],
            sum_sq_norms: T::zero(),
        }
    }

    fn push(&mut self, v: &EmbeddingVector<T>) {
        let norm = v.norm();
        let start = self.units.len();
        self.units.extend(v.values().iter().map(|x| *x / norm));
        let unit = &self.units[start..];
        for (s, u) in self.sum.iter_mut().zip(unit) {
            *s = *s + *u;
        }
        self.sum_sq_norms = self.sum_sq_norms + dot(unit, unit);
    }

    pub fn len(&self) -> usize {
        self.units.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    fn row(&self, i: usize) -> &[T] {
        &self.units[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Mean cosine over all cross pairs with another block.
    pub fn mean_similarity_with(&self, other: &ClassBlock<T>) -> T {
        let n = <T as Scalar>::from_usize(self.len()) * <T as Scalar>::from_usize(other.len());
        clamp_unit(dot(&self.sum, &other.sum) / n)
    }

    /// S1, sigma² and pair count; `None` with fewer than two members.
    pub fn intra_stats(&self) -> Option<ClassSimilarityStats<T>> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let pairs = n * (n - 1) / 2;
        let pairs_t = <T as Scalar>::from_usize(pairs);
        // Sum over i != j of z_i . z_j = |sum z|^2 - sum |z_i|^2, each unordered pair twice.
        let two = T::one() + T::one();
        let s1 = clamp_unit((dot(&self.sum, &self.sum) - self.sum_sq_norms) / (two * pairs_t));
        let mut sq = T::zero();
        for i in 0..n {
            let zi = self.row(i);
            let mut row_acc = T::zero();
            for j in (i + 1)..n {
                let d = unit_similarity(zi, self.row(j)) - s1;
                row_acc = row_acc + d * d;
            }
            sq = sq + row_acc;
        }
        Some(ClassSimilarityStats {
            class_id: self.class_id.clone(),
            s1,
            sigma2: (sq / pairs_t).max(T::zero()),
            pair_count: pairs as u64,
        })
    }
}

/// Instances of an embedding set partitioned by grouped class, in sorted class order.
#[derive(Debug, Clone)]
pub struct ClassPartition<T> {
    pub blocks: Vec<ClassBlock<T>>,
}

impl<T: Scalar> ClassPartition<T> {
    /// Partition by raw class id.
    pub fn by_class(set: &EmbeddingSet<T>) -> Self {
        let mut map: BTreeMap<&str, ClassBlock<T>> = BTreeMap::new();
        for r in set.records() {
            map.entry(r.class_id.as_str())
                .or_insert_with(|| ClassBlock::new(r.class_id.clone(), set.dimension()))
                .push(&r.vector);
        }
        Self {
            blocks: map.into_values().collect(),
        }
    }

    /// Partition after applying a grouping; dropped classes are excluded.
    pub fn grouped(set: &EmbeddingSet<T>, grouping: &ClassGrouping) -> Result<Self> {
        let counts = set.class_counts();
        grouping.check_against(counts.keys().map(String::as_str))?;
        let mut map: BTreeMap<&str, ClassBlock<T>> = BTreeMap::new();
        for r in set.records() {
            if let Some(target) = grouping.target(&r.class_id)? {
                map.entry(target)
                    .or_insert_with(|| ClassBlock::new(target.to_string(), set.dimension()))
                    .push(&r.vector);
            }
        }
        if map.len() < 2 {
            return Err(Error::input(format!(
                "grouping `{}` leaves {} nonempty class(es); at least 2 are required",
                grouping.name,
                map.len()
            )));
        }
        for g in grouping.groups() {
            if !map.contains_key(g) {
                return Err(Error::input(format!("grouped class `{g}` is empty")));
            }
        }
        Ok(Self {
            blocks: map.into_values().collect(),
        })
    }

    pub fn position(&self, class_id: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.class_id == class_id)
    }

    pub fn block(&self, class_id: &str) -> Result<&ClassBlock<T>> {
        self.position(class_id)
            .map(|i| &self.blocks[i])
            .ok_or_else(|| Error::UnknownClass(class_id.to_string()))
    }

    pub fn class_ids(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.class_id.clone()).collect()
    }

    /// Symmetric S2 matrix with an undefined diagonal.
    pub fn s2_matrix(&self) -> Vec<Vec<Option<T>>> {
        let k = self.blocks.len();
        let mut m = vec![vec![None; k]; k];
        for (a, block) in self.blocks.iter().enumerate() {
            for (b, other) in self.blocks.iter().enumerate().skip(a + 1) {
                let v = block.mean_similarity_with(other);
                m[a][b] = Some(v);
                m[b][a] = Some(v);
            }
        }
        m
    }
}

/// S1 and sigma² of one raw class.
pub fn intra_class<T: Scalar>(set: &EmbeddingSet<T>, class_id: &str) -> Result<ClassSimilarityStats<T>> {
    let mut block = ClassBlock::new(class_id.to_string(), set.dimension());
    for r in set.records().iter().filter(|r| r.class_id == class_id) {
        block.push(&r.vector);
    }
    let count = block.len();
    if count == 0 {
        return Err(Error::UnknownClass(class_id.to_string()));
    }
    block.intra_stats().ok_or(Error::InsufficientData {
        class: class_id.to_string(),
        count,
    })
}

/// Mean cosine over all cross pairs of two raw classes.
pub fn inter_class<T: Scalar>(set: &EmbeddingSet<T>, c1: &str, c2: &str) -> Result<T> {
    if c1 == c2 {
        return Err(Error::input(format!(
            "inter-class similarity needs two different classes, got `{c1}` twice"
        )));
    }
    let partition = ClassPartition::by_class(set);
    let a = partition.block(c1)?;
    let b = partition.block(c2)?;
    // Order the operands canonically so S2(c1, c2) and S2(c2, c1) are bitwise equal.
    Ok(if c1 < c2 {
        a.mean_similarity_with(b)
    } else {
        b.mean_similarity_with(a)
    })
}

/// Full similarity report for a set under a class grouping.
pub fn similarity_report<T: Scalar>(
    set: &EmbeddingSet<T>,
    grouping: &ClassGrouping,
) -> Result<SimilarityReport<T>> {
    let partition = ClassPartition::grouped(set, grouping)?;
    Ok(report_from_partition(&partition, &set.config_tag, &grouping.name))
}

pub(crate) fn report_from_partition<T: Scalar>(
    partition: &ClassPartition<T>,
    config_tag: &str,
    grouping_name: &str,
) -> SimilarityReport<T> {
    let matrix = partition.s2_matrix();
    let summary = InterClassSummary::from_matrix(&matrix).expect("partition has >= 2 classes");
    let mut per_class = Vec::new();
    let mut insufficient = Vec::new();
    for b in &partition.blocks {
        match b.intra_stats() {
            Some(s) => per_class.push(s),
            None => insufficient.push(b.class_id.clone()),
        }
    }
    let classes = partition.class_ids();
    let argmax_pair = (
        classes[summary.argmax.0].clone(),
        classes[summary.argmax.1].clone(),
    );
    SimilarityReport {
        config_tag: config_tag.to_string(),
        grouping_name: grouping_name.to_string(),
        class_sizes: partition.blocks.iter().map(ClassBlock::len).collect(),
        classes,
        per_class,
        insufficient_classes: insufficient,
        s2_matrix: matrix,
        s2_max: summary.s2_max,
        s2_mean: summary.s2_mean,
        delta_s2: summary.delta_s2,
        argmax_pair,
    }
}

/// Pearson product-moment correlation.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::input(format!(
            "pearson: sequence lengths differ ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::input("pearson: need at least 2 observations"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::input("pearson: non-finite observation"));
    }
    let n = <T as Scalar>::from_usize(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (*x - mx, *y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() {
        return Err(Error::UndefinedCorrelation("first sequence has zero variance".into()));
    }
    if syy == T::zero() {
        return Err(Error::UndefinedCorrelation("second sequence has zero variance".into()));
    }
    Ok(clamp_unit(sxy / (sxx * syy).sqrt()))
}
