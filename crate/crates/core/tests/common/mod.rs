//! Naive reference computations, written directly from the definitions with
//! no normalization caching, no vector-sum shortcuts and no shared code with
//! the library's similarity path.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dsattr_core::grouping::ClassGrouping;
use dsattr_core::similarity::EmbeddingSet;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// (mean, population variance, pair count) over unordered distinct pairs.
pub fn intra(vs: &[Vec<f64>]) -> (f64, f64, usize) {
    let mut sims = Vec::new();
    for i in 0..vs.len() {
        for j in 0..vs.len() {
            if i < j {
                sims.push(cos(&vs[i], &vs[j]));
            }
        }
    }
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, var, sims.len())
}

pub fn inter(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += cos(x, y);
        }
    }
    total / (a.len() * b.len()) as f64
}

pub struct OracleReport {
    pub classes: Vec<String>,
    pub intra: BTreeMap<String, (f64, f64, usize)>,
    pub matrix: Vec<Vec<f64>>,
    pub s2_max: f64,
    pub s2_mean: f64,
    pub delta_s2: Option<f64>,
}

pub fn grouped_vectors(set: &EmbeddingSet<f64>, grouping: &ClassGrouping) -> BTreeMap<String, Vec<Vec<f64>>> {
    let mut by: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for r in set.records() {
        if let Some(g) = grouping.target(&r.class_id).unwrap() {
            by.entry(g.to_string()).or_default().push(r.vector.values().to_vec());
        }
    }
    by
}

pub fn report(set: &EmbeddingSet<f64>, grouping: &ClassGrouping) -> OracleReport {
    let by = grouped_vectors(set, grouping);
    let classes: Vec<String> = by.keys().cloned().collect();
    let k = classes.len();
    let mut matrix = vec![vec![f64::NAN; k]; k];
    let mut pairs = Vec::new();
    for m in 0..k {
        for n in 0..k {
            if m != n {
                matrix[m][n] = inter(&by[&classes[m]], &by[&classes[n]]);
                if m < n {
                    pairs.push(matrix[m][n]);
                }
            }
        }
    }
    let s2_max = pairs.iter().cloned().fold(f64::MIN, f64::max);
    let s2_mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let delta_s2 = if s2_mean > 0.0 { Some((s2_max - s2_mean) / s2_mean) } else { None };
    let intra = by
        .iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(c, v)| (c.clone(), intra(v)))
        .collect();
    OracleReport { classes, intra, matrix, s2_max, s2_mean, delta_s2 }
}

/// Largest absolute difference between the library report and the oracle, or
/// an error describing a structural mismatch.
pub fn max_deviation(
    got: &dsattr_core::similarity::SimilarityReport<f64>,
    want: &OracleReport,
) -> Result<f64, String> {
    if got.classes != want.classes {
        return Err(format!("class order {:?} vs {:?}", got.classes, want.classes));
    }
    let mut dev: f64 = 0.0;
    for s in &got.per_class {
        let (m, v, n) = want.intra[&s.class_id];
        if s.pair_count as usize != n {
            return Err(format!("pair count for {}: {} vs {n}", s.class_id, s.pair_count));
        }
        dev = dev.max((s.s1 - m).abs()).max((s.sigma2 - v).abs());
    }
    if got.per_class.len() != want.intra.len() {
        return Err("per-class coverage differs".into());
    }
    for (m, row) in got.s2_matrix.iter().enumerate() {
        for (n, cell) in row.iter().enumerate() {
            match (m == n, cell) {
                (true, None) => {}
                (false, Some(v)) => dev = dev.max((v - want.matrix[m][n]).abs()),
                _ => return Err(format!("matrix cell [{m}][{n}] definedness wrong")),
            }
        }
    }
    dev = dev.max((got.s2_max - want.s2_max).abs());
    dev = dev.max((got.s2_mean - want.s2_mean).abs());
    match (got.delta_s2, want.delta_s2) {
        (Some(a), Some(b)) => dev = dev.max((a - b).abs()),
        (None, None) => {}
        other => return Err(format!("delta_s2 definedness differs: {other:?}")),
    }
    Ok(dev)
}
