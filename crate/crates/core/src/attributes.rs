//! Object scale, receptive field and the minimum-layer bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::ClassGrouping;

/// Axis-aligned box in pixel coordinates, top-left origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBoxAnnotation {
    pub instance_id: String,
    pub class_id: String,
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub image_w: f64,
    pub image_h: f64,
}

impl BBoxAnnotation {
    /// Reason the annotation is invalid, if any.
    pub fn violation(&self) -> Option<String> {
        let nums = [self.x, self.y, self.w, self.h, self.image_w, self.image_h];
        if nums.iter().any(|v| !v.is_finite()) {
            return Some("non-finite coordinate".into());
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Some(format!("non-positive box size {}x{}", self.w, self.h));
        }
        if self.image_w <= 0.0 || self.image_h <= 0.0 {
            return Some(format!(
                "non-positive image size {}x{}",
                self.image_w, self.image_h
            ));
        }
        if self.x < 0.0 || self.y < 0.0 {
            return Some(format!("negative box origin ({}, {})", self.x, self.y));
        }
        if self.x + self.w > self.image_w || self.y + self.h > self.image_h {
            return Some(format!(
                "box [{}, {}, {}, {}] exceeds image bounds {}x{}",
                self.x, self.y, self.w, self.h, self.image_w, self.image_h
            ));
        }
        None
    }

    pub fn longer_side(&self) -> f64 {
        self.w.max(self.h)
    }

    pub fn longer_image_side(&self) -> f64 {
        self.image_w.max(self.image_h)
    }
}

/// Longer box side as a fraction of the longer image side.
pub fn object_scale(a: &BBoxAnnotation) -> f64 {
    a.longer_side() / a.longer_image_side()
}

/// Side length in pixels of the receptive field after `layers` stacked 3x3
/// stride-1 convolutions: 2^(L+1) - 1.
pub fn receptive_field(layers: u32) -> Result<u64> {
    if layers < 1 {
        return Err(Error::input("receptive_field: layer count must be >= 1"));
    }
    if layers > 62 {
        return Err(Error::input(format!(
            "receptive_field: {layers} layers overflows a 64-bit pixel count"
        )));
    }
    Ok((1u64 << (layers + 1)) - 1)
}

/// Fewest 3x3 layers whose receptive field covers an object of `b_max` pixels:
/// ceil(log2(b_max + 1)) - 1, clamped to at least one layer.
pub fn min_layers(b_max: u64) -> Result<u32> {
    if b_max < 1 {
        return Err(Error::input("min_layers: b_max must be >= 1 pixel"));
    }
    let x = b_max
        .checked_add(1)
        .ok_or_else(|| Error::input("min_layers: b_max too large"))?;
    // ceil(log2 x) for x >= 2 is the bit length of x - 1.
    let ceil_log2 = u64::BITS - (x - 1).leading_zeros();
    Ok((ceil_log2 - 1).max(1))
}

/// Rounds a pixel length up, ignoring float noise below 1e-9 px.
pub fn ceil_pixels(len: f64) -> u64 {
    let snapped = (len - 1e-9).ceil();
    snapped.max(1.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Scale distribution of one class (or of all classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub count: usize,
    pub min_scale: f64,
    pub max_scale: f64,
    pub median_scale: f64,
    /// Largest longer box side in pixels at the effective resolution.
    pub b_max: u64,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    /// Longer-side resolution the boxes were rescaled to, if any.
    pub resolution: Option<u32>,
    pub overall: ScaleSummary,
    pub per_class: BTreeMap<String, ScaleSummary>,
}

pub const DEFAULT_BINS: usize = 20;

/// Bins over [0, 1]: left-closed, right-open, the last bin closed.
pub fn scale_histogram(scales: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::input("histogram needs at least one bin"));
    }
    let width = 1.0 / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: i as f64 * width,
            high: if i + 1 == bins { 1.0 } else { (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &s in scales {
        let mut i = ((s * bins as f64).floor() as usize).min(bins - 1);
        // Guard against the product rounding across a bin edge.
        if s < out[i].low && i > 0 {
            i -= 1;
        } else if s >= out[i].high && i + 1 < bins {
            i += 1;
        }
        out[i].count += 1;
    }
    Ok(out)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Box size in pixels, either native or rescaled so the longer image side is `resolution`.
pub fn box_pixels(a: &BBoxAnnotation, resolution: Option<u32>) -> u64 {
    match resolution {
        Some(r) => ceil_pixels(object_scale(a) * r as f64),
        None => ceil_pixels(a.longer_side()),
    }
}

fn summarize(items: &[&BBoxAnnotation], resolution: Option<u32>, bins: usize) -> Result<ScaleSummary> {
    let mut scales: Vec<f64> = items.iter().map(|a| object_scale(a)).collect();
    scales.sort_by(f64::total_cmp);
    let b_max = items
        .iter()
        .map(|a| box_pixels(a, resolution))
        .max()
        .expect("nonempty");
    Ok(ScaleSummary {
        count: scales.len(),
        min_scale: scales[0],
        max_scale: scales[scales.len() - 1],
        median_scale: median(&scales),
        b_max,
        histogram: scale_histogram(&scales, bins)?,
    })
}

/// Per-class and overall scale statistics.
///
/// With a grouping, classes are relabelled and dropped classes excluded. With a
/// `resolution`, every image is uniformly resized so its longer side equals it.
pub fn scale_stats(
    annotations: &[BBoxAnnotation],
    grouping: Option<&ClassGrouping>,
    resolution: Option<u32>,
    bins: usize,
) -> Result<ScaleStats> {
    if annotations.is_empty() {
        return Err(Error::input("scale_stats: no annotations"));
    }
    if resolution == Some(0) {
        return Err(Error::input("scale_stats: resolution must be positive"));
    }
    for a in annotations {
        if let Some(why) = a.violation() {
            return Err(Error::input(format!("annotation `{}`: {why}", a.instance_id)));
        }
    }
    let mut by_class: BTreeMap<String, Vec<&BBoxAnnotation>> = BTreeMap::new();
    let mut kept = Vec::new();
    for a in annotations {
        let label = match grouping {
            Some(g) => match g.target(&a.class_id)? {
                Some(t) => t.to_string(),
                None => continue,
            },
            None => a.class_id.clone(),
        };
        by_class.entry(label).or_default().push(a);
        kept.push(a);
    }
    if kept.is_empty() {
        return Err(Error::input("scale_stats: grouping drops every annotation"));
    }
    let per_class = by_class
        .iter()
        .map(|(c, items)| Ok((c.clone(), summarize(items, resolution, bins)?)))
        .collect::<Result<_>>()?;
    Ok(ScaleStats {
        resolution,
        overall: summarize(&kept, resolution, bins)?,
        per_class,
    })
}
