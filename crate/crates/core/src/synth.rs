//! Seeded synthetic embedding sets and annotations.
//!
//! Used for fixtures and tests where real extractor output is not available.
//! Every generator is deterministic in its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attributes::BBoxAnnotation;
use crate::flops::ColorMode;
use crate::grouping::ClassGrouping;
use crate::io::SetMeta;
use crate::similarity::EmbeddingSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Isotropic Gaussian clusters around centroids `offset * 1/sqrt(d) + separation * e_k`.
///
/// All centroids share a common offset, so cosine similarity between classes
/// falls as `separation` grows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub offset: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 50,
            dim: 16,
            separation: 1.0,
            offset: 1.0,
            noise: 0.25,
            seed: 0,
        }
    }
}

pub fn class_name(k: usize) -> String {
    format!("c{k:02}")
}

pub fn gaussian_clusters(spec: &ClusterSpec) -> EmbeddingSet<f64> {
    assert!(spec.classes <= spec.dim, "one axis per class");
    let mut rng = rng(spec.seed);
    let normal = Normal::new(0.0, spec.noise).expect("noise >= 0");
    let base = spec.offset / (spec.dim as f64).sqrt();
    let mut set = EmbeddingSet::new(spec.dim, format!("clusters-s{}", spec.separation))
        .expect("dim >= 1");
    for k in 0..spec.classes {
        for i in 0..spec.per_class {
            let v: Vec<f64> = (0..spec.dim)
                .map(|j| {
                    let centre = base + if j == k { spec.separation } else { 0.0 };
                    centre + normal.sample(&mut rng)
                })
                .collect();
            set.push(format!("{}-{i:04}", class_name(k)), class_name(k), v)
                .expect("generated vector is valid");
        }
    }
    set
}

/// Unstructured random set for oracle comparisons: `k` classes with random
/// sizes in `2..=max_per_class`, components uniform in [-1, 1].
pub fn random_set(seed: u64, k: usize, max_per_class: usize, dim: usize) -> EmbeddingSet<f64> {
    let mut rng = rng(seed);
    let mut set = EmbeddingSet::new(dim, format!("random-{seed}")).expect("dim >= 1");
    for c in 0..k {
        let n = rng.random_range(2..=max_per_class.max(2));
        for i in 0..n {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if v.iter().all(|x| *x == 0.0) {
                v[0] = 1.0;
            }
            set.push(format!("r{c}-{i}"), class_name(c), v).expect("valid");
        }
    }
    set
}

/// One embedding set of the pipeline fixture with the metadata its manifest carries.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub file_stem: String,
    pub meta: SetMeta,
    pub set: EmbeddingSet<f32>,
}

#[derive(Debug, Clone)]
pub struct PipelineFixture {
    pub sets: Vec<FixtureSet>,
    pub annotations: Vec<BBoxAnnotation>,
    pub groupings: Vec<ClassGrouping>,
}

pub const FIXTURE_CLASSES: [&str; 5] = ["bike", "car", "person", "rider", "truck"];
pub const FIXTURE_SPACE: &str = "synthetic-v1";
pub const FIXTURE_LADDER: [u32; 3] = [64, 32, 16];
const FIXTURE_DIM: usize = 16;
const PER_CLASS: usize = 24;

/// Latent layout of the fixture embeddings:
/// - axes 0..5: one "shape" axis per class; bike and rider share most of theirs,
///   car and truck partly overlap
/// - axis 5: a "hue" offset common to every class, present only in color
/// - axes 6, 7: "texture" separating person from rider, which fades once the
///   resolution drops below 32 px
/// - remaining axes: pixel noise, which shrinks as images are downsampled
fn fixture_vector(
    class: usize,
    mode: ColorMode,
    resolution: u32,
    shape_noise: &[f64],
    pixel_noise: &[f64],
) -> Vec<f64> {
    let mut v = vec![0.0; FIXTURE_DIM];
    let shape: [(usize, f64); 2] = match FIXTURE_CLASSES[class] {
        "bike" => [(0, 1.0), (3, 0.8)],
        "car" => [(1, 1.0), (4, 0.5)],
        "person" => [(2, 1.0), (3, 0.3)],
        "rider" => [(3, 1.0), (0, 0.7)],
        "truck" => [(4, 1.0), (1, 0.6)],
        _ => unreachable!(),
    };
    for (axis, w) in shape {
        v[axis] += w;
    }
    if mode == ColorMode::Color {
        v[5] = 0.9;
    }
    let texture = (resolution as f64 / 32.0).min(1.0).powi(2);
    match FIXTURE_CLASSES[class] {
        "person" => v[6] += 0.9 * texture,
        "rider" => v[7] += 0.9 * texture,
        _ => {}
    }
    let pixel_scale = (resolution as f64 / 64.0).sqrt();
    for (j, x) in v.iter_mut().enumerate() {
        *x += shape_noise[j] + pixel_scale * pixel_noise[j];
    }
    v
}

/// Five-class fixture driving every selection procedure end to end: color and
/// gray sets down the 64/32/16 ladder, COCO-style boxes, and three candidate
/// groupings.
pub fn pipeline_fixture(seed: u64) -> PipelineFixture {
    let mut r = rng(seed);
    let shape_n = Normal::new(0.0, 0.18).unwrap();
    let pixel_n = Normal::new(0.0, 0.12).unwrap();

    struct Instance {
        id: String,
        class: usize,
        shape_noise: Vec<f64>,
        pixel_noise: Vec<f64>,
    }
    let mut instances = Vec::new();
    for (c, name) in FIXTURE_CLASSES.iter().enumerate() {
        for i in 0..PER_CLASS {
            instances.push(Instance {
                id: format!("{name}-{i:03}"),
                class: c,
                shape_noise: (0..FIXTURE_DIM).map(|_| shape_n.sample(&mut r)).collect(),
                pixel_noise: (0..FIXTURE_DIM).map(|_| pixel_n.sample(&mut r)).collect(),
            });
        }
    }

    let configs = [ColorMode::Color, ColorMode::Gray]
        .into_iter()
        .flat_map(|mode| FIXTURE_LADDER.iter().map(move |&res| (mode, res)));
    let sets = configs
        .into_iter()
        .map(|(mode, res)| {
            let tag = format!("fixture-{mode}-{res}");
            let mut set = EmbeddingSet::<f32>::new(FIXTURE_DIM, tag.clone())
                .unwrap()
                .with_space(FIXTURE_SPACE);
            for inst in &instances {
                let v = fixture_vector(inst.class, mode, res, &inst.shape_noise, &inst.pixel_noise);
                set.push(
                    inst.id.clone(),
                    FIXTURE_CLASSES[inst.class],
                    v.into_iter().map(|x| x as f32).collect(),
                )
                .expect("fixture vector is valid");
            }
            FixtureSet {
                file_stem: tag,
                meta: SetMeta {
                    color_mode: mode,
                    resolution: res,
                    grouping_name: crate::grouping::IDENTITY.into(),
                },
                set,
            }
        })
        .collect();

    // Boxes in 640x480 images; class sets the typical object size.
    let typical: [(f64, f64); 5] = [(0.20, 0.08), (0.45, 0.15), (0.30, 0.10), (0.28, 0.08), (0.60, 0.15)];
    let mut annotations = Vec::new();
    for (n, inst) in instances.iter().enumerate() {
        let (mean, spread) = typical[inst.class];
        let scale: f64 = (mean + spread * r.random_range(-1.0..1.0)).clamp(0.02, 1.0);
        let long = (scale * 640.0).round().max(2.0);
        let short = (long * r.random_range(0.4..1.0)).round().clamp(1.0, 480.0);
        let (w, h) = if n % 2 == 0 { (long, short) } else { (short.min(640.0), long.min(480.0)) };
        let x = ((640.0 - w) * r.random_range(0.0..1.0)).floor();
        let y = ((480.0 - h) * r.random_range(0.0..1.0)).floor();
        annotations.push(BBoxAnnotation {
            instance_id: (n + 1).to_string(),
            class_id: FIXTURE_CLASSES[inst.class].to_string(),
            image_id: (n / 3 + 1).to_string(),
            x,
            y,
            w,
            h,
            image_w: 640.0,
            image_h: 480.0,
        });
    }

    let identity = ClassGrouping::identity(FIXTURE_CLASSES);
    let riders = ClassGrouping::new("riders-merged")
        .merge("bike", "rider")
        .merge("rider", "rider")
        .merge("car", "car")
        .merge("person", "person")
        .merge("truck", "truck");
    let vehicles = ClassGrouping::new("riders-vehicles-merged")
        .merge("bike", "rider")
        .merge("rider", "rider")
        .merge("car", "vehicle")
        .merge("truck", "vehicle")
        .merge("person", "person");

    PipelineFixture {
        sets,
        annotations,
        groupings: vec![identity, riders, vehicles],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = gaussian_clusters(&ClusterSpec { seed: 7, ..Default::default() });
        let b = gaussian_clusters(&ClusterSpec { seed: 7, ..Default::default() });
        let c = gaussian_clusters(&ClusterSpec { seed: 8, ..Default::default() });
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 200);
    }

    #[test]
    fn random_set_shape() {
        let s = random_set(3, 5, 10, 7);
        assert_eq!(s.dimension(), 7);
        let counts = s.class_counts();
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&n| (2..=10).contains(&n)));
    }

    #[test]
    fn fixture_annotations_are_valid() {
        let f = pipeline_fixture(1);
        assert_eq!(f.sets.len(), 6);
        assert!(f.annotations.iter().all(|a| a.violation().is_none()));
        for g in &f.groupings {
            g.check_against(FIXTURE_CLASSES).unwrap();
        }
    }
}
