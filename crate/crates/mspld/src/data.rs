//! Dataset representation, synthetic scene generation, initial-label
//! sampling, proposal generation, and persistence.
//!
//! Scenes are coarse feature grids rather than pixels: each cell holds a
//! D-dimensional vector, background cells are noise, and cells covered by an
//! object carry that class's signature plus noise. Detectors pool cell
//! features inside a box, which keeps a full experiment in seconds while
//! leaving the selection mechanism untouched.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::rng::{purpose, stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("num_classes must be in 2..=8, got {0}")]
    BadClassCount(usize),
    #[error("image {width}x{height} too small to place one object of size >= {min_size}")]
    ImageTooSmall { width: u32, height: u32, min_size: f64 },
    #[error("invalid scene spec: {0}")]
    BadSpec(String),
    #[error("class {class} appears in only {available} candidate images, need {needed}")]
    InsufficientExemplars { class: usize, available: usize, needed: usize },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("dataset invalid: {0}")]
    Invalid(String),
}

/// Ground-truth object: a box plus its class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: usize,
}

/// Cell features for one image: `rows x cols` cells, `depth` channels each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureGrid {
    pub cells: Vec<Vec<Vec<f64>>>,
}

impl FeatureGrid {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells.first().map_or(0, |r| r.len())
    }

    pub fn depth(&self) -> usize {
        self.cells.first().and_then(|r| r.first()).map_or(0, |c| c.len())
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        &self.cells[row][col]
    }
}

/// One synthetic scene with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<Annotation>,
    pub feature_grid: FeatureGrid,
    pub is_distractor: bool,
}

impl ImageRecord {
    /// Mean of cell features whose centers lie inside the box; falls back to
    /// the cell containing the box center for boxes thinner than a cell.
    pub fn pooled_feature(&self, bbox: &BBox) -> Vec<f64> {
        let grid = &self.feature_grid;
        let (rows, cols, depth) = (grid.rows(), grid.cols(), grid.depth());
        let cell_h = self.height as f64 / rows as f64;
        let cell_w = self.width as f64 / cols as f64;
        let mut acc = vec![0.0; depth];
        let mut count = 0usize;
        // restrict the scan to the cell range the box can touch
        let r0 = ((bbox.up / cell_h).floor().max(0.0) as usize).min(rows.saturating_sub(1));
        let r1 = ((bbox.bottom / cell_h).ceil() as usize).min(rows);
        let c0 = ((bbox.left / cell_w).floor().max(0.0) as usize).min(cols.saturating_sub(1));
        let c1 = ((bbox.right / cell_w).ceil() as usize).min(cols);
        for r in r0..r1 {
            for c in c0..c1 {
                let cy = (r as f64 + 0.5) * cell_h;
                let cx = (c as f64 + 0.5) * cell_w;
                if bbox.contains_point(cy, cx) {
                    for (a, v) in acc.iter_mut().zip(grid.cell(r, c)) {
                        *a += v;
                    }
                    count += 1;
                }
            }
        }
        if count == 0 {
            let (cy, cx) = bbox.center();
            let r = ((cy / cell_h) as usize).min(rows.saturating_sub(1));
            let c = ((cx / cell_w) as usize).min(cols.saturating_sub(1));
            return grid.cell(r, c).to_vec();
        }
        for a in &mut acc {
            *a /= count as f64;
        }
        acc
    }

    pub fn gt_classes(&self) -> BTreeSet<usize> {
        self.objects.iter().map(|a| a.class_id).collect()
    }
}

/// The full dataset: images plus the labeled / unlabeled / test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub num_classes: usize,
    pub images: Vec<ImageRecord>,
    pub labeled_ids: BTreeSet<u64>,
    pub unlabeled_ids: BTreeSet<u64>,
    pub test_ids: BTreeSet<u64>,
}

impl DatasetSplit {
    pub fn image(&self, id: u64) -> &ImageRecord {
        self.images
            .iter()
            .find(|im| im.id == id)
            .unwrap_or_else(|| panic!("unknown image id {id}"))
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !self.labeled_ids.is_disjoint(&self.unlabeled_ids)
            || !self.labeled_ids.is_disjoint(&self.test_ids)
            || !self.unlabeled_ids.is_disjoint(&self.test_ids)
        {
            return Err(DataError::Invalid("id sets overlap".into()));
        }
        let known: BTreeSet<u64> = self.images.iter().map(|im| im.id).collect();
        if known.len() != self.images.len() {
            return Err(DataError::Invalid("duplicate image ids".into()));
        }
        for set in [&self.labeled_ids, &self.unlabeled_ids, &self.test_ids] {
            if let Some(id) = set.iter().find(|id| !known.contains(id)) {
                return Err(DataError::Invalid(format!("split references unknown image {id}")));
            }
        }
        for im in &self.images {
            if im.is_distractor && !im.objects.is_empty() {
                return Err(DataError::Invalid(format!("distractor {} has objects", im.id)));
            }
            for obj in &im.objects {
                if obj.class_id >= self.num_classes {
                    return Err(DataError::Invalid(format!(
                        "image {}: class {} out of range",
                        im.id, obj.class_id
                    )));
                }
                let b = &obj.bbox;
                if !b.is_valid()
                    || b.up < 0.0
                    || b.left < 0.0
                    || b.bottom > im.height as f64
                    || b.right > im.width as f64
                {
                    return Err(DataError::Invalid(format!("image {}: box out of bounds", im.id)));
                }
            }
        }
        Ok(())
    }
}

/// Class-agnostic candidate boxes for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub image_id: u64,
    pub proposals: Vec<BBox>,
}

/// Parameters for the synthetic scene generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub num_images: usize,
    #[serde(default)]
    pub num_test_images: usize,
    pub num_classes: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_grid")]
    pub grid_rows: usize,
    #[serde(default = "default_grid")]
    pub grid_cols: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_min_objects")]
    pub min_objects: usize,
    #[serde(default = "default_max_objects")]
    pub max_objects: usize,
    #[serde(default = "default_min_object_size")]
    pub min_object_size: f64,
    #[serde(default = "default_max_object_size")]
    pub max_object_size: f64,
    /// Maximum IoU allowed between two objects in one scene.
    #[serde(default = "default_max_overlap")]
    pub max_overlap: f64,
    #[serde(default = "default_amplitude")]
    pub signal_amplitude: f64,
    /// Per-cell noise; mostly averages out under box pooling.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Per-object signature perturbation, drawn once per object and applied
    /// to all its cells, so it survives pooling and makes some objects
    /// genuinely ambiguous.
    #[serde(default = "default_object_noise")]
    pub object_noise_sigma: f64,
    /// Intra-class variety: every object sits at `signature ± spread *
    /// mode_pattern`, one of two sub-modes per class. A handful of exemplars
    /// usually covers one mode; the other only enters through more data.
    #[serde(default = "default_mode_spread")]
    pub class_mode_spread: f64,
    /// Fraction of the training images that are distractors (no target
    /// objects, out-of-vocabulary signature).
    #[serde(default)]
    pub distractor_fraction: f64,
    /// Explicit per-class signatures; defaults to cosine-basis rows spread
    /// over all channels so any channel subset stays discriminative.
    #[serde(default)]
    pub class_signatures: Option<Vec<Vec<f64>>>,
}

fn cosine_row(dim: usize, harmonic: usize, amplitude: f64) -> Vec<f64> {
    (0..dim)
        .map(|ch| {
            amplitude
                * (std::f64::consts::PI * harmonic as f64 * (2 * ch + 1) as f64
                    / (2.0 * dim as f64))
                    .cos()
        })
        .collect()
}

fn default_grid() -> usize {
    16
}
fn default_feature_dim() -> usize {
    8
}
fn default_min_objects() -> usize {
    1
}
fn default_max_objects() -> usize {
    3
}
fn default_min_object_size() -> f64 {
    24.0
}
fn default_max_object_size() -> f64 {
    56.0
}
fn default_max_overlap() -> f64 {
    0.3
}
fn default_amplitude() -> f64 {
    2.0
}
fn default_noise() -> f64 {
    0.6
}
fn default_object_noise() -> f64 {
    0.45
}
fn default_mode_spread() -> f64 {
    1.3
}

impl SceneSpec {
    /// Cosine-basis signature rows: class `c` gets
    /// `A * cos(pi * (c+1) * (2d+1) / (2D))` over channels `d`. Row `C` (one
    /// past the last class) is reserved for distractor objects.
    pub fn signature(&self, class_id: usize) -> Vec<f64> {
        if let Some(sigs) = &self.class_signatures {
            if class_id < sigs.len() {
                return sigs[class_id].clone();
            }
        }
        cosine_row(self.feature_dim, class_id + 1, self.signal_amplitude)
    }

    /// The sub-mode offset pattern for a class; objects sit at
    /// `signature + mode_sign * pattern`. Uses cosine rows past the
    /// signature range so modes split inside a class without colliding with
    /// another class's signature.
    pub fn mode_pattern(&self, class_id: usize) -> Vec<f64> {
        cosine_row(self.feature_dim, class_id + self.num_classes + 2, self.class_mode_spread)
    }

    fn validate(&self) -> Result<(), DataError> {
        if !(2..=8).contains(&self.num_classes) {
            return Err(DataError::BadClassCount(self.num_classes));
        }
        if self.min_object_size > self.width.min(self.height) as f64 {
            return Err(DataError::ImageTooSmall {
                width: self.width,
                height: self.height,
                min_size: self.min_object_size,
            });
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(DataError::BadSpec(format!(
                "objects-per-image range {}..={} invalid",
                self.min_objects, self.max_objects
            )));
        }
        if self.min_object_size <= 0.0 || self.min_object_size > self.max_object_size {
            return Err(DataError::BadSpec("object size range invalid".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_fraction) {
            return Err(DataError::BadSpec("distractor_fraction outside [0,1]".into()));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 || self.feature_dim == 0 {
            return Err(DataError::BadSpec("grid dimensions must be positive".into()));
        }
        if let Some(sigs) = &self.class_signatures {
            if sigs.len() < self.num_classes + 1 {
                return Err(DataError::BadSpec(format!(
                    "need {} signatures (classes + distractor), got {}",
                    self.num_classes + 1,
                    sigs.len()
                )));
            }
            if sigs.iter().any(|s| s.len() != self.feature_dim) {
                return Err(DataError::BadSpec("signature length != feature_dim".into()));
            }
        }
        Ok(())
    }
}

/// Parameters for synthetic proposal generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalConfig {
    /// Proposals per image (reference detectors see ~2000; desk default 100).
    pub per_image: usize,
    /// Coordinate jitter as a fraction of the source box's height/width.
    pub jitter_sigma: f64,
    /// Fraction of proposals drawn as uniform random rectangles.
    pub random_fraction: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { per_image: 100, jitter_sigma: 0.15, random_fraction: 0.5 }
    }
}

/// Generate a full synthetic dataset. Deterministic for a fixed seed: each
/// image is drawn from its own derived stream, so regeneration is stable
/// under reordering.
pub fn generate_synthetic_dataset(spec: &SceneSpec, seed: u64) -> Result<DatasetSplit, DataError> {
    spec.validate()?;

    let n_train = spec.num_images;
    let n_total = n_train + spec.num_test_images;
    let n_distractors = (n_train as f64 * spec.distractor_fraction).round() as usize;

    // pick which train images are distractors
    let mut train_idx: Vec<usize> = (0..n_train).collect();
    let mut rng = stream(seed, &[purpose::DISTRACTORS]);
    for i in (1..train_idx.len()).rev() {
        let j = rng.random_range(0..=i);
        train_idx.swap(i, j);
    }
    let distractor_ids: BTreeSet<u64> =
        train_idx.iter().take(n_distractors).map(|&i| i as u64).collect();

    let mut images = Vec::with_capacity(n_total);
    for id in 0..n_total as u64 {
        let is_distractor = distractor_ids.contains(&id);
        images.push(generate_image(spec, seed, id, is_distractor)?);
    }

    let unlabeled_ids: BTreeSet<u64> = (0..n_train as u64).collect();
    let test_ids: BTreeSet<u64> = (n_train as u64..n_total as u64).collect();

    let split = DatasetSplit {
        num_classes: spec.num_classes,
        images,
        labeled_ids: BTreeSet::new(),
        unlabeled_ids,
        test_ids,
    };
    split.validate()?;
    Ok(split)
}

fn generate_image(
    spec: &SceneSpec,
    seed: u64,
    id: u64,
    is_distractor: bool,
) -> Result<ImageRecord, DataError> {
    let mut rng = stream(seed, &[purpose::IMAGE, id]);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");

    let n_objects = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut placed: Vec<BBox> = Vec::new();
    for _ in 0..n_objects {
        if let Some(b) = place_box(spec, &mut rng, &placed) {
            placed.push(b);
        }
        // crowded scenes may not fit every object; keep what fits
    }
    if placed.is_empty() {
        return Err(DataError::ImageTooSmall {
            width: spec.width,
            height: spec.height,
            min_size: spec.min_object_size,
        });
    }

    let classes: Vec<usize> = placed
        .iter()
        .map(|_| {
            if is_distractor {
                spec.num_classes // out-of-vocabulary signature
            } else {
                rng.random_range(0..spec.num_classes)
            }
        })
        .collect();

    // paint: background noise, then objects in placement order (overwrite)
    let cell_h = spec.height as f64 / spec.grid_rows as f64;
    let cell_w = spec.width as f64 / spec.grid_cols as f64;
    let mut cells = vec![vec![vec![0.0; spec.feature_dim]; spec.grid_cols]; spec.grid_rows];
    for row in cells.iter_mut() {
        for cell in row.iter_mut() {
            for v in cell.iter_mut() {
                *v = noise.sample(&mut rng);
            }
        }
    }
    let object_noise = Normal::new(0.0, spec.object_noise_sigma.max(1e-12)).expect("valid sigma");
    for (bbox, &class_id) in placed.iter().zip(&classes) {
        let mode_sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        let mode = spec.mode_pattern(class_id);
        let sig: Vec<f64> = spec
            .signature(class_id)
            .into_iter()
            .zip(&mode)
            .map(|(s, m)| s + mode_sign * m + object_noise.sample(&mut rng))
            .collect();
        for (r, row) in cells.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                let cy = (r as f64 + 0.5) * cell_h;
                let cx = (c as f64 + 0.5) * cell_w;
                if bbox.contains_point(cy, cx) {
                    for (v, s) in cell.iter_mut().zip(&sig) {
                        *v = s + noise.sample(&mut rng);
                    }
                }
            }
        }
    }

    let objects = if is_distractor {
        Vec::new() // noise images carry no target annotations
    } else {
        placed
            .iter()
            .zip(&classes)
            .map(|(bbox, &class_id)| Annotation { bbox: *bbox, class_id })
            .collect()
    };

    Ok(ImageRecord {
        id,
        width: spec.width,
        height: spec.height,
        objects,
        feature_grid: FeatureGrid { cells },
        is_distractor,
    })
}

fn place_box(
    spec: &SceneSpec,
    rng: &mut impl Rng,
    placed: &[BBox],
) -> Option<BBox> {
    for _attempt in 0..50 {
        let h = rng.random_range(spec.min_object_size..=spec.max_object_size.min(spec.height as f64));
        let w = rng.random_range(spec.min_object_size..=spec.max_object_size.min(spec.width as f64));
        let up = rng.random_range(0.0..=(spec.height as f64 - h));
        let left = rng.random_range(0.0..=(spec.width as f64 - w));
        let candidate = BBox::new(up, left, up + h, left + w);
        if placed.iter().all(|b| crate::geometry::iou(b, &candidate) <= spec.max_overlap) {
            return Some(candidate);
        }
    }
    None
}

/// Move images from the unlabeled pool into the labeled pool until every
/// class has at least `k` labeled exemplar images. An image picked for one
/// class counts toward every class it contains, so the final count is at
/// most `k * C` and usually less on multi-label data.
pub fn sample_initial_labels(
    dataset: &DatasetSplit,
    k: usize,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    let mut out = dataset.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = stream(seed, &[purpose::LABELS]);
    for class in 0..out.num_classes {
        loop {
            let covered = out
                .labeled_ids
                .iter()
                .filter(|id| out.image(**id).gt_classes().contains(&class))
                .count();
            if covered >= k {
                break;
            }
            let candidates: Vec<u64> = out
                .unlabeled_ids
                .iter()
                .copied()
                .filter(|id| out.image(*id).gt_classes().contains(&class))
                .collect();
            if candidates.is_empty() {
                return Err(DataError::InsufficientExemplars {
                    class,
                    available: covered,
                    needed: k,
                });
            }
            let pick = candidates[rng.random_range(0..candidates.len())];
            out.unlabeled_ids.remove(&pick);
            out.labeled_ids.insert(pick);
        }
    }
    Ok(out)
}

/// Class-agnostic proposals: jittered copies of the ground-truth boxes
/// (standing in for a high-recall unsupervised proposer) plus uniform random
/// rectangles. Never reads class labels; deterministic per (seed, image id).
pub fn generate_proposals(img: &ImageRecord, cfg: &ProposalConfig, seed: u64) -> ProposalSet {
    let mut rng = stream(seed, &[purpose::PROPOSALS, img.id]);
    let n = cfg.per_image;
    let n_random = (n as f64 * cfg.random_fraction).round() as usize;
    let n_jitter = if img.objects.is_empty() { 0 } else { n.saturating_sub(n_random) };
    let n_random = n - n_jitter;

    let h_img = img.height as f64;
    let w_img = img.width as f64;
    let mut proposals = Vec::with_capacity(n);

    for t in 0..n_jitter {
        let base = &img.objects[t % img.objects.len()].bbox;
        let dy = Normal::new(0.0, (cfg.jitter_sigma * base.height()).max(1e-9)).unwrap();
        let dx = Normal::new(0.0, (cfg.jitter_sigma * base.width()).max(1e-9)).unwrap();
        let mut up = base.up + dy.sample(&mut rng);
        let mut bottom = base.bottom + dy.sample(&mut rng);
        let mut left = base.left + dx.sample(&mut rng);
        let mut right = base.right + dx.sample(&mut rng);
        if up > bottom {
            std::mem::swap(&mut up, &mut bottom);
        }
        if left > right {
            std::mem::swap(&mut left, &mut right);
        }
        proposals.push(clamp_box(up, left, bottom, right, h_img, w_img));
    }
    for _ in 0..n_random {
        let y1 = rng.random_range(0.0..h_img);
        let y2 = rng.random_range(0.0..h_img);
        let x1 = rng.random_range(0.0..w_img);
        let x2 = rng.random_range(0.0..w_img);
        proposals.push(clamp_box(y1.min(y2), x1.min(x2), y1.max(y2), x1.max(x2), h_img, w_img));
    }

    ProposalSet { image_id: img.id, proposals }
}

const MIN_PROPOSAL_SIDE: f64 = 2.0;

fn clamp_box(up: f64, left: f64, bottom: f64, right: f64, h: f64, w: f64) -> BBox {
    let mut up = up.clamp(0.0, h);
    let mut bottom = bottom.clamp(0.0, h);
    let mut left = left.clamp(0.0, w);
    let mut right = right.clamp(0.0, w);
    if bottom - up < MIN_PROPOSAL_SIDE {
        let c = ((up + bottom) / 2.0).clamp(MIN_PROPOSAL_SIDE / 2.0, h - MIN_PROPOSAL_SIDE / 2.0);
        up = c - MIN_PROPOSAL_SIDE / 2.0;
        bottom = c + MIN_PROPOSAL_SIDE / 2.0;
    }
    if right - left < MIN_PROPOSAL_SIDE {
        let c = ((left + right) / 2.0).clamp(MIN_PROPOSAL_SIDE / 2.0, w - MIN_PROPOSAL_SIDE / 2.0);
        left = c - MIN_PROPOSAL_SIDE / 2.0;
        right = c + MIN_PROPOSAL_SIDE / 2.0;
    }
    BBox::new(up, left, bottom, right)
}

pub fn save_dataset(dataset: &DatasetSplit, path: &Path) -> Result<(), DataError> {
    let json = serde_json::to_string(dataset).expect("dataset serializes");
    fs::write(path, json).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit, DataError> {
    let text = fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let dataset: DatasetSplit = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    dataset.validate()?;
    Ok(dataset)
}
