//! The pluggable detection-model contract, three toy scorer families, and
//! multi-model score fusion.
//!
//! The families stand in for heavyweight CNN detectors: a nearest-prototype
//! scorer, a one-vs-rest ridge scorer, and a naive-Bayes histogram scorer.
//! Diversity comes from the family difference plus a feature view (the
//! channel subset a model sees), standing in for architecture diversity.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Annotation, ImageRecord};
use crate::geometry::{iou, BBox};
use crate::rng::{purpose, stream};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("model {0} is untrained")]
    Untrained(usize),
    #[error("class {0} has no positive boxes in the training pool")]
    NoPositives(usize),
    #[error("training pool is empty")]
    EmptyPool,
    #[error("no negative proposals available (every proposal overlaps an annotation)")]
    NoNegatives,
    #[error("fuse requires at least one output")]
    NothingToFuse,
    #[error("fuse dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Prototype,
    Linear,
    Histogram,
}

/// The feature channels a model sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureView {
    pub channels: Vec<usize>,
}

impl FeatureView {
    pub fn new(channels: Vec<usize>) -> Self {
        Self { channels }
    }

    pub fn project(&self, full: &[f64]) -> Vec<f64> {
        self.channels.iter().map(|&c| full[c]).collect()
    }
}

/// Family plus feature view; what a run config declares per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub view: FeatureView,
}

/// Per-family hyper-parameters for training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Proposals with IoU below this against every annotation are negatives.
    pub neg_iou_max: f64,
    /// Negatives sampled per training image.
    pub negatives_per_image: usize,
    /// Ridge regularizer for the linear family.
    pub ridge: f64,
    /// Histogram bins per channel.
    pub histogram_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { neg_iou_max: 0.3, negatives_per_image: 8, ridge: 1.0, histogram_bins: 8 }
    }
}

/// One image's contribution to a training pool: its annotations (real or
/// pseudo) plus the proposal set negatives are drawn from.
///
/// `exclusion_boxes` marks regions that must not be sampled as negatives on
/// top of the positives themselves, e.g. pseudo boxes of classes other than
/// the one this image was selected for.
pub struct TrainExample<'a> {
    pub image: &'a ImageRecord,
    pub boxes: Vec<Annotation>,
    pub exclusion_boxes: Vec<BBox>,
    pub proposals: &'a [BBox],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PrototypeState {
    /// Two sub-prototypes per class (background last), so a class can cover
    /// more than one appearance mode once the data reveals it.
    prototypes: Vec<[Vec<f64>; 2]>,
    /// Shrunk per-class per-channel variances shared by both sub-prototypes;
    /// a few samples leave these at the prior, larger pools adapt them.
    variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LinearState {
    /// One weight row per class over quadratic features `[x, x^2]`, bias
    /// last (no background row).
    weights: Vec<Vec<f64>>,
    /// Per-class decision point and margin scale, calibrated on the
    /// training pool (ridge shrinkage pulls raw outputs toward 0, so a
    /// fixed midpoint would starve the scores).
    thresholds: Vec<f64>,
    margins: Vec<f64>,
    steepness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HistogramState {
    /// log p(bin | class, channel); class-major, background last.
    log_probs: Vec<Vec<Vec<f64>>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TrainedState {
    Prototype(PrototypeState),
    Linear(LinearState),
    Histogram(HistogramState),
}

/// A detection model: family, feature view, and (once trained) its state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub model_id: usize,
    pub family: ModelFamily,
    pub view: FeatureView,
    pub num_classes: usize,
    state: Option<TrainedState>,
}

/// Per-proposal per-class scores for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutput {
    pub image_id: u64,
    pub boxes: Vec<BBox>,
    /// `scores[i][c]` in [0,1] for proposal `i`, class `c`.
    pub scores: Vec<Vec<f64>>,
    /// Optional per-proposal refined boxes; averaged by `fuse`.
    pub refined: Option<Vec<BBox>>,
}

impl DetectionOutput {
    /// Boxes the scores refer to: refined if present, raw proposals else.
    pub fn effective_boxes(&self) -> &[BBox] {
        self.refined.as_deref().unwrap_or(&self.boxes)
    }
}

impl DetectorModel {
    pub fn new(model_id: usize, spec: ModelSpec, num_classes: usize) -> Self {
        Self { model_id, family: spec.family, view: spec.view, num_classes, state: None }
    }

    pub fn is_trained(&self) -> bool {
        self.state.is_some()
    }

    /// Same trained state under a different model id (used when assembling
    /// independently trained models into one ensemble).
    pub fn with_model_id(&self, model_id: usize) -> Self {
        Self { model_id, ..self.clone() }
    }

    /// Train on the pool (initially labeled images plus selected
    /// pseudo-labeled ones). Returns a new model; deterministic given pool
    /// order and seed. Positives are the annotated boxes; negatives are
    /// proposals with IoU < `neg_iou_max` against every annotation.
    pub fn train(
        &self,
        pool: &[TrainExample<'_>],
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<DetectorModel, DetectorError> {
        if pool.is_empty() {
            return Err(DetectorError::EmptyPool);
        }
        let background = self.num_classes;
        let mut samples: Vec<(Vec<f64>, usize)> = Vec::new();
        for example in pool {
            for ann in &example.boxes {
                let feat = self.view.project(&example.image.pooled_feature(&ann.bbox));
                samples.push((feat, ann.class_id));
            }
            let negatives: Vec<&BBox> = example
                .proposals
                .iter()
                .filter(|p| {
                    example.boxes.iter().all(|a| iou(p, &a.bbox) < cfg.neg_iou_max)
                        && example.exclusion_boxes.iter().all(|b| iou(p, b) < cfg.neg_iou_max)
                })
                .collect();
            let mut rng = stream(seed, &[purpose::NEGATIVES, example.image.id]);
            let take = cfg.negatives_per_image.min(negatives.len());
            let mut idx: Vec<usize> = (0..negatives.len()).collect();
            for i in 0..take {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
                let feat = self.view.project(&example.image.pooled_feature(negatives[idx[i]]));
                samples.push((feat, background));
            }
        }
        for class in 0..self.num_classes {
            if !samples.iter().any(|(_, c)| *c == class) {
                return Err(DetectorError::NoPositives(class));
            }
        }
        if !samples.iter().any(|(_, c)| *c == background) {
            return Err(DetectorError::NoNegatives);
        }

        let state = match self.family {
            ModelFamily::Prototype => TrainedState::Prototype(train_prototype(&samples, background)),
            ModelFamily::Linear => TrainedState::Linear(train_linear(&samples, self.num_classes, cfg)),
            ModelFamily::Histogram => {
                TrainedState::Histogram(train_histogram(&samples, background, cfg))
            }
        };
        Ok(DetectorModel { state: Some(state), ..self.clone() })
    }

    /// Score every proposal for every class. Pure function of
    /// (state, image, proposals); all scores in [0,1].
    ///
    /// Each proposal also gets a jitter-corrected refined box: the bounding
    /// rectangle of the cells around the proposal that the model considers
    /// object-like for the proposal's best class. Scores stay attached to
    /// the original proposals; only the geometry is corrected.
    pub fn score(
        &self,
        image: &ImageRecord,
        proposals: &[BBox],
    ) -> Result<DetectionOutput, DetectorError> {
        let state = self.state.as_ref().ok_or(DetectorError::Untrained(self.model_id))?;
        let scores: Vec<Vec<f64>> = proposals
            .iter()
            .map(|p| {
                let feat = self.view.project(&image.pooled_feature(p));
                match state {
                    TrainedState::Prototype(s) => score_prototype(s, &feat, self.num_classes),
                    TrainedState::Linear(s) => score_linear(s, &feat),
                    TrainedState::Histogram(s) => score_histogram(s, &feat, self.num_classes),
                }
            })
            .collect();
        let refined = proposals
            .iter()
            .zip(&scores)
            .map(|(p, row)| {
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("NaN score").then(b.0.cmp(&a.0)))
                    .map_or(0, |(c, _)| c);
                self.refine_box(state, image, p, best)
            })
            .collect();
        Ok(DetectionOutput {
            image_id: image.id,
            boxes: proposals.to_vec(),
            scores,
            refined: Some(refined),
        })
    }

    /// Snap a proposal to the model's cell-level support: scan the proposal
    /// window (padded by one cell), keep cells whose features look like
    /// `class` rather than background, and return their bounding rectangle.
    /// Falls back to the proposal when no cell qualifies.
    fn refine_box(
        &self,
        state: &TrainedState,
        image: &ImageRecord,
        bbox: &BBox,
        class: usize,
    ) -> BBox {
        let grid = &image.feature_grid;
        let (rows, cols) = (grid.rows(), grid.cols());
        if rows == 0 || cols == 0 {
            return *bbox;
        }
        let cell_h = image.height as f64 / rows as f64;
        let cell_w = image.width as f64 / cols as f64;
        let r0 = (bbox.up / cell_h - 1.0).floor().max(0.0) as usize;
        let r1 = ((bbox.bottom / cell_h + 1.0).ceil() as usize).min(rows);
        let c0 = (bbox.left / cell_w - 1.0).floor().max(0.0) as usize;
        let c1 = ((bbox.right / cell_w + 1.0).ceil() as usize).min(cols);
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for r in r0..r1 {
            for c in c0..c1 {
                let feat = self.view.project(grid.cell(r, c));
                if cell_is_object_like(state, &feat, class) {
                    bounds = Some(match bounds {
                        None => (r, c, r, c),
                        Some((rl, cl, rh, ch)) => (rl.min(r), cl.min(c), rh.max(r), ch.max(c)),
                    });
                }
            }
        }
        match bounds {
            None => *bbox,
            Some((rl, cl, rh, ch)) => BBox::new(
                rl as f64 * cell_h,
                cl as f64 * cell_w,
                (rh + 1) as f64 * cell_h,
                (ch + 1) as f64 * cell_w,
            ),
        }
    }
}

fn cell_is_object_like(state: &TrainedState, feat: &[f64], class: usize) -> bool {
    match state {
        TrainedState::Prototype(s) => {
            let background = s.prototypes.len() - 1;
            prototype_nll(s, feat, class) < prototype_nll(s, feat, background)
        }
        TrainedState::Linear(s) => linear_raw(&s.weights[class], feat) >= s.thresholds[class],
        TrainedState::Histogram(s) => {
            let background = s.log_probs.len() - 1;
            let ll = |class_idx: usize| -> f64 {
                feat.iter()
                    .enumerate()
                    .map(|(d, v)| {
                        s.log_probs[class_idx][d][bin_index(*v, s.lo[d], s.hi[d], s.bins)]
                    })
                    .sum()
            };
            ll(class) > ll(background)
        }
    }
}

/// Element-wise mean of the score matrices (and of refined boxes when every
/// output carries them). All outputs must cover the identical proposal list.
pub fn fuse(outputs: &[DetectionOutput]) -> Result<DetectionOutput, DetectorError> {
    let first = outputs.first().ok_or(DetectorError::NothingToFuse)?;
    let n = first.boxes.len();
    let c = first.scores.first().map_or(0, |r| r.len());
    for out in outputs {
        if out.image_id != first.image_id {
            return Err(DetectorError::DimensionMismatch(format!(
                "image {} vs {}",
                out.image_id, first.image_id
            )));
        }
        if out.boxes != first.boxes {
            return Err(DetectorError::DimensionMismatch("proposal lists differ".into()));
        }
        if out.scores.len() != n || out.scores.iter().any(|r| r.len() != c) {
            return Err(DetectorError::DimensionMismatch("score matrix shapes differ".into()));
        }
    }
    let m = outputs.len() as f64;
    let mut scores = vec![vec![0.0; c]; n];
    for out in outputs {
        for (row, src) in scores.iter_mut().zip(&out.scores) {
            for (v, s) in row.iter_mut().zip(src) {
                *v += s;
            }
        }
    }
    for row in &mut scores {
        for v in row.iter_mut() {
            *v /= m;
        }
    }
    let refined = if outputs.iter().all(|o| o.refined.is_some()) {
        let mut acc: Vec<[f64; 4]> = vec![[0.0; 4]; n];
        for out in outputs {
            for (a, b) in acc.iter_mut().zip(out.refined.as_ref().unwrap()) {
                a[0] += b.up;
                a[1] += b.left;
                a[2] += b.bottom;
                a[3] += b.right;
            }
        }
        Some(
            acc.into_iter()
                .map(|[up, left, bottom, right]| {
                    BBox::new(up / m, left / m, bottom / m, right / m)
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(DetectionOutput { image_id: first.image_id, boxes: first.boxes.clone(), scores, refined })
}

const VARIANCE_PRIOR: f64 = 1.0;
const VARIANCE_PRIOR_WEIGHT: f64 = 4.0;
const LLOYD_ITERATIONS: usize = 5;

fn train_prototype(samples: &[(Vec<f64>, usize)], background: usize) -> PrototypeState {
    let dim = samples[0].0.len();
    let mut per_class: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); background + 1];
    for (feat, class) in samples {
        per_class[*class].push(feat);
    }
    let mut prototypes = Vec::with_capacity(background + 1);
    let mut variances = Vec::with_capacity(background + 1);
    for feats in &per_class {
        let (centers, assignment) = split_two_means(feats, dim);
        // variance pooled over the class, measured against the assigned
        // sub-prototype
        let mut squares = vec![0.0; dim];
        for (feat, &which) in feats.iter().zip(&assignment) {
            for (d, v) in feat.iter().enumerate() {
                let delta = v - centers[which][d];
                squares[d] += delta * delta;
            }
        }
        let n = feats.len() as f64;
        variances.push(
            squares
                .into_iter()
                .map(|s| (s + VARIANCE_PRIOR_WEIGHT * VARIANCE_PRIOR) / (n + VARIANCE_PRIOR_WEIGHT))
                .collect::<Vec<f64>>(),
        );
        prototypes.push(centers);
    }
    PrototypeState { prototypes, variances }
}

/// Deterministic 2-means: seed one center at the sample nearest the class
/// mean and the other at the sample farthest from it, then run a fixed
/// number of Lloyd iterations (ties and empty clusters resolve to the first
/// center).
fn split_two_means(feats: &[&Vec<f64>], dim: usize) -> ([Vec<f64>; 2], Vec<usize>) {
    let n = feats.len();
    let mut mean = vec![0.0; dim];
    for feat in feats {
        for (m, v) in mean.iter_mut().zip(feat.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    if n <= 1 {
        let only = feats.first().map_or(mean.clone(), |f| (*f).clone());
        return ([only.clone(), only], vec![0; n]);
    }
    let nearest = (0..n)
        .min_by(|&a, &b| {
            sq_dist(feats[a], &mean).partial_cmp(&sq_dist(feats[b], &mean)).unwrap().then(a.cmp(&b))
        })
        .unwrap();
    let farthest = (0..n)
        .max_by(|&a, &b| {
            sq_dist(feats[a], &mean)
                .partial_cmp(&sq_dist(feats[b], &mean))
                .unwrap()
                .then(b.cmp(&a))
        })
        .unwrap();
    let mut centers = [feats[nearest].clone(), feats[farthest].clone()];
    let mut assignment = vec![0usize; n];
    for _ in 0..LLOYD_ITERATIONS {
        for (i, feat) in feats.iter().enumerate() {
            assignment[i] =
                if sq_dist(feat, &centers[1]) < sq_dist(feat, &centers[0]) { 1 } else { 0 };
        }
        for which in 0..2 {
            let members: Vec<&&Vec<f64>> =
                feats.iter().zip(&assignment).filter(|(_, &a)| a == which).map(|(f, _)| f).collect();
            if members.is_empty() {
                centers[which] = centers[0].clone();
                continue;
            }
            let mut center = vec![0.0; dim];
            for feat in &members {
                for (c, v) in center.iter_mut().zip(feat.iter()) {
                    *c += v;
                }
            }
            for c in &mut center {
                *c /= members.len() as f64;
            }
            centers[which] = center;
        }
    }
    for (i, feat) in feats.iter().enumerate() {
        assignment[i] = if sq_dist(feat, &centers[1]) < sq_dist(feat, &centers[0]) { 1 } else { 0 };
    }
    (centers, assignment)
}

fn prototype_nll(state: &PrototypeState, feat: &[f64], class: usize) -> f64 {
    let var = &state.variances[class];
    let nll_for = |mu: &[f64]| -> f64 {
        feat.iter()
            .enumerate()
            .map(|(d, v)| {
                let delta = v - mu[d];
                0.5 * (delta * delta / var[d] + var[d].ln())
            })
            .sum()
    };
    let [a, b] = &state.prototypes[class];
    nll_for(a).min(nll_for(b))
}

fn score_prototype(state: &PrototypeState, feat: &[f64], num_classes: usize) -> Vec<f64> {
    let logits: Vec<f64> =
        (0..state.prototypes.len()).map(|c| -prototype_nll(state, feat, c)).collect();
    let probs = softmax(&logits);
    probs[..num_classes].to_vec()
}

/// Quadratic feature map for the ridge family: `[x, x^2]`.
fn expand(feat: &[f64]) -> Vec<f64> {
    feat.iter().copied().chain(feat.iter().map(|v| v * v)).collect()
}

fn train_linear(samples: &[(Vec<f64>, usize)], num_classes: usize, cfg: &TrainConfig) -> LinearState {
    let expanded: Vec<(Vec<f64>, usize)> =
        samples.iter().map(|(feat, class)| (expand(feat), *class)).collect();
    let dim = expanded[0].0.len();
    let aug = dim + 1; // bias column
    // shared Gram matrix: X^T X + ridge * I
    let mut gram = vec![vec![0.0; aug]; aug];
    for (feat, _) in &expanded {
        for i in 0..aug {
            let xi = if i < dim { feat[i] } else { 1.0 };
            for j in 0..aug {
                let xj = if j < dim { feat[j] } else { 1.0 };
                gram[i][j] += xi * xj;
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += cfg.ridge;
    }
    let weights: Vec<Vec<f64>> = (0..num_classes)
        .map(|class| {
            let mut rhs = vec![0.0; aug];
            for (feat, c) in &expanded {
                if *c == class {
                    for (i, r) in rhs.iter_mut().enumerate() {
                        *r += if i < dim { feat[i] } else { 1.0 };
                    }
                }
            }
            solve_spd(&gram, &rhs)
        })
        .collect();
    // calibrate the decision point per class: midway between the mean raw
    // output on positives and on the rest
    let mut thresholds = Vec::with_capacity(num_classes);
    let mut margins = Vec::with_capacity(num_classes);
    for (class, w) in weights.iter().enumerate() {
        let raw = |feat: &Vec<f64>| -> f64 {
            let mut y = w[dim];
            for (wi, xi) in w[..dim].iter().zip(feat) {
                y += wi * xi;
            }
            y
        };
        let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0usize, 0.0, 0usize);
        for (feat, c) in &expanded {
            if *c == class {
                pos_sum += raw(feat);
                pos_n += 1;
            } else {
                neg_sum += raw(feat);
                neg_n += 1;
            }
        }
        let pos_mean = pos_sum / pos_n.max(1) as f64;
        let neg_mean = neg_sum / neg_n.max(1) as f64;
        thresholds.push((pos_mean + neg_mean) / 2.0);
        margins.push(((pos_mean - neg_mean) / 2.0).max(1e-3));
    }
    LinearState { weights, thresholds, margins, steepness: 3.0 }
}

fn linear_raw(weights: &[f64], feat: &[f64]) -> f64 {
    let expanded = expand(feat);
    let dim = weights.len() - 1;
    let mut y = weights[dim];
    for (wi, xi) in weights[..dim].iter().zip(&expanded) {
        y += wi * xi;
    }
    y
}

fn score_linear(state: &LinearState, feat: &[f64]) -> Vec<f64> {
    state
        .weights
        .iter()
        .enumerate()
        .map(|(c, w)| {
            let normalized = (linear_raw(w, feat) - state.thresholds[c]) / state.margins[c];
            sigmoid(state.steepness * normalized)
        })
        .collect()
}

fn train_histogram(
    samples: &[(Vec<f64>, usize)],
    background: usize,
    cfg: &TrainConfig,
) -> HistogramState {
    let dim = samples[0].0.len();
    let bins = cfg.histogram_bins.max(2);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for (feat, _) in samples {
        for (d, v) in feat.iter().enumerate() {
            lo[d] = lo[d].min(*v);
            hi[d] = hi[d].max(*v);
        }
    }
    for d in 0..dim {
        if hi[d] - lo[d] < 1e-9 {
            hi[d] = lo[d] + 1e-9;
        }
    }
    let mut counts = vec![vec![vec![0.0f64; bins]; dim]; background + 1];
    for (feat, class) in samples {
        for (d, v) in feat.iter().enumerate() {
            let b = bin_index(*v, lo[d], hi[d], bins);
            counts[*class][d][b] += 1.0;
        }
    }
    // Laplace smoothing, then log-normalize per (class, channel)
    let log_probs = counts
        .into_iter()
        .map(|per_class| {
            per_class
                .into_iter()
                .map(|hist| {
                    let total: f64 = hist.iter().sum::<f64>() + bins as f64;
                    hist.into_iter().map(|c| ((c + 1.0) / total).ln()).collect()
                })
                .collect()
        })
        .collect();
    HistogramState { log_probs, lo, hi, bins }
}

fn score_histogram(state: &HistogramState, feat: &[f64], num_classes: usize) -> Vec<f64> {
    let logits: Vec<f64> = state
        .log_probs
        .iter()
        .map(|per_class| {
            feat.iter()
                .enumerate()
                .map(|(d, v)| per_class[d][bin_index(*v, state.lo[d], state.hi[d], state.bins)])
                .sum()
        })
        .collect();
    let probs = softmax(&logits);
    probs[..num_classes].to_vec()
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = (v - lo) / (hi - lo);
    ((t * bins as f64) as isize).clamp(0, bins as isize - 1) as usize
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gaussian elimination with partial pivoting; `a` is symmetric positive
/// definite here (Gram + ridge), sizes are tiny.
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().map(|row| row.clone()).collect();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        let diag = m[col][col];
        for row in (col + 1)..n {
            let factor = m[row][col] / diag;
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}
