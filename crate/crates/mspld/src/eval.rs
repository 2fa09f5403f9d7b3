//! Detection evaluation: per-class average precision, correct-localization
//! rate on training data, and pseudo-label quality rates.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Annotation;
use crate::geometry::{iou, ScoredBox};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Detections plus ground truth for one image.
#[derive(Debug, Clone, Default)]
pub struct ImageEval {
    pub detections: Vec<ScoredBox>,
    pub ground_truth: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Mean of the interpolated precision at recall 0.0, 0.1, ..., 1.0
    /// (the VOC2007 convention; the default).
    ElevenPoint,
    /// Area under the interpolated precision envelope.
    AllPoints,
}

/// Per-class average precision; `None` marks a class with no ground truth
/// (undefined, excluded from the mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Classes skipped for having zero ground-truth boxes.
    pub skipped_classes: Vec<usize>,
}

/// Per-class correct-localization rate; `None` marks a class no image
/// contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorlocReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Standard greedy-matching average precision at the given IoU threshold.
///
/// Detections are visited in descending score order (ties broken by image
/// then input position); each counts as a true positive iff it overlaps a
/// not-yet-matched ground-truth box of its class at or above the threshold.
pub fn average_precision(
    images: &[ImageEval],
    num_classes: usize,
    iou_thresh: f64,
    mode: ApMode,
) -> ApReport {
    let mut per_class = Vec::with_capacity(num_classes);
    let mut skipped = Vec::new();
    for class in 0..num_classes {
        let num_gt: usize = images
            .iter()
            .map(|im| im.ground_truth.iter().filter(|g| g.class_id == class).count())
            .sum();
        if num_gt == 0 {
            skipped.push(class);
            per_class.push(None);
            continue;
        }
        // (image index, detection index, score)
        let mut dets: Vec<(usize, usize, f64)> = images
            .iter()
            .enumerate()
            .flat_map(|(ii, im)| {
                im.detections
                    .iter()
                    .enumerate()
                    .filter(move |(_, d)| d.class_id == class)
                    .map(move |(di, d)| (ii, di, d.score))
            })
            .collect();
        dets.sort_by(|a, b| {
            b.2.partial_cmp(&a.2).expect("NaN score").then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
        });

        let mut matched: Vec<Vec<bool>> =
            images.iter().map(|im| vec![false; im.ground_truth.len()]).collect();
        let mut tp_flags = Vec::with_capacity(dets.len());
        for &(ii, di, _) in &dets {
            let det = &images[ii].detections[di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in images[ii].ground_truth.iter().enumerate() {
                if gt.class_id != class {
                    continue;
                }
                let overlap = iou(&det.bbox, &gt.bbox);
                if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            match best {
                Some((gi, _)) if !matched[ii][gi] => {
                    matched[ii][gi] = true;
                    tp_flags.push(true);
                }
                _ => tp_flags.push(false),
            }
        }

        let mut curve = Vec::with_capacity(tp_flags.len());
        let (mut tp, mut fp) = (0usize, 0usize);
        for flag in tp_flags {
            if flag {
                tp += 1;
            } else {
                fp += 1;
            }
            curve.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
        }
        per_class.push(Some(ap_from_curve(&curve, mode)));
    }
    let mean = mean_of(&per_class);
    ApReport { per_class, mean, skipped_classes: skipped }
}

/// `curve` is (recall, precision) in detection order, recall non-decreasing.
fn ap_from_curve(curve: &[(f64, f64)], mode: ApMode) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    // interpolated precision: max precision at recall >= r
    let mut envelope: Vec<(f64, f64)> = curve.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i].1 = envelope[i].1.max(envelope[i + 1].1);
    }
    match mode {
        ApMode::ElevenPoint => {
            let mut total = 0.0;
            for step in 0..=10 {
                let r = step as f64 / 10.0;
                let p = envelope
                    .iter()
                    .find(|(rec, _)| *rec >= r - 1e-12)
                    .map_or(0.0, |(_, prec)| *prec);
                total += p;
            }
            total / 11.0
        }
        ApMode::AllPoints => {
            let mut total = 0.0;
            let mut prev_recall = 0.0;
            for &(rec, prec) in &envelope {
                total += (rec - prev_recall) * prec;
                prev_recall = rec;
            }
            total
        }
    }
}

/// Correct localization: for every image containing class `c`, the image
/// counts as correct iff the top-scored class-`c` detection overlaps some
/// class-`c` ground truth at IoU >= 0.5.
pub fn corloc(images: &[ImageEval], num_classes: usize) -> CorlocReport {
    const CORLOC_IOU: f64 = 0.5;
    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let mut containing = 0usize;
        let mut correct = 0usize;
        for im in images {
            let gts: Vec<&Annotation> =
                im.ground_truth.iter().filter(|g| g.class_id == class).collect();
            if gts.is_empty() {
                continue;
            }
            containing += 1;
            let top = im
                .detections
                .iter()
                .filter(|d| d.class_id == class)
                .max_by(|a, b| a.score.partial_cmp(&b.score).expect("NaN score"));
            if let Some(top) = top {
                if gts.iter().any(|g| iou(&top.bbox, &g.bbox) >= CORLOC_IOU) {
                    correct += 1;
                }
            }
        }
        per_class.push((containing > 0).then(|| correct as f64 / containing as f64));
    }
    let mean = mean_of(&per_class);
    CorlocReport { per_class, mean }
}

/// One unlabeled-pool image for pseudo-label quality: the boxes actually fed
/// to training (empty when the image was not selected) plus its hidden
/// ground truth.
#[derive(Debug, Clone)]
pub struct PseudoQualityInput {
    pub image_id: u64,
    pub selected: bool,
    pub pseudo_boxes: Vec<Annotation>,
    pub ground_truth: Vec<Annotation>,
}

/// Image- and instance-level precision/recall of the generated labels.
///
/// Precision runs over generated items, recall over ground truth: an image
/// counts as correct iff every pseudo class it carries appears in its
/// ground-truth class set; a pseudo box counts as correct iff it overlaps a
/// same-class ground-truth box at IoU >= 0.5. With zero generated items the
/// precisions are undefined and reported as 1.0 with `*_support == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub img_precision: f64,
    pub img_recall: f64,
    pub ins_precision: f64,
    pub ins_recall: f64,
    /// Selected image count (image precision denominator).
    pub img_support: usize,
    /// Generated box count (instance precision denominator).
    pub ins_support: usize,
}

pub fn pseudo_quality(pool: &[PseudoQualityInput]) -> QualityReport {
    const QUALITY_IOU: f64 = 0.5;
    let mut selected_images = 0usize;
    let mut correct_images = 0usize;
    let mut images_with_target = 0usize;
    let mut pseudo_boxes = 0usize;
    let mut correct_boxes = 0usize;
    let mut gt_boxes = 0usize;
    let mut covered_gts = 0usize;

    for im in pool {
        if !im.ground_truth.is_empty() {
            images_with_target += 1;
        }
        gt_boxes += im.ground_truth.len();
        if im.selected {
            selected_images += 1;
            let gt_classes: std::collections::BTreeSet<usize> =
                im.ground_truth.iter().map(|g| g.class_id).collect();
            let all_classes_correct =
                im.pseudo_boxes.iter().all(|p| gt_classes.contains(&p.class_id));
            if all_classes_correct && !im.pseudo_boxes.is_empty() {
                correct_images += 1;
            }
        }
        for p in &im.pseudo_boxes {
            pseudo_boxes += 1;
            if im
                .ground_truth
                .iter()
                .any(|g| g.class_id == p.class_id && iou(&g.bbox, &p.bbox) >= QUALITY_IOU)
            {
                correct_boxes += 1;
            }
        }
        for g in &im.ground_truth {
            if im
                .pseudo_boxes
                .iter()
                .any(|p| p.class_id == g.class_id && iou(&g.bbox, &p.bbox) >= QUALITY_IOU)
            {
                covered_gts += 1;
            }
        }
    }

    let ratio = |num: usize, den: usize, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    QualityReport {
        img_precision: ratio(correct_images, selected_images, 1.0),
        img_recall: ratio(correct_images, images_with_target, 0.0),
        ins_precision: ratio(correct_boxes, pseudo_boxes, 1.0),
        ins_recall: ratio(covered_gts, gt_boxes, 0.0),
        img_support: selected_images,
        ins_support: pseudo_boxes,
    }
}

/// One row of the per-class metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetricsRow {
    pub class_id: usize,
    pub ap: Option<f64>,
    pub corloc: Option<f64>,
    pub img_p: f64,
    pub img_r: f64,
    pub ins_p: f64,
    pub ins_r: f64,
}

/// Write the per-class table as CSV (header row, comma separator, `.`
/// decimal point, empty cell for undefined).
pub fn write_metrics_csv(path: &Path, rows: &[ClassMetricsRow]) -> Result<(), EvalError> {
    let wrap = |source| EvalError::Io { path: path.display().to_string(), source };
    let mut file = std::fs::File::create(path).map_err(wrap)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(file, "class_id,ap,corloc,img_p,img_r,ins_p,ins_r").map_err(wrap)?;
    for row in rows {
        writeln!(
            file,
            "{},{},{},{},{},{},{}",
            row.class_id,
            fmt(row.ap),
            fmt(row.corloc),
            row.img_p,
            row.img_r,
            row.ins_p,
            row.ins_r
        )
        .map_err(wrap)?;
    }
    Ok(())
}
