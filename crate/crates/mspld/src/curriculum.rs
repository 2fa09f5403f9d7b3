//! Pseudo-label generation from fused detections, plus the prior-knowledge
//! filters that discard unreliable boxes and images.
//!
//! The pipeline order is fixed: per-class NMS, confidence floor, cross-class
//! nested-box NMS, the box/class count gates, class-specific thresholds, and
//! finally the empty check. Discarding an image is a normal outcome, not an
//! error; discarded images re-enter candidacy next round.

use serde::{Deserialize, Serialize};

use crate::data::{Annotation, ImageRecord};
use crate::detector::{DetectionOutput, DetectorModel, DetectorError};
use crate::geometry::{nms, ScoredBox};

/// Clamp floor for `-log(score)`; avoids infinities from zero scores.
pub const SCORE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    /// Boxes below this fused confidence are dropped (stage 2).
    pub confidence_floor: f64,
    /// Per-class thresholds applied near the end of the pipeline (stage 5).
    pub class_thresholds: Vec<f64>,
    /// Per-class NMS threshold (stage 1).
    pub nms_iou: f64,
    /// Cross-class nested-box NMS threshold (stage 3).
    pub nested_nms_iou: f64,
    /// An image with this many boxes of one class is discarded (stage 4).
    pub max_boxes_per_class: usize,
    /// An image with this many distinct classes is discarded (stage 4).
    pub max_classes: usize,
}

impl CurriculumConfig {
    pub fn with_defaults(num_classes: usize) -> Self {
        Self {
            confidence_floor: 0.2,
            class_thresholds: vec![0.2; num_classes],
            nms_iou: 0.3,
            nested_nms_iou: 0.7,
            max_boxes_per_class: 4,
            max_classes: 4,
        }
    }
}

/// A pseudo box: annotation plus the fused confidence that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnnotation {
    pub annotation: Annotation,
    pub score: f64,
}

/// Pseudo boxes that survived filtration for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub image_id: u64,
    pub boxes: Vec<ScoredAnnotation>,
}

impl PseudoLabelSet {
    pub fn boxes_of_class(&self, class_id: usize) -> impl Iterator<Item = &ScoredAnnotation> {
        self.boxes.iter().filter(move |b| b.annotation.class_id == class_id)
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut classes: Vec<usize> = self.boxes.iter().map(|b| b.annotation.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscardReason {
    NothingAboveFloor,
    TooManyBoxes { class_id: usize, count: usize },
    TooManyClasses { count: usize },
    NothingReliable,
}

/// Outcome of pseudo-label generation for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PseudoOutcome {
    Labels(PseudoLabelSet),
    Discarded(DiscardReason),
}

impl PseudoOutcome {
    pub fn labels(&self) -> Option<&PseudoLabelSet> {
        match self {
            PseudoOutcome::Labels(l) => Some(l),
            PseudoOutcome::Discarded(_) => None,
        }
    }
}

/// Run the six-stage filtration pipeline over a fused detection output.
pub fn generate_pseudo_labels(fused: &DetectionOutput, cfg: &CurriculumConfig) -> PseudoOutcome {
    let boxes = fused.effective_boxes();
    let num_classes = fused.scores.first().map_or(0, |r| r.len());

    // stage 1: per-class NMS
    let mut survivors: Vec<ScoredBox> = Vec::new();
    for class_id in 0..num_classes {
        let candidates: Vec<ScoredBox> = boxes
            .iter()
            .zip(&fused.scores)
            .map(|(bbox, row)| ScoredBox { bbox: *bbox, class_id, score: row[class_id] })
            .collect();
        survivors.extend(nms(&candidates, cfg.nms_iou));
    }

    // stage 2: confidence floor
    survivors.retain(|b| b.score >= cfg.confidence_floor);
    if survivors.is_empty() {
        return PseudoOutcome::Discarded(DiscardReason::NothingAboveFloor);
    }

    // stage 3: cross-class nested-box NMS, higher score wins
    survivors = nms(&survivors, cfg.nested_nms_iou);

    // stage 4: count gates
    for class_id in 0..num_classes {
        let count = survivors.iter().filter(|b| b.class_id == class_id).count();
        if count >= cfg.max_boxes_per_class {
            return PseudoOutcome::Discarded(DiscardReason::TooManyBoxes { class_id, count });
        }
    }
    let mut classes: Vec<usize> = survivors.iter().map(|b| b.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() >= cfg.max_classes {
        return PseudoOutcome::Discarded(DiscardReason::TooManyClasses { count: classes.len() });
    }

    // stage 5: class-specific thresholds
    survivors.retain(|b| b.score >= cfg.class_thresholds.get(b.class_id).copied().unwrap_or(0.0));

    // stage 6: nothing reliable left
    if survivors.is_empty() {
        return PseudoOutcome::Discarded(DiscardReason::NothingReliable);
    }

    PseudoOutcome::Labels(PseudoLabelSet {
        image_id: fused.image_id,
        boxes: survivors
            .into_iter()
            .map(|b| ScoredAnnotation {
                annotation: Annotation { bbox: b.bbox, class_id: b.class_id },
                score: b.score,
            })
            .collect(),
    })
}

/// Class-conditional image loss: infinite when class `c` has no pseudo box,
/// otherwise the mean of `-log(score)` the model assigns the class-`c`
/// pseudo boxes (scores clamped to `[SCORE_EPSILON, 1]`).
pub fn image_class_loss(
    model: &DetectorModel,
    image: &ImageRecord,
    pseudo: &PseudoLabelSet,
    class_id: usize,
) -> Result<f64, DetectorError> {
    let boxes: Vec<crate::geometry::BBox> =
        pseudo.boxes_of_class(class_id).map(|b| b.annotation.bbox).collect();
    if boxes.is_empty() {
        return Ok(f64::INFINITY);
    }
    let out = model.score(image, &boxes)?;
    let sum: f64 = out
        .scores
        .iter()
        .map(|row| -(row[class_id].clamp(SCORE_EPSILON, 1.0)).ln())
        .sum();
    Ok(sum / boxes.len() as f64)
}

/// Convenience check used by the engine's pool-cleaning step: an image is
/// usable this round iff the pipeline yields labels.
pub fn passes_image_filter(fused: &DetectionOutput, cfg: &CurriculumConfig) -> bool {
    matches!(generate_pseudo_labels(fused, cfg), PseudoOutcome::Labels(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn bx(up: f64, left: f64) -> BBox {
        BBox::new(up, left, up + 10.0, left + 10.0)
    }

    /// Output with one score row per box; row length = num classes.
    fn output(boxes: Vec<BBox>, scores: Vec<Vec<f64>>) -> DetectionOutput {
        DetectionOutput { image_id: 42, boxes, scores, refined: None }
    }

    fn cfg(num_classes: usize) -> CurriculumConfig {
        CurriculumConfig::with_defaults(num_classes)
    }

    #[test]
    fn everything_below_floor_discards() {
        let out = output(
            vec![bx(0.0, 0.0), bx(20.0, 20.0)],
            vec![vec![0.19, 0.1], vec![0.05, 0.15]],
        );
        assert_eq!(
            generate_pseudo_labels(&out, &cfg(2)),
            PseudoOutcome::Discarded(DiscardReason::NothingAboveFloor)
        );
    }

    #[test]
    fn four_boxes_of_one_class_discards() {
        // four well-separated confident boxes, all class 0
        let boxes = vec![bx(0.0, 0.0), bx(0.0, 30.0), bx(30.0, 0.0), bx(30.0, 30.0)];
        let scores = vec![vec![0.9, 0.0]; 4];
        assert_eq!(
            generate_pseudo_labels(&output(boxes, scores), &cfg(2)),
            PseudoOutcome::Discarded(DiscardReason::TooManyBoxes { class_id: 0, count: 4 })
        );
    }

    #[test]
    fn four_classes_discards() {
        let boxes = vec![bx(0.0, 0.0), bx(0.0, 30.0), bx(30.0, 0.0), bx(30.0, 30.0)];
        let mut scores = vec![vec![0.0; 4]; 4];
        for (i, row) in scores.iter_mut().enumerate() {
            row[i] = 0.9;
        }
        assert_eq!(
            generate_pseudo_labels(&output(boxes, scores), &cfg(4)),
            PseudoOutcome::Discarded(DiscardReason::TooManyClasses { count: 4 })
        );
    }

    /// Hand-traced single-object case: one isolated confident box survives
    /// all six stages.
    #[test]
    fn clean_single_object_yields_one_box() {
        let mut config = cfg(2);
        config.class_thresholds = vec![0.5, 0.5];
        let out = output(
            vec![bx(0.0, 0.0), bx(40.0, 40.0)],
            vec![vec![0.9, 0.05], vec![0.1, 0.12]],
        );
        match generate_pseudo_labels(&out, &config) {
            PseudoOutcome::Labels(set) => {
                assert_eq!(set.image_id, 42);
                assert_eq!(set.boxes.len(), 1);
                assert_eq!(set.boxes[0].annotation.class_id, 0);
                assert_eq!(set.boxes[0].score, 0.9);
            }
            other => panic!("expected labels, got {other:?}"),
        }
    }

    #[test]
    fn class_threshold_prunes_then_empty_discards() {
        let mut config = cfg(2);
        config.class_thresholds = vec![0.95, 0.95];
        let out = output(vec![bx(0.0, 0.0)], vec![vec![0.9, 0.0]]);
        assert_eq!(
            generate_pseudo_labels(&out, &config),
            PseudoOutcome::Discarded(DiscardReason::NothingReliable)
        );
    }

    #[test]
    fn nested_box_suppressed_across_classes() {
        // two near-identical boxes claimed by different classes; the nested
        // NMS keeps only the higher-scored one
        let a = bx(0.0, 0.0);
        let b = BBox::new(0.5, 0.5, 10.5, 10.5);
        let out = output(vec![a, b], vec![vec![0.8, 0.0], vec![0.0, 0.6]]);
        match generate_pseudo_labels(&out, &cfg(2)) {
            PseudoOutcome::Labels(set) => {
                assert_eq!(set.boxes.len(), 1);
                assert_eq!(set.boxes[0].annotation.class_id, 0);
            }
            other => panic!("expected labels, got {other:?}"),
        }
    }

    #[test]
    fn per_class_nms_collapses_duplicates_before_count_gate() {
        // three near-duplicates of one object plus one separate box: if NMS
        // did not run first, the gate would see 4 boxes and discard
        let near = |d: f64| BBox::new(d, d, 10.0 + d, 10.0 + d);
        let out = output(
            vec![near(0.0), near(0.4), near(0.8), bx(40.0, 40.0)],
            vec![vec![0.9, 0.0], vec![0.85, 0.0], vec![0.8, 0.0], vec![0.75, 0.0]],
        );
        match generate_pseudo_labels(&out, &cfg(2)) {
            PseudoOutcome::Labels(set) => {
                assert_eq!(set.boxes.len(), 2);
                assert_eq!(set.boxes[0].score, 0.9);
                assert_eq!(set.boxes[1].score, 0.75);
            }
            other => panic!("expected labels, got {other:?}"),
        }
    }

    #[test]
    fn surviving_boxes_respect_both_thresholds() {
        let mut config = cfg(3);
        config.class_thresholds = vec![0.3, 0.6, 0.4];
        let out = output(
            vec![bx(0.0, 0.0), bx(30.0, 30.0), bx(60.0, 60.0)],
            vec![vec![0.35, 0.0, 0.0], vec![0.0, 0.5, 0.0], vec![0.0, 0.0, 0.45]],
        );
        match generate_pseudo_labels(&out, &config) {
            PseudoOutcome::Labels(set) => {
                for b in &set.boxes {
                    assert!(b.score >= config.confidence_floor);
                    assert!(b.score >= config.class_thresholds[b.annotation.class_id]);
                }
                // class 1 at 0.5 < 0.6 must be gone
                assert_eq!(set.classes(), vec![0, 2]);
            }
            other => panic!("expected labels, got {other:?}"),
        }
    }

    mod loss {
        use super::*;
        use crate::data::{generate_synthetic_dataset, sample_initial_labels, SceneSpec};
        use crate::detector::{DetectorModel, FeatureView, ModelFamily, ModelSpec, TrainConfig, TrainExample};

        fn trained_model() -> (crate::data::DatasetSplit, DetectorModel) {
            let spec = SceneSpec {
                num_images: 20,
                num_test_images: 0,
                num_classes: 2,
                width: 64,
                height: 64,
                grid_rows: 8,
                grid_cols: 8,
                feature_dim: 4,
                min_objects: 1,
                max_objects: 1,
                min_object_size: 20.0,
                max_object_size: 32.0,
                max_overlap: 0.2,
                signal_amplitude: 2.0,
                noise_sigma: 0.3,
                object_noise_sigma: 0.3,
                class_mode_spread: 0.8,
                distractor_fraction: 0.0,
                class_signatures: None,
            };
            let d = generate_synthetic_dataset(&spec, 3).unwrap();
            let d = sample_initial_labels(&d, 3, 1).unwrap();
            let pcfg = crate::data::ProposalConfig::default();
            let props: Vec<_> =
                d.images.iter().map(|im| crate::data::generate_proposals(im, &pcfg, 5)).collect();
            let pool: Vec<TrainExample> = d
                .labeled_ids
                .iter()
                .map(|&id| {
                    let image = d.image(id);
                    TrainExample {
                        image,
                        boxes: image.objects.clone(),
                        exclusion_boxes: vec![],
                        proposals: &props.iter().find(|p| p.image_id == id).unwrap().proposals,
                    }
                })
                .collect();
            let model = DetectorModel::new(
                0,
                ModelSpec { family: ModelFamily::Prototype, view: FeatureView::new(vec![0, 1, 2, 3]) },
                2,
            )
            .train(&pool, &TrainConfig::default(), 1)
            .unwrap();
            (d, model)
        }

        fn pseudo(image_id: u64, boxes: Vec<(BBox, usize, f64)>) -> PseudoLabelSet {
            PseudoLabelSet {
                image_id,
                boxes: boxes
                    .into_iter()
                    .map(|(bbox, class_id, score)| ScoredAnnotation {
                        annotation: Annotation { bbox, class_id },
                        score,
                    })
                    .collect(),
            }
        }

        #[test]
        fn absent_class_is_infinite() {
            let (d, model) = trained_model();
            let im = &d.images[0];
            let set = pseudo(im.id, vec![(BBox::new(0.0, 0.0, 10.0, 10.0), 0, 0.9)]);
            let loss = image_class_loss(&model, im, &set, 1).unwrap();
            assert!(loss.is_infinite());
        }

        #[test]
        fn loss_matches_hand_arithmetic() {
            let (d, model) = trained_model();
            let im = &d.images[0];
            let b1 = BBox::new(0.0, 0.0, 24.0, 24.0);
            let b2 = BBox::new(30.0, 30.0, 60.0, 60.0);
            let set = pseudo(im.id, vec![(b1, 0, 0.9), (b2, 0, 0.9)]);
            let out = model.score(im, &[b1, b2]).unwrap();
            let expect = (-(out.scores[0][0].clamp(SCORE_EPSILON, 1.0)).ln()
                + -(out.scores[1][0].clamp(SCORE_EPSILON, 1.0)).ln())
                / 2.0;
            let loss = image_class_loss(&model, im, &set, 0).unwrap();
            assert!((loss - expect).abs() < 1e-12);
            assert!(loss >= 0.0);
        }

        /// Two boxes both scored s give exactly -ln(s); checked with a
        /// synthetic scorer via direct arithmetic.
        #[test]
        fn mean_of_equal_scores() {
            let s: f64 = 0.5;
            let reduced = (-(s.ln()) + -(s.ln())) / 2.0;
            assert!((reduced - std::f64::consts::LN_2).abs() < 1e-12);
        }

        #[test]
        fn loss_is_monotone_in_scores() {
            // -log is decreasing, so a uniformly higher score row can only
            // lower the mean; verified on the clamp boundaries too
            let scores = [0.1f64, 0.5, 0.9, 1.0];
            let losses: Vec<f64> =
                scores.iter().map(|s| -(s.clamp(SCORE_EPSILON, 1.0)).ln()).collect();
            for w in losses.windows(2) {
                assert!(w[0] >= w[1]);
            }
            assert_eq!(losses.last().copied().unwrap(), 0.0);
        }
    }
}
