//! The alternating optimization loop: train detectors on the labeled seed,
//! then round-robin over models — generate pseudo labels from the fused
//! detections, compute per-class losses, update the selection matrix under
//! the pace targets, retrain on the enlarged pool — growing the pace after
//! every round.
//!
//! The loop is sequential by contract (model `j` consumes model `j-1`'s
//! fresh selections); per-image scoring inside a step fans out to the rayon
//! pool and is merged in image-id order, so results are identical for any
//! worker count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{self, CurriculumConfig, PseudoLabelSet, PseudoOutcome};
use crate::data::{generate_proposals, Annotation, DatasetSplit, ProposalConfig};
use crate::detector::{
    fuse, DetectionOutput, DetectorError, DetectorModel, ModelSpec, TrainConfig, TrainExample,
};
use crate::eval::{
    average_precision, corloc, pseudo_quality, ApMode, ApReport, ClassMetricsRow, CorlocReport,
    ImageEval, PseudoQualityInput, QualityReport,
};
use crate::geometry::{nms, BBox, ScoredBox};
use crate::rng::{derive_seed, purpose};
use crate::selector::{
    advance_pace, objective, update_v, GammaMatrix, LossMatrix, LossTensor, PaceState,
    SelectionMatrix, SelectorError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("mspld mode requires at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("spl_single mode requires exactly 1 model, got {0}")]
    NotSingle(usize),
    #[error("no models configured")]
    NoModels,
    #[error("labels have not been sampled (labeled pool is empty)")]
    NoLabels,
    #[error("model {model} failed to train: {source}")]
    Training { model: usize, source: DetectorError },
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    SplSingle,
    SplEnsemble,
    Mspld,
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spl_single" => Ok(RunMode::SplSingle),
            "spl_ensemble" => Ok(RunMode::SplEnsemble),
            "mspld" => Ok(RunMode::Mspld),
            other => Err(format!("unknown mode {other:?} (expected spl_single | spl_ensemble | mspld)")),
        }
    }
}

/// Curriculum knobs as configured; `class_thresholds: None` derives them
/// from the per-class fused-score percentile on the first iteration, then
/// freezes them for the rest of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSettings {
    pub confidence_floor: f64,
    pub nms_iou: f64,
    pub nested_nms_iou: f64,
    pub max_boxes_per_class: usize,
    pub max_classes: usize,
    #[serde(default)]
    pub class_thresholds: Option<Vec<f64>>,
    pub threshold_percentile: f64,
}

impl Default for CurriculumSettings {
    fn default() -> Self {
        Self {
            confidence_floor: 0.2,
            nms_iou: 0.3,
            nested_nms_iou: 0.7,
            max_boxes_per_class: 4,
            max_classes: 4,
            class_thresholds: None,
            threshold_percentile: 0.98,
        }
    }
}

fn default_labels_per_class() -> usize {
    3
}
fn default_max_iterations() -> usize {
    6
}
fn default_eval_nms_iou() -> f64 {
    0.3
}

/// Everything one experiment run needs besides the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub models: Vec<ModelSpec>,
    /// Initial labeled exemplars per class (k).
    #[serde(default = "default_labels_per_class")]
    pub labels_per_class: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub proposals: ProposalConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub curriculum: CurriculumSettings,
    /// NMS threshold applied to detections before evaluation.
    #[serde(default = "default_eval_nms_iou")]
    pub eval_nms_iou: f64,
    pub seed: u64,
}

/// Per-model telemetry for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrace {
    pub model_id: usize,
    pub selected_images: usize,
    pub pseudo_boxes: usize,
    pub img_precision: f64,
    pub img_recall: f64,
    pub ins_precision: f64,
    pub ins_recall: f64,
    pub test_map: Option<f64>,
    pub corloc: Option<f64>,
    /// Objective right before / after this model's selection update, with
    /// everything else held fixed.
    pub objective_before: f64,
    pub objective_after: f64,
}

/// One iteration of the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub models: Vec<ModelTrace>,
    pub fused_test_map: Option<f64>,
    pub fused_corloc: Option<f64>,
    /// Objective value after the last selection update of the iteration.
    pub objective: f64,
}

/// Resumable snapshot at an iteration boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    /// Completed outer iterations.
    pub iteration: usize,
    pub models: Vec<DetectorModel>,
    pub selections: Vec<SelectionMatrix>,
    pub pace: PaceState,
    /// Frozen after the first pseudo-label pass.
    pub class_thresholds: Option<Vec<f64>>,
    /// Last implied pace thresholds per model.
    pub lambdas: Vec<Vec<f64>>,
    /// Pseudo boxes each model trained on, keyed by image id.
    pub training_pseudo: Vec<BTreeMap<u64, Vec<Annotation>>>,
    pub converged: bool,
    /// Last computed loss matrix per model; carried in checkpoints so a
    /// resumed run replays the exact objective trace.
    latest_losses: Vec<Option<LossMatrix>>,
}

/// Final per-class table plus headline numbers; the headline detector is the
/// fused ensemble for multi-model runs and the single model otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub rows: Vec<ClassMetricsRow>,
    pub mean_ap: Option<f64>,
    pub mean_corloc: Option<f64>,
    pub per_model_map: Vec<Option<f64>>,
    pub quality: QualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub traces: Vec<IterationTrace>,
    pub state: EngineState,
    pub report: FinalReport,
}

/// An experiment bound to its dataset, with proposals precomputed.
pub struct Engine<'a> {
    config: &'a RunConfig,
    data: &'a DatasetSplit,
    /// Unlabeled image ids in ascending order; row `i` of every selection
    /// matrix refers to `unlabeled[i]`.
    unlabeled: Vec<u64>,
    proposals: BTreeMap<u64, Vec<BBox>>,
    num_classes: usize,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a RunConfig, data: &'a DatasetSplit) -> Result<Self, EngineError> {
        if config.models.is_empty() {
            return Err(EngineError::NoModels);
        }
        match config.mode {
            RunMode::Mspld if config.models.len() < 2 => {
                return Err(EngineError::TooFewModels(config.models.len()))
            }
            RunMode::SplSingle if config.models.len() != 1 => {
                return Err(EngineError::NotSingle(config.models.len()))
            }
            _ => {}
        }
        if data.labeled_ids.is_empty() {
            return Err(EngineError::NoLabels);
        }
        let proposals = data
            .images
            .iter()
            .map(|im| (im.id, generate_proposals(im, &config.proposals, config.seed).proposals))
            .collect();
        Ok(Self {
            config,
            data,
            unlabeled: data.unlabeled_ids.iter().copied().collect(),
            proposals,
            num_classes: data.num_classes,
        })
    }

    pub fn unlabeled_count(&self) -> usize {
        self.unlabeled.len()
    }

    fn labeled_pool(&self) -> Vec<TrainExample<'_>> {
        self.data
            .labeled_ids
            .iter()
            .map(|&id| {
                let image = self.data.image(id);
                TrainExample {
                    image,
                    boxes: image.objects.clone(),
                    exclusion_boxes: vec![],
                    proposals: &self.proposals[&id],
                }
            })
            .collect()
    }

    /// Training stream per model; iteration-independent so an unchanged pool
    /// retrains to an identical state.
    fn train_seed(&self, model_id: usize) -> u64 {
        derive_seed(self.config.seed, &[purpose::TRAIN, model_id as u64])
    }

    /// Train every model on the labeled seed images and start with empty
    /// selections and the initial pace.
    pub fn initial_state(&self) -> Result<EngineState, EngineError> {
        let pool = self.labeled_pool();
        let m = self.config.models.len();
        let mut models = Vec::with_capacity(m);
        for (model_id, spec) in self.config.models.iter().enumerate() {
            let blank = DetectorModel::new(model_id, spec.clone(), self.num_classes);
            let trained = blank
                .train(&pool, &self.config.train, self.train_seed(model_id))
                .map_err(|source| EngineError::Training { model: model_id, source })?;
            models.push(trained);
        }
        let gamma = GammaMatrix::default_for(m);
        Ok(EngineState {
            iteration: 0,
            models,
            selections: (0..m)
                .map(|j| SelectionMatrix::empty(j, self.unlabeled.len(), self.num_classes))
                .collect(),
            pace: PaceState::new(self.config.labels_per_class, self.num_classes, gamma),
            class_thresholds: self.config.curriculum.class_thresholds.clone(),
            lambdas: vec![vec![0.0; self.num_classes]; m],
            training_pseudo: vec![BTreeMap::new(); m],
            converged: false,
            latest_losses: vec![None; m],
        })
    }

    /// Fused detections of the current models over the unlabeled pool, in
    /// `self.unlabeled` order.
    fn fused_unlabeled(
        &self,
        models: &[DetectorModel],
    ) -> Result<Vec<DetectionOutput>, EngineError> {
        let outputs: Vec<Result<DetectionOutput, DetectorError>> = self
            .unlabeled
            .par_iter()
            .map(|&id| {
                let image = self.data.image(id);
                let proposals = &self.proposals[&id];
                let per_model: Result<Vec<DetectionOutput>, DetectorError> =
                    models.iter().map(|m| m.score(image, proposals)).collect();
                per_model.and_then(|outs| fuse(&outs))
            })
            .collect();
        outputs.into_iter().collect::<Result<Vec<_>, _>>().map_err(EngineError::from)
    }

    /// Per-class score percentile over the unlabeled pool; freezes the
    /// class-specific thresholds on the first pass.
    fn derive_class_thresholds(&self, fused: &[DetectionOutput]) -> Vec<f64> {
        let pct = self.config.curriculum.threshold_percentile.clamp(0.0, 1.0);
        (0..self.num_classes)
            .map(|c| {
                let mut scores: Vec<f64> = fused
                    .iter()
                    .flat_map(|out| out.scores.iter().map(move |row| row[c]))
                    .collect();
                if scores.is_empty() {
                    return self.config.curriculum.confidence_floor;
                }
                scores.sort_by(|a, b| a.partial_cmp(b).expect("NaN score"));
                let rank = ((pct * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
                scores[rank - 1]
            })
            .collect()
    }

    fn curriculum_config(&self, thresholds: &[f64]) -> CurriculumConfig {
        let s = &self.config.curriculum;
        CurriculumConfig {
            confidence_floor: s.confidence_floor,
            class_thresholds: thresholds.to_vec(),
            nms_iou: s.nms_iou,
            nested_nms_iou: s.nested_nms_iou,
            max_boxes_per_class: s.max_boxes_per_class,
            max_classes: s.max_classes,
        }
    }

    fn losses_for_model(
        &self,
        model: &DetectorModel,
        outcomes: &[PseudoOutcome],
    ) -> LossMatrix {
        let rows: Vec<Vec<f64>> = self
            .unlabeled
            .par_iter()
            .zip(outcomes)
            .map(|(&id, outcome)| match outcome.labels() {
                None => vec![f64::INFINITY; self.num_classes],
                Some(set) => (0..self.num_classes)
                    .map(|c| {
                        curriculum::image_class_loss(model, self.data.image(id), set, c)
                            .expect("model is trained")
                    })
                    .collect(),
            })
            .collect();
        LossMatrix::new(rows)
    }

    /// Objective over the latest per-model losses, substituting an
    /// all-infinite matrix for models that have not computed losses yet
    /// (safe: their selections are empty).
    fn objective_snapshot(&self, state: &EngineState) -> Result<f64, SelectorError> {
        let placeholder =
            LossMatrix::new(vec![vec![f64::INFINITY; self.num_classes]; self.unlabeled.len()]);
        let tensor = LossTensor {
            models: state
                .latest_losses
                .iter()
                .map(|l| l.clone().unwrap_or_else(|| placeholder.clone()))
                .collect(),
        };
        objective(&tensor, &state.selections, &state.lambdas, &state.pace.gamma)
    }

    /// One full outer iteration: the model sweep plus the pace advance.
    pub fn step(&self, state: &mut EngineState) -> Result<IterationTrace, EngineError> {
        let iteration = state.iteration + 1;
        let m = state.models.len();
        let previous_selections = state.selections.clone();
        let mut update_log = Vec::with_capacity(m);
        let mut last_objective = 0.0;

        for j in 0..m {
            // fused detections with the current model states
            let fused = self.fused_unlabeled(&state.models)?;
            if state.class_thresholds.is_none() {
                state.class_thresholds = Some(self.derive_class_thresholds(&fused));
            }
            let cfg = self.curriculum_config(state.class_thresholds.as_ref().unwrap());

            // pool cleaning + pseudo labels + per-class losses for model j
            let outcomes: Vec<PseudoOutcome> = fused
                .par_iter()
                .map(|out| curriculum::generate_pseudo_labels(out, &cfg))
                .collect();
            let losses = self.losses_for_model(&state.models[j], &outcomes);

            // the image-level prior applied to the previous selection: drop
            // stale entries this round's filters invalidated
            let mut cleaned = state.selections[j].clone();
            for i in 0..cleaned.num_images() {
                if let Some(c) = cleaned.selected_class(i) {
                    if losses.get(i, c).is_infinite() {
                        cleaned.set(i, None);
                    }
                }
            }
            state.selections[j] = cleaned;
            state.latest_losses[j] = Some(losses.clone());

            // selection update under the pace targets
            let others: Vec<&SelectionMatrix> =
                state.selections.iter().filter(|s| s.model_id != j).collect();
            let update = update_v(j, &losses, &state.pace, &others);
            drop(others);
            state.lambdas[j] = update.lambdas;
            let objective_before = self.objective_snapshot(state)?;
            state.selections[j] = update.matrix;
            let objective_after = self.objective_snapshot(state)?;
            last_objective = objective_after;

            for (c, &target) in state.pace.targets.iter().enumerate() {
                debug_assert!(
                    state.selections[j].count_for_class(c) <= target,
                    "selection exceeded pace target"
                );
            }

            // retrain on labeled + selected pseudo boxes of the chosen
            // class; the rest of the image's pseudo boxes are unlabeled
            // objects, so they are shielded from negative sampling
            let mut pseudo_for_model: BTreeMap<u64, Vec<Annotation>> = BTreeMap::new();
            let mut exclusions: BTreeMap<u64, Vec<BBox>> = BTreeMap::new();
            for (i, class) in state.selections[j].iter_selected() {
                let id = self.unlabeled[i];
                let set: &PseudoLabelSet =
                    outcomes[i].labels().expect("selected image has labels");
                let boxes: Vec<Annotation> =
                    set.boxes_of_class(class).map(|b| b.annotation).collect();
                debug_assert!(!boxes.is_empty());
                exclusions.insert(
                    id,
                    set.boxes
                        .iter()
                        .filter(|b| b.annotation.class_id != class)
                        .map(|b| b.annotation.bbox)
                        .collect(),
                );
                pseudo_for_model.insert(id, boxes);
            }
            let mut pool = self.labeled_pool();
            for (&id, boxes) in &pseudo_for_model {
                pool.push(TrainExample {
                    image: self.data.image(id),
                    boxes: boxes.clone(),
                    exclusion_boxes: exclusions.remove(&id).unwrap_or_default(),
                    proposals: &self.proposals[&id],
                });
            }
            state.models[j] = state.models[j]
                .train(&pool, &self.config.train, self.train_seed(j))
                .map_err(|source| EngineError::Training { model: j, source })?;
            state.training_pseudo[j] = pseudo_for_model;

            update_log.push((j, objective_before, objective_after));
        }

        // pace advance and convergence checks
        state.pace = advance_pace(&state.pace);
        state.iteration = iteration;
        let selections_unchanged = state.selections == previous_selections;
        let mut traversed = vec![false; self.unlabeled.len()];
        for sel in &state.selections {
            for (i, _) in sel.iter_selected() {
                traversed[i] = true;
            }
        }
        let all_traversed = traversed.iter().all(|&t| t);
        if selections_unchanged || all_traversed || iteration >= self.config.max_iterations {
            state.converged = true;
        }

        // telemetry
        let models_trace: Vec<ModelTrace> = update_log
            .into_iter()
            .map(|(j, objective_before, objective_after)| {
                let quality = pseudo_quality(&self.quality_pool(&state.training_pseudo[j]));
                let test = self.evaluate_model_on_test(&state.models[j]);
                let train_loc = self.evaluate_model_corloc(&state.models[j]);
                ModelTrace {
                    model_id: j,
                    selected_images: state.selections[j].selected_count(),
                    pseudo_boxes: state.training_pseudo[j].values().map(Vec::len).sum(),
                    img_precision: quality.img_precision,
                    img_recall: quality.img_recall,
                    ins_precision: quality.ins_precision,
                    ins_recall: quality.ins_recall,
                    test_map: test.mean,
                    corloc: train_loc.mean,
                    objective_before,
                    objective_after,
                }
            })
            .collect();
        let (fused_test_map, fused_corloc) = if state.models.len() > 1 {
            let ap = self.evaluate_fused_on_test(&state.models);
            let loc = self.evaluate_fused_corloc(&state.models);
            (ap.mean, loc.mean)
        } else {
            (models_trace[0].test_map, models_trace[0].corloc)
        };

        Ok(IterationTrace {
            iteration,
            models: models_trace,
            fused_test_map,
            fused_corloc,
            objective: last_objective,
        })
    }

    fn quality_pool(&self, pseudo: &BTreeMap<u64, Vec<Annotation>>) -> Vec<PseudoQualityInput> {
        self.unlabeled
            .iter()
            .map(|&id| {
                let image = self.data.image(id);
                let boxes = pseudo.get(&id);
                PseudoQualityInput {
                    image_id: id,
                    selected: boxes.is_some(),
                    pseudo_boxes: boxes.cloned().unwrap_or_default(),
                    ground_truth: image.objects.clone(),
                }
            })
            .collect()
    }

    /// Post-process one image's scored proposals into detections: per-class
    /// NMS over (box, class score) pairs.
    fn detections_for_image(&self, output: &DetectionOutput) -> Vec<ScoredBox> {
        let mut detections = Vec::new();
        for class_id in 0..self.num_classes {
            let candidates: Vec<ScoredBox> = output
                .effective_boxes()
                .iter()
                .zip(&output.scores)
                .map(|(bbox, row)| ScoredBox { bbox: *bbox, class_id, score: row[class_id] })
                .collect();
            detections.extend(nms(&candidates, self.config.eval_nms_iou));
        }
        detections
    }

    fn eval_images<F>(&self, ids: &[u64], scorer: F) -> Vec<ImageEval>
    where
        F: Fn(&crate::data::ImageRecord, &[BBox]) -> DetectionOutput + Sync,
    {
        ids.par_iter()
            .map(|&id| {
                let image = self.data.image(id);
                let output = scorer(image, &self.proposals[&id]);
                ImageEval {
                    detections: self.detections_for_image(&output),
                    ground_truth: image.objects.clone(),
                }
            })
            .collect()
    }

    fn test_ids(&self) -> Vec<u64> {
        self.data.test_ids.iter().copied().collect()
    }

    fn train_ids(&self) -> Vec<u64> {
        self.data.labeled_ids.iter().chain(self.data.unlabeled_ids.iter()).copied().collect()
    }

    pub fn evaluate_model_on_test(&self, model: &DetectorModel) -> ApReport {
        let images = self.eval_images(&self.test_ids(), |im, props| {
            model.score(im, props).expect("model is trained")
        });
        average_precision(&images, self.num_classes, 0.5, ApMode::ElevenPoint)
    }

    pub fn evaluate_fused_on_test(&self, models: &[DetectorModel]) -> ApReport {
        let images = self.eval_images(&self.test_ids(), |im, props| {
            let outs: Vec<DetectionOutput> =
                models.iter().map(|m| m.score(im, props).expect("model is trained")).collect();
            fuse(&outs).expect("identical proposal lists")
        });
        average_precision(&images, self.num_classes, 0.5, ApMode::ElevenPoint)
    }

    pub fn evaluate_model_corloc(&self, model: &DetectorModel) -> CorlocReport {
        let images = self.eval_images(&self.train_ids(), |im, props| {
            model.score(im, props).expect("model is trained")
        });
        corloc(&images, self.num_classes)
    }

    pub fn evaluate_fused_corloc(&self, models: &[DetectorModel]) -> CorlocReport {
        let images = self.eval_images(&self.train_ids(), |im, props| {
            let outs: Vec<DetectionOutput> =
                models.iter().map(|m| m.score(im, props).expect("model is trained")).collect();
            fuse(&outs).expect("identical proposal lists")
        });
        corloc(&images, self.num_classes)
    }

    /// Final per-class table. The quality columns describe the union of the
    /// models' pseudo training pools (an image is selected when any model
    /// selected it; duplicate boxes collapse).
    pub fn final_report(&self, state: &EngineState) -> FinalReport {
        let multi = state.models.len() > 1;
        let (ap, loc) = if multi {
            (self.evaluate_fused_on_test(&state.models), self.evaluate_fused_corloc(&state.models))
        } else {
            (
                self.evaluate_model_on_test(&state.models[0]),
                self.evaluate_model_corloc(&state.models[0]),
            )
        };
        let mut union: BTreeMap<u64, Vec<Annotation>> = BTreeMap::new();
        for pseudo in &state.training_pseudo {
            for (&id, boxes) in pseudo {
                let entry = union.entry(id).or_default();
                for b in boxes {
                    if !entry.contains(b) {
                        entry.push(*b);
                    }
                }
            }
        }
        let pool = self.quality_pool(&union);
        let quality = pseudo_quality(&pool);
        let rows = (0..self.num_classes)
            .map(|class_id| {
                let class_pool: Vec<PseudoQualityInput> = pool
                    .iter()
                    .map(|input| PseudoQualityInput {
                        image_id: input.image_id,
                        selected: input.selected
                            && input.pseudo_boxes.iter().any(|b| b.class_id == class_id),
                        pseudo_boxes: input
                            .pseudo_boxes
                            .iter()
                            .filter(|b| b.class_id == class_id)
                            .copied()
                            .collect(),
                        ground_truth: input
                            .ground_truth
                            .iter()
                            .filter(|g| g.class_id == class_id)
                            .copied()
                            .collect(),
                    })
                    .collect();
                let q = pseudo_quality(&class_pool);
                ClassMetricsRow {
                    class_id,
                    ap: ap.per_class[class_id],
                    corloc: loc.per_class[class_id],
                    img_p: q.img_precision,
                    img_r: q.img_recall,
                    ins_p: q.ins_precision,
                    ins_r: q.ins_recall,
                }
            })
            .collect();
        let per_model_map =
            state.models.iter().map(|m| self.evaluate_model_on_test(m).mean).collect();
        FinalReport { rows, mean_ap: ap.mean, mean_corloc: loc.mean, per_model_map, quality }
    }

    /// Run to convergence (or `max_iterations`), returning traces, the final
    /// state, and the final report. `observer` sees every iteration trace
    /// and state snapshot as they complete.
    pub fn run_with_observer(
        &self,
        mut observer: impl FnMut(&IterationTrace, &EngineState),
    ) -> Result<RunOutcome, EngineError> {
        let mut state = self.initial_state()?;
        let mut traces = Vec::new();
        self.resume_with_observer(&mut state, &mut traces, &mut observer)?;
        let report = self.final_report(&state);
        Ok(RunOutcome { traces, state, report })
    }

    /// Continue a run from a (possibly deserialized) state.
    pub fn resume_with_observer(
        &self,
        state: &mut EngineState,
        traces: &mut Vec<IterationTrace>,
        observer: &mut impl FnMut(&IterationTrace, &EngineState),
    ) -> Result<(), EngineError> {
        while !state.converged && state.iteration < self.config.max_iterations {
            let trace = self.step(state)?;
            observer(&trace, state);
            traces.push(trace);
        }
        if self.config.max_iterations == 0 {
            state.converged = true;
        }
        Ok(())
    }

    pub fn run(&self) -> Result<RunOutcome, EngineError> {
        self.run_with_observer(|_, _| {})
    }
}

/// Outcome of the late-fusion baseline: independent single-model runs whose
/// detectors are fused only at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub single_runs: Vec<RunOutcome>,
    pub fused_test_map: Option<f64>,
    pub fused_corloc: Option<f64>,
    pub report: FinalReport,
}

/// Fuse the detectors of already-completed single-model runs at evaluation
/// time, producing the late-fusion baseline numbers.
pub fn fuse_singles(
    config: &RunConfig,
    data: &DatasetSplit,
    single_runs: &[RunOutcome],
) -> Result<EnsembleOutcome, EngineError> {
    let models: Vec<DetectorModel> = single_runs
        .iter()
        .enumerate()
        .map(|(j, run)| run.state.models[0].with_model_id(j))
        .collect();
    let eval_config = RunConfig { mode: RunMode::SplEnsemble, ..config.clone() };
    let engine = Engine::new(&eval_config, data)?;
    let ap = engine.evaluate_fused_on_test(&models);
    let loc = engine.evaluate_fused_corloc(&models);

    // union pseudo pool across the independent runs, for the report columns
    let mut merged_state = single_runs[0].state.clone();
    merged_state.models = models;
    merged_state.training_pseudo =
        single_runs.iter().map(|r| r.state.training_pseudo[0].clone()).collect();
    merged_state.selections = single_runs
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let mut s = r.state.selections[0].clone();
            s.model_id = j;
            s
        })
        .collect();
    let report = engine.final_report(&merged_state);

    Ok(EnsembleOutcome {
        single_runs: single_runs.to_vec(),
        fused_test_map: ap.mean,
        fused_corloc: loc.mean,
        report,
    })
}

/// Train each configured model as its own independent self-paced run (no
/// agreement coupling, pseudo labels from its own detections), then fuse the
/// resulting detectors at evaluation time only.
pub fn run_ensemble_baseline(
    config: &RunConfig,
    data: &DatasetSplit,
) -> Result<EnsembleOutcome, EngineError> {
    let mut single_runs = Vec::with_capacity(config.models.len());
    for spec in &config.models {
        let single =
            RunConfig { mode: RunMode::SplSingle, models: vec![spec.clone()], ..config.clone() };
        let outcome = Engine::new(&single, data)?.run()?;
        single_runs.push(outcome);
    }
    fuse_singles(config, data, &single_runs)
}
