//! The self-paced / multi-modal selection core: the closed-form selection
//! update, the pace schedule, the agreement regularizer, and the training
//! objective.
//!
//! Selection for model `j` works on adjusted losses
//! `A[i][c] = L[j][i][c] - sum_k gamma[j][k] * v_k[i][c]`: an image another
//! model already selected gets a discount, so the effective pace threshold
//! rises for it. An entry is selected when its adjusted loss clears the
//! per-class threshold; the pace is expressed as per-class target counts,
//! with the scalar threshold recovered as the corresponding order statistic.
//! The row constraint (at most one class per image) is enforced afterwards
//! by keeping the class with the lowest adjusted loss; dropped classes are
//! not re-filled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SelectorError {
    #[error("model {model}: selected entry (image {image}, class {class}) has infinite loss")]
    InfiniteSelected { model: usize, image: usize, class: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Binary selection variables for one model, `u` images by `C` classes.
///
/// Stored as one optional class per image, which makes the row constraint
/// (each row sums to at most 1) hold by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    pub model_id: usize,
    num_classes: usize,
    rows: Vec<Option<usize>>,
}

impl SelectionMatrix {
    /// The all-zero matrix.
    pub fn empty(model_id: usize, num_images: usize, num_classes: usize) -> Self {
        Self { model_id, num_classes, rows: vec![None; num_images] }
    }

    pub fn from_rows(model_id: usize, num_classes: usize, rows: Vec<Option<usize>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|&c| c < num_classes));
        Self { model_id, num_classes, rows }
    }

    pub fn num_images(&self) -> usize {
        self.rows.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_selected(&self, image: usize, class: usize) -> bool {
        self.rows[image] == Some(class)
    }

    pub fn selected_class(&self, image: usize) -> Option<usize> {
        self.rows[image]
    }

    pub fn set(&mut self, image: usize, class: Option<usize>) {
        debug_assert!(class.is_none_or(|c| c < self.num_classes));
        self.rows[image] = class;
    }

    /// Selected (image, class) pairs in image order.
    pub fn iter_selected(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c)))
    }

    pub fn count_for_class(&self, class: usize) -> usize {
        self.rows.iter().filter(|c| **c == Some(class)).count()
    }

    pub fn selected_count(&self) -> usize {
        self.rows.iter().filter(|c| c.is_some()).count()
    }
}

/// Per-model-pair agreement weights; symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaMatrix {
    values: Vec<Vec<f64>>,
}

impl GammaMatrix {
    pub fn uniform(num_models: usize, gamma: f64) -> Self {
        let values = (0..num_models)
            .map(|i| (0..num_models).map(|j| if i == j { 0.0 } else { gamma }).collect())
            .collect();
        Self { values }
    }

    /// The untuned default: `0.2 / (m - 1)` off-diagonal; no coupling for a
    /// single model.
    pub fn default_for(num_models: usize) -> Self {
        Self::uniform(num_models, default_gamma(num_models))
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a][b]
    }

    pub fn num_models(&self) -> usize {
        self.values.len()
    }
}

/// The default agreement weight `0.2 / (m - 1)`; zero for `m < 2` where the
/// term does not exist.
pub fn default_gamma(num_models: usize) -> f64 {
    if num_models < 2 {
        0.0
    } else {
        0.2 / (num_models - 1) as f64
    }
}

/// Pace state: iteration counter, per-class selection targets (the count
/// form of the pace threshold), and the agreement weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaceState {
    /// 1-based iteration counter.
    pub iteration: usize,
    /// Target selection count per class.
    pub targets: Vec<usize>,
    pub gamma: GammaMatrix,
}

impl PaceState {
    pub fn new(initial_per_class: usize, num_classes: usize, gamma: GammaMatrix) -> Self {
        Self { iteration: 1, targets: vec![initial_per_class; num_classes], gamma }
    }
}

/// Grow every class target by the factor `(k+1)/k` (half-up rounding) and
/// advance the iteration counter.
pub fn advance_pace(pace: &PaceState) -> PaceState {
    let k = pace.iteration as u64;
    let targets = pace
        .targets
        .iter()
        .map(|&r| {
            let r = r as u64;
            ((2 * r * (k + 1) + k) / (2 * k)) as usize
        })
        .collect();
    PaceState { iteration: pace.iteration + 1, targets, gamma: pace.gamma.clone() }
}

/// Per-image per-class losses for one model; `f64::INFINITY` marks a class
/// with no pseudo box in that image.
///
/// Serialized with `null` standing in for the infinite entries, since JSON
/// has no infinity literal.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    pub values: Vec<Vec<f64>>,
}

impl Serialize for LossMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = self
            .values
            .iter()
            .map(|row| row.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LossMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows: Vec<Vec<Option<f64>>> = Vec::deserialize(deserializer)?;
        Ok(LossMatrix::new(
            rows.into_iter()
                .map(|row| row.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
                .collect(),
        ))
    }
}

impl LossMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        debug_assert!(values.iter().flatten().all(|v| *v >= 0.0 || v.is_infinite()));
        Self { values }
    }

    pub fn num_images(&self) -> usize {
        self.values.len()
    }

    pub fn num_classes(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }

    pub fn get(&self, image: usize, class: usize) -> f64 {
        self.values[image][class]
    }
}

/// Losses for every model; `models[j]` is model j's matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTensor {
    pub models: Vec<LossMatrix>,
}

fn adjusted_loss(
    model_id: usize,
    losses: &LossMatrix,
    gamma: &GammaMatrix,
    others: &[&SelectionMatrix],
    image: usize,
    class: usize,
) -> f64 {
    let mut a = losses.get(image, class);
    for other in others {
        if other.is_selected(image, class) {
            a -= gamma.get(model_id, other.model_id);
        }
    }
    a
}

/// Enforce the row constraint: keep, per image, only the class with the
/// lowest adjusted loss (ties to the lowest class index).
fn enforce_rows(
    model_id: usize,
    num_classes: usize,
    candidates: &[Vec<usize>], // per image, sorted candidate classes
    adjusted: impl Fn(usize, usize) -> f64,
) -> SelectionMatrix {
    let rows = candidates
        .iter()
        .enumerate()
        .map(|(i, classes)| {
            classes
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    adjusted(i, a).partial_cmp(&adjusted(i, b)).expect("NaN loss").then(a.cmp(&b))
                })
        })
        .collect();
    SelectionMatrix { model_id, num_classes, rows }
}

/// Closed-form selection update in threshold form: select `(i, c)` iff the
/// adjusted loss is finite and strictly below `lambdas[c]`, then enforce the
/// row constraint. Exactly block-optimal when the threshold is shared
/// across classes.
pub fn update_v_with_thresholds(
    model_id: usize,
    losses: &LossMatrix,
    lambdas: &[f64],
    gamma: &GammaMatrix,
    others: &[&SelectionMatrix],
) -> SelectionMatrix {
    let (u, c_count) = (losses.num_images(), losses.num_classes());
    let adj = |i: usize, c: usize| adjusted_loss(model_id, losses, gamma, others, i, c);
    let mut candidates = vec![Vec::new(); u];
    for (i, row) in candidates.iter_mut().enumerate() {
        for c in 0..c_count {
            let a = adj(i, c);
            if a.is_finite() && a < lambdas[c] {
                row.push(c);
            }
        }
    }
    enforce_rows(model_id, c_count, &candidates, adj)
}

/// Result of a count-form selection update: the matrix plus the per-class
/// thresholds the targets implied (used when evaluating the objective).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionUpdate {
    pub matrix: SelectionMatrix,
    pub lambdas: Vec<f64>,
}

/// Closed-form selection update in count form: per class, the threshold is
/// the `targets[c]`-th smallest finite adjusted loss and exactly the entries
/// at or below it are selected (classes with fewer finite entries select all
/// of them), then the row constraint is enforced. Rows dropped by the
/// constraint are not re-filled.
///
/// A class that selects nothing reports a threshold of 0.0; the value is
/// arbitrary because no objective term carries it.
pub fn update_v(
    model_id: usize,
    losses: &LossMatrix,
    pace: &PaceState,
    others: &[&SelectionMatrix],
) -> SelectionUpdate {
    let (u, c_count) = (losses.num_images(), losses.num_classes());
    let adj = |i: usize, c: usize| adjusted_loss(model_id, losses, &pace.gamma, others, i, c);

    let mut candidates = vec![Vec::new(); u];
    let mut lambdas = vec![0.0; c_count];
    for c in 0..c_count {
        let mut finite: Vec<(f64, usize)> =
            (0..u).filter_map(|i| {
                let a = adj(i, c);
                a.is_finite().then_some((a, i))
            }).collect();
        finite.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("NaN loss").then(x.1.cmp(&y.1)));
        let take = pace.targets.get(c).copied().unwrap_or(0).min(finite.len());
        if take > 0 {
            lambdas[c] = finite[take - 1].0;
            for &(_, i) in &finite[..take] {
                candidates[i].push(c);
            }
        }
    }
    for row in &mut candidates {
        row.sort_unstable();
    }
    let matrix = enforce_rows(model_id, c_count, &candidates, adj);
    SelectionUpdate { matrix, lambdas }
}

/// The selection-dependent part of the training objective:
/// `sum_j v_j . L_j  -  sum_j lambda_j . v_j  -  sum_{j1<j2} gamma * <V_j1, V_j2>`.
///
/// Unselected entries contribute nothing even at infinite loss (only
/// selected terms enter the sums); a selected entry with infinite loss is an
/// error. The supervised term over labeled data is constant with respect to
/// the selection and excluded.
pub fn objective(
    losses: &LossTensor,
    selections: &[SelectionMatrix],
    lambdas: &[Vec<f64>],
    gamma: &GammaMatrix,
) -> Result<f64, SelectorError> {
    if losses.models.len() != selections.len() || selections.len() != lambdas.len() {
        return Err(SelectorError::ShapeMismatch(format!(
            "{} loss matrices, {} selections, {} lambda vectors",
            losses.models.len(),
            selections.len(),
            lambdas.len()
        )));
    }
    let mut total = 0.0;
    for (j, (matrix, loss)) in selections.iter().zip(&losses.models).enumerate() {
        for (i, c) in matrix.iter_selected() {
            let l = loss.get(i, c);
            if l.is_infinite() {
                return Err(SelectorError::InfiniteSelected { model: j, image: i, class: c });
            }
            total += l;
        }
    }
    for (j, matrix) in selections.iter().enumerate() {
        for (_, c) in matrix.iter_selected() {
            total -= lambdas[j][c];
        }
    }
    for j1 in 0..selections.len() {
        for j2 in (j1 + 1)..selections.len() {
            let mut agreement = 0usize;
            for i in 0..selections[j1].num_images() {
                if let (Some(a), Some(b)) =
                    (selections[j1].selected_class(i), selections[j2].selected_class(i))
                {
                    if a == b {
                        agreement += 1;
                    }
                }
            }
            total -= gamma.get(selections[j1].model_id, selections[j2].model_id)
                * agreement as f64;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(values: Vec<Vec<f64>>) -> LossMatrix {
        LossMatrix::new(values)
    }

    #[test]
    fn threshold_update_selects_below_lambda() {
        // single image, single class: loss 0.5 under threshold 0.6
        let l = loss(vec![vec![0.5]]);
        let v = update_v_with_thresholds(0, &l, &[0.6], &GammaMatrix::default_for(1), &[]);
        assert!(v.is_selected(0, 0));
        // at or above the threshold stays out
        let v = update_v_with_thresholds(0, &l, &[0.5], &GammaMatrix::default_for(1), &[]);
        assert_eq!(v.selected_count(), 0);
    }

    #[test]
    fn other_model_raises_effective_threshold() {
        // loss 0.5, lambda 0.4 alone: out. With gamma 0.2 and the other
        // model selecting the entry, the effective threshold is 0.6: in.
        let l = loss(vec![vec![0.5]]);
        let gamma = GammaMatrix::uniform(2, 0.2);
        let alone = update_v_with_thresholds(0, &l, &[0.4], &gamma, &[]);
        assert_eq!(alone.selected_count(), 0);
        let other = SelectionMatrix::from_rows(1, 1, vec![Some(0)]);
        let boosted = update_v_with_thresholds(0, &l, &[0.4], &gamma, &[&other]);
        assert!(boosted.is_selected(0, 0));
    }

    #[test]
    fn row_conflict_keeps_lowest_loss_class() {
        // image passes for two classes; only the lower-loss one survives
        let l = loss(vec![vec![0.3, 0.2]]);
        let v = update_v_with_thresholds(0, &l, &[0.9, 0.9], &GammaMatrix::default_for(1), &[]);
        assert_eq!(v.selected_class(0), Some(1));
        // tie at equal loss goes to the lower class index
        let l = loss(vec![vec![0.2, 0.2]]);
        let v = update_v_with_thresholds(0, &l, &[0.9, 0.9], &GammaMatrix::default_for(1), &[]);
        assert_eq!(v.selected_class(0), Some(0));
    }

    #[test]
    fn count_form_selects_target_count() {
        let l = loss(vec![
            vec![0.1, f64::INFINITY],
            vec![0.3, 0.05],
            vec![0.2, f64::INFINITY],
            vec![f64::INFINITY, 0.4],
        ]);
        let pace = PaceState::new(2, 2, GammaMatrix::default_for(1));
        let update = update_v(0, &l, &pace, &[]);
        // class 0: two smallest finite losses are images 0 and 2
        assert!(update.matrix.is_selected(0, 0));
        assert!(update.matrix.is_selected(2, 0));
        // class 1: images 1 and 3
        assert!(update.matrix.is_selected(1, 1));
        assert!(update.matrix.is_selected(3, 1));
        assert_eq!(update.lambdas, vec![0.2, 0.4]);
    }

    #[test]
    fn count_form_takes_all_when_fewer_finite() {
        let l = loss(vec![vec![0.1], vec![f64::INFINITY]]);
        let pace = PaceState::new(5, 1, GammaMatrix::default_for(1));
        let update = update_v(0, &l, &pace, &[]);
        assert_eq!(update.matrix.selected_count(), 1);
        assert_eq!(update.lambdas, vec![0.1]);
    }

    #[test]
    fn count_form_row_conflict_drops_without_refill() {
        // both classes want image 0; class 1 wins (0.1 < 0.2), class 0's
        // count drops to zero and is not refilled from image 1
        let l = loss(vec![vec![0.2, 0.1], vec![0.5, f64::INFINITY]]);
        let pace = PaceState::new(1, 2, GammaMatrix::default_for(1));
        let update = update_v(0, &l, &pace, &[]);
        assert_eq!(update.matrix.selected_class(0), Some(1));
        assert_eq!(update.matrix.selected_class(1), None);
        assert_eq!(update.matrix.count_for_class(0), 0);
    }

    #[test]
    fn pace_schedule_triples() {
        // starting from R = k = 3: targets follow 3k for k = 1..6
        let mut pace = PaceState::new(3, 2, GammaMatrix::default_for(1));
        for k in 1..=6usize {
            assert_eq!(pace.iteration, k);
            assert!(pace.targets.iter().all(|&r| r == 3 * k));
            pace = advance_pace(&pace);
        }
    }

    #[test]
    fn pace_zero_is_fixed_point() {
        let pace = PaceState { iteration: 4, targets: vec![0, 7], gamma: GammaMatrix::default_for(1) };
        let next = advance_pace(&pace);
        assert_eq!(next.targets[0], 0);
        assert_eq!(next.targets[1], 9); // round(7 * 5 / 4) = round(8.75)
        assert_eq!(next.iteration, 5);
    }

    #[test]
    fn pace_rounds_half_up() {
        // 1 * 3/2 = 1.5 rounds to 2
        let pace = PaceState { iteration: 2, targets: vec![1], gamma: GammaMatrix::default_for(1) };
        assert_eq!(advance_pace(&pace).targets[0], 2);
    }

    #[test]
    fn objective_examples() {
        // empty selection
        let tensor = LossTensor { models: vec![loss(vec![vec![0.5]])] };
        let empty = SelectionMatrix::empty(0, 1, 1);
        let gamma = GammaMatrix::default_for(1);
        assert_eq!(objective(&tensor, &[empty], &[vec![0.6]], &gamma).unwrap(), 0.0);

        // one selected entry: 0.5 - 0.6 = -0.1
        let sel = SelectionMatrix::from_rows(0, 1, vec![Some(0)]);
        let v = objective(&tensor, &[sel], &[vec![0.6]], &gamma).unwrap();
        assert!((v - (-0.1)).abs() < 1e-12);

        // two models agreeing on the same entry, gamma 0.1:
        // 2 * (0.5 - 0.6) - 0.1 = -0.3
        let tensor2 = LossTensor { models: vec![loss(vec![vec![0.5]]), loss(vec![vec![0.5]])] };
        let sels = [
            SelectionMatrix::from_rows(0, 1, vec![Some(0)]),
            SelectionMatrix::from_rows(1, 1, vec![Some(0)]),
        ];
        let v = objective(
            &tensor2,
            &sels,
            &[vec![0.6], vec![0.6]],
            &GammaMatrix::uniform(2, 0.1),
        )
        .unwrap();
        assert!((v - (-0.3)).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_selected_infinite_loss() {
        let tensor = LossTensor { models: vec![loss(vec![vec![f64::INFINITY]])] };
        let sel = SelectionMatrix::from_rows(0, 1, vec![Some(0)]);
        let err = objective(&tensor, &[sel], &[vec![0.6]], &GammaMatrix::default_for(1));
        assert_eq!(
            err.unwrap_err(),
            SelectorError::InfiniteSelected { model: 0, image: 0, class: 0 }
        );
    }

    #[test]
    fn objective_ignores_unselected_infinite_loss() {
        let tensor =
            LossTensor { models: vec![loss(vec![vec![0.5, f64::INFINITY]])] };
        let sel = SelectionMatrix::from_rows(0, 2, vec![Some(0)]);
        let v = objective(&tensor, &[sel], &[vec![0.6, 0.6]], &GammaMatrix::default_for(1));
        assert!((v.unwrap() - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn gamma_defaults() {
        assert_eq!(default_gamma(3), 0.1);
        assert_eq!(default_gamma(2), 0.2);
        let single = GammaMatrix::default_for(1);
        assert_eq!(single.num_models(), 1);
        assert_eq!(single.get(0, 0), 0.0);
        let triple = GammaMatrix::default_for(3);
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 0.0 } else { 0.1 };
                assert_eq!(triple.get(a, b), expect);
                assert_eq!(triple.get(a, b), triple.get(b, a));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_losses(u: usize, c: usize) -> impl Strategy<Value = LossMatrix> {
            proptest::collection::vec(
                proptest::collection::vec(
                    prop_oneof![3 => 0.0f64..1.0, 1 => Just(f64::INFINITY)],
                    c,
                ),
                u,
            )
            .prop_map(LossMatrix::new)
        }

        fn feasible_other(losses: &LossMatrix, model_id: usize) -> SelectionMatrix {
            // deterministic "other" matrix: select the first finite class of
            // every even image
            let rows = losses
                .values
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    if i % 2 == 0 {
                        row.iter().position(|l| l.is_finite())
                    } else {
                        None
                    }
                })
                .collect();
            SelectionMatrix::from_rows(model_id, losses.num_classes(), rows)
        }

        proptest! {
            #[test]
            fn count_form_respects_targets_and_rows(
                losses in arb_losses(8, 3),
                r0 in 0usize..6,
                r1 in 0usize..6,
                r2 in 0usize..6,
            ) {
                let pace = PaceState {
                    iteration: 1,
                    targets: vec![r0, r1, r2],
                    gamma: GammaMatrix::default_for(2),
                };
                let other = feasible_other(&losses, 1);
                let update = update_v(0, &losses, &pace, &[&other]);
                for (c, &r) in pace.targets.iter().enumerate() {
                    prop_assert!(update.matrix.count_for_class(c) <= r);
                }
                // selected entries always carry finite loss
                for (i, c) in update.matrix.iter_selected() {
                    prop_assert!(losses.get(i, c).is_finite());
                }
            }

            /// Another model selecting (i, c) never causes this model to
            /// drop (i, c): the effective threshold only rises.
            #[test]
            fn cross_model_support_is_monotone(
                losses in arb_losses(6, 2),
                lambda in 0.05f64..0.9,
                flip_image in 0usize..6,
            ) {
                let gamma = GammaMatrix::uniform(2, 0.2);
                let lambdas = vec![lambda; 2];
                let before_other = SelectionMatrix::empty(1, 6, 2);
                let before = update_v_with_thresholds(0, &losses, &lambdas, &gamma, &[&before_other]);
                if let Some(c) = before.selected_class(flip_image) {
                    let mut after_other = before_other.clone();
                    if losses.get(flip_image, c).is_finite() {
                        after_other.set(flip_image, Some(c));
                        let after = update_v_with_thresholds(0, &losses, &lambdas, &gamma, &[&after_other]);
                        prop_assert!(after.is_selected(flip_image, c));
                    }
                }
            }

            /// With a shared threshold the update is the exact block
            /// minimizer, so it can only improve on any feasible start.
            #[test]
            fn threshold_update_descends(
                losses in arb_losses(6, 2),
                lambda in 0.05f64..0.9,
            ) {
                let gamma = GammaMatrix::default_for(1);
                let lambdas = vec![vec![lambda; 2]];
                let tensor = LossTensor { models: vec![losses.clone()] };
                let start = feasible_other(&losses, 0);
                let before = objective(&tensor, &[start], &lambdas, &gamma).unwrap();
                let updated = update_v_with_thresholds(0, &losses, &lambdas[0], &gamma, &[]);
                let after = objective(&tensor, &[updated], &lambdas, &gamma).unwrap();
                prop_assert!(after <= before + 1e-12);
            }

            /// Advancing the pace never shrinks a target, and grows every
            /// target reachable from a real run (R >= iteration count).
            #[test]
            fn pace_monotone_on_reachable_states(r1 in 1usize..10, steps in 1usize..8) {
                let mut pace = PaceState::new(r1, 1, GammaMatrix::default_for(1));
                for _ in 0..steps {
                    let next = advance_pace(&pace);
                    prop_assert!(next.targets[0] > pace.targets[0]);
                    prop_assert_eq!(next.iteration, pace.iteration + 1);
                    pace = next;
                }
            }
        }
    }
}
