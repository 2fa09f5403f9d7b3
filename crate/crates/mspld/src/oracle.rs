//! Independent brute-force minimizers used to validate the selector.
//!
//! The enumeration walks the row structure (each image picks one of `C+1`
//! options) instead of raw bit matrices, which keeps it honest but fast for
//! the sizes it accepts. Candidates are scored with the same summation order
//! as [`selector::objective`], so agreement checks can compare bit-for-bit.

use rand::Rng;
use thiserror::Error;

use crate::rng::{purpose, stream};
use crate::selector::{
    self, GammaMatrix, LossMatrix, LossTensor, SelectionMatrix,
};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance too large for brute force: u={images}, C={classes}, m={models} (limits {limit})")]
    InstanceTooLarge { images: usize, classes: usize, models: usize, limit: &'static str },
}

const SINGLE_LIMITS: (usize, usize) = (8, 3); // (u, C)
const JOINT_LIMITS: (usize, usize, usize) = (4, 2, 2); // (u, C, m)

/// Objective restricted to one model's terms, mirroring the summation order
/// of the full objective: selected losses, then pace terms, then agreement.
fn restricted_objective(
    model_id: usize,
    losses: &LossMatrix,
    lambdas: &[f64],
    gamma: &GammaMatrix,
    others: &[&SelectionMatrix],
    rows: &[Option<usize>],
) -> f64 {
    let mut total = 0.0;
    for (i, c) in rows.iter().enumerate() {
        if let Some(c) = c {
            total += losses.get(i, *c);
        }
    }
    for c in rows.iter().flatten() {
        total -= lambdas[*c];
    }
    for other in others {
        let mut agreement = 0usize;
        for (i, c) in rows.iter().enumerate() {
            if let Some(c) = c {
                if other.is_selected(i, *c) {
                    agreement += 1;
                }
            }
        }
        total -= gamma.get(model_id, other.model_id) * agreement as f64;
    }
    total
}

/// Row-choice encoding for lexicographic tie-breaking: none sorts before
/// class 0, which sorts before class 1, and so on.
fn encode(rows: &[Option<usize>]) -> Vec<usize> {
    rows.iter().map(|c| c.map_or(0, |c| c + 1)).collect()
}

/// Iterate every feasible row assignment (`None` or a finite-loss class per
/// image), calling `visit` with the candidate rows.
fn enumerate_rows(losses: &LossMatrix, mut visit: impl FnMut(&[Option<usize>])) {
    let u = losses.num_images();
    let options: Vec<Vec<Option<usize>>> = (0..u)
        .map(|i| {
            let mut opts = vec![None];
            for c in 0..losses.num_classes() {
                if losses.get(i, c).is_finite() {
                    opts.push(Some(c));
                }
            }
            opts
        })
        .collect();
    let mut counters = vec![0usize; u];
    let mut rows: Vec<Option<usize>> = counters
        .iter()
        .enumerate()
        .map(|(i, &k)| options[i][k])
        .collect();
    loop {
        visit(&rows);
        // odometer increment
        let mut pos = u;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            counters[pos] += 1;
            if counters[pos] < options[pos].len() {
                rows[pos] = options[pos][counters[pos]];
                break;
            }
            counters[pos] = 0;
            rows[pos] = options[pos][0];
        }
    }
}

/// Enumerate every selection matrix satisfying the row constraints and
/// return one minimizing the objective restricted to `model_id`'s terms.
/// Ties go to the lexicographically smallest matrix (per image: none, then
/// ascending class index).
pub fn brute_force_best_v(
    model_id: usize,
    losses: &LossMatrix,
    lambdas: &[f64],
    gamma: &GammaMatrix,
    others: &[&SelectionMatrix],
) -> Result<SelectionMatrix, OracleError> {
    let (u, c) = (losses.num_images(), losses.num_classes());
    if u > SINGLE_LIMITS.0 || c > SINGLE_LIMITS.1 {
        return Err(OracleError::InstanceTooLarge {
            images: u,
            classes: c,
            models: 1,
            limit: "u<=8, C<=3",
        });
    }
    let mut best_rows: Option<Vec<Option<usize>>> = None;
    let mut best_value = f64::INFINITY;
    enumerate_rows(losses, |rows| {
        let value = restricted_objective(model_id, losses, lambdas, gamma, others, rows);
        let better = match &best_rows {
            None => true,
            Some(current) => {
                value < best_value || (value == best_value && encode(rows) < encode(current))
            }
        };
        if better {
            best_value = value;
            best_rows = Some(rows.to_vec());
        }
    });
    Ok(SelectionMatrix::from_rows(model_id, c, best_rows.expect("at least the empty assignment")))
}

/// Exact joint minimizer over all models' matrices on tiny instances.
pub fn brute_force_joint(
    losses: &LossTensor,
    lambdas: &[Vec<f64>],
    gamma: &GammaMatrix,
) -> Result<Vec<SelectionMatrix>, OracleError> {
    let m = losses.models.len();
    let u = losses.models.first().map_or(0, LossMatrix::num_images);
    let c = losses.models.first().map_or(0, LossMatrix::num_classes);
    if u > JOINT_LIMITS.0 || c > JOINT_LIMITS.1 || m > JOINT_LIMITS.2 {
        return Err(OracleError::InstanceTooLarge {
            images: u,
            classes: c,
            models: m,
            limit: "u<=4, C<=2, m<=2",
        });
    }

    // collect each model's feasible assignments once
    let mut per_model: Vec<Vec<Vec<Option<usize>>>> = Vec::with_capacity(m);
    for model in &losses.models {
        let mut all = Vec::new();
        enumerate_rows(model, |rows| all.push(rows.to_vec()));
        per_model.push(all);
    }

    let mut best: Option<(f64, Vec<SelectionMatrix>)> = None;
    let mut counters = vec![0usize; m];
    loop {
        let candidate: Vec<SelectionMatrix> = counters
            .iter()
            .enumerate()
            .map(|(j, &k)| SelectionMatrix::from_rows(j, c, per_model[j][k].clone()))
            .collect();
        let value = selector::objective(losses, &candidate, lambdas, gamma)
            .expect("enumeration only selects finite-loss entries");
        let better = match &best {
            None => true,
            Some((best_value, best_candidate)) => {
                value < *best_value
                    || (value == *best_value
                        && counters
                            .iter()
                            .enumerate()
                            .map(|(j, &k)| encode(&per_model[j][k]))
                            .collect::<Vec<_>>()
                            < best_candidate
                                .iter()
                                .map(|s| {
                                    encode(
                                        &(0..u).map(|i| s.selected_class(i)).collect::<Vec<_>>(),
                                    )
                                })
                                .collect::<Vec<_>>())
            }
        };
        if better {
            best = Some((value, candidate));
        }
        let mut pos = m;
        let done = loop {
            if pos == 0 {
                break true;
            }
            pos -= 1;
            counters[pos] += 1;
            if counters[pos] < per_model[pos].len() {
                break false;
            }
            counters[pos] = 0;
        };
        if done {
            break;
        }
    }
    Ok(best.expect("at least the all-empty assignment").1)
}

/// A randomly drawn selection subproblem: losses with infinite holes, one
/// shared pace threshold per model, default agreement weights, and feasible
/// starting selections.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub losses: LossTensor,
    pub lambdas: Vec<Vec<f64>>,
    pub gamma: GammaMatrix,
    pub starts: Vec<SelectionMatrix>,
}

/// Draw instance `index` from the seeded family: 1..=8 images, 1..=3
/// classes, ~20% infinite losses, per-model threshold shared across classes
/// (the scalar pace regime where the closed-form update is exactly
/// block-optimal).
pub fn random_instance(seed: u64, index: u64, num_models: usize) -> RandomInstance {
    let mut rng = stream(seed, &[purpose::ORACLE, index]);
    let u = rng.random_range(1..=SINGLE_LIMITS.0);
    let c = rng.random_range(1..=SINGLE_LIMITS.1);
    let mut models = Vec::with_capacity(num_models);
    for _ in 0..num_models {
        let values = (0..u)
            .map(|_| {
                (0..c)
                    .map(|_| {
                        if rng.random::<f64>() < 0.2 {
                            f64::INFINITY
                        } else {
                            rng.random::<f64>()
                        }
                    })
                    .collect()
            })
            .collect();
        models.push(LossMatrix::new(values));
    }
    let lambdas: Vec<Vec<f64>> =
        (0..num_models).map(|_| vec![rng.random_range(0.05..0.95); c]).collect();
    let starts = models
        .iter()
        .enumerate()
        .map(|(j, loss)| {
            let rows = (0..u)
                .map(|i| {
                    if rng.random::<f64>() < 0.4 {
                        return None;
                    }
                    let finite: Vec<usize> =
                        (0..c).filter(|&cc| loss.get(i, cc).is_finite()).collect();
                    if finite.is_empty() {
                        None
                    } else {
                        Some(finite[rng.random_range(0..finite.len())])
                    }
                })
                .collect();
            SelectionMatrix::from_rows(j, c, rows)
        })
        .collect();
    RandomInstance {
        losses: LossTensor { models },
        lambdas,
        gamma: GammaMatrix::default_for(num_models),
        starts,
    }
}

/// One selector-vs-oracle comparison: run both on the same single-model
/// instance and compare objective values bit-for-bit.
#[derive(Debug, Clone)]
pub struct EquivalenceOutcome {
    pub index: u64,
    pub selector_objective: f64,
    pub oracle_objective: f64,
}

impl EquivalenceOutcome {
    pub fn exact(&self) -> bool {
        self.selector_objective.to_bits() == self.oracle_objective.to_bits()
    }
}

/// Run `n` seeded single-model instances through both the closed-form update
/// and the brute-force oracle.
pub fn equivalence_check(n_instances: u64, seed: u64) -> Vec<EquivalenceOutcome> {
    (0..n_instances)
        .map(|index| {
            let instance = random_instance(seed, index, 1);
            let losses = &instance.losses.models[0];
            let selected = selector::update_v_with_thresholds(
                0,
                losses,
                &instance.lambdas[0],
                &instance.gamma,
                &[],
            );
            let oracle = brute_force_best_v(0, losses, &instance.lambdas[0], &instance.gamma, &[])
                .expect("instance within limits");
            let selector_objective = selector::objective(
                &instance.losses,
                std::slice::from_ref(&selected),
                &instance.lambdas,
                &instance.gamma,
            )
            .expect("selector never selects infinite losses");
            let oracle_objective = selector::objective(
                &instance.losses,
                std::slice::from_ref(&oracle),
                &instance.lambdas,
                &instance.gamma,
            )
            .expect("oracle never selects infinite losses");
            EquivalenceOutcome { index, selector_objective, oracle_objective }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::{update_v_with_thresholds, PaceState};

    #[test]
    fn nothing_profitable_selects_nothing() {
        let losses = LossMatrix::new(vec![vec![0.9, 0.8], vec![0.7, 0.95]]);
        let v = brute_force_best_v(0, &losses, &[0.1, 0.1], &GammaMatrix::default_for(1), &[])
            .unwrap();
        assert_eq!(v.selected_count(), 0);
    }

    #[test]
    fn two_case_enumeration() {
        // u=1, C=1, L=0.5, lambda=0.6: selecting wins at -0.1
        let losses = LossMatrix::new(vec![vec![0.5]]);
        let v = brute_force_best_v(0, &losses, &[0.6], &GammaMatrix::default_for(1), &[]).unwrap();
        assert!(v.is_selected(0, 0));
        let obj = selector::objective(
            &LossTensor { models: vec![losses] },
            std::slice::from_ref(&v),
            &[vec![0.6]],
            &GammaMatrix::default_for(1),
        )
        .unwrap();
        assert!((obj - (-0.1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_oversized_instances() {
        let losses = LossMatrix::new(vec![vec![0.5; 4]; 3]);
        let err = brute_force_best_v(0, &losses, &[0.5; 4], &GammaMatrix::default_for(1), &[]);
        assert!(matches!(err, Err(OracleError::InstanceTooLarge { .. })));
        let losses = LossMatrix::new(vec![vec![0.5; 2]; 9]);
        let err = brute_force_best_v(0, &losses, &[0.5; 2], &GammaMatrix::default_for(1), &[]);
        assert!(matches!(err, Err(OracleError::InstanceTooLarge { .. })));
    }

    #[test]
    fn selector_matches_oracle_on_200_instances() {
        let outcomes = equivalence_check(200, 1);
        let exact = outcomes.iter().filter(|o| o.exact()).count();
        assert_eq!(exact, 200, "selector/oracle disagreement");
    }

    #[test]
    fn selector_matches_oracle_with_other_models() {
        // m=2 regime: model 0 updated against a fixed model-1 selection
        for index in 0..100u64 {
            let instance = random_instance(7, index, 2);
            let losses = &instance.losses.models[0];
            let other = &instance.starts[1];
            let selected = update_v_with_thresholds(
                0,
                losses,
                &instance.lambdas[0],
                &instance.gamma,
                &[other],
            );
            let oracle =
                brute_force_best_v(0, losses, &instance.lambdas[0], &instance.gamma, &[other])
                    .unwrap();
            let rows_sel: Vec<_> = (0..losses.num_images())
                .map(|i| selected.selected_class(i))
                .collect();
            let rows_or: Vec<_> =
                (0..losses.num_images()).map(|i| oracle.selected_class(i)).collect();
            let val_sel = restricted_objective(
                0,
                losses,
                &instance.lambdas[0],
                &instance.gamma,
                &[other],
                &rows_sel,
            );
            let val_or = restricted_objective(
                0,
                losses,
                &instance.lambdas[0],
                &instance.gamma,
                &[other],
                &rows_or,
            );
            assert_eq!(val_sel.to_bits(), val_or.to_bits(), "instance {index}");
        }
    }

    #[test]
    fn oracle_result_is_enumeration_order_independent() {
        // reversing the class option order must not change the outcome;
        // exercised by flipping class columns and mapping back
        for index in 0..50u64 {
            let instance = random_instance(3, index, 1);
            let losses = &instance.losses.models[0];
            let c = losses.num_classes();
            let flipped = LossMatrix::new(
                losses.values.iter().map(|row| row.iter().rev().copied().collect()).collect(),
            );
            let lambdas_flipped: Vec<f64> = instance.lambdas[0].iter().rev().copied().collect();
            let v = brute_force_best_v(0, losses, &instance.lambdas[0], &instance.gamma, &[])
                .unwrap();
            let v_flipped =
                brute_force_best_v(0, &flipped, &lambdas_flipped, &instance.gamma, &[]).unwrap();
            let obj = |m: &SelectionMatrix, l: &LossMatrix, lam: &[f64]| {
                selector::objective(
                    &LossTensor { models: vec![l.clone()] },
                    std::slice::from_ref(m),
                    &[lam.to_vec()],
                    &instance.gamma,
                )
                .unwrap()
            };
            let a = obj(&v, losses, &instance.lambdas[0]);
            let b = obj(&v_flipped, &flipped, &lambdas_flipped);
            assert_eq!(a.to_bits(), b.to_bits(), "instance {index}: {a} vs {b}");
            // equal-loss ties aside, the matrices must agree up to the flip
            let _ = c;
        }
    }

    /// Alternating closed-form updates reach a block-stationary point: no
    /// single model's matrix can be improved once the sweep stops changing.
    #[test]
    fn alternating_updates_reach_block_stationarity() {
        for index in 0..40u64 {
            let mut instance = random_instance(11, index, 2);
            // shrink to joint-oracle limits
            for m in &mut instance.losses.models {
                m.values.truncate(4);
                for row in &mut m.values {
                    row.truncate(2);
                }
            }
            let u = instance.losses.models[0].num_images();
            let c = instance.losses.models[0].num_classes();
            for (lam, _) in instance.lambdas.iter_mut().zip(0..) {
                lam.truncate(c.max(1));
            }
            let mut current: Vec<SelectionMatrix> = (0..2)
                .map(|j| SelectionMatrix::empty(j, u, c))
                .collect();
            for _sweep in 0..10 {
                let mut changed = false;
                for j in 0..2 {
                    let others: Vec<&SelectionMatrix> =
                        current.iter().filter(|s| s.model_id != j).collect();
                    let updated = update_v_with_thresholds(
                        j,
                        &instance.losses.models[j],
                        &instance.lambdas[j],
                        &instance.gamma,
                        &others,
                    );
                    if updated != current[j] {
                        changed = true;
                    }
                    current[j] = updated;
                }
                if !changed {
                    break;
                }
            }
            // at the fixpoint, the per-model oracle finds nothing better
            let full = |sels: &[SelectionMatrix]| {
                selector::objective(&instance.losses, sels, &instance.lambdas, &instance.gamma)
                    .unwrap()
            };
            let fixpoint_value = full(&current);
            for j in 0..2 {
                let others: Vec<&SelectionMatrix> =
                    current.iter().filter(|s| s.model_id != j).collect();
                let best = brute_force_best_v(
                    j,
                    &instance.losses.models[j],
                    &instance.lambdas[j],
                    &instance.gamma,
                    &others,
                )
                .unwrap();
                let mut swapped = current.clone();
                swapped[j] = best;
                assert!(
                    full(&swapped) >= fixpoint_value - 1e-12,
                    "instance {index}: block update improved past the fixpoint"
                );
            }
            // and the joint optimum is a lower bound
            let joint =
                brute_force_joint(&instance.losses, &instance.lambdas, &instance.gamma).unwrap();
            assert!(full(&joint) <= fixpoint_value + 1e-12);
        }
    }

    #[test]
    fn count_form_engine_path_stays_feasible() {
        // the engine drives update_v with count targets; its result must be
        // a feasible point whose restricted value the oracle can only match
        // or beat under the implied thresholds
        for index in 0..60u64 {
            let instance = random_instance(19, index, 1);
            let losses = &instance.losses.models[0];
            let pace = PaceState {
                iteration: 1,
                targets: vec![2; losses.num_classes()],
                gamma: instance.gamma.clone(),
            };
            let update = selector::update_v(0, losses, &pace, &[]);
            let oracle =
                brute_force_best_v(0, losses, &update.lambdas, &instance.gamma, &[]).unwrap();
            let rows = |m: &SelectionMatrix| {
                (0..losses.num_images()).map(|i| m.selected_class(i)).collect::<Vec<_>>()
            };
            let val_up = restricted_objective(
                0,
                losses,
                &update.lambdas,
                &instance.gamma,
                &[],
                &rows(&update.matrix),
            );
            let val_or = restricted_objective(
                0,
                losses,
                &update.lambdas,
                &instance.gamma,
                &[],
                &rows(&oracle),
            );
            assert!(val_or <= val_up + 1e-12, "oracle must lower-bound the count-form update");
        }
    }
}
