//! ROC/AUC and the cohort analyses: median-uncertainty split, retention
//! sweep, and the uncertainty×probability quartile grid.
//!
//! AUC is the Mann–Whitney statistic
//! `(#concordant + 0.5·#tied) / (#pos·#neg)`, computed from ranks with
//! exact integer arithmetic (the doubled rank sum is an integer), so it
//! equals the pairwise definition bit-for-bit and is invariant under any
//! strictly monotone transform of the scores.

use serde::Serialize;

use crate::data::{PatientRecord, Schema};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};
use crate::train::Checkpoint;

/// One scored test instance.
#[derive(Debug, Clone, Serialize)]
pub struct ScoredInstance {
    pub instance_id: u64,
    pub label: bool,
    /// Predicted positive-class (mortality) probability.
    pub probability: f64,
    /// Learned aleatoric variance σ².
    pub aleatoric_variance: f64,
}

/// Area under the ROC curve. Requires at least one positive and one
/// negative instance.
pub fn auc(instances: &[ScoredInstance]) -> Result<f64> {
    let n_pos = instances.iter().filter(|i| i.label).count();
    let n_neg = instances.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "AUC undefined: {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| {
        instances[a]
            .probability
            .partial_cmp(&instances[b].probability)
            .expect("scores are finite")
    });
    // Doubled rank sum of the positives, walking tie groups so tied
    // scores share the group's average rank. With ranks 1..n the average
    // rank of a group spanning [lo, hi] is (lo+hi)/2, so twice it is the
    // integer lo+hi.
    let mut double_rank_sum: u64 = 0;
    let mut i = 0;
    while i < instances.len() {
        let mut j = i;
        while j + 1 < instances.len()
            && instances[order[j + 1]].probability == instances[order[i]].probability
        {
            j += 1;
        }
        let double_avg_rank = (i as u64 + 1) + (j as u64 + 1);
        for &idx in &order[i..=j] {
            if instances[idx].label {
                double_rank_sum += double_avg_rank;
            }
        }
        i = j + 1;
    }
    // 2U = 2ΣR⁺ − n⁺(n⁺+1); AUC = 2U / (2 n⁺ n⁻).
    let double_u = double_rank_sum - (n_pos as u64) * (n_pos as u64 + 1);
    Ok(double_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Brute-force pairwise AUC, O(n²): counts concordant and tied
/// (positive, negative) pairs directly from the definition.
pub fn auc_pairwise(instances: &[ScoredInstance]) -> Result<f64> {
    let positives: Vec<f64> = instances
        .iter()
        .filter(|i| i.label)
        .map(|i| i.probability)
        .collect();
    let negatives: Vec<f64> = instances
        .iter()
        .filter(|i| !i.label)
        .map(|i| i.probability)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Evaluation("AUC undefined for a single class".into()));
    }
    let mut double_count: u64 = 0;
    for p in &positives {
        for n in &negatives {
            if p > n {
                double_count += 2;
            } else if p == n {
                double_count += 1;
            }
        }
    }
    Ok(double_count as f64 / (2.0 * positives.len() as f64 * negatives.len() as f64))
}

/// Summary of one cohort in a split analysis.
#[derive(Debug, Clone, Serialize)]
pub struct CohortStats {
    pub size: usize,
    pub positives: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MedianSplitReport {
    pub low: CohortStats,
    pub high: CohortStats,
}

/// Splits the population into equal halves (±1) at the median aleatoric
/// variance — ties broken by instance id, the lower half taking the
/// extra instance when the count is odd — and reports AUC and positive
/// counts per half.
pub fn median_split_analysis(instances: &[ScoredInstance]) -> Result<MedianSplitReport> {
    if instances.len() < 2 {
        return Err(Error::Evaluation(
            "median split needs at least two instances".into(),
        ));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| {
        (instances[a].aleatoric_variance, instances[a].instance_id)
            .partial_cmp(&(instances[b].aleatoric_variance, instances[b].instance_id))
            .expect("variances are finite")
    });
    let low_size = instances.len().div_ceil(2);
    let cohort = |indices: &[usize], name: &str| -> Result<CohortStats> {
        let members: Vec<ScoredInstance> =
            indices.iter().map(|&i| instances[i].clone()).collect();
        let auc = auc(&members).map_err(|_| {
            Error::Evaluation(format!(
                "{name}-uncertainty half lacks both classes; its AUC is undefined"
            ))
        })?;
        Ok(CohortStats {
            size: members.len(),
            positives: members.iter().filter(|m| m.label).count(),
            auc,
        })
    };
    Ok(MedianSplitReport {
        low: cohort(&order[..low_size], "low")?,
        high: cohort(&order[low_size..], "high")?,
    })
}

// -------------------------------------------------------- model scoring

/// Scores a set of raw records with one model: bins/imputes with the
/// schema's (training-fitted) statistics, then predicts. Evaluation
/// noise is derived per (model, instance id), so scoring any subset of
/// instances yields bit-identical results to scoring them all.
pub fn score_records(
    model: &Checkpoint,
    records: &[PatientRecord],
    schema: &Schema,
    eval_seed: u64,
) -> Result<Vec<ScoredInstance>> {
    use rayon::prelude::*;
    let eval_root = RngStream::from_seed(eval_seed)
        .derive(streams::EVAL_NOISE)
        .derive(model.member_seed);
    records
        .par_iter()
        .map(|record| {
            let matrix = crate::data::bin_and_impute(record, schema)?;
            let input = matrix.to_input();
            let mut rng = eval_root.derive(record.patient_id);
            let pred = model.predict(&input, &mut rng)?;
            Ok(ScoredInstance {
                instance_id: record.patient_id,
                label: record.label,
                probability: pred.probs[1],
                aleatoric_variance: pred.aleatoric_variance,
            })
        })
        .collect()
}

// ------------------------------------------------------ retention sweep

#[derive(Debug, Clone, Serialize)]
pub struct RetentionRow {
    pub retention: f64,
    pub per_model_median_variance: Vec<f64>,
    pub per_model_auc: Vec<f64>,
    /// Mean across models of the per-model median variance.
    pub aggregate_median_variance: f64,
    /// Mean across models of the per-model AUC.
    pub aggregate_auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetentionSweepReport {
    pub rows: Vec<RetentionRow>,
}

/// For each retention level: thin the raw records, re-run the pipeline,
/// and score with every model. Missingness injection is seeded per
/// (model, retention) pair and derived per patient, so any rescoring is
/// reproducible.
pub fn retention_sweep(
    models: &[Checkpoint],
    records: &[PatientRecord],
    schema: &Schema,
    retentions: &[f64],
    eval_seed: u64,
) -> Result<RetentionSweepReport> {
    if models.is_empty() {
        return Err(Error::Evaluation(
            "retention sweep needs at least one model".into(),
        ));
    }
    let mut rows = Vec::with_capacity(retentions.len());
    for (r_idx, &retention) in retentions.iter().enumerate() {
        let mut medians = Vec::with_capacity(models.len());
        let mut aucs = Vec::with_capacity(models.len());
        for (m_idx, model) in models.iter().enumerate() {
            let thinned = inject_for_model(records, retention, eval_seed, m_idx, r_idx)?;
            let scored = score_records(model, &thinned, schema, eval_seed)?;
            medians.push(median(
                &scored
                    .iter()
                    .map(|s| s.aleatoric_variance)
                    .collect::<Vec<_>>(),
            ));
            aucs.push(auc(&scored)?);
        }
        rows.push(RetentionRow {
            retention,
            aggregate_median_variance: mean(&medians),
            aggregate_auc: mean(&aucs),
            per_model_median_variance: medians,
            per_model_auc: aucs,
        });
    }
    Ok(RetentionSweepReport { rows })
}

/// Thins every record at the given retention with the sweep's seeding
/// convention: one stream per (model index, retention index), derived
/// per patient inside `inject_missingness`.
fn inject_for_model(
    records: &[PatientRecord],
    retention: f64,
    eval_seed: u64,
    model_idx: usize,
    retention_idx: usize,
) -> Result<Vec<PatientRecord>> {
    let stream = RngStream::from_seed(eval_seed)
        .derive(streams::INJECT)
        .derive(model_idx as u64)
        .derive(retention_idx as u64);
    records
        .iter()
        .map(|r| crate::data::inject_missingness(r, retention, &stream))
        .collect()
}

// --------------------------------------------------------- quartile grid

#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    /// Uncertainty quartile, 1 (lowest) to 4 (highest).
    pub uncertainty_quartile: usize,
    /// Probability quartile within the uncertainty quartile, 1 to 4.
    pub probability_quartile: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
    pub per_model_delta: Vec<f64>,
    pub mean_cell_size: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridReport {
    pub baseline_retention: f64,
    pub per_model_baseline_auc: Vec<f64>,
    pub cells: Vec<GridCell>,
}

/// The 16-cell analysis. Per model: score everyone at the baseline
/// retention; partition into 4 uncertainty quartiles, each split into 4
/// probability quartiles (quartiles fixed at baseline, ties broken by
/// (value, id) rank so cells are equal-sized ±1); then rescore one
/// cell's instances with full data, keep everyone else at baseline, and
/// record the AUC change. Deltas aggregate as mean ± std across models.
pub fn quartile_grid_analysis(
    models: &[Checkpoint],
    records: &[PatientRecord],
    schema: &Schema,
    baseline_retention: f64,
    eval_seed: u64,
) -> Result<GridReport> {
    if models.is_empty() {
        return Err(Error::Evaluation(
            "grid analysis needs at least one model".into(),
        ));
    }
    let mut per_model_baseline_auc = Vec::with_capacity(models.len());
    // deltas[cell][model]
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); 16];
    let mut sizes: Vec<Vec<f64>> = vec![Vec::new(); 16];
    for (m_idx, model) in models.iter().enumerate() {
        // Retention index 0 mirrors the sweep convention; the grid uses a
        // single injected retention level per model.
        let thinned = inject_for_model(records, baseline_retention, eval_seed, m_idx, 0)?;
        let baseline = score_records(model, &thinned, schema, eval_seed)?;
        let baseline_auc = auc(&baseline)?;
        per_model_baseline_auc.push(baseline_auc);

        let full = score_records(model, records, schema, eval_seed)?;
        let full_by_id: std::collections::HashMap<u64, &ScoredInstance> =
            full.iter().map(|s| (s.instance_id, s)).collect();

        let cells = partition_into_grid(&baseline);
        for (cell_idx, cell_members) in cells.iter().enumerate() {
            let member_set: std::collections::HashSet<u64> = cell_members
                .iter()
                .map(|&i| baseline[i].instance_id)
                .collect();
            let rescored: Vec<ScoredInstance> = baseline
                .iter()
                .map(|s| {
                    if member_set.contains(&s.instance_id) {
                        (*full_by_id[&s.instance_id]).clone()
                    } else {
                        s.clone()
                    }
                })
                .collect();
            deltas[cell_idx].push(auc(&rescored)? - baseline_auc);
            sizes[cell_idx].push(cell_members.len() as f64);
        }
    }
    let mut cells = Vec::with_capacity(16);
    for u_q in 0..4 {
        for p_q in 0..4 {
            let idx = u_q * 4 + p_q;
            cells.push(GridCell {
                uncertainty_quartile: u_q + 1,
                probability_quartile: p_q + 1,
                mean_delta: mean(&deltas[idx]),
                std_delta: std_dev(&deltas[idx]),
                per_model_delta: deltas[idx].clone(),
                mean_cell_size: mean(&sizes[idx]),
            });
        }
    }
    Ok(GridReport {
        baseline_retention,
        per_model_baseline_auc,
        cells,
    })
}

/// Partitions scored instances into the 16 grid cells. Returns, per cell
/// (uncertainty quartile major, probability quartile minor), the indices
/// into `instances`. Boundary ties are resolved by (value, instance id)
/// lexicographic rank, which guarantees equal sizes ±1.
pub fn partition_into_grid(instances: &[ScoredInstance]) -> Vec<Vec<usize>> {
    let mut by_uncertainty: Vec<usize> = (0..instances.len()).collect();
    by_uncertainty.sort_by(|&a, &b| {
        (instances[a].aleatoric_variance, instances[a].instance_id)
            .partial_cmp(&(instances[b].aleatoric_variance, instances[b].instance_id))
            .expect("variances are finite")
    });
    let mut cells = Vec::with_capacity(16);
    for u_chunk in split_even(&by_uncertainty, 4) {
        let mut by_prob = u_chunk.to_vec();
        by_prob.sort_by(|&a, &b| {
            (instances[a].probability, instances[a].instance_id)
                .partial_cmp(&(instances[b].probability, instances[b].instance_id))
                .expect("probabilities are finite")
        });
        for p_chunk in split_even(&by_prob, 4) {
            cells.push(p_chunk.to_vec());
        }
    }
    cells
}

/// Splits a slice into `k` contiguous chunks whose sizes differ by at
/// most one (earlier chunks take the remainder).
fn split_even<T>(items: &[T], k: usize) -> Vec<&[T]> {
    let n = items.len();
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        out.push(&items[start..start + size]);
        start += size;
    }
    out
}

// ----------------------------------------------------------- statistics

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation; 0 for a single value.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Median (average of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// ROC curve points (false-positive rate, true-positive rate) sweeping
/// the threshold from high to low, one point per distinct score.
pub fn roc_points(instances: &[ScoredInstance]) -> Result<Vec<(f64, f64)>> {
    let n_pos = instances.iter().filter(|i| i.label).count();
    let n_neg = instances.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation("ROC undefined for a single class".into()));
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| {
        instances[b]
            .probability
            .partial_cmp(&instances[a].probability)
            .expect("scores are finite")
    });
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let score = instances[order[i]].probability;
        while i < order.len() && instances[order[i]].probability == score {
            if instances[order[i]].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(id: u64, label: bool, probability: f64, variance: f64) -> ScoredInstance {
        ScoredInstance {
            instance_id: id,
            label,
            probability,
            aleatoric_variance: variance,
        }
    }

    #[test]
    fn perfectly_separated_scores_give_auc_one() {
        let instances = vec![
            scored(0, false, 0.1, 0.0),
            scored(1, false, 0.2, 0.0),
            scored(2, true, 0.8, 0.0),
            scored(3, true, 0.9, 0.0),
        ];
        assert_eq!(auc(&instances).unwrap(), 1.0);
    }

    #[test]
    fn identical_scores_give_auc_half() {
        let instances = vec![
            scored(0, false, 0.5, 0.0),
            scored(1, true, 0.5, 0.0),
            scored(2, false, 0.5, 0.0),
            scored(3, true, 0.5, 0.0),
        ];
        assert_eq!(auc(&instances).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        let instances = vec![scored(0, true, 0.5, 0.0), scored(1, true, 0.6, 0.0)];
        assert!(matches!(auc(&instances), Err(Error::Evaluation(_))));
    }

    #[test]
    fn rank_auc_equals_pairwise_oracle_exactly() {
        let mut rng = RngStream::from_seed(2024);
        for trial in 0..50 {
            let n = 5 + rng.next_index(96);
            // Quantized scores so ties actually occur.
            let mut instances: Vec<ScoredInstance> = (0..n)
                .map(|i| {
                    scored(
                        i as u64,
                        rng.bernoulli(0.4),
                        (rng.next_index(20) as f64) / 20.0,
                        0.0,
                    )
                })
                .collect();
            // Ensure both classes are present.
            instances[0].label = true;
            instances[1].label = false;
            let fast = auc(&instances).unwrap();
            let oracle = auc_pairwise(&instances).unwrap();
            assert_eq!(fast, oracle, "trial {trial}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = RngStream::from_seed(7);
        let mut instances: Vec<ScoredInstance> = (0..60)
            .map(|i| scored(i as u64, rng.bernoulli(0.3), rng.next_f64(), 0.0))
            .collect();
        instances[0].label = true;
        instances[1].label = false;
        let transformed: Vec<ScoredInstance> = instances
            .iter()
            .map(|s| {
                let mut t = s.clone();
                t.probability = (1.0 + s.probability).ln() * 3.0 + 1.0;
                t
            })
            .collect();
        assert_eq!(auc(&instances).unwrap(), auc(&transformed).unwrap());
    }

    #[test]
    fn median_split_hand_case() {
        let instances = vec![
            scored(0, false, 0.1, 1.0),
            scored(1, true, 0.9, 2.0),
            scored(2, false, 0.2, 3.0),
            scored(3, true, 0.8, 4.0),
        ];
        let report = median_split_analysis(&instances).unwrap();
        assert_eq!(report.low.size, 2);
        assert_eq!(report.high.size, 2);
        assert_eq!(report.low.positives, 1);
        assert_eq!(report.high.positives, 1);
    }

    #[test]
    fn median_split_all_equal_uses_id_order() {
        let instances = vec![
            scored(3, true, 0.8, 1.0),
            scored(1, true, 0.2, 1.0),
            scored(2, false, 0.9, 1.0),
            scored(0, false, 0.1, 1.0),
        ];
        let report = median_split_analysis(&instances).unwrap();
        // ids 0,1 land in the low half; 2,3 in the high half.
        assert_eq!(report.low.size, 2);
        assert_eq!(report.low.positives, 1);
        assert_eq!(report.high.positives, 1);
    }

    #[test]
    fn median_split_odd_count_low_takes_extra() {
        let instances = vec![
            scored(0, false, 0.1, 1.0),
            scored(1, true, 0.9, 2.0),
            scored(2, false, 0.2, 3.0),
            scored(3, true, 0.8, 4.0),
            scored(4, false, 0.3, 5.0),
        ];
        let report = median_split_analysis(&instances).unwrap();
        assert_eq!(report.low.size, 3);
        assert_eq!(report.high.size, 2);
    }

    #[test]
    fn median_split_single_class_half_names_the_half() {
        let instances = vec![
            scored(0, false, 0.1, 1.0),
            scored(1, false, 0.2, 2.0),
            scored(2, true, 0.8, 3.0),
            scored(3, true, 0.9, 4.0),
        ];
        let err = median_split_analysis(&instances).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("low"), "unexpected message: {msg}");
    }

    #[test]
    fn grid_partition_is_exact_and_even() {
        let mut rng = RngStream::from_seed(9);
        for n in [16usize, 48, 50, 63] {
            let instances: Vec<ScoredInstance> = (0..n)
                .map(|i| scored(i as u64, rng.bernoulli(0.3), rng.next_f64(), rng.next_f64()))
                .collect();
            let cells = partition_into_grid(&instances);
            assert_eq!(cells.len(), 16);
            let mut seen = vec![false; n];
            let sizes: Vec<usize> = cells.iter().map(|c| c.len()).collect();
            for cell in &cells {
                for &idx in cell {
                    assert!(!seen[idx], "instance in two cells");
                    seen[idx] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "instance in no cell");
            let min = sizes.iter().min().unwrap();
            let max = sizes.iter().max().unwrap();
            assert!(max - min <= 1, "n={n}: cell sizes {sizes:?}");
        }
    }

    #[test]
    fn mean_std_match_direct_recomputation() {
        let values = [0.81, 0.83, 0.79, 0.85, 0.80];
        let m = mean(&values);
        let s = std_dev(&values);
        let m2 = values.iter().sum::<f64>() / 5.0;
        let s2 = (values.iter().map(|v| (v - m2) * (v - m2)).sum::<f64>() / 5.0).sqrt();
        assert!((m - m2).abs() < 1e-12);
        assert!((s - s2).abs() < 1e-12);
        assert_eq!(std_dev(&[0.5]), 0.0);
    }

    #[test]
    fn roc_points_hand_case() {
        let instances = vec![
            scored(0, true, 0.9, 0.0),
            scored(1, false, 0.4, 0.0),
            scored(2, true, 0.4, 0.0),
            scored(3, false, 0.2, 0.0),
        ];
        let points = roc_points(&instances).unwrap();
        assert_eq!(points, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
    }
}
