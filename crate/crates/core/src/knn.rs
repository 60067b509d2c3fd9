//! K-nearest-neighbor classifier and regressor with pluggable distance
//! metrics and the per-k sweep used by the experiment grid. Neighbor
//! search is brute force with fully deterministic tie-breaking: equal
//! distances resolve to the lower training index, tied votes to the
//! lower label value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, TaskEval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distance {
    Euclidean,
    Manhattan,
    Minkowski(f64),
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Distance::Euclidean => write!(f, "euclidean"),
            Distance::Manhattan => write!(f, "manhattan"),
            Distance::Minkowski(p) => write!(f, "minkowski({p})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    Classify,
    Regress,
}

/// Compute the distance between two equal-length vectors.
pub fn distance(x: &[f64], y: &[f64], metric: Distance) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if let Distance::Minkowski(p) = metric {
        if p < 1.0 {
            return Err(Error::Validation(format!("minkowski p {p} must be >= 1")));
        }
    }
    let d = match metric {
        Distance::Euclidean => x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        Distance::Manhattan => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        Distance::Minkowski(p) => x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b).abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p),
    };
    Ok(d)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub metric: Distance,
    pub mode: KnnMode,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
}

impl KnnModel {
    pub fn fit(
        train_x: Vec<Vec<f64>>,
        train_y: Vec<f64>,
        k: usize,
        metric: Distance,
        mode: KnnMode,
    ) -> Result<Self> {
        if train_x.is_empty() {
            return Err(Error::InsufficientData("empty training set".into()));
        }
        if train_x.len() != train_y.len() {
            return Err(Error::DimensionMismatch {
                expected: train_x.len(),
                actual: train_y.len(),
            });
        }
        if k == 0 || k > train_x.len() {
            return Err(Error::Validation(format!(
                "k {} outside 1..={}",
                k,
                train_x.len()
            )));
        }
        Ok(KnnModel {
            k,
            metric,
            mode,
            train_x,
            train_y,
        })
    }

    /// Training indices sorted by (distance, index) — the shared core of
    /// `predict` and the k-sweep.
    fn ranked_neighbors(&self, query: &[f64]) -> Result<Vec<usize>> {
        let mut order: Vec<(f64, usize)> = self
            .train_x
            .iter()
            .enumerate()
            .map(|(i, row)| Ok((distance(row, query, self.metric)?, i)))
            .collect::<Result<_>>()?;
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        Ok(order.into_iter().map(|(_, i)| i).collect())
    }

    pub fn predict(&self, query: &[f64]) -> Result<f64> {
        let ranked = self.ranked_neighbors(query)?;
        Ok(aggregate(&ranked[..self.k], &self.train_y, self.mode))
    }

    pub fn predict_batch(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
        queries.iter().map(|q| self.predict(q)).collect()
    }
}

fn aggregate(neighbors: &[usize], train_y: &[f64], mode: KnnMode) -> f64 {
    match mode {
        KnnMode::Regress => {
            neighbors.iter().map(|&i| train_y[i]).sum::<f64>() / neighbors.len() as f64
        }
        KnnMode::Classify => {
            // Majority vote; ties go to the lower label value.
            let mut labels: Vec<f64> = Vec::new();
            let mut counts: Vec<usize> = Vec::new();
            for &i in neighbors {
                let label = train_y[i];
                match labels.iter().position(|&l| l == label) {
                    Some(pos) => counts[pos] += 1,
                    None => {
                        labels.push(label);
                        counts.push(1);
                    }
                }
            }
            let mut best = 0;
            for i in 1..labels.len() {
                if counts[i] > counts[best] || (counts[i] == counts[best] && labels[i] < labels[best]) {
                    best = i;
                }
            }
            labels[best]
        }
    }
}

/// Per-k sweep result.
#[derive(Debug, Clone)]
pub struct KSweep {
    pub best_k: usize,
    /// `(k, evaluation)` for k = 1..=k_max.
    pub reports: Vec<(usize, TaskEval)>,
}

/// Evaluate k = 1..=k_max on the test set, sharing one distance ranking
/// per test row. Best k maximizes accuracy (classification) or R²
/// (regression); ties pick the smaller k.
pub fn sweep_k(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    test_x: &[Vec<f64>],
    test_y: &[f64],
    k_max: usize,
    metric: Distance,
    mode: KnnMode,
) -> Result<KSweep> {
    if k_max == 0 || k_max > train_x.len() {
        return Err(Error::Validation(format!(
            "k_max {} outside 1..={}",
            k_max,
            train_x.len()
        )));
    }
    let model = KnnModel::fit(train_x.to_vec(), train_y.to_vec(), 1, metric, mode)?;
    let rankings: Vec<Vec<usize>> = test_x
        .iter()
        .map(|q| model.ranked_neighbors(q))
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(k_max);
    let mut best_k = 1;
    let mut best_score = f64::NEG_INFINITY;
    for k in 1..=k_max {
        let predictions: Vec<f64> = rankings
            .iter()
            .map(|ranked| aggregate(&ranked[..k], train_y, mode))
            .collect();
        let (eval, score) = match mode {
            KnnMode::Classify => {
                let e = metrics::evaluate_classifier(test_y, &predictions)?;
                let score = e.accuracy;
                (TaskEval::Classification(e), score)
            }
            KnnMode::Regress => {
                let e = metrics::evaluate_regressor(test_y, &predictions)?;
                let score = e.r2.value().unwrap_or(f64::NEG_INFINITY);
                (TaskEval::Regression(e), score)
            }
        };
        if score > best_score {
            best_score = score;
            best_k = k;
        }
        reports.push((k, eval));
    }
    Ok(KSweep { best_k, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn euclidean_three_four_five() {
        assert_eq!(
            distance(&[0.0, 0.0], &[3.0, 4.0], Distance::Euclidean).unwrap(),
            5.0
        );
    }

    #[test]
    fn manhattan_sums_absolute_differences() {
        assert_eq!(
            distance(&[0.0, 0.0], &[3.0, 4.0], Distance::Manhattan).unwrap(),
            7.0
        );
    }

    #[test]
    fn minkowski_two_matches_euclidean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let e = distance(&x, &y, Distance::Euclidean).unwrap();
            let m = distance(&x, &y, Distance::Minkowski(2.0)).unwrap();
            assert!((e - m).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(distance(&[1.0], &[1.0, 2.0], Distance::Euclidean).is_err());
    }

    #[test]
    fn minkowski_p_below_one_is_rejected() {
        assert!(distance(&[1.0], &[2.0], Distance::Minkowski(0.5)).is_err());
    }

    #[test]
    fn single_point_returns_its_target() {
        let m = KnnModel::fit(
            vec![vec![1.0, 2.0]],
            vec![7.5],
            1,
            Distance::Euclidean,
            KnnMode::Regress,
        )
        .unwrap();
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), 7.5);
    }

    #[test]
    fn k_equals_n_regression_returns_global_mean() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0], vec![10.0]];
        let ys = vec![1.0, 2.0, 3.0, 10.0];
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let m = KnnModel::fit(xs, ys, 4, Distance::Euclidean, KnnMode::Regress).unwrap();
        assert_eq!(m.predict(&[5.0]).unwrap(), mean);
    }

    /// Independent oracle: full pairwise distance list, stable sort,
    /// aggregate — written against the definition, not the model.
    pub(crate) fn oracle_predict(
        train_x: &[Vec<f64>],
        train_y: &[f64],
        query: &[f64],
        k: usize,
        metric: Distance,
        mode: KnnMode,
    ) -> f64 {
        let mut pairs: Vec<(f64, usize)> = train_x
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let d = match metric {
                    Distance::Euclidean => row
                        .iter()
                        .zip(query)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt(),
                    Distance::Manhattan => row.iter().zip(query).map(|(a, b)| (a - b).abs()).sum(),
                    Distance::Minkowski(p) => row
                        .iter()
                        .zip(query)
                        .map(|(a, b)| (a - b).abs().powf(p))
                        .sum::<f64>()
                        .powf(1.0 / p),
                };
                (d, i)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let chosen: Vec<usize> = pairs.iter().take(k).map(|&(_, i)| i).collect();
        match mode {
            KnnMode::Regress => chosen.iter().map(|&i| train_y[i]).sum::<f64>() / k as f64,
            KnnMode::Classify => {
                let mut best_label = f64::INFINITY;
                let mut best_count = 0;
                let mut seen: Vec<f64> = chosen.iter().map(|&i| train_y[i]).collect();
                seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
                seen.dedup();
                for label in seen {
                    let count = chosen.iter().filter(|&&i| train_y[i] == label).count();
                    if count > best_count {
                        best_count = count;
                        best_label = label;
                    }
                }
                best_label
            }
        }
    }

    #[test]
    fn seven_points_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train_x: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..2).map(|_| rng.random::<f64>() * 4.0).collect())
            .collect();
        let train_y: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
        let m = KnnModel::fit(
            train_x.clone(),
            train_y.clone(),
            3,
            Distance::Euclidean,
            KnnMode::Regress,
        )
        .unwrap();
        let q = vec![1.0, 2.0];
        let want = oracle_predict(&train_x, &train_y, &q, 3, Distance::Euclidean, KnnMode::Regress);
        assert_eq!(m.predict(&q).unwrap(), want);
    }

    #[test]
    fn sweep_emits_one_report_per_k() {
        let train_x: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64]).collect();
        let train_y: Vec<f64> = (0..60).map(|i| f64::from(i % 2 == 0)).collect();
        let test_x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 + 0.4]).collect();
        let test_y: Vec<f64> = (0..10).map(|i| f64::from(i % 2 == 0)).collect();
        let sweep = sweep_k(
            &train_x,
            &train_y,
            &test_x,
            &test_y,
            42,
            Distance::Euclidean,
            KnnMode::Classify,
        )
        .unwrap();
        assert_eq!(sweep.reports.len(), 42);
    }

    #[test]
    fn separable_data_reaches_perfect_accuracy() {
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        for i in 0..10 {
            train_x.push(vec![i as f64 * 0.1, 0.0]);
            train_y.push(0.0);
            train_x.push(vec![i as f64 * 0.1 + 10.0, 0.0]);
            train_y.push(1.0);
        }
        let test_x = vec![vec![0.5, 0.0], vec![10.5, 0.0]];
        let test_y = vec![0.0, 1.0];
        let sweep = sweep_k(
            &train_x,
            &train_y,
            &test_x,
            &test_y,
            5,
            Distance::Euclidean,
            KnnMode::Classify,
        )
        .unwrap();
        let best = sweep
            .reports
            .iter()
            .find(|(k, _)| *k == sweep.best_k)
            .unwrap();
        match &best.1 {
            TaskEval::Classification(c) => assert_eq!(c.accuracy, 1.0),
            other => panic!("unexpected eval {other:?}"),
        }
    }

    #[test]
    fn k_max_one_selects_k_one() {
        let train_x = vec![vec![0.0], vec![1.0]];
        let train_y = vec![0.0, 1.0];
        let sweep = sweep_k(
            &train_x,
            &train_y,
            &train_x,
            &train_y,
            1,
            Distance::Euclidean,
            KnnMode::Classify,
        )
        .unwrap();
        assert_eq!(sweep.best_k, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prediction_matches_oracle_on_random_instances(
            seed in 0u64..500,
            n in 2usize..40,
            d in 1usize..8,
            classify in proptest::bool::ANY,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train_x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 10.0).collect())
                .collect();
            let mode = if classify { KnnMode::Classify } else { KnnMode::Regress };
            let train_y: Vec<f64> = (0..n)
                .map(|_| {
                    if classify {
                        f64::from(rng.random::<f64>() > 0.5)
                    } else {
                        rng.random::<f64>() * 5.0
                    }
                })
                .collect();
            let k = 1 + (rng.random::<u32>() as usize) % n;
            let q: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 10.0).collect();
            let m = KnnModel::fit(train_x.clone(), train_y.clone(), k, Distance::Euclidean, mode).unwrap();
            let want = oracle_predict(&train_x, &train_y, &q, k, Distance::Euclidean, mode);
            prop_assert_eq!(m.predict(&q).unwrap(), want);
        }

        #[test]
        fn regression_prediction_stays_within_target_range(
            seed in 0u64..500,
            n in 1usize..30,
            k_frac in 0.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train_x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
            let train_y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 7.0 - 3.0).collect();
            let k = 1 + (k_frac * (n - 1) as f64) as usize;
            let m = KnnModel::fit(train_x, train_y.clone(), k, Distance::Manhattan, KnnMode::Regress).unwrap();
            let p = m.predict(&[rng.random::<f64>()]).unwrap();
            let lo = train_y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = train_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }

        #[test]
        fn permutation_of_training_rows_is_irrelevant(
            seed in 0u64..200,
            n in 2usize..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // distinct coordinates make all distances distinct
            let mut train_x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 + rng.random::<f64>() * 0.25]).collect();
            let mut train_y: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let k = 1 + (rng.random::<u32>() as usize) % n;
            let q = vec![rng.random::<f64>() * n as f64];
            let base = KnnModel::fit(train_x.clone(), train_y.clone(), k, Distance::Euclidean, KnnMode::Regress)
                .unwrap()
                .predict(&q)
                .unwrap();
            // rotate rows
            train_x.rotate_left(n / 2);
            train_y.rotate_left(n / 2);
            let rotated = KnnModel::fit(train_x, train_y, k, Distance::Euclidean, KnnMode::Regress)
                .unwrap()
                .predict(&q)
                .unwrap();
            prop_assert!((base - rotated).abs() < 1e-12);
        }
    }
}
