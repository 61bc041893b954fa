//! Request-density prediction: federated ridge regression over per-file
//! request counts, normalization to popularity, and the expected per-cell
//! request density together with its count-derived bracket.

use crate::fl::{self, AggregationRound, FlError, FlMode, LinearModel, Task, TrainingBatch};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DemandError {
    #[error("negative request density at file {0}")]
    NegativeLambda(usize),
    #[error("federated fit failed: {0}")]
    Fit(#[from] FlError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// One training sample of the request-density task: a file observed with a
/// per-slot request count, optionally weighted by recency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingFeature {
    pub file: usize,
    pub target: f64,
    pub recency_weight: f64,
}

impl RatingFeature {
    pub fn new(file: usize, target: f64) -> Self {
        RatingFeature {
            file,
            target,
            recency_weight: 1.0,
        }
    }

    /// Indicator-plus-bias encoding of dimension `m + 1`; the recency weight
    /// scales the sample in the least-squares sense.
    fn encode(&self, m: usize) -> (Vec<f64>, f64) {
        let w = self.recency_weight.sqrt();
        let mut x = vec![0.0; m + 1];
        x[self.file] = w;
        x[m] = w;
        (x, w * self.target)
    }
}

/// Assemble one SBS's training batch from its per-slot request counts.
///
/// Each window slot contributes one sample per file, including the files
/// with zero observed requests.
pub fn request_training_batch(
    m: usize,
    window: &[HashMap<usize, u32>],
) -> Result<TrainingBatch, DemandError> {
    if m == 0 || window.is_empty() {
        return Err(DemandError::Invalid("need at least one file and one slot".into()));
    }
    let mut rows = Vec::with_capacity(m * window.len());
    let mut targets = Vec::with_capacity(m * window.len());
    for slot_counts in window {
        for f in 0..m {
            let sample = RatingFeature::new(f, slot_counts.get(&f).copied().unwrap_or(0) as f64);
            let (x, y) = sample.encode(m);
            rows.push(x);
            targets.push(y);
        }
    }
    Ok(TrainingBatch::new(rows, targets)?)
}

/// Per-file densities produced by the federated fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestDensityFit {
    pub lambda: Vec<f64>,
    pub model: Option<LinearModel>,
    /// Set when there was nothing to learn from and the densities fell back
    /// to the uniform profile.
    pub degenerate: bool,
}

/// Predicted per-slot density of every file under `model`; negatives clamp
/// to zero since densities are counts.
pub fn predict_lambda(model: &LinearModel, m: usize) -> Vec<f64> {
    (0..m)
        .map(|f| {
            let (x, _) = RatingFeature::new(f, 0.0).encode(m);
            model.predict(&x).max(0.0)
        })
        .collect()
}

/// Fit the request-density model over the participating SBSs and predict
/// the per-file densities.
pub fn fit_request_density(
    batches: &[TrainingBatch],
    m: usize,
    ridge: f64,
    config: &AggregationRound,
    mode: FlMode,
    initial: Option<LinearModel>,
) -> Result<RequestDensityFit, DemandError> {
    if ridge < 0.0 {
        return Err(DemandError::Invalid("ridge weight must be >= 0".into()));
    }
    let has_signal = batches
        .iter()
        .any(|b| (0..b.sample_count()).any(|j| b.target(j) != 0.0));
    if batches.is_empty() || !has_signal {
        return Ok(RequestDensityFit {
            lambda: vec![1.0 / m as f64; m],
            model: None,
            degenerate: true,
        });
    }
    let model = fl::train(batches, Task::Request, ridge, config, mode, initial)?;
    let lambda = predict_lambda(&model, m);
    Ok(RequestDensityFit {
        lambda,
        model: Some(model),
        degenerate: false,
    })
}

/// Normalized file popularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    pub p: Vec<f64>,
    /// Set when the densities were all zero and the profile fell back to
    /// uniform.
    pub degenerate: bool,
}

/// Normalize per-file densities into a popularity profile summing to one.
pub fn popularity(lambda: &[f64]) -> Result<Popularity, DemandError> {
    if let Some(f) = lambda.iter().position(|&v| v < 0.0 || !v.is_finite()) {
        return Err(DemandError::NegativeLambda(f));
    }
    if lambda.is_empty() {
        return Err(DemandError::Invalid("empty density vector".into()));
    }
    let total: f64 = lambda.iter().sum();
    if total == 0.0 {
        let m = lambda.len();
        return Ok(Popularity {
            p: vec![1.0 / m as f64; m],
            degenerate: true,
        });
    }
    Ok(Popularity {
        p: lambda.iter().map(|&v| v / total).collect(),
        degenerate: false,
    })
}

/// Expected request density of one cell: pedestrian density times the
/// popularity of each file.
pub fn expected_request_density(psi: f64, p: &[f64]) -> Vec<f64> {
    p.iter().map(|&pf| psi * pf).collect()
}

/// Per-file bracket on the expected request density implied by the cluster
/// counts: the estimate cannot fall below the present-minus-leaver floor nor
/// rise above the total over the `kappa_star` surviving clusters.
pub fn density_bracket(
    filtered_counts: &[usize],
    present: usize,
    leavers: usize,
    lambda: &[f64],
    kappa_star: usize,
) -> Result<(Vec<f64>, Vec<f64>), DemandError> {
    let pop = popularity(lambda)?;
    let base = (present as f64 - leavers as f64).max(0.0);
    let cluster_total: usize = filtered_counts.iter().take(kappa_star).sum();
    let hi = base + cluster_total as f64;
    Ok((
        pop.p.iter().map(|&pf| base * pf).collect(),
        pop.p.iter().map(|&pf| hi * pf).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn fit_config(rounds: usize, eta: f64) -> AggregationRound {
        AggregationRound::new(rounds, 1, eta).unwrap()
    }

    /// Pooled closed-form ridge on the aggregated samples: solves
    /// `(X'X + 2 Q ridge I) w = X'y`, the fixed point of the federated step.
    fn closed_form_ridge(batches: &[TrainingBatch], ridge: f64) -> Vec<f64> {
        let d = batches[0].dim();
        let q: usize = batches.iter().map(|b| b.sample_count()).sum();
        let mut ata = vec![vec![0.0; d]; d];
        let mut aty = vec![0.0; d];
        for b in batches {
            for j in 0..b.sample_count() {
                let x = b.row(j);
                for i in 0..d {
                    for k in 0..d {
                        ata[i][k] += x[i] * x[k];
                    }
                    aty[i] += x[i] * b.target(j);
                }
            }
        }
        for i in 0..d {
            ata[i][i] += 2.0 * q as f64 * ridge;
        }
        solve_linear(ata, aty)
    }

    fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let m = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= m * a[col][k];
                }
                b[row] -= m * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    fn window_from_counts(counts: &[Vec<u32>]) -> Vec<HashMap<usize, u32>> {
        counts
            .iter()
            .map(|slot| {
                slot.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(f, &c)| (f, c))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn popularity_normalizes() {
        let pop = popularity(&[2.0, 3.0, 5.0]).unwrap();
        assert_eq!(pop.p, vec![0.2, 0.3, 0.5]);
        assert!(!pop.degenerate);

        let solo = popularity(&[7.0]).unwrap();
        assert_eq!(solo.p, vec![1.0]);

        let zero = popularity(&[0.0, 0.0]).unwrap();
        assert_eq!(zero.p, vec![0.5, 0.5]);
        assert!(zero.degenerate);

        assert_eq!(popularity(&[1.0, -0.1]), Err(DemandError::NegativeLambda(1)));
    }

    #[test]
    fn popularity_sums_to_one_and_keeps_argmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.gen_range(1..30);
            let lambda: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..10.0)).collect();
            if lambda.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let pop = popularity(&lambda).unwrap();
            assert!((pop.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(&lambda), argmax(&pop.p));
        }
    }

    #[test]
    fn expected_density_scales_popularity() {
        let lam = expected_request_density(15.0, &[0.2, 0.3, 0.5]);
        assert!((lam[0] - 3.0).abs() < 1e-12);
        assert_eq!(expected_request_density(0.0, &[0.4, 0.6]), vec![0.0, 0.0]);
        // The expected densities sum back to psi.
        assert!((lam.iter().sum::<f64>() - 15.0).abs() < 1e-9);
        // Homogeneity in psi.
        let doubled = expected_request_density(30.0, &[0.2, 0.3, 0.5]);
        for (a, b) in doubled.iter().zip(&lam) {
            assert!((a - 2.0 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn bracket_direct_substitution() {
        let (lo, hi) = density_bracket(&[3, 4], 10, 2, &[1.0, 1.0], 2).unwrap();
        assert!((lo[0] - 4.0).abs() < 1e-12);
        assert!((hi[0] - 7.5).abs() < 1e-12);
        // No admitted clusters collapses the bracket.
        let (lo, hi) = density_bracket(&[], 10, 2, &[1.0], 0).unwrap();
        assert_eq!(lo, hi);
    }

    #[test]
    fn exact_fit_when_unregularized() {
        // Constant per-file counts are exactly representable.
        let counts: Vec<Vec<u32>> = (0..20).map(|_| vec![4, 0, 2, 1]).collect();
        let batch = request_training_batch(4, &window_from_counts(&counts)).unwrap();
        let fit = fit_request_density(
            std::slice::from_ref(&batch),
            4,
            0.0,
            &fit_config(4000, 1.0),
            FlMode::FedAvg,
            None,
        )
        .unwrap();
        let model = fit.model.as_ref().unwrap();
        let loss = fl::local_loss(model, &batch, 0.0).unwrap();
        assert!(loss < 1e-8, "residual loss {loss}");
        for (lam, want) in fit.lambda.iter().zip([4.0, 0.0, 2.0, 1.0]) {
            assert!((lam - want).abs() < 1e-4);
        }
    }

    #[test]
    fn huge_ridge_crushes_weights() {
        let counts: Vec<Vec<u32>> = (0..10).map(|_| vec![5, 1, 3]).collect();
        let batch = request_training_batch(3, &window_from_counts(&counts)).unwrap();
        let free = fit_request_density(
            std::slice::from_ref(&batch),
            3,
            0.0,
            &fit_config(2000, 1.0),
            FlMode::FedAvg,
            None,
        )
        .unwrap();
        let crushed = fit_request_density(
            std::slice::from_ref(&batch),
            3,
            1e6,
            &fit_config(400, 1e-7),
            FlMode::FedAvg,
            None,
        )
        .unwrap();
        let norm = |m: &LinearModel| m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        let n_free = norm(free.model.as_ref().unwrap());
        let n_crushed = norm(crushed.model.as_ref().unwrap());
        assert!(n_crushed < 1e-3 * n_free, "{n_crushed} vs {n_free}");
    }

    #[test]
    fn zipf_counts_match_closed_form_ridge() {
        // Zipf(0.8) request counts over 20 files spread across 3 SBSs.
        let m = 20;
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let weights: Vec<f64> = (1..=m).map(|r| 1.0 / (r as f64).powf(0.8)).collect();
        let z: f64 = weights.iter().sum();
        let batches: Vec<TrainingBatch> = (0..3)
            .map(|_| {
                let counts: Vec<Vec<u32>> = (0..30)
                    .map(|_| {
                        (0..m)
                            .map(|f| {
                                let mean = 40.0 * weights[f] / z;
                                let jitter = rng.gen_range(0.0..2.0);
                                (mean * jitter).round() as u32
                            })
                            .collect()
                    })
                    .collect();
                request_training_batch(m, &window_from_counts(&counts)).unwrap()
            })
            .collect();

        let ridge = 1.0;
        let fit = fit_request_density(&batches, m, ridge, &fit_config(3000, 0.5), FlMode::FedAvg, None).unwrap();
        let w_star = closed_form_ridge(&batches, ridge);
        let lambda_star: Vec<f64> = (0..m).map(|f| (w_star[f] + w_star[m]).max(0.0)).collect();

        let num: f64 = fit
            .lambda
            .iter()
            .zip(&lambda_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = lambda_star.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 0.10, "relative error {}", num / den);
    }

    #[test]
    fn no_data_falls_back_to_uniform() {
        let empty_window: Vec<HashMap<usize, u32>> = vec![HashMap::new(); 5];
        let batch = request_training_batch(4, &empty_window).unwrap();
        let fit = fit_request_density(
            std::slice::from_ref(&batch),
            4,
            1.0,
            &fit_config(10, 0.1),
            FlMode::FedAvg,
            None,
        )
        .unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.lambda, vec![0.25; 4]);
    }

    #[test]
    fn fit_is_participant_order_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let batches: Vec<TrainingBatch> = (0..3)
            .map(|_| {
                let counts: Vec<Vec<u32>> = (0..8)
                    .map(|_| (0..5).map(|_| rng.gen_range(0..6)).collect())
                    .collect();
                request_training_batch(5, &window_from_counts(&counts)).unwrap()
            })
            .collect();
        let fwd = fit_request_density(&batches, 5, 1.0, &fit_config(300, 0.5), FlMode::FedAvg, None).unwrap();
        let mut rev = batches.clone();
        rev.reverse();
        let bwd = fit_request_density(&rev, 5, 1.0, &fit_config(300, 0.5), FlMode::FedAvg, None).unwrap();
        for (a, b) in fwd.lambda.iter().zip(&bwd.lambda) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
