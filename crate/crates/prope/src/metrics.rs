//! Evaluation metrics and cross-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Image;

/// PSNR in decibels for [0,1] images: `10 log10(1 / MSE)`, capped at 99 dB.
pub fn psnr(pred: &Image, truth: &Image) -> Result<f64> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::dim(
            "psnr",
            &[pred.height, pred.width],
            &[truth.height, truth.width],
        ));
    }
    let mse = pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.data.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Fraction of argmax matches; ties break toward the lowest index.
pub fn accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::dim("accuracy", &[predictions.len()], &[labels.len()]));
    }
    let mut correct = 0usize;
    for (probs, &label) in predictions.iter().zip(labels) {
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / predictions.len() as f64)
}

/// Per-run evaluation result under one condition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: String,
    /// Condition echo, e.g. "standard", "views=8", "zoom=2".
    pub condition: String,
    pub metric: String,
    pub seed: u64,
    pub per_episode: Vec<f64>,
}

impl EvalReport {
    pub fn new(scheme: &str, condition: &str, metric: &str, seed: u64, per_episode: Vec<f64>) -> Result<EvalReport> {
        if per_episode.is_empty() {
            return Err(Error::Config("evaluation produced no episodes".into()));
        }
        Ok(EvalReport {
            scheme: scheme.to_string(),
            condition: condition.to_string(),
            metric: metric.to_string(),
            seed,
            per_episode,
        })
    }

    pub fn mean(&self) -> f64 {
        self.per_episode.iter().sum::<f64>() / self.per_episode.len() as f64
    }
}

/// One aggregated table row: mean ± population std over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub condition: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// Aggregate per-seed reports into (scheme, condition, metric) rows, in
/// first-appearance order. All reports in one cell must agree on config.
pub fn aggregate(reports: &[EvalReport]) -> Result<Vec<SummaryRow>> {
    if reports.is_empty() {
        return Err(Error::Config("aggregate needs at least one report".into()));
    }
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in reports {
        let key = (r.scheme.clone(), r.condition.clone(), r.metric.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut rows = Vec::with_capacity(keys.len());
    for (scheme, condition, metric) in keys {
        let means: Vec<f64> = reports
            .iter()
            .filter(|r| r.scheme == scheme && r.condition == condition && r.metric == metric)
            .map(|r| r.mean())
            .collect();
        let n = means.len();
        let mean = means.iter().sum::<f64>() / n as f64;
        // Population convention.
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n as f64;
        rows.push(SummaryRow {
            scheme,
            condition,
            metric,
            mean,
            std: var.sqrt(),
            n_seeds: n,
        });
    }
    Ok(rows)
}

/// Comma-separated text table: scheme, condition, metric, mean, std, n_seeds.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("scheme,condition,metric,mean,std,n_seeds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.scheme, r.condition, r.metric, r.mean, r.std, r.n_seeds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn psnr_identical_images_capped() {
        let img = Image::constant(4, 4, [0.3, 0.4, 0.5]);
        assert_eq!(psnr(&img, &img).unwrap(), 99.0);
    }

    #[test]
    fn psnr_known_values() {
        // MSE 0.01 -> 20 dB.
        let a = Image::constant(10, 10, [0.1, 0.1, 0.1]);
        let b = Image::constant(10, 10, [0.2, 0.2, 0.2]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        // MSE 0.25 -> 10 log10(4) ~ 6.0206.
        let c = Image::constant(10, 10, [0.5, 0.5, 0.5]);
        let d = Image::constant(10, 10, [0.0, 0.0, 0.0]);
        assert!((psnr(&c, &d).unwrap() - 10.0 * 4.0_f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise_variance() {
        let mut rng = Rng::new(70);
        let truth = Image::constant(16, 16, [0.5, 0.5, 0.5]);
        let mut prev = f64::INFINITY;
        for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let mut noisy = truth.clone();
            for v in noisy.data.iter_mut() {
                *v = (*v + rng.normal(0.0, sigma)).clamp(0.0, 1.0);
            }
            let p = psnr(&noisy, &truth).unwrap();
            assert!(p < prev, "psnr must fall as noise grows");
            prev = p;
        }
    }

    #[test]
    fn accuracy_basics() {
        let preds = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
            vec![0.5, 0.4, 0.1],
        ];
        assert_eq!(accuracy(&preds, &[0, 1, 2, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&preds, &[1, 0, 0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&preds, &[0, 1, 2, 1]).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_ties_break_low() {
        let preds = vec![vec![0.5, 0.5]];
        assert_eq!(accuracy(&preds, &[0]).unwrap(), 1.0);
        assert_eq!(accuracy(&preds, &[1]).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_of_uniform_random_near_chance() {
        let mut rng = Rng::new(71);
        let n_classes = 5;
        let trials = 10_000;
        let mut preds = Vec::with_capacity(trials);
        let mut labels = Vec::with_capacity(trials);
        for _ in 0..trials {
            let probs: Vec<f64> = (0..n_classes).map(|_| rng.unit()).collect();
            preds.push(probs);
            labels.push(rng.index(n_classes));
        }
        let acc = accuracy(&preds, &labels).unwrap();
        let p = 1.0 / n_classes as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((acc - p).abs() < 3.0 * sigma, "acc {acc} outside 3 sigma of {p}");
    }

    #[test]
    fn aggregate_and_csv() {
        let r1 = EvalReport::new("prope", "standard", "psnr", 0, vec![20.0]).unwrap();
        let r2 = EvalReport::new("prope", "standard", "psnr", 1, vec![22.0]).unwrap();
        let rows = aggregate(&[r1.clone(), r2.clone()]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 21.0).abs() < 1e-12);
        assert!((rows[0].std - 1.0).abs() < 1e-12);
        assert_eq!(rows[0].n_seeds, 2);

        // Single report: std 0.
        let rows = aggregate(&[r1.clone()]).unwrap();
        assert!((rows[0].std).abs() < 1e-12);

        // Permutation invariance.
        let a = aggregate(&[r1.clone(), r2.clone()]).unwrap();
        let b = aggregate(&[r2, r1]).unwrap();
        assert_eq!(a, b);

        let csv = summary_csv(&a);
        assert!(csv.starts_with("scheme,condition,metric,mean,std,n_seeds\n"));
        assert!(csv.contains("prope,standard,psnr,21,1,2"));
    }
}
