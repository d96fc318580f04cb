use crate::datakit::ImageTensor;
use crate::error::{Error, Result};

/// Maps an image to a probability vector over `num_classes` labels.
pub trait ClassifierHandle {
    fn num_classes(&self) -> usize;

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>>;

    fn predict_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|im| self.predict(im)).collect()
    }
}

/// Split count used when the caller does not choose one.
pub fn default_splits(n: usize) -> usize {
    if n >= 100 {
        10
    } else {
        1
    }
}

fn check_prediction(p: &[f64], k: usize) -> Result<()> {
    if p.len() != k {
        return Err(Error::shape(
            "inception_score",
            format!("{k} class probabilities"),
            p.len(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| v.is_nan() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "classifier output is not a distribution (sum {sum})"
        )));
    }
    Ok(())
}

/// `exp(mean_x KL(p(y|x) || p(y)))` for one chunk, with `p(y)` the chunk's mean prediction.
fn chunk_score(preds: &[Vec<f64>]) -> f64 {
    let k = preds[0].len();
    let n = preds.len() as f64;
    let mut marginal = vec![0.0; k];
    for p in preds {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mean_kl = preds
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(v, _)| **v > 0.0)
                .map(|(v, m)| v * (v.ln() - m.ln()))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    mean_kl.exp()
}

/// Inception score from precomputed class posteriors: mean and population std over
/// `splits` contiguous chunks.
pub fn inception_score_from_predictions(preds: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if splits == 0 || splits > preds.len() {
        return Err(Error::InvalidArgument(format!(
            "splits must be in 1..={}, got {splits}",
            preds.len()
        )));
    }
    let k = preds[0].len();
    for p in preds {
        check_prediction(p, k)?;
    }
    let n = preds.len();
    let scores: Vec<f64> = (0..splits)
        .map(|s| chunk_score(&preds[s * n / splits..(s + 1) * n / splits]))
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

pub fn inception_score(
    images: &[ImageTensor],
    classifier: &dyn ClassifierHandle,
    splits: usize,
) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = classifier.predict_batch(images)?;
    inception_score_from_predictions(&preds, splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_one_hot() {
        let uniform = vec![vec![0.25; 4]; 8];
        let (m, s) = inception_score_from_predictions(&uniform, 2).unwrap();
        assert_eq!((m, s), (1.0, 0.0));
        let one_hot: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let mut p = vec![0.0; 4];
                p[i % 4] = 1.0;
                p
            })
            .collect();
        let (m, _) = inception_score_from_predictions(&one_hot, 1).unwrap();
        assert!((m - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(inception_score_from_predictions(&[], 1).is_err());
        assert!(inception_score_from_predictions(&[vec![0.5, 0.5]], 2).is_err());
        assert!(inception_score_from_predictions(&[vec![0.7, 0.7]], 1).is_err());
    }
}
