use ndarray::{Array2, Axis};

use super::params::Linear;
use super::{NetworkError, Result};

/// Class scores `W e + b` for each embedding row.
pub fn linear_classify(embeddings: &Array2<f64>, head: &Linear) -> Result<Array2<f64>> {
    if embeddings.ncols() != head.input_dim() {
        return Err(NetworkError::Shape(format!(
            "embedding width {} but head expects {}",
            embeddings.ncols(),
            head.input_dim()
        )));
    }
    Ok(head.forward(embeddings))
}

pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

pub struct ClassifierGrad {
    pub loss: f64,
    pub grads: Linear,
}

/// Mean softmax cross-entropy and its gradient with respect to `head`.
pub fn cross_entropy(embeddings: &Array2<f64>, labels: &[usize], head: &Linear) -> Result<ClassifierGrad> {
    let scores = linear_classify(embeddings, head)?;
    let k = head.output_dim();
    if labels.len() != scores.nrows() {
        return Err(NetworkError::Shape(format!("{} labels for {} rows", labels.len(), scores.nrows())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(NetworkError::Shape(format!("label {l} outside {k} classes")));
    }
    let n = labels.len().max(1) as f64;
    let mut probs = softmax_rows(&scores);
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        loss -= probs[[i, l]].max(f64::MIN_POSITIVE).ln();
        probs[[i, l]] -= 1.0;
    }
    let dscores = probs / n;
    let (_, grads) = head.backward(embeddings, &dscores);
    Ok(ClassifierGrad { loss: loss / n, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn argmax(row: &Array1<f64>) -> usize {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }

    #[test]
    fn zero_head_gives_zero_scores() {
        let head = Linear::zeros(256, 5);
        let e = Array2::from_elem((3, 256), 0.3);
        assert!(linear_classify(&e, &head).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_head_separates() {
        let head = Linear {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: array![0.0, 0.0],
        };
        let e = array![[2.0, -1.0], [-0.5, 1.5]];
        let s = linear_classify(&e, &head).unwrap();
        assert_eq!(argmax(&s.row(0).to_owned()), 0);
        assert_eq!(argmax(&s.row(1).to_owned()), 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let head = Linear::zeros(4, 2);
        assert!(linear_classify(&Array2::zeros((1, 3)), &head).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = Linear::init(6, 4, &mut rng);
        let e = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3) as f64 * 0.41).sin());
        let labels = [0, 3, 1, 1, 2];
        let g = cross_entropy(&e, &labels, &head).unwrap();
        let h = 1e-6;
        let mut num = Array2::zeros((4, 6));
        for i in 0..4 {
            for j in 0..6 {
                let (mut p, mut m) = (head.clone(), head.clone());
                p.weight[[i, j]] += h;
                m.weight[[i, j]] -= h;
                num[[i, j]] = (cross_entropy(&e, &labels, &p).unwrap().loss - cross_entropy(&e, &labels, &m).unwrap().loss) / (2.0 * h);
            }
        }
        let rel = (&num - &g.grads.weight).mapv(|x| x * x).sum().sqrt() / num.mapv(|x| x * x).sum().sqrt();
        assert!(rel < 1e-4, "relative error {rel}");
    }
}
