use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::bank::MemoryBank;
use super::{PretrainError, Result};

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(PretrainError::InvalidTemperature(tau))
    }
}

/// InfoNCE loss of one query against its positive key and a set of
/// negatives (rows), plus the gradient with respect to the query. The key
/// path is treated as constant.
pub fn info_nce_with_grad(q: ArrayView1<f64>, k: ArrayView1<f64>, negatives: ArrayView2<f64>, tau: f64) -> Result<(f64, Array1<f64>)> {
    check_tau(tau)?;
    if q.len() != k.len() || (negatives.nrows() > 0 && negatives.ncols() != q.len()) {
        return Err(PretrainError::Shape(format!(
            "query {}, key {}, negatives {:?}",
            q.len(),
            k.len(),
            negatives.dim()
        )));
    }
    let pos = q.dot(&k) / tau;
    let neg: Array1<f64> = negatives.dot(&q) / tau;
    let m = neg.iter().fold(pos, |a, &b| a.max(b));
    let w_pos = (pos - m).exp();
    let w_neg = neg.mapv(|l| (l - m).exp());
    let z = w_pos + w_neg.sum();
    let loss = -(pos - m) + z.ln();
    // d/dq = (sum_j p_j x_j - k) / tau with x_0 = k
    let mut grad = k.to_owned() * ((w_pos / z - 1.0) / tau);
    if negatives.nrows() > 0 {
        grad += &(negatives.t().dot(&(w_neg / z)) / tau);
    }
    Ok((loss, grad))
}

/// `-log(exp(q.k/τ) / (exp(q.k/τ) + Σ_i exp(q.m_i/τ)))` over the occupied
/// slots of the bank.
pub fn info_nce(q: ArrayView1<f64>, k: ArrayView1<f64>, bank: &MemoryBank, tau: f64) -> Result<f64> {
    info_nce_with_grad(q, k, bank.keys(), tau).map(|(l, _)| l)
}

pub struct BatchLoss {
    pub loss: f64,
    /// Gradient of the mean loss with respect to each query row.
    pub dq: Array2<f64>,
    pub mean_positive: f64,
    /// Mean over the batch of the largest negative similarity (0 when the
    /// bank is empty).
    pub mean_top_negative: f64,
}

/// Mean InfoNCE over a batch of `(q, k)` rows sharing one negative set.
pub fn info_nce_batch(q: &Array2<f64>, k: &Array2<f64>, negatives: ArrayView2<f64>, tau: f64) -> Result<BatchLoss> {
    if q.dim() != k.dim() {
        return Err(PretrainError::Shape(format!("queries {:?} vs keys {:?}", q.dim(), k.dim())));
    }
    let b = q.nrows().max(1) as f64;
    let mut dq = Array2::zeros(q.dim());
    let mut loss = 0.0;
    let mut pos = 0.0;
    let mut top = 0.0;
    for (i, (qi, ki)) in q.axis_iter(Axis(0)).zip(k.axis_iter(Axis(0))).enumerate() {
        let (l, g) = info_nce_with_grad(qi, ki, negatives, tau)?;
        loss += l;
        dq.row_mut(i).assign(&(g / b));
        pos += qi.dot(&ki);
        if negatives.nrows() > 0 {
            top += negatives.dot(&qi).fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        }
    }
    Ok(BatchLoss {
        loss: loss / b,
        dq,
        mean_positive: pos / b,
        mean_top_negative: top / b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn unit(v: Vec<f64>) -> Array1<f64> {
        let a = Array1::from(v);
        let n = a.dot(&a).sqrt();
        a / n
    }

    #[test]
    fn empty_bank_gives_zero() {
        let q = array![1.0, 0.0];
        let (l, g) = info_nce_with_grad(q.view(), q.view(), Array2::zeros((0, 2)).view(), 0.07).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_temperature() {
        let q = array![1.0, 0.0];
        for tau in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                info_nce_with_grad(q.view(), q.view(), Array2::zeros((0, 2)).view(), tau),
                Err(PretrainError::InvalidTemperature(_))
            ));
        }
    }

    #[test]
    fn extreme_similarities_stay_finite() {
        let q = array![1.0, 0.0];
        let negs = array![[1.0, 0.0], [-1.0, 0.0]];
        let (l, g) = info_nce_with_grad(q.view(), (-&q).view(), negs.view(), 1e-4).unwrap();
        assert!(l.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = unit(vec![0.3, -0.2, 0.9, 0.1]);
        let k = unit(vec![0.1, 0.5, 0.4, -0.3]);
        let negs = array![[0.5, 0.5, 0.5, 0.5], [-0.2, 0.1, 0.3, 0.9], [0.0, 1.0, 0.0, 0.0]];
        let (_, g) = info_nce_with_grad(q.view(), k.view(), negs.view(), 0.2).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let (mut a, mut b) = (q.clone(), q.clone());
            a[i] += h;
            b[i] -= h;
            let la = info_nce_with_grad(a.view(), k.view(), negs.view(), 0.2).unwrap().0;
            let lb = info_nce_with_grad(b.view(), k.view(), negs.view(), 0.2).unwrap().0;
            assert!(((la - lb) / (2.0 * h) - g[i]).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn strictly_decreasing_in_positive_similarity(angle in 0.05f64..3.0, delta in 0.01f64..0.05) {
            let q = array![1.0, 0.0, 0.0];
            let negs = array![[0.0, 1.0, 0.0], [0.6, 0.0, 0.8]];
            let key = |a: f64| array![a.cos(), 0.0, a.sin()];
            let near = info_nce_with_grad(q.view(), key(angle).view(), negs.view(), 0.07).unwrap().0;
            let far = info_nce_with_grad(q.view(), key(angle + delta).view(), negs.view(), 0.07).unwrap().0;
            prop_assert!(near < far);
        }
    }
}
