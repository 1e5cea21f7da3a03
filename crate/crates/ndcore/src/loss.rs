use ndarray::{Array2, ArrayView2};

use crate::{Error, Real, Result};

/// Mean squared error over the rows where `mask` is true, averaged over
/// those rows and every column.
pub fn masked_mse<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>, mask: &[bool]) -> Result<f64> {
    let rows = check(pred, target, mask)?;
    let mut acc = 0.0f64;
    for (i, keep) in mask.iter().enumerate() {
        if *keep {
            for (p, t) in pred.row(i).iter().zip(target.row(i).iter()) {
                let d = p.to_f64() - t.to_f64();
                acc += d * d;
            }
        }
    }
    Ok(acc / (rows * pred.ncols()) as f64)
}

/// Loss value and its gradient with respect to `pred`.
pub fn masked_mse_grad<T: Real>(
    pred: ArrayView2<T>,
    target: ArrayView2<T>,
    mask: &[bool],
) -> Result<(f64, Array2<T>)> {
    let rows = check(pred, target, mask)?;
    let denom = (rows * pred.ncols()) as f64;
    let scale = T::from_f64(2.0 / denom);
    let mut grad = Array2::<T>::zeros(pred.raw_dim());
    let mut acc = 0.0f64;
    for (i, keep) in mask.iter().enumerate() {
        if *keep {
            for j in 0..pred.ncols() {
                let d = pred[[i, j]] - target[[i, j]];
                acc += d.to_f64() * d.to_f64();
                grad[[i, j]] = scale * d;
            }
        }
    }
    Ok((acc / denom, grad))
}

fn check<T: Real>(pred: ArrayView2<T>, target: ArrayView2<T>, mask: &[bool]) -> Result<usize> {
    if pred.dim() != target.dim() || pred.nrows() != mask.len() {
        return Err(Error::Shape(format!(
            "pred {:?}, target {:?}, mask {}",
            pred.dim(),
            target.dim(),
            mask.len()
        )));
    }
    let rows = mask.iter().filter(|&&m| m).count();
    if rows == 0 || pred.ncols() == 0 {
        return Err(Error::Degenerate("no ocean rows selected by the mask".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn equal_inputs_give_zero() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(masked_mse(a.view(), a.view(), &[true, true]).unwrap(), 0.0);
    }

    #[test]
    fn masked_row_is_ignored() {
        let pred = array![[1.0], [3.0]];
        let target = array![[0.0], [0.0]];
        assert_eq!(masked_mse(pred.view(), target.view(), &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn all_land_is_an_error() {
        let a = array![[1.0]];
        assert!(matches!(masked_mse(a.view(), a.view(), &[false]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gradient_matches_definition() {
        let pred = array![[1.0, 2.0], [0.5, -1.0], [9.0, 9.0]];
        let target = array![[0.0, 1.0], [1.5, 1.0], [0.0, 0.0]];
        let mask = [true, true, false];
        let (l, g) = masked_mse_grad(pred.view(), target.view(), &mask).unwrap();
        assert_eq!(l, masked_mse(pred.view(), target.view(), &mask).unwrap());
        assert_eq!(g, array![[0.5, 0.5], [-0.5, -1.0], [0.0, 0.0]]);
    }

    proptest! {
        // masked rows behave exactly like dropping them before an unmasked MSE
        #[test]
        fn mask_equals_subarray(
            rows in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, any::<bool>()), 1..40)
        ) {
            prop_assume!(rows.iter().any(|r| r.2));
            let pred = Array2::from_shape_fn((rows.len(), 1), |(i, _)| rows[i].0);
            let target = Array2::from_shape_fn((rows.len(), 1), |(i, _)| rows[i].1);
            let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
            let kept: Vec<&(f64, f64, bool)> = rows.iter().filter(|r| r.2).collect();
            let brute = kept.iter().map(|r| (r.0 - r.1).powi(2)).sum::<f64>() / kept.len() as f64;
            let got = masked_mse(pred.view(), target.view(), &mask).unwrap();
            prop_assert!((got - brute).abs() <= 1e-12 * brute.max(1.0));
        }

        #[test]
        fn permutation_invariant(
            rows in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, any::<bool>()), 2..30),
            shift in 1usize..29,
        ) {
            prop_assume!(rows.iter().any(|r| r.2));
            let n = rows.len();
            let build = |order: &dyn Fn(usize) -> usize| {
                let pred = Array2::from_shape_fn((n, 1), |(i, _)| rows[order(i)].0);
                let target = Array2::from_shape_fn((n, 1), |(i, _)| rows[order(i)].1);
                let mask: Vec<bool> = (0..n).map(|i| rows[order(i)].2).collect();
                masked_mse(pred.view(), target.view(), &mask).unwrap()
            };
            let a = build(&|i| i);
            let b = build(&|i| (i + shift) % n);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
