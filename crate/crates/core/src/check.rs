//! Independent verification routes used by the test suites: brute-force
//! oracles and finite-difference derivative checks. Nothing here shares code
//! with the implementations it cross-checks.

use crate::tensor::{Element, Tensor};

/// Textbook triple-loop matrix product, accumulation over k left to right.
pub fn naive_matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    assert_eq!(n, b.rows());
    let mut out = Tensor::zeros(&[m, p]);
    for i in 0..m {
        for j in 0..p {
            let mut acc = T::zero();
            for k in 0..n {
                acc = acc + a.data()[i * n + k] * b.data()[k * p + j];
            }
            out.data_mut()[i * p + j] = acc;
        }
    }
    out
}

/// Exhaustive minimizer of `||x - t||_F^2` over all supports of size `l`.
///
/// Enumerates every size-`l` index set, keeps the entries on it, and returns
/// the lexicographically smallest support among those at minimal distance
/// together with that distance. Exponential; callers keep numel small.
pub fn exhaustive_cardinality_projection<T: Element>(t: &Tensor<T>, l: usize) -> (Vec<usize>, f64) {
    let n = t.numel();
    assert!(l <= n);
    let values: Vec<f64> = t.data().iter().map(|v| v.to_f64()).collect();
    let total_sq: f64 = values.iter().map(|v| v * v).sum();

    let mut best_support: Option<Vec<usize>> = None;
    let mut best_dist = f64::INFINITY;
    let mut support = Vec::with_capacity(l);
    enumerate_supports(n, l, 0, &mut support, &mut |s: &[usize]| {
        // distance = total energy minus energy kept on the support
        let kept: f64 = s.iter().map(|&i| values[i] * values[i]).sum();
        let dist = total_sq - kept;
        let better = match &best_support {
            None => true,
            Some(cur) => dist < best_dist || (dist == best_dist && s < cur.as_slice()),
        };
        if better {
            best_dist = dist;
            best_support = Some(s.to_vec());
        }
    });
    (best_support.unwrap_or_default(), best_dist.max(0.0))
}

fn enumerate_supports(
    n: usize,
    l: usize,
    start: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if current.len() == l {
        visit(current);
        return;
    }
    let remaining = l - current.len();
    for i in start..=n.saturating_sub(remaining) {
        current.push(i);
        enumerate_supports(n, l, i + 1, current, visit);
        current.pop();
    }
}

/// Central finite difference of a scalar function at one coordinate of `x`.
pub fn central_difference<F>(x: &mut Tensor<f64>, index: usize, h: f64, mut f: F) -> f64
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let original = x.data()[index];
    x.data_mut()[index] = original + h;
    let plus = f(x);
    x.data_mut()[index] = original - h;
    let minus = f(x);
    x.data_mut()[index] = original;
    (plus - minus) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero gradients do not blow
/// the ratio up.
pub fn relative_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(got.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_enumeration_counts() {
        let mut count = 0usize;
        let mut buf = Vec::new();
        enumerate_supports(5, 2, 0, &mut buf, &mut |_| count += 1);
        assert_eq!(count, 10); // C(5,2)
    }

    #[test]
    fn exhaustive_projection_spec_case() {
        let t = Tensor::matrix(2, 2, vec![3.0f64, -1.0, 0.5, 2.0]).unwrap();
        let (support, dist) = exhaustive_cardinality_projection(&t, 2);
        assert_eq!(support, vec![0, 3]);
        assert!((dist - (1.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_projection_tie_break_prefers_low_index() {
        let t = Tensor::from_vec(&[3], vec![2.0f64, -2.0, 1.0]).unwrap();
        let (support, dist) = exhaustive_cardinality_projection(&t, 1);
        assert_eq!(support, vec![0]);
        assert!((dist - 5.0).abs() < 1e-12);
    }

    #[test]
    fn central_difference_on_square() {
        let mut x = Tensor::from_vec(&[2], vec![3.0f64, -1.0]).unwrap();
        let d = central_difference(&mut x, 0, 1e-6, |t| {
            t.data().iter().map(|v| v * v).sum::<f64>()
        });
        assert!(relative_error(d, 6.0) < 1e-8);
        assert_eq!(x.data()[0], 3.0); // restored
    }
}
