//! Helpers for network-stacked states `x = [x_1; ...; x_N]`.

use nalgebra::DVector;

/// `1_N (x) v`: repeats a per-node vector across `copies` nodes.
pub fn lift(v: &DVector<f64>, copies: usize) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(copies * n, |i, _| v[i % n])
}

/// Mean of the node blocks of a stacked state.
pub fn block_mean(x: &DVector<f64>, blocks: usize) -> DVector<f64> {
    assert!(blocks > 0 && x.len().is_multiple_of(blocks), "state does not split into blocks");
    let n = x.len() / blocks;
    let mut mean = DVector::zeros(n);
    for b in 0..blocks {
        for c in 0..n {
            mean[c] += x[b * n + c];
        }
    }
    mean / blocks as f64
}

/// `(1 1^T / N (x) I) x`: every block replaced by the block mean.
pub fn block_average_lifted(x: &DVector<f64>, blocks: usize) -> DVector<f64> {
    lift(&block_mean(x, blocks), blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_and_mean_are_consistent() {
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let lifted = lift(&v, 3);
        assert_eq!(lifted.as_slice(), &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);
        assert_eq!(block_mean(&lifted, 3), v);

        let x = DVector::from_vec(vec![1.0, 0.0, 3.0, 2.0]);
        let mean = block_mean(&x, 2);
        assert_eq!(mean.as_slice(), &[2.0, 1.0]);
        assert_eq!(block_average_lifted(&x, 2).as_slice(), &[2.0, 1.0, 2.0, 1.0]);
    }
}
