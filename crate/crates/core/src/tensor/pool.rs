use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Argmax bookkeeping from [`maxpool2x2_forward`]: for every output element,
/// the flat index of the input element it was taken from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub indices: Vec<usize>,
}

/// Non-overlapping 2×2 max pooling.
///
/// Odd extents are replication-padded on the bottom/right, so the output is
/// `ceil(h/2) × ceil(w/2)`. A padded tap refers back to the element it copies.
/// Ties go to the first tap in row-major order within the window. A NaN tap
/// wins over any number, so NaNs propagate.
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape(format!("cannot pool an empty plane ({s})")));
    }
    let out_shape = Shape::new(s.n, s.c, s.h.div_ceil(2), s.w.div_ceil(2));
    let xd = x.data();
    let mut out = Vec::with_capacity(out_shape.len());
    let mut indices = Vec::with_capacity(out_shape.len());
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..out_shape.h {
                for j in 0..out_shape.w {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let y = (2 * i + dy).min(s.h - 1);
                        let xx = (2 * j + dx).min(s.w - 1);
                        let idx = s.index(n, c, y, xx);
                        let v = xd[idx];
                        if best == usize::MAX || v > best_v || (v.is_nan() && !best_v.is_nan()) {
                            best = idx;
                            best_v = v;
                        }
                    }
                    out.push(best_v);
                    indices.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(out_shape, out)?,
        PoolIndices {
            input_shape: s,
            indices,
        },
    ))
}

/// Routes each upstream gradient to the input element that won its window.
pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    idx: &PoolIndices,
) -> Result<Tensor<T>> {
    if grad_out.len() != idx.indices.len() {
        return Err(Error::shape(format!(
            "pool backward: {} upstream gradients for {} recorded windows",
            grad_out.len(),
            idx.indices.len()
        )));
    }
    let mut grad = Tensor::zeros(idx.input_shape);
    let gd = grad.data_mut();
    for (&i, &g) in idx.indices.iter().zip(grad_out.data()) {
        if i >= gd.len() {
            return Err(Error::shape(format!("pool index {i} out of range")));
        }
        gd[i] += g;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.indices, vec![3]);
    }

    #[test]
    fn ties_pick_first_in_scan_order() {
        let x = Tensor::<f64>::full(Shape::new(1, 2, 4, 4), 0.5);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let s = x.shape();
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let k = (c * 2 + i) * 2 + j;
                    assert_eq!(idx.indices[k], s.index(0, c, 2 * i, 2 * j));
                }
            }
        }
    }

    #[test]
    fn odd_extent_replicates_last_row_and_column() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, w| (h * 3 + w) as f64);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[4.0, 5.0, 7.0, 8.0]);
        // Every index refers to a real input element.
        assert!(idx.indices.iter().all(|&i| i < 9));
        let g = Tensor::full(y.shape(), 1.0);
        let gx = maxpool2x2_backward(&g, &idx).unwrap();
        assert_eq!(gx.sum(), 4.0);
        assert_eq!(gx.get(0, 0, 2, 2), 1.0);
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 4));
        let (_, idx) = maxpool2x2_forward(&x).unwrap();
        let g = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 1));
        assert!(maxpool2x2_backward(&g, &idx).is_err());
    }

    #[test]
    fn nan_propagates() {
        let x =
            Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 5.0, f32::NAN, 2.0]).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert!(y.data()[0].is_nan());
        assert_eq!(idx.indices, [2]);
    }
}
