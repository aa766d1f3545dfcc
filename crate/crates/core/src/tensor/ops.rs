use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// `x^q` elementwise by repeated multiplication, so negative inputs keep the
/// sign an odd power should give them.
pub fn elementwise_pow<T: Scalar>(x: &Tensor<T>, q: usize) -> Result<Tensor<T>> {
    if q == 0 {
        return Err(Error::invalid("power must be at least 1"));
    }
    let mut out = x.clone();
    for _ in 1..q {
        for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
            *o *= v;
        }
    }
    Ok(out)
}

/// Concatenates along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat needs at least one tensor"))?
        .shape();
    let mut channels = 0;
    for x in xs {
        let s = x.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(format!("cannot concat {s} with {first}")));
        }
        channels += s.c;
    }
    let shape = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for x in xs {
            let item = x.shape().item();
            data.extend_from_slice(&x.data()[n * item..(n + 1) * item]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Inverse of [`concat_channels`].
pub fn split_channels<T: Scalar>(x: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = x.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape(format!(
            "split {channels:?} does not add up to {} channels",
            s.c
        )));
    }
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|c| Vec::with_capacity(s.n * c * s.plane()))
        .collect();
    for n in 0..s.n {
        let mut offset = n * s.item();
        for (part, &c) in parts.iter_mut().zip(channels) {
            let len = c * s.plane();
            part.extend_from_slice(&x.data()[offset..offset + len]);
            offset += len;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d))
        .collect()
}

/// Non-overlapping `factor × factor` block sums. A partial block at the
/// bottom/right edge sums whatever it covers, so the total is conserved.
pub fn sum_pool<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::invalid("pool factor must be positive"));
    }
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.h.div_ceil(factor), s.w.div_ceil(factor));
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                let orow = out_shape.index(n, c, h / factor, 0);
                let irow = s.index(n, c, h, 0);
                for w in 0..s.w {
                    od[orow + w / factor] += xd[irow + w];
                }
            }
        }
    }
    Ok(out)
}
