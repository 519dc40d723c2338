//! Spatial pooling: 2x2 max pool and global/adaptive average pool.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBase};

pub struct MaxPoolCache {
    pub input_shape: Vec<usize>,
    /// Flat input index of the winner for each output cell.
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major
/// window order so the backward routing is deterministic.
pub fn max_pool2d_forward<E: Scalar>(
    input: &TensorBase<E>,
) -> Result<(TensorBase<E>, MaxPoolCache)> {
    let (n, c, h, w) = input.dims4("max_pool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "max_pool2d",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![E::zero(); n * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];

    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + (oy * 2) * w + ox * 2;
                let mut best = x[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (oy * 2 + dy) * w + ox * 2 + dx;
                    if x[i] > best {
                        best = x[i];
                        best_i = i;
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                out[o] = best;
                argmax[o] = best_i;
            }
        }
    }
    let out = TensorBase::new(vec![n, c, oh, ow], out)?;
    let cache = MaxPoolCache {
        input_shape: vec![n, c, h, w],
        argmax,
    };
    Ok((out, cache))
}

pub fn max_pool2d_backward<E: Scalar>(
    cache: &MaxPoolCache,
    grad_out: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    if grad_out.numel() != cache.argmax.len() {
        return Err(Error::shape(
            "max_pool2d_backward",
            format!("grad has {} cells, cache has {}", grad_out.numel(), cache.argmax.len()),
        ));
    }
    let mut gx = TensorBase::zeros(&cache.input_shape);
    for (o, &i) in cache.argmax.iter().enumerate() {
        gx.data_mut()[i] = gx.data()[i] + grad_out.data()[o];
    }
    Ok(gx)
}

/// Per-channel mean over the spatial dims, output [N, C, 1, 1].
pub fn global_average_pool_forward<E: Scalar>(input: &TensorBase<E>) -> Result<TensorBase<E>> {
    let (n, c, h, w) = input.dims4("global_average_pool")?;
    let m = (h * w) as f64;
    let x = input.data();
    let mut out = vec![E::zero(); n * c];
    for nc in 0..n * c {
        let base = nc * h * w;
        let sum: f64 = x[base..base + h * w].iter().map(|v| v.into_f64()).sum();
        out[nc] = E::of_f64(sum / m);
    }
    TensorBase::new(vec![n, c, 1, 1], out)
}

/// Distributes each channel's gradient uniformly over its spatial cells.
pub fn global_average_pool_backward<E: Scalar>(
    input_shape: &[usize],
    grad_out: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    let [n, c, h, w] = input_shape else {
        return Err(Error::shape("global_average_pool_backward", "rank 4 expected".to_string()));
    };
    if grad_out.shape() != [*n, *c, 1, 1] {
        return Err(Error::shape(
            "global_average_pool_backward",
            format!("grad shape {:?}, expected [{n},{c},1,1]", grad_out.shape()),
        ));
    }
    let scale = 1.0 / (h * w) as f64;
    let mut gx = vec![E::zero(); n * c * h * w];
    for nc in 0..n * c {
        let g = E::of_f64(grad_out.data()[nc].into_f64() * scale);
        for v in &mut gx[nc * h * w..(nc + 1) * h * w] {
            *v = g;
        }
    }
    TensorBase::new(vec![*n, *c, *h, *w], gx)
}

/// Adaptive average pooling restricted to the 1x1 target the model needs;
/// identical contract to [`global_average_pool_forward`] in that case.
pub fn adaptive_average_pool_forward<E: Scalar>(
    input: &TensorBase<E>,
    out_h: usize,
    out_w: usize,
) -> Result<TensorBase<E>> {
    let (_, _, h, w) = input.dims4("adaptive_average_pool")?;
    if out_h > h || out_w > w {
        return Err(Error::shape(
            "adaptive_average_pool",
            format!("requested {out_h}x{out_w} exceeds input {h}x{w}"),
        ));
    }
    if (out_h, out_w) != (1, 1) {
        return Err(Error::shape(
            "adaptive_average_pool",
            format!("only 1x1 targets are supported, got {out_h}x{out_w}"),
        ));
    }
    global_average_pool_forward(input)
}
