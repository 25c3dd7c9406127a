use super::Tensor;
use crate::error::{invalid, shape, Result};

/// `max(x, 0)` elementwise; NaN passes through.
pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| if v <= 0.0 { 0.0 } else { v }).collect(),
        ..*x
    }
}

/// Passes `upstream` where the pre-activation was positive.
pub fn relu_backward(pre: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if pre.shape() != upstream.shape() {
        return Err(shape("relu upstream", format!("{:?}", pre.shape()), format!("{:?}", upstream.shape())));
    }
    Ok(Tensor {
        data: pre
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(&p, &u)| if p > 0.0 { u } else { 0.0 })
            .collect(),
        ..*pre
    })
}

fn pooled_dims(x: &Tensor, k: usize) -> Result<(usize, usize)> {
    if k == 0 || k > x.height || k > x.width {
        return Err(invalid(format!(
            "pool size {k} does not fit a {}x{} input",
            x.height, x.width
        )));
    }
    Ok((x.height / k, x.width / k))
}

/// Non-overlapping `k x k` max pooling. Trailing rows and columns that do not
/// fill a window are dropped. Returns the output and, per output cell, the
/// flat input index of its maximum (the first one on ties).
pub fn max_pool2d(x: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    let (ho, wo) = pooled_dims(x, k)?;
    let mut out = Tensor::zeros(x.channels, ho, wo);
    let mut arg = Vec::with_capacity(out.len());
    for c in 0..x.channels {
        for y in 0..ho {
            for xo in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for u in 0..k {
                    for v in 0..k {
                        let idx = (c * x.height + y * k + u) * x.width + xo * k + v;
                        if x.data[idx] > best || u + v == 0 {
                            best = x.data[idx];
                            at = idx;
                        }
                    }
                }
                out.data[(c * ho + y) * wo + xo] = best;
                arg.push(at);
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2d_backward(upstream: &Tensor, argmax: &[usize], input_shape: (usize, usize, usize)) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(shape("max-pool upstream", argmax.len(), upstream.len()));
    }
    let (c, h, w) = input_shape;
    let mut dx = Tensor::zeros(c, h, w);
    for (&i, &u) in argmax.iter().zip(&upstream.data) {
        dx.data[i] += u;
    }
    Ok(dx)
}

/// Non-overlapping `k x k` mean pooling.
pub fn avg_pool2d(x: &Tensor, k: usize) -> Result<Tensor> {
    let (ho, wo) = pooled_dims(x, k)?;
    let mut out = Tensor::zeros(x.channels, ho, wo);
    let scale = 1.0 / (k * k) as f64;
    for c in 0..x.channels {
        for y in 0..ho {
            for xo in 0..wo {
                let mut s = 0.0;
                for u in 0..k {
                    for v in 0..k {
                        s += x.at(c, y * k + u, xo * k + v);
                    }
                }
                out.data[(c * ho + y) * wo + xo] = s * scale;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2d_backward(upstream: &Tensor, k: usize, input_shape: (usize, usize, usize)) -> Result<Tensor> {
    let (c, h, w) = input_shape;
    if k == 0 || upstream.shape() != (c, h / k, w / k) {
        return Err(shape(
            "avg-pool upstream",
            format!("{:?}", (c, h / k.max(1), w / k.max(1))),
            format!("{:?}", upstream.shape()),
        ));
    }
    let mut dx = Tensor::zeros(c, h, w);
    let scale = 1.0 / (k * k) as f64;
    let (ho, wo) = (h / k, w / k);
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let g = upstream.data[(ch * ho + y) * wo + xo] * scale;
                for u in 0..k {
                    for v in 0..k {
                        dx.data[(ch * h + y * k + u) * w + xo * k + v] += g;
                    }
                }
            }
        }
    }
    Ok(dx)
}
