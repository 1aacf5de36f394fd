//! Dense kernels: convolution, max pooling, fully connected layers, ReLU.
//!
//! Activations are `(channels, height, width)` row-major; convolution
//! weights are `(out, in, k, k)`; fully connected weights are `(out, in)`.

use super::spec::{ConvSpec, PoolSpec};
use crate::linalg::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Panics if the value count does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn chw(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [c, h, w] => (c, h, w),
            [n] => (n, 1, 1),
            _ => panic!("expected a 3-d tensor"),
        }
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `kk`.
#[inline]
fn out_range(
    kk: usize,
    pad: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    // input index = o*stride + kk - pad must lie in [0, in_len)
    let lo = if kk >= pad {
        0
    } else {
        (pad - kk).div_ceil(stride)
    };
    let hi = if in_len + pad > kk {
        ((in_len + pad - kk - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv_forward(
    input: &Tensor,
    w: &[f64],
    b: &[f64],
    c: &ConvSpec,
    oh: usize,
    ow: usize,
) -> Tensor {
    let (cin, ih, iw) = input.chw();
    let k = c.k;
    let mut out = Tensor::zeros(&[c.out, oh, ow]);
    for o in 0..c.out {
        let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let src = &input.data[i * ih * iw..(i + 1) * ih * iw];
            for ky in 0..k {
                let (y0, y1) = out_range(ky, c.pad, c.stride, ih, oh);
                for kx in 0..k {
                    let wv = w[((o * cin + i) * k + ky) * k + kx];
                    let (x0, x1) = out_range(kx, c.pad, c.stride, iw, ow);
                    for y in y0..y1 {
                        let iy = y * c.stride + ky - c.pad;
                        let row = &mut plane[y * ow..(y + 1) * ow];
                        let srow = &src[iy * iw..(iy + 1) * iw];
                        if c.stride == 1 {
                            let off = kx as isize - c.pad as isize;
                            let s =
                                &srow[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                            for (r, sv) in row[x0..x1].iter_mut().zip(s) {
                                *r += wv * sv;
                            }
                        } else {
                            for x in x0..x1 {
                                row[x] += wv * srow[x * c.stride + kx - c.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    input: &Tensor,
    w: &[f64],
    c: &ConvSpec,
    dout: &Tensor,
    dw: &mut [f64],
    db: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let (cin, ih, iw) = input.chw();
    let (_, oh, ow) = dout.chw();
    let k = c.k;
    let mut din = want_input.then(|| Tensor::zeros(&input.shape));
    for o in 0..c.out {
        let g = &dout.data[o * oh * ow..(o + 1) * oh * ow];
        db[o] += g.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input.data[i * ih * iw..(i + 1) * ih * iw];
            for ky in 0..k {
                let (y0, y1) = out_range(ky, c.pad, c.stride, ih, oh);
                for kx in 0..k {
                    let widx = ((o * cin + i) * k + ky) * k + kx;
                    let wv = w[widx];
                    let (x0, x1) = out_range(kx, c.pad, c.stride, iw, ow);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = y * c.stride + ky - c.pad;
                        let grow = &g[y * ow..(y + 1) * ow];
                        let srow = &src[iy * iw..(iy + 1) * iw];
                        if c.stride == 1 {
                            let off = kx as isize - c.pad as isize;
                            let lo = (x0 as isize + off) as usize;
                            let hi = (x1 as isize + off) as usize;
                            acc += dot(&grow[x0..x1], &srow[lo..hi]);
                            if let Some(d) = din.as_mut() {
                                let drow =
                                    &mut d.data[i * ih * iw + iy * iw..i * ih * iw + (iy + 1) * iw];
                                for (dv, gv) in drow[lo..hi].iter_mut().zip(&grow[x0..x1]) {
                                    *dv += wv * gv;
                                }
                            }
                        } else {
                            for x in x0..x1 {
                                let ix = x * c.stride + kx - c.pad;
                                acc += grow[x] * srow[ix];
                                if let Some(d) = din.as_mut() {
                                    d.data[i * ih * iw + iy * iw + ix] += wv * grow[x];
                                }
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    din
}

/// Max pooling; also returns the flat input index of each output's maximum
/// (first one on ties).
pub fn maxpool_forward(input: &Tensor, p: &PoolSpec, oh: usize, ow: usize) -> (Tensor, Vec<usize>) {
    let (c, ih, iw) = input.chw();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut arg = vec![0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let (ys, xs) = (y * p.stride, x * p.stride);
                let mut best = f64::NEG_INFINITY;
                let mut bi = 0;
                for iy in ys..(ys + p.k).min(ih) {
                    for ix in xs..(xs + p.k).min(iw) {
                        let idx = (ch * ih + iy) * iw + ix;
                        if input.data[idx] > best {
                            best = input.data[idx];
                            bi = idx;
                        }
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out.data[o] = best;
                arg[o] = bi;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(input_shape: &[usize], arg: &[usize], dout: &[f64]) -> Tensor {
    let mut din = Tensor::zeros(input_shape);
    for (a, g) in arg.iter().zip(dout) {
        din.data[*a] += g;
    }
    din
}

pub fn fc_forward(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bv)| bv + dot(&w[o * n..(o + 1) * n], x))
        .collect()
}

/// Accumulates weight and bias gradients and returns the gradient with
/// respect to the first `input_grad_len` inputs.
pub fn fc_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    input_grad_len: usize,
) -> Vec<f64> {
    let n = x.len();
    let mut dx = vec![0.0; input_grad_len];
    for (o, g) in dout.iter().enumerate() {
        db[o] += g;
        if *g == 0.0 {
            continue;
        }
        for (d, xv) in dw[o * n..(o + 1) * n].iter_mut().zip(x) {
            *d += g * xv;
        }
        for (d, wv) in dx.iter_mut().zip(&w[o * n..o * n + input_grad_len]) {
            *d += g * wv;
        }
    }
    dx
}

pub fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeros gradient entries whose (post-ReLU) activation is not positive.
pub fn relu_backward(activation: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn naive_conv(
        input: &Tensor,
        w: &[f64],
        b: &[f64],
        c: &ConvSpec,
        oh: usize,
        ow: usize,
    ) -> Tensor {
        let (cin, ih, iw) = input.chw();
        let mut out = Tensor::zeros(&[c.out, oh, ow]);
        for o in 0..c.out {
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = b[o];
                    for i in 0..cin {
                        for ky in 0..c.k {
                            for kx in 0..c.k {
                                let iy = (y * c.stride + ky) as isize - c.pad as isize;
                                let ix = (x * c.stride + kx) as isize - c.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < ih && (ix as usize) < iw {
                                    s += w[((o * cin + i) * c.k + ky) * c.k + kx]
                                        * input.data[(i * ih + iy as usize) * iw + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * oh + y) * ow + x] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_definition() {
        for (stride, pad, k, side) in [
            (1, 1, 3, 7),
            (2, 1, 3, 7),
            (2, 2, 5, 8),
            (1, 0, 2, 5),
            (3, 2, 3, 10),
        ] {
            let c = ConvSpec::new(2, k, stride, pad);
            let input = Tensor::from_vec(
                &[3, side, side + 1],
                (0..3 * side * (side + 1))
                    .map(|i| ((i * 7919) % 23) as f64 / 7.0 - 1.5)
                    .collect(),
            );
            let w: Vec<f64> = (0..2 * 3 * k * k)
                .map(|i| ((i * 31) % 11) as f64 / 5.0 - 1.0)
                .collect();
            let b = [0.25, -0.5];
            let oh = c.out_side(side).unwrap();
            let ow = c.out_side(side + 1).unwrap();
            let fast = conv_forward(&input, &w, &b, &c, oh, ow);
            let slow = naive_conv(&input, &w, &b, &c, oh, ow);
            for (a, e) in fast.data.iter().zip(&slow.data) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_takes_max_of_partial_windows() {
        let input = Tensor::from_vec(&[1, 3, 3], (0..9).map(f64::from).collect());
        let p = PoolSpec { k: 2, stride: 2 };
        let (out, arg) = maxpool_forward(&input, &p, 2, 2);
        assert_eq!(out.data, vec![4.0, 5.0, 7.0, 8.0]);
        assert_eq!(arg, vec![4, 5, 7, 8]);
        let back = maxpool_backward(&input.shape, &arg, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(back.data[8], 4.0);
        assert_eq!(back.data.iter().sum::<f64>(), 10.0);
    }
}
