//! Forward and backward kernels. These work directly on tensors and carry no
//! graph state; [`Tape`](super::Tape) records them.

use super::{Real, Result, Tensor, TensorError};

fn mismatch(op: &'static str, dim: impl Into<String>, expected: usize, found: usize) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        dim: dim.into(),
        expected,
        found,
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (o, &i) in y.iter_mut().zip(x) {
        *o += alpha * i;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn lane_sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l];
        }
    }
    let tail: T = a[chunks * 8..].iter().copied().sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Geometry of a stride-1 convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, pad: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        let (cin, h, wd) = x.chw(OP)?;
        let [cout, wcin, kh, kw] = *w.shape() else {
            return Err(TensorError::Rank {
                op: OP,
                expected: 4,
                found: w.shape().to_vec(),
            });
        };
        if wcin != cin {
            return Err(mismatch(OP, "input channels", wcin, cin));
        }
        if kh != kw {
            return Err(mismatch(OP, "kernel width", kh, kw));
        }
        if kh % 2 == 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("kernel size {kh} must be odd"),
            });
        }
        if b.shape() != [cout] {
            return Err(mismatch(OP, "bias length", cout, b.len()));
        }
        let ho = (h + 2 * pad) as isize - kh as isize + 1;
        let wo = (wd + 2 * pad) as isize - kh as isize + 1;
        if ho <= 0 || wo <= 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("output size {ho}x{wo} is not positive"),
            });
        }
        Ok(Self {
            cin,
            cout,
            h,
            w: wd,
            k: kh,
            pad,
            ho: ho as usize,
            wo: wo as usize,
        })
    }

    /// Output rows `y` (and columns) for which tap offset `t` reads inside the input.
    #[inline]
    fn valid(&self, t: usize, out: usize, input: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(t);
        let hi = out.min((input + self.pad).saturating_sub(t));
        (lo, hi.max(lo))
    }
}

/// Stride-1 2-D cross-correlation with zero padding.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w, b, pad)?;
    Ok(conv2d_forward(&g, x.data(), w.data(), b.data()))
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Tensor<T> {
    let ConvGeom {
        cin, cout, h, w: wd, k, pad, ho, wo,
    } = *g;
    let mut out = vec![T::zero(); cout * ho * wo];
    for co in 0..cout {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        plane.iter_mut().for_each(|v| *v = b[co]);
        for y in 0..ho {
            let orow = &mut plane[y * wo..(y + 1) * wo];
            for ci in 0..cin {
                let xin = &x[ci * h * wd..(ci + 1) * h * wd];
                let wk = &w[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                for ky in 0..k {
                    let iy = y + ky;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let irow = &xin[(iy - pad) * wd..(iy - pad + 1) * wd];
                    for kx in 0..k {
                        let (lo, hi) = g.valid(kx, wo, wd);
                        if lo >= hi {
                            continue;
                        }
                        let start = lo + kx - pad;
                        axpy(wk[ky * k + kx], &irow[start..start + (hi - lo)], &mut orow[lo..hi]);
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![cout, ho, wo],
        data: out,
    }
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let ConvGeom {
        cin, cout, h, w: wd, k, pad, ho, wo,
    } = *g;
    let mut gb = vec![T::zero(); cout];
    for (co, gbv) in gb.iter_mut().enumerate() {
        let plane = &gout[co * ho * wo..(co + 1) * ho * wo];
        *gbv = lane_sum(plane);
    }

    let mut gw = vec![T::zero(); cout * cin * k * k];
    for co in 0..cout {
        let gplane = &gout[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..cin {
            let xin = &x[ci * h * wd..(ci + 1) * h * wd];
            for ky in 0..k {
                let (ylo, yhi) = g.valid(ky, ho, h);
                for kx in 0..k {
                    let (lo, hi) = g.valid(kx, wo, wd);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for y in ylo..yhi {
                        let iy = y + ky - pad;
                        let start = lo + kx - pad;
                        acc += dot(
                            &gplane[y * wo + lo..y * wo + hi],
                            &xin[iy * wd + start..iy * wd + start + (hi - lo)],
                        );
                    }
                    gw[((co * cin + ci) * k + ky) * k + kx] = acc;
                }
            }
        }
    }

    let gx = need_x.then(|| {
        let mut gx = vec![T::zero(); cin * h * wd];
        for ci in 0..cin {
            let gplane_x = &mut gx[ci * h * wd..(ci + 1) * h * wd];
            for iy in 0..h {
                let grow = &mut gplane_x[iy * wd..(iy + 1) * wd];
                for co in 0..cout {
                    let gplane = &gout[co * ho * wo..(co + 1) * ho * wo];
                    let wk = &w[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                    for ky in 0..k {
                        // y + ky - pad = iy
                        let y = iy + pad;
                        if y < ky || y - ky >= ho {
                            continue;
                        }
                        let orow = &gplane[(y - ky) * wo..(y - ky + 1) * wo];
                        for kx in 0..k {
                            let (lo, hi) = g.valid(kx, wo, wd);
                            if lo >= hi {
                                continue;
                            }
                            let start = lo + kx - pad;
                            axpy(
                                wk[ky * k + kx],
                                &orow[lo..hi],
                                &mut grow[start..start + (hi - lo)],
                            );
                        }
                    }
                }
            }
        }
        gx
    });
    (gx, gw, gb)
}

/// NaN passes through so that non-finite values stay detectable downstream.
pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v < T::zero() { T::zero() } else { v })
}

pub(crate) fn relu_backward<T: Real>(x: &[T], gout: &[T]) -> Vec<T> {
    x.iter()
        .zip(gout)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index it was taken from.
pub(crate) fn maxpool2_with_argmax<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    const OP: &str = "maxpool2";
    let (c, h, w) = x.chw(OP)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::Invalid {
            op: OP,
            msg: format!("spatial size {h}x{w} must be even"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    let d = x.data();
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let base = (ch * h + 2 * y) * w + 2 * xx;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if d[i] > d[best] || d[i].is_nan() {
                        best = i;
                    }
                }
                out.push(d[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((
        Tensor {
            shape: vec![c, ho, wo],
            data: out,
        },
        arg,
    ))
}

pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2_with_argmax(x).map(|(t, _)| t)
}

/// Mean over non-overlapping `k`x`k` windows.
pub fn avgpool<T: Real>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    const OP: &str = "avgpool";
    let (c, h, w) = x.chw(OP)?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(TensorError::Invalid {
            op: OP,
            msg: format!("spatial size {h}x{w} not divisible by window {k}"),
        });
    }
    let (ho, wo) = (h / k, w / k);
    let inv = T::one() / T::cst((k * k) as f64);
    let mut out = vec![T::zero(); c * ho * wo];
    let d = x.data();
    for ch in 0..c {
        for y in 0..h {
            let orow = &mut out[(ch * ho + y / k) * wo..(ch * ho + y / k + 1) * wo];
            let irow = &d[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (xx, &v) in irow.iter().enumerate() {
                orow[xx / k] += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(Tensor {
        shape: vec![c, ho, wo],
        data: out,
    })
}

pub(crate) fn avgpool_backward<T: Real>(shape: &[usize], k: usize, gout: &[T]) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (ho, wo) = (h / k, w / k);
    let inv = T::one() / T::cst((k * k) as f64);
    let mut g = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                g[(ch * h + y) * w + xx] = gout[(ch * ho + y / k) * wo + xx / k] * inv;
            }
        }
    }
    g
}

/// Index into the shuffled output for each input element.
fn shuffle_index(c_out: usize, r: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let (oh, ow) = (h * r, w * r);
    (0..c_out).flat_map(move |c| {
        (0..r).flat_map(move |a| {
            (0..r).flat_map(move |b| {
                (0..h).flat_map(move |i| {
                    (0..w).map(move |j| {
                        let src = (((c * r * r + a * r + b) * h) + i) * w + j;
                        let dst = (c * oh + r * i + a) * ow + r * j + b;
                        (src, dst)
                    })
                })
            })
        })
    })
}

/// `(C*r*r, H, W) -> (C, r*H, r*W)` with `out[c, r*i+a, r*j+b] = x[c*r*r + a*r + b, i, j]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_shuffle";
    let (c, h, w) = x.chw(OP)?;
    if r == 0 || c % (r * r) != 0 {
        return Err(TensorError::Invalid {
            op: OP,
            msg: format!("{c} channels not divisible by r^2 = {}", r * r),
        });
    }
    let c_out = c / (r * r);
    let mut out = vec![T::zero(); x.len()];
    let d = x.data();
    for (src, dst) in shuffle_index(c_out, r, h, w) {
        out[dst] = d[src];
    }
    Ok(Tensor {
        shape: vec![c_out, h * r, w * r],
        data: out,
    })
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_unshuffle";
    let (c, h, w) = x.chw(OP)?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(TensorError::Invalid {
            op: OP,
            msg: format!("spatial size {h}x{w} not divisible by {r}"),
        });
    }
    let mut out = vec![T::zero(); x.len()];
    let d = x.data();
    for (src, dst) in shuffle_index(c, r, h / r, w / r) {
        out[src] = d[dst];
    }
    Ok(Tensor {
        shape: vec![c * r * r, h / r, w / r],
        data: out,
    })
}

pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    const OP: &str = "concat_channels";
    let first = xs.first().ok_or(TensorError::Invalid {
        op: OP,
        msg: "no inputs".into(),
    })?;
    let (_, h, w) = first.chw(OP)?;
    let mut total = 0;
    for (i, x) in xs.iter().enumerate() {
        let (c, hi, wi) = x.chw(OP)?;
        if hi != h {
            return Err(mismatch(OP, format!("height of input {i}"), h, hi));
        }
        if wi != w {
            return Err(mismatch(OP, format!("width of input {i}"), w, wi));
        }
        total += c;
    }
    let mut data = Vec::with_capacity(total * h * w);
    for x in xs {
        data.extend_from_slice(x.data());
    }
    Ok(Tensor {
        shape: vec![total, h, w],
        data,
    })
}

/// Mean squared error.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Invalid {
            op: "mse_loss",
            msg: format!("shape {:?} vs target {:?}", pred.shape(), target.shape()),
        });
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).as_f64();
            d * d
        })
        .sum();
    Ok(T::cst(sum / pred.len() as f64))
}
