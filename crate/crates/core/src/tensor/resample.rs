//! Separable bicubic resampling (Keys kernel, a = -0.5) with half-pixel
//! centres and edge clamping. When shrinking, the kernel is stretched by the
//! scale factor so every input pixel contributes.

use super::{Real, Tensor};

const A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per output index: the clamped source indices and their normalised weights.
fn axis_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    let support = scale.max(1.0);
    (0..output)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - 2.0 * support).floor() as isize;
            let hi = (center + 2.0 * support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let wgt = cubic_kernel((i as f64 - center) / support);
                if wgt == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, input as isize - 1) as usize;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some((_, acc)) => *acc += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            let total: f64 = taps.iter().map(|(_, w)| w).sum();
            taps.iter_mut().for_each(|(_, w)| *w /= total);
            taps
        })
        .collect()
}

/// Resizes every channel of a `(C, H, W)` tensor to `(C, out_h, out_w)`.
pub fn bicubic_resize<T: Real>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = img.chw("bicubic_resize").expect("bicubic_resize needs (C, H, W)");
    assert!(out_h >= 1 && out_w >= 1, "target size must be positive");
    let wx = axis_weights(w, out_w);
    let wy = axis_weights(h, out_h);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut rows = vec![0.0f64; h * out_w];
    for ch in 0..c {
        let plane = img.channel(ch);
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, taps) in wx.iter().enumerate() {
                rows[y * out_w + x] = taps.iter().map(|&(i, k)| k * src[i].as_f64()).sum();
            }
        }
        for taps in &wy {
            for x in 0..out_w {
                let v: f64 = taps.iter().map(|&(i, k)| k * rows[i * out_w + x]).sum();
                out.push(T::cst(v));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out).expect("consistent shape")
}

/// Mirrors every channel of a `(C, H, W)` tensor left to right.
pub fn flip_horizontal<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let (_, _, w) = img.chw("flip_horizontal").expect("flip_horizontal needs (C, H, W)");
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}
