use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Real, Tensor};

/// Random `(rows, cols)` matrix with orthonormal rows (if `rows <= cols`) or
/// orthonormal columns (otherwise). Deterministic per seed.
pub fn orthogonal_init<T: Real>(rows: usize, cols: usize, seed: u64) -> Tensor<T> {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init needs a non-empty shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tall_r, tall_c) = if rows > cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(tall_r, tall_c, |_, _| StandardNormal.sample(&mut rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the result uniformly distributed over the orthogonal group
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows > cols { q } else { q.transpose() };
    Tensor::from_fn(&[rows, cols], |i| T::cst(m[(i / cols, i % cols)]))
}

/// Convolution weight `(cout, cin, k, k)` drawn as an orthogonal
/// `(cout, cin*k*k)` matrix scaled by `gain`.
pub fn orthogonal_conv_weight<T: Real>(cout: usize, cin: usize, k: usize, gain: f64, seed: u64) -> Tensor<T> {
    let flat: Tensor<f64> = orthogonal_init(cout, cin * k * k, seed);
    Tensor::from_fn(&[cout, cin, k, k], |i| T::cst(gain * flat.data()[i]))
}
