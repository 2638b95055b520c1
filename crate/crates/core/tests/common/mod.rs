//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use depthpose::codec::GtMaps;
use depthpose::model::{LossWeights, Model};
use depthpose::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const FD_EPS: f64 = 1e-4;
pub const FD_RTOL: f64 = 1e-3;
/// Absolute slack for gradients that are zero up to rounding.
pub const FD_ATOL: f64 = 1e-9;

pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_RTOL * analytic.abs().max(numeric.abs()) + FD_ATOL
}

/// Deterministic pseudo-random stream for test data.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 11
    }
    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() as f64 / (1u64 << 53) as f64)
    }
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
    pub fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.uniform(lo, hi))
    }
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub failures: Vec<String>,
}

/// Total-loss value and activation pattern of the model on one example.
fn loss_and_pattern(model: &Model<f64>, x: &Tensor<f64>, gt: &GtMaps, hr: &Tensor<f64>) -> (f64, u64) {
    let mut tape = Tape::new();
    let fwd = model.forward_tape(&mut tape, x).unwrap();
    let lv = model.compute_loss(&mut tape, &fwd, gt, hr, LossWeights::default()).unwrap();
    (tape.value(lv.total).item(), tape.activation_pattern())
}

/// Central-difference check of `per_tensor` entries of every parameter
/// tensor. Entries whose perturbation changes a ReLU sign or max-pool winner
/// are skipped and counted, since the loss is not differentiable across them.
pub fn check_model_gradients(
    model: &mut Model<f64>,
    x: &Tensor<f64>,
    gt: &GtMaps,
    hr: &Tensor<f64>,
    per_tensor: usize,
    rng: &mut Lcg,
) -> GradReport {
    let mut tape = Tape::new();
    let fwd = model.forward_tape(&mut tape, x).unwrap();
    let lv = model.compute_loss(&mut tape, &fwd, gt, hr, LossWeights::default()).unwrap();
    let base_pattern = tape.activation_pattern();
    let grads = tape.gradients(lv.total).unwrap();
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut report = GradReport::default();
    for id in ids {
        let n = model.params.get(id).value.len();
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.below(n)).collect()
        };
        for i in picks {
            let orig = model.params.get(id).value.data()[i];
            model.params.get_mut(id).value.data_mut()[i] = orig + FD_EPS;
            let (lp, pp) = loss_and_pattern(model, x, gt, hr);
            model.params.get_mut(id).value.data_mut()[i] = orig - FD_EPS;
            let (lm, pm) = loss_and_pattern(model, x, gt, hr);
            model.params.get_mut(id).value.data_mut()[i] = orig;
            if pp != base_pattern || pm != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_EPS);
            report.checked += 1;
            if !grad_close(analytic[i], numeric) {
                report.failures.push(format!(
                    "{}[{i}]: analytic {:.6e}, numeric {:.6e}",
                    model.params.get(id).name,
                    analytic[i],
                    numeric
                ));
            }
        }
    }
    report
}

/// Finite-difference check of a scalar function of the parameters in
/// `store`, over every entry. `f` records the computation on a fresh tape and
/// returns the loss node.
pub fn check_fn_gradients(
    store: &mut ParamStore<f64>,
    f: &dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
) -> GradReport {
    let eval = |store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        (tape.value(loss).item(), tape.activation_pattern())
    };
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    let base = tape.activation_pattern();
    let grads = tape.gradients(loss).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    let mut report = GradReport::default();
    for id in ids {
        let n = store.get(id).value.len();
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_EPS;
            let (lp, pp) = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - FD_EPS;
            let (lm, pm) = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            if pp != base || pm != base {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * FD_EPS);
            report.checked += 1;
            if !grad_close(analytic[i], numeric) {
                report.failures.push(format!(
                    "{}[{i}]: analytic {:.6e}, numeric {:.6e}",
                    store.get(id).name,
                    analytic[i],
                    numeric
                ));
            }
        }
    }
    report
}

pub type OpCase = (&'static str, fn(&mut Lcg) -> (ParamStore<f64>, Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var>));

/// Loss `mse(y, target)` with a fixed random target, so the upstream
/// gradient into `y` is generic.
fn to_loss(tape: &mut Tape<f64>, y: Var, target: &Tensor<f64>) -> Var {
    let t = tape.leaf(target.clone());
    tape.mse(y, t).unwrap()
}

fn params(rng: &mut Lcg, shapes: &[(&str, &[usize])]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.add(*name, rng.tensor(shape, -1.0, 1.0)).unwrap();
    }
    s
}

fn vars(tape: &mut Tape<f64>, store: &ParamStore<f64>) -> Vec<Var> {
    store.ids().map(|id| tape.param(store, id)).collect()
}

macro_rules! unary_case {
    ($name:expr, $shape:expr, $out:expr, |$tape:ident, $x:ident| $body:expr) => {
        ($name, |rng: &mut Lcg| {
            let store = params(rng, &[("x", &$shape)]);
            let target = rng.tensor(&$out, -1.0, 1.0);
            let f = move |$tape: &mut Tape<f64>, s: &ParamStore<f64>| {
                let $x = vars($tape, s)[0];
                let y = $body;
                to_loss($tape, y, &target)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var>)
        })
    };
}

fn conv_case(k: usize, rng: &mut Lcg) -> (ParamStore<f64>, Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var>) {
    let store = params(rng, &[("x", &[2, 5, 6]), ("w", &[3, 2, k, k]), ("b", &[3])]);
    let target = rng.tensor(&[3, 5, 6], -1.0, 1.0);
    let f = move |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
        let v = vars(tape, s);
        let y = tape.conv2d(v[0], v[1], v[2], k / 2).unwrap();
        to_loss(tape, y, &target)
    };
    (store, Box::new(f))
}

/// Every differentiable tape operation on a small random instance.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("conv2d k1", |r| conv_case(1, r)),
        ("conv2d k3", |r| conv_case(3, r)),
        ("conv2d k7", |r| conv_case(7, r)),
        ("conv2d valid", |rng| {
            let store = params(rng, &[("x", &[2, 5, 6]), ("w", &[2, 2, 3, 3]), ("b", &[2])]);
            let target = rng.tensor(&[2, 3, 4], -1.0, 1.0);
            let f = move |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
                let v = vars(tape, s);
                let y = tape.conv2d(v[0], v[1], v[2], 0).unwrap();
                to_loss(tape, y, &target)
            };
            (store, Box::new(f))
        }),
        unary_case!("relu", [2, 4, 5], [2, 4, 5], |t, x| t.relu(x)),
        unary_case!("maxpool2", [2, 4, 6], [2, 2, 3], |t, x| t.maxpool2(x).unwrap()),
        unary_case!("avgpool 2", [2, 4, 6], [2, 2, 3], |t, x| t.avgpool(x, 2).unwrap()),
        unary_case!("avgpool 4", [1, 8, 8], [1, 2, 2], |t, x| t.avgpool(x, 4).unwrap()),
        unary_case!("pixel_shuffle 2", [8, 2, 3], [2, 4, 6], |t, x| t.pixel_shuffle(x, 2).unwrap()),
        unary_case!("pixel_shuffle 4", [16, 2, 2], [1, 8, 8], |t, x| t.pixel_shuffle(x, 4).unwrap()),
        unary_case!("pixel_unshuffle 2", [2, 4, 6], [8, 2, 3], |t, x| t.pixel_unshuffle(x, 2).unwrap()),
        unary_case!("scale", [2, 3, 3], [2, 3, 3], |t, x| t.scale(x, -1.7)),
        ("concat", |rng| {
            let store = params(rng, &[("a", &[1, 3, 4]), ("b", &[2, 3, 4]), ("c", &[3, 3, 4])]);
            let target = rng.tensor(&[6, 3, 4], -1.0, 1.0);
            let f = move |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
                let v = vars(tape, s);
                let y = tape.concat(&v).unwrap();
                to_loss(tape, y, &target)
            };
            (store, Box::new(f))
        }),
        ("add", |rng| {
            let store = params(rng, &[("a", &[2, 3, 4]), ("b", &[2, 3, 4])]);
            let target = rng.tensor(&[2, 3, 4], -1.0, 1.0);
            let f = move |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
                let v = vars(tape, s);
                let y = tape.add(v[0], v[1]).unwrap();
                to_loss(tape, y, &target)
            };
            (store, Box::new(f))
        }),
        ("mse_loss", |rng| {
            let store = params(rng, &[("pred", &[2, 3, 4]), ("target", &[2, 3, 4])]);
            let f = |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
                let v = vars(tape, s);
                tape.mse(v[0], v[1]).unwrap()
            };
            (store, Box::new(f))
        }),
        ("sum_scalars", |rng| {
            let store = params(rng, &[("a", &[2, 3]), ("b", &[2, 3]), ("c", &[1, 4])]);
            let (ta, tb, tc) = (rng.tensor(&[2, 3], -1.0, 1.0), rng.tensor(&[2, 3], -1.0, 1.0), rng.tensor(&[1, 4], -1.0, 1.0));
            let f = move |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
                let v = vars(tape, s);
                let la = to_loss(tape, v[0], &ta);
                let lb = to_loss(tape, v[1], &tb);
                let lc = to_loss(tape, v[2], &tc);
                tape.sum_scalars(&[la, lb, lc]).unwrap()
            };
            (store, Box::new(f))
        }),
        ("conv-relu-mse composite", |rng| {
            let store = params(rng, &[("x", &[1, 6, 6]), ("w1", &[4, 1, 3, 3]), ("b1", &[4]), ("w2", &[2, 4, 3, 3]), ("b2", &[2])]);
            let target = rng.tensor(&[2, 3, 3], -1.0, 1.0);
            let f = move |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
                let v = vars(tape, s);
                let h = tape.conv2d(v[0], v[1], v[2], 1).unwrap();
                let h = tape.relu(h);
                let h = tape.maxpool2(h).unwrap();
                let y = tape.conv2d(h, v[3], v[4], 1).unwrap();
                to_loss(tape, y, &target)
            };
            (store, Box::new(f))
        }),
    ]
}

/// Runs every op case for `seeds` seeds; returns per-op `(checked, skipped, failures)`.
pub fn op_gradient_suite(seeds: u64) -> Vec<(&'static str, GradReport)> {
    op_cases()
        .into_iter()
        .map(|(name, make)| {
            let mut total = GradReport::default();
            for seed in 0..seeds {
                let mut rng = Lcg(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED);
                let (mut store, f) = make(&mut rng);
                let r = check_fn_gradients(&mut store, &*f);
                total.checked += r.checked;
                total.skipped_kinks += r.skipped_kinks;
                total.failures.extend(r.failures.into_iter().map(|m| format!("seed {seed}: {m}")));
            }
            (name, total)
        })
        .collect()
}
