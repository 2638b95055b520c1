use super::{ParamStore, Real};

/// One SGD step with heavy-ball momentum, then clears the gradients:
/// `v <- momentum * v + grad; value <- value - lr * v`.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, lr: T, momentum: T) {
    assert!(lr > T::zero(), "learning rate must be positive");
    assert!(
        momentum >= T::zero() && momentum < T::one(),
        "momentum must lie in [0, 1)"
    );
    for p in params.iter_mut() {
        let (value, grad, vel) = (p.value.data_mut(), p.grad.data_mut(), p.momentum.data_mut());
        for ((w, g), v) in value.iter_mut().zip(grad.iter_mut()).zip(vel.iter_mut()) {
            *v = momentum * *v + *g;
            *w -= lr * *v;
            *g = T::zero();
        }
    }
}
