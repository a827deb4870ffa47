use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};

/// A vector of `f64` shared between Hogwild workers.
///
/// Every scalar is an `AtomicU64` holding the float's bits, so individual
/// loads and stores are never torn. Read-modify-write sequences across
/// elements are not atomic as a group.
#[derive(Debug)]
pub struct SharedVector {
    data: Box<[AtomicU64]>,
}

impl SharedVector {
    pub fn new(values: &[f64]) -> Self {
        SharedVector {
            data: values.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        SharedVector {
            data: (0..len).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.data[i].load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set(&self, i: usize, v: f64) {
        self.data[i].store(v.to_bits(), Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|a| f64::from_bits(a.load(Ordering::Relaxed)))
            .collect()
    }

    pub fn snapshot_into(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.data.iter().map(|a| f64::from_bits(a.load(Ordering::Relaxed))));
    }

    pub fn copy_from(&self, values: &[f64]) {
        for (a, v) in self.data.iter().zip(values) {
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    pub fn copy_from_shared(&self, other: &SharedVector) {
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            a.store(b.load(Ordering::Relaxed), Ordering::Relaxed);
        }
    }
}

/// Moving average of squared gradients, shared across workers.
#[derive(Debug)]
pub struct RmspropState {
    pub mean_square: SharedVector,
    pub decay: f64,
    pub damping: f64,
}

impl RmspropState {
    pub const DEFAULT_DECAY: f64 = 0.99;
    pub const DEFAULT_DAMPING: f64 = 1e-8;

    pub fn new(len: usize, decay: f64, damping: f64) -> Self {
        RmspropState {
            mean_square: SharedVector::zeros(len),
            decay,
            damping,
        }
    }

    pub fn from_values(values: &[f64], decay: f64, damping: f64) -> Self {
        RmspropState {
            mean_square: SharedVector::new(values),
            decay,
            damping,
        }
    }
}

/// `g <- decay*g + (1-decay)*grad^2; param <- param - lr*grad/sqrt(g + damping)`.
///
/// Fails without touching anything if a gradient is non-finite or the
/// layouts disagree.
pub fn apply_rmsprop(
    params: &SharedVector,
    state: &RmspropState,
    grads: &[f64],
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.mean_square.len() != params.len() {
        return Err(Error::Shape {
            context: "rmsprop update",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::validation("lr", format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let rho = state.decay;
    for (i, &grad) in grads.iter().enumerate() {
        let g = rho * state.mean_square.get(i) + (1.0 - rho) * grad * grad;
        state.mean_square.set(i, g);
        if lr != 0.0 {
            let p = params.get(i);
            params.set(i, p - lr * grad / (g + state.damping).sqrt());
        }
    }
    Ok(())
}

/// Parameters and optimizer state behind the Hogwild contract, with an
/// optional lock that serializes updates in strict mode.
#[derive(Debug)]
pub struct SharedParameters {
    pub params: SharedVector,
    pub rmsprop: RmspropState,
    strict_lock: Option<Mutex<()>>,
}

impl SharedParameters {
    pub fn new(params: &[f64], rmsprop: RmspropState, strict: bool) -> Self {
        SharedParameters {
            params: SharedVector::new(params),
            rmsprop,
            strict_lock: strict.then(|| Mutex::new(())),
        }
    }

    pub fn apply(&self, grads: &[f64], lr: f64) -> Result<()> {
        match &self.strict_lock {
            Some(lock) => {
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                apply_rmsprop(&self.params, &self.rmsprop, grads, lr)
            }
            None => apply_rmsprop(&self.params, &self.rmsprop, grads, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_updates_only_mean_square() {
        let p = SharedVector::new(&[1.0, -2.0]);
        let s = RmspropState::new(2, 0.99, 1e-8);
        apply_rmsprop(&p, &s, &[0.5, 1.0], 0.0).unwrap();
        assert_eq!(p.snapshot(), vec![1.0, -2.0]);
        let g = s.mean_square.snapshot();
        assert!((g[0] - 0.01 * 0.25).abs() < 1e-15);
        assert!((g[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_single_step() {
        let p = SharedVector::new(&[0.0]);
        let s = RmspropState::new(1, 0.99, 1e-8);
        apply_rmsprop(&p, &s, &[1.0], 0.1).unwrap();
        let g = s.mean_square.get(0);
        assert!((g - 0.01).abs() < 1e-17);
        let expected = -0.1 / (0.01f64 + 1e-8).sqrt();
        assert!((p.get(0) - expected).abs() < 1e-12);
    }

    #[test]
    fn repeated_grads_approach_lr_sign_step() {
        let p = SharedVector::new(&[0.0]);
        let s = RmspropState::new(1, 0.99, 1e-8);
        for _ in 0..5000 {
            apply_rmsprop(&p, &s, &[-3.0], 0.0).unwrap();
        }
        let before = p.get(0);
        apply_rmsprop(&p, &s, &[-3.0], 0.01).unwrap();
        let step = p.get(0) - before;
        assert!((step - 0.01).abs() < 1e-6, "step {step}");
    }

    #[test]
    fn non_finite_gradient_rejected_before_mutation() {
        let p = SharedVector::new(&[1.0, 1.0]);
        let s = RmspropState::new(2, 0.99, 1e-8);
        assert!(apply_rmsprop(&p, &s, &[1.0, f64::NAN], 0.1).is_err());
        assert_eq!(p.snapshot(), vec![1.0, 1.0]);
        assert_eq!(s.mean_square.snapshot(), vec![0.0, 0.0]);
    }

    #[test]
    fn concurrent_updates_keep_values_finite() {
        let shared = SharedParameters::new(&vec![0.0; 64], RmspropState::new(64, 0.99, 1e-8), false);
        std::thread::scope(|scope| {
            for w in 0..4 {
                let shared = &shared;
                scope.spawn(move || {
                    let grads: Vec<f64> = (0..64).map(|i| ((i + w) % 7) as f64 - 3.0).collect();
                    for _ in 0..200 {
                        shared.apply(&grads, 1e-3).unwrap();
                    }
                });
            }
        });
        assert!(shared.params.snapshot().iter().all(|x| x.is_finite()));
        assert!(shared.rmsprop.mean_square.snapshot().iter().all(|&g| g >= 0.0));
    }
}
