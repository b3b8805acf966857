//! Fingerprints of the piecewise-linear decisions (ReLU gates, max-pool
//! winners, L1 signs) taken during a forward pass.
//!
//! Finite-difference gradient checks compare the fingerprints at `+h` and
//! `-h`; a mismatch means the perturbation crossed a point where the
//! function is not differentiable.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

thread_local! {
    static ACTIVE: RefCell<Option<DefaultHasher>> = const { RefCell::new(None) };
}

pub(crate) fn is_active() -> bool {
    ACTIVE.with(|a| a.borrow().is_some())
}

pub(crate) fn record<H: Hash + ?Sized>(value: &H) {
    ACTIVE.with(|a| {
        if let Some(h) = a.borrow_mut().as_mut() {
            value.hash(h);
        }
    });
}

/// Runs `f` and returns its result with the fingerprint of its decisions.
pub fn fingerprint<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev = ACTIVE.with(|a| a.borrow_mut().replace(DefaultHasher::new()));
    let out = f();
    let h = ACTIVE.with(|a| {
        let mut slot = a.borrow_mut();
        let done = slot.take().expect("trace active");
        *slot = prev;
        done.finish()
    });
    (out, h)
}
