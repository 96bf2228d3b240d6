//! Per-thread floating-point operation counter.
//!
//! Matrix products and convolutions add their multiply-add count here so
//! callers can measure how an operation's cost scales with input size.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add(n: u64) {
    COUNTER.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Current counter value for this thread.
pub fn read() -> u64 {
    COUNTER.with(Cell::get)
}

/// Runs `f` and returns its result together with the flops it recorded.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let start = read();
    let out = f();
    (out, read().wrapping_sub(start))
}
