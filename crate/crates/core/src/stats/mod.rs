//! Pure statistical kernels dispatched by the `apply_formula` grammar step.
//!
//! Every public kernel bumps a per-thread call counter so callers can assert
//! that a code path (rendering, for one) never recomputes statistics.

mod descriptive;
mod incidence;
mod km;
mod normal;

use std::cell::Cell;

pub use descriptive::{
    describe_categorical, describe_continuous, quantile, CategoricalSummary, DescriptiveSummary, LevelCount,
};
pub use incidence::{ae_incidence, AeRow, IncidenceRow, ANY_EVENT};
pub use km::{km_estimate, km_median, KMCurve, KMPoint};
pub use normal::normal_quantile;

thread_local! {
    static KERNEL_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of kernel invocations made on the current thread.
pub fn kernel_calls() -> u64 {
    KERNEL_CALLS.with(Cell::get)
}

fn record_call() {
    KERNEL_CALLS.with(|c| c.set(c.get() + 1));
}
