pub mod bounds;
pub mod diagnostics;
pub mod downstream;
pub mod dynamics;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod io;
pub mod jacobian;
pub mod matrix;
pub mod neighbors;
pub mod stats;

pub use error::{Error, Result};
pub mod stochasticity;

/// Map over a slice, in parallel when the `parallel` feature is on. Output
/// order always matches input order.
pub(crate) fn par_map<T: Sync, R: Send, F: Fn(&T) -> R + Sync + Send>(items: &[T], f: F) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
