//! From-scratch CPU implementation of the CoADNet co-salient object
//! detection architecture: a reverse-mode tensor engine, the four
//! architecture modules with their baseline replacements, joint training on
//! synthetic co-saliency data, and the standard saliency metrics.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod gasa;
pub mod gcpd;
pub mod ggd;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oiasg;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{CoadError, Result};
pub use model::{AblationFlags, CoadNet, ModelConfig};
pub use tensor::{Scalar, Tensor};

/// Caps rayon's internal parallelism from `COAD_THREADS`. Safe to call more
/// than once; later calls are no-ops.
pub fn configure_threads_from_env() {
    if let Ok(v) = std::env::var("COAD_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
