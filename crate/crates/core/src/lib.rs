//! Complex-valued Gaussian holographic radiance fields.
//!
//! Complex Gaussians are splatted onto parallel depth planes, coherently
//! propagated to a hologram plane with the angular spectrum method, and
//! back-propagated into focal stacks for supervision. Every stage has a
//! hand-written adjoint, so training needs no autodiff.

pub mod bench;
pub mod camera;
pub mod densify;
pub mod error;
pub mod fft;
pub mod field;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod optim;
pub mod phase_only;
pub mod pipeline;
pub mod projection;
pub mod propagation;
pub mod raster;
pub mod run;
pub mod scene;
pub mod ste;
pub mod ssim;
pub mod stats;
pub mod synthetic;
pub mod target;
pub mod train;

pub use error::{Error, Result};
