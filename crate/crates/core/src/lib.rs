//! K-cluster regression forests with weighted splitting and the face
//! alignment pipeline built on them: affine pose regression, 3-D affine
//! pose regression and an LBF-style cascaded shape regressor.

pub mod align;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod geom;
pub mod imgproc;
pub mod linclf;
pub mod par;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
