//! Language-embedded radiance fields with point-wise semantic supervision,
//! transfer to Gaussian splats, open-vocabulary relevancy queries and 3D
//! segmentation metrics. The numeric core is generic over [`Real`].

pub mod error;
pub mod eval;
pub mod field;
pub mod geom;
pub mod gsplat;
pub mod heatmap;
pub mod io;
pub mod ply;
pub mod query;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod spatial;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Field32 = field::Field<f32>;
pub type Field64 = field::Field<f64>;
pub type Cloud32 = gsplat::GaussianCloud<f32>;
pub type Cloud64 = gsplat::GaussianCloud<f64>;
