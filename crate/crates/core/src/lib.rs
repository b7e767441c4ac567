//! CPU Gaussian splatting with depth-guided dropout and dark-channel
//! floater pruning.

pub mod camera;
pub mod cdgd;
pub mod cli;
pub mod config;
pub mod dcp;
pub mod diagnostics;
pub mod diff;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod metrics;
pub mod rasterizer;
pub mod scene;
pub mod scenegen;
pub mod trainer;

pub use camera::{Camera, Intrinsics};
pub use config::{CalibConfig, TauCenterMode};
pub use error::{Error, Result};
pub use gaussian::GaussianPrimitive;
pub use image::{Image, Map};
pub use metrics::MetricRow;
pub use rasterizer::{render, render_with, Contribution, Projected2DGaussian, RenderOptions, RenderOutput};
pub use scene::{load_scene, save_scene, Scene, View};
pub use scenegen::{FloaterSpec, SceneSpec, Template};
