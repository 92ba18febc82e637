//! CPU ray-cast renderer and uv baking.

pub mod bake;
pub mod bvh;
pub mod raster;
mod view;

pub use bake::{bake_uv, SurfaceSample, UvMap};
pub use bvh::{Aabb, Bvh, Hit};
pub use raster::FloatRaster;
pub use view::{hit_point, render_view, ViewBundle, BACKGROUND_RGB};
