//! Pixel normalization, minibatch standard deviation and the declarative
//! progressive generator/discriminator builder.

mod build;
mod mlp;
mod norm;
mod spec;

pub(crate) use build::dense_layer;
pub use build::{
    build_discriminator, build_generator, discriminator, generator, DiscNodes, Fade, Network,
};
pub use mlp::{mlp, mlp_param_count};
pub use norm::{minibatch_stddev, pixel_norm, PIXEL_NORM_EPS};
pub use spec::{LayerSpec, NetworkSpec, REFERENCE_WIDTH};
