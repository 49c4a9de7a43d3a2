//! Lossless entropy coding of symbol cuboids with a trimmed-convolution
//! context model and an arithmetic coder.

pub mod coder;
pub mod codec;
pub mod corpus;
pub mod cuboid;
pub mod error;
pub mod inpaint;
pub mod model;
pub mod pgm;
pub mod tensor;
pub mod train;
pub mod trim_conv;

pub use cuboid::{from_bitplanes, raster_order, slope_blocks, to_bitplanes, GrayImage, SlopeBlock, SymbolCuboid};
pub use error::{Error, Result};
pub use model::{compression_ratio, loss, ContextModel, ModelConfig, ProbabilityCuboid};
pub use trim_conv::{context_predicate, KernelMask, LayerKind, MaskMode, Schedule, TrimmedConvLayer};
