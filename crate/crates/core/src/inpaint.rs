//! Filling a rectangle of a gray image by sampling bits from the context model.

use crate::cuboid::{from_bitplanes, to_bitplanes, GrayImage};
use crate::error::{Error, Result};
use crate::model::ContextModel;
use crate::tensor::Rng;
use crate::trim_conv::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    /// Bottom-right rectangle covering one ninth of the image.
    pub fn bottom_right_ninth(width: usize, height: usize) -> Self {
        let (w, h) = (width / 3, height / 3);
        Region { x: width - w, y: height - h, w, h }
    }

    /// Parses `x,y,w,h`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("region {s:?} is not x,y,w,h")))?;
        match parts[..] {
            [x, y, w, h] => Ok(Region { x, y, w, h }),
            _ => Err(Error::InvalidArgument(format!("region {s:?} is not x,y,w,h"))),
        }
    }
}

/// Replaces the pixels in `region` by bits sampled in raster order, each
/// from the model's predicted Bernoulli given everything before it.
pub fn inpaint(image: &GrayImage, region: Region, model: &ContextModel, rng: &mut Rng) -> Result<GrayImage> {
    let cfg = model.config();
    if cfg.schedule != Schedule::Raster || cfg.depth != 8 || cfg.alphabet != 2 {
        return Err(Error::Mismatch("inpainting needs a raster bit-plane model (C=8, m=2)".into()));
    }
    if region.x + region.w > image.width || region.y + region.h > image.height {
        return Err(Error::InvalidArgument(format!(
            "region {region:?} outside {}x{} image",
            image.width, image.height
        )));
    }
    let mut planes = to_bitplanes(image);
    for k in 0..8 {
        for j in region.y..region.y + region.h {
            for i in region.x..region.x + region.w {
                planes.set((i, j, k), 0);
            }
        }
    }
    for k in 0..8 {
        for j in region.y..region.y + region.h {
            for i in region.x..region.x + region.w {
                let probs = model.forward_through_slice(&planes, k)?;
                let bit = rng.bernoulli(probs.get(1, (i, j, k)));
                planes.set((i, j, k), bit as u16);
            }
        }
    }
    from_bitplanes(&planes)
}
