//! Symbol cuboids, the bit-plane view of gray images, and the two coding orders.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `W x H x C` grid of symbols in `[0, m)`, stored depth-major with the
/// width index fastest (the raster coding order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolCuboid {
    width: usize,
    height: usize,
    depth: usize,
    alphabet: usize,
    symbols: Vec<u16>,
}

pub type Position = (usize, usize, usize);

impl SymbolCuboid {
    pub fn zeros(width: usize, height: usize, depth: usize, alphabet: usize) -> Result<Self> {
        Self::from_symbols(width, height, depth, alphabet, vec![0; width * height * depth])
    }

    pub fn from_symbols(
        width: usize,
        height: usize,
        depth: usize,
        alphabet: usize,
        symbols: Vec<u16>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || depth == 0 {
            return Err(Error::InvalidArgument("cuboid extents must be >= 1".into()));
        }
        if !(2..=1 << 16).contains(&alphabet) {
            return Err(Error::InvalidArgument(format!(
                "alphabet size {alphabet} not in [2, 65536]"
            )));
        }
        if symbols.len() != width * height * depth {
            return Err(Error::Shape(format!(
                "{}x{}x{} cuboid needs {} symbols, got {}",
                width,
                height,
                depth,
                width * height * depth,
                symbols.len()
            )));
        }
        if let Some(s) = symbols.iter().find(|&&s| s as usize >= alphabet) {
            return Err(Error::InvalidArgument(format!(
                "symbol {s} outside alphabet of size {alphabet}"
            )));
        }
        Ok(SymbolCuboid {
            width,
            height,
            depth,
            alphabet,
            symbols,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[u16] {
        &self.symbols
    }

    pub fn index(&self, (i, j, k): Position) -> usize {
        (k * self.height + j) * self.width + i
    }

    pub fn get(&self, pos: Position) -> u16 {
        self.symbols[self.index(pos)]
    }

    pub fn set(&mut self, pos: Position, symbol: u16) {
        assert!((symbol as usize) < self.alphabet, "symbol outside alphabet");
        let idx = self.index(pos);
        self.symbols[idx] = symbol;
    }

    /// Network input: symbols scaled to `value / (m - 1)`, shape `[1, C, H, W]`.
    pub fn embed(&self) -> Tensor {
        let scale = 1.0 / (self.alphabet - 1) as f64;
        let data = self.symbols.iter().map(|&s| s as f64 * scale).collect();
        Tensor::from_vec(&[1, self.depth, self.height, self.width], data)
            .expect("cuboid extents are consistent")
    }

    /// Sub-cuboid covering `[x0, x0 + w) x [y0, y0 + h)` over the full depth.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<SymbolCuboid> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {x0},{y0} {w}x{h} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w * h * self.depth);
        for k in 0..self.depth {
            for j in y0..y0 + h {
                let row = self.index((x0, j, k));
                out.extend_from_slice(&self.symbols[row..row + w]);
            }
        }
        SymbolCuboid::from_symbols(w, h, self.depth, self.alphabet, out)
    }

    /// Writes `tile` back at offset `(x0, y0)`.
    pub fn paste(&mut self, tile: &SymbolCuboid, x0: usize, y0: usize) -> Result<()> {
        if tile.depth != self.depth
            || tile.alphabet != self.alphabet
            || x0 + tile.width > self.width
            || y0 + tile.height > self.height
        {
            return Err(Error::Shape("tile does not fit".into()));
        }
        for k in 0..self.depth {
            for j in 0..tile.height {
                let src = tile.index((0, j, k));
                let dst = self.index((x0, y0 + j, k));
                self.symbols[dst..dst + tile.width]
                    .copy_from_slice(&tile.symbols[src..src + tile.width]);
            }
        }
        Ok(())
    }
}

/// An 8-bit gray image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// From arbitrary integer samples; anything outside `0..=255` is rejected.
    pub fn from_values(width: usize, height: usize, values: &[i64]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|&v| u8::try_from(v).map_err(|_| Error::Image(format!("pixel value {v} outside [0, 255]"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, pixels)
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

/// Eight binary planes, plane `k` holding bit `7 - k` (plane 0 is the MSB).
pub fn to_bitplanes(image: &GrayImage) -> SymbolCuboid {
    let plane = image.width * image.height;
    let mut symbols = vec![0u16; plane * 8];
    for k in 0..8 {
        for (dst, &px) in symbols[k * plane..(k + 1) * plane].iter_mut().zip(&image.pixels) {
            *dst = ((px >> (7 - k)) & 1) as u16;
        }
    }
    SymbolCuboid::from_symbols(image.width, image.height, 8, 2, symbols).expect("valid planes")
}

pub fn from_bitplanes(cuboid: &SymbolCuboid) -> Result<GrayImage> {
    if cuboid.depth() != 8 || cuboid.alphabet() != 2 {
        return Err(Error::Shape(format!(
            "bit-plane cuboid must have C=8, m=2; got C={}, m={}",
            cuboid.depth(),
            cuboid.alphabet()
        )));
    }
    let plane = cuboid.width() * cuboid.height();
    let mut pixels = vec![0u8; plane];
    for k in 0..8 {
        for (px, &bit) in pixels.iter_mut().zip(&cuboid.symbols()[k * plane..(k + 1) * plane]) {
            *px |= (bit as u8) << (7 - k);
        }
    }
    GrayImage::new(cuboid.width(), cuboid.height(), pixels)
}

/// Width fastest, then height, then depth.
pub fn raster_order(width: usize, height: usize, depth: usize) -> Vec<Position> {
    let mut out = Vec::with_capacity(width * height * depth);
    for k in 0..depth {
        for j in 0..height {
            for i in 0..width {
                out.push((i, j, k));
            }
        }
    }
    out
}

/// All positions on the plane `i + j + k = t`, ascending by `k` then `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlopeBlock {
    pub t: usize,
    pub positions: Vec<Position>,
}

pub fn slope_blocks(width: usize, height: usize, depth: usize) -> Vec<SlopeBlock> {
    let count = width + height + depth - 2;
    (0..count)
        .map(|t| {
            let mut positions = Vec::new();
            for k in 0..depth.min(t + 1) {
                for i in 0..width.min(t - k + 1) {
                    let j = t - k - i;
                    if j < height {
                        positions.push((i, j, k));
                    }
                }
            }
            SlopeBlock { t, positions }
        })
        .collect()
}
