//! End-to-end cuboid compression: container format, one-pass encoding, and
//! serial (raster) or block-parallel (slope) decoding.
//!
//! Container layout, all integers little-endian:
//!
//! | field        | size |
//! |--------------|------|
//! | magic `TCAE` | 4    |
//! | version      | u32  |
//! | schedule     | u32 (0 raster, 1 slope) |
//! | W, H, C, m   | 4 x u32 |
//! | tile size    | u32 (0 = untiled) |
//! | model hash   | u64 (FNV-1a of the model file) |
//! | payload len  | u32 (bytes that follow) |
//!
//! The payload is one `u32` length prefix plus arithmetic-coded bytes per
//! tile, tiles in row-major order.

use rayon::prelude::*;

use crate::coder::{ArithmeticDecoder, ArithmeticEncoder, QuantizedPmf};
use crate::cuboid::{raster_order, slope_blocks, Position, SymbolCuboid};
use crate::error::{Error, Result};
use crate::model::{fnv1a, ContextModel, ProbabilityCuboid, PROB_FLOOR};
use crate::trim_conv::Schedule;

pub const CONTAINER_MAGIC: &[u8; 4] = b"TCAE";
pub const CONTAINER_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 44;
pub const DEFAULT_TILE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecHeader {
    pub version: u32,
    pub schedule: Schedule,
    pub width: u32,
    pub height: u32,
    pub depth: u32,
    pub alphabet: u32,
    pub tile: u32,
    pub model_hash: u64,
    pub payload_len: u32,
}

impl CodecHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(CONTAINER_MAGIC);
        let words = [
            self.version,
            self.schedule.tag(),
            self.width,
            self.height,
            self.depth,
            self.alphabet,
            self.tile,
        ];
        for (i, w) in words.iter().enumerate() {
            out[4 + 4 * i..8 + 4 * i].copy_from_slice(&w.to_le_bytes());
        }
        out[32..40].copy_from_slice(&self.model_hash.to_le_bytes());
        out[40..44].copy_from_slice(&self.payload_len.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Container("truncated header".into()));
        }
        if &bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != CONTAINER_VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let schedule = Schedule::from_tag(word(1))
            .ok_or_else(|| Error::Container(format!("unknown schedule tag {}", word(1))))?;
        Ok(CodecHeader {
            version,
            schedule,
            width: word(2),
            height: word(3),
            depth: word(4),
            alphabet: word(5),
            tile: word(6),
            model_hash: u64::from_le_bytes(bytes[32..40].try_into().unwrap()),
            payload_len: u32::from_le_bytes(bytes[40..44].try_into().unwrap()),
        })
    }
}

/// Instrumentation shared by encoder and decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CodecStats {
    /// Forward passes through the context model.
    pub passes: u64,
    /// FNV-1a over every quantized PMF in coding order (per tile, then combined).
    pub pmf_digest: u64,
    /// Arithmetic-coded bits, excluding header and length prefixes.
    pub payload_bits: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct TileRect {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn tiles(width: usize, height: usize, tile: usize) -> Vec<TileRect> {
    if tile == 0 {
        return vec![TileRect { x0: 0, y0: 0, w: width, h: height }];
    }
    let mut out = Vec::new();
    for y0 in (0..height).step_by(tile) {
        for x0 in (0..width).step_by(tile) {
            out.push(TileRect {
                x0,
                y0,
                w: tile.min(width - x0),
                h: tile.min(height - y0),
            });
        }
    }
    out
}

/// Coding order of a `w x h x c` cuboid under `schedule`.
pub fn coding_order(schedule: Schedule, w: usize, h: usize, c: usize) -> Vec<Position> {
    match schedule {
        Schedule::Raster => raster_order(w, h, c),
        Schedule::Slope => slope_blocks(w, h, c).into_iter().flat_map(|b| b.positions).collect(),
    }
}

/// Quantized PMF at `pos`, floored at [`PROB_FLOOR`] first.
pub fn pmf_at(probs: &ProbabilityCuboid, pos: Position) -> Result<QuantizedPmf> {
    let p: Vec<f64> = probs.pmf(pos).into_iter().map(|v| v.max(PROB_FLOOR)).collect();
    QuantizedPmf::quantize(&p)
}

struct PmfDigest(u64);

impl PmfDigest {
    fn new() -> Self {
        PmfDigest(0xcbf2_9ce4_8422_2325)
    }

    fn update(&mut self, pmf: &QuantizedPmf) {
        for c in pmf.counts() {
            for b in c.to_le_bytes() {
                self.0 ^= b as u64;
                self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
}

fn combine_digests(parts: &[u64]) -> u64 {
    let bytes: Vec<u8> = parts.iter().flat_map(|d| d.to_le_bytes()).collect();
    fnv1a(&bytes)
}

fn check_model(model: &ContextModel, schedule: Schedule, depth: usize, alphabet: usize) -> Result<()> {
    let cfg = model.config();
    if cfg.schedule != schedule {
        return Err(Error::Mismatch(format!(
            "model uses the {} schedule, stream needs {}",
            cfg.schedule, schedule
        )));
    }
    if cfg.depth != depth || cfg.alphabet != alphabet {
        return Err(Error::Mismatch(format!(
            "model expects C={}, m={}; data has C={}, m={}",
            cfg.depth, cfg.alphabet, depth, alphabet
        )));
    }
    Ok(())
}

fn encode_tile(tile: &SymbolCuboid, model: &ContextModel, schedule: Schedule) -> Result<(Vec<u8>, u64)> {
    let probs = model.forward(tile)?;
    let mut enc = ArithmeticEncoder::new();
    let mut digest = PmfDigest::new();
    for pos in coding_order(schedule, tile.width(), tile.height(), tile.depth()) {
        let pmf = pmf_at(&probs, pos)?;
        digest.update(&pmf);
        enc.encode(tile.get(pos) as usize, &pmf);
    }
    Ok((enc.finish(), digest.0))
}

/// Compresses `cuboid` with one forward pass per tile. `tile == 0` codes
/// the whole cuboid as a single tile.
pub fn encode(
    cuboid: &SymbolCuboid,
    model: &ContextModel,
    schedule: Schedule,
    tile: usize,
) -> Result<(Vec<u8>, CodecStats)> {
    check_model(model, schedule, cuboid.depth(), cuboid.alphabet())?;
    let rects = tiles(cuboid.width(), cuboid.height(), tile);
    let coded: Vec<(Vec<u8>, u64)> = rects
        .par_iter()
        .map(|r| encode_tile(&cuboid.crop(r.x0, r.y0, r.w, r.h)?, model, schedule))
        .collect::<Result<_>>()?;

    let mut payload = Vec::new();
    let mut bits = 0u64;
    for (bytes, _) in &coded {
        payload.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        payload.extend_from_slice(bytes);
        bits += 8 * bytes.len() as u64;
    }
    let header = CodecHeader {
        version: CONTAINER_VERSION,
        schedule,
        width: cuboid.width() as u32,
        height: cuboid.height() as u32,
        depth: cuboid.depth() as u32,
        alphabet: cuboid.alphabet() as u32,
        tile: tile as u32,
        model_hash: model.fingerprint(),
        payload_len: u32::try_from(payload.len()).map_err(|_| Error::Container("payload too large".into()))?,
    };
    let mut out = header.to_bytes().to_vec();
    out.extend_from_slice(&payload);
    let digests: Vec<u64> = coded.iter().map(|(_, d)| *d).collect();
    let stats = CodecStats {
        passes: rects.len() as u64,
        pmf_digest: combine_digests(&digests),
        payload_bits: bits,
    };
    Ok((out, stats))
}

struct TileResult {
    cuboid: SymbolCuboid,
    passes: u64,
    digest: u64,
}

fn decode_tile(
    payload: &[u8],
    rect: TileRect,
    depth: usize,
    alphabet: usize,
    model: &ContextModel,
    schedule: Schedule,
) -> Result<TileResult> {
    let mut cur = SymbolCuboid::zeros(rect.w, rect.h, depth, alphabet)?;
    let mut dec = ArithmeticDecoder::new(payload);
    let mut digest = PmfDigest::new();
    let mut passes = 0;
    let mut step = |cur: &mut SymbolCuboid, probs: &ProbabilityCuboid, pos: Position| -> Result<()> {
        let pmf = pmf_at(probs, pos)?;
        digest.update(&pmf);
        let s = dec.decode(&pmf)?;
        if s >= alphabet {
            return Err(Error::StreamExhausted("decoded symbol outside alphabet".into()));
        }
        cur.set(pos, s as u16);
        Ok(())
    };
    match schedule {
        Schedule::Raster => {
            for pos in raster_order(rect.w, rect.h, depth) {
                // positions not yet decoded are still 0; causality keeps the
                // prediction at `pos` identical to the encoder's
                let probs = model.forward_through_slice(&cur, pos.2)?;
                passes += 1;
                step(&mut cur, &probs, pos)?;
            }
        }
        Schedule::Slope => {
            for block in slope_blocks(rect.w, rect.h, depth) {
                let probs = model.forward(&cur)?;
                passes += 1;
                for &pos in &block.positions {
                    step(&mut cur, &probs, pos)?;
                }
            }
        }
    }
    dec.finish()?;
    Ok(TileResult {
        cuboid: cur,
        passes,
        digest: digest.0,
    })
}

fn split_payload(bytes: &[u8], n_tiles: usize) -> Result<Vec<&[u8]>> {
    let mut rest = bytes;
    let mut out = Vec::with_capacity(n_tiles);
    for _ in 0..n_tiles {
        if rest.len() < 4 {
            return Err(Error::Container("truncated tile length".into()));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        rest = &rest[4..];
        if rest.len() < len {
            return Err(Error::Container("truncated tile payload".into()));
        }
        out.push(&rest[..len]);
        rest = &rest[len..];
    }
    if !rest.is_empty() {
        return Err(Error::Container("trailing bytes after last tile".into()));
    }
    Ok(out)
}

fn decode_with(bytes: &[u8], model: &ContextModel, expect: Option<Schedule>) -> Result<(SymbolCuboid, CodecStats)> {
    let header = CodecHeader::parse(bytes)?;
    if let Some(s) = expect {
        if header.schedule != s {
            return Err(Error::Container(format!(
                "stream was coded with the {} schedule",
                header.schedule
            )));
        }
    }
    let (w, h, c, m) = (
        header.width as usize,
        header.height as usize,
        header.depth as usize,
        header.alphabet as usize,
    );
    if w == 0 || h == 0 || c == 0 || m < 2 {
        return Err(Error::Container("degenerate dimensions".into()));
    }
    check_model(model, header.schedule, c, m)?;
    if header.model_hash != model.fingerprint() {
        return Err(Error::Mismatch("stream was coded with a different model".into()));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != header.payload_len as usize {
        return Err(Error::Container(format!(
            "payload length {} but header says {}",
            body.len(),
            header.payload_len
        )));
    }
    let rects = tiles(w, h, header.tile as usize);
    let payloads = split_payload(body, rects.len())?;
    let decoded: Vec<TileResult> = rects
        .par_iter()
        .zip(payloads.par_iter())
        .map(|(r, p)| decode_tile(p, *r, c, m, model, header.schedule))
        .collect::<Result<_>>()?;

    let mut out = SymbolCuboid::zeros(w, h, c, m)?;
    let mut stats = CodecStats::default();
    for (r, t) in rects.iter().zip(&decoded) {
        out.paste(&t.cuboid, r.x0, r.y0)?;
        stats.passes += t.passes;
    }
    stats.payload_bits = payloads.iter().map(|p| 8 * p.len() as u64).sum();
    stats.pmf_digest = combine_digests(&decoded.iter().map(|t| t.digest).collect::<Vec<_>>());
    Ok((out, stats))
}

/// Decodes a container with whichever schedule its header names.
pub fn decode(bytes: &[u8], model: &ContextModel) -> Result<(SymbolCuboid, CodecStats)> {
    decode_with(bytes, model, None)
}

/// Serial decoding: one model pass per symbol.
pub fn decode_raster(bytes: &[u8], model: &ContextModel) -> Result<(SymbolCuboid, CodecStats)> {
    decode_with(bytes, model, Some(Schedule::Raster))
}

/// Block-parallel decoding: one model pass per slope block.
pub fn decode_slope(bytes: &[u8], model: &ContextModel) -> Result<(SymbolCuboid, CodecStats)> {
    decode_with(bytes, model, Some(Schedule::Slope))
}
