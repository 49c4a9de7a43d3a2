//! Trimming masks and masked ("trimmed") 3D group convolution.
//!
//! Feature maps are `[groups, depth, height, width]` tensors, so for a single
//! group the raster coding order (width fastest, then height, then depth) is
//! a linear scan of memory. A layer holds one spatial kernel for every
//! (output group, input group, output slice, input slice) quadruple; the mask
//! is looked up on the relative offset `(i, j, n - t)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Dist, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Schedule {
    Raster,
    Slope,
}

impl Schedule {
    pub fn tag(self) -> u32 {
        match self {
            Schedule::Raster => 0,
            Schedule::Slope => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Schedule::Raster),
            1 => Some(Schedule::Slope),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Schedule::Raster => "raster",
            Schedule::Slope => "slope",
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(Schedule::Raster),
            "slope" => Ok(Schedule::Slope),
            other => Err(Error::InvalidArgument(format!(
                "schedule must be raster or slope, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Input layers must not see the symbol being predicted; hidden layers may
/// see the feature at the same position because it is already causal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Input,
    Hidden,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MaskMode {
    pub schedule: Schedule,
    pub kind: LayerKind,
}

impl MaskMode {
    pub fn new(schedule: Schedule, kind: LayerKind) -> Self {
        MaskMode { schedule, kind }
    }

    /// Mask value at relative offset `(i, j, k)`.
    pub fn entry(self, i: isize, j: isize, k: isize) -> bool {
        match (self.schedule, self.kind) {
            (Schedule::Raster, LayerKind::Input) => {
                k < 0 || (k == 0 && j < 0) || (k == 0 && j == 0 && i < 0)
            }
            (Schedule::Raster, LayerKind::Hidden) => {
                k < 0 || (k == 0 && j < 0) || (k == 0 && j == 0 && i <= 0)
            }
            (Schedule::Slope, LayerKind::Input) => i + j + k < 0,
            (Schedule::Slope, LayerKind::Hidden) => i + j + k <= 0,
        }
    }
}

/// Whether `(i, j, k)` is coded before `(p, q, r)` under `schedule`.
pub fn context_predicate(
    schedule: Schedule,
    (p, q, r): (usize, usize, usize),
    (i, j, k): (usize, usize, usize),
) -> bool {
    match schedule {
        Schedule::Raster => (k, j, i) < (r, q, p),
        Schedule::Slope => i + j + k < p + q + r,
    }
}

/// Binary mask over kernel offsets `i in [-w0, w0]`, `j in [-h0, h0]`,
/// `k in [k_lo, k_hi]`. Offsets outside that box read as 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelMask {
    mode: Option<MaskMode>,
    w0: usize,
    h0: usize,
    k_lo: isize,
    k_hi: isize,
    entries: Vec<bool>,
}

impl KernelMask {
    pub fn build(mode: MaskMode, w0: usize, h0: usize, k_lo: isize, k_hi: isize) -> Result<Self> {
        let mut mask = Self::from_fn(w0, h0, k_lo, k_hi, |i, j, k| mode.entry(i, j, k))?;
        mask.mode = Some(mode);
        Ok(mask)
    }

    /// A mask with arbitrary entries; used for plain (all-ones) and
    /// degenerate (all-zero) convolutions.
    pub fn from_fn(
        w0: usize,
        h0: usize,
        k_lo: isize,
        k_hi: isize,
        f: impl Fn(isize, isize, isize) -> bool,
    ) -> Result<Self> {
        if k_lo > 0 || k_hi < 0 {
            return Err(Error::InvalidArgument(format!(
                "depth offsets [{k_lo}, {k_hi}] must contain 0"
            )));
        }
        let (w0i, h0i) = (w0 as isize, h0 as isize);
        let mut entries = Vec::new();
        for k in k_lo..=k_hi {
            for j in -h0i..=h0i {
                for i in -w0i..=w0i {
                    entries.push(f(i, j, k));
                }
            }
        }
        Ok(KernelMask {
            mode: None,
            w0,
            h0,
            k_lo,
            k_hi,
            entries,
        })
    }

    pub fn mode(&self) -> Option<MaskMode> {
        self.mode
    }

    pub fn half_width(&self) -> usize {
        self.w0
    }

    pub fn half_height(&self) -> usize {
        self.h0
    }

    pub fn depth_range(&self) -> (isize, isize) {
        (self.k_lo, self.k_hi)
    }

    pub fn get(&self, i: isize, j: isize, k: isize) -> bool {
        let (w0, h0) = (self.w0 as isize, self.h0 as isize);
        if i.abs() > w0 || j.abs() > h0 || k < self.k_lo || k > self.k_hi {
            return false;
        }
        let kw = 2 * w0 + 1;
        let kh = 2 * h0 + 1;
        let idx = ((k - self.k_lo) * kh + (j + h0)) * kw + (i + w0);
        self.entries[idx as usize]
    }

    pub fn count_ones(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Tap {
    di: isize,
    dj: isize,
    /// Position inside the flattened `kh * kw` spatial kernel.
    spatial: usize,
}

/// Gradients of one trimmed convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub grad_x: Option<Tensor>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrimmedConvLayer {
    g_in: usize,
    g_out: usize,
    depth: usize,
    mask: KernelMask,
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// Unmasked taps for every relative depth offset `n - t + depth - 1`.
    taps: Vec<Vec<Tap>>,
}

impl PartialEq for TrimmedConvLayer {
    fn eq(&self, other: &Self) -> bool {
        self.g_in == other.g_in
            && self.g_out == other.g_out
            && self.depth == other.depth
            && self.mask == other.mask
            && self.weights == other.weights
            && self.bias == other.bias
    }
}

fn shifted_range(len: usize, d: isize) -> (usize, usize) {
    let start = (-d).max(0) as usize;
    let end = (len as isize - d).clamp(0, len as isize) as usize;
    (start, end.max(start))
}

impl TrimmedConvLayer {
    /// A zero-initialized layer.
    pub fn new(g_in: usize, g_out: usize, depth: usize, mask: KernelMask) -> Result<Self> {
        if g_in == 0 || g_out == 0 || depth == 0 {
            return Err(Error::InvalidArgument(
                "group counts and depth must be positive".into(),
            ));
        }
        let kw = 2 * mask.w0 + 1;
        let kh = 2 * mask.h0 + 1;
        let d = depth as isize;
        let taps = (-(d - 1)..d)
            .map(|k| {
                let mut v = Vec::new();
                for j in -(mask.h0 as isize)..=mask.h0 as isize {
                    for i in -(mask.w0 as isize)..=mask.w0 as isize {
                        if mask.get(i, j, k) {
                            v.push(Tap {
                                di: i,
                                dj: j,
                                spatial: ((j + mask.h0 as isize) as usize) * kw
                                    + (i + mask.w0 as isize) as usize,
                            });
                        }
                    }
                }
                v
            })
            .collect();
        Ok(TrimmedConvLayer {
            g_in,
            g_out,
            depth,
            weights: vec![0.0; g_out * g_in * depth * depth * kh * kw],
            bias: vec![0.0; g_out * depth],
            mask,
            taps,
        })
    }

    pub fn with_mode(
        g_in: usize,
        g_out: usize,
        depth: usize,
        mode: MaskMode,
        half_size: usize,
    ) -> Result<Self> {
        let d = depth as isize;
        let mask = KernelMask::build(mode, half_size, half_size, -(d - 1), d - 1)?;
        Self::new(g_in, g_out, depth, mask)
    }

    pub fn g_in(&self) -> usize {
        self.g_in
    }

    pub fn g_out(&self) -> usize {
        self.g_out
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn mask(&self) -> &KernelMask {
        &self.mask
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn kernel_dims(&self) -> (usize, usize) {
        (2 * self.mask.w0 + 1, 2 * self.mask.h0 + 1)
    }

    fn kernel_len(&self) -> usize {
        let (kw, kh) = self.kernel_dims();
        kw * kh
    }

    /// Flat index of `w[go, gi, t, n, j, i]` with `i, j` relative offsets.
    pub fn weight_index(&self, go: usize, gi: usize, t: usize, n: usize, i: isize, j: isize) -> usize {
        let (kw, _) = self.kernel_dims();
        let spatial = (j + self.mask.h0 as isize) as usize * kw + (i + self.mask.w0 as isize) as usize;
        self.block_index(go, gi, t, n) * self.kernel_len() + spatial
    }

    fn block_index(&self, go: usize, gi: usize, t: usize, n: usize) -> usize {
        ((go * self.g_in + gi) * self.depth + t) * self.depth + n
    }

    fn taps_for(&self, t: usize, n: usize) -> &[Tap] {
        &self.taps[n + self.depth - 1 - t]
    }

    /// Number of unmasked taps feeding one output slice from one input group.
    pub fn active_taps(&self, t: usize) -> usize {
        (0..self.depth).map(|n| self.taps_for(t, n).len()).sum()
    }

    /// Whether output slice `t` only reads input slices `n <= t`.
    pub(crate) fn is_depth_causal(&self) -> bool {
        (0..self.depth).all(|t| (t + 1..self.depth).all(|n| self.taps_for(t, n).is_empty()))
    }

    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)) per output slice,
    /// counting unmasked weights only.
    pub fn init_uniform(&mut self, rng: &mut Rng) -> Result<()> {
        let kl = self.kernel_len();
        for t in 0..self.depth {
            let active = self.active_taps(t).max(1) as f64;
            let bound = (6.0 / (active * (self.g_in + self.g_out) as f64)).sqrt();
            for go in 0..self.g_out {
                for gi in 0..self.g_in {
                    for n in 0..self.depth {
                        let start = self.block_index(go, gi, t, n) * kl;
                        let vals = Tensor::fill_random(&[kl], Dist::Uniform { lo: -bound, hi: bound }, rng)?;
                        self.weights[start..start + kl].copy_from_slice(vals.data());
                    }
                }
            }
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        Ok(())
    }

    fn check_input(&self, x: &Tensor, groups: usize) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 4 || s[0] != groups || s[1] != self.depth || s[2] == 0 || s[3] == 0 {
            return Err(Error::Shape(format!(
                "expected [{groups}, {}, H, W], got {:?}",
                self.depth, s
            )));
        }
        Ok((s[2], s[3]))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_slices(x, self.depth - 1)
    }

    /// Forward pass restricted to output slices `t <= t_max`; the remaining
    /// slices are left at zero. Every computed value is bit-identical to the
    /// full pass because each output accumulates in the same fixed order.
    pub fn forward_slices(&self, x: &Tensor, t_max: usize) -> Result<Tensor> {
        let (h, w) = self.check_input(x, self.g_in)?;
        let plane = h * w;
        let kl = self.kernel_len();
        let mut out = Tensor::zeros(&[self.g_out, self.depth, h, w]);
        let xs = x.data();
        out.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, dst)| {
                let (go, t) = (idx / self.depth, idx % self.depth);
                if t > t_max {
                    return;
                }
                dst.iter_mut().for_each(|v| *v = self.bias[go * self.depth + t]);
                for gi in 0..self.g_in {
                    for n in 0..self.depth {
                        let taps = self.taps_for(t, n);
                        if taps.is_empty() {
                            continue;
                        }
                        let src = &xs[(gi * self.depth + n) * plane..][..plane];
                        let kernel = &self.weights[self.block_index(go, gi, t, n) * kl..][..kl];
                        for tap in taps {
                            accumulate_shifted(dst, src, kernel[tap.spatial], tap.di, tap.dj, w, h);
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Adjoint of [`forward`](Self::forward) with respect to input, weights
    /// and bias. Masked weights receive exactly zero gradient.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, need_grad_x: bool) -> Result<LayerGrads> {
        let (h, w) = self.check_input(x, self.g_in)?;
        let expect = [self.g_out, self.depth, h, w];
        if grad_out.shape() != expect {
            return Err(Error::Shape(format!(
                "grad_out {:?}, expected {:?}",
                grad_out.shape(),
                expect
            )));
        }
        let plane = h * w;
        let kl = self.kernel_len();
        let xs = x.data();
        let gs = grad_out.data();

        let bias: Vec<f64> = gs.chunks(plane).map(|c| c.iter().sum()).collect();

        let mut weights = vec![0.0; self.weights.len()];
        weights
            .par_chunks_mut(kl)
            .enumerate()
            .for_each(|(block, dst)| {
                let n = block % self.depth;
                let t = (block / self.depth) % self.depth;
                let gi = (block / (self.depth * self.depth)) % self.g_in;
                let go = block / (self.depth * self.depth * self.g_in);
                let g = &gs[(go * self.depth + t) * plane..][..plane];
                let src = &xs[(gi * self.depth + n) * plane..][..plane];
                for tap in self.taps_for(t, n) {
                    dst[tap.spatial] = dot_shifted(g, src, tap.di, tap.dj, w, h);
                }
            });

        let grad_x = if need_grad_x {
            let mut gx = Tensor::zeros(&[self.g_in, self.depth, h, w]);
            gx.data_mut()
                .par_chunks_mut(plane)
                .enumerate()
                .for_each(|(idx, dst)| {
                    let (gi, n) = (idx / self.depth, idx % self.depth);
                    for go in 0..self.g_out {
                        for t in 0..self.depth {
                            let taps = self.taps_for(t, n);
                            if taps.is_empty() {
                                continue;
                            }
                            let g = &gs[(go * self.depth + t) * plane..][..plane];
                            let kernel = &self.weights[self.block_index(go, gi, t, n) * kl..][..kl];
                            for tap in taps {
                                scatter_shifted(dst, g, kernel[tap.spatial], tap.di, tap.dj, w, h);
                            }
                        }
                    }
                });
            Some(gx)
        } else {
            None
        };

        Ok(LayerGrads {
            grad_x,
            weights,
            bias,
        })
    }
}

/// `dst[q][p] += wt * src[q + dj][p + di]` over in-bounds reads.
#[inline]
fn accumulate_shifted(dst: &mut [f64], src: &[f64], wt: f64, di: isize, dj: isize, w: usize, h: usize) {
    let (q0, q1) = shifted_range(h, dj);
    let (p0, p1) = shifted_range(w, di);
    if p0 >= p1 {
        return;
    }
    for q in q0..q1 {
        let sq = (q as isize + dj) as usize;
        let d = &mut dst[q * w + p0..q * w + p1];
        let s = &src[sq * w + (p0 as isize + di) as usize..][..p1 - p0];
        for (a, b) in d.iter_mut().zip(s) {
            *a += wt * b;
        }
    }
}

/// `dst[q + dj][p + di] += wt * g[q][p]`.
#[inline]
fn scatter_shifted(dst: &mut [f64], g: &[f64], wt: f64, di: isize, dj: isize, w: usize, h: usize) {
    let (q0, q1) = shifted_range(h, dj);
    let (p0, p1) = shifted_range(w, di);
    if p0 >= p1 {
        return;
    }
    for q in q0..q1 {
        let sq = (q as isize + dj) as usize;
        let d = &mut dst[sq * w + (p0 as isize + di) as usize..][..p1 - p0];
        let s = &g[q * w + p0..q * w + p1];
        for (a, b) in d.iter_mut().zip(s) {
            *a += wt * b;
        }
    }
}

#[inline]
fn dot_shifted(g: &[f64], src: &[f64], di: isize, dj: isize, w: usize, h: usize) -> f64 {
    let (q0, q1) = shifted_range(h, dj);
    let (p0, p1) = shifted_range(w, di);
    let mut acc = 0.0;
    if p0 >= p1 {
        return acc;
    }
    for q in q0..q1 {
        let sq = (q as isize + dj) as usize;
        let a = &g[q * w + p0..q * w + p1];
        let b = &src[sq * w + (p0 as isize + di) as usize..][..p1 - p0];
        acc += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    const RI: MaskMode = MaskMode { schedule: Schedule::Raster, kind: LayerKind::Input };
    const RH: MaskMode = MaskMode { schedule: Schedule::Raster, kind: LayerKind::Hidden };
    const SI: MaskMode = MaskMode { schedule: Schedule::Slope, kind: LayerKind::Input };
    const SH: MaskMode = MaskMode { schedule: Schedule::Slope, kind: LayerKind::Hidden };

    /// Direct evaluation of the masked correlation from its definition.
    fn naive_forward(layer: &TrimmedConvLayer, x: &Tensor) -> Tensor {
        let s = x.shape();
        let (c, h, w) = (s[1], s[2], s[3]);
        let r = layer.mask().half_width() as isize;
        let mut out = Tensor::zeros(&[layer.g_out(), c, h, w]);
        for go in 0..layer.g_out() {
            for t in 0..c {
                for q in 0..h {
                    for p in 0..w {
                        let mut acc = layer.bias()[go * c + t];
                        for gi in 0..layer.g_in() {
                            for n in 0..c {
                                for j in -r..=r {
                                    for i in -r..=r {
                                        if !layer.mask().get(i, j, n as isize - t as isize) {
                                            continue;
                                        }
                                        let (pp, qq) = (p as isize + i, q as isize + j);
                                        if pp < 0 || qq < 0 || pp >= w as isize || qq >= h as isize {
                                            continue;
                                        }
                                        acc += x.get(&[gi, n, qq as usize, pp as usize])
                                            * layer.weights()[layer.weight_index(go, gi, t, n, i, j)];
                                    }
                                }
                            }
                        }
                        out.set(&[go, t, q, p], acc);
                    }
                }
            }
        }
        out
    }

    fn random_layer(g_in: usize, g_out: usize, c: usize, mode: MaskMode, seed: u64) -> TrimmedConvLayer {
        let mut rng = Rng::new(seed);
        let mut layer = TrimmedConvLayer::with_mode(g_in, g_out, c, mode, 2).unwrap();
        let wv = Tensor::fill_random(&[layer.weights().len()], Dist::Normal { mu: 0.0, sigma: 1.0 }, &mut rng).unwrap();
        layer.weights_mut().copy_from_slice(wv.data());
        let bv = Tensor::fill_random(&[layer.bias().len()], Dist::Normal { mu: 0.0, sigma: 1.0 }, &mut rng).unwrap();
        layer.bias_mut().copy_from_slice(bv.data());
        layer
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        Tensor::fill_random(shape, Dist::Normal { mu: 0.0, sigma: 1.0 }, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn raster_input_mask_entries() {
        let m = KernelMask::build(RI, 1, 1, -1, 1).unwrap();
        assert!(!m.get(0, 0, 0));
        assert!(m.get(-1, 0, 0));
        assert!(!m.get(1, 0, 0));
        assert!(m.get(0, -1, 0));
        assert!(m.get(0, 0, -1));
        assert!(!m.get(0, 0, 1));
    }

    #[test]
    fn raster_hidden_differs_only_at_center() {
        let input = KernelMask::build(RI, 1, 1, -1, 1).unwrap();
        let hidden = KernelMask::build(RH, 1, 1, -1, 1).unwrap();
        assert!(hidden.get(0, 0, 0));
        for k in -1..=1 {
            for j in -1..=1 {
                for i in -1..=1 {
                    if (i, j, k) != (0, 0, 0) {
                        assert_eq!(input.get(i, j, k), hidden.get(i, j, k), "({i},{j},{k})");
                    }
                }
            }
        }
    }

    #[test]
    fn slope_mask_entries() {
        let m = KernelMask::build(SH, 1, 1, -1, 1).unwrap();
        assert!(m.get(1, -1, 0));
        assert!(!m.get(1, 0, 0));
        assert!(m.get(1, -1, -1));
        let si = KernelMask::build(SI, 1, 1, -1, 1).unwrap();
        assert!(!si.get(1, -1, 0));
        assert!(si.get(1, -1, -1));
    }

    #[test]
    fn mask_planes_for_five_by_five() {
        let m = KernelMask::build(RI, 2, 2, -3, 3).unwrap();
        // plane k<0 is all ones, k>0 all zeros, k=0 the causal half minus centre
        let plane_count = |k| {
            (-2..=2).flat_map(|j| (-2..=2).map(move |i| (i, j))).filter(|&(i, j)| m.get(i, j, k)).count()
        };
        assert_eq!(plane_count(-1), 25);
        assert_eq!(plane_count(1), 0);
        assert_eq!(plane_count(0), 12);
        let h = KernelMask::build(RH, 2, 2, -3, 3).unwrap();
        assert_eq!(h.count_ones(), m.count_ones() + 1);
    }

    #[test]
    fn bad_depth_range() {
        assert!(KernelMask::build(RI, 1, 1, 1, 2).is_err());
    }

    #[test]
    fn context_predicate_examples() {
        assert!(context_predicate(Schedule::Raster, (1, 0, 0), (0, 0, 0)));
        assert!(context_predicate(Schedule::Raster, (0, 1, 0), (1, 0, 0)));
        assert!(!context_predicate(Schedule::Raster, (0, 0, 0), (1, 0, 0)));
        assert!(context_predicate(Schedule::Slope, (2, 0, 0), (0, 0, 1)));
        assert!(!context_predicate(Schedule::Slope, (0, 0, 1), (2, 0, 0)));
        for s in [Schedule::Raster, Schedule::Slope] {
            assert!(!context_predicate(s, (1, 2, 3), (1, 2, 3)));
        }
    }

    fn ones_layer(mode: MaskMode) -> TrimmedConvLayer {
        let mut l = TrimmedConvLayer::with_mode(1, 1, 1, mode, 2).unwrap();
        l.weights_mut().iter_mut().for_each(|v| *v = 1.0);
        l
    }

    #[test]
    fn forward_two_pixel_examples() {
        let (a, b) = (0.7, -1.3);
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![a, b]).unwrap();
        let out = ones_layer(RI).forward(&x).unwrap();
        assert_eq!(out.data(), &[0.0, a]);
        let out = ones_layer(RH).forward(&x).unwrap();
        assert_eq!(out.data(), &[a, a + b]);
    }

    #[test]
    fn all_zero_mask_gives_bias() {
        let mask = KernelMask::from_fn(2, 2, -1, 1, |_, _, _| false).unwrap();
        let mut l = TrimmedConvLayer::new(2, 3, 2, mask).unwrap();
        l.weights_mut().iter_mut().for_each(|v| *v = 5.0);
        l.bias_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        let out = l.forward(&random_input(&[2, 2, 3, 4], 1)).unwrap();
        for go in 0..3 {
            for t in 0..2 {
                for q in 0..3 {
                    for p in 0..4 {
                        assert_eq!(out.get(&[go, t, q, p]), (go * 2 + t) as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn forward_matches_naive_oracle() {
        for (seed, mode) in [RI, RH, SI, SH].into_iter().enumerate() {
            let layer = random_layer(2, 3, 3, mode, seed as u64);
            let x = random_input(&[2, 3, 4, 5], 100 + seed as u64);
            let fast = layer.forward(&x).unwrap();
            let slow = naive_forward(&layer, &x);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{mode:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn all_ones_mask_is_plain_correlation() {
        let mask = KernelMask::from_fn(2, 2, -2, 2, |_, _, _| true).unwrap();
        let mut layer = TrimmedConvLayer::new(1, 1, 3, mask).unwrap();
        let wv = random_input(&[layer.weights().len()], 5);
        layer.weights_mut().copy_from_slice(wv.data());
        let x = random_input(&[1, 3, 4, 4], 6);
        let out = layer.forward(&x).unwrap();
        // reference: full 3D correlation over every slice with zero padding
        for t in 0..3 {
            for q in 0..4isize {
                for p in 0..4isize {
                    let mut acc = 0.0;
                    for n in 0..3 {
                        for j in -2..=2isize {
                            for i in -2..=2isize {
                                if (0..4).contains(&(p + i)) && (0..4).contains(&(q + j)) {
                                    acc += x.get(&[0, n, (q + j) as usize, (p + i) as usize])
                                        * layer.weights()[layer.weight_index(0, 0, t, n, i, j)];
                                }
                            }
                        }
                    }
                    assert!((out.get(&[0, t, q as usize, p as usize]) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_slices_is_bit_identical_prefix() {
        let layer = random_layer(2, 2, 4, RH, 11);
        let x = random_input(&[2, 4, 3, 3], 12);
        let full = layer.forward(&x).unwrap();
        for t_max in 0..4 {
            let part = layer.forward_slices(&x, t_max).unwrap();
            let plane = 9;
            for go in 0..2 {
                let a = &full.data()[go * 4 * plane..][..(t_max + 1) * plane];
                let b = &part.data()[go * 4 * plane..][..(t_max + 1) * plane];
                assert_eq!(a, b);
            }
        }
        assert!(layer.is_depth_causal());
        assert!(!random_layer(1, 1, 4, SH, 1).is_depth_causal());
    }

    #[test]
    fn backward_zero_grad() {
        let layer = random_layer(2, 2, 2, RH, 3);
        let x = random_input(&[2, 2, 3, 3], 4);
        let g = layer.backward(&x, &Tensor::zeros(&[2, 2, 3, 3]), true).unwrap();
        assert!(g.weights.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
        assert!(g.grad_x.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_scalar_case() {
        let mut layer = TrimmedConvLayer::with_mode(1, 1, 1, RH, 2).unwrap();
        let wi = layer.weight_index(0, 0, 0, 0, 0, 0);
        layer.weights_mut()[wi] = 1.5;
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![-2.0]).unwrap();
        let go = Tensor::from_vec(&[1, 1, 1, 1], vec![0.25]).unwrap();
        let g = layer.backward(&x, &go, true).unwrap();
        assert_eq!(g.weights[wi], -2.0 * 0.25);
        assert_eq!(g.grad_x.unwrap().data(), &[1.5 * 0.25]);
        assert_eq!(g.bias, vec![0.25]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, mode) in [RI, SH].into_iter().enumerate() {
            let layer = random_layer(2, 2, 2, mode, 20 + seed as u64);
            let x = random_input(&[2, 2, 3, 3], 30 + seed as u64);
            let v = random_input(&[2, 2, 3, 3], 40 + seed as u64);
            // scalar objective <forward(x), v>
            let objective = |l: &TrimmedConvLayer, x: &Tensor| l.forward(x).unwrap().dot(&v).unwrap();
            let g = layer.backward(&x, &v, true).unwrap();
            let h = 1e-5;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            for idx in 0..layer.weights().len() {
                let mut lp = layer.clone();
                lp.weights_mut()[idx] += h;
                let mut lm = layer.clone();
                lm.weights_mut()[idx] -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                if g.weights[idx] == 0.0 {
                    assert!(fd.abs() < 1e-8, "masked weight {idx} has fd {fd}");
                } else {
                    assert!(rel(fd, g.weights[idx]) < 1e-6, "w{idx}: {fd} vs {}", g.weights[idx]);
                }
            }
            for idx in 0..layer.bias().len() {
                let mut lp = layer.clone();
                lp.bias_mut()[idx] += h;
                let mut lm = layer.clone();
                lm.bias_mut()[idx] -= h;
                let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
                assert!(rel(fd, g.bias[idx]) < 1e-6);
            }
            let gx = g.grad_x.unwrap();
            for idx in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[idx] += h;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= h;
                let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
                assert!(rel(fd, gx.data()[idx]) < 1e-6 || (fd.abs() < 1e-9 && gx.data()[idx].abs() < 1e-9));
            }
        }
    }

    #[test]
    fn masked_weights_get_zero_gradient() {
        let layer = random_layer(1, 1, 3, RI, 8);
        let x = random_input(&[1, 3, 4, 4], 9);
        let v = random_input(&[1, 3, 4, 4], 10);
        let g = layer.backward(&x, &v, false).unwrap();
        for t in 0..3 {
            for n in 0..3 {
                for j in -2..=2 {
                    for i in -2..=2 {
                        if !layer.mask().get(i, j, n as isize - t as isize) {
                            assert_eq!(g.weights[layer.weight_index(0, 0, t, n, i, j)], 0.0);
                        }
                    }
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn forward_backward_adjoint(seed in 0u64..1000, h in 1usize..5, w in 1usize..5, c in 1usize..4, mode_ix in 0usize..4) {
                let mode = [RI, RH, SI, SH][mode_ix];
                let mut layer = random_layer(2, 2, c, mode, seed);
                layer.bias_mut().iter_mut().for_each(|b| *b = 0.0);
                let u = random_input(&[2, c, h, w], seed + 1);
                let v = random_input(&[2, c, h, w], seed + 2);
                let lhs = layer.forward(&u).unwrap().dot(&v).unwrap();
                let gx = layer.backward(&u, &v, true).unwrap().grad_x.unwrap();
                let rhs = u.dot(&gx).unwrap();
                let scale = lhs.abs().max(rhs.abs()).max(1e-12);
                prop_assert!((lhs - rhs).abs() / scale < 1e-10 || (lhs - rhs).abs() < 1e-12);
            }
        }
    }
}
