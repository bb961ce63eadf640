//! Grayscale images, patch sampling and (pyramid) HOG descriptors.
//!
//! Gradients use the central-difference kernel `[-1, 0, 1]` without
//! smoothing; pixels outside a patch are replicated from its edge. Each
//! pixel votes its gradient magnitude into the two nearest orientation
//! bins (linear interpolation over orientation only). Bin `i` is centred
//! on orientation `i * width`, so a purely horizontal gradient lands in
//! bin 0 exactly.

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::geom::AffineParams;

/// Single-channel image with row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must have positive size"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image intensities must lie in [0, 1]"));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, data)
    }

    /// Converts a decoded image using luma weights 0.299/0.587/0.114.
    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                ((0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 255.0).clamp(0.0, 1.0)
            })
            .collect();
        GrayImage {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([(self.get(x as usize, y as usize) * 255.0).round() as u8])
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at
    /// integers), edge-replicated.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let v00 = self.get_clamped(x0, y0);
        if fx == 0.0 && fy == 0.0 {
            return v00;
        }
        let v10 = self.get_clamped(x0 + 1, y0);
        let v01 = self.get_clamped(x0, y0 + 1);
        let v11 = self.get_clamped(x0 + 1, y0 + 1);
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bottom = v01 * (1.0 - fx) + v11 * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resamples into a `width x height` image where output pixel `(u, v)`
    /// takes the bilinear sample at `to_source(u, v)`.
    pub fn warp(&self, width: usize, height: usize, to_source: &AffineParams) -> Result<GrayImage> {
        if !to_source.is_finite() {
            return Err(Error::invalid("non-finite warp"));
        }
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let p = to_source.apply_point(&Point2::new(u as f64, v as f64));
                data.push(self.sample(p.x, p.y));
            }
        }
        GrayImage::new(width, height, data)
    }
}

/// Extracts a `side x side` patch whose pixel `(j, i)` is sampled at
/// `center - side/2 + (j, i)`; out-of-image pixels replicate the edge.
/// Integer centres reproduce the source pixels exactly.
pub fn extract_patch(img: &GrayImage, center: Point2<f64>, side: usize) -> Result<GrayImage> {
    if side < 4 {
        return Err(Error::invalid("patch side must be at least 4"));
    }
    if !center.x.is_finite() || !center.y.is_finite() {
        return Err(Error::invalid("patch center is not finite"));
    }
    let x0 = center.x - (side / 2) as f64;
    let y0 = center.y - (side / 2) as f64;
    let (fx0, fy0) = (x0.floor(), y0.floor());
    let (fx, fy) = ((x0 - fx0) as f32, (y0 - fy0) as f32);
    let (ix, iy) = (fx0 as isize, fy0 as isize);
    let mut data = Vec::with_capacity(side * side);
    for i in 0..side as isize {
        for j in 0..side as isize {
            let (x, y) = (ix + j, iy + i);
            let v00 = img.get_clamped(x, y);
            data.push(if fx == 0.0 && fy == 0.0 {
                v00
            } else {
                let top = v00 * (1.0 - fx) + img.get_clamped(x + 1, y) * fx;
                let bottom = img.get_clamped(x, y + 1) * (1.0 - fx) + img.get_clamped(x + 1, y + 1) * fx;
                top * (1.0 - fy) + bottom * fy
            });
        }
    }
    GrayImage::new(side, side, data)
}

/// Grouping of cells into non-overlapping normalization blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLayout {
    /// One block spanning the whole patch.
    WholePatch,
    /// Square blocks of this many cells per axis.
    Cells(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HogVariant {
    /// Per-cell orientation histograms with L2-Hys block normalization
    /// (L2, clip at 0.2, renormalize).
    Basic,
    /// The 31-dimensional cell feature: `2b` contrast-sensitive and `b`
    /// contrast-insensitive orientation features plus 4 texture features,
    /// each normalized against the four 2x2 cell neighbourhoods of the
    /// cell (`b = orientation_bins`, 9 gives 31).
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HogParams {
    pub cell_size: usize,
    pub block: BlockLayout,
    pub orientation_bins: usize,
    /// Basic variant only: bins span 360 degrees instead of 180.
    pub signed: bool,
    pub variant: HogVariant,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams {
            cell_size: 8,
            block: BlockLayout::WholePatch,
            orientation_bins: 9,
            signed: false,
            variant: HogVariant::Basic,
        }
    }
}

impl HogParams {
    pub fn extended() -> Self {
        HogParams {
            variant: HogVariant::Extended,
            ..Self::default()
        }
    }

    pub fn with_cell_size(self, cell_size: usize) -> Self {
        HogParams { cell_size, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.cell_size < 2 {
            return Err(Error::invalid("HOG cell size must be at least 2"));
        }
        if self.orientation_bins < 2 {
            return Err(Error::invalid("HOG needs at least 2 orientation bins"));
        }
        if let BlockLayout::Cells(0) = self.block {
            return Err(Error::invalid("HOG block must contain at least one cell"));
        }
        Ok(())
    }

    /// Number of values produced for one cell.
    pub fn values_per_cell(&self) -> usize {
        match self.variant {
            HogVariant::Basic => self.orientation_bins,
            HogVariant::Extended => 3 * self.orientation_bins + 4,
        }
    }
}

/// Descriptor length for a square patch of side `side`.
pub fn hog_len(side: usize, params: &HogParams) -> Result<usize> {
    params.validate()?;
    let cells = cells_per_axis(side, params)?;
    Ok(cells * cells * params.values_per_cell())
}

fn cells_per_axis(side: usize, params: &HogParams) -> Result<usize> {
    if side == 0 || !side.is_multiple_of(params.cell_size) {
        return Err(Error::invalid(format!(
            "patch side {side} is not divisible by cell size {}",
            params.cell_size
        )));
    }
    let cells = side / params.cell_size;
    if params.variant == HogVariant::Basic {
        if let BlockLayout::Cells(b) = params.block {
            if !cells.is_multiple_of(b) {
                return Err(Error::invalid(format!(
                    "{cells} cells per axis cannot be tiled by {b}-cell blocks"
                )));
            }
        }
    }
    Ok(cells)
}

/// Per-pixel gradient magnitude and orientation of a square patch.
struct Gradients {
    side: usize,
    magnitude: Vec<f64>,
    /// Orientation in `[0, 2*pi)`.
    angle: Vec<f64>,
    /// Last orientation binning, shared by the levels of a pyramid.
    binned: RefCell<Option<Binned>>,
}

/// Per-pixel soft assignment to two neighbouring orientation bins.
struct Binned {
    bins: usize,
    range: f64,
    lo: Vec<usize>,
    hi: Vec<usize>,
    w_lo: Vec<f64>,
    w_hi: Vec<f64>,
}

impl Gradients {
    fn of(patch: &GrayImage) -> Result<Self> {
        if patch.width() != patch.height() {
            return Err(Error::invalid("HOG patches must be square"));
        }
        let side = patch.width();
        let mut magnitude = Vec::with_capacity(side * side);
        let mut angle = Vec::with_capacity(side * side);
        for y in 0..side as isize {
            for x in 0..side as isize {
                let gx = (patch.get_clamped(x + 1, y) - patch.get_clamped(x - 1, y)) as f64;
                let gy = (patch.get_clamped(x, y + 1) - patch.get_clamped(x, y - 1)) as f64;
                magnitude.push(gx.hypot(gy));
                let a = gy.atan2(gx);
                angle.push(if a < 0.0 { a + 2.0 * PI } else { a });
            }
        }
        Ok(Gradients {
            side,
            magnitude,
            angle,
            binned: RefCell::new(None),
        })
    }

    fn bin(&self, bins: usize, range: f64) -> Binned {
        let width = range / bins as f64;
        let n = self.magnitude.len();
        let mut out = Binned {
            bins,
            range,
            lo: Vec::with_capacity(n),
            hi: Vec::with_capacity(n),
            w_lo: Vec::with_capacity(n),
            w_hi: Vec::with_capacity(n),
        };
        for (&mag, &a) in self.magnitude.iter().zip(&self.angle) {
            // Exact for a in [range, 2 range), so equal to rem_euclid.
            let a = if a < range {
                a
            } else if a < 2.0 * range {
                a - range
            } else {
                a.rem_euclid(range)
            };
            let pos = a / width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = (lo as usize) % bins;
            out.lo.push(lo);
            out.hi.push(if lo + 1 == bins { 0 } else { lo + 1 });
            out.w_lo.push(mag * (1.0 - frac));
            out.w_hi.push(mag * frac);
        }
        out
    }

    /// Orientation histograms per cell, row-major over cells. `bins` bins
    /// span `range` radians (pi for unsigned, 2*pi for signed).
    fn cell_histograms(&self, cell: usize, bins: usize, range: f64) -> Vec<f64> {
        let mut cache = self.binned.borrow_mut();
        if !matches!(&*cache, Some(b) if b.bins == bins && b.range == range) {
            *cache = Some(self.bin(bins, range));
        }
        let b = cache.as_ref().expect("binning just computed");
        let cells = self.side / cell;
        let mut hist = vec![0.0; cells * cells * bins];
        for y in 0..self.side {
            let row = (y / cell) * cells;
            for x in 0..self.side {
                let idx = y * self.side + x;
                if self.magnitude[idx] == 0.0 {
                    continue;
                }
                let base = (row + x / cell) * bins;
                hist[base + b.lo[idx]] += b.w_lo[idx];
                hist[base + b.hi[idx]] += b.w_hi[idx];
            }
        }
        hist
    }
}

fn l2_hys(block: &mut [f64]) {
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        block.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in block.iter_mut() {
        *v = (*v / norm).min(0.2);
    }
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        block.iter_mut().for_each(|v| *v /= norm);
    }
}

fn hog_basic(grad: &Gradients, params: &HogParams) -> Result<Vec<f64>> {
    let cells = cells_per_axis(grad.side, params)?;
    let bins = params.orientation_bins;
    let range = if params.signed { 2.0 * PI } else { PI };
    let mut hist = grad.cell_histograms(params.cell_size, bins, range);
    let block = match params.block {
        BlockLayout::WholePatch => cells,
        BlockLayout::Cells(b) => b,
    };
    let mut scratch = Vec::with_capacity(block * block * bins);
    for by in (0..cells).step_by(block) {
        for bx in (0..cells).step_by(block) {
            scratch.clear();
            for cy in by..by + block {
                for cx in bx..bx + block {
                    let base = (cy * cells + cx) * bins;
                    scratch.extend_from_slice(&hist[base..base + bins]);
                }
            }
            l2_hys(&mut scratch);
            let mut k = 0;
            for cy in by..by + block {
                for cx in bx..bx + block {
                    let base = (cy * cells + cx) * bins;
                    hist[base..base + bins].copy_from_slice(&scratch[k..k + bins]);
                    k += bins;
                }
            }
        }
    }
    Ok(hist)
}

fn hog_extended(grad: &Gradients, params: &HogParams) -> Result<Vec<f64>> {
    let cells = cells_per_axis(grad.side, params)?;
    let bins = params.orientation_bins;
    let signed_bins = 2 * bins;
    let signed = grad.cell_histograms(params.cell_size, signed_bins, 2.0 * PI);
    let unsigned: Vec<f64> = signed
        .chunks(signed_bins)
        .flat_map(|h| (0..bins).map(move |o| h[o] + h[o + bins]))
        .collect();
    let energy: Vec<f64> = unsigned.chunks(bins).map(|h| h.iter().map(|v| v * v).sum()).collect();
    let e = |cy: isize, cx: isize| {
        let cy = cy.clamp(0, cells as isize - 1) as usize;
        let cx = cx.clamp(0, cells as isize - 1) as usize;
        energy[cy * cells + cx]
    };

    let per_cell = params.values_per_cell();
    let mut out = vec![0.0; cells * cells * per_cell];
    for cy in 0..cells {
        for cx in 0..cells {
            let (y, x) = (cy as isize, cx as isize);
            let norms: [f64; 4] = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
                .map(|(dy, dx)| (e(y, x) + e(y + dy, x) + e(y, x + dx) + e(y + dy, x + dx)).sqrt());
            let cell = cy * cells + cx;
            let hs = &signed[cell * signed_bins..(cell + 1) * signed_bins];
            let hu = &unsigned[cell * bins..(cell + 1) * bins];
            let dst = &mut out[cell * per_cell..(cell + 1) * per_cell];
            for (d, &n) in norms.iter().enumerate() {
                if n == 0.0 {
                    continue;
                }
                let mut texture = 0.0;
                for (o, &h) in hs.iter().enumerate() {
                    let v = (h / n).min(0.2);
                    dst[o] += 0.5 * v;
                    texture += v;
                }
                for (o, &h) in hu.iter().enumerate() {
                    dst[signed_bins + o] += 0.5 * (h / n).min(0.2);
                }
                dst[signed_bins + bins + d] = 0.2357 * texture;
            }
        }
    }
    Ok(out)
}

fn hog_from_gradients(grad: &Gradients, params: &HogParams) -> Result<Vec<f64>> {
    params.validate()?;
    match params.variant {
        HogVariant::Basic => hog_basic(grad, params),
        HogVariant::Extended => hog_extended(grad, params),
    }
}

/// HOG descriptor of a square patch. Values are ordered cell-major (cells
/// row by row), then per-cell feature index.
pub fn hog(patch: &GrayImage, params: &HogParams) -> Result<Vec<f64>> {
    params.validate()?;
    cells_per_axis(patch.width(), params)?;
    hog_from_gradients(&Gradients::of(patch)?, params)
}

/// Pyramid HOG: HOG of the same patch at several cell sizes, concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct PhogDescriptor {
    pub values: Vec<f64>,
    /// Cell sizes in concatenation order (coarsest, i.e. largest, first).
    pub levels: Vec<usize>,
}

/// Computes the pyramid HOG of `patch`. `levels` lists cell sizes; they are
/// used in descending order (coarsest first) regardless of input order.
/// `params.cell_size` is ignored.
pub fn phog(patch: &GrayImage, levels: &[usize], params: &HogParams) -> Result<PhogDescriptor> {
    if levels.is_empty() {
        return Err(Error::invalid("pyramid HOG needs at least one level"));
    }
    let mut levels = levels.to_vec();
    levels.sort_unstable_by(|a, b| b.cmp(a));
    levels.dedup();
    for &l in &levels {
        cells_per_axis(patch.width(), &params.with_cell_size(l))?;
    }
    let grad = Gradients::of(patch)?;
    let mut values = Vec::new();
    for &l in &levels {
        values.extend(hog_from_gradients(&grad, &params.with_cell_size(l))?);
    }
    Ok(PhogDescriptor { values, levels })
}

/// Descriptor length of [`phog`] on a `side x side` patch.
pub fn phog_len(side: usize, levels: &[usize], params: &HogParams) -> Result<usize> {
    if levels.is_empty() {
        return Err(Error::invalid("pyramid HOG needs at least one level"));
    }
    let mut levels = levels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    levels.iter().map(|&l| hog_len(side, &params.with_cell_size(l))).sum()
}

/// Patch size, pyramid levels and HOG flavour of one descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhogConfig {
    pub patch_side: usize,
    pub levels: Vec<usize>,
    pub hog: HogParams,
}

impl PhogConfig {
    /// 32x32 basic HOG, levels {32, 16, 8}, one block per level.
    pub fn landmark_default() -> Self {
        PhogConfig {
            patch_side: 32,
            levels: vec![32, 16, 8],
            hog: HogParams::default(),
        }
    }

    /// 64x64 extended HOG, levels {64, 32, 16}.
    pub fn face_default() -> Self {
        PhogConfig {
            patch_side: 64,
            levels: vec![64, 32, 16],
            hog: HogParams::extended(),
        }
    }

    pub fn descriptor_len(&self) -> Result<usize> {
        phog_len(self.patch_side, &self.levels, &self.hog)
    }

    /// Extracts the patch around `center` and describes it.
    pub fn describe(&self, img: &GrayImage, center: Point2<f64>) -> Result<Vec<f64>> {
        let patch = extract_patch(img, center, self.patch_side)?;
        Ok(phog(&patch, &self.levels, &self.hog)?.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.gen::<f32>()).collect();
        GrayImage::new(w, h, data).unwrap()
    }

    #[test]
    fn image_validation() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn patch_inside_is_exact_crop() {
        let img = random_image(80, 60, 1);
        let p = extract_patch(&img, Point2::new(40.0, 30.0), 32).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(p.get(j, i), img.get(24 + j, 14 + i));
            }
        }
    }

    #[test]
    fn patch_at_corner_replicates_edges() {
        let img = random_image(20, 20, 2);
        let p = extract_patch(&img, Point2::new(0.0, 0.0), 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let sx = (j as isize - 4).max(0) as usize;
                let sy = (i as isize - 4).max(0) as usize;
                assert_eq!(p.get(j, i), img.get(sx, sy));
            }
        }
    }

    #[test]
    fn patch_of_constant_image_is_constant() {
        let img = GrayImage::filled(30, 30, 0.5).unwrap();
        let p = extract_patch(&img, Point2::new(3.3, 28.7), 16).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn patch_errors() {
        let img = GrayImage::filled(10, 10, 0.5).unwrap();
        assert!(extract_patch(&img, Point2::new(f64::NAN, 1.0), 8).is_err());
        assert!(extract_patch(&img, Point2::new(1.0, 1.0), 3).is_err());
    }

    #[test]
    fn constant_patch_gives_zero_descriptor() {
        let p = GrayImage::filled(32, 32, 0.3).unwrap();
        for params in [HogParams::default(), HogParams::extended()] {
            let d = hog(&p, &params).unwrap();
            assert!(d.iter().all(|&v| v == 0.0));
            let d = phog(&p, &[32, 16, 8], &params).unwrap();
            assert!(d.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn horizontal_ramp_votes_single_bin() {
        // I(x, y) = x / 64: gx > 0, gy = 0 everywhere, orientation 0.
        let p = GrayImage::from_fn(16, 16, |x, _| x as f32 / 64.0).unwrap();
        let params = HogParams::default().with_cell_size(8);
        let d = hog(&p, &params).unwrap();
        assert_eq!(d.len(), 36);
        for cell in d.chunks(9) {
            assert!(cell[0] > 0.0);
            assert!(cell[1..].iter().all(|&v| v == 0.0));
        }
        // Direct count: each cell gets equal energy, so after whole-patch
        // normalization every bin-0 entry is 1/sqrt(4).
        for cell in d.chunks(9) {
            assert!((cell[0] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn descriptor_lengths() {
        let p = random_image(16, 16, 3);
        let params = HogParams::default().with_cell_size(8);
        assert_eq!(hog(&p, &params).unwrap().len(), 36);
        let p32 = random_image(32, 32, 4);
        let d = phog(&p32, &[32, 16, 8], &HogParams::default()).unwrap();
        assert_eq!(d.values.len(), 189);
        assert_eq!(d.levels, vec![32, 16, 8]);
        let single = phog(&p32, &[32], &HogParams::default()).unwrap();
        assert_eq!(
            single.values,
            hog(&p32, &HogParams::default().with_cell_size(32)).unwrap()
        );
        let ext = PhogConfig::face_default();
        assert_eq!(ext.descriptor_len().unwrap(), (1 + 4 + 16) * 31);
    }

    #[test]
    fn hog_errors() {
        let p = random_image(30, 30, 5);
        assert!(hog(&p, &HogParams::default().with_cell_size(8)).is_err());
        assert!(hog(&p, &HogParams::default().with_cell_size(1)).is_err());
        assert!(phog(&p, &[], &HogParams::default()).is_err());
        let p = random_image(24, 24, 5);
        let blocks = HogParams {
            block: BlockLayout::Cells(2),
            ..HogParams::default()
        };
        assert!(hog(&p, &blocks.with_cell_size(8)).is_err());
        assert!(hog(&p, &blocks.with_cell_size(6)).is_ok());
    }

    #[test]
    fn basic_blocks_are_unit_norm() {
        let p = random_image(32, 32, 6);
        let params = HogParams {
            block: BlockLayout::Cells(2),
            ..HogParams::default().with_cell_size(4)
        };
        let d = hog(&p, &params).unwrap();
        assert_eq!(d.len(), 64 * 9);
        // first block = cells (0,0),(0,1),(1,0),(1,1)
        let cells = 8;
        let mut sq = 0.0;
        for cy in 0..2 {
            for cx in 0..2 {
                let base = (cy * cells + cx) * 9;
                sq += d[base..base + 9].iter().map(|v| v * v).sum::<f64>();
            }
        }
        assert!((sq - 1.0).abs() < 1e-9);
    }

    #[test]
    fn descriptor_length_grid() {
        for side in [16usize, 32, 64] {
            for cell in [4usize, 8, 16] {
                for bins in [4usize, 9, 12] {
                    for variant in [HogVariant::Basic, HogVariant::Extended] {
                        let params = HogParams {
                            cell_size: cell,
                            orientation_bins: bins,
                            variant,
                            ..HogParams::default()
                        };
                        let p = random_image(side, side, (side * cell + bins) as u64);
                        let d = hog(&p, &params).unwrap();
                        assert_eq!(d.len(), hog_len(side, &params).unwrap());
                        let per_cell = match variant {
                            HogVariant::Basic => bins,
                            HogVariant::Extended => 3 * bins + 4,
                        };
                        assert_eq!(d.len(), (side / cell).pow(2) * per_cell);
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn hog_invariant_to_offset_and_gain(seed in 0u64..1000, offset in 0.0f32..0.3, gain in 0.2f32..1.0) {
            let base = random_image(32, 32, seed);
            // Keep the transformed intensities inside [0, 1].
            let scaled = GrayImage::from_fn(32, 32, |x, y| base.get(x, y) * 0.5 * gain).unwrap();
            let reference = GrayImage::from_fn(32, 32, |x, y| base.get(x, y) * 0.5).unwrap();
            let shifted = GrayImage::from_fn(32, 32, |x, y| base.get(x, y) * 0.5 + offset).unwrap();
            for params in [HogParams::default(), HogParams::extended()] {
                let r = phog(&reference, &[32, 16, 8], &params).unwrap().values;
                let s = phog(&scaled, &[32, 16, 8], &params).unwrap().values;
                let t = phog(&shifted, &[32, 16, 8], &params).unwrap().values;
                for ((a, b), c) in r.iter().zip(&s).zip(&t) {
                    prop_assert!((a - b).abs() < 1e-5, "gain: {} vs {}", a, b);
                    prop_assert!((a - c).abs() < 1e-5, "offset: {} vs {}", a, c);
                    prop_assert!(*a >= 0.0);
                }
            }
        }

        #[test]
        fn replicated_patch_matches_crop_inside(cx in 16i32..48, cy in 16i32..48, seed in 0u64..100) {
            let img = random_image(64, 64, seed);
            let p = extract_patch(&img, Point2::new(cx as f64, cy as f64), 32).unwrap();
            for i in 0..32usize {
                for j in 0..32usize {
                    prop_assert_eq!(p.get(j, i), img.get(cx as usize - 16 + j, cy as usize - 16 + i));
                }
            }
        }
    }
}
