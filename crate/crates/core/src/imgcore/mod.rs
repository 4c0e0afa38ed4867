//! Grayscale rasters, patch extraction/aggregation operators and PSNR.
//!
//! Patches are vectorized row-major within the patch window: entry `a * p + b`
//! of a patch whose top-left corner is `(r, c)` is pixel `(r + a, c + b)`.
//! Every routine in the crate uses this one order.

pub(crate) mod io;

pub use io::{load_image, save_image};

use crate::error::{Error, Result};

/// A single-channel image with `f64` samples in row-major order.
///
/// Samples are nominally in `[0, 255]` but nothing enforces it; noisy
/// observations and intermediate estimates routinely leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} samples supplied for a {width}x{height} image",
                samples.len()
            )));
        }
        Ok(Image {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Image::new(width, height, vec![value; width * height])
    }

    /// Builds an image from a function of `(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                samples.push(f(r, c));
            }
        }
        Image::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.samples[row * self.width + col] = value;
    }

    /// Copy with every sample clamped to `[lo, hi]`.
    pub fn clamped(&self, lo: f64, hi: f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            samples: self.samples.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    /// Sub-image with top-left corner `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height} at ({row}, {col}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        Image::from_fn(width, height, |r, c| self.get(row + r, col + c))
    }

    pub(crate) fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Geometry of the patch operators `R_i` on a `width x height` raster.
///
/// `positions` lists the top-left corner of every patch that fits, in
/// row-major order; a patch index is a position in that list. Reference
/// positions form the stride grid, extended with the last valid row and
/// column so border pixels are reached by some reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSystem {
    width: usize,
    height: usize,
    patch_size: usize,
    reference_stride: usize,
    reference_rows: Vec<usize>,
    reference_cols: Vec<usize>,
}

impl PatchSystem {
    pub fn new(width: usize, height: usize, patch_size: usize, reference_stride: usize) -> Result<Self> {
        if patch_size == 0 || reference_stride == 0 {
            return Err(Error::InvalidArgument(
                "patch size and reference stride must be positive".into(),
            ));
        }
        if width < patch_size || height < patch_size {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image is smaller than the {patch_size}x{patch_size} patch"
            )));
        }
        Ok(PatchSystem {
            width,
            height,
            patch_size,
            reference_stride,
            reference_rows: stride_grid(height - patch_size, reference_stride),
            reference_cols: stride_grid(width - patch_size, reference_stride),
        })
    }

    pub fn for_image(img: &Image, patch_size: usize, reference_stride: usize) -> Result<Self> {
        PatchSystem::new(img.width(), img.height(), patch_size, reference_stride)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn reference_stride(&self) -> usize {
        self.reference_stride
    }

    /// Patch dimension `n = patch_size²`.
    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Number of valid top-left rows.
    pub fn position_rows(&self) -> usize {
        self.height - self.patch_size + 1
    }

    /// Number of valid top-left columns.
    pub fn position_cols(&self) -> usize {
        self.width - self.patch_size + 1
    }

    pub fn num_patches(&self) -> usize {
        self.position_rows() * self.position_cols()
    }

    #[inline]
    pub fn position(&self, index: usize) -> (usize, usize) {
        let cols = self.position_cols();
        (index / cols, index % cols)
    }

    #[inline]
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        row * self.position_cols() + col
    }

    pub fn reference_rows(&self) -> &[usize] {
        &self.reference_rows
    }

    pub fn reference_cols(&self) -> &[usize] {
        &self.reference_cols
    }

    /// Patch indices of the reference grid, row-major over the grid.
    pub fn reference_positions(&self) -> Vec<usize> {
        self.reference_rows
            .iter()
            .flat_map(|&r| self.reference_cols.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.index_of(r, c))
            .collect()
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.num_patches() {
            return Err(Error::PatchIndex {
                index,
                count: self.num_patches(),
            });
        }
        Ok(())
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.dims() != (self.width, self.height) {
            return Err(Error::dims(img.dims(), (self.width, self.height)));
        }
        Ok(())
    }

    /// Writes patch `index` of `img` into `out` (length `dim()`), unchecked.
    #[inline]
    pub(crate) fn extract_into(&self, img: &Image, index: usize, out: &mut [f64]) {
        let p = self.patch_size;
        let (r, c) = self.position(index);
        for a in 0..p {
            let start = (r + a) * img.width() + c;
            out[a * p..(a + 1) * p].copy_from_slice(&img.samples()[start..start + p]);
        }
    }
}

fn stride_grid(last: usize, stride: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..=last).step_by(stride).collect();
    if *grid.last().unwrap() != last {
        grid.push(last);
    }
    grid
}

/// Returns patch `index` of `img` as a vector of length `patch_size²`.
pub fn extract_patch(img: &Image, sys: &PatchSystem, index: usize) -> Result<Vec<f64>> {
    sys.check_image(img)?;
    sys.check_index(index)?;
    let mut out = vec![0.0; sys.dim()];
    sys.extract_into(img, index, &mut out);
    Ok(out)
}

/// Returns `(Σ R_iᵀR_i)⁻¹ Σ R_iᵀ z_i`: each output pixel is the mean of all
/// supplied patch entries that land on it.
pub fn aggregate_patches<'a, I>(patches: I, sys: &PatchSystem) -> Result<Image>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let (w, h, p) = (sys.width, sys.height, sys.patch_size);
    let mut sum = vec![0.0; w * h];
    let mut count = vec![0u32; w * h];
    for (index, values) in patches {
        sys.check_index(index)?;
        if values.len() != sys.dim() {
            return Err(Error::InvalidArgument(format!(
                "patch {index} has {} entries, expected {}",
                values.len(),
                sys.dim()
            )));
        }
        let (r, c) = sys.position(index);
        for a in 0..p {
            let row = (r + a) * w + c;
            for b in 0..p {
                sum[row + b] += values[a * p + b];
                count[row + b] += 1;
            }
        }
    }
    if let Some(k) = count.iter().position(|&n| n == 0) {
        return Err(Error::Uncovered {
            row: k / w,
            col: k % w,
        });
    }
    let samples = sum
        .into_iter()
        .zip(count)
        .map(|(s, n)| s / f64::from(n))
        .collect();
    Image::new(w, h, samples)
}

/// Dense stack of patch vectors, one row per patch index.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl PatchMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        PatchMatrix {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    /// All patches of `img`, indexed like `sys.positions`.
    pub fn from_image(img: &Image, sys: &PatchSystem) -> Result<Self> {
        sys.check_image(img)?;
        let mut m = PatchMatrix::zeros(sys.num_patches(), sys.dim());
        for (i, row) in m.data.chunks_exact_mut(sys.dim()).enumerate() {
            sys.extract_into(img, i, row);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Aggregates every row back onto the raster.
    pub fn aggregate(&self, sys: &PatchSystem) -> Result<Image> {
        aggregate_patches(self.iter_rows().enumerate(), sys)
    }
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the images are identical.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    reference.check_same_dims(test)?;
    let mse = mse(reference, test);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(reference: &Image, test: &Image) -> f64 {
    let sse: f64 = reference
        .samples()
        .iter()
        .zip(test.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sse / reference.samples().len() as f64
}
