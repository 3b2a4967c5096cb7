//! Per-pixel feature maps and region covariance descriptors.
//!
//! Each pixel is described by `[x, y, |dx|, |dy|, |dxx|, |dyy|, magnitude,
//! orientation]`. Prefix sums of the features and of their outer products
//! ([`IntegralTensors`]) give the covariance of any rectangle from four
//! corner reads.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::spd::SpdMatrix;
use crate::{Error, Result};

pub const FEATURE_CHANNELS: usize = 8;
const PAIRS: usize = FEATURE_CHANNELS * (FEATURE_CHANNELS + 1) / 2;
pub const MIN_REGION_PIXELS: usize = 9;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Grayscale intensities in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::ImageTooSmall {
                width,
                height,
                min_width: 3,
                min_height: 3,
            });
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn from_luma8(img: &image::GrayImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let pixels = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    /// Reads an 8-bit portable graymap.
    pub fn load_pgm(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()?
            .into_luma8();
        Self::from_luma8(&img)
    }

    /// Quantizes to 8 bits and writes a binary (P5) graymap.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(
                &raw,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::L8,
            )?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn crop(&self, region: &Region) -> Result<GrayImage> {
        region.check_within(self.width, self.height)?;
        let mut pixels = Vec::with_capacity(region.w * region.h);
        for y in region.y0..region.y0 + region.h {
            let start = y * self.width + region.x0;
            pixels.extend_from_slice(&self.pixels[start..start + region.w]);
        }
        GrayImage::new(region.w, region.h, pixels)
    }
}

/// A rectangle of pixels: top-left corner (inclusive) and extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x0, self.y0, self.w, self.h)
    }
}

impl Region {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let r = Self { x0, y0, w, h };
        if w * h < MIN_REGION_PIXELS {
            return Err(Error::RegionTooSmall(r.to_string()));
        }
        Ok(r)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x0 + self.w > width || self.y0 + self.h > height {
            return Err(Error::RegionOutOfBounds(self.to_string()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    /// Wraps precomputed features, `FEATURE_CHANNELS` values per pixel, row-major.
    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput("feature tensor"));
        }
        if data.len() != width * height * FEATURE_CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: width * height * FEATURE_CHANNELS,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * FEATURE_CHANNELS;
        &self.data[i..i + FEATURE_CHANNELS]
    }
}

/// Computes the 8-channel feature map. Derivatives use central differences
/// `[-1, 0, 1] / 2` and `[1, -2, 1]` with replicated borders; coordinates are
/// relative to the image's top-left corner.
pub fn compute_features(img: &GrayImage) -> Result<FeatureTensor> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: 3,
            min_height: 3,
        });
    }
    let mut data = Vec::with_capacity(w * h * FEATURE_CHANNELS);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = img.clamped(x, y);
            let (l, r) = (img.clamped(x - 1, y), img.clamped(x + 1, y));
            let (u, d) = (img.clamped(x, y - 1), img.clamped(x, y + 1));
            let dx = ((r - l) / 2.0).abs();
            let dy = ((d - u) / 2.0).abs();
            let dxx = (r - 2.0 * c + l).abs();
            let dyy = (d - 2.0 * c + u).abs();
            let magnitude = dx.hypot(dy);
            // arctan(|dx| / |dy|), 0 when both vanish
            let orientation = dx.atan2(dy);
            data.extend_from_slice(&[x as f64, y as f64, dx, dy, dxx, dyy, magnitude, orientation]);
        }
    }
    Ok(FeatureTensor {
        width: w,
        height: h,
        data,
    })
}

fn pair_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    i * FEATURE_CHANNELS - i * (i + 1) / 2 + j
}

/// Two-dimensional prefix sums of the features and of their pairwise products.
/// Cell `(x, y)` holds the sum over pixels with column `< x` and row `< y`.
#[derive(Clone, Debug)]
pub struct IntegralTensors {
    width: usize,
    height: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

pub fn build_integrals(f: &FeatureTensor) -> IntegralTensors {
    let (w, h) = (f.width, f.height);
    let stride = w + 1;
    let mut first = vec![0.0; stride * (h + 1) * FEATURE_CHANNELS];
    let mut second = vec![0.0; stride * (h + 1) * PAIRS];
    let mut row1 = [0.0; FEATURE_CHANNELS];
    let mut row2 = [0.0; PAIRS];
    for y in 0..h {
        row1.fill(0.0);
        row2.fill(0.0);
        for x in 0..w {
            let v = f.pixel(x, y);
            for i in 0..FEATURE_CHANNELS {
                row1[i] += v[i];
                for j in i..FEATURE_CHANNELS {
                    row2[pair_index(i, j)] += v[i] * v[j];
                }
            }
            let above = (y * stride + x + 1) * FEATURE_CHANNELS;
            let here = ((y + 1) * stride + x + 1) * FEATURE_CHANNELS;
            for c in 0..FEATURE_CHANNELS {
                first[here + c] = first[above + c] + row1[c];
            }
            let above = (y * stride + x + 1) * PAIRS;
            let here = ((y + 1) * stride + x + 1) * PAIRS;
            for p in 0..PAIRS {
                second[here + p] = second[above + p] + row2[p];
            }
        }
    }
    IntegralTensors {
        width: w,
        height: h,
        first,
        second,
    }
}

impl IntegralTensors {
    pub fn from_image(img: &GrayImage) -> Result<Self> {
        Ok(build_integrals(&compute_features(img)?))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Running sum of channel `c` at integral cell `(x, y)`.
    pub fn first_order(&self, x: usize, y: usize, c: usize) -> f64 {
        self.first[(y * (self.width + 1) + x) * FEATURE_CHANNELS + c]
    }

    /// Running sum of the product of channels `i` and `j` at integral cell `(x, y)`.
    pub fn second_order(&self, x: usize, y: usize, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.second[(y * (self.width + 1) + x) * PAIRS + pair_index(i, j)]
    }

    fn box_sum<const N: usize>(planes: &[f64], stride: usize, r: &Region) -> [f64; N] {
        let at = |x: usize, y: usize| (y * stride + x) * N;
        let (a, b) = (at(r.x0, r.y0), at(r.x0 + r.w, r.y0));
        let (c, d) = (at(r.x0, r.y0 + r.h), at(r.x0 + r.w, r.y0 + r.h));
        let mut out = [0.0; N];
        for (k, o) in out.iter_mut().enumerate() {
            *o = planes[d + k] - planes[b + k] - planes[c + k] + planes[a + k];
        }
        out
    }

    /// Channel sums over a region.
    pub fn region_sum(&self, r: &Region) -> Result<[f64; FEATURE_CHANNELS]> {
        r.check_within(self.width, self.height)?;
        Ok(Self::box_sum::<FEATURE_CHANNELS>(
            &self.first,
            self.width + 1,
            r,
        ))
    }

    /// Sample covariance (1/(n−1) normalization) of the features in `r`, without regularization.
    pub fn raw_covariance(&self, r: &Region) -> Result<DMatrix<f64>> {
        r.check_within(self.width, self.height)?;
        let n = r.area();
        if n < 2 {
            return Err(Error::RegionTooSmall(r.to_string()));
        }
        let s1 = Self::box_sum::<FEATURE_CHANNELS>(&self.first, self.width + 1, r);
        let s2 = Self::box_sum::<PAIRS>(&self.second, self.width + 1, r);
        let n = n as f64;
        let mut c = DMatrix::zeros(FEATURE_CHANNELS, FEATURE_CHANNELS);
        for i in 0..FEATURE_CHANNELS {
            for j in i..FEATURE_CHANNELS {
                let v = (s2[pair_index(i, j)] - s1[i] * s1[j] / n) / (n - 1.0);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        Ok(c)
    }
}

/// Region covariance shifted by `eps·trace/8` along the diagonal so that it is
/// strictly positive definite.
pub fn region_covariance(ints: &IntegralTensors, r: &Region, eps: f64) -> Result<SpdMatrix> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    if r.area() < MIN_REGION_PIXELS {
        return Err(Error::RegionTooSmall(r.to_string()));
    }
    let mut c = ints.raw_covariance(r)?;
    let trace = c.trace();
    if trace <= 0.0 && eps == 0.0 {
        return Err(Error::DegenerateRegion);
    }
    let shift = eps * trace / FEATURE_CHANNELS as f64;
    for i in 0..FEATURE_CHANNELS {
        c[(i, i)] += shift;
    }
    SpdMatrix::new(c)
}

/// Anything that can produce a covariance descriptor for a sub-region of a
/// detection window.
pub trait DescriptorSource: Sync {
    /// Window extent in pixels, if the source is backed by pixels.
    fn extent(&self) -> Option<(usize, usize)>;

    fn descriptor(&self, region: &Region, eps: f64) -> Result<SpdMatrix>;
}

impl DescriptorSource for IntegralTensors {
    fn extent(&self) -> Option<(usize, usize)> {
        Some((self.width, self.height))
    }

    fn descriptor(&self, region: &Region, eps: f64) -> Result<SpdMatrix> {
        region_covariance(self, region, eps)
    }
}

/// A precomputed descriptor that is the same for every region.
impl DescriptorSource for SpdMatrix {
    fn extent(&self) -> Option<(usize, usize)> {
        None
    }

    fn descriptor(&self, _region: &Region, _eps: f64) -> Result<SpdMatrix> {
        Ok(self.clone())
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn noise_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut s = seed;
        GrayImage::from_fn(w, h, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .unwrap()
    }

    #[test]
    fn image_too_small() {
        assert!(matches!(
            GrayImage::new(2, 5, vec![0.0; 10]),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn constant_image_has_flat_features() {
        let img = GrayImage::from_fn(6, 5, |_, _| 0.4).unwrap();
        let f = compute_features(&img).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let p = f.pixel(x, y);
                assert_eq!(p[0], x as f64);
                assert_eq!(p[1], y as f64);
                assert!(p[2..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn horizontal_ramp() {
        let w = 10;
        let img = GrayImage::from_fn(w, 4, |x, _| x as f64 / w as f64).unwrap();
        let f = compute_features(&img).unwrap();
        for y in 0..4 {
            for x in 1..w - 1 {
                let p = f.pixel(x, y);
                assert!((p[2] - 1.0 / w as f64).abs() < 1e-15);
                assert_eq!(p[3], 0.0);
                assert!(p[4].abs() < 1e-15);
                assert_eq!(p[5], 0.0);
                assert_eq!(p[7], FRAC_PI_2);
            }
            // replicated border halves the central difference
            assert!((f.pixel(0, y)[2] - 0.5 / w as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn magnitude_channel_is_consistent() {
        let img = noise_image(9, 7, 3);
        let f = compute_features(&img).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                let p = f.pixel(x, y);
                assert!((p[6] - (p[2] * p[2] + p[3] * p[3]).sqrt()).abs() < 1e-15);
                assert!(p[2..7].iter().all(|&v| v >= 0.0));
                assert!((0.0..=FRAC_PI_2).contains(&p[7]));
            }
        }
    }

    #[test]
    fn single_pixel_integral() {
        let v: Vec<f64> = (1..=8).map(|i| i as f64 * 0.5).collect();
        let ints = build_integrals(&FeatureTensor::from_raw(1, 1, v.clone()).unwrap());
        for c in 0..8 {
            assert_eq!(ints.first_order(0, 0, c), 0.0);
            assert_eq!(ints.first_order(1, 0, c), 0.0);
            assert_eq!(ints.first_order(1, 1, c), v[c]);
        }
        assert_eq!(ints.second_order(1, 1, 2, 5), v[2] * v[5]);
        assert_eq!(ints.second_order(1, 1, 5, 2), v[2] * v[5]);
    }

    #[test]
    fn full_sum_matches_direct() {
        let img = noise_image(13, 11, 5);
        let f = compute_features(&img).unwrap();
        let ints = build_integrals(&f);
        let mut direct = [0.0; 8];
        let mut direct2 = [[0.0; 8]; 8];
        for y in 0..11 {
            for x in 0..13 {
                let p = f.pixel(x, y);
                for i in 0..8 {
                    direct[i] += p[i];
                    for j in 0..8 {
                        direct2[i][j] += p[i] * p[j];
                    }
                }
            }
        }
        for i in 0..8 {
            let got = ints.first_order(13, 11, i);
            assert!((got - direct[i]).abs() <= 1e-12 * direct[i].abs().max(1.0));
            for j in 0..8 {
                let got = ints.second_order(13, 11, i, j);
                assert!((got - direct2[i][j]).abs() <= 1e-12 * direct2[i][j].abs().max(1.0));
            }
        }
        // squares accumulate nonnegatively everywhere
        for y in 0..=11 {
            for x in 0..=13 {
                for i in 0..8 {
                    assert!(ints.second_order(x, y, i, i) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn constant_image_covariance() {
        let img = GrayImage::from_fn(12, 10, |_, _| 0.7).unwrap();
        let ints = IntegralTensors::from_image(&img).unwrap();
        let r = Region::new(2, 3, 5, 4).unwrap();
        let c = ints.raw_covariance(&r).unwrap();
        // direct oracle over the listed pixels
        let xs: Vec<f64> = (0..4).flat_map(|_| (2..7).map(|x| x as f64)).collect();
        let ys: Vec<f64> = (3..7)
            .flat_map(|y| std::iter::repeat_n(y as f64, 5))
            .collect();
        let n = xs.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (mx, my) = (mean(&xs), mean(&ys));
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((c[(0, 0)] - vx).abs() < 1e-12);
        assert!((c[(1, 1)] - vy).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12);
        for i in 0..8 {
            for j in 0..8 {
                if i >= 2 || j >= 2 {
                    assert_eq!(c[(i, j)], 0.0);
                }
            }
        }
        let spd = region_covariance(&ints, &r, DEFAULT_EPS).unwrap();
        let eig = spd.as_matrix().symmetric_eigenvalues();
        assert!(eig.min() > 0.0);
    }

    #[test]
    fn region_errors() {
        let ints = IntegralTensors::from_image(&noise_image(8, 8, 1)).unwrap();
        assert!(matches!(
            Region::new(0, 0, 2, 4),
            Err(Error::RegionTooSmall(_))
        ));
        let r = Region::new(5, 0, 4, 4).unwrap();
        assert!(matches!(
            region_covariance(&ints, &r, 1e-5),
            Err(Error::RegionOutOfBounds(_))
        ));
        assert!(matches!(
            region_covariance(&ints, &Region::new(0, 0, 3, 3).unwrap(), -1.0),
            Err(Error::InvalidArgument(_))
        ));

        let flat = FeatureTensor::from_raw(4, 4, vec![0.25; 4 * 4 * 8]).unwrap();
        let ints = build_integrals(&flat);
        assert!(matches!(
            region_covariance(&ints, &Region::new(0, 0, 3, 3).unwrap(), 0.0),
            Err(Error::DegenerateRegion)
        ));
    }

    #[test]
    fn crop_and_pgm_roundtrip() {
        let img =
            GrayImage::from_fn(7, 5, |x, y| ((x * 31 + y * 17) % 256) as f64 / 255.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        img.save_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..2], b"P5");
        let back = GrayImage::load_pgm(&path).unwrap();
        assert_eq!(back, img);
        let c = img.crop(&Region::new(1, 1, 3, 3).unwrap()).unwrap();
        assert_eq!(c.get(0, 0), img.get(1, 1));
        assert!(matches!(
            GrayImage::load_pgm(&dir.path().join("nope.pgm")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn descriptor_source_impls() {
        let ints = IntegralTensors::from_image(&noise_image(10, 9, 2)).unwrap();
        assert_eq!(ints.extent(), Some((10, 9)));
        let r = Region::new(1, 1, 5, 5).unwrap();
        assert_eq!(
            ints.descriptor(&r, 1e-5).unwrap(),
            region_covariance(&ints, &r, 1e-5).unwrap()
        );
        let m = SpdMatrix::identity(2);
        assert_eq!(m.extent(), None);
        assert_eq!(m.descriptor(&r, 0.0).unwrap(), m);
    }
}
