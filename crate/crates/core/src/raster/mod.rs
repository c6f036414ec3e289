//! Raster types and the preprocessing pipeline that puts drawings from
//! different sources on a common footing: binarization, speck removal,
//! stroke-thickness matching and crop/resize to the canonical canvas.

mod distance;
mod io;
mod labeling;
mod skeleton;

use thiserror::Error;

pub use distance::{distance_to_background, estimate_line_thickness};
pub use io::{decode_gray, encode_binary_png, read_gray, write_binary_png};
pub use labeling::{component_areas, label_components, Connectivity, Labels};
pub use skeleton::skeletonize;

use crate::stats::{kruskal_wallis, KwResult, StatsError};

/// Side length of the canonical drawing canvas.
pub const CANVAS_SIZE: usize = 400;

/// Hard cap on dilation passes in [`dilate_to_thickness`].
pub const MAX_DILATION_ITERATIONS: usize = 20;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("no ink")]
    NoInk,
    #[error("cannot thin by dilation: current thickness {current:.3} exceeds target {target:.3} by more than {tol:.3}")]
    CannotThin { current: f64, target: f64, tol: f64 },
    #[error("crop box ({x_min},{y_min})-({x_max},{y_max}) is empty or outside a {width}x{height} raster")]
    BadCrop {
        x_min: usize,
        y_min: usize,
        x_max: usize,
        y_max: usize,
        width: usize,
        height: usize,
    },
    #[error("need at least two non-empty groups")]
    TooFewGroups,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("image decode failed: {0}")]
    Decode(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// 8-bit luminance image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, RasterError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        hist
    }
}

/// 1-bit ink mask, row-major, `true` = ink.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryRaster {
    width: usize,
    height: usize,
    ink: Vec<bool>,
}

impl BinaryRaster {
    pub fn new(width: usize, height: usize, ink: Vec<bool>) -> Result<Self, RasterError> {
        check_dims(width, height, ink.len())?;
        Ok(Self { width, height, ink })
    }

    /// All-background raster.
    pub fn blank(width: usize, height: usize) -> Result<Self, RasterError> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ink(&self) -> &[bool] {
        &self.ink
    }

    pub fn len(&self) -> usize {
        self.ink.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ink.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.ink[y * self.width + x]
    }

    /// Out-of-frame coordinates read as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.ink[y as usize * self.width + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.ink[y * self.width + x] = value;
    }

    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&p| p).count()
    }

    pub fn has_ink(&self) -> bool {
        self.ink.iter().any(|&p| p)
    }

    /// Coordinates of ink pixels in raster (row-major) order.
    pub fn ink_points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.ink
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Ink as 0, background as 255.
    pub fn to_gray(&self) -> GrayRaster {
        GrayRaster {
            width: self.width,
            height: self.height,
            pixels: self.ink.iter().map(|&p| if p { 0 } else { 255 }).collect(),
        }
    }

    pub fn full_frame(&self) -> BoundingBox {
        BoundingBox {
            x_min: 0,
            y_min: 0,
            x_max: self.width - 1,
            y_max: self.height - 1,
        }
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyDimensions { width, height });
    }
    if len != width * height {
        return Err(RasterError::BufferSize {
            expected: width * height,
            actual: len,
        });
    }
    Ok(())
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max && self.x_max < width && self.y_max < height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Otsu,
    Fixed(u8),
}

/// Fallback threshold for single-intensity images under Otsu.
pub const FALLBACK_THRESHOLD: u8 = 128;

/// Otsu's threshold over the 256-bin histogram. A pixel is ink iff its
/// luminance is strictly below the returned value. `None` when no threshold
/// separates two non-empty classes.
pub fn otsu_threshold(img: &GrayRaster) -> Option<u8> {
    let hist = img.histogram();
    let total = img.pixels.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();

    let mut best: Option<(u8, f64)> = None;
    let mut count_below = 0.0;
    let mut sum_below = 0.0;
    // threshold t puts values 0..t in the ink class
    for t in 1..=255usize {
        count_below += hist[t - 1] as f64;
        sum_below += (t - 1) as f64 * hist[t - 1] as f64;
        let count_above = total - count_below;
        if count_below == 0.0 || count_above == 0.0 {
            continue;
        }
        let mean_below = sum_below / count_below;
        let mean_above = (sum_all - sum_below) / count_above;
        let diff = mean_below - mean_above;
        let between = count_below * count_above * diff * diff;
        match best {
            Some((_, b)) if between <= b => {}
            _ => best = Some((t as u8, between)),
        }
    }
    best.map(|(t, _)| t)
}

/// Luminance below the threshold becomes ink.
pub fn binarize(img: &GrayRaster, mode: ThresholdMode) -> BinaryRaster {
    let threshold = match mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Otsu => otsu_threshold(img).unwrap_or(FALLBACK_THRESHOLD),
    };
    BinaryRaster {
        width: img.width,
        height: img.height,
        ink: img.pixels.iter().map(|&p| p < threshold).collect(),
    }
}

/// Removes 8-connected ink components smaller than `min_area` pixels.
/// Components at or above the limit are kept bit-exactly.
pub fn despeckle(img: &BinaryRaster, min_area: usize) -> BinaryRaster {
    let labels = label_components(img, Connectivity::Eight);
    let areas = labels.areas();
    let ink = labels
        .labels()
        .iter()
        .map(|&l| l != 0 && areas[l as usize - 1] >= min_area)
        .collect();
    BinaryRaster {
        width: img.width,
        height: img.height,
        ink,
    }
}

/// One pass of 3x3 square dilation.
pub fn dilate(img: &BinaryRaster) -> BinaryRaster {
    let (w, h) = (img.width, img.height);
    // separable: horizontal then vertical max
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &img.ink[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            horiz[y * w + x] = row[lo..=hi].iter().any(|&p| p);
        }
    }
    let mut ink = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(1);
        let hi = (y + 1).min(h - 1);
        for x in 0..w {
            ink[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
        }
    }
    BinaryRaster {
        width: w,
        height: h,
        ink,
    }
}

/// Outcome of [`dilate_to_thickness`].
#[derive(Clone, Debug)]
pub struct Dilated {
    pub raster: BinaryRaster,
    pub iterations: usize,
    /// `None` for blank input.
    pub thickness: Option<f64>,
}

/// Dilates with a 3x3 square until the estimated stroke width is within
/// `tol` of `target`, the estimate overshoots the target, or
/// [`MAX_DILATION_ITERATIONS`] passes have run. Blank input comes back blank.
pub fn dilate_to_thickness(
    img: &BinaryRaster,
    target: f64,
    tol: f64,
) -> Result<Dilated, RasterError> {
    if !img.has_ink() {
        return Ok(Dilated {
            raster: img.clone(),
            iterations: 0,
            thickness: None,
        });
    }
    let mut current = estimate_line_thickness(img)?;
    if target < current - tol {
        return Err(RasterError::CannotThin {
            current,
            target,
            tol,
        });
    }
    let mut raster = img.clone();
    let mut iterations = 0;
    while (current - target).abs() > tol
        && current <= target
        && iterations < MAX_DILATION_ITERATIONS
    {
        raster = dilate(&raster);
        iterations += 1;
        current = estimate_line_thickness(&raster)?;
    }
    Ok(Dilated {
        raster,
        iterations,
        thickness: Some(current),
    })
}

/// Nearest-neighbour resample of `crop` to `out_width` x `out_height`.
pub fn crop_and_resize(
    img: &BinaryRaster,
    crop: BoundingBox,
    out_width: usize,
    out_height: usize,
) -> Result<BinaryRaster, RasterError> {
    if !crop.fits_within(img.width, img.height) {
        return Err(RasterError::BadCrop {
            x_min: crop.x_min,
            y_min: crop.y_min,
            x_max: crop.x_max,
            y_max: crop.y_max,
            width: img.width,
            height: img.height,
        });
    }
    if out_width == 0 || out_height == 0 {
        return Err(RasterError::EmptyDimensions {
            width: out_width,
            height: out_height,
        });
    }
    let (cw, ch) = (crop.width(), crop.height());
    // source index of the output pixel centre: floor((2o + 1) * c / (2 * out))
    let xs: Vec<usize> = (0..out_width)
        .map(|ox| crop.x_min + ((2 * ox + 1) * cw) / (2 * out_width))
        .collect();
    let mut ink = Vec::with_capacity(out_width * out_height);
    for oy in 0..out_height {
        let sy = crop.y_min + ((2 * oy + 1) * ch) / (2 * out_height);
        let row = &img.ink[sy * img.width..(sy + 1) * img.width];
        ink.extend(xs.iter().map(|&sx| row[sx]));
    }
    BinaryRaster::new(out_width, out_height, ink)
}

/// Crop and resize to the canonical 400x400 canvas.
pub fn to_canvas(img: &BinaryRaster, crop: BoundingBox) -> Result<BinaryRaster, RasterError> {
    crop_and_resize(img, crop, CANVAS_SIZE, CANVAS_SIZE)
}

/// Per-image stroke thickness followed by a Kruskal-Wallis test across groups.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ThicknessCheck {
    pub thickness: Vec<Vec<f64>>,
    pub test: KwResult,
}

pub fn check_thickness_equality(groups: &[Vec<BinaryRaster>]) -> Result<ThicknessCheck, RasterError> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(RasterError::TooFewGroups);
    }
    let thickness = groups
        .iter()
        .map(|g| g.iter().map(estimate_line_thickness).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let test = kruskal_wallis(&thickness)?;
    Ok(ThicknessCheck { thickness, test })
}



#[cfg(test)]
pub(crate) use tests::bfs_components as flood_fill_components;
