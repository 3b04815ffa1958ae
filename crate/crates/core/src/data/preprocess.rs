//! Geometric and intensity preprocessing.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};

use super::DataError;

/// Background fill when a crop window leaves the source image (air).
pub const OUT_OF_IMAGE_HU: f64 = -1000.0;

/// Fraction of the window side the nodule's larger diameter occupies.
pub const WINDOW_OCCUPANCY: f64 = 0.8;

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Square crop window; the origin may be negative or extend past the image
/// when the window does not fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub x0: isize,
    pub y0: isize,
    pub side: usize,
}

fn round_half_up(v: f64) -> isize {
    (v + 0.5).floor() as isize
}

/// Square window whose side is the larger bbox diameter divided by the
/// occupancy fraction (rounded half up), centered on the bbox and shifted
/// back inside the image where possible.
pub fn square_window(bbox: &BBox, height: usize, width: usize) -> Result<Window, DataError> {
    if bbox.x0 >= bbox.x1 || bbox.y0 >= bbox.y1 {
        return Err(DataError::Validation(format!("empty bbox {:?}", bbox)));
    }
    if bbox.x1 > width || bbox.y1 > height {
        return Err(DataError::Validation(format!(
            "bbox {:?} outside {}x{} image",
            bbox, height, width
        )));
    }
    let longest = bbox.width().max(bbox.height());
    let side = round_half_up(longest as f64 / WINDOW_OCCUPANCY).max(1) as usize;
    let cx = (bbox.x0 + bbox.x1) as f64 / 2.0;
    let cy = (bbox.y0 + bbox.y1) as f64 / 2.0;
    let place = |center: f64, extent: usize| -> isize {
        let ideal = round_half_up(center - side as f64 / 2.0);
        if side <= extent {
            ideal.clamp(0, (extent - side) as isize)
        } else {
            ideal
        }
    };
    Ok(Window {
        x0: place(cx, width),
        y0: place(cy, height),
        side,
    })
}

/// Cut the window out of an `[h, w]` image, filling out-of-image pixels
/// with air.
pub fn crop_square(image: &Tensor<f64>, window: &Window) -> Result<Tensor<f64>, DataError> {
    let shape = image.shape();
    if shape.len() != 2 {
        return Err(DataError::Validation(format!(
            "crop_square expects an [h,w] image, got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[0] as isize, shape[1] as isize);
    let side = window.side;
    let mut out = Tensor::full(&[side, side], OUT_OF_IMAGE_HU);
    for oy in 0..side {
        let sy = window.y0 + oy as isize;
        if sy < 0 || sy >= h {
            continue;
        }
        for ox in 0..side {
            let sx = window.x0 + ox as isize;
            if sx < 0 || sx >= w {
                continue;
            }
            out.data_mut()[oy * side + ox] = image.data()[(sy * w + sx) as usize];
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel-center mapping and edge clamping:
/// output center `(i+0.5, j+0.5)` scales to input coordinates, the four
/// neighbours blend by the fractional offsets.
pub fn bilinear_resize(image: &Tensor<f64>, oh: usize, ow: usize) -> Result<Tensor<f64>, DataError> {
    let shape = image.shape();
    if shape.len() != 2 {
        return Err(DataError::Validation(format!(
            "bilinear_resize expects an [h,w] image, got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let data = image.data();
    let mut out = Tensor::zeros(&[oh, ow]);
    let clamp = |v: isize, hi: usize| (v.max(0) as usize).min(hi - 1);
    for i in 0..oh {
        let sy = (i as f64 + 0.5) * (h as f64 / oh as f64) - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0c = clamp(y0 as isize, h);
        let y1c = clamp(y0 as isize + 1, h);
        for j in 0..ow {
            let sx = (j as f64 + 0.5) * (w as f64 / ow as f64) - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0c = clamp(x0 as isize, w);
            let x1c = clamp(x0 as isize + 1, w);
            let v00 = data[y0c * w + x0c];
            let v01 = data[y0c * w + x1c];
            let v10 = data[y1c * w + x0c];
            let v11 = data[y1c * w + x1c];
            out.data_mut()[i * ow + j] = v00 * (1.0 - fy) * (1.0 - fx)
                + v01 * (1.0 - fy) * fx
                + v10 * fy * (1.0 - fx)
                + v11 * fy * fx;
        }
    }
    Ok(out)
}

/// Scalar mean and population standard deviation of a training split,
/// written alongside its run artifacts and baked into checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityStats {
    pub mean: f64,
    pub std: f64,
}

/// Welford accumulation over every voxel of the given volumes.
pub fn compute_dataset_stats<'a, F: Real + 'a>(
    volumes: impl IntoIterator<Item = &'a Tensor<F>>,
) -> Result<IntensityStats, DataError> {
    let mut count = 0u64;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for vol in volumes {
        for v in vol.data() {
            let x = v.as_f64();
            count += 1;
            let delta = x - mean;
            mean += delta / count as f64;
            m2 += delta * (x - mean);
        }
    }
    if count == 0 {
        return Err(DataError::Validation(
            "cannot compute intensity stats of an empty training set".into(),
        ));
    }
    Ok(IntensityStats {
        mean,
        std: (m2 / count as f64).sqrt(),
    })
}

/// `(x - mean) / std` over every voxel. A degenerate spread means the
/// dataset is constant and cannot be normalised.
pub fn normalize_intensity<F: Real>(
    volume: &Tensor<F>,
    stats: &IntensityStats,
) -> Result<Tensor<F>, DataError> {
    if !(stats.std > 1e-6) {
        return Err(DataError::Validation(format!(
            "intensity std {} too small to normalise by",
            stats.std
        )));
    }
    Ok(volume.map(|v| F::of_f64((v.as_f64() - stats.mean) / stats.std)))
}
