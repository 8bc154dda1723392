//! Geometry between the original slice, the square global frame and the
//! local patches, plus the flip / rotation / jitter augmentations.
//!
//! The global frame is a center crop of side `h` resized to `out x out` with a
//! pure scale mapping (no half-pixel offset): `g = (p - origin) * out / side`.
//! Local frames are integer-origin patches, so `l = p - origin`.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationSet, NamedPoints, Point2, SliceImage};

pub const GLOBAL_FRAME: usize = 256;
pub const PATCH_SIZE: usize = 96;
pub const MAX_JITTER: i64 = 20;
pub const MAX_ROTATION_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn square(x0: usize, y0: usize, side: usize) -> Self {
        Self {
            x0,
            y0,
            width: side,
            height: side,
        }
    }

    pub fn origin(&self) -> Point2 {
        Point2::new(self.x0 as f64, self.y0 as f64)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 as f64
            && p.y >= self.y0 as f64
            && p.x < (self.x0 + self.width) as f64
            && p.y < (self.y0 + self.height) as f64
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.x0 + self.width <= width && self.y0 + self.height <= height
    }
}

/// Center crop along the width; the full height is kept.
pub fn square_crop_rect(height: usize, width: usize) -> Result<CropRect> {
    if height > width {
        return Err(Error::NotLandscape { height, width });
    }
    Ok(CropRect::square((width - height) / 2, 0, height))
}

pub fn to_global(p: Point2, rect: CropRect, out: usize) -> Result<Point2> {
    if !rect.contains(p) {
        return Err(Error::OutOfCrop { x: p.x, y: p.y });
    }
    Ok(to_global_unchecked(p, rect, out))
}

/// Forward mapping without the crop check, for predictions and oracle targets
/// that may sit slightly outside.
pub fn to_global_unchecked(p: Point2, rect: CropRect, out: usize) -> Point2 {
    let scale = out as f64 / rect.width as f64;
    Point2::new(
        (p.x - rect.x0 as f64) * scale,
        (p.y - rect.y0 as f64) * scale,
    )
}

pub fn from_global(p: Point2, rect: CropRect, out: usize) -> Point2 {
    let scale = rect.width as f64 / out as f64;
    Point2::new(p.x * scale + rect.x0 as f64, p.y * scale + rect.y0 as f64)
}

/// `size x size` patch centered on the rounded center, shifted to fit inside
/// the image.
pub fn patch_rect(center: Point2, size: usize, height: usize, width: usize) -> Result<CropRect> {
    if height < size || width < size {
        return Err(Error::PatchTooLarge {
            size,
            width,
            height,
        });
    }
    if !center.is_finite() {
        return Err(Error::NonFinitePoint("patch center".into()));
    }
    let half = (size / 2) as f64;
    let place = |c: f64, extent: usize| -> usize {
        let origin = c.round() - half;
        origin.clamp(0.0, (extent - size) as f64) as usize
    };
    Ok(CropRect::square(
        place(center.x, width),
        place(center.y, height),
        size,
    ))
}

/// A recorded mapping between original-image pixels and one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FrameTransform {
    Global { rect: CropRect, out: usize },
    Local { rect: CropRect },
}

impl FrameTransform {
    pub fn rect(&self) -> CropRect {
        match *self {
            FrameTransform::Global { rect, .. } | FrameTransform::Local { rect } => rect,
        }
    }

    /// Side length of the frame grid.
    pub fn frame_size(&self) -> usize {
        match *self {
            FrameTransform::Global { out, .. } => out,
            FrameTransform::Local { rect } => rect.width,
        }
    }

    pub fn to_frame(&self, p: Point2) -> Point2 {
        match *self {
            FrameTransform::Global { rect, out } => to_global_unchecked(p, rect, out),
            FrameTransform::Local { rect } => {
                Point2::new(p.x - rect.x0 as f64, p.y - rect.y0 as f64)
            }
        }
    }

    pub fn from_frame(&self, p: Point2) -> Point2 {
        match *self {
            FrameTransform::Global { rect, out } => from_global(p, rect, out),
            FrameTransform::Local { rect } => {
                Point2::new(p.x + rect.x0 as f64, p.y + rect.y0 as f64)
            }
        }
    }

    /// The frame-sized image a predictor sees.
    pub fn extract(&self, pixels: &Array2<f32>) -> Array2<f32> {
        match *self {
            FrameTransform::Global { rect, out } => resample_crop(pixels, rect, out),
            FrameTransform::Local { rect } => pixels
                .slice(s![
                    rect.y0..rect.y0 + rect.height,
                    rect.x0..rect.x0 + rect.width
                ])
                .to_owned(),
        }
    }
}

#[derive(Clone, Copy)]
enum Border {
    Zero,
    Clamp,
}

fn bilinear(img: &Array2<f32>, x: f64, y: f64, border: Border) -> f32 {
    let (h, w) = img.dim();
    let (fx, fy) = (x.floor(), y.floor());
    let (ax, ay) = (x - fx, y - fy);
    let read = |xi: f64, yi: f64| -> f64 {
        match border {
            Border::Zero => {
                if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                    0.0
                } else {
                    img[[yi as usize, xi as usize]] as f64
                }
            }
            Border::Clamp => {
                let xi = xi.clamp(0.0, (w - 1) as f64) as usize;
                let yi = yi.clamp(0.0, (h - 1) as f64) as usize;
                img[[yi, xi]] as f64
            }
        }
    };
    let v = read(fx, fy) * (1.0 - ax) * (1.0 - ay)
        + read(fx + 1.0, fy) * ax * (1.0 - ay)
        + read(fx, fy + 1.0) * (1.0 - ax) * ay
        + read(fx + 1.0, fy + 1.0) * ax * ay;
    v as f32
}

/// Bilinear resize of `rect` to `out x out` using the pure scale mapping.
pub fn resample_crop(pixels: &Array2<f32>, rect: CropRect, out: usize) -> Array2<f32> {
    let sx = rect.width as f64 / out as f64;
    let sy = rect.height as f64 / out as f64;
    Array2::from_shape_fn((out, out), |(v, u)| {
        bilinear(
            pixels,
            rect.x0 as f64 + u as f64 * sx,
            rect.y0 as f64 + v as f64 * sy,
            Border::Clamp,
        )
    })
}

/// Independent integer shifts in `[-max_shift, max_shift]` on each axis.
pub fn jitter_center(center: Point2, max_shift: i64, seed: u64) -> Point2 {
    jitter_with(center, max_shift, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn jitter_with<R: Rng + ?Sized>(center: Point2, max_shift: i64, rng: &mut R) -> Point2 {
    if max_shift <= 0 {
        return center;
    }
    let dx = rng.random_range(-max_shift..=max_shift);
    let dy = rng.random_range(-max_shift..=max_shift);
    center.offset(dx as f64, dy as f64)
}

/// Mirror pixels in x and relabel landmarks through the schema's pairing.
pub fn hflip(img: &SliceImage, ann: &AnnotationSet) -> Result<(SliceImage, AnnotationSet)> {
    let w = img.width();
    let pixels = img.pixels().slice(s![.., ..;-1]).to_owned();
    let schema = ann.schema();
    let mut flipped = NamedPoints::new();
    for (name, p) in ann.iter() {
        let target = schema
            .mirror(name)
            .ok_or_else(|| Error::Internal(format!("{name} has no mirror")))?;
        flipped.insert(target.to_string(), Point2::new((w - 1) as f64 - p.x, p.y));
    }
    let ann = AnnotationSet::new(schema.clone(), &flipped, w, img.height())?;
    Ok((img.with_pixels(pixels)?, ann))
}

/// Center of rotation: the middle of the pixel grid.
pub fn image_center(height: usize, width: usize) -> Point2 {
    Point2::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Rotation by `theta_deg` about `center` in the y-down frame; positive angles
/// turn +x toward +y.
pub fn rotate_point(p: Point2, center: Point2, theta_deg: f64) -> Point2 {
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let (dx, dy) = (p.x - center.x, p.y - center.y);
    Point2::new(
        center.x + cos * dx - sin * dy,
        center.y + sin * dx + cos * dy,
    )
}

/// Bilinear rotation about the image center; reads outside the image are 0.
pub fn rotate(
    img: &SliceImage,
    ann: &AnnotationSet,
    theta_deg: f64,
) -> Result<(SliceImage, AnnotationSet)> {
    let (h, w) = (img.height(), img.width());
    let center = image_center(h, w);
    let src = img.pixels();
    let rows: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|v| {
            (0..w).map(move |u| {
                let p = rotate_point(Point2::new(u as f64, v as f64), center, -theta_deg);
                bilinear(src, p.x, p.y, Border::Zero).clamp(0.0, 1.0)
            })
        })
        .collect();
    let pixels = Array2::from_shape_vec((h, w), rows)
        .map_err(|e| Error::Internal(e.to_string()))?;
    let moved: NamedPoints = ann
        .iter()
        .map(|(n, p)| (n.to_string(), rotate_point(p, center, theta_deg)))
        .collect();
    let ann = AnnotationSet::new(ann.schema().clone(), &moved, w, h)?;
    Ok((img.with_pixels(pixels)?, ann))
}

/// One draw of the global-stage augmentations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    pub rotation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationSampler {
    pub flip_probability: f64,
    pub max_rotation_deg: f64,
}

impl Default for AugmentationSampler {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            max_rotation_deg: MAX_ROTATION_DEG,
        }
    }
}

impl AugmentationSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Augmentation {
        let flip = rng.random_bool(self.flip_probability);
        let rotation_deg = if self.max_rotation_deg > 0.0 {
            rng.random_range(-self.max_rotation_deg..=self.max_rotation_deg)
        } else {
            0.0
        };
        Augmentation { flip, rotation_deg }
    }
}

impl Augmentation {
    pub fn apply(&self, img: &SliceImage, ann: &AnnotationSet) -> Result<(SliceImage, AnnotationSet)> {
        let (img, ann) = if self.flip {
            hflip(img, ann)?
        } else {
            (img.clone(), ann.clone())
        };
        if self.rotation_deg == 0.0 {
            Ok((img, ann))
        } else {
            rotate(&img, &ann, self.rotation_deg)
        }
    }
}
