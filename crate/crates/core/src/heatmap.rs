//! Gaussian landmark heatmaps: rendering targets from points and recovering
//! sub-pixel points from (possibly noisy) predicted maps.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::model::{LandmarkSource, Point2};

/// Decode window used throughout the pipeline.
pub const DEFAULT_WINDOW: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    values: Array2<f64>,
}

impl Heatmap {
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteHeatmap);
        }
        Ok(Self { values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            values: Array2::zeros((height, width)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[[y, x]]
    }

    /// Mirror along x.
    pub fn hflip(&self) -> Heatmap {
        Heatmap {
            values: self.values.slice(s![.., ..;-1]).to_owned(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Heatmap> {
        Heatmap::from_array(self.values.mapv(f))
    }
}

/// Renders `exp(-((x-x0)^2 / 2sx^2 + (y-y0)^2 / 2sy^2))` on an `height x width`
/// grid. The target may lie outside the grid.
pub fn encode(
    point: Point2,
    height: usize,
    width: usize,
    sigma_x: f64,
    sigma_y: f64,
) -> Result<Heatmap> {
    for s in [sigma_x, sigma_y] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidSigma(s));
        }
    }
    if !point.is_finite() {
        return Err(Error::NonFinitePoint(format!("({}, {})", point.x, point.y)));
    }
    // the Gaussian is separable; evaluate each axis once
    let gx: Vec<f64> = (0..width)
        .map(|x| {
            let d = x as f64 - point.x;
            d * d / (2.0 * sigma_x * sigma_x)
        })
        .collect();
    let gy: Vec<f64> = (0..height)
        .map(|y| {
            let d = y as f64 - point.y;
            d * d / (2.0 * sigma_y * sigma_y)
        })
        .collect();
    let values = Array2::from_shape_fn((height, width), |(y, x)| (-(gx[x] + gy[y])).exp());
    Ok(Heatmap { values })
}

/// Windowed center of mass around the global maximum.
///
/// The argmax takes the first maximum in row-major order. The `window x window`
/// neighbourhood is clipped at the borders and negative values carry no weight.
pub fn decode(hm: &Heatmap, window: usize) -> Result<Point2> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidWindow(window));
    }
    let (height, width) = hm.values.dim();
    if height == 0 || width == 0 {
        return Err(Error::EmptyHeatmap);
    }
    let mut best = (0usize, 0usize);
    let mut best_value = f64::NEG_INFINITY;
    for ((y, x), &v) in hm.values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteHeatmap);
        }
        if v > best_value {
            best_value = v;
            best = (y, x);
        }
    }
    let half = window / 2;
    let (cy, cx) = best;
    let (y0, y1) = (cy.saturating_sub(half), (cy + half).min(height - 1));
    let (x0, x1) = (cx.saturating_sub(half), (cx + half).min(width - 1));

    let (mut mass, mut mx, mut my) = (0.0, 0.0, 0.0);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let w = hm.values[[y, x]].max(0.0);
            mass += w;
            mx += w * x as f64;
            my += w * y as f64;
        }
    }
    if mass <= 0.0 {
        return Err(Error::EmptyHeatmap);
    }
    Ok(Point2::new(mx / mass, my / mass))
}

/// Multi-channel heatmaps sharing one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    height: usize,
    width: usize,
    names: Vec<String>,
    maps: Vec<Heatmap>,
}

impl HeatmapStack {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            names: Vec::new(),
            maps: Vec::new(),
        }
    }

    pub fn new(height: usize, width: usize, channels: Vec<(String, Heatmap)>) -> Result<Self> {
        let mut stack = Self::empty(height, width);
        for (name, map) in channels {
            stack.push(name, map)?;
        }
        Ok(stack)
    }

    pub fn push(&mut self, name: String, map: Heatmap) -> Result<()> {
        if map.height() != self.height || map.width() != self.width {
            return Err(Error::FormatMismatch(format!(
                "channel {name} is {}x{}, stack is {}x{}",
                map.height(),
                map.width(),
                self.height,
                self.width
            )));
        }
        if self.names.contains(&name) {
            return Err(Error::FormatMismatch(format!("duplicate channel {name}")));
        }
        self.names.push(name);
        self.maps.push(map);
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn maps(&self) -> &[Heatmap] {
        &self.maps
    }

    pub fn channel(&self, name: &str) -> Option<&Heatmap> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.maps[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Heatmap)> {
        self.names.iter().map(String::as_str).zip(self.maps.iter())
    }

    /// Decodes every channel independently; failures stay per channel.
    pub fn decode_all(&self, window: usize) -> Vec<(String, Result<Point2>)> {
        self.iter()
            .map(|(n, hm)| (n.to_string(), decode(hm, window)))
            .collect()
    }
}

/// One isotropic Gaussian channel per name, in the given order.
pub fn encode_stack<L: LandmarkSource + ?Sized>(
    landmarks: &L,
    names: &[String],
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<HeatmapStack> {
    let mut stack = HeatmapStack::empty(height, width);
    for name in names {
        let p = landmarks.require_landmark(name)?;
        stack.push(name.clone(), encode(p, height, width, sigma, sigma)?)?;
    }
    Ok(stack)
}
