//! Images, optical-flow fields and the backend contract that supplies them.

mod features;
mod flo;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geom::{PixelPoint, Pose};

pub use features::{shi_tomasi, ShiTomasiParams};
pub use flo::{parse_flo, read_flo, write_flo, FLO_MAGIC, MAX_FLO_DIMENSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("no pixel passes the corner quality threshold")]
    NoFeatures,
    #[error("image is {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("point ({u:.2}, {v:.2}) is outside the flow field")]
    OutOfBounds { u: f64, v: f64 },
    #[error("not a .flo file (bad magic)")]
    BadMagic,
    #[error(".flo file is truncated")]
    TruncatedFile,
    #[error(".flo dimensions {width}x{height} exceed the supported maximum")]
    DimensionOverflow { width: i64, height: i64 },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("flow backend does not support this query: {0}")]
    Unsupported(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, FlowError> {
        if data.len() != width * height {
            return Err(FlowError::DimensionMismatch { expected: (width, height), got: (data.len(), 1) });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
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

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    /// True when every pixel is exactly zero.
    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Quantize to 8-bit, clamping to `[0, 1]`.
    pub fn to_luma8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_luma8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, FlowError> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self, FlowError> {
        if data.len() != width * height {
            return Err(FlowError::DimensionMismatch { expected: (width, height), got: (data.len(), 1) });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn to_gray(&self) -> GrayImage {
        let data = self.data.iter().map(|p| p[0] * LUMA_WEIGHTS[0] + p[1] * LUMA_WEIGHTS[1] + p[2] * LUMA_WEIGHTS[2]).collect();
        GrayImage { width: self.width, height: self.height, data }
    }
}

/// Per-pixel displacement field with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFlowField {
    width: usize,
    height: usize,
    vectors: Vec<[f32; 2]>,
    valid: Vec<bool>,
}

impl DenseFlowField {
    pub fn new(width: usize, height: usize, vectors: Vec<[f32; 2]>, valid: Vec<bool>) -> Result<Self, FlowError> {
        if vectors.len() != width * height || valid.len() != width * height {
            return Err(FlowError::DimensionMismatch { expected: (width, height), got: (vectors.len(), valid.len()) });
        }
        Ok(Self { width, height, vectors, valid })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 2]) -> Self {
        let vectors: Vec<_> = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        let valid = vec![true; vectors.len()];
        Self { width, height, vectors, valid }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<[f32; 2]> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.vectors[i])
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }
}

/// Flow at a sparse set of points in image `a`: `points[i] + vectors[i]` is
/// the matching location in image `b`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFlow {
    pub points: Vec<PixelPoint>,
    pub vectors: Vec<Vector2<f64>>,
    /// Ground-truth inlier labels when the backend knows them; all `true`
    /// otherwise.
    pub inliers: Vec<bool>,
    /// Index of each entry in the query list.
    pub source: Vec<usize>,
    /// Query indices with no usable flow (occluded, out of frame, invalid).
    pub dropped: Vec<usize>,
}

impl SparseFlow {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn target(&self, i: usize) -> PixelPoint {
        PixelPoint::new(self.points[i].u + self.vectors[i].x, self.points[i].v + self.vectors[i].y)
    }

    pub fn targets(&self) -> Vec<PixelPoint> {
        (0..self.len()).map(|i| self.target(i)).collect()
    }

    /// Keep the entries whose query index is in `wanted` (sorted or not),
    /// preserving order.
    pub fn restrict_to_sources(&self, wanted: &[usize]) -> SparseFlow {
        let mut out = SparseFlow::default();
        for i in 0..self.len() {
            if wanted.contains(&self.source[i]) {
                out.points.push(self.points[i]);
                out.vectors.push(self.vectors[i]);
                out.inliers.push(self.inliers[i]);
                out.source.push(self.source[i]);
            }
        }
        out
    }
}

/// Which image in the verification pipeline a view is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewRole {
    /// The real sensor image, whose pose is unknown to the monitor.
    Sensor,
    Estimate,
    Test,
    StereoRight,
}

impl ViewRole {
    pub fn code(self) -> u64 {
        match self {
            ViewRole::Sensor => 0,
            ViewRole::Estimate => 1,
            ViewRole::Test => 2,
            ViewRole::StereoRight => 3,
        }
    }
}

/// An image together with what the pipeline knows about it.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub role: ViewRole,
    /// Pose the image was rendered at; `None` for the sensor image.
    pub pose: Option<Pose>,
    pub image: &'a GrayImage,
}

/// Source of optical flow between two views.
pub trait FlowBackend: Sync {
    fn dense_flow(&self, _from: &View, _to: &View) -> Result<DenseFlowField, FlowError> {
        Err(FlowError::Unsupported("dense flow".into()))
    }

    fn sparse_flow(&self, from: &View, to: &View, points: &[PixelPoint]) -> Result<SparseFlow, FlowError> {
        let dense = self.dense_flow(from, to)?;
        sample_sparse(&dense, points)
    }
}

/// Bilinear interpolation of a dense field. Points whose interpolation
/// stencil touches an invalid pixel are dropped.
pub fn sample_sparse(dense: &DenseFlowField, points: &[PixelPoint]) -> Result<SparseFlow, FlowError> {
    let (w, h) = (dense.width as f64, dense.height as f64);
    let mut out = SparseFlow::default();
    for (idx, p) in points.iter().enumerate() {
        if !(p.u >= 0.0 && p.v >= 0.0 && p.u <= w - 1.0 && p.v <= h - 1.0) {
            return Err(FlowError::OutOfBounds { u: p.u, v: p.v });
        }
        let (x0, y0) = (p.u.floor() as usize, p.v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(dense.width - 1), (y0 + 1).min(dense.height - 1));
        let (fx, fy) = (p.u - x0 as f64, p.v - y0 as f64);
        let taps = [(x0, y0, (1.0 - fx) * (1.0 - fy)), (x1, y0, fx * (1.0 - fy)), (x0, y1, (1.0 - fx) * fy), (x1, y1, fx * fy)];
        let mut acc = Vector2::zeros();
        let mut ok = true;
        for (x, y, wgt) in taps {
            if wgt == 0.0 {
                continue;
            }
            match dense.get(x, y) {
                Some(v) => acc += Vector2::new(v[0] as f64, v[1] as f64) * wgt,
                None => ok = false,
            }
        }
        if ok {
            out.points.push(*p);
            out.vectors.push(acc);
            out.inliers.push(true);
            out.source.push(idx);
        } else {
            out.dropped.push(idx);
        }
    }
    Ok(out)
}
