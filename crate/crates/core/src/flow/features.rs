use serde::{Deserialize, Serialize};

use super::{FlowError, GrayImage};
use crate::geom::PixelPoint;

/// Smallest image side accepted by the detector.
const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiTomasiParams {
    pub max_features: usize,
    /// Fraction of the strongest corner response a corner must reach.
    pub quality_level: f64,
    pub min_distance_px: f64,
}

impl Default for ShiTomasiParams {
    fn default() -> Self {
        Self { max_features: 500, quality_level: 0.01, min_distance_px: 8.0 }
    }
}

/// Minimum eigenvalue of the 3×3-summed Sobel structure tensor per pixel.
/// Border pixels (within 2 px) score zero.
fn corner_response(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let px = |x: usize, y: usize| img.get(x, y) as f64;
    let mut gxx = vec![0.0; w * h];
    let mut gxy = vec![0.0; w * h];
    let mut gyy = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)) - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)) - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            let i = y * w + x;
            gxx[i] = gx * gx;
            gxy[i] = gx * gy;
            gyy[i] = gy * gy;
        }
    }
    let mut score = vec![0.0; w * h];
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for yy in y - 1..=y + 1 {
                for xx in x - 1..=x + 1 {
                    let i = yy * w + xx;
                    a += gxx[i];
                    b += gxy[i];
                    c += gyy[i];
                }
            }
            let half_diff = 0.5 * (a - c);
            let lambda_min = 0.5 * (a + c) - (half_diff * half_diff + b * b).sqrt();
            score[y * w + x] = lambda_min.max(0.0);
        }
    }
    score
}

/// Shi-Tomasi "good features to track", strongest first.
pub fn shi_tomasi(img: &GrayImage, params: &ShiTomasiParams) -> Result<Vec<PixelPoint>, FlowError> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(FlowError::ImageTooSmall { width: w, height: h, min: MIN_SIDE });
    }
    let score = corner_response(img);
    let best = score.iter().copied().fold(0.0, f64::max);
    if best <= 1e-12 {
        return Err(FlowError::NoFeatures);
    }
    let floor = params.quality_level * best;

    let mut candidates: Vec<usize> = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let s = score[i];
            if s <= 0.0 || s < floor {
                continue;
            }
            let is_max = (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| score[yy * w + xx] <= s));
            if is_max {
                candidates.push(i);
            }
        }
    }
    if candidates.is_empty() {
        return Err(FlowError::NoFeatures);
    }
    candidates.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));

    // Greedy suppression on a grid of min_distance-sized cells.
    let d = params.min_distance_px.max(0.0);
    let cell = d.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<PixelPoint>> = vec![Vec::new(); gw * gh];
    let mut out = Vec::new();
    for i in candidates {
        if out.len() >= params.max_features {
            break;
        }
        let p = PixelPoint::new((i % w) as f64, (i / w) as f64);
        let (cx, cy) = ((p.u / cell) as usize, (p.v / cell) as usize);
        let crowded = (cy.saturating_sub(1)..=(cy + 1).min(gh - 1))
            .any(|gy| (cx.saturating_sub(1)..=(cx + 1).min(gw - 1)).any(|gx| grid[gy * gw + gx].iter().any(|q| q.distance(&p) < d)));
        if !crowded {
            grid[cy * gw + cx].push(p);
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_features() {
        let img = GrayImage::filled(32, 32, 0.5);
        assert_eq!(shi_tomasi(&img, &ShiTomasiParams::default()).unwrap_err(), FlowError::NoFeatures);
    }

    #[test]
    fn tiny_image_rejected() {
        let img = GrayImage::filled(8, 32, 0.5);
        assert!(matches!(shi_tomasi(&img, &ShiTomasiParams::default()), Err(FlowError::ImageTooSmall { .. })));
    }

    #[test]
    fn square_has_four_corners() {
        let img = GrayImage::from_fn(64, 64, |x, y| if (20..44).contains(&x) && (20..44).contains(&y) { 1.0 } else { 0.0 });
        let pts = shi_tomasi(&img, &ShiTomasiParams::default()).unwrap();
        assert_eq!(pts.len(), 4, "{pts:?}");
        // corners sit between pixels 19|20 and 43|44
        for p in &pts {
            let near = |c: f64| (c - 19.5).abs() <= 1.0 || (c - 43.5).abs() <= 1.0;
            assert!(near(p.u) && near(p.v), "{p:?}");
        }
    }

    #[test]
    fn checkerboard_corners() {
        let sq = 10;
        let img = GrayImage::from_fn(80, 80, |x, y| if ((x / sq) + (y / sq)) % 2 == 0 { 1.0 } else { 0.0 });
        let pts = shi_tomasi(&img, &ShiTomasiParams::default()).unwrap();
        assert!(pts.len() >= 36);
        for p in &pts {
            // analytic corners lie at pixel boundaries k·sq - 0.5
            let off = |c: f64| ((c + 0.5) / sq as f64 - ((c + 0.5) / sq as f64).round()).abs() * sq as f64;
            assert!(off(p.u) <= 1.0 && off(p.v) <= 1.0, "{p:?}");
        }
    }

    #[test]
    fn contract_holds() {
        let img = GrayImage::from_fn(96, 96, |x, y| (((x * 7919 + y * 104729) % 251) as f32 / 251.0).powi(2));
        let params = ShiTomasiParams { max_features: 40, quality_level: 0.05, min_distance_px: 6.0 };
        let pts = shi_tomasi(&img, &params).unwrap();
        assert!(pts.len() <= 40);
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                assert!(a.distance(b) >= 6.0);
            }
        }
        assert_eq!(pts, shi_tomasi(&img, &params).unwrap());
    }

    #[test]
    fn translation_equivariance() {
        let pattern = |x: i64, y: i64| -> f32 {
            if (10..70).contains(&x) && (10..70).contains(&y) {
                (((x * 13 + y * 7) % 17) as f32 / 17.0 + if (x / 9 + y / 7) % 2 == 0 { 0.5 } else { 0.0 }).min(1.0)
            } else {
                0.0
            }
        };
        let (dx, dy) = (5i64, 3i64);
        let a = GrayImage::from_fn(100, 100, |x, y| pattern(x as i64, y as i64));
        let b = GrayImage::from_fn(100, 100, |x, y| pattern(x as i64 - dx, y as i64 - dy));
        let params = ShiTomasiParams::default();
        let pa = shi_tomasi(&a, &params).unwrap();
        let pb = shi_tomasi(&b, &params).unwrap();
        assert_eq!(pa.len(), pb.len());
        for (p, q) in pa.iter().zip(&pb) {
            assert_eq!((p.u + dx as f64, p.v + dy as f64), (q.u, q.v));
        }
    }
}
