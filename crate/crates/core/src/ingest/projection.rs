//! Geo → pitch projection through a planar homography fitted to the four
//! calibrated pitch corners.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::PitchDims;

/// Meters per degree of latitude (mean value, only used for conditioning).
const METERS_PER_DEG: f64 = 111_320.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Pitch corners in the order A = (0, 0), B = (L, 0), C = (L, W), D = (0, W).
#[derive(Debug, Clone)]
pub struct PitchCalibration {
    corners: [GeoPoint; 4],
    dims: PitchDims,
    origin: GeoPoint,
    lon_scale: f64,
    to_pitch: Matrix3<f64>,
    to_local: Matrix3<f64>,
}

impl PitchCalibration {
    pub fn new(corners: [GeoPoint; 4], dims: PitchDims) -> Result<Self, IngestError> {
        if !dims.is_valid() {
            return Err(IngestError::InvalidCalibration(format!(
                "pitch dims must satisfy L > W > 0, got {}x{}",
                dims.length, dims.width
            )));
        }
        if corners.iter().any(|c| !c.lat.is_finite() || !c.lon.is_finite()) {
            return Err(IngestError::InvalidCalibration("non-finite corner".into()));
        }
        let origin = corners[0];
        let lon_scale = origin.lat.to_radians().cos();
        let local = |g: &GeoPoint| {
            [
                (g.lon - origin.lon) * lon_scale * METERS_PER_DEG,
                (g.lat - origin.lat) * METERS_PER_DEG,
            ]
        };
        let src: Vec<[f64; 2]> = corners.iter().map(local).collect();
        if !is_convex_quad(&src) {
            return Err(IngestError::InvalidCalibration(
                "corners do not form a convex quadrilateral".into(),
            ));
        }
        let dst = [
            [0.0, 0.0],
            [dims.length, 0.0],
            [dims.length, dims.width],
            [0.0, dims.width],
        ];
        let to_pitch = fit_homography(&src, &dst)?;
        let to_local = to_pitch
            .try_inverse()
            .ok_or_else(|| IngestError::InvalidCalibration("singular homography".into()))?;
        Ok(Self {
            corners,
            dims,
            origin,
            lon_scale,
            to_pitch,
            to_local,
        })
    }

    pub fn dims(&self) -> PitchDims {
        self.dims
    }

    pub fn corners(&self) -> &[GeoPoint; 4] {
        &self.corners
    }

    fn to_local(&self, g: GeoPoint) -> [f64; 2] {
        [
            (g.lon - self.origin.lon) * self.lon_scale * METERS_PER_DEG,
            (g.lat - self.origin.lat) * METERS_PER_DEG,
        ]
    }

    fn from_local(&self, p: [f64; 2]) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + p[1] / METERS_PER_DEG,
            lon: self.origin.lon + p[0] / (self.lon_scale * METERS_PER_DEG),
        }
    }

    pub fn project(&self, g: GeoPoint) -> [f64; 2] {
        apply(&self.to_pitch, self.to_local(g))
    }

    pub fn unproject(&self, xy: [f64; 2]) -> GeoPoint {
        self.from_local(apply(&self.to_local, xy))
    }

    /// Intersection of the corner diagonals; maps to the pitch center.
    pub fn geo_center(&self) -> GeoPoint {
        let p: Vec<[f64; 2]> = self.corners.iter().map(|c| self.to_local(*c)).collect();
        // A + s (C - A) = B + u (D - B)
        let d1 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
        let d2 = [p[3][0] - p[1][0], p[3][1] - p[1][1]];
        let r = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
        let denom = d1[0] * (-d2[1]) - d1[1] * (-d2[0]);
        let s = (r[0] * (-d2[1]) - r[1] * (-d2[0])) / denom;
        self.from_local([p[0][0] + s * d1[0], p[0][1] + s * d1[1]])
    }
}

fn apply(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

fn is_convex_quad(p: &[[f64; 2]]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let a = p[i];
        let b = p[(i + 1) % 4];
        let c = p[(i + 2) % 4];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross.abs() < 1e-9 {
            return false;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

fn fit_homography(src: &[[f64; 2]], dst: &[[f64; 2]; 4]) -> Result<Matrix3<f64>, IngestError> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [u, v] = src[i];
        let [x, y] = dst[i];
        let r = 2 * i;
        a[(r, 0)] = u;
        a[(r, 1)] = v;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -x * u;
        a[(r, 7)] = -x * v;
        b[r] = x;
        a[(r + 1, 3)] = u;
        a[(r + 1, 4)] = v;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -y * u;
        a[(r + 1, 7)] = -y * v;
        b[r + 1] = y;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| IngestError::InvalidCalibration("degenerate corner configuration".into()))?;
    Ok(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}
