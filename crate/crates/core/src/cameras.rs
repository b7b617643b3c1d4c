//! Default camera rig: views spread over a sphere around the cloud.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::model::{PointCloud, View};

/// Camera distance from the centroid in bounding-sphere radii.
pub const RADIUS_FACTOR: f64 = 2.2;
/// Focal length in units of image width.
pub const FOCAL_FACTOR: f64 = 0.8;

/// Unit directions on a Fibonacci sphere. The first is `+z`.
pub fn fibonacci_directions(k: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let z = if k == 1 {
                1.0
            } else {
                1.0 - 2.0 * i as f64 / (k - 1) as f64
            };
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Camera at `eye` looking at `target`. World `+z` is the up hint unless the
/// viewing direction is parallel to it, then `+x`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, fx: f64, fy: f64, width: u32, height: u32) -> View {
    let forward = (target - eye).normalize();
    let mut up = Vector3::z();
    if forward.cross(&up).norm() < 1e-6 {
        up = Vector3::x();
    }
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -(r * eye);
    let mut extrinsic = Matrix4::identity();
    extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    extrinsic.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    View {
        fx,
        fy,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        extrinsic,
        width,
        height,
    }
}

/// `k` cameras on a sphere of 2.2 bounding-sphere radii around the centroid,
/// all looking at the centroid, with `fx = fy = 0.8 * width`.
pub fn make_default_views(cloud: &PointCloud, k: usize, width: u32, height: u32) -> Vec<View> {
    let centroid = cloud.centroid();
    let radius = cloud
        .positions()
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0, f64::max);
    let distance = RADIUS_FACTOR * if radius > 0.0 { radius } else { 1.0 };
    let f = FOCAL_FACTOR * width as f64;
    fibonacci_directions(k)
        .into_iter()
        .map(|d| look_at(centroid + distance * d, centroid, f, f, width, height))
        .collect()
}
