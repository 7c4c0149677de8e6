//! Quaternion helpers and uniform surface sampling of analytic shapes.

use rand::Rng;

pub type Vec3 = [f64; 3];
/// Unit quaternion `(w, x, y, z)`.
pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_normalize(q: Quat) -> Quat {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-12 {
        return IDENTITY;
    }
    // Keep w >= 0 so equal rotations share one representation.
    let s = if q[0] < 0.0 { -1.0 / n } else { 1.0 / n };
    [q[0] * s, q[1] * s, q[2] * s, q[3] * s]
}

pub fn quat_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let (s, c) = (angle / 2.0).sin_cos();
    [c, axis[0] * s, axis[1] * s, axis[2] * s]
}

pub fn rotate(q: Quat, v: Vec3) -> Vec3 {
    let [w, x, y, z] = q;
    // v + 2w (u × v) + 2 u × (u × v), u = (x, y, z)
    let uv = [y * v[2] - z * v[1], z * v[0] - x * v[2], x * v[1] - y * v[0]];
    let uuv = [y * uv[2] - z * uv[1], z * uv[0] - x * uv[2], x * uv[1] - y * uv[0]];
    [
        v[0] + 2.0 * (w * uv[0] + uuv[0]),
        v[1] + 2.0 * (w * uv[1] + uuv[1]),
        v[2] + 2.0 * (w * uv[2] + uuv[2]),
    ]
}

/// Angle between the frame's local +z axis and world +z.
pub fn tilt_of(q: Quat) -> f64 {
    rotate(q, [0.0, 0.0, 1.0])[2].clamp(-1.0, 1.0).acos()
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Moves `from` toward `to` by at most `max_step`.
pub fn step_toward(from: Vec3, to: Vec3, max_step: f64) -> Vec3 {
    let d = sub(to, from);
    let n = norm(d);
    if n <= max_step || n == 0.0 {
        d
    } else {
        [d[0] * max_step / n, d[1] * max_step / n, d[2] * max_step / n]
    }
}

/// Points on the side and bottom of a frustum whose base is centered at the
/// origin and axis is +z.
pub fn sample_frustum<R: Rng>(rng: &mut R, n: usize, height: f64, r_top: f64, r_bottom: f64) -> Vec<Vec3> {
    let side = 2.0 * std::f64::consts::PI * 0.5 * (r_top + r_bottom) * height;
    let bottom = std::f64::consts::PI * r_bottom * r_bottom;
    (0..n)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            if rng.random::<f64>() < side / (side + bottom) {
                let u: f64 = rng.random();
                let r = r_bottom + (r_top - r_bottom) * u;
                [r * theta.cos(), r * theta.sin(), u * height]
            } else {
                let r = r_bottom * rng.random::<f64>().sqrt();
                [r * theta.cos(), r * theta.sin(), 0.0]
            }
        })
        .collect()
}

/// Points on the surface of an axis-aligned box centered at the origin.
pub fn sample_box<R: Rng>(rng: &mut R, n: usize, size: Vec3) -> Vec<Vec3> {
    let [a, b, c] = size;
    let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
    let total: f64 = faces.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = 5;
            for (i, f) in faces.iter().enumerate() {
                if pick < *f {
                    face = i;
                    break;
                }
                pick -= f;
            }
            let u = rng.random::<f64>() - 0.5;
            let v = rng.random::<f64>() - 0.5;
            let sign = if face % 2 == 0 { 0.5 } else { -0.5 };
            match face / 2 {
                0 => [sign * a, u * b, v * c],
                1 => [u * a, sign * b, v * c],
                _ => [u * a, v * b, sign * c],
            }
        })
        .collect()
}
