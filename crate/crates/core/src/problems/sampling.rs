//! Uniform sampling on spheres and spherical caps.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::numerics::Vector;

fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// A uniformly distributed unit vector in `d` dimensions.
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    assert!(d >= 1, "sphere dimension must be positive");
    loop {
        let g = gaussian_vector(d, rng);
        let n = g.norm();
        if n > 1e-300 {
            return g / n;
        }
    }
}

/// A unit vector drawn uniformly from the cap of the given half-angle
/// around `center`.
///
/// The polar angle has density proportional to `sin^{d-2} θ` on
/// `[0, half_angle]` and is drawn by inverting its distribution function;
/// it is combined with a uniform direction on the orthogonal sphere, and the
/// result is rotated from `e_d` onto `center` by a Householder reflection.
pub fn sample_spherical_cap<R: Rng + ?Sized>(center: &Vector, half_angle: f64, rng: &mut R) -> Result<Vector> {
    let d = center.len();
    if d == 0 {
        return Err(invalid("cap center must be non-empty"));
    }
    if ((center.norm() - 1.0).abs()) > 1e-10 {
        return Err(invalid("cap center must be a unit vector"));
    }
    if !(0.0..=std::f64::consts::PI).contains(&half_angle) {
        return Err(invalid(format!("cap half-angle {half_angle} outside [0, π]")));
    }
    if half_angle == 0.0 {
        return Ok(center.clone());
    }

    // The direction is drawn before the angle so that one stream maps to
    // the same direction for every half-angle.
    let w = (d > 1).then(|| sample_unit_sphere(d - 1, rng));
    let theta = sample_polar_angle(d, half_angle, rng);
    let d_last = d - 1;
    // Point in the frame where the cap is centered on e_d.
    let mut local = Vector::zeros(d);
    local[d_last] = theta.cos();
    if let Some(w) = w {
        for i in 0..d_last {
            local[i] = theta.sin() * w[i];
        }
    }
    Ok(reflect_onto(center, &local))
}

fn sample_polar_angle<R: Rng + ?Sized>(d: usize, half_angle: f64, rng: &mut R) -> f64 {
    if d == 1 {
        // The 0-sphere is {±1}: the far point belongs to the cap only at π.
        return if half_angle >= std::f64::consts::PI && rng.random::<bool>() {
            std::f64::consts::PI
        } else {
            0.0
        };
    }
    // Inverse CDF: θ solves F(θ) = U·F(half_angle), F(θ) = ∫₀^θ sin^{d−2}.
    // One uniform draw per sample keeps θ monotone in the half-angle.
    let power = d as u32 - 2;
    let target = rng.random::<f64>() * sin_power_integral(power, half_angle);
    let (mut lo, mut hi) = (0.0, half_angle);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sin_power_integral(power, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `∫₀^θ sinⁿ s ds` by the reduction
/// `Iₙ = −cos θ sin^{n−1} θ / n + (n−1)/n · I_{n−2}`.
fn sin_power_integral(n: u32, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut acc = if n.is_multiple_of(2) { theta } else { 1.0 - c };
    let mut k = if n.is_multiple_of(2) { 2 } else { 3 };
    while k <= n {
        let kf = k as f64;
        acc = -c * s.powi(k as i32 - 1) / kf + (kf - 1.0) / kf * acc;
        k += 2;
    }
    acc
}

/// Applies the Householder reflection that maps `e_d` to `center`.
fn reflect_onto(center: &Vector, x: &Vector) -> Vector {
    let d = center.len();
    let mut u = -center.clone();
    u[d - 1] += 1.0;
    let nu2 = u.norm_squared();
    if nu2 < 1e-30 {
        return x.clone();
    }
    x - &u * (2.0 * u.dot(x) / nu2)
}
