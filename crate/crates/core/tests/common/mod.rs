//! Reference implementations written directly from planar geometry, kept free
//! of any library code so they can serve as oracles.
#![allow(dead_code)]

use apid::dynamics::ArmModel;
use apid::gp::KernelParams;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Positions and masses of every lumped point: each link midpoint, then the
/// payload at the tip.
pub fn lumped_points(arm: &ArmModel, q: &[f64]) -> Vec<(f64, [f64; 2])> {
    let mut pts = Vec::new();
    let (mut x, mut y, mut phi) = (0.0, 0.0, 0.0);
    for (j, &l) in arm.link_lengths.iter().enumerate() {
        phi += q[j];
        let (s, c) = phi.sin_cos();
        pts.push((arm.link_masses[j], [x + 0.5 * l * c, y + 0.5 * l * s]));
        x += l * c;
        y += l * s;
    }
    pts.push((arm.payload_mass, [x, y]));
    pts
}

pub fn tip(arm: &ArmModel, q: &[f64]) -> [f64; 2] {
    lumped_points(arm, q).last().unwrap().1
}

fn shifted(q: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    q.iter().zip(dir).map(|(a, b)| a + h * b).collect()
}

/// `½ Σ m |v|²` with point velocities from central differences of position
/// along `qdot`.
pub fn kinetic_energy(arm: &ArmModel, q: &[f64], qdot: &[f64]) -> f64 {
    let h = 1e-6;
    let plus = lumped_points(arm, &shifted(q, qdot, h));
    let minus = lumped_points(arm, &shifted(q, qdot, -h));
    plus.iter()
        .zip(&minus)
        .map(|((m, a), (_, b))| {
            let vx = (a[0] - b[0]) / (2.0 * h);
            let vy = (a[1] - b[1]) / (2.0 * h);
            0.5 * m * (vx * vx + vy * vy)
        })
        .sum()
}

/// Inertia matrix recovered from the kinetic energy by polarization:
/// `M_ij = T(eᵢ + eⱼ) − T(eᵢ) − T(eⱼ)`, `M_ii = 2 T(eᵢ)`.
pub fn mass_matrix_from_energy(arm: &ArmModel, q: &[f64]) -> Vec<Vec<f64>> {
    let n = q.len();
    let unit = |i: usize| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let t = |v: &[f64]| kinetic_energy(arm, q, v);
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                m[i][i] = 2.0 * t(&unit(i));
            } else {
                let both: Vec<f64> = unit(i).iter().zip(unit(j)).map(|(a, b)| a + b).collect();
                m[i][j] = t(&both) - t(&unit(i)) - t(&unit(j));
            }
        }
    }
    m
}

/// Gravitational potential with gravity along −y.
pub fn potential_energy(arm: &ArmModel, q: &[f64]) -> f64 {
    lumped_points(arm, q).iter().map(|(m, p)| m * arm.gravity * p[1]).sum()
}

pub fn central_gradient(f: impl Fn(&[f64]) -> f64, q: &[f64], h: f64) -> Vec<f64> {
    (0..q.len())
        .map(|i| {
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Dense solve by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn kernel_value(k: &KernelParams, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let l = if k.length_scale.len() == 1 { k.length_scale[0] } else { k.length_scale[i] };
            ((x - y) / l).powi(2)
        })
        .sum();
    k.sigma_se * k.sigma_se * (-0.5 * r2).exp()
}

/// Mean and variance by solving `(K + σ²I) w = b` directly for each
/// right-hand side.
pub fn naive_posterior(k: &KernelParams, x: &[Vec<f64>], y: &[f64], q: &[f64]) -> (f64, f64) {
    let n = x.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kernel_value(k, &x[i], &x[j]) + if i == j { k.sigma_eps * k.sigma_eps } else { 0.0 })
                .collect()
        })
        .collect();
    let kstar: Vec<f64> = x.iter().map(|xi| kernel_value(k, xi, q)).collect();
    let alpha = gauss_solve(gram.clone(), y.to_vec());
    let v = gauss_solve(gram, kstar.clone());
    let mean = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let var = kernel_value(k, q, q) - kstar.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

/// `E[max(0, best − J)]` for `J ~ N(mean, var)` from 10⁶ equal-probability
/// strata of the standard normal.
pub fn sampled_improvement(mean: f64, var: f64, best: f64) -> f64 {
    const N: usize = 1_000_000;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let sd = var.sqrt();
    let total: f64 = (0..N)
        .map(|k| {
            let z = std_normal.inverse_cdf((k as f64 + 0.5) / N as f64);
            (best - (mean + sd * z)).max(0.0)
        })
        .sum();
    total / N as f64
}

/// Random kernel, training set and query: n ≤ 10 points in d ≤ 5 dimensions.
pub fn random_dataset(rng: &mut ChaCha8Rng) -> (KernelParams, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = rng.random_range(1..=10);
    let d = rng.random_range(1..=5);
    let length_scale =
        if rng.random_bool(0.5) { vec![rng.random_range(0.2..2.0)] } else { (0..d).map(|_| rng.random_range(0.2..2.0)).collect() };
    let kernel = KernelParams { sigma_se: rng.random_range(0.5..3.0), length_scale, sigma_eps: rng.random_range(0.05..0.5) };
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let q: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..2.5)).collect();
    (kernel, x, y, q)
}
