//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

pub mod criteria;

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use surfdefect_core::estimator::MeasurementBatch;
use surfdefect_core::{Point, TriMesh, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

/// Nearest ray hit by testing every face. Returns `(face, t)`; on equal `t`
/// the lower face index wins.
pub fn brute_ray(mesh: &TriMesh, o: &Point, d: &Vec3, t_min: f64, t_max: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..mesh.n_faces() {
        let [a, b, c] = mesh.triangle(j);
        // Cramer's rule on o + t d = a + u (b - a) + v (c - a).
        let e1 = b - a;
        let e2 = c - a;
        let m = Matrix3::from_columns(&[-d, e1, e2]);
        let det = m.determinant();
        if det.abs() < 1e-300 {
            continue;
        }
        let Some(inv) = m.try_inverse() else { continue };
        let s = inv * (o - a);
        let (t, u, v) = (s[0], s[1], s[2]);
        let tol = 1e-12;
        if u < -tol || v < -tol || u + v > 1.0 + tol || t < t_min || t > t_max {
            continue;
        }
        if best.is_none_or(|(_, bt)| t < bt) {
            best = Some((j, t));
        }
    }
    best
}

fn segment_closest(p: &Point, a: &Point, b: &Point) -> Point {
    let ab = b - a;
    let l2 = ab.norm_squared();
    if l2 == 0.0 {
        return *a;
    }
    let s = ((p - a).dot(&ab) / l2).clamp(0.0, 1.0);
    a + ab * s
}

/// Closest point on one triangle: plane projection when it falls inside,
/// otherwise the best of the three edges.
pub fn triangle_closest(p: &Point, tri: &[Point; 3]) -> Point {
    let [a, b, c] = *tri;
    let n = (b - a).cross(&(c - a));
    let nn = n.norm_squared();
    if nn > 0.0 {
        let q = p - n * ((p - a).dot(&n) / nn);
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|(u, v)| (v - u).cross(&(q - u)).dot(&n) >= 0.0);
        if inside {
            return q;
        }
    }
    [(a, b), (b, c), (c, a)]
        .iter()
        .map(|(u, v)| segment_closest(p, u, v))
        .min_by(|x, y| (x - p).norm().total_cmp(&(y - p).norm()))
        .unwrap()
}

/// Distance from `p` to the mesh, by scanning every face.
pub fn brute_closest(mesh: &TriMesh, p: &Point) -> (usize, f64) {
    (0..mesh.n_faces())
        .map(|j| (j, (triangle_closest(p, &mesh.triangle(j)) - p).norm()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
}

/// Unit eigenvector of the smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvector(d: &Matrix3<f64>) -> Vec3 {
    let e = d.symmetric_eigen();
    let i = e.eigenvalues.imin();
    e.eigenvectors.column(i).into_owned().normalize()
}

/// Posterior mean and variance of a scalar Gaussian prior `N(m0, v0)` after
/// one observation `y` with noise variance `r`.
pub fn scalar_bayes(m0: f64, v0: f64, y: f64, r: f64) -> (f64, f64) {
    let gain = v0 / (v0 + r);
    (m0 + gain * (y - m0), (1.0 - gain) * v0)
}

/// Weighted least squares over every raw row `n̂ᵢ[r] xⱼ = δᵢ[r]` of every
/// batch, with the Gaussian prior `N(x0, P0)` as extra rows. The stacked
/// system is built in dense chunks and the normal equations solved by
/// Cholesky.
pub fn stacked_wls(batches: &[MeasurementBatch], x0: &DVector<f64>, p0: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x0.len();
    let p0_inv = p0.clone().cholesky().expect("SPD prior").inverse();
    let mut a = p0_inv.clone();
    let mut b = &p0_inv * x0;
    const CHUNK: usize = 1000;
    for batch in batches {
        let np = batch.residuals.len();
        let mut start = 0;
        while start < np {
            let end = (start + CHUNK).min(np);
            let rows = 3 * (end - start);
            let mut h = DMatrix::<f64>::zeros(rows, n);
            let mut w = DVector::<f64>::zeros(rows);
            let mut y = DVector::<f64>::zeros(rows);
            for i in start..end {
                for r in 0..3 {
                    let row = 3 * (i - start) + r;
                    h[(row, batch.face_of[i])] = batch.normals[i][r];
                    w[row] = 1.0 / (batch.sigma_of[i] * batch.sigma_of[i]);
                    y[row] = batch.residuals[i][r];
                }
            }
            let ht_w = {
                let mut m = h.transpose();
                for (c, wc) in w.iter().enumerate() {
                    m.column_mut(c).scale_mut(*wc);
                }
                m
            };
            a += &ht_w * &h;
            b += &ht_w * &y;
            start = end;
        }
    }
    let chol = a.cholesky().expect("normal equations are SPD");
    (chol.solve(&b), chol.inverse())
}

/// Random batch on `n_f` faces whose unit normals are `normals`.
pub fn random_batch(rng: &mut ChaCha8Rng, normals: &[Vec3], n_points: usize) -> MeasurementBatch {
    let mut b = MeasurementBatch::default();
    for _ in 0..n_points {
        let j = rng.random_range(0..normals.len());
        let sigma = rng.random_range(0.005..0.05);
        let r = Vec3::new(
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        );
        b.push(r, j, sigma, normals[j]);
    }
    b
}

/// Random symmetric positive definite matrix with eigenvalues in
/// `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let d = DVector::<f64>::from_fn(n, |_, _| rng.random_range(lo..hi));
    &q * DMatrix::from_diagonal(&d) * q.transpose()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Number of faces of an axis-aligned rectangle centred at the origin whose
/// vertices all lie at least `border` from its edges.
pub fn faces_clear_of_border(mesh: &TriMesh, half_w: f64, half_h: f64, border: f64) -> usize {
    let clear = |p: &Point| {
        let d = (half_w - p.x.abs()).min(half_h - p.y.abs());
        d >= border - 1e-12
    };
    mesh.faces()
        .iter()
        .filter(|f| f.iter().all(|&v| clear(&mesh.vertices()[v])))
        .count()
}
