//! Per-vertex deviation directions chosen "as normal as possible" to the
//! surrounding edges.
//!
//! For vertex `i` with neighbours `N_i` and edge vectors `d_ij = V_i - V_j`,
//! the direction minimises `sum_j (d_ijᵀ n)²` subject to `‖n‖ = 1`. The
//! Lagrangian stationarity conditions
//!
//! ```text
//! f(n, λ) = [ 2 (D + λ I) n ]  = 0,     D = Σ_j d_ij d_ijᵀ
//!           [ nᵀn - 1       ]
//! ```
//!
//! are solved with Newton's method on `y = (n, λ)` using the bordered
//! Jacobian `J = [[2(D + λI), 2n], [2nᵀ, 0]]`. A stationary point is a
//! constrained minimum exactly when `J` has one negative eigenvalue (the
//! border contributes one positive and one negative eigenvalue; the rest is
//! the reduced Hessian on the constraint tangent plane).

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector4};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::TriMesh;

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            max_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VertexNormal {
    pub direction: Vec3,
    /// Multiplier of the unit-norm constraint, in the units of `D`.
    pub lagrange_multiplier: f64,
    pub converged: bool,
    /// Newton iterations of the final attempt.
    pub iterations: usize,
    pub restarts: usize,
    /// Whether the bordered Hessian certifies a constrained minimum.
    pub is_minimum: bool,
    /// `‖f(y)‖` at the returned point, with `D` scaled to unit trace.
    pub residual: f64,
}

/// Neighbour scatter matrix `D = Σ d_ij d_ijᵀ` of `vertex`.
pub fn scatter_matrix(mesh: &TriMesh, vertex: usize) -> Matrix3<f64> {
    let vi = mesh.vertices()[vertex];
    mesh.vertex_adjacency()[vertex]
        .iter()
        .map(|&j| {
            let d = vi - mesh.vertices()[j];
            d * d.transpose()
        })
        .sum()
}

/// Solves for the deviation direction of `vertex`.
///
/// Without an `initial_guess` the iteration is seeded with the mean normal of
/// the incident faces. A singular Jacobian or a non-converged attempt
/// re-seeds with a perturbed guess; a stationary point that is not a minimum
/// re-seeds orthogonally to the directions already found.
pub fn vertex_normal_newton(
    mesh: &TriMesh,
    vertex: usize,
    initial_guess: Option<Vec3>,
    opts: &NewtonOptions,
) -> Result<VertexNormal> {
    if vertex >= mesh.n_vertices() {
        return Err(Error::InvalidArgument(format!("vertex {vertex} out of range")));
    }
    if mesh.vertex_adjacency()[vertex].len() < 2 {
        return Err(Error::IsolatedVertex(vertex));
    }
    let seed = match initial_guess {
        Some(g) if g.norm() > 0.0 && g.iter().all(|c| c.is_finite()) => g,
        Some(_) => return Err(Error::InvalidArgument("initial guess must be nonzero".into())),
        None => incident_normal_seed(mesh, vertex),
    };

    let d = scatter_matrix(mesh, vertex);
    let trace = d.trace();
    // D/tr(D) has the same minimiser and keeps the tolerance scale-free.
    let scale = if trace > 0.0 { trace } else { 1.0 };
    let dn = d / scale;

    let mut seed = seed.normalize();
    let mut saddles: Vec<Vec3> = Vec::new();
    let mut last: Option<VertexNormal> = None;
    let mut singular_hits: usize = 0;

    for attempt in 0..=opts.max_restarts {
        match newton(&dn, seed, opts) {
            Attempt::Singular => {
                singular_hits += 1;
                seed = perturb(seed, attempt);
            }
            Attempt::Done { n, lambda, iterations, converged, residual } => {
                let is_minimum = converged && bordered_minimum(&dn, &n, lambda);
                let found = VertexNormal {
                    direction: n.normalize(),
                    lagrange_multiplier: lambda * scale,
                    converged,
                    iterations,
                    restarts: attempt,
                    is_minimum,
                    residual,
                };
                if is_minimum {
                    return Ok(found);
                }
                if converged {
                    saddles.push(found.direction);
                    seed = orthogonal_seed(seed, &saddles);
                } else {
                    seed = perturb(seed, attempt);
                }
                last = Some(found);
            }
        }
    }
    match last {
        Some(v) => Ok(v),
        None => Err(Error::SingularJacobian {
            vertex,
            restarts: singular_hits.saturating_sub(1),
        }),
    }
}

enum Attempt {
    Singular,
    Done {
        n: Vec3,
        lambda: f64,
        iterations: usize,
        converged: bool,
        residual: f64,
    },
}

fn residual(d: &Matrix3<f64>, n: &Vec3, lambda: f64) -> Vector4<f64> {
    let g = (d + Matrix3::identity() * lambda) * n * 2.0;
    Vector4::new(g.x, g.y, g.z, n.dot(n) - 1.0)
}

fn jacobian(d: &Matrix3<f64>, n: &Vec3, lambda: f64) -> Matrix4<f64> {
    let mut j = Matrix4::zeros();
    let h = (d + Matrix3::identity() * lambda) * 2.0;
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&h);
    j.fixed_view_mut::<3, 1>(0, 3).copy_from(&(n * 2.0));
    j.fixed_view_mut::<1, 3>(3, 0).copy_from(&(n.transpose() * 2.0));
    j
}

fn newton(d: &Matrix3<f64>, seed: Vec3, opts: &NewtonOptions) -> Attempt {
    let mut n = seed;
    let mut lambda = -n.dot(&(d * n)) / n.dot(&n);
    let mut f = residual(d, &n, lambda);
    let mut iterations = 0;
    while f.norm() > opts.tol && iterations < opts.max_iter {
        let j = jacobian(d, &n, lambda);
        let Some(step) = j.lu().solve(&f) else {
            return Attempt::Singular;
        };
        if !step.iter().all(|c| c.is_finite()) {
            return Attempt::Singular;
        }
        n -= step.fixed_rows::<3>(0);
        lambda -= step[3];
        f = residual(d, &n, lambda);
        iterations += 1;
    }
    let r = f.norm();
    Attempt::Done {
        n,
        lambda,
        iterations,
        converged: r <= opts.tol,
        residual: r,
    }
}

fn bordered_minimum(d: &Matrix3<f64>, n: &Vec3, lambda: f64) -> bool {
    let eig = SymmetricEigen::new(jacobian(d, n, lambda)).eigenvalues;
    eig.iter().filter(|&&e| e < -1e-9).count() == 1
}

fn incident_normal_seed(mesh: &TriMesh, vertex: usize) -> Vec3 {
    let normals = mesh.face_normals();
    let sum: Vec3 = mesh
        .faces()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.contains(&vertex))
        .filter_map(|(j, _)| normals[j])
        .sum();
    if sum.norm() > 1e-12 {
        sum
    } else {
        Vec3::z()
    }
}

fn perturb(seed: Vec3, attempt: usize) -> Vec3 {
    let axis = Vec3::ith(attempt % 3, 1.0);
    let mut side = seed.cross(&axis);
    if side.norm() < 1e-6 {
        side = seed.cross(&Vec3::ith((attempt + 1) % 3, 1.0));
    }
    (seed + side.normalize() * 0.3).normalize()
}

fn orthogonal_seed(seed: Vec3, found: &[Vec3]) -> Vec3 {
    if found.len() >= 2 {
        let c = found[found.len() - 2].cross(&found[found.len() - 1]);
        if c.norm() > 1e-6 {
            return c.normalize();
        }
    }
    let f = found[found.len() - 1];
    let mut v = seed - f * seed.dot(&f);
    if v.norm() < 1e-6 {
        let axis = (0..3)
            .min_by(|&a, &b| f[a].abs().total_cmp(&f[b].abs()))
            .unwrap_or(0);
        v = f.cross(&Vec3::ith(axis, 1.0));
    }
    v.normalize()
}
