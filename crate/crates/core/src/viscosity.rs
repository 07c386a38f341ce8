//! Jensen inf- and sup-convolutions on meshed balls and their audits.
//!
//! `u_ε(x) = min_y { u(y) + d(y, x)² / (2ε) }` is minimized exactly over all mesh
//! nodes `y`. Off-grid values of the same formula are used for the semiconcavity
//! audit, which takes geodesic second differences through every interior node.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{comparison_h, Point, TangentVector};
use crate::mesh::{GeodesicBallMesh, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convolution {
    Inf,
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionDiagnostics {
    /// `max |u - u_ε|` over nodes.
    pub max_gap: f64,
    /// Measured Lipschitz constant over node pairs.
    pub lipschitz: f64,
    /// Largest geodesic second difference at interior nodes.
    pub max_hessian_eig: f64,
}

#[derive(Debug, Clone)]
pub struct InfConvolutionResult {
    pub epsilon: f64,
    pub kind: Convolution,
    pub source: ScalarField,
    pub field: ScalarField,
    /// Minimizing node for every node.
    pub argmin: Vec<usize>,
    pub diagnostics: ConvolutionDiagnostics,
}

pub fn inf_convolution(field: &ScalarField, epsilon: f64) -> Result<InfConvolutionResult> {
    convolve(field, epsilon, Convolution::Inf)
}

/// `u^ε(x) = max_y { u(y) - d(y, x)² / (2ε) }`.
pub fn sup_convolution(field: &ScalarField, epsilon: f64) -> Result<InfConvolutionResult> {
    convolve(field, epsilon, Convolution::Sup)
}

fn sign(kind: Convolution) -> f64 {
    match kind {
        Convolution::Inf => 1.0,
        Convolution::Sup => -1.0,
    }
}

fn convolve(field: &ScalarField, epsilon: f64, kind: Convolution) -> Result<InfConvolutionResult> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!("epsilon = {epsilon} must be positive")));
    }
    let mesh = field.mesh();
    let s = sign(kind);
    // work with the inf-convolution of s*u
    let u: Vec<f64> = field.values().iter().map(|v| s * v).collect();
    let (values, argmin) = discrete_inf(mesh, &u, epsilon);
    let values: Vec<f64> = values.into_iter().map(|v| s * v).collect();
    let out = ScalarField::new(mesh.clone(), &format!("{}_{}", field.name(), "eps"), values)?;
    let mut result = InfConvolutionResult {
        epsilon,
        kind,
        source: field.clone(),
        field: out,
        argmin,
        diagnostics: ConvolutionDiagnostics { max_gap: 0.0, lipschitz: 0.0, max_hessian_eig: 0.0 },
    };
    result.diagnostics.max_gap = field
        .values()
        .iter()
        .zip(result.field.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    result.diagnostics.lipschitz = lipschitz_audit(&result);
    result.diagnostics.max_hessian_eig = semiconcavity_audit(&result)?;
    Ok(result)
}

/// Exact minimization over nodes; ties go to the lowest node index.
fn discrete_inf(mesh: &GeodesicBallMesh, u: &[f64], eps: f64) -> (Vec<f64>, Vec<usize>) {
    let model = mesh.model();
    let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
    (0..mesh.len())
        .into_par_iter()
        .map(|x| {
            let ax = mesh.ambient(x);
            let mut best = (u[x], x);
            let mut key_cap = model.key_from_distance((2.0 * eps * (best.0 - umin)).max(0.0).sqrt());
            for (y, &uy) in u.iter().enumerate() {
                if uy > best.0 || (uy == best.0 && y > best.1) {
                    continue;
                }
                let q = model.distance_key(ax, mesh.ambient(y));
                if q > key_cap {
                    continue;
                }
                let d = model.distance_from_key(q);
                let v = uy + d * d / (2.0 * eps);
                if v < best.0 || (v == best.0 && y < best.1) {
                    best = (v, y);
                    key_cap = model.key_from_distance((2.0 * eps * (best.0 - umin)).max(0.0).sqrt());
                }
            }
            best
        })
        .unzip()
}

/// `diam(Ω) · 3 / (2ε)` for the mesh ball.
pub fn lipschitz_bound(mesh: &GeodesicBallMesh, epsilon: f64) -> f64 {
    1.5 / epsilon * 2.0 * mesh.radius()
}

/// `𝓗(√κ̃ diam(Ω)) / ε` with `-κ̃` the sectional lower bound of the model.
pub fn semiconcavity_bound(mesh: &GeodesicBallMesh, epsilon: f64) -> f64 {
    let tau = mesh.model().kappa().sqrt() * 2.0 * mesh.radius();
    comparison_h(tau).unwrap_or(1.0) / epsilon
}

/// Max of `|u_ε(x) - u_ε(y)| / d(x, y)` over all node pairs.
pub fn lipschitz_audit(result: &InfConvolutionResult) -> f64 {
    let mesh = result.field.mesh();
    let v = result.field.values();
    let model = mesh.model();
    (0..mesh.len())
        .into_par_iter()
        .map(|x| {
            let ax = mesh.ambient(x);
            let mut worst: f64 = 0.0;
            for y in (x + 1)..mesh.len() {
                let d = model.distance_ambient(ax, mesh.ambient(y));
                if d > 0.0 {
                    worst = worst.max((v[x] - v[y]).abs() / d);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

const AUDIT_DIRECTIONS: usize = 16;

/// Largest geodesic second difference `(u_ε(z₊) + u_ε(z₋) - 2u_ε(x)) / h²` with
/// `z± = exp_x(±h e)` over interior nodes `x` and 16 directions `e`.
///
/// Off-grid values use the same minimization over nodes, so the bound `C_ε`
/// holds for the discrete field without interpolation error. For a sup-convolution
/// the sign is flipped, giving the semiconvexity constant.
pub fn semiconcavity_audit(result: &InfConvolutionResult) -> Result<f64> {
    let mesh = result.field.mesh();
    let model = mesh.model();
    let eps = result.epsilon;
    let h = mesh.h();
    let s = sign(result.kind);
    let u: Vec<f64> = result.source.values().iter().map(|v| s * v).collect();
    let ue: Vec<f64> = result.field.values().iter().map(|v| s * v).collect();
    let dirs: Vec<[f64; 2]> = (0..AUDIT_DIRECTIONS)
        .map(|i| {
            let t = PI * i as f64 / AUDIT_DIRECTIONS as f64;
            [t.cos(), t.sin()]
        })
        .collect();
    let per_node: Result<Vec<f64>> = mesh
        .interior_nodes()
        .into_par_iter()
        .map(|x| {
            let ax = mesh.ambient(x);
            let y0 = result.argmin[x];
            let d0 = model.distance_ambient(ax, mesh.ambient(y0));
            let cap = u[y0] + (d0 + h).powi(2) / (2.0 * eps);
            // nodes that can attain the minimum anywhere within distance h of x
            let cands: Vec<usize> = (0..mesh.len())
                .filter(|&y| {
                    let d = model.distance_ambient(ax, mesh.ambient(y));
                    u[y] + (d - h).max(0.0).powi(2) / (2.0 * eps) <= cap
                })
                .collect();
            let mut worst = f64::NEG_INFINITY;
            for e in &dirs {
                let mut vals = [0.0; 2];
                for (slot, sg) in [1.0, -1.0].iter().enumerate() {
                    let z = model.exp_ambient(ax, &[sg * h * e[0], sg * h * e[1]])?;
                    vals[slot] = cands
                        .iter()
                        .map(|&y| {
                            let d = model.distance_ambient(&z, mesh.ambient(y));
                            u[y] + d * d / (2.0 * eps)
                        })
                        .fold(f64::INFINITY, f64::min);
                }
                worst = worst.max((vals[0] + vals[1] - 2.0 * ue[x]) / (h * h));
            }
            Ok(worst)
        })
        .collect();
    Ok(per_node?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `ε₀ = diam² / (16 (1 + ‖u‖∞))` followed by `levels - 1` halvings.
pub fn epsilon_ladder(field: &ScalarField, levels: usize) -> Vec<f64> {
    let diam = 2.0 * field.mesh().radius();
    let e0 = diam * diam / (16.0 * (1.0 + field.max_abs()));
    (0..levels).map(|k| e0 / 2f64.powi(k as i32)).collect()
}

/// Empirical modulus of continuity: max `|u(x) - u(y)|` over node pairs with `d(x, y) <= t`.
pub fn modulus_of_continuity(field: &ScalarField, t: f64) -> f64 {
    let mesh = field.mesh();
    let model = mesh.model();
    let v = field.values();
    let cap = model.key_from_distance(t);
    (0..mesh.len())
        .into_par_iter()
        .map(|x| {
            let ax = mesh.ambient(x);
            let mut worst: f64 = 0.0;
            for y in (x + 1)..mesh.len() {
                if model.distance_key(ax, mesh.ambient(y)) <= cap {
                    worst = worst.max((v[x] - v[y]).abs());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Inf-convolution of an explicit function with the minimization continued off the grid.
///
/// Starts from the best node and runs damped Newton steps in normal coordinates at `x`,
/// where the penalty is exactly `|v|² / (2ε)`. Minimizers are kept inside the closed ball.
pub fn refined_inf_convolution<F>(u: F, mesh: &Arc<GeodesicBallMesh>, epsilon: f64) -> Result<ScalarField>
where
    F: Fn(&Point) -> f64 + Sync,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon = {epsilon} must be positive")));
    }
    let model = *mesh.model();
    let nodal: Vec<f64> = mesh.nodes().iter().map(&u).collect();
    let (_, argmin) = discrete_inf(mesh, &nodal, epsilon);
    let center = mesh.center().clone();
    let radius = mesh.radius();
    let values: Result<Vec<f64>> = (0..mesh.len())
        .into_par_iter()
        .map(|x| {
            let base = mesh.node(x).clone();
            let objective = |v: &[f64; 2]| -> Option<f64> {
                let y = model.exp_map(&TangentVector::new(base.clone(), v)).ok()?;
                if model.distance(&y, &center) > radius {
                    return None;
                }
                Some(u(&y) + (v[0] * v[0] + v[1] * v[1]) / (2.0 * epsilon))
            };
            let v0 = model.log_map(&base, mesh.node(argmin[x]))?.components;
            let mut v = [v0[0], v0[1]];
            let mut best = objective(&v).unwrap_or(f64::INFINITY);
            for _ in 0..60 {
                let step_len = 1e-4 * epsilon.sqrt().min(1.0);
                let eval = |dv: [f64; 2]| objective(&[v[0] + dv[0], v[1] + dv[1]]);
                let (Some(fpx), Some(fmx), Some(fpy), Some(fmy), Some(fpp), Some(fmm)) = (
                    eval([step_len, 0.0]),
                    eval([-step_len, 0.0]),
                    eval([0.0, step_len]),
                    eval([0.0, -step_len]),
                    eval([step_len, step_len]),
                    eval([-step_len, -step_len]),
                ) else {
                    break;
                };
                let g = [(fpx - fmx) / (2.0 * step_len), (fpy - fmy) / (2.0 * step_len)];
                let hxx = (fpx + fmx - 2.0 * best) / (step_len * step_len);
                let hyy = (fpy + fmy - 2.0 * best) / (step_len * step_len);
                let hxy = ((fpp + fmm - 2.0 * best) / (step_len * step_len) - hxx - hyy) / 2.0;
                let det = hxx * hyy - hxy * hxy;
                let mut dir = if hxx > 0.0 && det > 0.0 {
                    [-(hyy * g[0] - hxy * g[1]) / det, -(hxx * g[1] - hxy * g[0]) / det]
                } else {
                    [-epsilon * g[0], -epsilon * g[1]]
                };
                let mut improved = false;
                for _ in 0..30 {
                    let cand = [v[0] + dir[0], v[1] + dir[1]];
                    if let Some(fc) = objective(&cand) {
                        if fc < best {
                            v = cand;
                            best = fc;
                            improved = true;
                            break;
                        }
                    }
                    dir = [0.5 * dir[0], 0.5 * dir[1]];
                }
                if !improved || dir[0].hypot(dir[1]) < 1e-13 {
                    break;
                }
            }
            Ok(best.min(nodal[argmin[x]] + mesh.distance_to(argmin[x], &base).powi(2) / (2.0 * epsilon)))
        })
        .collect();
    ScalarField::new(mesh.clone(), "u_eps", values?)
}

/// Random continuous test field: plane waves, a cone and a kinked ridge.
pub fn random_continuous_field(mesh: &Arc<GeodesicBallMesh>, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = mesh.radius();
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            let w = rng.random_range(0.5..3.0) / r;
            let a = rng.random_range(0.0..2.0 * PI);
            [w * a.cos(), w * a.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let apex = Point::new(&[rng.random_range(-0.5..0.5) * r, rng.random_range(-0.5..0.5) * r]);
    let cone = rng.random_range(-1.0..1.0) / r;
    let ridge = rng.random_range(-1.0..1.0) / r;
    let ridge_dir = rng.random_range(0.0..2.0 * PI);
    let model = *mesh.model();
    mesh.field_from_fn("u", |x| {
        let c = &x.coords;
        let w: f64 = waves.iter().map(|w| w[3] * (w[0] * c[0] + w[1] * c[1] + w[2]).sin()).sum();
        w + cone * model.distance(x, &apex) + ridge * (ridge_dir.cos() * c[0] + ridge_dir.sin() * c[1]).abs()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ManifoldModel;

    fn mesh(model: ManifoldModel, nr: usize, nt: usize) -> Arc<GeodesicBallMesh> {
        Arc::new(GeodesicBallMesh::build(model, Point::origin(2), 1.0, nr, nt).unwrap())
    }

    #[test]
    fn constant_field_is_fixed() {
        let m = mesh(ManifoldModel::hyperbolic(2, 1.0), 12, 12);
        let u = m.field_from_fn("u", |_| 3.0);
        let r = inf_convolution(&u, 0.1).unwrap();
        assert!(r.field.values().iter().all(|&v| v == 3.0));
        assert!(r.argmin.iter().enumerate().all(|(k, &y)| k == y));
        assert_eq!(lipschitz_audit(&r), 0.0);
        let sc = semiconcavity_audit(&r).unwrap();
        assert!((0.0..=semiconcavity_bound(&m, 0.1)).contains(&sc));
    }

    #[test]
    fn abs_section_matches_closed_form() {
        // eps is a multiple of h, so the continuous minimizer on the ray is a node
        let m = mesh(ManifoldModel::euclidean(2), 40, 16);
        let u = m.field_from_fn("u", |x| x.coords.norm());
        let eps = 8.0 * m.h();
        let r = inf_convolution(&u, eps).unwrap();
        for k in 0..m.len() {
            let x = m.polar(k).0;
            let exact = if x <= eps { x * x / (2.0 * eps) } else { x - eps / 2.0 };
            assert!((r.field.value(k) - exact).abs() < 1e-8, "r = {x}");
        }
        let sc = semiconcavity_audit(&r).unwrap();
        assert!((sc - 1.0 / eps).abs() < 1e-6 / eps, "{sc}");
    }

    #[test]
    fn monotone_in_epsilon_and_below_u() {
        let m = mesh(ManifoldModel::hyperbolic(2, 1.0), 16, 16);
        let u = random_continuous_field(&m, 4);
        let ladder = epsilon_ladder(&u, 3);
        let results: Vec<_> = ladder.iter().map(|&e| inf_convolution(&u, e).unwrap()).collect();
        for r in &results {
            for k in 0..m.len() {
                assert!(r.field.value(k) <= u.value(k));
            }
        }
        for w in results.windows(2) {
            for k in 0..m.len() {
                assert!(w[1].field.value(k) >= w[0].field.value(k));
            }
            assert!(w[1].diagnostics.max_gap <= w[0].diagnostics.max_gap);
        }
    }

    #[test]
    fn sup_convolution_is_dual() {
        let m = mesh(ManifoldModel::spherical(2, 1.0), 12, 12);
        let u = random_continuous_field(&m, 8);
        let neg = u.map("neg", |v| -v);
        let a = sup_convolution(&u, 0.05).unwrap();
        let b = inf_convolution(&neg, 0.05).unwrap();
        for k in 0..m.len() {
            assert_eq!(a.field.value(k), -b.field.value(k));
            assert!(a.field.value(k) >= u.value(k));
        }
    }

    #[test]
    fn audits_respect_bounds() {
        for model in [ManifoldModel::euclidean(2), ManifoldModel::hyperbolic(2, 1.0), ManifoldModel::spherical(2, 1.0)]
        {
            let m = mesh(model, 16, 16);
            let u = random_continuous_field(&m, 11);
            let eps = epsilon_ladder(&u, 2)[1];
            let r = inf_convolution(&u, eps).unwrap();
            let h = m.h();
            assert!(r.diagnostics.lipschitz <= lipschitz_bound(&m, eps) * (1.0 + 3.0 * h));
            assert!(r.diagnostics.max_hessian_eig <= semiconcavity_bound(&m, eps) * (1.0 + 3.0 * h));
        }
    }

    #[test]
    fn semiconcavity_bound_is_one_over_eps_when_flat() {
        let m = mesh(ManifoldModel::euclidean(2), 8, 8);
        assert_eq!(semiconcavity_bound(&m, 0.25), 4.0);
    }

    #[test]
    fn modulus_of_linear_field() {
        let m = mesh(ManifoldModel::euclidean(2), 16, 16);
        let u = m.field_from_fn("u", |x| 2.0 * x.coords[0]);
        let w = modulus_of_continuity(&u, 0.5);
        assert!(w <= 1.0 + 1e-12 && w > 0.9);
    }

    #[test]
    fn refined_matches_radial_oracle() {
        // for radial u the minimizer lies on the geodesic through the vertex
        let model = ManifoldModel::hyperbolic(2, 1.0);
        let m = mesh(model, 12, 12);
        let y0 = Point::new(&[0.2, 0.1]);
        let g = |s: f64| (2.0 / 3.0) * s.powf(1.5);
        let eps = 0.05;
        let ue = refined_inf_convolution(|x| g(model.distance(x, &y0)), &m, eps).unwrap();
        for k in 0..m.len() {
            let big_d = m.distance_to(k, &y0);
            let (mut a, mut b) = (0.0, big_d);
            let j = |s: f64| g(s) + (big_d - s).powi(2) / (2.0 * eps);
            for _ in 0..200 {
                let m1 = a + (b - a) * 0.381966;
                let m2 = b - (b - a) * 0.381966;
                if j(m1) < j(m2) {
                    b = m2;
                } else {
                    a = m1;
                }
            }
            assert!((ue.value(k) - j(0.5 * (a + b))).abs() < 1e-9, "node {k}");
        }
    }
}
