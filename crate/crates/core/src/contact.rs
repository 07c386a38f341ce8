//! p-contact sets: sliding `(p-1)/p · d_y^{p/(p-1)}` from below, vertex recovery through
//! `Φ_p` and `Φ_{p,δ}`, PSD certificates and the Jacobian product formula.

use std::io::Write;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldModel, Point};
use crate::mesh::{Ball, GeodesicBallMesh, ScalarField};

/// Vertex set discretized to mesh nodes, with quadrature weights.
#[derive(Debug, Clone)]
pub struct VertexSet {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl VertexSet {
    pub fn from_ball(mesh: &GeodesicBallMesh, ball: &Ball) -> Self {
        let nodes = mesh.nodes_in_ball(ball);
        Self {
            points: nodes.iter().map(|&k| mesh.node(k).clone()).collect(),
            weights: nodes.iter().map(|&k| mesh.weights()[k]).collect(),
        }
    }

    pub fn points(points: Vec<Point>) -> Self {
        let weights = vec![0.0; points.len()];
        Self { points, weights }
    }

    /// `count` points uniform in Riemannian measure on `ball`, each weighted `|ball| / count`.
    pub fn random_in_ball(model: &ManifoldModel, ball: &Ball, count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = model.sn_integral(ball.radius);
        let center = model.embed(&ball.center);
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let target = rng.random_range(0.0..1.0) * total;
            let (mut lo, mut hi) = (0.0, ball.radius);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if model.sn_integral(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let th = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let rho = 0.5 * (lo + hi);
            let y = model.exp_ambient(&center, &[rho * th.cos(), rho * th.sin()])?;
            points.push(model.unembed(&y));
        }
        let w = model.ball_volume(ball.radius)? / count as f64;
        Ok(Self { points, weights: vec![w; count] })
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactOptions {
    pub p: f64,
    /// Opening `a`; realized by minimizing with `u / a`.
    pub opening: f64,
    /// Regularizations for `Φ_{p,δ}`; `h²` is appended automatically.
    pub delta_ladder: [f64; 3],
}

impl ContactOptions {
    pub fn new(p: f64) -> Self {
        Self { p, opening: 1.0, delta_ladder: [1e-1, 1e-2, 1e-3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub vertex: Point,
    /// Quadrature weight of the vertex within `E`.
    pub vertex_weight: f64,
    pub contact: usize,
    pub contact_point: Point,
    pub opening: f64,
    pub p: f64,
    /// The minimizer lies on `∂Ω`; excluded from ABP integrals.
    pub escaped: bool,
    pub grad: Vector2<f64>,
    pub hess: Matrix2<f64>,
    pub phi_p: Option<Point>,
    /// `(δ, Φ_{p,δ}(x))` along the δ ladder.
    pub phi_p_delta: Vec<(f64, Point)>,
    pub recovery_error: Option<f64>,
    pub psd_min_eig: Option<f64>,
    pub jacobian_closed: Option<f64>,
    pub jacobian_fd: Option<f64>,
}

impl ContactRecord {
    pub fn grad_norm(&self) -> f64 {
        self.grad.norm()
    }

    /// `|closed - fd| / max(closed, fd)` when both are available.
    pub fn jacobian_rel_error(&self) -> Option<f64> {
        let (c, f) = (self.jacobian_closed?, self.jacobian_fd?);
        let scale = c.abs().max(f.abs());
        Some(if scale == 0.0 { 0.0 } else { (c - f).abs() / scale })
    }
}

fn displacement(grad: &Vector2<f64>, p: f64, delta: f64) -> Vector2<f64> {
    let g2 = grad.norm_squared();
    if p == 2.0 || (g2 == 0.0 && delta == 0.0) {
        return *grad;
    }
    grad * (g2 + delta).powf(0.5 * (p - 2.0))
}

/// `Φ_p(x) = exp_x(|∇u|^{p-2} ∇u)`.
pub fn phi_p(model: &ManifoldModel, x: &Point, grad: &[f64], p: f64) -> Result<Point> {
    let g = Vector2::new(grad[0], grad[1]);
    if p < 2.0 && g.norm_squared() == 0.0 {
        return Err(Error::SingularGradient { p });
    }
    phi_p_delta(model, x, grad, p, 0.0)
}

/// `Φ_{p,δ}(x) = exp_x((|∇u|² + δ)^{(p-2)/2} ∇u)`.
pub fn phi_p_delta(model: &ManifoldModel, x: &Point, grad: &[f64], p: f64, delta: f64) -> Result<Point> {
    let xi = displacement(&Vector2::new(grad[0], grad[1]), p, delta);
    let xa = model.embed(x);
    Ok(model.unembed(&model.exp_ambient(&xa, xi.as_slice())?))
}

/// `t_δ = (|∇u|² / (|∇u|² + δ))^{(2-p)/2}`, the geodesic parameter of `Φ_{p,δ}`.
pub fn t_delta(grad_norm: f64, p: f64, delta: f64) -> f64 {
    let g2 = grad_norm * grad_norm;
    (g2 / (g2 + delta)).powf(0.5 * (2.0 - p))
}

/// One record per vertex; the opening is applied by scaling `u`.
pub fn compute_contact_set(
    u: &ScalarField,
    vertices: &VertexSet,
    omega: &Ball,
    options: &ContactOptions,
) -> Result<Vec<ContactRecord>> {
    let p = options.p;
    if !(p > 1.0) || !(options.opening > 0.0) {
        return Err(Error::InvalidInput(format!("p = {p}, opening = {}", options.opening)));
    }
    let mesh = u.mesh();
    let model = *mesh.model();
    let q = p / (p - 1.0);
    let c = (p - 1.0) / p;
    let inv_a = 1.0 / options.opening;
    let cands = mesh.nodes_in_ball(omega);
    let h = mesh.h();
    let center = model.embed(&omega.center);
    let umin = cands.iter().map(|&k| inv_a * u.value(k)).fold(f64::INFINITY, f64::min);
    let mut deltas = options.delta_ladder.to_vec();
    deltas.push(h * h);
    vertices
        .points
        .par_iter()
        .zip(vertices.weights.par_iter())
        .map(|(y, &w)| {
            let ya = model.embed(y);
            let eval = |k: usize| inv_a * u.value(k) + c * model.distance_ambient(&ya, mesh.ambient(k)).powf(q);
            let mut best = (f64::INFINITY, usize::MAX);
            // a coarse pass tightens the pruning radius of the exact pass
            for &k in cands.iter().step_by(16) {
                let v = eval(k);
                if v < best.0 {
                    best = (v, k);
                }
            }
            let cap = |b: f64| model.key_from_distance(((b - umin).max(0.0) / c).powf(1.0 / q));
            let mut key_cap = cap(best.0);
            for &k in &cands {
                if model.distance_key(&ya, mesh.ambient(k)) > key_cap {
                    continue;
                }
                let v = eval(k);
                if v < best.0 || (v == best.0 && k < best.1) {
                    best = (v, k);
                    key_cap = cap(best.0);
                }
            }
            let x = best.1;
            let escaped =
                mesh.is_boundary(x) || model.distance_ambient(&center, mesh.ambient(x)) > omega.radius - 0.5 * h;
            let mut rec = ContactRecord {
                vertex: y.clone(),
                vertex_weight: w,
                contact: x,
                contact_point: mesh.node(x).clone(),
                opening: options.opening,
                p,
                escaped,
                grad: Vector2::zeros(),
                hess: Matrix2::zeros(),
                phi_p: None,
                phi_p_delta: Vec::new(),
                recovery_error: None,
                psd_min_eig: None,
                jacobian_closed: None,
                jacobian_fd: None,
            };
            if escaped {
                return Ok(rec);
            }
            let jet = u.jet(x)?;
            rec.grad = jet.grad * inv_a;
            rec.hess = jet.hess * inv_a;
            let xa = mesh.ambient(x);
            let g = rec.grad.norm();
            if g > 0.0 || p >= 2.0 {
                let target = model.exp_ambient(xa, displacement(&rec.grad, p, 0.0).as_slice())?;
                rec.recovery_error = Some(model.distance_ambient(&target, &ya));
                rec.phi_p = Some(model.unembed(&target));
            }
            for &delta in &deltas {
                let z = model.exp_ambient(xa, displacement(&rec.grad, p, delta).as_slice())?;
                rec.phi_p_delta.push((delta, model.unembed(&z)));
            }
            if g > 0.0 {
                rec.psd_min_eig = Some(psd_certificate(&model, &rec.grad, &rec.hess, p));
                rec.jacobian_closed = Some(jacobian_closed(&model, &rec.grad, &rec.hess, p));
                rec.jacobian_fd = jacobian_fd(u, x, p, inv_a).ok();
            }
            Ok(rec)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `d(Φ_p(x), y) ≤ 2h`; `None` for escaped or singular records.
pub fn verify_vertex_recovery(record: &ContactRecord, h: f64) -> Option<RecoveryReport> {
    if record.escaped {
        return None;
    }
    let error = record.recovery_error?;
    let tolerance = 2.0 * h;
    Some(RecoveryReport { error, tolerance, pass: error <= tolerance })
}

/// Fraction of checked records (non-escaped, `|∇u| > h`) failing vertex recovery.
pub fn recovery_failure_rate(records: &[ContactRecord], h: f64) -> f64 {
    let checked: Vec<_> = records
        .iter()
        .filter(|r| r.grad_norm() > h)
        .filter_map(|r| verify_vertex_recovery(r, h))
        .collect();
    if checked.is_empty() {
        return 0.0;
    }
    checked.iter().filter(|r| !r.pass).count() as f64 / checked.len() as f64
}

fn hess_half_dist(model: &ManifoldModel, v: &Vector2<f64>) -> Matrix2<f64> {
    let m = model.hess_half_dist_sq_from_log(v.as_slice());
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn min_sym_eig(m: &Matrix2<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

/// `t|∇u|^{p-2}D²u + (I + c·n̂⊗n̂) D²(d²_{φ(x,t)}/2)`.
fn certified_matrix(
    model: &ManifoldModel,
    grad: &Vector2<f64>,
    hess: &Matrix2<f64>,
    p: f64,
    t: f64,
    c: f64,
) -> Matrix2<f64> {
    let g = grad.norm();
    let n = grad / g;
    let xi = displacement(grad, p, 0.0) * t;
    t * g.powf(p - 2.0) * hess + (Matrix2::identity() + c * n * n.transpose()) * hess_half_dist(model, &xi)
}

/// Minimum eigenvalue over the certified matrix at `t = 1` and its interpolations at
/// `t ∈ {0.25, 0.5, 0.75}`; for `p < 2` also the variant with the full `(2-p)/(p-1)` weight.
pub fn psd_certificate(model: &ManifoldModel, grad: &Vector2<f64>, hess: &Matrix2<f64>, p: f64) -> f64 {
    let c = (2.0 - p) / (p - 1.0);
    let mut worst = min_sym_eig(&certified_matrix(model, grad, hess, p, 1.0, c));
    for t in [0.25, 0.5, 0.75] {
        worst = worst.min(min_sym_eig(&certified_matrix(model, grad, hess, p, t, t * c)));
        if p < 2.0 {
            worst = worst.min(min_sym_eig(&certified_matrix(model, grad, hess, p, t, c)));
        }
    }
    worst
}

/// `Jac exp_x(ξ) · det(I + (p-2) n̂⊗n̂) · det(|∇u|^{p-2}D²u + (I + (2-p)/(p-1) n̂⊗n̂) D²(d²_y/2))`.
pub fn jacobian_closed(model: &ManifoldModel, grad: &Vector2<f64>, hess: &Matrix2<f64>, p: f64) -> f64 {
    let xi = displacement(grad, p, 0.0);
    let m = certified_matrix(model, grad, hess, p, 1.0, (2.0 - p) / (p - 1.0));
    model.jac_exp_len(xi.norm()) * (p - 1.0) * m.determinant()
}

/// Central-difference Jacobian determinant of the nodal map `z ↦ exp_z(|∇u|^{p-2}∇u)` at node `x`.
///
/// Displacements are read in normal coordinates at `x` and at `Φ_p(x)`. Fourth-order
/// differences are used where two interior neighbours exist on each side.
fn jacobian_fd(u: &ScalarField, x: usize, p: f64, scale: f64) -> Result<f64> {
    let mesh = u.mesh();
    let model = mesh.model();
    let (i, j) = (mesh.ring(x), mesh.angle_index(x));
    let nt = mesh.n_theta();
    let wide = i >= 2 && i + 2 < mesh.n_r();
    // (plus, minus, weight) triples per direction
    let stencils: [Vec<(usize, usize, f64)>; 2] = if i == 0 {
        [
            vec![(mesh.index(1, 0), mesh.index(1, nt / 2), 1.0)],
            vec![(mesh.index(1, nt / 4), mesh.index(1, nt / 4 + nt / 2), 1.0)],
        ]
    } else if wide {
        let (a, b) = (8.0 / 6.0, -1.0 / 6.0);
        [
            vec![(mesh.index(i + 1, j), mesh.index(i - 1, j), a), (mesh.index(i + 2, j), mesh.index(i - 2, j), b)],
            vec![
                (mesh.index(i, j + 1), mesh.index(i, j + nt - 1), a),
                (mesh.index(i, j + 2), mesh.index(i, j + nt - 2), b),
            ],
        ]
    } else {
        [
            vec![(mesh.index(i + 1, j), mesh.index(i - 1, j), 1.0)],
            vec![(mesh.index(i, j + 1), mesh.index(i, j + nt - 1), 1.0)],
        ]
    };
    let image = |k: usize| -> Result<Vec<f64>> {
        let g = u.jet(k)?.grad * scale;
        model.exp_ambient(mesh.ambient(k), displacement(&g, p, 0.0).as_slice())
    };
    let center = image(x)?;
    let xa = mesh.ambient(x);
    let mut dom = Matrix2::<f64>::zeros();
    let mut img = Matrix2::<f64>::zeros();
    for (col, stencil) in stencils.iter().enumerate() {
        for &(a, b, w) in stencil {
            let (da, db) = (model.log_ambient(xa, mesh.ambient(a))?, model.log_ambient(xa, mesh.ambient(b))?);
            let (ia, ib) = (model.log_ambient(&center, &image(a)?)?, model.log_ambient(&center, &image(b)?)?);
            for r in 0..2 {
                dom[(r, col)] += w * (da[r] - db[r]);
                img[(r, col)] += w * (ia[r] - ib[r]);
            }
        }
    }
    Ok(img.determinant() / dom.determinant())
}

/// Closed-form and finite-difference Jacobians of `Φ_p` at a record's contact node.
pub fn jacobian_factorization(u: &ScalarField, record: &ContactRecord) -> Result<(f64, f64)> {
    if record.escaped || record.grad_norm() == 0.0 {
        return Err(Error::InvalidInput("record is escaped or has zero gradient".into()));
    }
    let model = u.mesh().model();
    let closed = jacobian_closed(model, &record.grad, &record.hess, record.p);
    let fd = jacobian_fd(u, record.contact, record.p, 1.0 / record.opening)?;
    Ok((closed, fd))
}

/// One row per record: vertex, contact node, |grad|, recovery error, min eig, Jacobian pair.
pub fn write_contact_csv<W: Write>(records: &[ContactRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::InvalidInput(e.to_string());
    out.write_record([
        "vertex_x",
        "vertex_y",
        "contact",
        "escaped",
        "grad_norm",
        "recovery_error",
        "psd_min_eig",
        "jacobian_closed",
        "jacobian_fd",
    ])
    .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
    for r in records {
        out.write_record([
            format!("{:.12e}", r.vertex.coords[0]),
            format!("{:.12e}", r.vertex.coords[1]),
            r.contact.to_string(),
            r.escaped.to_string(),
            format!("{:.12e}", r.grad_norm()),
            opt(r.recovery_error),
            opt(r.psd_min_eig),
            opt(r.jacobian_closed),
            opt(r.jacobian_fd),
        ])
        .map_err(io)?;
    }
    out.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn mesh(model: ManifoldModel, nr: usize, nt: usize) -> Arc<GeodesicBallMesh> {
        Arc::new(GeodesicBallMesh::build(model, Point::origin(2), 1.0, nr, nt).unwrap())
    }

    fn whole(m: &GeodesicBallMesh) -> Ball {
        m.ball()
    }

    #[test]
    fn zero_field_contacts_at_vertex() {
        let m = mesh(ManifoldModel::hyperbolic(2, 1.0), 16, 16);
        let u = m.field_from_fn("u", |_| 0.0);
        let verts = VertexSet::points(vec![m.node(m.index(5, 3)).clone(), Point::origin(2)]);
        let recs = compute_contact_set(&u, &verts, &whole(&m), &ContactOptions::new(3.0)).unwrap();
        assert_eq!(recs[0].contact, m.index(5, 3));
        assert_eq!(recs[1].contact, 0);
        for r in &recs {
            assert!(!r.escaped);
            assert_eq!(r.grad_norm(), 0.0);
            assert!(r.recovery_error.unwrap() < 1e-12);
            assert!(r.psd_min_eig.is_none());
        }
    }

    #[test]
    fn linear_field_contact_offset() {
        let m = mesh(ManifoldModel::euclidean(2), 64, 128);
        let u = m.field_from_fn("u", |x| x.coords[0]);
        let y = Point::new(&[0.5, 0.1]);
        let recs = compute_contact_set(&u, &VertexSet::points(vec![y]), &whole(&m), &ContactOptions::new(3.0)).unwrap();
        let x = &recs[0].contact_point.coords;
        let h = m.h();
        assert!(((x[0] + 0.5).powi(2) + (x[1] - 0.1).powi(2)).sqrt() < 2.0 * h);
        assert!(verify_vertex_recovery(&recs[0], h).unwrap().pass);
        assert!(recs[0].psd_min_eig.unwrap() >= -3.0 * h);
    }

    #[test]
    fn radial_power_contact_is_midpoint() {
        let m = mesh(ManifoldModel::euclidean(2), 64, 128);
        let h = m.h();
        for p in [1.5, 2.0, 3.0] {
            let q = p / (p - 1.0);
            let u = m.field_from_fn("u", |x| (p - 1.0) / p * x.coords.norm().powf(q));
            let y = Point::new(&[0.3, -0.25]);
            let recs =
                compute_contact_set(&u, &VertexSet::points(vec![y.clone()]), &whole(&m), &ContactOptions::new(p))
                    .unwrap();
            let r = &recs[0];
            let mid = &y.coords * 0.5;
            assert!((&r.contact_point.coords - mid).norm() < 2.0 * h, "p = {p}");
            assert!(verify_vertex_recovery(r, h).unwrap().pass, "p = {p}");
            let (closed, fd) = jacobian_factorization(&u, r).unwrap();
            assert!((closed - 4.0).abs() < 1e-2, "p = {p}: {closed}");
            assert!((fd - 4.0).abs() < 1e-2, "p = {p}: {fd}");
            assert!(r.psd_min_eig.unwrap() > 0.0);
        }
    }

    #[test]
    fn phi_examples() {
        let model = ManifoldModel::euclidean(2);
        let x = Point::new(&[0.1, 0.2]);
        assert_eq!(phi_p(&model, &x, &[0.0, 0.0], 2.5).unwrap(), x);
        let y = phi_p(&model, &x, &[1.0, 0.0], 3.0).unwrap();
        assert!((y.coords[0] - 1.1).abs() < 1e-14 && (y.coords[1] - 0.2).abs() < 1e-14);
        let z = phi_p_delta(&model, &Point::origin(2), &[1.0, 0.0], 1.5, 3.0).unwrap();
        assert!((z.coords.norm() - 4f64.powf(-0.25)).abs() < 1e-14);
        assert!(matches!(phi_p(&model, &x, &[0.0, 0.0], 1.5), Err(Error::SingularGradient { .. })));
        assert_eq!(phi_p_delta(&model, &x, &[0.0, 0.0], 1.5, 0.1).unwrap(), x);
    }

    #[test]
    fn phi_delta_lies_on_geodesic_at_t_delta() {
        let model = ManifoldModel::hyperbolic(2, 1.0);
        let x = Point::new(&[0.2, -0.1]);
        let grad = [0.6, 0.3];
        let p = 1.5;
        let full = phi_p(&model, &x, &grad, p).unwrap();
        let len = model.distance(&x, &full);
        for delta in [1e-1, 1e-2, 1e-3] {
            let z = phi_p_delta(&model, &x, &grad, p, delta).unwrap();
            let t = t_delta(Vector2::new(grad[0], grad[1]).norm(), p, delta);
            assert!((model.distance(&x, &z) - t * len).abs() < 1e-12);
            assert!((model.distance(&z, &full) - (1.0 - t) * len).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_invariance_of_opening() {
        let m = mesh(ManifoldModel::spherical(2, 1.0), 24, 32);
        let u = m.field_from_fn("u", |x| (3.0 * x.coords[0]).sin() + x.coords[1].powi(2));
        let verts = VertexSet::from_ball(&m, &Ball::new(Point::origin(2), 0.4));
        let mut opts = ContactOptions::new(2.5);
        opts.opening = 2.0;
        let a = compute_contact_set(&u, &verts, &whole(&m), &opts).unwrap();
        let b = compute_contact_set(&u.scaled(0.5), &verts, &whole(&m), &ContactOptions::new(2.5)).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.contact, rb.contact);
        }
    }

    #[test]
    fn random_vertices_fill_ball_uniformly() {
        let model = ManifoldModel::hyperbolic(2, 1.0);
        let ball = Ball::new(Point::new(&[0.1, 0.0]), 0.8);
        let v = VertexSet::random_in_ball(&model, &ball, 4000, 3).unwrap();
        assert!((v.measure() - model.ball_volume(0.8).unwrap()).abs() < 1e-12);
        let inner = v.points.iter().filter(|y| model.distance(y, &ball.center) < 0.4).count() as f64 / 4000.0;
        let expected = model.ball_volume(0.4).unwrap() / model.ball_volume(0.8).unwrap();
        assert!((inner - expected).abs() < 0.03, "{inner} vs {expected}");
        assert!(v.points.iter().all(|y| model.distance(y, &ball.center) <= 0.8 + 1e-12));
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let m = mesh(ManifoldModel::euclidean(2), 8, 8);
        let u = m.field_from_fn("u", |_| 0.0);
        let recs =
            compute_contact_set(&u, &VertexSet::points(vec![Point::origin(2)]), &whole(&m), &ContactOptions::new(2.0))
                .unwrap();
        let mut buf = Vec::new();
        write_contact_csv(&recs, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
