use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{kv, sub_seed, ExperimentConfig, SuiteOutput, Table};
use crate::error::Result;
use crate::geometry::{comparison_h, comparison_s, ManifoldModel, Point, TangentVector};
use crate::mesh::GeodesicBallMesh;
use crate::operators::{pucci_plus, sym_eigenvalues};
use crate::report::CheckRow;

const JAC_STEP: f64 = 1e-5;
const HESS_STEP: f64 = 1e-3;
const MONOTONE_TIMES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn random_vector(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: f64 = v.iter().map(|x| x * x).sum();
        if s <= 1.0 {
            return v.into_iter().map(|x| x * radius).collect();
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = random_vector(rng, n, 1.0);
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s > 0.1 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

fn model_tag(model: &ManifoldModel) -> String {
    kv(&[("n", model.dim().to_string()), ("curvature", model.curvature().to_string())])
}

/// Sampling radius keeping every pair and every geodesic inside the admissible ball.
fn sample_radius(model: &ManifoldModel) -> f64 {
    (0.45 * model.radius_cap()).min(0.7)
}

fn exp_at(model: &ManifoldModel, x: &Point, v: &[f64]) -> Result<Point> {
    model.exp_map(&TangentVector::new(x.clone(), v))
}

/// `sn_ratio(|w|)^{n-1} |det ∂w/∂ξ|` for `w = exp_x(ξ)` in normal coordinates at the origin.
fn jac_exp_fd(model: &ManifoldModel, x: &Point, xi: &[f64]) -> Result<f64> {
    let n = model.dim();
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut plus = xi.to_vec();
        let mut minus = xi.to_vec();
        plus[c] += JAC_STEP;
        minus[c] -= JAC_STEP;
        let a = exp_at(model, x, &plus)?;
        let b = exp_at(model, x, &minus)?;
        for r in 0..n {
            j[(r, c)] = (a.coords[r] - b.coords[r]) / (2.0 * JAC_STEP);
        }
    }
    let w = exp_at(model, x, xi)?;
    Ok(model.sn_ratio(w.coords.norm()).powi(n as i32 - 1) * j.determinant().abs())
}

/// Tangential eigenvalue of `D²(d²/2)` from the comparison functions directly.
fn tangential_eigenvalue(model: &ManifoldModel, d: f64) -> Result<f64> {
    let c = model.curvature();
    if c < 0.0 {
        comparison_h((-c).sqrt() * d)
    } else if c > 0.0 {
        let t = c.sqrt() * d;
        Ok(if t == 0.0 { 1.0 } else { t * t.cos() / t.sin() })
    } else {
        Ok(1.0)
    }
}

struct ModelStats {
    roundtrip: f64,
    inverse: f64,
    dist_log: f64,
    triangle: f64,
    jac_fd: f64,
    jac_comparison: f64,
    hess_fd: f64,
    hess_eig: f64,
    pucci: f64,
    monotone: f64,
}

fn model_stats(model: &ManifoldModel, samples: usize, seed: u64) -> Result<ModelStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim();
    let rho = sample_radius(model);
    let kappa = model.kappa();
    let mut s = ModelStats {
        roundtrip: 0.0,
        inverse: 0.0,
        dist_log: 0.0,
        triangle: f64::NEG_INFINITY,
        jac_fd: 0.0,
        jac_comparison: f64::NEG_INFINITY,
        hess_fd: 0.0,
        hess_eig: 0.0,
        pucci: f64::NEG_INFINITY,
        monotone: f64::INFINITY,
    };
    for i in 0..samples {
        let x = Point::new(&random_vector(&mut rng, n, rho));
        let v = random_vector(&mut rng, n, rho);
        let y = exp_at(model, &x, &v)?;
        let back = model.log_map(&x, &y)?;
        s.roundtrip = s.roundtrip.max((back.components - DVector::from_column_slice(&v)).norm());

        let z = Point::new(&random_vector(&mut rng, n, rho));
        let w = model.log_map(&x, &z)?;
        let z2 = model.exp_map(&w)?;
        s.inverse = s.inverse.max(model.distance(&z, &z2));
        s.dist_log = s.dist_log.max((model.distance(&x, &z) - w.norm()).abs());
        let t = model.distance(&x, &z) - model.distance(&x, &y) - model.distance(&y, &z);
        s.triangle = s.triangle.max(t);

        // the costlier checks run on every tenth sample
        if i % 10 != 0 {
            continue;
        }
        let tv = TangentVector::new(x.clone(), &v);
        let closed = model.jac_exp(&tv)?;
        let fd = jac_exp_fd(model, &x, &v)?;
        s.jac_fd = s.jac_fd.max((closed - fd).abs() / closed.max(fd));
        let bound = comparison_s(kappa.sqrt() * tv.norm())?.powi(n as i32 - 1);
        let excess = if model.curvature() < 0.0 { (closed - bound).abs() } else { closed - bound };
        s.jac_comparison = s.jac_comparison.max(excess / bound);

        let d = model.distance(&x, &z);
        if d > 0.05 {
            let hess = model.hess_half_dist_sq(&x, &z)?;
            let e = unit_vector(&mut rng, n);
            let f = |p: &Point| 0.5 * model.distance(p, &z).powi(2);
            let plus = exp_at(model, &x, &e.iter().map(|c| HESS_STEP * c).collect::<Vec<_>>())?;
            let minus = exp_at(model, &x, &e.iter().map(|c| -HESS_STEP * c).collect::<Vec<_>>())?;
            let q = (f(&plus) - 2.0 * f(&x) + f(&minus)) / (HESS_STEP * HESS_STEP);
            let ev = DVector::from_column_slice(&e);
            let exact = (ev.transpose() * &hess * &ev)[(0, 0)];
            s.hess_fd = s.hess_fd.max((q - exact).abs());

            let mut expected = vec![tangential_eigenvalue(model, d)?; n - 1];
            expected.push(1.0);
            expected.sort_by(f64::total_cmp);
            let got = sym_eigenvalues(&hess);
            let err = got.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            s.hess_eig = s.hess_eig.max(err);
            let pb = 1.0 + (n - 1) as f64 * comparison_h(kappa.sqrt() * d)?;
            let gap = pucci_plus(&hess, 1.0, 1.0) - pb;
            s.pucci = s.pucci.max(if model.curvature() <= 0.0 { gap.abs() } else { gap });
        }

        let xi = random_vector(&mut rng, n, rho);
        let end = model.hess_half_dist_sq(&x, &exp_at(model, &x, &xi)?)?;
        for &t in &MONOTONE_TIMES {
            let mid = exp_at(model, &x, &xi.iter().map(|c| t * c).collect::<Vec<_>>())?;
            let m = model.hess_half_dist_sq(&x, &mid)? - &end * t;
            s.monotone = s.monotone.min(sym_eigenvalues(&m)[0]);
        }
    }
    Ok(s)
}

fn comparison_rows(tol: f64) -> Result<Vec<CheckRow>> {
    let mut grid: Vec<f64> = (0..=400).map(|i| i as f64 * 5e-7).collect();
    grid.extend((1..=10_000).map(|i| i as f64 * 1e-3));
    let mut mono: f64 = 0.0;
    for w in grid.windows(2) {
        mono = mono.min(comparison_s(w[1])? - comparison_s(w[0])?);
        mono = mono.min(comparison_h(w[1])? - comparison_h(w[0])?);
    }
    let mut direct: f64 = 0.0;
    for i in 1..=1000 {
        let t = i as f64 * 1e-2;
        direct = direct.max(((comparison_s(t)? - t.sinh() / t) / (t.sinh() / t)).abs());
        direct = direct.max(((comparison_h(t)? - t / t.tanh()) / (t / t.tanh())).abs());
    }
    let at_zero = (comparison_s(0.0)? - 1.0).abs() + (comparison_h(0.0)? - 1.0).abs();
    Ok(vec![
        CheckRow::lower("def-comparison", "monotone;grid=0..10".into(), mono, -1e-15),
        CheckRow::upper("def-comparison", "direct-evaluation;tau=0.01..10".into(), direct, 1e-14),
        CheckRow::upper("def-comparison", "S(0)=H(0)=1".into(), at_zero, tol),
        CheckRow::upper("def-comparison", "S(1)=sinh(1)".into(), (comparison_s(1.0)? - 1f64.sinh()).abs(), tol),
    ])
}

fn example_rows(tol: f64) -> Result<Vec<CheckRow>> {
    let o = Point::origin(2);
    let e2 = ManifoldModel::euclidean(2);
    let h2 = ManifoldModel::hyperbolic(2, 1.0);
    let s2 = ManifoldModel::spherical(2, 1.0);
    let h3 = ManifoldModel::hyperbolic(3, 1.0);
    let mut rows = Vec::new();
    let jac = |m: &ManifoldModel, len: f64| m.jac_exp(&TangentVector::new(o.clone(), &[len, 0.0]));
    rows.push(CheckRow::upper("lem-jacobian-exp", "euclidean;|v|=0.7".into(), (jac(&e2, 0.7)? - 1.0).abs(), tol));
    rows.push(CheckRow::upper("lem-jacobian-exp", "hyperbolic;|v|=1".into(), (jac(&h2, 1.0)? - 1f64.sinh()).abs(), tol));
    rows.push(CheckRow::upper("lem-jacobian-exp", "spherical;|v|=pi/2".into(), (jac(&s2, PI / 2.0)? - 2.0 / PI).abs(), tol));

    let y = Point::new(&[0.3, -0.4]);
    let id = DMatrix::<f64>::identity(2, 2);
    rows.push(CheckRow::upper(
        "lem-hess-dist-sqrd",
        "euclidean;identity".into(),
        (e2.hess_half_dist_sq(&o, &y)? - &id).amax(),
        tol,
    ));
    rows.push(CheckRow::upper(
        "lem-hess-dist-sqrd",
        "hyperbolic;x=y".into(),
        (h2.hess_half_dist_sq(&y, &y)? - &id).amax(),
        tol,
    ));
    let quarter = s2.hess_half_dist_sq(&o, &Point::new(&[PI / 2.0, 0.0]))?;
    let diag = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0]));
    rows.push(CheckRow::upper("lem-hess-dist-sqrd", "spherical;d=pi/2".into(), (quarter - diag).amax(), tol));

    rows.push(CheckRow::upper("def-pucci-ricci", "euclidean".into(), e2.pucci_ricci_lower(1.0, 2.0)?.abs(), tol));
    rows.push(CheckRow::upper(
        "def-pucci-ricci",
        "hyperbolic;n=3;lambda=1;Lambda=2".into(),
        (h3.pucci_ricci_lower(1.0, 2.0)? + 4.0).abs(),
        tol,
    ));
    rows.push(CheckRow::upper(
        "def-pucci-ricci",
        "spherical;lambda=0.5;Lambda=1".into(),
        (s2.pucci_ricci_lower(0.5, 1.0)? - 0.5).abs(),
        tol,
    ));

    let mut vol: f64 = 0.0;
    for i in 1..=20 {
        let r = i as f64 * 0.1;
        vol = vol.max(((e2.ball_volume(r)? - PI * r * r) / (PI * r * r)).abs());
        let hv = 2.0 * PI * (r.cosh() - 1.0);
        vol = vol.max(((h2.ball_volume(r)? - hv) / hv).abs());
    }
    rows.push(CheckRow::upper("thm-bishop-gromov", "closed-form;n=2;r=0.1..2".into(), vol, tol));
    let mut vol3: f64 = 0.0;
    for i in 1..=10 {
        let r = i as f64 * 0.1;
        let exact = PI * ((2.0 * r).sinh() - 2.0 * r);
        vol3 = vol3.max(((h3.ball_volume(r)? - exact) / exact).abs());
    }
    rows.push(CheckRow::upper("thm-bishop-gromov", "closed-form;hyperbolic;n=3".into(), vol3, 1e-9));
    rows.push(CheckRow::upper("lem-doubling-property", "euclidean;n=2".into(), (e2.doubling_constant(1.0)? - 4.0).abs(), tol));
    let dh = h2.doubling_constant(0.5)?;
    rows.push(CheckRow::upper("lem-doubling-property", "hyperbolic;R=0.5".into(), (dh - 4.0 * 1f64.cosh()).abs(), tol));
    let mut worst = f64::NEG_INFINITY;
    for m in [e2, h2, h3] {
        let big_r = 0.5;
        let d = m.doubling_constant(big_r)?;
        for i in 1..=50 {
            let r = big_r * i as f64 / 50.0;
            worst = worst.max(m.ball_volume(2.0 * r)? / (d * m.ball_volume(r)?) - 1.0);
        }
    }
    rows.push(CheckRow::upper("lem-doubling-property", "V(2r)<=D V(r);r<=0.5".into(), worst, 0.0));
    Ok(rows)
}

fn quadrature_rows(cfg: &ExperimentConfig, table: &mut Table) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for &c in &cfg.model.selftest_curvatures {
        let model = ManifoldModel::new(2, c)?;
        let mesh = Arc::new(GeodesicBallMesh::build(
            model,
            Point::origin(2),
            cfg.scales.r0,
            cfg.mesh.n_r,
            cfg.mesh.n_theta,
        )?);
        let exact = model.ball_volume(cfg.scales.r0)?;
        let rel = (mesh.total_weight() - exact).abs() / exact;
        table.push(vec![c, cfg.scales.r0, mesh.total_weight(), exact]);
        rows.push(CheckRow::upper(
            "thm-bishop-gromov",
            format!("quadrature;{}", model_tag(&model)),
            rel,
            cfg.tolerances.volume,
        ));
    }
    Ok(rows)
}

/// Every geometry invariant on randomized samples of each configured model.
pub fn geometry_selftest(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let tol = &cfg.tolerances;
    let mut out = SuiteOutput::new("geometry-selftest");
    out.rows.extend(comparison_rows(tol.closed_form)?);
    out.rows.extend(example_rows(tol.closed_form)?);
    let mut stream = 0;
    for &n in &cfg.model.selftest_dims {
        for &c in &cfg.model.selftest_curvatures {
            stream += 1;
            let model = ManifoldModel::new(n, c)?;
            let s = model_stats(&model, cfg.run.geometry_samples, sub_seed(cfg.run.seed, stream))?;
            let tag = model_tag(&model);
            let rows = [
                CheckRow::upper("geo-exp-log", format!("log-exp;{tag}"), s.roundtrip, tol.roundtrip),
                CheckRow::upper("geo-exp-log", format!("exp-log;{tag}"), s.inverse, tol.roundtrip),
                CheckRow::upper("geo-exp-log", format!("distance=|log|;{tag}"), s.dist_log, tol.roundtrip),
                CheckRow::upper("geo-exp-log", format!("triangle;{tag}"), s.triangle, tol.roundtrip),
                CheckRow::upper("lem-jacobian-exp", format!("finite-difference;{tag}"), s.jac_fd, tol.jac_fd),
                CheckRow::upper("thm-bishop-gromov", format!("jacobian<=S^(n-1);{tag}"), s.jac_comparison, tol.closed_form),
                CheckRow::upper("lem-hess-dist-sqrd", format!("finite-difference;{tag}"), s.hess_fd, tol.hess_fd),
                CheckRow::upper("lem-hess-dist-sqrd", format!("eigenvalues;{tag}"), s.hess_eig, tol.closed_form),
                CheckRow::upper("lem-pucci-bound", format!("M+<=Lambda(1+(n-1)H);{tag}"), s.pucci, tol.closed_form),
                CheckRow::lower("lem-hess-dist-sqrd-geodesic", format!("psd-monotone;{tag}"), s.monotone, -tol.psd_monotone),
            ];
            out.rows.extend(rows);
        }
    }
    let mut table = Table::new("volumes", &["curvature", "radius", "quadrature", "closed_form"]);
    out.rows.extend(quadrature_rows(cfg, &mut table)?);
    out.tables.push(table);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_jacobian_matches_on_sphere() {
        let m = ManifoldModel::spherical(2, 1.0);
        let x = Point::new(&[0.2, 0.1]);
        let v = [0.3, -0.5];
        let fd = jac_exp_fd(&m, &x, &v).unwrap();
        let closed = m.jac_exp(&TangentVector::new(x, &v)).unwrap();
        assert!((fd - closed).abs() < 1e-8, "{fd} {closed}");
    }

    #[test]
    fn tangential_eigenvalue_examples() {
        assert_eq!(tangential_eigenvalue(&ManifoldModel::euclidean(2), 0.4).unwrap(), 1.0);
        let s = tangential_eigenvalue(&ManifoldModel::spherical(2, 1.0), PI / 2.0).unwrap();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn geodesic_ode_oracle_agrees_with_exp() {
        // integrate the geodesic equation of dr² + sinh²r dθ² in polar coordinates
        let m = ManifoldModel::hyperbolic(2, 1.0);
        let x = Point::new(&[0.3, 0.2]);
        let v = [0.4, -0.6];
        let y = exp_at(&m, &x, &v).unwrap();
        let r0 = x.coords.norm();
        let th0 = x.coords[1].atan2(x.coords[0]);
        // frame at x: radial and angular unit vectors
        let (er, et) = ([th0.cos(), th0.sin()], [-th0.sin(), th0.cos()]);
        let vr = v[0] * er[0] + v[1] * er[1];
        let vt = v[0] * et[0] + v[1] * et[1];
        let rhs = |s: [f64; 4]| {
            let [r, _, pr, pt] = s;
            [pr, pt, r.sinh() * r.cosh() * pt * pt, -2.0 * r.cosh() / r.sinh() * pr * pt]
        };
        let mut s = [r0, th0, vr, vt / r0.sinh()];
        let steps = 2000;
        let dt = 1.0 / steps as f64;
        for _ in 0..steps {
            let add = |a: [f64; 4], b: [f64; 4], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2], a[3] + c * b[3]];
            let k1 = rhs(s);
            let k2 = rhs(add(s, k1, dt / 2.0));
            let k3 = rhs(add(s, k2, dt / 2.0));
            let k4 = rhs(add(s, k3, dt));
            for i in 0..4 {
                s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let ode = Point::new(&[s[0] * s[1].cos(), s[0] * s[1].sin()]);
        assert!(m.distance(&ode, &y) < 1e-10, "{:?} {:?}", ode, y);
    }

    #[test]
    fn selftest_passes_at_small_sample() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.geometry_samples = 100;
        let out = geometry_selftest(&cfg).unwrap();
        for r in &out.rows {
            assert_eq!(r.status, crate::report::Status::Pass, "{r:?}");
        }
    }
}
