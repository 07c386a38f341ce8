use std::sync::Arc;

use rayon::prelude::*;

use super::{kv, sub_seed, ExperimentConfig, SuiteOutput, Table};
use crate::abp::AbpVariant;
use crate::error::Result;
use crate::geometry::{ManifoldModel, Point};
use crate::harnack::{
    admissible_theta, ball_dichotomy_check, barrier_slack, calibrate_barrier, critical_constants,
    critical_density_check, harnack_quotient, harnack_solution, hoelder_decay, level_decay,
    level_decay_with_thresholds, spike_supersolution, superlevel_indicator, DecayOptions, BARRIER_SAMPLES,
};
use crate::mesh::{GeodesicBallMesh, ScalarField, StencilOrder};
use crate::operators::{EllipticParams, OperatorKind};
use crate::report::{CheckRow, Status};
use crate::solver::{make_supersolution, positive_trig_boundary, SupersolutionProfile, TrigBoundary, WellPlacement};
use crate::viscosity::{
    epsilon_ladder, inf_convolution, lipschitz_audit, lipschitz_bound, random_continuous_field,
    semiconcavity_audit, semiconcavity_bound,
};

const SPIKE_OFFSET: [f64; 2] = [0.05, 0.0];
const LOG_PROFILE_RATIO: f64 = 2.0;
const LOG_PROFILE_CAP: f64 = 6.0;
const PLATEAU_LEVELS: [f64; 3] = [0.5, 0.75, 1.0];
const DICHOTOMY_STRIDE: usize = 7;
const TRIG_MODES: usize = 4;
const MAX_COND_DECADES: f64 = 3.0;

fn mesh(model: ManifoldModel, radius: f64, n_r: usize, n_theta: usize) -> Result<Arc<GeodesicBallMesh>> {
    Ok(Arc::new(GeodesicBallMesh::build(model, Point::origin(2), radius, n_r, n_theta)?))
}

fn tag(p: f64, curvature: f64) -> String {
    kv(&[("p", p.to_string()), ("curvature", curvature.to_string())])
}

/// Inf-convolution ladder audits on random fields, plus the `|x|` closed form.
pub fn infconv_demo(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let slack = cfg.tolerances.infconv_slack;
    let mut jobs = Vec::new();
    for &c in &cfg.model.selftest_curvatures {
        let model = ManifoldModel::new(2, c)?;
        let m = mesh(model, cfg.scales.r0, cfg.mesh.infconv_n_r, cfg.mesh.infconv_n_theta)?;
        for i in 0..cfg.run.fields as u64 {
            jobs.push((m.clone(), sub_seed(cfg.run.seed, 5000 + i)));
        }
    }
    let per_field: Result<Vec<(Vec<CheckRow>, Vec<Vec<f64>>)>> = jobs
        .par_iter()
        .map(|(m, seed)| {
            let u = random_continuous_field(m, *seed);
            let h = m.h();
            let t = format!("{};seed={seed}", kv(&[("curvature", m.model().curvature().to_string())]));
            let ladder = epsilon_ladder(&u, 3);
            let mut below = f64::NEG_INFINITY;
            let (mut lip, mut sc) = (0.0f64, 0.0f64);
            let mut results = Vec::new();
            let mut table = Vec::new();
            for &eps in &ladder {
                let r = inf_convolution(&u, eps)?;
                for k in 0..m.len() {
                    below = below.max(r.field.value(k) - u.value(k));
                }
                let la = lipschitz_audit(&r);
                let sa = semiconcavity_audit(&r)?;
                lip = lip.max(la / lipschitz_bound(m, eps));
                sc = sc.max(sa / semiconcavity_bound(m, eps));
                table.push(vec![m.model().curvature(), *seed as f64, eps, r.diagnostics.max_gap, la, sa]);
                results.push(r);
            }
            let mut monotone = f64::NEG_INFINITY;
            let mut gaps_grow = f64::NEG_INFINITY;
            for w in results.windows(2) {
                for k in 0..m.len() {
                    monotone = monotone.max(w[0].field.value(k) - w[1].field.value(k));
                }
                gaps_grow = gaps_grow.max(w[1].diagnostics.max_gap - w[0].diagnostics.max_gap);
            }
            let rows = vec![
                CheckRow::upper("lem-infconv-properties", format!("{t};u_eps<=u"), below, 0.0),
                CheckRow::upper("lem-infconv-properties", format!("{t};monotone-in-eps"), monotone, 0.0),
                CheckRow::upper("lem-infconv-properties", format!("{t};uniform-convergence"), gaps_grow, 0.0),
                CheckRow::upper("lem-infconv-properties", format!("{t};lipschitz/bound"), lip, 1.0 + slack * h),
                CheckRow::upper("lem-infconv-properties", format!("{t};semiconcavity/bound"), sc, 1.0 + slack * h),
            ];
            Ok((rows, table))
        })
        .collect();
    let mut out = SuiteOutput::new("infconv-demo");
    let mut table = Table::new("ladder", &["curvature", "seed", "epsilon", "max_gap", "lipschitz", "semiconcavity"]);
    for (rows, t) in per_field? {
        out.rows.extend(rows);
        for r in t {
            table.push(r);
        }
    }
    out.tables.push(table);
    out.rows.extend(abs_closed_form(cfg)?);
    Ok(out)
}

/// `u = |x|`: `u_ε = |x|²/(2ε)` inside `B_ε`, `|x| - ε/2` outside, semiconcavity `1/ε`.
fn abs_closed_form(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    let (n_r, n_theta) = (40, 16);
    let m = mesh(ManifoldModel::euclidean(2), cfg.scales.r0, n_r, n_theta)?;
    let u = m.field_from_fn("u", |x| x.coords.norm());
    // ε a multiple of h puts the continuous minimizer on a node of the ray
    let eps = 8.0 * m.h();
    let r = inf_convolution(&u, eps)?;
    let mut err: f64 = 0.0;
    for k in 0..m.len() {
        let x = m.polar(k).0;
        let exact = if x <= eps { x * x / (2.0 * eps) } else { x - eps / 2.0 };
        err = err.max((r.field.value(k) - exact).abs());
    }
    let sc = semiconcavity_audit(&r)?;
    let params = kv(&[("case", "abs".into()), ("eps", format!("{eps}")), ("n_r", n_r.to_string())]);
    Ok(vec![
        CheckRow::upper("lem-infconv-properties", format!("{params};section"), err, cfg.tolerances.infconv_closed_form),
        CheckRow::upper(
            "lem-infconv-properties",
            format!("{params};semiconcavity*eps-1"),
            (sc * eps - 1.0).abs(),
            cfg.tolerances.infconv_closed_form,
        ),
    ])
}

/// Barrier calibration over `p × κ × βR₀` and the Euclidean `p = 2` hand value.
pub fn barrier_calibrate(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let r = cfg.scales.r;
    let mut grid = Vec::new();
    for model in cfg.models()? {
        for &p in &cfg.params.p {
            for &br in &cfg.params.barrier_beta_r0 {
                grid.push((model, p, br));
            }
        }
    }
    let specs: Result<Vec<_>> = grid
        .par_iter()
        .map(|&(model, p, br)| {
            let params = EllipticParams::new(p, 1.0, 1.0, br / cfg.scales.r0, 0.0)?;
            calibrate_barrier(&model, &params, r, &Point::origin(2)).map(|s| (model, br, s))
        })
        .collect();
    let mut out = SuiteOutput::new("barrier-calibrate");
    let mut table = Table::new("grid", &["p", "curvature", "beta_r0", "alpha", "m_tilde", "slack"]);
    for (model, br, spec) in specs? {
        let mut row = spec.row(model.kappa());
        row.params.push_str(&format!(";betaR0={br}"));
        row.status = if spec.invariants_hold(cfg.tolerances.barrier) { row.status } else { Status::Fail };
        out.rows.push(row);
        table.push(vec![spec.p, model.curvature(), br, spec.alpha, spec.m_tilde, spec.slack]);
    }
    let flat = ManifoldModel::euclidean(2);
    let hand = calibrate_barrier(&flat, &EllipticParams::p_laplace(2.0)?, r, &Point::origin(2))?;
    let dev = (hand.alpha - 2.0).abs() + (hand.m_tilde - 312.5).abs();
    out.rows.push(CheckRow::upper("lem-barrier", "hand;p=2;alpha=2;Mtilde=312.5".into(), dev, 0.0));
    let slack = barrier_slack(&flat, 2.0, 0.0, r, 2.0, 312.5, BARRIER_SAMPLES)?;
    out.rows.push(CheckRow::lower("lem-barrier", "hand;p=2;slack".into(), slack, 2.0 - cfg.tolerances.barrier));
    out.tables.push(table);
    Ok(out)
}

/// Spike supersolutions, the logarithmic profile, critical density and the covering dichotomy.
pub fn level_decay_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let tol = &cfg.tolerances;
    let big_r = cfg.scales.decay_radius;
    let x0 = Point::origin(2);
    let z = Point::new(&SPIKE_OFFSET);
    let options = DecayOptions { m_tilde: tol.decay_m_tilde, delta_min: tol.delta_min, ..DecayOptions::default() };
    let mut jobs = Vec::new();
    for model in cfg.models()? {
        let m = Arc::new(
            GeodesicBallMesh::build(model, x0.clone(), cfg.scales.r0, cfg.mesh.decay_n_r, cfg.mesh.decay_n_theta)?
                .with_order(StencilOrder::Second),
        );
        for &p in &cfg.params.p {
            jobs.push((m.clone(), p));
        }
    }
    let spikes: Result<Vec<(f64, f64, ScalarField)>> = jobs
        .par_iter()
        .map(|(m, p)| {
            let height = if *p > 2.0 { 2.5 } else { 4.0 };
            Ok((*p, m.model().curvature(), spike_supersolution(m, *p, &x0, big_r, &z, height)?))
        })
        .collect();
    let spikes = spikes?;

    let mut out = SuiteOutput::new("level-decay");
    let mut levels = Table::new("levels", &["p", "curvature", "k", "threshold", "measure"]);
    for (p, c, u) in &spikes {
        let rep = level_decay(u, big_r, &x0, &EllipticParams::p_laplace(*p)?, &options)?;
        let mut row = rep.row();
        row.params = format!("{};spike;{}", tag(*p, *c), row.params);
        if let Some(e) = rep.epsilon {
            row.params.push_str(&format!(";epsilon={e:.4}"));
        }
        out.rows.push(row);
        for (k, (t, mk)) in rep.thresholds.iter().zip(&rep.measures).enumerate() {
            levels.push(vec![*p, *c, k as f64, *t, *mk]);
        }
        if *p == 2.0 {
            for k in 1..3 {
                let f = superlevel_indicator(u, tol.decay_m_tilde.powi(k));
                let e = superlevel_indicator(u, tol.decay_m_tilde.powi(k + 1));
                let d = ball_dichotomy_check(&e, &f, big_r, &x0, tol.dichotomy_delta, DICHOTOMY_STRIDE)?;
                let mut row = d.row();
                row.params = format!("{};level={k};{}", tag(*p, *c), row.params);
                out.rows.push(row);
            }
        }
    }
    out.rows.extend(log_profile(cfg, &mut levels)?);
    out.rows.extend(critical_density(cfg)?);
    out.tables.push(levels);
    Ok(out)
}

/// `u = ln(5r/|x|)` capped: `|{u > k ln M}| ∝ M^{-2k}` exactly.
fn log_profile(cfg: &ExperimentConfig, table: &mut Table) -> Result<Vec<CheckRow>> {
    let r = cfg.scales.r;
    let m = mesh(ManifoldModel::euclidean(2), cfg.scales.r0, cfg.mesh.fine_n_r, cfg.mesh.fine_n_theta)?;
    let u = m.field_from_fn("u", |x| (5.0 * r / x.coords.norm()).ln().min(LOG_PROFILE_CAP));
    let thresholds: Vec<f64> = (1..=4).map(|k| k as f64 * LOG_PROFILE_RATIO.ln()).collect();
    let radius = (5.0 * r).min(cfg.scales.r0);
    let rep = level_decay_with_thresholds(&u, radius, &Point::origin(2), &thresholds, cfg.tolerances.delta_min, 0.0);
    let expected = (-2.0 * LOG_PROFILE_RATIO.ln()).exp();
    let mut rows = Vec::new();
    for (k, pair) in rep.measures.windows(2).enumerate() {
        let ratio = pair[1] / pair[0];
        table.push(vec![f64::NAN, 0.0, k as f64, thresholds[k], pair[0]]);
        rows.push(CheckRow::upper(
            "thm-l-epsilon",
            format!("log-profile;M={LOG_PROFILE_RATIO};k={k};ratio={ratio:.6}"),
            (ratio / expected - 1.0).abs(),
            cfg.tolerances.log_profile,
        ));
    }
    if rows.len() < 2 {
        rows.push(CheckRow::new("thm-l-epsilon", "log-profile;levels".into(), rows.len() as f64, 2.0, -1.0, Status::Fail));
    }
    Ok(rows)
}

/// Euclidean `p = 2` solved supersolutions against the critical-density corollary.
fn critical_density(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    let p = 2.0;
    let r = cfg.scales.r;
    let model = ManifoldModel::euclidean(2);
    let params = EllipticParams::p_laplace(p)?;
    let m = mesh(model, cfg.scales.r0, cfg.mesh.n_r, cfg.mesh.n_theta)?;
    let constants = critical_constants(&model, AbpVariant::Degenerate, &params, r, cfg.scales.r0)?;
    // superharmonic caps c·M̃(2 - d²/4r²): the premise holds for c > 1/2 and fails at c = 1/2
    let z0 = Point::new(&[0.1, 0.0]);
    let mut rows = Vec::new();
    for c in PLATEAU_LEVELS {
        let u = m.field_from_fn("u", |x| {
            let d = model.distance(x, &z0);
            c * constants.m_tilde * (2.0 - d * d / (4.0 * r * r))
        });
        let rep = critical_density_check(&u, r, &z0, 1.0, &params, &constants, 0.0)?;
        let mut row = rep.row();
        row.params = format!("plateau={c};{}", row.params);
        rows.push(row);
    }
    let solved: Result<Vec<CheckRow>> = (0..cfg.run.critical_instances as u64)
        .into_par_iter()
        .map(|s| {
            let angle = 0.7 * s as f64;
            let z0 = Point::new(&[0.1 * angle.cos(), 0.1 * angle.sin()]);
            let placement = WellPlacement { z0: z0.clone(), r };
            let seed = sub_seed(cfg.run.seed, 3000 + s);
            let ss = make_supersolution(
                &m,
                &params,
                OperatorKind::PLaplacian,
                SupersolutionProfile::SolvedWithWell,
                &placement,
                seed,
            )?;
            let theta = admissible_theta(&ss.field, r, &z0, p)?;
            let rep = critical_density_check(&ss.field, r, &z0, theta, &params, &constants, 0.0)?;
            let mut row = rep.row();
            row.params = format!("seed={seed};{}", row.params);
            if !rep.failed_hypotheses.is_empty() {
                row.params.push_str(&format!(";skipped={}", rep.failed_hypotheses.join("|")));
            }
            Ok(row)
        })
        .collect();
    rows.extend(solved?);
    Ok(rows)
}

struct SweepCase {
    curvature: f64,
    p: f64,
    index: usize,
    seed: u64,
    boundary: TrigBoundary,
    cond: f64,
}

fn sweep_cases(cfg: &ExperimentConfig) -> Result<Vec<SweepCase>> {
    let n = cfg.run.sweep_instances;
    let mut cases = Vec::new();
    for model in cfg.models()? {
        for &p in &cfg.params.p {
            for i in 0..n {
                let seed = sub_seed(cfg.run.seed, 100 + i as u64);
                let cond = 10f64.powf(MAX_COND_DECADES * (i + 1) as f64 / n as f64);
                let boundary = positive_trig_boundary(seed, TRIG_MODES, cond)?;
                cases.push(SweepCase { curvature: model.curvature(), p, index: i, seed, boundary, cond });
            }
        }
    }
    Ok(cases)
}

fn sweep_meshes(cfg: &ExperimentConfig, n_r: &[usize]) -> Result<Vec<(f64, usize, Arc<GeodesicBallMesh>)>> {
    let mut out = Vec::new();
    for model in cfg.models()? {
        for &nr in n_r {
            out.push((model.curvature(), nr, mesh(model, cfg.scales.r0, nr, cfg.mesh.sweep_n_theta)?));
        }
    }
    Ok(out)
}

fn sweep_mesh(meshes: &[(f64, usize, Arc<GeodesicBallMesh>)], curvature: f64, n_r: usize) -> &Arc<GeodesicBallMesh> {
    &meshes.iter().find(|(c, nr, _)| *c == curvature && *nr == n_r).expect("mesh built for every case").2
}

/// Explicit quotients at the fine mesh, then the random positive-boundary sweep across the
/// radial refinement ladder.
pub fn harnack_sweep(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let tol = &cfg.tolerances;
    let big_r = cfg.scales.harnack_radius;
    let o = Point::origin(2);
    let mut out = SuiteOutput::new("harnack-sweep");

    let flat = mesh(ManifoldModel::euclidean(2), cfg.scales.r0, cfg.mesh.fine_n_r, cfg.mesh.fine_n_theta)?;
    let explicit = [
        ("harmonic-linear", 2.0, 3.0, flat.field_from_fn("u", |x| 2.0 + x.coords[0] / big_r)),
        ("radial-p3", 3.0, 2.0, flat.field_from_fn("u", |x| 2.0 - (x.coords.norm() / big_r).sqrt())),
    ];
    for (name, p, expected, u) in explicit {
        let rep = harnack_quotient(&u, big_r, &o, p, 0.0)?;
        let params = format!("explicit={name};p={p};R={big_r};C={:.6};n_r={}", rep.c_emp, flat.n_r());
        let mut row = CheckRow::upper("thm-harnack", params, (rep.c_emp / expected - 1.0).abs(), tol.harnack_explicit);
        if rep.status == Status::Skip {
            row.status = Status::Skip;
        }
        out.rows.push(row);
    }

    let ladder = &cfg.mesh.sweep_n_r;
    let meshes = sweep_meshes(cfg, ladder)?;
    let cases = sweep_cases(cfg)?;
    let results: Result<Vec<Vec<(usize, f64, Status)>>> = cases
        .par_iter()
        .map(|c| {
            ladder
                .iter()
                .map(|&nr| {
                    let m = sweep_mesh(&meshes, c.curvature, nr);
                    let u = harnack_solution(m, c.p, 0.0, &c.boundary)?;
                    let rep = harnack_quotient(&u, big_r, &o, c.p, 0.0)?;
                    Ok((nr, rep.c_emp, rep.status))
                })
                .collect()
        })
        .collect();
    let mut table = Table::new("sweep", &["p", "curvature", "instance", "cond", "n_r", "c_emp"]);
    for (c, res) in cases.iter().zip(results?) {
        let t = format!("{};seed={};cond={:.3}", tag(c.p, c.curvature), c.seed, c.cond);
        for &(nr, ce, status) in &res {
            table.push(vec![c.p, c.curvature, c.index as f64, c.cond, nr as f64, ce]);
            let mut row = CheckRow::new("thm-harnack", format!("{t};n_r={nr}"), ce, f64::NAN, f64::NAN, status);
            if status == Status::Pass {
                row.margin = ce - 1.0;
            }
            out.rows.push(row);
        }
        let base = res[0].1;
        let spread = res.iter().map(|r| (r.1 / base - 1.0).abs()).fold(0.0, f64::max);
        let mut row = CheckRow::upper("thm-harnack", format!("{t};stability"), spread, tol.harnack_stability);
        if res.iter().any(|r| r.2 == Status::Skip) {
            row.status = Status::Skip;
        }
        out.rows.push(row);
    }
    out.tables.push(table);
    Ok(out)
}

/// Oscillation decay of the sweep solutions at the coarsest ladder mesh, plus a linear field.
pub fn hoelder(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let big_r = cfg.scales.harnack_radius;
    let o = Point::origin(2);
    let mut out = SuiteOutput::new("hoelder");
    let mut table = Table::new("oscillation", &["p", "curvature", "instance", "radius", "osc"]);

    let flat = mesh(ManifoldModel::euclidean(2), cfg.scales.r0, cfg.mesh.fine_n_r, cfg.mesh.fine_n_theta)?;
    let lin = flat.field_from_fn("u", |x| x.coords[0]);
    let rep = hoelder_decay(&lin, big_r, &o)?;
    out.rows.push(CheckRow::upper("cor-hoelder", "linear;alpha-1".into(), (rep.alpha - 1.0).abs(), 0.02));

    let nr = cfg.mesh.sweep_n_r[0];
    let meshes = sweep_meshes(cfg, &[nr])?;
    let cases = sweep_cases(cfg)?;
    let reports: Result<Vec<_>> = cases
        .par_iter()
        .map(|c| {
            let u = harnack_solution(sweep_mesh(&meshes, c.curvature, nr), c.p, 0.0, &c.boundary)?;
            hoelder_decay(&u, big_r, &o)
        })
        .collect();
    for (c, rep) in cases.iter().zip(reports?) {
        let t = format!("{};seed={};cond={:.3};n_r={nr}", tag(c.p, c.curvature), c.seed, c.cond);
        out.rows.push(rep.row(&t));
        for (rho, osc) in rep.radii.iter().zip(&rep.osc) {
            table.push(vec![c.p, c.curvature, c.index as f64, *rho, *osc]);
        }
    }
    out.tables.push(table);
    Ok(out)
}
