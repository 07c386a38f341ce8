//! Barriers, critical density, level-set decay, ball dichotomy, Harnack quotients and
//! Hölder oscillation decay.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::abp::{delta_formula, m_tilde, AbpVariant};
use crate::error::{Error, Result};
use crate::geometry::{ManifoldModel, Point};
use crate::mesh::{Ball, GeodesicBallMesh, ScalarField};
use crate::operators::{radial_p_laplacian, EllipticParams, OperatorKind, RadialProfile};
use crate::report::{CheckRow, Status};
use crate::solver::{operator_field, solve, DirichletProblem, TrigBoundary};

/// Radial samples of the open annulus `(r, 5r]` used for the barrier slack.
pub const BARRIER_SAMPLES: usize = 10_000;
/// Exponent of the sliding function `τ{4/3 - d/R}^{-α}` reported as a diagnostic.
pub const TOUCHING_ALPHA: f64 = 2.0;

/// `v = M̃{r^α d^{-α} - 5^{-α}}` with `d = d(x, z₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub alpha: f64,
    pub m_tilde: f64,
    pub r: f64,
    pub z0: Point,
    pub beta: f64,
    pub p: f64,
    /// Minimum of `r^p Δ_p v - β r^p |∇v|^{p-1}` over the radial samples.
    pub slack: f64,
}

impl BarrierSpec {
    pub fn value(&self, d: f64) -> f64 {
        self.m_tilde * 5f64.powf(-self.alpha) * ((5.0 * self.r / d).powf(self.alpha) - 1.0)
    }

    pub fn profile(&self, d: f64) -> RadialProfile {
        barrier_profile(self.alpha, self.m_tilde, self.r, d)
    }

    /// Slack at least `2 - tol`, `v(4r) > 1`, `v(r) < M̃` and `v(5r) = 0`.
    pub fn invariants_hold(&self, tol: f64) -> bool {
        self.slack >= 2.0 - tol
            && self.value(4.0 * self.r) > 1.0
            && self.value(self.r) < self.m_tilde
            && self.value(5.0 * self.r) == 0.0
    }

    pub fn row(&self, kappa: f64) -> CheckRow {
        let params = format!(
            "p={};kappa={};beta={};r={};alpha={};Mtilde={}",
            self.p, kappa, self.beta, self.r, self.alpha, self.m_tilde
        );
        let mut row = CheckRow::lower("lem-barrier", params, self.slack, 2.0 - 1e-9);
        if !self.invariants_hold(1e-9) {
            row.status = Status::Fail;
        }
        row
    }
}

fn barrier_profile(alpha: f64, m: f64, r: f64, d: f64) -> RadialProfile {
    let q = (r / d).powf(alpha);
    RadialProfile { d1: -m * alpha * q / d, d2: m * alpha * (alpha + 1.0) * q / (d * d) }
}

/// Minimum of `r^p Δ_p v - β r^p |v'|^{p-1}` over `d = r + 4r i / samples`, `i = 1..=samples`.
pub fn barrier_slack(
    model: &ManifoldModel,
    p: f64,
    beta: f64,
    r: f64,
    alpha: f64,
    m: f64,
    samples: usize,
) -> Result<f64> {
    let rp = r.powf(p);
    let mut slack = f64::INFINITY;
    for i in 1..=samples {
        let d = r + 4.0 * r * i as f64 / samples as f64;
        let g = barrier_profile(alpha, m, r, d);
        let lap = radial_p_laplacian(g, d, model, p)?;
        slack = slack.min(rp * lap - beta * rp * g.d1.abs().powf(p - 1.0));
    }
    Ok(slack)
}

/// Smallest multiple of the 4-significant-digit grid step that is `>= x`.
fn ceil_to_grid(x: f64) -> f64 {
    let e = x.log10().floor() as i32 - 3;
    let scaled = x * 10f64.powi(-e);
    let k = (scaled * (1.0 - 1e-12)).ceil();
    if e >= 0 {
        k * 10f64.powi(e)
    } else {
        k / 10f64.powi(-e)
    }
}

fn next_on_grid(x: f64) -> f64 {
    let e = x.log10().floor() as i32 - 3;
    let k = (x * 10f64.powi(-e)).round() + 1.0;
    if e >= 0 {
        k * 10f64.powi(e)
    } else {
        k / 10f64.powi(-e)
    }
}

/// Smallest `α ∈ {2, 4, 8, …}` with positive slack, then the smallest grid `M̃` meeting every
/// barrier invariant. The drift bound is `params.beta`.
pub fn calibrate_barrier(model: &ManifoldModel, params: &EllipticParams, r: f64, z0: &Point) -> Result<BarrierSpec> {
    model.check_radius(5.0 * r)?;
    let p = params.p;
    let beta = params.beta;
    for j in 1..=12 {
        let alpha = 2f64.powi(j);
        let s1 = barrier_slack(model, p, beta, r, alpha, 1.0, BARRIER_SAMPLES)?;
        if !(s1 > 0.0) {
            continue;
        }
        let gap = 4f64.powf(-alpha) - 5f64.powf(-alpha);
        let lower = (2.0 / s1).powf(1.0 / (p - 1.0)).max(1.0 / gap).max(1.0);
        let mut m = ceil_to_grid(lower);
        for _ in 0..64 {
            let slack = barrier_slack(model, p, beta, r, alpha, m, BARRIER_SAMPLES)?;
            let spec = BarrierSpec { alpha, m_tilde: m, r, z0: z0.clone(), beta, p, slack };
            if spec.invariants_hold(1e-9) {
                return Ok(spec);
            }
            m = next_on_grid(m);
        }
    }
    Err(Error::NoBarrier(format!("p = {p}, beta = {beta}, r = {r}")))
}

/// `M̃` and `δ` of the critical-density statement at scale `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalConstants {
    pub m_tilde: f64,
    pub delta: f64,
    /// Barrier at scale `r/4` with drift `β + 1/R₀`.
    pub barrier: BarrierSpec,
}

/// `M̃ = p/(p-1) · M̃_p · (M̃_barrier + 1)` and `δ = δ_formula(r/4)`.
pub fn critical_constants(
    model: &ManifoldModel,
    variant: AbpVariant,
    params: &EllipticParams,
    r: f64,
    r0: f64,
) -> Result<CriticalConstants> {
    let p = params.p;
    let mut bp = *params;
    bp.beta = params.beta + 1.0 / r0;
    let barrier = calibrate_barrier(model, &bp, r / 4.0, &Point::origin(model.dim()))?;
    let m = p / (p - 1.0) * m_tilde(p) * (barrier.m_tilde + 1.0);
    let delta = delta_formula(model, variant, params, r / 4.0, r0)?;
    Ok(CriticalConstants { m_tilde: m, delta, barrier })
}

fn ball_fits(mesh: &GeodesicBallMesh, center: &Point, radius: f64) -> bool {
    mesh.model().distance(mesh.center(), center) + radius <= mesh.radius() * (1.0 + 1e-12)
}

/// Largest `R^p · Δ_p u` over interior nodes of the ball.
fn max_scaled_operator(u: &ScalarField, ball: &Ball, p: f64, scale: f64) -> Result<f64> {
    let mesh = u.mesh();
    let op = operator_field(u, &EllipticParams::p_laplace(p)?, OperatorKind::PLaplacian)?;
    Ok(mesh
        .nodes_in_ball(ball)
        .into_iter()
        .filter(|&k| !mesh.is_boundary(k))
        .map(|k| scale.powf(p) * op.value(k))
        .fold(f64::NEG_INFINITY, f64::max))
}

fn min_max_on(u: &ScalarField, ball: &Ball) -> (f64, f64) {
    u.mesh()
        .nodes_in_ball(ball)
        .into_iter()
        .map(|k| u.value(k))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Smallest `θ` with `r^p Δ_p u ≤ θ^{p-1}` on the interior nodes of `B_{2r}(z₀)`.
pub fn admissible_theta(u: &ScalarField, r: f64, z0: &Point, p: f64) -> Result<f64> {
    let m = max_scaled_operator(u, &Ball::new(z0.clone(), 2.0 * r), p, r)?;
    Ok(m.max(1e-300).powf(1.0 / (p - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalDensityReport {
    pub p: f64,
    pub r: f64,
    pub theta: f64,
    pub m_tilde: f64,
    pub delta: f64,
    /// `|{u > θM̃} ∩ B_r| / |B_r|`.
    pub fraction: f64,
    pub min_inner: f64,
    /// Whether the fraction exceeds `1 - δ`.
    pub premise: bool,
    pub tolerance: f64,
    pub failed_hypotheses: Vec<String>,
    pub status: Status,
}

impl CriticalDensityReport {
    pub fn row(&self) -> CheckRow {
        let params = format!("p={};r={};theta={:e};premise={}", self.p, self.r, self.theta, self.premise);
        if self.premise {
            let bound = self.theta * (1.0 - self.tolerance);
            CheckRow::new("cor-critical-density", params, self.min_inner, bound, self.min_inner - bound, self.status)
        } else {
            let bound = 1.0 - self.delta;
            CheckRow::new("cor-critical-density", params, self.fraction, bound, bound - self.fraction, self.status)
        }
    }
}

/// Audit `u ≥ 0` and `r^p Δ_p u ≤ θ^{p-1}` on `B_{2r}(z₀)`, then test the implication
/// "fraction > 1 - δ ⇒ min_{B_r} u > θ" and, when the premise fails, its contrapositive.
pub fn critical_density_check(
    u: &ScalarField,
    r: f64,
    z0: &Point,
    theta: f64,
    params: &EllipticParams,
    constants: &CriticalConstants,
    tolerance: f64,
) -> Result<CriticalDensityReport> {
    let mesh = u.mesh();
    let p = params.p;
    let outer = Ball::new(z0.clone(), 2.0 * r);
    let inner = Ball::new(z0.clone(), r);
    let mut failed = Vec::new();
    if !ball_fits(mesh, z0, 2.0 * r) {
        failed.push("B_2r(z0) leaves the domain".to_string());
    }
    let (lo, _) = min_max_on(u, &outer);
    if lo < 0.0 {
        failed.push(format!("u = {lo:e} < 0 in B_2r"));
    }
    let op = max_scaled_operator(u, &outer, p, r)?;
    if op > theta.powf(p - 1.0) {
        failed.push(format!("r^p Lu = {op:e} exceeds theta^(p-1)"));
    }
    let level = theta * constants.m_tilde;
    let fraction = mesh.measure_where(u.values(), |v| v > level, &inner) / mesh.measure_where(u.values(), |_| true, &inner);
    let (min_inner, _) = min_max_on(u, &inner);
    let premise = fraction > 1.0 - constants.delta;
    let status = if !failed.is_empty() {
        Status::Skip
    } else if premise {
        Status::from_pass(min_inner > theta * (1.0 - tolerance))
    } else {
        Status::Pass
    };
    Ok(CriticalDensityReport {
        p,
        r,
        theta,
        m_tilde: constants.m_tilde,
        delta: constants.delta,
        fraction,
        min_inner,
        premise,
        tolerance,
        failed_hypotheses: failed,
        status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    /// Ratio between consecutive thresholds.
    pub m_tilde: f64,
    pub delta_min: f64,
    pub max_levels: usize,
    /// Levels whose measure is below `|B_{cells·h}|` count as unresolved.
    pub resolution_cells: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self { m_tilde: 1.25, delta_min: 0.02, max_levels: 64, resolution_cells: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub p: f64,
    pub radius: f64,
    pub thresholds: Vec<f64>,
    /// `|A_k|` for the resolved levels.
    pub measures: Vec<f64>,
    /// Smallest measure counted as resolved.
    pub resolution: f64,
    pub ball_measure: f64,
    /// `max_k |A_{k+1}| / |A_k|`; `None` when every level is empty.
    pub rho: Option<f64>,
    /// Decay exponent of `|{u > t}| ≈ c t^{-ε}` fitted on the nonempty levels.
    pub epsilon: Option<f64>,
    /// `sup_{B_R} u / inf_{B_R} u`.
    pub quotient: f64,
    pub delta_min: f64,
    pub failed_hypotheses: Vec<String>,
    pub status: Status,
}

impl DecayReport {
    pub fn nonempty_levels(&self) -> usize {
        self.measures.len()
    }

    pub fn row(&self) -> CheckRow {
        let params = format!("p={};R={};levels={}", self.p, self.radius, self.nonempty_levels());
        let bound = 1.0 - self.delta_min;
        let rho = self.rho.unwrap_or(0.0);
        CheckRow::new("thm-l-epsilon", params, rho, bound, bound - rho, self.status)
    }
}

/// Level measures `|{u > t_k} ∩ B_R(x₀)|` for the given increasing thresholds, stopping at the
/// first level that is empty or below `resolution`.
pub fn level_decay_with_thresholds(
    u: &ScalarField,
    radius: f64,
    x0: &Point,
    thresholds: &[f64],
    delta_min: f64,
    resolution: f64,
) -> DecayReport {
    let mesh = u.mesh();
    let ball = Ball::new(x0.clone(), radius);
    let nodes = mesh.nodes_in_ball(&ball);
    let w = mesh.weights();
    let ball_measure: f64 = nodes.iter().map(|&k| w[k]).sum();
    let mut ts = Vec::new();
    let mut measures = Vec::new();
    for &t in thresholds {
        let m: f64 = nodes.iter().filter(|&&k| u.value(k) > t).map(|&k| w[k]).sum();
        if m <= 0.0 || m < resolution {
            break;
        }
        ts.push(t);
        measures.push(m);
    }
    let rho = measures
        .windows(2)
        .map(|pair| pair[1] / pair[0])
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    let logs: Vec<(f64, f64)> = ts
        .iter()
        .zip(&measures)
        .filter(|(t, m)| **m > 0.0 && **t > 0.0)
        .map(|(t, m)| (t.ln(), m.ln()))
        .collect();
    let epsilon = fit_slope(&logs).map(|s| -s);
    let (lo, hi) = nodes
        .iter()
        .map(|&k| u.value(k))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let nonempty = measures.len();
    let status = match (nonempty, rho) {
        (0, _) => Status::Pass,
        (1 | 2, _) => Status::Inconclusive,
        (_, Some(r)) => Status::from_pass(r <= 1.0 - delta_min),
        (_, None) => Status::Inconclusive,
    };
    DecayReport {
        p: f64::NAN,
        radius,
        thresholds: ts,
        measures,
        resolution,
        ball_measure,
        rho,
        epsilon,
        quotient: hi / lo,
        delta_min,
        failed_hypotheses: Vec::new(),
        status,
    }
}

/// Least-squares slope of `y` against `x`; `None` with fewer than two distinct abscissae.
fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Audit `u ≥ 0` on `B_{2R}`, `inf_{B_R} u ≤ 1` and `R^p Δ_p u ≤ 1`, then measure
/// `A_k = {u > M̃^k} ∩ B_R(x₀)` for `k = 1, 2, …` until a level is empty.
///
/// Zero nonempty levels is a vacuous PASS; one or two give INCONCLUSIVE.
pub fn level_decay(
    u: &ScalarField,
    radius: f64,
    x0: &Point,
    params: &EllipticParams,
    options: &DecayOptions,
) -> Result<DecayReport> {
    let mesh = u.mesh();
    let p = params.p;
    let mut failed = Vec::new();
    if !ball_fits(mesh, x0, 2.0 * radius) {
        failed.push("B_2R(x0) leaves the domain".to_string());
    }
    let (lo2, _) = min_max_on(u, &Ball::new(x0.clone(), 2.0 * radius));
    if lo2 < 0.0 {
        failed.push(format!("u = {lo2:e} < 0 in B_2R"));
    }
    let (lo, _) = min_max_on(u, &Ball::new(x0.clone(), radius));
    if lo > 1.0 {
        failed.push(format!("inf over B_R is {lo} > 1"));
    }
    let op = max_scaled_operator(u, &Ball::new(x0.clone(), 2.0 * radius), p, radius)?;
    if op > 1.0 {
        failed.push(format!("R^p Lu = {op:e} exceeds 1"));
    }
    let thresholds: Vec<f64> = (1..=options.max_levels).map(|k| options.m_tilde.powi(k as i32)).collect();
    let resolution = mesh.model().ball_volume(options.resolution_cells * mesh.h())?;
    let mut report = level_decay_with_thresholds(u, radius, x0, &thresholds, options.delta_min, resolution);
    report.p = p;
    if !failed.is_empty() {
        report.status = Status::Skip;
    }
    report.failed_hypotheses = failed;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub delta: f64,
    pub balls: usize,
    /// Sampled balls with `|E ∩ B| > (1-δ)|B|` that are not contained in `F`.
    pub violations: usize,
    pub e_measure: f64,
    pub f_measure: f64,
    pub ball_measure: f64,
    /// `(1 - |E|/|F|) / δ`, the largest `c₀` with `|E| ≤ (1 - c₀δ)|F|`.
    pub c0: Option<f64>,
    pub status: Status,
}

impl DichotomyReport {
    pub fn row(&self) -> CheckRow {
        let params = format!("delta={};balls={};violations={}", self.delta, self.balls, self.violations);
        let c0 = self.c0.unwrap_or(f64::INFINITY);
        CheckRow::new("lem-covering", params, c0, 0.0, c0, self.status)
    }
}

/// Indicator sets are the nodes where the fields exceed `1/2`. Balls are centered on nodes of
/// `B_R(x₀)` (every `stride`-th) with radii `R/2, R/4, …` down to `2h`, kept when inside `B_R(x₀)`.
pub fn ball_dichotomy_check(
    e_field: &ScalarField,
    f_field: &ScalarField,
    radius: f64,
    x0: &Point,
    delta: f64,
    stride: usize,
) -> Result<DichotomyReport> {
    let mesh = e_field.mesh();
    if !Arc::ptr_eq(mesh, f_field.mesh()) {
        return Err(Error::InvalidInput("E and F live on different meshes".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta = {delta} outside (0, 1)")));
    }
    let model = mesh.model();
    let w = mesh.weights();
    let in_e = |k: usize| e_field.value(k) > 0.5;
    let in_f = |k: usize| f_field.value(k) > 0.5;
    let outer = mesh.nodes_in_ball(&Ball::new(x0.clone(), radius));
    let ball_measure: f64 = outer.iter().map(|&k| w[k]).sum();
    let e_measure: f64 = outer.iter().filter(|&&k| in_e(k)).map(|&k| w[k]).sum();
    let f_measure: f64 = outer.iter().filter(|&&k| in_f(k)).map(|&k| w[k]).sum();

    let mut balls = 0;
    let mut violations = 0;
    for &c in outer.iter().step_by(stride.max(1)) {
        let center = mesh.node(c);
        let offset = model.distance(x0, center);
        let mut rho = radius / 2.0;
        while rho >= 2.0 * mesh.h() {
            if offset + rho <= radius {
                let nodes = mesh.nodes_in_ball(&Ball::new(center.clone(), rho));
                let total: f64 = nodes.iter().map(|&k| w[k]).sum();
                let covered: f64 = nodes.iter().filter(|&&k| in_e(k)).map(|&k| w[k]).sum();
                balls += 1;
                if covered > (1.0 - delta) * total && !nodes.iter().all(|&k| in_f(k)) {
                    violations += 1;
                }
            }
            rho /= 2.0;
        }
    }
    let c0 = (f_measure > 0.0).then(|| (1.0 - e_measure / f_measure) / delta);
    let status = if e_measure > (1.0 - delta) * ball_measure || violations > 0 {
        Status::Skip
    } else {
        Status::from_pass(c0.is_none_or(|c| c > 0.0))
    };
    Ok(DichotomyReport { delta, balls, violations, e_measure, f_measure, ball_measure, c0, status })
}

/// Indicator field of `{u > t}`.
pub fn superlevel_indicator(u: &ScalarField, t: f64) -> ScalarField {
    u.map("indicator", |v| if v > t { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientReport {
    pub p: f64,
    pub radius: f64,
    pub sup: f64,
    pub inf: f64,
    /// `R^{p/(p-1)} ‖f‖_∞^{1/(p-1)}`.
    pub forcing: f64,
    /// `sup_{B_R} u / (inf_{B_R} u + forcing)`.
    pub c_emp: f64,
    pub min_outer: f64,
    /// Smallest `τ` with `u ≤ τ{4/3 - d/R}^{-α}` on `B_{4R/3}`.
    pub touching_tau: f64,
    pub status: Status,
}

impl QuotientReport {
    pub fn row(&self, tag: &str) -> CheckRow {
        let params = format!("{tag};p={};R={}", self.p, self.radius);
        CheckRow::new("thm-harnack", params, self.c_emp, f64::NAN, f64::NAN, self.status)
    }
}

/// Empirical Harnack quotient on `B_R(z₀)`; values below `-tol` on `B_{2R}` fail the audit (SKIP).
pub fn harnack_quotient(u: &ScalarField, radius: f64, z0: &Point, p: f64, f_sup: f64) -> Result<QuotientReport> {
    if !(p > 1.0) || !(radius > 0.0) || !(f_sup >= 0.0) {
        return Err(Error::InvalidInput(format!("p = {p}, R = {radius}, |f| = {f_sup}")));
    }
    let (inf, sup) = min_max_on(u, &Ball::new(z0.clone(), radius));
    let (min_outer, _) = min_max_on(u, &Ball::new(z0.clone(), 2.0 * radius));
    let forcing = radius.powf(p / (p - 1.0)) * f_sup.powf(1.0 / (p - 1.0));
    let c_emp = sup / (inf + forcing);
    let tol = 1e-9 * u.max_abs().max(1.0);
    let status = if min_outer < -tol || !c_emp.is_finite() {
        Status::Skip
    } else {
        Status::Pass
    };
    Ok(QuotientReport {
        p,
        radius,
        sup,
        inf,
        forcing,
        c_emp,
        min_outer,
        touching_tau: touching_tau(u, radius, z0, TOUCHING_ALPHA),
        status,
    })
}

/// `max u(x) {4/3 - d(x, z₀)/R}^α` over the nodes of `B_{4R/3}(z₀)`.
pub fn touching_tau(u: &ScalarField, radius: f64, z0: &Point, alpha: f64) -> f64 {
    let mesh = u.mesh();
    mesh.nodes_in_ball(&Ball::new(z0.clone(), 4.0 * radius / 3.0))
        .into_iter()
        .map(|k| {
            let s = (4.0 / 3.0 - mesh.distance_to(k, z0) / radius).max(0.0);
            u.value(k) * s.powf(alpha)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve `Δ_p u = f` (constant `f`) on the mesh ball with boundary data `b(θ)`.
pub fn harnack_solution(mesh: &Arc<GeodesicBallMesh>, p: f64, f: f64, boundary: &TrigBoundary) -> Result<ScalarField> {
    let params = EllipticParams::p_laplace(p)?;
    let rhs = mesh.field_from_fn("f", |_| f);
    let boundary = mesh.boundary_nodes().map(|k| boundary.eval(mesh.polar(k).1)).collect();
    solve(&DirichletProblem::new(mesh.clone(), params, rhs, boundary)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoelderReport {
    pub radii: Vec<f64>,
    pub osc: Vec<f64>,
    /// Fitted exponent; `+∞` flags an oscillation that vanishes at every scale.
    pub alpha: f64,
    pub nonincreasing: bool,
    pub status: Status,
}

impl HoelderReport {
    pub fn row(&self, tag: &str) -> CheckRow {
        let params = format!("{tag};scales={}", self.radii.len());
        CheckRow::new("cor-hoelder", params, self.alpha, 0.0, self.alpha, self.status)
    }
}

/// Oscillation over `B_{2^{-k}R}(z₀)`, `k = 0..=5`, keeping radii of at least `2h`.
pub fn hoelder_decay(u: &ScalarField, radius: f64, z0: &Point) -> Result<HoelderReport> {
    let mesh = u.mesh();
    let mut radii = Vec::new();
    let mut osc = Vec::new();
    for k in 0..=5 {
        let rho = radius / 2f64.powi(k);
        if rho < 2.0 * mesh.h() {
            break;
        }
        let (lo, hi) = min_max_on(u, &Ball::new(z0.clone(), rho));
        radii.push(rho);
        osc.push(hi - lo);
    }
    let nonincreasing = osc.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let floor = 1e-14 * u.max_abs().max(1e-300);
    let logs: Vec<(f64, f64)> = radii
        .iter()
        .zip(&osc)
        .filter(|(_, o)| **o > floor)
        .map(|(r, o)| (r.ln(), o.ln()))
        .collect();
    let alpha = if logs.is_empty() { f64::INFINITY } else { fit_slope(&logs).unwrap_or(f64::NAN) };
    let status = if radii.len() < 3 || alpha.is_nan() {
        Status::Inconclusive
    } else {
        Status::from_pass(alpha > 0.0 && nonincreasing)
    };
    Ok(HoelderReport { radii, osc, alpha, nonincreasing, status })
}

/// `∫_d^ρ sn(s)^{-1/(p-1)} ds`, the radial p-harmonic profile vanishing at `ρ`.
pub fn fundamental_profile(model: &ManifoldModel, p: f64, d: f64, rho: f64) -> f64 {
    let e = -1.0 / (p - 1.0);
    let (a, b) = (d.ln(), rho.ln());
    let n = 400;
    let step = (b - a) / n as f64;
    let f = |t: f64| {
        let s = t.exp();
        model.sn(s).powf(e) * s
    };
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * step / 3.0
}

/// Radial p-harmonic spike `g` centered at `z` and vanishing at distance `d(z, x₀) + 2R`, flattened
/// by the concave map `s ↦ c - w ln(1 + e^{(c-s)/w})` with `c = height`, `w = c/10`, and
/// normalized so `inf_{B_R(x₀)} u = 1`; scaled down if needed until `R^p Δ_p u ≤ 1` on `B_{2R}(x₀)`.
pub fn spike_supersolution(
    mesh: &Arc<GeodesicBallMesh>,
    p: f64,
    x0: &Point,
    radius: f64,
    z: &Point,
    height: f64,
) -> Result<ScalarField> {
    let model = *mesh.model();
    let rho = model.distance(z, x0) + 2.0 * radius;
    let raw: Vec<f64> = (0..mesh.len())
        .map(|k| {
            let d = mesh.distance_to(k, z);
            if d > 0.0 {
                fundamental_profile(&model, p, d, rho)
            } else if p > 2.0 {
                fundamental_profile(&model, p, 1e-12 * rho, rho)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let inner = mesh.nodes_in_ball(&Ball::new(x0.clone(), radius));
    let norm = inner.iter().map(|&k| raw[k]).fold(f64::INFINITY, f64::min);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidInput("spike profile vanishes on B_R".into()));
    }
    let (c, w) = (height, height / 10.0);
    let flat = |s: f64| {
        let t = (c - s) / w;
        let softplus = if t > 30.0 { t } else { t.exp().ln_1p() };
        c - w * softplus
    };
    let unit = flat(1.0);
    let values = raw.iter().map(|&v| flat(v / norm) / unit).collect();
    let mut u = ScalarField::new(mesh.clone(), "spike", values)?;
    let outer = Ball::new(x0.clone(), 2.0 * radius);
    for _ in 0..8 {
        let op = max_scaled_operator(&u, &outer, p, radius)?;
        if op <= 1.0 {
            return Ok(u);
        }
        u = u.scaled(op.powf(-1.0 / (p - 1.0)) * (1.0 - 1e-9));
    }
    Err(Error::AuditFailed("spike rescaling did not reach R^p Lu <= 1".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mesh(model: ManifoldModel, radius: f64, nr: usize, nt: usize) -> Arc<GeodesicBallMesh> {
        Arc::new(GeodesicBallMesh::build(model, Point::origin(2), radius, nr, nt).unwrap())
    }

    fn params(p: f64, beta: f64) -> EllipticParams {
        EllipticParams::new(p, 1.0, 1.0, beta, 0.0).unwrap()
    }

    #[test]
    fn euclidean_hand_barrier() {
        let spec = calibrate_barrier(&ManifoldModel::euclidean(2), &params(2.0, 0.0), 0.2, &Point::origin(2)).unwrap();
        assert_eq!(spec.alpha, 2.0);
        assert_eq!(spec.m_tilde, 312.5);
        assert!(spec.invariants_hold(1e-9));
        assert_eq!(spec.value(1.0), 0.0);
        // r^2 Δv = M̃ α² (r/d)^{α+2}, smallest at d = 5r.
        let s = barrier_slack(&ManifoldModel::euclidean(2), 2.0, 0.0, 0.2, 2.0, 312.5, 4).unwrap();
        assert_relative_eq!(s, 312.5 * 4.0 * 5f64.powi(-4), max_relative = 1e-12);
    }

    #[test]
    fn barrier_grid_calibrates() {
        for p in [1.5, 2.0, 3.0] {
            for kappa in [0.0, 1.0] {
                for beta in [0.0, 1.0] {
                    let model = ManifoldModel::new(2, -kappa).unwrap();
                    let spec = calibrate_barrier(&model, &params(p, beta), 0.2, &Point::origin(2)).unwrap();
                    assert!(spec.invariants_hold(1e-9), "{spec:?}");
                    let below = barrier_slack(&model, p, beta, 0.2, spec.alpha, spec.m_tilde * 0.999, BARRIER_SAMPLES).unwrap();
                    assert!(below < 2.0 || spec.m_tilde * 0.999 * (4f64.powf(-spec.alpha) - 5f64.powf(-spec.alpha)) <= 1.0);
                }
            }
        }
    }

    #[test]
    fn grid_rounding() {
        assert_eq!(ceil_to_grid(312.49999999999994), 312.5);
        assert_eq!(ceil_to_grid(312.51), 312.6);
        assert_eq!(ceil_to_grid(0.012345), 0.01235);
        assert_eq!(next_on_grid(312.5), 312.6);
    }

    #[test]
    fn critical_density_constant_field_passes() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 32, 64);
        let p2 = params(2.0, 0.0);
        let c = critical_constants(m.model(), AbpVariant::Degenerate, &p2, 0.2, 1.0).unwrap();
        let theta = 0.5;
        let u = m.field_from_fn("u", |_| 2.0 * theta * c.m_tilde);
        let rep = critical_density_check(&u, 0.2, &Point::origin(2), theta, &p2, &c, 0.0).unwrap();
        assert!(rep.premise);
        assert_eq!(rep.status, Status::Pass);
    }

    #[test]
    fn critical_density_theta_homogeneity() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 32, 64);
        let p3 = params(3.0, 0.0);
        let c = critical_constants(m.model(), AbpVariant::Degenerate, &p3, 0.2, 1.0).unwrap();
        let z0 = Point::new(&[0.1, 0.0]);
        let u = m.field_from_fn("u", |x| 3.0 - x.coords.norm_squared());
        let theta = 0.25;
        let a = critical_density_check(&u, 0.2, &z0, theta, &p3, &c, 0.0).unwrap();
        let b = critical_density_check(&u.scaled(1.0 / theta), 0.2, &z0, 1.0, &p3, &c, 0.0).unwrap();
        assert_eq!(a.fraction, b.fraction);
        assert_eq!(a.premise, b.premise);
        assert_eq!(a.status, b.status);
        assert_relative_eq!(a.min_inner / theta, b.min_inner, max_relative = 1e-15);
    }

    #[test]
    fn negative_field_is_skipped() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 16, 32);
        let p2 = params(2.0, 0.0);
        let c = critical_constants(m.model(), AbpVariant::Degenerate, &p2, 0.2, 1.0).unwrap();
        let u = m.field_from_fn("u", |_| -1.0);
        let rep = critical_density_check(&u, 0.2, &Point::origin(2), 1.0, &p2, &c, 0.0).unwrap();
        assert_eq!(rep.status, Status::Skip);
    }

    #[test]
    fn constant_one_is_vacuous() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 16, 32);
        let u = m.field_from_fn("u", |_| 1.0);
        let rep = level_decay(&u, 0.5, &Point::origin(2), &params(2.0, 0.0), &DecayOptions::default()).unwrap();
        assert_eq!(rep.nonempty_levels(), 0);
        assert_eq!(rep.rho, None);
        assert_eq!(rep.status, Status::Pass);
    }

    #[test]
    fn log_profile_ratio() {
        let r = 0.2;
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 128, 256);
        let u = m.field_from_fn("u", |x| (5.0 * r / x.coords.norm()).ln().min(6.0));
        let mt: f64 = 2.0;
        let thresholds: Vec<f64> = (1..=4).map(|k| k as f64 * mt.ln()).collect();
        let rep = level_decay_with_thresholds(&u, 5.0 * r, &Point::origin(2), &thresholds, 0.02, 0.0);
        for pair in rep.measures.windows(2) {
            assert_relative_eq!(pair[1] / pair[0], (-2.0 * mt.ln()).exp(), max_relative = 0.1);
        }
    }

    #[test]
    fn decay_ratios_invariant_under_scaling() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 32, 64);
        let u = m.field_from_fn("u", |x| 4.0 - 3.0 * x.coords.norm());
        let t: Vec<f64> = (1..6).map(|k| 1.3f64.powi(k)).collect();
        let s = 2.0;
        let ts: Vec<f64> = t.iter().map(|v| v * s).collect();
        let a = level_decay_with_thresholds(&u, 0.8, &Point::origin(2), &t, 0.02, 0.0);
        let b = level_decay_with_thresholds(&u.scaled(s), 0.8, &Point::origin(2), &ts, 0.02, 0.0);
        assert_eq!(a.measures, b.measures);
        assert_eq!(a.rho, b.rho);
    }

    #[test]
    fn spike_decays() {
        let m = Arc::new(
            GeodesicBallMesh::build(ManifoldModel::euclidean(2), Point::origin(2), 1.0, 64, 128)
                .unwrap()
                .with_order(crate::mesh::StencilOrder::Second),
        );
        for p in [1.5, 2.0, 3.0] {
            let x0 = Point::origin(2);
            let height = if p > 2.0 { 2.5 } else { 4.0 };
            let u = spike_supersolution(&m, p, &x0, 0.4, &Point::new(&[0.05, 0.0]), height).unwrap();
            let rep = level_decay(&u, 0.4, &x0, &params(p, 0.0), &DecayOptions::default()).unwrap();
            assert!(rep.failed_hypotheses.is_empty(), "{p}: {:?}", rep.failed_hypotheses);
            assert!(rep.nonempty_levels() >= 3, "{p}: {:?}", rep.measures);
            assert_eq!(rep.status, Status::Pass, "{p}: {rep:?}");
            assert!(rep.epsilon.unwrap() > 0.0);
        }
    }

    #[test]
    fn dichotomy_trivial_cases() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 16, 32);
        let full = m.field_from_fn("e", |_| 1.0);
        let empty = m.field_from_fn("e", |_| 0.0);
        let o = Point::origin(2);
        let skip = ball_dichotomy_check(&full, &full, 0.5, &o, 0.5, 4).unwrap();
        assert_eq!(skip.status, Status::Skip);
        let ok = ball_dichotomy_check(&empty, &full, 0.5, &o, 0.5, 4).unwrap();
        assert_eq!(ok.status, Status::Pass);
        assert_eq!(ok.c0, Some(2.0));
    }

    #[test]
    fn dichotomy_on_level_pairs() {
        let m = Arc::new(
            GeodesicBallMesh::build(ManifoldModel::euclidean(2), Point::origin(2), 1.0, 64, 128)
                .unwrap()
                .with_order(crate::mesh::StencilOrder::Second),
        );
        let x0 = Point::origin(2);
        let u = spike_supersolution(&m, 2.0, &x0, 0.4, &Point::new(&[0.05, 0.0]), 4.0).unwrap();
        for k in 1..3 {
            let f = superlevel_indicator(&u, 1.25f64.powi(k));
            let e = superlevel_indicator(&u, 1.25f64.powi(k + 1));
            let rep = ball_dichotomy_check(&e, &f, 0.4, &x0, 0.03, 7).unwrap();
            assert_eq!(rep.violations, 0);
            assert_eq!(rep.status, Status::Pass);
            assert!(rep.c0.unwrap() > 0.0);
        }
    }

    #[test]
    fn explicit_quotients() {
        let m = mesh(ManifoldModel::euclidean(2), 2.0, 128, 256);
        let o = Point::origin(2);
        let lin = m.field_from_fn("u", |x| 2.0 + x.coords[0]);
        assert_relative_eq!(harnack_quotient(&lin, 1.0, &o, 2.0, 0.0).unwrap().c_emp, 3.0, max_relative = 1e-12);
        let rad = m.field_from_fn("u", |x| 2.0 - x.coords.norm().sqrt());
        assert_relative_eq!(harnack_quotient(&rad, 1.0, &o, 3.0, 0.0).unwrap().c_emp, 2.0, max_relative = 1e-12);
        let c = m.field_from_fn("u", |_| 0.7);
        assert_eq!(harnack_quotient(&c, 1.0, &o, 2.0, 0.0).unwrap().c_emp, 1.0);
    }

    #[test]
    fn quotient_scaling_identity() {
        let m = mesh(ManifoldModel::hyperbolic(2, 1.0), 1.0, 16, 32);
        let o = Point::origin(2);
        let u = m.field_from_fn("u", |x| 1.5 + x.coords[1]);
        for p in [1.5, 2.0, 3.0] {
            let a = harnack_quotient(&u, 0.5, &o, p, 0.3).unwrap();
            let s: f64 = 3.7;
            let b = harnack_quotient(&u.scaled(s), 0.5, &o, p, 0.3 * s.powf(p - 1.0)).unwrap();
            assert_relative_eq!(a.c_emp, b.c_emp, max_relative = 1e-14);
        }
    }

    #[test]
    fn negative_values_fail_audit() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 16, 32);
        let u = m.field_from_fn("u", |x| x.coords[0]);
        let rep = harnack_quotient(&u, 0.5, &Point::origin(2), 2.0, 0.0).unwrap();
        assert_eq!(rep.status, Status::Skip);
    }

    #[test]
    fn hoelder_examples() {
        let m = mesh(ManifoldModel::euclidean(2), 1.0, 64, 128);
        let o = Point::origin(2);
        let lin = m.field_from_fn("u", |x| x.coords[0]);
        let rep = hoelder_decay(&lin, 0.5, &o).unwrap();
        assert_eq!(rep.status, Status::Pass);
        assert_relative_eq!(rep.alpha, 1.0, max_relative = 0.02);
        let c = m.field_from_fn("u", |_| 2.0);
        let rep = hoelder_decay(&c, 0.5, &o).unwrap();
        assert_eq!(rep.alpha, f64::INFINITY);
        assert_eq!(rep.status, Status::Pass);
        let coarse = mesh(ManifoldModel::euclidean(2), 1.0, 8, 16);
        let rep = hoelder_decay(&coarse.field_from_fn("u", |x| x.coords[0]), 0.5, &o).unwrap();
        assert_eq!(rep.status, Status::Inconclusive);
    }

    #[test]
    fn fundamental_profile_is_log_when_flat() {
        let e = ManifoldModel::euclidean(2);
        assert_relative_eq!(fundamental_profile(&e, 2.0, 0.1, 1.0), 10f64.ln(), max_relative = 1e-9);
        assert_relative_eq!(fundamental_profile(&e, 3.0, 0.25, 1.0), 2.0 * (1.0 - 0.5), max_relative = 1e-9);
    }
}
