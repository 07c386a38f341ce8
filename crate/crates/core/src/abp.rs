//! ABP-type inequalities over p-contact sets and the critical-density measure estimates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::contact::{compute_contact_set, ContactOptions, ContactRecord, VertexSet};
use crate::error::{Error, Result};
use crate::geometry::{comparison_h, comparison_s, ManifoldModel};
use crate::mesh::{Ball, GeodesicBallMesh, ScalarField};
use crate::operators::{evaluate_operator, EllipticParams, OperatorKind};
use crate::report::{CheckRow, Status};
use crate::solver::{audit_supersolution, SupersolutionAudit, WellPlacement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbpVariant {
    /// `Δ_p`, `p ≥ 2`, Ricci lower bound.
    Degenerate,
    /// `Δ_p`, `1 < p < 2`, Ricci lower bound.
    Singular,
    /// `|∇u|^{p-2} 𝓜⁻`, `p ≥ 2`, Pucci curvature bound.
    NonlinearDegenerate,
    /// `|∇u|^{p-2} 𝓜⁻`, `1 < p < 2`, Pucci curvature bound.
    NonlinearSingular,
}

impl AbpVariant {
    pub const ALL: [AbpVariant; 4] =
        [Self::Degenerate, Self::Singular, Self::NonlinearDegenerate, Self::NonlinearSingular];

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Degenerate => "degenerate",
            Self::Singular => "singular",
            Self::NonlinearDegenerate => "nonlinear-degenerate",
            Self::NonlinearSingular => "nonlinear-singular",
        }
    }

    /// The variant whose hypotheses cover `p`.
    pub fn for_p(p: f64, nonlinear: bool) -> Self {
        match (p >= 2.0, nonlinear) {
            (true, false) => Self::Degenerate,
            (false, false) => Self::Singular,
            (true, true) => Self::NonlinearDegenerate,
            (false, true) => Self::NonlinearSingular,
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(self, Self::NonlinearDegenerate | Self::NonlinearSingular)
    }

    pub fn operator(&self) -> OperatorKind {
        if self.is_nonlinear() {
            OperatorKind::PucciMinus
        } else {
            OperatorKind::PLaplacian
        }
    }

    pub fn anchor(&self) -> &'static str {
        match self {
            Self::Degenerate => "thm-abp-degenerate",
            Self::Singular => "lem-abp-singular",
            Self::NonlinearDegenerate => "cor-abp-nonlinear-degenerate",
            Self::NonlinearSingular => "thm-abp-nonlinear-singular",
        }
    }
}

impl fmt::Display for AbpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AbpVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown ABP variant {s:?}")))
    }
}

/// Curvature constant entering a variant: `Ric ≥ -(n-1)κ` or `𝓜⁻(R(e)) ≥ -(n-1)κ`.
pub fn variant_kappa(model: &ManifoldModel, variant: AbpVariant, params: &EllipticParams) -> Result<f64> {
    if variant.is_nonlinear() {
        let lower = model.pucci_ricci_lower(params.lambda, params.big_lambda)?;
        Ok((-lower / (model.dim() - 1) as f64).max(0.0))
    } else {
        Ok(model.kappa())
    }
}

/// Integrand of the variant at gradient norm `g` and operator value `f`.
///
/// The degenerate variant uses `f` itself, the others its positive part.
/// Negative brackets are clamped to zero before the power.
pub fn abp_integrand(variant: AbpVariant, g: f64, f: f64, kappa: f64, params: &EllipticParams, n: usize) -> f64 {
    let p = params.p;
    let nf = n as f64;
    let (lam, big) = (params.lambda, params.big_lambda);
    let t = g.powf(p - 1.0);
    let s = |tau: f64| comparison_s(tau).unwrap_or(1.0).powi(n as i32 - 1);
    let hh = |tau: f64| comparison_h(tau).unwrap_or(1.0);
    let fp = f.max(0.0);
    match variant {
        AbpVariant::Degenerate => {
            let k = kappa.sqrt() * t;
            s(k) * (f / nf + hh(k)).max(0.0).powi(n as i32)
        }
        AbpVariant::Singular => {
            let k = kappa.sqrt() * t;
            s(k) / (p - 1.0).powi(n as i32) * (fp / nf + hh(k)).powi(n as i32)
        }
        AbpVariant::NonlinearDegenerate => {
            let bracket = fp + big / (p - 1.0) + (nf - 1.0) * big * hh((kappa / big).sqrt() * t);
            (p - 1.0) / (nf * lam).powi(n as i32) * s((kappa / lam).sqrt() * t) * bracket.powi(n as i32)
        }
        AbpVariant::NonlinearSingular => {
            let bracket = fp + big / (p - 1.0) + (nf - 1.0) * big * hh((kappa / big).sqrt() * t);
            s((kappa / lam).sqrt() * t) * (bracket / (nf * lam)).powi(n as i32)
        }
    }
}

fn operator_at(variant: AbpVariant, grad: &Vector2<f64>, hess: &Matrix2<f64>, params: &EllipticParams, h: f64) -> f64 {
    // a vanishing gradient with p < 2 needs the regularized weight
    let delta = if params.p < 2.0 && grad.norm_squared() == 0.0 { h * h } else { 0.0 };
    evaluate_operator(variant.operator(), grad, hess, params, delta)
}

fn contact_nodes(records: &[ContactRecord]) -> BTreeMap<usize, &ContactRecord> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| !r.escaped) {
        out.entry(r.contact).or_insert(r);
    }
    out
}

/// Quadrature of the variant's integrand over the distinct non-escaped contact nodes.
pub fn abp_rhs(
    mesh: &GeodesicBallMesh,
    records: &[ContactRecord],
    variant: AbpVariant,
    params: &EllipticParams,
) -> Result<f64> {
    let model = mesh.model();
    let kappa = variant_kappa(model, variant, params)?;
    let h = mesh.h();
    Ok(contact_nodes(records)
        .into_iter()
        .map(|(k, r)| {
            let f = operator_at(variant, &r.grad, &r.hess, params, h);
            mesh.weights()[k] * abp_integrand(variant, r.grad.norm(), f, kappa, params, model.dim())
        })
        .sum())
}

/// Singular-variant quadrature with `|∇u|^{p-1}` replaced by the `Φ_{p,δ}` displacement
/// `(|∇u|² + δ)^{(p-2)/2} |∇u|` and `f` by the δ-regularized operator.
pub fn abp_rhs_delta(
    mesh: &GeodesicBallMesh,
    records: &[ContactRecord],
    variant: AbpVariant,
    params: &EllipticParams,
    delta: f64,
) -> Result<f64> {
    let model = mesh.model();
    let kappa = variant_kappa(model, variant, params)?;
    let p = params.p;
    Ok(contact_nodes(records)
        .into_iter()
        .map(|(k, r)| {
            let g = r.grad.norm();
            let disp = (g * g + delta).powf(0.5 * (p - 2.0)) * g;
            let f = evaluate_operator(variant.operator(), &r.grad, &r.hess, params, delta);
            let g_eff = disp.powf(1.0 / (p - 1.0));
            mesh.weights()[k] * abp_integrand(variant, g_eff, f, kappa, params, model.dim())
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscapePolicy {
    /// Drop escaped vertices from `E`.
    Exclude,
    /// Any escaped vertex makes the report INCONCLUSIVE.
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbpReport {
    pub variant: AbpVariant,
    pub p: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub beta: f64,
    pub h: f64,
    /// Quadrature measure of the non-escaped vertices.
    pub e_measure: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub vertices: usize,
    pub escaped: usize,
    pub contact_nodes: usize,
    pub tolerance: f64,
    pub status: Status,
}

impl AbpReport {
    pub fn row(&self) -> CheckRow {
        let params = format!(
            "variant={};p={};kappa={};lambda={};Lambda={};beta={};h={:.6}",
            self.variant, self.p, self.kappa, self.lambda, self.big_lambda, self.beta, self.h
        );
        let bound = 1.0 + self.tolerance;
        CheckRow::new(self.variant.anchor(), params, self.ratio, bound, bound - self.ratio, self.status)
    }
}

/// `tol_abp = 4h(1 + κR₀)`.
pub fn abp_tolerance(mesh: &GeodesicBallMesh) -> f64 {
    4.0 * mesh.h() * (1.0 + mesh.model().kappa() * mesh.radius())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbpOptions {
    pub opening: f64,
    pub policy: EscapePolicy,
}

impl Default for AbpOptions {
    fn default() -> Self {
        Self { opening: 1.0, policy: EscapePolicy::Exclude }
    }
}

/// Contact set of the nodes of `e_ball` inside `omega`, then `|E| ≤ (1 + tol_abp) rhs`.
pub fn abp_check(
    u: &ScalarField,
    e_ball: &Ball,
    omega: &Ball,
    variant: AbpVariant,
    params: &EllipticParams,
    options: &AbpOptions,
) -> Result<(AbpReport, Vec<ContactRecord>)> {
    let mesh = u.mesh();
    let vertices = VertexSet::from_ball(mesh, e_ball);
    let mut copts = ContactOptions::new(params.p);
    copts.opening = options.opening;
    let records = compute_contact_set(u, &vertices, omega, &copts)?;
    let escaped = records.iter().filter(|r| r.escaped).count();
    let e_measure: f64 = records.iter().filter(|r| !r.escaped).map(|r| r.vertex_weight).sum();
    let rhs = abp_rhs(mesh, &records, variant, params)?;
    let tolerance = abp_tolerance(mesh);
    let ratio = if rhs > 0.0 { e_measure / rhs } else { f64::INFINITY };
    let status = if escaped == records.len() || (options.policy == EscapePolicy::Abort && escaped > 0) {
        Status::Inconclusive
    } else {
        Status::from_pass(e_measure <= (1.0 + tolerance) * rhs)
    };
    let report = AbpReport {
        variant,
        p: params.p,
        kappa: variant_kappa(mesh.model(), variant, params)?,
        lambda: params.lambda,
        big_lambda: params.big_lambda,
        beta: params.beta,
        h: mesh.h(),
        e_measure,
        rhs,
        ratio,
        vertices: records.len(),
        escaped,
        contact_nodes: contact_nodes(&records).len(),
        tolerance,
        status,
    };
    Ok((report, records))
}

/// `M̃_p = (p-1)/p · 3^{p/(p-1)}`.
pub fn m_tilde(p: f64) -> f64 {
    (p - 1.0) / p * 3f64.powf(p / (p - 1.0))
}

/// Lower bound for `|{u ≤ M̃_p} ∩ B_{4r}| / |B_{4r}|` read off the final display of each
/// measure-estimate proof, with the ε-regularization removed.
pub fn delta_formula(
    model: &ManifoldModel,
    variant: AbpVariant,
    params: &EllipticParams,
    r: f64,
    r0: f64,
) -> Result<f64> {
    let n = model.dim() as i32;
    let nf = n as f64;
    let p = params.p;
    let (lam, big) = (params.lambda, params.big_lambda);
    let kappa = variant_kappa(model, variant, params)?;
    let ratio = model.ball_volume(r)? / model.ball_volume(4.0 * r)?;
    let s = |tau: f64| comparison_s(tau).map(|v| v.powi(n - 1));
    let denom = match variant {
        AbpVariant::Degenerate | AbpVariant::Singular => {
            let tau = 2.0 * kappa.sqrt() * r0;
            let base = s(tau)? * (comparison_h(tau)? + 1.0 / nf).powi(n);
            if variant == AbpVariant::Singular {
                base / (p - 1.0).powi(n)
            } else {
                base
            }
        }
        AbpVariant::NonlinearDegenerate | AbpVariant::NonlinearSingular => {
            let bracket = big / (p - 1.0)
                + (nf - 1.0) * big * comparison_h(2.0 * (kappa / big).sqrt() * r0)?
                + 2.0 * params.beta * r0
                + 1.0;
            let sl = s(2.0 * (kappa / lam).sqrt() * r0)?;
            if variant == AbpVariant::NonlinearDegenerate {
                (p - 1.0) / (nf * lam).powi(n) * sl * bracket.powi(n)
            } else {
                sl * (bracket / (nf * lam)).powi(n)
            }
        }
    };
    Ok(ratio / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub variant: AbpVariant,
    pub p: f64,
    pub kappa: f64,
    pub r: f64,
    pub m_tilde: f64,
    pub fraction: f64,
    pub delta_formula: f64,
    pub tolerance: f64,
    pub audit: SupersolutionAudit,
    /// Empty when every hypothesis holds.
    pub failed_hypotheses: Vec<String>,
    pub status: Status,
}

impl MeasureReport {
    pub fn row(&self) -> CheckRow {
        let params = format!("variant={};p={};kappa={};r={}", self.variant, self.p, self.kappa, self.r);
        let bound = self.delta_formula * (1.0 - self.tolerance);
        CheckRow::new("lem-measure-estimate", params, self.fraction, bound, self.fraction - bound, self.status)
    }
}

/// Audit the hypotheses, then compare the sublevel fraction with `δ_formula`.
///
/// Hypotheses: `B̄_{4r}(z₀)` inside the mesh ball, `r^p · Lu ≤ 1` at interior nodes,
/// `u ≥ 0` off `B_{4r}(z₀)` and `inf_{B_r(z₀)} u ≤ (p-1)/p`. Failing any gives SKIP.
pub fn measure_estimate_check(
    u: &ScalarField,
    placement: &WellPlacement,
    variant: AbpVariant,
    params: &EllipticParams,
    tolerance: f64,
) -> Result<MeasureReport> {
    let mesh = u.mesh();
    let model = mesh.model();
    let p = params.p;
    let r = placement.r;
    let rhs = mesh.field_from_fn("f", |_| r.powf(-p));
    let audit = audit_supersolution(u, &rhs, placement, params, variant.operator())?;
    let mut failed = Vec::new();
    if model.distance(mesh.center(), &placement.z0) + 4.0 * r > mesh.radius() {
        failed.push("ball B_4r(z0) leaves the domain".to_string());
    }
    if audit.max_excess > 0.0 {
        failed.push(format!("r^p Lu exceeds 1 by {:e}", audit.max_excess * r.powf(p)));
    }
    if audit.min_outside < 0.0 {
        failed.push(format!("u = {:e} < 0 outside B_4r", audit.min_outside));
    }
    if audit.inf_inner > (p - 1.0) / p {
        failed.push(format!("inf over B_r is {} > (p-1)/p", audit.inf_inner));
    }
    let mt = m_tilde(p);
    let ball = Ball::new(placement.z0.clone(), 4.0 * r);
    let total = mesh.measure_where(u.values(), |_| true, &ball);
    let fraction = mesh.measure_where(u.values(), |v| v <= mt, &ball) / total;
    let delta = delta_formula(model, variant, params, r, mesh.radius())?;
    let status = if failed.is_empty() {
        Status::from_pass(fraction > delta * (1.0 - tolerance))
    } else {
        Status::Skip
    };
    Ok(MeasureReport {
        variant,
        p,
        kappa: variant_kappa(model, variant, params)?,
        r,
        m_tilde: mt,
        fraction,
        delta_formula: delta,
        tolerance,
        audit,
        failed_hypotheses: failed,
        status,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::Point;

    #[test]
    fn m_tilde_values() {
        assert!((m_tilde(2.0) - 4.5).abs() < 1e-12);
        assert!((m_tilde(3.0) - 2.0 / 3.0 * 3f64.powf(1.5)).abs() < 1e-12);
        assert!((m_tilde(3.0) - 3.4641016151377544).abs() < 1e-12);
    }

    #[test]
    fn flat_degenerate_integrand_reduces() {
        let params = EllipticParams::p_laplace(3.0).unwrap();
        let v = abp_integrand(AbpVariant::Degenerate, 0.7, 1.2, 0.0, &params, 2);
        assert!((v - (0.6f64 + 1.0).powi(2)).abs() < 1e-14);
        let s = EllipticParams::p_laplace(1.5).unwrap();
        let w = abp_integrand(AbpVariant::Singular, 0.0, 2.0, 1.0, &s, 2);
        assert!((w - 4.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_collapse_at_p2_flat() {
        let params = EllipticParams::p_laplace(2.0).unwrap();
        for f in [0.0, 0.5, 3.0] {
            let a = abp_integrand(AbpVariant::Degenerate, 0.3, f, 0.0, &params, 2);
            let b = abp_integrand(AbpVariant::NonlinearDegenerate, 0.3, f, 0.0, &params, 2);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn variant_tags_round_trip() {
        for v in AbpVariant::ALL {
            assert_eq!(v.tag().parse::<AbpVariant>().unwrap(), v);
        }
    }

    #[test]
    fn zero_field_single_vertex() {
        let m = Arc::new(GeodesicBallMesh::build(ManifoldModel::euclidean(2), Point::origin(2), 1.0, 8, 8).unwrap());
        let u = m.field_from_fn("u", |_| 0.0);
        let (rep, recs) = abp_check(
            &u,
            &Ball::new(Point::origin(2), 1e-9),
            &m.ball(),
            AbpVariant::Degenerate,
            &EllipticParams::p_laplace(2.0).unwrap(),
            &AbpOptions::default(),
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].contact, 0);
        assert_eq!(rep.contact_nodes, 1);
    }

    #[test]
    fn delta_formula_flat_value() {
        let model = ManifoldModel::euclidean(2);
        let params = EllipticParams::p_laplace(2.0).unwrap();
        let d = delta_formula(&model, AbpVariant::Degenerate, &params, 0.1, 1.0).unwrap();
        assert!((d - (1.0 / 16.0) / 2.25).abs() < 1e-12);
        let s = delta_formula(&model, AbpVariant::Singular, &EllipticParams::p_laplace(1.5).unwrap(), 0.1, 1.0).unwrap();
        assert!((s - (1.0 / 16.0) / 2.25 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn sharp_case_ratio_is_one_coarse() {
        let m = Arc::new(GeodesicBallMesh::build(ManifoldModel::euclidean(2), Point::origin(2), 1.0, 48, 96).unwrap());
        for p in [1.5, 2.0, 3.0] {
            let q = p / (p - 1.0);
            let u = m.field_from_fn("u", |x| (p - 1.0) / p * x.coords.norm().powf(q));
            let params = EllipticParams::p_laplace(p).unwrap();
            let (rep, _) = abp_check(
                &u,
                &Ball::new(Point::origin(2), 0.5),
                &m.ball(),
                AbpVariant::Degenerate,
                &params,
                &AbpOptions::default(),
            )
            .unwrap();
            assert_eq!(rep.escaped, 0);
            assert!((rep.ratio - 1.0).abs() < 0.1, "p = {p}: {}", rep.ratio);
        }
    }
}
