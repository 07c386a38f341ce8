//! Generated supersolutions for the measure-estimate and ABP experiments.
//!
//! Every generator produces a field `u` and the constant right side `f = r^{-p}`,
//! then rescales `u` (the operators are `(p-1)`-homogeneous) until the audited
//! operator values stay below `f` at every interior node.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{operator_field, solve, DirichletProblem};
use crate::error::{Error, Result};
use crate::geometry::{Point, TangentVector};
use crate::mesh::{GeodesicBallMesh, ScalarField};
use crate::operators::{EllipticParams, OperatorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupersolutionProfile {
    SolvedWithWell,
    RadialCone,
    PerturbedManufactured,
}

impl SupersolutionProfile {
    pub const ALL: [SupersolutionProfile; 3] =
        [Self::SolvedWithWell, Self::RadialCone, Self::PerturbedManufactured];

    pub fn tag(&self) -> &'static str {
        match self {
            Self::SolvedWithWell => "solved-with-well",
            Self::RadialCone => "radial-cone",
            Self::PerturbedManufactured => "perturbed-manufactured",
        }
    }
}

impl FromStr for SupersolutionProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown supersolution profile {s:?}")))
    }
}

/// Scale `r` and center `z0` of the well; `B_{4r}(z0)` must sit inside the mesh ball.
#[derive(Debug, Clone, PartialEq)]
pub struct WellPlacement {
    pub z0: Point,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionAudit {
    /// Max over interior nodes of `L u - f`; the audit needs it `<= 0`.
    pub max_excess: f64,
    /// Min of `u` over nodes outside `B_{4r}(z0)`.
    pub min_outside: f64,
    /// Min of `u` over nodes inside `B_r(z0)`.
    pub inf_inner: f64,
    /// Amplitude factor applied to the raw profile.
    pub scale: f64,
}

impl SupersolutionAudit {
    pub fn passes(&self, p: f64) -> bool {
        self.max_excess <= 0.0 && self.min_outside >= 0.0 && self.inf_inner <= (p - 1.0) / p
    }
}

#[derive(Debug, Clone)]
pub struct Supersolution {
    pub field: ScalarField,
    /// The constant `r^{-p}`.
    pub rhs: ScalarField,
    pub placement: WellPlacement,
    pub profile: SupersolutionProfile,
    pub kind: OperatorKind,
    pub audit: SupersolutionAudit,
}

/// Positive trigonometric polynomial on the circle with `max / min` equal to `cond`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigBoundary {
    cos: Vec<f64>,
    sin: Vec<f64>,
    lo: f64,
    hi: f64,
    cond: f64,
}

impl TrigBoundary {
    pub fn eval(&self, theta: f64) -> f64 {
        let t = (self.raw(theta) - self.lo) / (self.hi - self.lo);
        (1.0 + t * (self.cond - 1.0)) / self.cond
    }

    fn raw(&self, theta: f64) -> f64 {
        let mut s = 0.0;
        for (k, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let m = (k + 1) as f64;
            s += a * (m * theta).cos() + b * (m * theta).sin();
        }
        s
    }
}

/// Random boundary data with values in `[1/cond, 1]` and `modes` Fourier modes.
pub fn positive_trig_boundary(seed: u64, modes: usize, cond: f64) -> Result<TrigBoundary> {
    if modes == 0 || !(cond >= 1.0) {
        return Err(Error::InvalidInput("need at least one mode and cond >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos: Vec<f64> = (1..=modes).map(|k| rng.random_range(-1.0..1.0) / k as f64).collect();
    let sin: Vec<f64> = (1..=modes).map(|k| rng.random_range(-1.0..1.0) / k as f64).collect();
    let mut b = TrigBoundary { cos, sin, lo: 0.0, hi: 1.0, cond };
    let samples: Vec<f64> = (0..4096).map(|i| b.raw(2.0 * PI * i as f64 / 4096.0)).collect();
    b.lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    b.hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if b.hi - b.lo < 1e-12 {
        b.hi = b.lo + 1.0;
    }
    Ok(b)
}

/// Audit `Lu <= f`, `u >= 0` off `B_{4r}(z0)` and `inf_{B_r(z0)} u` on the mesh nodes.
pub fn audit_supersolution(
    field: &ScalarField,
    rhs: &ScalarField,
    placement: &WellPlacement,
    params: &EllipticParams,
    kind: OperatorKind,
) -> Result<SupersolutionAudit> {
    let mesh = field.mesh();
    let op = operator_field(field, params, kind)?;
    let max_excess = mesh
        .interior_nodes()
        .map(|k| op.value(k) - rhs.value(k))
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut min_outside, mut inf_inner) = (f64::INFINITY, f64::INFINITY);
    for k in 0..mesh.len() {
        let d = mesh.distance_to(k, &placement.z0);
        if d >= 4.0 * placement.r {
            min_outside = min_outside.min(field.value(k));
        }
        if d < placement.r {
            inf_inner = inf_inner.min(field.value(k));
        }
    }
    Ok(SupersolutionAudit { max_excess, min_outside, inf_inner, scale: 1.0 })
}

/// Build an audited supersolution of `L u <= r^{-p}` for the given profile family.
pub fn make_supersolution(
    mesh: &Arc<GeodesicBallMesh>,
    params: &EllipticParams,
    kind: OperatorKind,
    profile: SupersolutionProfile,
    placement: &WellPlacement,
    seed: u64,
) -> Result<Supersolution> {
    let p = params.p;
    let r = placement.r;
    let model = *mesh.model();
    let offset = model.distance(mesh.center(), &placement.z0);
    if !(r > 0.0) || offset + 4.0 * r >= mesh.radius() {
        return Err(Error::InvalidInput(format!(
            "B_4r(z0) with r = {r} does not fit inside the mesh ball of radius {}",
            mesh.radius()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = p / (p - 1.0);
    let d0: Vec<f64> = (0..mesh.len()).map(|k| mesh.distance_to(k, &placement.z0)).collect();

    let raw: Vec<f64> = match profile {
        SupersolutionProfile::RadialCone => {
            d0.iter().map(|&d| (p - 1.0) / p * ((d - r).max(0.0) / r).powf(q)).collect()
        }
        SupersolutionProfile::PerturbedManufactured => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    let w = rng.random_range(1.0..4.0) / mesh.radius();
                    let a = rng.random_range(0.0..2.0 * PI);
                    (w * a.cos(), w * a.sin(), rng.random_range(0.0..2.0 * PI), 0.05 / (w * w * r * r))
                })
                .collect();
            (0..mesh.len())
                .map(|k| {
                    let x = &mesh.node(k).coords;
                    let pert: f64 = waves.iter().map(|&(w1, w2, ph, amp)| amp * (w1 * x[0] + w2 * x[1] + ph).sin()).sum();
                    (p - 1.0) / p * (d0[k] / r).powf(q) + pert
                })
                .collect()
        }
        SupersolutionProfile::SolvedWithWell => {
            let amp = rng.random_range(0.3..0.8) * r.powf(-p);
            let sigma = r * rng.random_range(0.7..1.5);
            let shift = TangentVector::new(
                placement.z0.clone(),
                &[rng.random_range(-0.3..0.3) * r, rng.random_range(-0.3..0.3) * r],
            );
            let c = model.exp_map(&shift)?;
            let f = mesh.field_from_fn("f", |x| {
                let d = model.distance(x, &c);
                amp * (-0.5 * d * d / (sigma * sigma)).exp()
            });
            let bdry = positive_trig_boundary(rng.random(), 3, rng.random_range(1.0..4.0))?;
            let solve_params = EllipticParams { delta_reg: 0.0, ..EllipticParams::p_laplace(p)? };
            let prob = DirichletProblem::with_boundary_fn(mesh.clone(), solve_params, f, |x| {
                bdry.eval(x.coords[1].atan2(x.coords[0]))
            })?;
            solve(&prob)?.values().to_vec()
        }
    };

    let rhs = mesh.field_from_fn("f", |_| r.powf(-p));
    let target = 0.9 * r.powf(-p);
    let mut scale = 1.0;
    let mut values = raw.clone();
    for _ in 0..12 {
        let field = ScalarField::new(mesh.clone(), "u", values.clone())?;
        let op = operator_field(&field, params, kind)?;
        let peak = mesh.interior_nodes().map(|k| op.value(k)).fold(f64::NEG_INFINITY, f64::max);
        if peak <= target {
            break;
        }
        scale *= 0.98 * (target / peak).powf(1.0 / (p - 1.0));
        values = raw.iter().map(|v| scale * v).collect();
    }

    // shift so that u >= 0 off B_4r, then shrink until inf over B_r is at most (p-1)/p
    let outside = (0..mesh.len()).filter(|&k| d0[k] >= 4.0 * r).map(|k| values[k]).fold(f64::INFINITY, f64::min);
    let lift = if outside.is_finite() { (-outside).max(0.0) } else { 0.0 };
    values.iter_mut().for_each(|v| *v += lift);
    let inner = (0..mesh.len()).filter(|&k| d0[k] < r).map(|k| values[k]).fold(f64::INFINITY, f64::min);
    let cap = (p - 1.0) / p;
    if inner > cap {
        let s = cap / inner;
        scale *= s;
        values.iter_mut().for_each(|v| *v *= s);
    }

    let field = ScalarField::new(mesh.clone(), "u", values)?;
    let mut audit = audit_supersolution(&field, &rhs, placement, params, kind)?;
    audit.scale = scale;
    if !audit.passes(p) {
        return Err(Error::AuditFailed(format!("{} supersolution: {audit:?}", profile.tag())));
    }
    Ok(Supersolution { field, rhs, placement: placement.clone(), profile, kind, audit })
}
