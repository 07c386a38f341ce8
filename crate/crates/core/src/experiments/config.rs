use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ManifoldModel;
use crate::operators::EllipticParams;

/// Full experiment configuration; every section and key falls back to its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub params: ParamsSection,
    pub scales: ScalesSection,
    pub mesh: MeshSection,
    pub tolerances: ToleranceSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Dimension of the meshed experiments; only 2 is meshed.
    pub n: usize,
    /// Signed sectional curvatures of the PDE suites (`0` Euclidean, `-κ` hyperbolic).
    pub curvatures: Vec<f64>,
    /// Curvatures of the geometry self-test and the inf-convolution demo.
    pub selftest_curvatures: Vec<f64>,
    /// Extra dimensions exercised by the geometry self-test.
    pub selftest_dims: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { n: 2, curvatures: vec![0.0, -1.0], selftest_curvatures: vec![0.0, -1.0, 1.0], selftest_dims: vec![2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub p: Vec<f64>,
    pub lambda: f64,
    pub big_lambda: f64,
    pub beta: f64,
    /// Use the Pucci-type operator instead of `Δ_p` in the supersolution suites.
    pub nonlinear: bool,
    /// Values of `β R₀` in the barrier grid.
    pub barrier_beta_r0: Vec<f64>,
}

impl Default for ParamsSection {
    fn default() -> Self {
        Self {
            p: vec![1.5, 2.0, 3.0],
            lambda: 1.0,
            big_lambda: 1.0,
            beta: 0.0,
            nonlinear: false,
            barrier_beta_r0: vec![0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalesSection {
    /// Radius `R₀` of the meshed ball.
    pub r0: f64,
    /// Well radius `r` of the measure estimate and the barrier.
    pub r: f64,
    /// Radius of `E` in the sharp ABP case and of the random contact vertex balls.
    pub sharp_radius: f64,
    pub decay_radius: f64,
    pub harnack_radius: f64,
}

impl Default for ScalesSection {
    fn default() -> Self {
        Self { r0: 1.0, r: 0.2, sharp_radius: 0.5, decay_radius: 0.4, harnack_radius: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub n_r: usize,
    pub n_theta: usize,
    pub fine_n_r: usize,
    pub fine_n_theta: usize,
    pub decay_n_r: usize,
    pub decay_n_theta: usize,
    pub infconv_n_r: usize,
    pub infconv_n_theta: usize,
    /// Radial refinement ladder of the Harnack sweep.
    pub sweep_n_r: Vec<usize>,
    pub sweep_n_theta: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            n_r: 32,
            n_theta: 64,
            fine_n_r: 128,
            fine_n_theta: 256,
            decay_n_r: 64,
            decay_n_theta: 128,
            infconv_n_r: 24,
            infconv_n_theta: 48,
            sweep_n_r: vec![128, 256],
            sweep_n_theta: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceSection {
    pub roundtrip: f64,
    pub jac_fd: f64,
    pub hess_fd: f64,
    pub psd_monotone: f64,
    pub closed_form: f64,
    pub volume: f64,
    pub sharp: f64,
    pub m_tilde: f64,
    pub measure: f64,
    pub jacobian: f64,
    pub jacobian_fraction: f64,
    /// Frozen constant `C` of the PSD tolerance `C h`.
    pub psd_c: f64,
    /// Multiplier of `h` in the `1 + c h` slack of the inf-convolution audits.
    pub infconv_slack: f64,
    pub infconv_closed_form: f64,
    pub barrier: f64,
    pub delta_min: f64,
    pub decay_m_tilde: f64,
    pub log_profile: f64,
    pub dichotomy_delta: f64,
    pub harnack_explicit: f64,
    pub harnack_stability: f64,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        Self {
            roundtrip: 1e-10,
            jac_fd: 1e-6,
            hess_fd: 1e-5,
            psd_monotone: 1e-9,
            closed_form: 1e-12,
            volume: 1e-3,
            sharp: 0.05,
            m_tilde: 1e-12,
            measure: 0.0,
            jacobian: 1e-3,
            jacobian_fraction: 0.95,
            psd_c: 0.51,
            infconv_slack: 3.0,
            infconv_closed_form: 1e-8,
            barrier: 1e-9,
            delta_min: 0.02,
            decay_m_tilde: 1.25,
            log_profile: 0.1,
            dichotomy_delta: 0.03,
            harnack_explicit: 0.02,
            harnack_stability: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Supersolutions per `(p, κ)` in the ABP and measure suites.
    pub instances: usize,
    /// Random vertices per contact case.
    pub vertices: usize,
    /// Random fields per model in the inf-convolution demo.
    pub fields: usize,
    /// Random samples per model in the geometry self-test.
    pub geometry_samples: usize,
    /// Solved instances in the critical-density check.
    pub critical_instances: usize,
    /// Random boundary data per `(p, κ)` in the Harnack and Hölder sweeps.
    pub sweep_instances: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub out: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 30,
            vertices: 2000,
            fields: 10,
            geometry_samples: 1000,
            critical_instances: 20,
            sweep_instances: 4,
            jobs: 0,
            out: "plap-out".into(),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidInput(msg)
}

impl ExperimentConfig {
    /// Reject parameter combinations the models, operators or meshes cannot take.
    pub fn validate(&self) -> Result<()> {
        if self.model.n != 2 {
            return Err(invalid(format!("model.n = {} but only n = 2 is meshed", self.model.n)));
        }
        if self.model.curvatures.is_empty() || self.params.p.is_empty() {
            return Err(invalid("model.curvatures and params.p must be nonempty".into()));
        }
        for &c in &self.model.curvatures {
            if !(c <= 0.0 && c.is_finite()) {
                return Err(invalid(format!("model.curvatures entry {c} must be finite and <= 0")));
            }
        }
        for &n in &self.model.selftest_dims {
            if n < 2 {
                return Err(invalid(format!("model.selftest_dims entry {n} < 2")));
            }
        }
        for &c in &self.model.selftest_curvatures {
            let model = ManifoldModel::new(2, c)?;
            if c > 0.0 {
                model.check_radius(self.scales.r0)?;
            }
        }
        for &p in &self.params.p {
            EllipticParams::new(p, self.params.lambda, self.params.big_lambda, self.params.beta, 0.0)?;
        }
        if self.params.barrier_beta_r0.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(invalid("params.barrier_beta_r0 entries must be finite and >= 0".into()));
        }
        let s = &self.scales;
        for (name, v) in [
            ("r0", s.r0),
            ("r", s.r),
            ("sharp_radius", s.sharp_radius),
            ("decay_radius", s.decay_radius),
            ("harnack_radius", s.harnack_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("scales.{name} = {v} must be positive")));
            }
        }
        if 0.1 + 4.0 * s.r >= s.r0 {
            return Err(invalid(format!("scales.r = {} leaves room for no well inside R0 = {}", s.r, s.r0)));
        }
        for (name, v) in [("sharp_radius", s.sharp_radius), ("decay_radius", s.decay_radius), ("harnack_radius", s.harnack_radius)] {
            if 2.0 * v > s.r0 + 1e-12 {
                return Err(invalid(format!("scales.{name} = {v} exceeds R0/2")));
            }
        }
        let m = &self.mesh;
        for (name, v) in [
            ("n_r", m.n_r),
            ("n_theta", m.n_theta),
            ("fine_n_r", m.fine_n_r),
            ("fine_n_theta", m.fine_n_theta),
            ("decay_n_r", m.decay_n_r),
            ("decay_n_theta", m.decay_n_theta),
            ("infconv_n_r", m.infconv_n_r),
            ("infconv_n_theta", m.infconv_n_theta),
            ("sweep_n_theta", m.sweep_n_theta),
        ] {
            if v < 8 {
                return Err(invalid(format!("mesh.{name} = {v} is below the minimum 8")));
            }
        }
        if m.sweep_n_r.len() < 2 || m.sweep_n_r.iter().any(|&v| v < 8) {
            return Err(invalid("mesh.sweep_n_r needs at least two entries >= 8".into()));
        }
        let t = &self.tolerances;
        let all = [
            t.roundtrip,
            t.jac_fd,
            t.hess_fd,
            t.psd_monotone,
            t.closed_form,
            t.volume,
            t.sharp,
            t.m_tilde,
            t.measure,
            t.jacobian,
            t.jacobian_fraction,
            t.psd_c,
            t.infconv_slack,
            t.infconv_closed_form,
            t.barrier,
            t.delta_min,
            t.log_profile,
            t.dichotomy_delta,
            t.harnack_explicit,
            t.harnack_stability,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("tolerances must be finite and >= 0".into()));
        }
        if !(t.decay_m_tilde > 1.0) || t.jacobian_fraction > 1.0 || t.delta_min >= 1.0 {
            return Err(invalid("need decay_m_tilde > 1, jacobian_fraction <= 1, delta_min < 1".into()));
        }
        let r = &self.run;
        if r.instances == 0 || r.vertices == 0 || r.fields == 0 || r.geometry_samples == 0 || r.sweep_instances == 0 {
            return Err(invalid("run counts must be positive".into()));
        }
        Ok(())
    }

    /// Operator parameters of the supersolution suites for exponent `p`.
    pub fn elliptic(&self, p: f64) -> Result<EllipticParams> {
        EllipticParams::new(p, self.params.lambda, self.params.big_lambda, self.params.beta, 0.0)
    }

    pub fn models(&self) -> Result<Vec<ManifoldModel>> {
        self.model.curvatures.iter().map(|&c| ManifoldModel::new(self.model.n, c)).collect()
    }
}
