//! Polar grids on geodesic balls of two-dimensional space forms.
//!
//! Node `0` is the pole; ring `i >= 1` holds `n_theta` nodes at angles
//! `j * h_theta`. Ring `n_r` is the boundary. Derivatives are taken in geodesic
//! polar coordinates `(r, theta)` about the mesh center and rotated into the
//! canonical frame at each node. Radial stencils that reach past the pole use
//! the reflected node `(r, theta + pi)`, so the pole never needs one-sided
//! differences.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldModel, Point, TangentVector};

/// Closed geodesic ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Self { center, radius }
    }
}

/// `Second`: compact central differences in `r` and `theta`.
/// `High`: fourth-order differences in `r` and spectral differentiation in `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StencilOrder {
    Second,
    High,
}

/// First and second derivative weights of trigonometric interpolation on `n` equispaced angles.
fn spectral_weights(n: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    d2[0] = -PI * PI / (3.0 * h * h) - 1.0 / 6.0;
    for m in 1..n {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let half = 0.5 * m as f64 * h;
        d1[m] = -0.5 * sign / half.tan();
        d2[m] = -0.5 * sign / half.sin().powi(2);
    }
    (d1, d2)
}

/// Gradient and Hessian at a node, in the canonical frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub grad: Vector2<f64>,
    pub hess: Matrix2<f64>,
}

#[derive(Debug, Clone)]
pub struct GeodesicBallMesh {
    model: ManifoldModel,
    center: Point,
    radius: f64,
    n_r: usize,
    n_theta: usize,
    h_r: f64,
    h_theta: f64,
    nodes: Vec<Point>,
    ambient: Vec<f64>,
    weights: Vec<f64>,
    /// Unit radial direction at each node in its canonical frame (pole: the center's first axis).
    radial_dir: Vec<Vector2<f64>>,
    /// Periodic spectral differentiation weights by angular offset.
    spectral_d1: Vec<f64>,
    spectral_d2: Vec<f64>,
    order: StencilOrder,
}

impl GeodesicBallMesh {
    pub fn build(
        model: ManifoldModel,
        center: Point,
        radius: f64,
        n_r: usize,
        n_theta: usize,
    ) -> Result<Self> {
        if model.dim() != 2 {
            return Err(Error::InvalidInput(format!(
                "polar meshes need n = 2, got n = {}",
                model.dim()
            )));
        }
        model.check_radius(radius)?;
        if n_r < 8 || n_theta < 8 {
            return Err(Error::InvalidInput(format!("resolution {n_r}x{n_theta} below 8")));
        }
        if !n_theta.is_multiple_of(2) {
            return Err(Error::InvalidInput("n_theta must be even".into()));
        }
        let reach = center.coords.norm() + radius;
        if reach >= model.injectivity_radius() {
            return Err(Error::InadmissibleRadius { radius: reach, cap: model.injectivity_radius() });
        }
        let h_r = radius / n_r as f64;
        let h_theta = 2.0 * PI / n_theta as f64;
        let count = 1 + n_r * n_theta;
        let stride = model.ambient_len();
        let c_amb = model.embed(&center);
        let centered = center.coords.norm() == 0.0;

        let mut nodes = Vec::with_capacity(count);
        let mut ambient = Vec::with_capacity(count * stride);
        let mut weights = Vec::with_capacity(count);
        let mut radial_dir = Vec::with_capacity(count);

        nodes.push(center.clone());
        ambient.extend_from_slice(&c_amb);
        weights.push(2.0 * PI * model.sn_integral(0.5 * h_r));
        radial_dir.push(Vector2::new(1.0, 0.0));

        for i in 1..=n_r {
            let r = i as f64 * h_r;
            let lo = r - 0.5 * h_r;
            let hi = if i == n_r { r } else { r + 0.5 * h_r };
            let w = h_theta * (model.sn_integral(hi) - model.sn_integral(lo));
            for j in 0..n_theta {
                let th = j as f64 * h_theta;
                let dir = [th.cos(), th.sin()];
                let xa = if centered {
                    let mut out = vec![0.0; stride];
                    model.embed_into(&[r * dir[0], r * dir[1]], &mut out);
                    out
                } else {
                    model.exp_ambient(&c_amb, &[r * dir[0], r * dir[1]])?
                };
                let er = if centered {
                    Vector2::new(dir[0], dir[1])
                } else {
                    let back = model.log_ambient(&xa, &c_amb)?;
                    let len = (back[0] * back[0] + back[1] * back[1]).sqrt();
                    Vector2::new(-back[0] / len, -back[1] / len)
                };
                nodes.push(model.unembed(&xa));
                ambient.extend_from_slice(&xa);
                weights.push(w);
                radial_dir.push(er);
            }
        }
        Ok(Self {
            model,
            center,
            radius,
            n_r,
            n_theta,
            h_r,
            h_theta,
            nodes,
            ambient,
            weights,
            radial_dir,
            spectral_d1: spectral_weights(n_theta, h_theta).0,
            spectral_d2: spectral_weights(n_theta, h_theta).1,
            order: StencilOrder::High,
        })
    }

    pub fn with_order(mut self, order: StencilOrder) -> Self {
        self.order = order;
        self
    }

    pub fn model(&self) -> &ManifoldModel {
        &self.model
    }
    pub fn center(&self) -> &Point {
        &self.center
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn ball(&self) -> Ball {
        Ball::new(self.center.clone(), self.radius)
    }
    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }
    pub fn h(&self) -> f64 {
        self.h_r
    }
    pub fn h_theta(&self) -> f64 {
        self.h_theta
    }
    pub fn order(&self) -> StencilOrder {
        self.order
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }
    pub fn node(&self, k: usize) -> &Point {
        &self.nodes[k]
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub(crate) fn ambient(&self, k: usize) -> &[f64] {
        let s = self.model.ambient_len();
        &self.ambient[k * s..(k + 1) * s]
    }

    pub fn index(&self, ring: usize, j: usize) -> usize {
        if ring == 0 {
            0
        } else {
            1 + (ring - 1) * self.n_theta + j % self.n_theta
        }
    }

    pub fn ring(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            1 + (k - 1) / self.n_theta
        }
    }

    pub fn angle_index(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            (k - 1) % self.n_theta
        }
    }

    /// Polar coordinates `(r, theta)` of node `k` about the mesh center.
    pub fn polar(&self, k: usize) -> (f64, f64) {
        (self.ring(k) as f64 * self.h_r, self.angle_index(k) as f64 * self.h_theta)
    }

    /// Unit radial direction at node `k` in its canonical frame.
    pub fn radial_direction(&self, k: usize) -> Vector2<f64> {
        self.radial_dir[k]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.ring(k) == self.n_r
    }

    pub fn boundary_nodes(&self) -> std::ops::Range<usize> {
        self.index(self.n_r, 0)..self.len()
    }

    pub fn interior_nodes(&self) -> std::ops::Range<usize> {
        0..self.index(self.n_r, 0)
    }

    pub fn distance_to(&self, k: usize, p: &Point) -> f64 {
        self.model.distance_ambient(self.ambient(k), &self.model.embed(p))
    }

    pub fn nodes_in_ball(&self, ball: &Ball) -> Vec<usize> {
        let c = self.model.embed(&ball.center);
        let key = self.model.key_from_distance(ball.radius * (1.0 + 1e-12));
        (0..self.len())
            .filter(|&k| self.model.distance_key(self.ambient(k), &c) <= key)
            .collect()
    }

    /// Field with values `f(node)`.
    pub fn field_from_fn(self: &Arc<Self>, name: &str, f: impl Fn(&Point) -> f64) -> ScalarField {
        let values = self.nodes.iter().map(f).collect();
        ScalarField::new(self.clone(), name, values).expect("finite values")
    }

    /// Value at ring `i >= 0` and signed angle index `j`; rings past the pole reflect.
    #[inline]
    fn val(&self, v: &[f64], i: isize, j: isize) -> f64 {
        let n = self.n_theta as isize;
        if i == 0 {
            v[0]
        } else if i < 0 {
            v[self.index((-i) as usize, (j + n / 2).rem_euclid(n) as usize)]
        } else {
            v[self.index(i as usize, j.rem_euclid(n) as usize)]
        }
    }

    /// Raw polar partials `(u_r, u_theta, u_rr, u_rtheta, u_thetatheta)` at ring `i >= 1`.
    fn partials(&self, v: &[f64], i: usize, j: usize, order: StencilOrder) -> [f64; 5] {
        let (i, j) = (i as isize, j as isize);
        let (h, ht) = (self.h_r, self.h_theta);
        let n = self.n_theta as isize;
        let high = order == StencilOrder::High;
        let d_theta = |ii: isize| -> f64 {
            if ii == 0 {
                return 0.0;
            }
            if high {
                (0..n).map(|m| self.spectral_d1[m as usize] * self.val(v, ii, j + m)).sum()
            } else {
                (self.val(v, ii, j + 1) - self.val(v, ii, j - 1)) / (2.0 * ht)
            }
        };
        let u0 = self.val(v, i, j);
        let (ut, utt) = if high {
            let mut a = 0.0;
            let mut b = 0.0;
            for m in 0..n {
                let x = self.val(v, i, j + m);
                a += self.spectral_d1[m as usize] * x;
                b += self.spectral_d2[m as usize] * x;
            }
            (a, b)
        } else {
            let (tm1, tp1) = (self.val(v, i, j - 1), self.val(v, i, j + 1));
            ((tp1 - tm1) / (2.0 * ht), (tp1 - 2.0 * u0 + tm1) / (ht * ht))
        };
        if high && (i as usize) + 2 <= self.n_r {
            let (um2, um1, up1, up2) =
                (self.val(v, i - 2, j), self.val(v, i - 1, j), self.val(v, i + 1, j), self.val(v, i + 2, j));
            let ur = (-up2 + 8.0 * up1 - 8.0 * um1 + um2) / (12.0 * h);
            let urr = (-up2 + 16.0 * up1 - 30.0 * u0 + 16.0 * um1 - um2) / (12.0 * h * h);
            let urt = (-d_theta(i + 2) + 8.0 * d_theta(i + 1) - 8.0 * d_theta(i - 1) + d_theta(i - 2))
                / (12.0 * h);
            [ur, ut, urr, urt, utt]
        } else {
            let (um1, up1) = (self.val(v, i - 1, j), self.val(v, i + 1, j));
            let ur = (up1 - um1) / (2.0 * h);
            let urr = (up1 - 2.0 * u0 + um1) / (h * h);
            let urt = (d_theta(i + 1) - d_theta(i - 1)) / (2.0 * h);
            [ur, ut, urr, urt, utt]
        }
    }

    /// Gradient and Hessian at node `k` from raw values.
    pub fn jet_of(&self, v: &[f64], k: usize) -> Result<Jet> {
        self.jet_with_order(v, k, self.order)
    }

    pub fn jet_with_order(&self, v: &[f64], k: usize, order: StencilOrder) -> Result<Jet> {
        if self.is_boundary(k) {
            return Err(Error::BoundaryNode(k));
        }
        if k == 0 {
            return Ok(self.pole_jet(v, order));
        }
        let i = self.ring(k);
        let j = self.angle_index(k);
        let [ur, ut, urr, urt, utt] = self.partials(v, i, j, order);
        let r = i as f64 * self.h_r;
        let jr = self.model.sn(r);
        let dj = self.model.cn(r) / jr;
        let g_pol = Vector2::new(ur, ut / jr);
        let hrt = (urt - dj * ut) / jr;
        let h_pol = Matrix2::new(urr, hrt, hrt, utt / (jr * jr) + dj * ur);
        let er = self.radial_dir[k];
        let rot = Matrix2::new(er[0], -er[1], er[1], er[0]);
        Ok(Jet { grad: rot * g_pol, hess: rot * h_pol * rot.transpose() })
    }

    /// Pole jet fitted from the directional derivatives along the lines through the pole.
    fn pole_jet(&self, v: &[f64], order: StencilOrder) -> Jet {
        let n = self.n_theta;
        let h = self.h_r;
        let mut g = Vector2::zeros();
        let (mut tr, mut a, mut b) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let jj = j as isize;
            let opp = jj + n as isize / 2;
            let (p1, m1) = (self.val(v, 1, jj), self.val(v, 1, opp));
            let (d1, d2) = match order {
                StencilOrder::High => {
                    let (p2, m2) = (self.val(v, 2, jj), self.val(v, 2, opp));
                    (
                        (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h),
                        (-p2 + 16.0 * p1 - 30.0 * v[0] + 16.0 * m1 - m2) / (12.0 * h * h),
                    )
                }
                StencilOrder::Second => ((p1 - m1) / (2.0 * h), (p1 - 2.0 * v[0] + m1) / (h * h)),
            };
            let th = j as f64 * self.h_theta;
            g += Vector2::new(th.cos(), th.sin()) * d1;
            tr += d2;
            a += d2 * (2.0 * th).cos();
            b += d2 * (2.0 * th).sin();
        }
        let s = 2.0 / n as f64;
        let (tr, a, b) = (tr * s, a * s, b * s);
        Jet { grad: g * s, hess: Matrix2::new(0.5 * tr + a, b, b, 0.5 * tr - a) }
    }

    /// Sum of weights of nodes inside `ball` whose value satisfies `pred`.
    pub fn measure_where(&self, values: &[f64], pred: impl Fn(f64) -> bool, ball: &Ball) -> f64 {
        self.nodes_in_ball(ball)
            .into_iter()
            .filter(|&k| pred(values[k]))
            .map(|k| self.weights[k])
            .sum()
    }
}

/// Values of a function on the nodes of a mesh.
#[derive(Debug, Clone)]
pub struct ScalarField {
    mesh: Arc<GeodesicBallMesh>,
    values: Vec<f64>,
    name: String,
}

impl ScalarField {
    pub fn new(mesh: Arc<GeodesicBallMesh>, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values for {} nodes",
                values.len(),
                mesh.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at node {k}")));
        }
        Ok(Self { mesh, values, name: name.to_string() })
    }

    pub fn mesh(&self) -> &Arc<GeodesicBallMesh> {
        &self.mesh
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn map(&self, name: &str, f: impl Fn(f64) -> f64) -> ScalarField {
        let values = self.values.iter().map(|&v| f(v)).collect();
        ScalarField::new(self.mesh.clone(), name, values).expect("finite values")
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        self.map(&self.name, |v| s * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn jet(&self, k: usize) -> Result<Jet> {
        self.mesh.jet_of(&self.values, k)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::InvalidInput(e.to_string());
        out.write_record(["node", "r", "theta", "weight", &self.name]).map_err(io)?;
        for k in 0..self.mesh.len() {
            let (r, th) = self.mesh.polar(k);
            out.write_record([
                k.to_string(),
                format!("{r:.12e}"),
                format!("{th:.12e}"),
                format!("{:.12e}", self.mesh.weights[k]),
                format!("{:.12e}", self.values[k]),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

pub fn gradient(field: &ScalarField, node: usize) -> Result<TangentVector> {
    let jet = field.jet(node)?;
    Ok(TangentVector::new(field.mesh.node(node).clone(), jet.grad.as_slice()))
}

pub fn hessian(field: &ScalarField, node: usize) -> Result<DMatrix<f64>> {
    let jet = field.jet(node)?;
    Ok(DMatrix::from_column_slice(2, 2, jet.hess.as_slice()))
}

pub fn measure_of(field: &ScalarField, pred: impl Fn(f64) -> bool, subball: &Ball) -> f64 {
    field.mesh.measure_where(&field.values, pred, subball)
}
