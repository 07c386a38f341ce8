//! Closed-form geometry of the constant-curvature space forms.
//!
//! Points carry normal coordinates about a fixed origin `o`. Internally every
//! computation goes through the unit ambient model: the unit sphere in
//! Euclidean `R^{n+1}` or the upper hyperboloid sheet in Minkowski `R^{n,1}`,
//! rescaled by `sqrt|c|`. Tangent vectors are expressed in the canonical
//! orthonormal frame at their base point, which is the parallel transport of
//! the standard frame at `o` along the radial geodesic.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SERIES_CUTOFF: f64 = 1e-4;

/// `sinh(tau)/tau`.
pub fn comparison_s(tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::NegativeArgument(tau));
    }
    Ok(sinhc(tau))
}

/// `tau * coth(tau)`.
pub fn comparison_h(tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::NegativeArgument(tau));
    }
    Ok(tcoth(tau))
}

pub(crate) fn sinhc(t: f64) -> f64 {
    let t = t.abs();
    if t < SERIES_CUTOFF {
        let t2 = t * t;
        1.0 + t2 / 6.0
            * (1.0 + t2 / 20.0 * (1.0 + t2 / 42.0 * (1.0 + t2 / 72.0 * (1.0 + t2 / 110.0))))
    } else {
        t.sinh() / t
    }
}

pub(crate) fn tcoth(t: f64) -> f64 {
    let t = t.abs();
    if t < SERIES_CUTOFF {
        let t2 = t * t;
        1.0 + t2 / 3.0 - t2 * t2 / 45.0 + 2.0 * t2.powi(3) / 945.0 - t2.powi(4) / 4725.0
            + 2.0 * t2.powi(5) / 93555.0
    } else {
        t / t.tanh()
    }
}

pub(crate) fn sinc(t: f64) -> f64 {
    let t = t.abs();
    if t < SERIES_CUTOFF {
        let t2 = t * t;
        1.0 - t2 / 6.0
            * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0 * (1.0 - t2 / 110.0))))
    } else {
        t.sin() / t
    }
}

pub(crate) fn tcot(t: f64) -> f64 {
    let t = t.abs();
    if t < SERIES_CUTOFF {
        let t2 = t * t;
        1.0 - t2 / 3.0 - t2 * t2 / 45.0 - 2.0 * t2.powi(3) / 945.0 - t2.powi(4) / 4725.0
            - 2.0 * t2.powi(5) / 93555.0
    } else {
        t / t.tan()
    }
}

/// A point given by its normal coordinates about the chart origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: DVector<f64>,
}

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        Self { coords: DVector::from_column_slice(coords) }
    }

    pub fn origin(n: usize) -> Self {
        Self { coords: DVector::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Components in the canonical orthonormal frame at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: Point,
    pub components: DVector<f64>,
}

impl TangentVector {
    pub fn new(base: Point, components: &[f64]) -> Self {
        Self { base, components: DVector::from_column_slice(components) }
    }

    pub fn zero(base: Point) -> Self {
        let n = base.dim();
        Self { base, components: DVector::zeros(n) }
    }

    pub fn norm(&self) -> f64 {
        self.components.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Flat,
    Sphere,
    Hyperbolic,
}

/// Simply connected space form of dimension `n` and constant sectional curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldModel {
    n: usize,
    curvature: f64,
}

impl ManifoldModel {
    pub fn new(n: usize, curvature: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("dimension {n} < 2")));
        }
        if !curvature.is_finite() {
            return Err(Error::InvalidInput("curvature must be finite".into()));
        }
        Ok(Self { n, curvature })
    }

    pub fn euclidean(n: usize) -> Self {
        Self::new(n, 0.0).expect("valid dimension")
    }

    pub fn hyperbolic(n: usize, kappa: f64) -> Self {
        Self::new(n, -kappa.abs()).expect("valid dimension")
    }

    pub fn spherical(n: usize, k: f64) -> Self {
        Self::new(n, k.abs()).expect("valid dimension")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    /// `kappa >= 0` with `Sec >= -kappa`.
    pub fn kappa(&self) -> f64 {
        (-self.curvature).max(0.0)
    }

    pub fn ricci_lower(&self) -> f64 {
        (self.n - 1) as f64 * self.curvature
    }

    fn kind(&self) -> Kind {
        if self.curvature > 0.0 {
            Kind::Sphere
        } else if self.curvature < 0.0 {
            Kind::Hyperbolic
        } else {
            Kind::Flat
        }
    }

    fn scale(&self) -> f64 {
        self.curvature.abs().sqrt()
    }

    /// Largest admissible ball radius (exclusive).
    pub fn radius_cap(&self) -> f64 {
        match self.kind() {
            Kind::Sphere => PI / (2.0 * self.scale()),
            _ => f64::INFINITY,
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match self.kind() {
            Kind::Sphere => PI / self.scale(),
            _ => f64::INFINITY,
        }
    }

    pub fn check_radius(&self, r: f64) -> Result<()> {
        if !(r > 0.0) || !r.is_finite() || r >= self.radius_cap() {
            return Err(Error::InadmissibleRadius { radius: r, cap: self.radius_cap() });
        }
        Ok(())
    }

    /// Jacobi function `sn_c(t)`.
    pub fn sn(&self, t: f64) -> f64 {
        t * self.sn_ratio(t)
    }

    /// `sn_c'(t)`.
    pub fn cn(&self, t: f64) -> f64 {
        let s = self.scale();
        match self.kind() {
            Kind::Flat => 1.0,
            Kind::Sphere => (s * t).cos(),
            Kind::Hyperbolic => (s * t).cosh(),
        }
    }

    /// `sn_c(t)/t`, equal to 1 at `t = 0`.
    pub fn sn_ratio(&self, t: f64) -> f64 {
        let s = self.scale();
        match self.kind() {
            Kind::Flat => 1.0,
            Kind::Sphere => sinc(s * t),
            Kind::Hyperbolic => sinhc(s * t),
        }
    }

    /// `t * sn_c'(t) / sn_c(t)`: the tangential eigenvalue of `D^2(d^2/2)` at distance `t`.
    pub fn cot_factor(&self, t: f64) -> f64 {
        let s = self.scale();
        match self.kind() {
            Kind::Flat => 1.0,
            Kind::Sphere => tcot(s * t),
            Kind::Hyperbolic => tcoth(s * t),
        }
    }

    /// `∫_0^t sn_c`.
    pub fn sn_integral(&self, t: f64) -> f64 {
        let s = self.scale();
        match self.kind() {
            Kind::Flat => 0.5 * t * t,
            Kind::Sphere => 2.0 * (0.5 * s * t).sin().powi(2) / (s * s),
            Kind::Hyperbolic => 2.0 * (0.5 * s * t).sinh().powi(2) / (s * s),
        }
    }

    /// Laplacian of the distance function at distance `d > 0`.
    pub fn laplacian_of_distance(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(Error::InvalidInput(format!("distance {d} must be positive")));
        }
        Ok((self.n - 1) as f64 * self.cot_factor(d) / d)
    }

    // ---- ambient model -------------------------------------------------

    pub(crate) fn ambient_len(&self) -> usize {
        self.n + 1
    }

    /// Ambient coordinates in the unit model of the point with normal coordinates `w`.
    pub(crate) fn embed_into(&self, w: &[f64], out: &mut [f64]) {
        let r = norm(w);
        match self.kind() {
            Kind::Flat => {
                out[0] = 0.0;
                out[1..].copy_from_slice(w);
            }
            Kind::Sphere | Kind::Hyperbolic => {
                let t = self.scale() * r;
                let (c, sr) = if self.kind() == Kind::Sphere {
                    (t.cos(), sinc(t) * self.scale())
                } else {
                    (t.cosh(), sinhc(t) * self.scale())
                };
                out[0] = c;
                for (o, wi) in out[1..].iter_mut().zip(w) {
                    *o = sr * wi;
                }
            }
        }
    }

    pub(crate) fn embed(&self, p: &Point) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient_len()];
        self.embed_into(p.coords.as_slice(), &mut out);
        out
    }

    pub(crate) fn unembed(&self, x: &[f64]) -> Point {
        let bar = &x[1..];
        match self.kind() {
            Kind::Flat => Point::new(bar),
            _ => {
                let b = norm(bar);
                if b == 0.0 {
                    return Point::origin(self.n);
                }
                let t = if self.kind() == Kind::Sphere { b.atan2(x[0]) } else { b.asinh() };
                let f = t / (self.scale() * b);
                Point { coords: DVector::from_iterator(self.n, bar.iter().map(|v| v * f)) }
            }
        }
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let tail: f64 = a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum();
        match self.kind() {
            Kind::Flat => tail,
            Kind::Sphere => a[0] * b[0] + tail,
            Kind::Hyperbolic => tail - a[0] * b[0],
        }
    }

    /// Radial data at ambient point `x`: `(C, S, w_hat)` with `x = (C, S w_hat)`.
    fn radial(&self, x: &[f64]) -> (f64, f64, Vec<f64>) {
        let bar = &x[1..];
        let s = norm(bar);
        let hat = if s > 0.0 {
            bar.iter().map(|v| v / s).collect()
        } else {
            let mut e = vec![0.0; self.n];
            e[0] = 1.0;
            e
        };
        (x[0], s, hat)
    }

    /// Unit-model ambient vector of the tangent vector with frame components `xi` at `x`.
    pub(crate) fn frame_to_ambient(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.ambient_len()];
        match self.kind() {
            Kind::Flat => v[1..].copy_from_slice(xi),
            kind => {
                let sc = self.scale();
                let (c, s, hat) = self.radial(x);
                let a = dot(xi, &hat);
                // transported radial direction minus the untransported one
                v[0] = if kind == Kind::Sphere { -s } else { s } * a;
                for i in 0..self.n {
                    v[i + 1] = xi[i] + a * (c - 1.0) * hat[i];
                }
                for vi in v.iter_mut() {
                    *vi *= sc;
                }
            }
        }
        v
    }

    /// Frame components at `x` of the unit-model tangent vector `v`.
    pub(crate) fn ambient_to_frame(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match self.kind() {
            Kind::Flat => v[1..].to_vec(),
            _ => {
                let sc = self.scale();
                let (c, s, hat) = self.radial(x);
                let vb = &v[1..];
                let a = -s * v[0] + (c - 1.0) * dot(vb, &hat);
                (0..self.n).map(|i| (vb[i] + hat[i] * a) / sc).collect()
            }
        }
    }

    /// Exponential map on ambient data; `xi` in frame components at `x`.
    pub(crate) fn exp_ambient(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let len = norm(xi);
        if len >= self.injectivity_radius() {
            return Err(Error::CutLocus { distance: len, limit: self.injectivity_radius() });
        }
        let v = self.frame_to_ambient(x, xi);
        let t = self.scale() * len;
        let (c, sr) = match self.kind() {
            Kind::Flat => (1.0, 1.0),
            Kind::Sphere => (t.cos(), sinc(t)),
            Kind::Hyperbolic => (t.cosh(), sinhc(t)),
        };
        let mut y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| c * a + sr * b).collect();
        if self.kind() == Kind::Flat {
            y[0] = 0.0;
        } else {
            self.renormalize(&mut y);
        }
        Ok(y)
    }

    fn renormalize(&self, y: &mut [f64]) {
        // pull the point back onto the unit model to stop drift
        let b = norm(&y[1..]);
        match self.kind() {
            Kind::Sphere => {
                let r = (y[0] * y[0] + b * b).sqrt();
                y.iter_mut().for_each(|v| *v /= r);
            }
            Kind::Hyperbolic => y[0] = (1.0 + b * b).sqrt(),
            Kind::Flat => {}
        }
    }

    /// Logarithm map on ambient data, returned as frame components at `x`.
    pub(crate) fn log_ambient(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match self.kind() {
            Kind::Flat => Ok(y[1..].iter().zip(&x[1..]).map(|(a, b)| a - b).collect()),
            kind => {
                let sigma = if kind == Kind::Sphere { 1.0 } else { -1.0 };
                let c = sigma * self.inner(x, y);
                let w: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - c * b).collect();
                let wn = self.inner(&w, &w).max(0.0).sqrt();
                let t = if kind == Kind::Sphere { wn.atan2(c) } else { wn.asinh() };
                let d = t / self.scale();
                if kind == Kind::Sphere && d >= self.injectivity_radius() * (1.0 - 1e-12) {
                    return Err(Error::CutLocus { distance: d, limit: self.injectivity_radius() });
                }
                if wn == 0.0 {
                    return Ok(vec![0.0; self.n]);
                }
                let f = t / wn;
                let v: Vec<f64> = w.iter().map(|a| a * f).collect();
                Ok(self.ambient_to_frame(x, &v))
            }
        }
    }

    /// Geodesic distance between ambient points, accurate for nearby pairs.
    #[inline]
    pub(crate) fn distance_ambient(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind() {
            Kind::Flat => {
                let mut q = 0.0;
                for i in 1..x.len() {
                    let d = x[i] - y[i];
                    q += d * d;
                }
                q.sqrt()
            }
            Kind::Sphere => {
                let mut q = 0.0;
                for i in 0..x.len() {
                    let d = x[i] - y[i];
                    q += d * d;
                }
                2.0 * (0.5 * q.sqrt()).min(1.0).asin() / self.scale()
            }
            Kind::Hyperbolic => {
                let d0 = x[0] - y[0];
                let mut q = -d0 * d0;
                for i in 1..x.len() {
                    let d = x[i] - y[i];
                    q += d * d;
                }
                2.0 * (0.5 * q.max(0.0).sqrt()).asinh() / self.scale()
            }
        }
    }

    /// A monotone surrogate of distance used for cheap pruning; see [`Self::distance_from_key`].
    #[inline]
    pub(crate) fn distance_key(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind() {
            Kind::Flat => {
                let mut q = 0.0;
                for i in 1..x.len() {
                    let d = x[i] - y[i];
                    q += d * d;
                }
                q
            }
            Kind::Sphere => {
                let mut q = 0.0;
                for i in 0..x.len() {
                    let d = x[i] - y[i];
                    q += d * d;
                }
                q
            }
            Kind::Hyperbolic => {
                let d0 = x[0] - y[0];
                let mut q = -d0 * d0;
                for i in 1..x.len() {
                    let d = x[i] - y[i];
                    q += d * d;
                }
                q.max(0.0)
            }
        }
    }

    #[inline]
    pub(crate) fn distance_from_key(&self, q: f64) -> f64 {
        match self.kind() {
            Kind::Flat => q.sqrt(),
            Kind::Sphere => 2.0 * (0.5 * q.sqrt()).min(1.0).asin() / self.scale(),
            Kind::Hyperbolic => 2.0 * (0.5 * q.sqrt()).asinh() / self.scale(),
        }
    }

    #[inline]
    pub(crate) fn key_from_distance(&self, d: f64) -> f64 {
        match self.kind() {
            Kind::Flat => d * d,
            Kind::Sphere => {
                let t = (0.5 * self.scale() * d).min(0.5 * PI);
                4.0 * t.sin().powi(2)
            }
            Kind::Hyperbolic => 4.0 * (0.5 * self.scale() * d).sinh().powi(2),
        }
    }

    // ---- public geometry -------------------------------------------------

    fn check_point(&self, p: &Point) -> Result<()> {
        if p.dim() != self.n {
            return Err(Error::InvalidInput(format!(
                "point of dimension {} in a model of dimension {}",
                p.dim(),
                self.n
            )));
        }
        let r = p.coords.norm();
        if r >= self.injectivity_radius() {
            return Err(Error::CutLocus { distance: r, limit: self.injectivity_radius() });
        }
        Ok(())
    }

    pub fn exp_map(&self, v: &TangentVector) -> Result<Point> {
        self.check_point(&v.base)?;
        if v.components.len() != self.n {
            return Err(Error::InvalidInput("tangent dimension mismatch".into()));
        }
        let x = self.embed(&v.base);
        let y = self.exp_ambient(&x, v.components.as_slice())?;
        Ok(self.unembed(&y))
    }

    pub fn log_map(&self, x: &Point, y: &Point) -> Result<TangentVector> {
        self.check_point(x)?;
        self.check_point(y)?;
        let xa = self.embed(x);
        let ya = self.embed(y);
        let v = self.log_ambient(&xa, &ya)?;
        Ok(TangentVector::new(x.clone(), &v))
    }

    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        self.distance_ambient(&self.embed(x), &self.embed(y))
    }

    /// Determinant of the differential of `exp` at `v`.
    pub fn jac_exp(&self, v: &TangentVector) -> Result<f64> {
        let len = v.norm();
        if len >= self.injectivity_radius() {
            return Err(Error::CutLocus { distance: len, limit: self.injectivity_radius() });
        }
        Ok(self.jac_exp_len(len))
    }

    pub(crate) fn jac_exp_len(&self, len: f64) -> f64 {
        self.sn_ratio(len).powi(self.n as i32 - 1)
    }

    /// `D^2(d_y^2/2)` at `x` in the canonical frame at `x`.
    pub fn hess_half_dist_sq(&self, x: &Point, y: &Point) -> Result<DMatrix<f64>> {
        let v = self.log_map(x, y)?;
        Ok(self.hess_half_dist_sq_from_log(v.components.as_slice()))
    }

    /// Same as [`Self::hess_half_dist_sq`] given `log_x(y)` in frame components.
    pub(crate) fn hess_half_dist_sq_from_log(&self, v: &[f64]) -> DMatrix<f64> {
        let d = norm(v);
        let mut m = DMatrix::identity(self.n, self.n);
        if d == 0.0 {
            return m;
        }
        let h = self.cot_factor(d);
        for i in 0..self.n {
            for j in 0..self.n {
                let uu = v[i] * v[j] / (d * d);
                m[(i, j)] = if i == j { h + (1.0 - h) * uu } else { (1.0 - h) * uu };
            }
        }
        m
    }

    /// Volume of a geodesic ball of radius `r`.
    pub fn ball_volume(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) || r > self.injectivity_radius() {
            return Err(Error::InadmissibleRadius { radius: r, cap: self.injectivity_radius() });
        }
        if self.n == 2 {
            return Ok(2.0 * PI * self.sn_integral(r));
        }
        let m = self.n - 1;
        let sphere_area = 2.0 * PI.powf(self.n as f64 / 2.0) / gamma_half_integer(self.n);
        let panels = 2000;
        let step = r / panels as f64;
        let f = |t: f64| self.sn(t).powi(m as i32);
        let mut acc = f(0.0) + f(r);
        for k in 1..panels {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * step);
        }
        Ok(sphere_area * acc * step / 3.0)
    }

    /// `2^n cosh^{n-1}(2 sqrt(kappa) R)`.
    pub fn doubling_constant(&self, radius: f64) -> Result<f64> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InadmissibleRadius { radius, cap: self.radius_cap() });
        }
        let t = 2.0 * self.kappa().sqrt() * radius;
        Ok(2f64.powi(self.n as i32) * t.cosh().powi(self.n as i32 - 1))
    }

    /// Infimum over unit `e` of `M^-_{lambda,Lambda}(R(e))`.
    pub fn pucci_ricci_lower(&self, lambda: f64, big_lambda: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda <= big_lambda) {
            return Err(Error::InvalidInput(format!(
                "ellipticity constants must satisfy 0 < {lambda} <= {big_lambda}"
            )));
        }
        let c = self.curvature;
        let w = if c < 0.0 { big_lambda } else { lambda };
        Ok((self.n - 1) as f64 * w * c)
    }
}

/// `Gamma(n/2)` for integer `n >= 1`.
fn gamma_half_integer(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < n as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
