//! Discretised smooth boundary curves and fields living on them.

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, validation, Error, Result};
use crate::numerics::{dft_real, idft_real, FourierCoefficients};

/// Shape of a closed planar curve, parametrised counterclockwise by θ ∈ [0, 2π).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CurveShape {
    Circle { radius: f64 },
    /// `(a cos θ, b sin θ)`.
    Ellipse { a: f64, b: f64 },
    /// Polar curve `r(θ) = 1 + ε cos(mθ)`.
    Star { epsilon: f64, m: u32 },
}

impl CurveShape {
    pub fn unit_circle() -> Self {
        CurveShape::Circle { radius: 1.0 }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match *self {
            CurveShape::Circle { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(validation(format!("circle radius must be positive (got {radius})")));
                }
            }
            CurveShape::Ellipse { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(validation(format!(
                        "ellipse semi-axes must be positive (got {a}, {b})"
                    )));
                }
            }
            CurveShape::Star { epsilon, m } => {
                if m == 0 {
                    return Err(validation("star wave number m must be at least 1"));
                }
                let limit = 1.0 / (1.0 + (m as f64).powi(2));
                if !(epsilon.abs() <= limit) {
                    return Err(validation(format!(
                        "star amplitude |epsilon| = {} exceeds 1/(1+m^2) = {limit}",
                        epsilon.abs()
                    )));
                }
                if 2 * (m as usize + 1) >= n / 2 {
                    return Err(validation(format!(
                        "N = {n} is too coarse to resolve a star with m = {m}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn point(&self, theta: f64) -> [f64; 2] {
        match *self {
            CurveShape::Circle { radius } => [radius * theta.cos(), radius * theta.sin()],
            CurveShape::Ellipse { a, b } => [a * theta.cos(), b * theta.sin()],
            CurveShape::Star { epsilon, m } => {
                let r = 1.0 + epsilon * (m as f64 * theta).cos();
                [r * theta.cos(), r * theta.sin()]
            }
        }
    }
}

/// A closed curve sampled at `N` equispaced parameter values.
#[derive(Clone, Debug)]
pub struct BoundaryCurve {
    shape: CurveShape,
    theta: Vec<f64>,
    nodes: Vec<[f64; 2]>,
    speed: Vec<f64>,
    normals: Vec<[f64; 2]>,
    curvature: Vec<f64>,
    weights: Vec<f64>,
}

/// Builds a curve; derivatives come from spectral differentiation of the
/// sampled parametrisation.
pub fn make_curve(shape: CurveShape, n: usize) -> Result<BoundaryCurve> {
    if n < 16 || n % 2 != 0 {
        return Err(validation(format!(
            "boundary node count must be even and at least 16 (got {n})"
        )));
    }
    shape.validate(n)?;
    let theta: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let nodes: Vec<[f64; 2]> = theta.iter().map(|&t| shape.point(t)).collect();
    let xs: Vec<f64> = nodes.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = nodes.iter().map(|p| p[1]).collect();
    let (dx, ddx) = spectral_derivatives(&xs)?;
    let (dy, ddy) = spectral_derivatives(&ys)?;

    let mut speed = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut curvature = Vec::with_capacity(n);
    for i in 0..n {
        let s = dx[i].hypot(dy[i]);
        if !(s > 0.0) {
            return Err(validation("parametrisation has a vanishing derivative"));
        }
        speed.push(s);
        normals.push([dy[i] / s, -dx[i] / s]);
        curvature.push((dx[i] * ddy[i] - dy[i] * ddx[i]) / (s * s * s));
    }
    let h = 2.0 * PI / n as f64;
    let weights = speed.iter().map(|s| h * s).collect();
    Ok(BoundaryCurve {
        shape,
        theta,
        nodes,
        speed,
        normals,
        curvature,
        weights,
    })
}

fn spectral_derivatives(f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = dft_real(f)?;
    let half = c.max_mode();
    let mut d1 = FourierCoefficients {
        mean: 0.0,
        cos: vec![0.0; half + 1],
        sin: vec![0.0; half + 1],
    };
    let mut d2 = d1.clone();
    for k in 1..=half {
        let kf = k as f64;
        if k < half {
            d1.cos[k] = kf * c.sin[k];
            d1.sin[k] = -kf * c.cos[k];
        }
        d2.cos[k] = -kf * kf * c.cos[k];
        d2.sin[k] = -kf * kf * c.sin[k];
    }
    Ok((idft_real(&d1)?, idft_real(&d2)?))
}

impl BoundaryCurve {
    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn shape(&self) -> &CurveShape {
        &self.shape
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn speed(&self) -> &[f64] {
        &self.speed
    }

    pub fn normals(&self) -> &[[f64; 2]] {
        &self.normals
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn perimeter(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest distance between consecutive nodes.
    pub fn node_spacing(&self) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| {
                let a = self.nodes[i];
                let b = self.nodes[(i + 1) % n];
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .fold(0.0, f64::max)
    }

    /// Winding-number test against the node polygon.
    pub fn contains(&self, point: [f64; 2]) -> bool {
        let n = self.n();
        let mut inside = false;
        let (x, y) = (point[0], point[1]);
        for i in 0..n {
            let a = self.nodes[i];
            let b = self.nodes[(i + 1) % n];
            if (a[1] > y) != (b[1] > y) {
                let xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x < xc {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Distance from `point` to the nearest node.
    pub fn distance_to_nodes(&self, point: [f64; 2]) -> f64 {
        self.nodes
            .iter()
            .map(|q| (q[0] - point[0]).hypot(q[1] - point[1]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn field(&self, f: impl Fn(f64) -> f64) -> BoundaryField {
        BoundaryField(self.theta.iter().map(|&t| f(t)).collect())
    }

    pub fn constant(&self, c: f64) -> BoundaryField {
        BoundaryField(vec![c; self.n()])
    }
}

/// Nodal values of a function on a [`BoundaryCurve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundaryField(Vec<f64>);

impl BoundaryField {
    pub fn new(values: Vec<f64>) -> Self {
        BoundaryField(values)
    }

    pub fn on(curve: &BoundaryCurve, values: Vec<f64>) -> Result<Self> {
        check_len(curve.n(), values.len())?;
        Ok(BoundaryField(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> BoundaryField {
        BoundaryField(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &BoundaryField, f: impl Fn(f64, f64) -> f64) -> BoundaryField {
        assert_eq!(self.len(), other.len(), "field length mismatch");
        BoundaryField(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scaled(&self, c: f64) -> BoundaryField {
        self.map(|v| c * v)
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &BoundaryField) -> BoundaryField {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }
}

impl Deref for BoundaryField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for BoundaryField {
    fn from(v: Vec<f64>) -> Self {
        BoundaryField(v)
    }
}

/// A finite Fourier series in the curve parameter:
/// `mean + Σ c_k cos kθ + s_k sin kθ`, encoded as `(k, c_k, s_k)` triples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub modes: Vec<(u32, f64, f64)>,
}

impl FourierSeries {
    pub fn constant(mean: f64) -> Self {
        FourierSeries {
            mean,
            modes: Vec::new(),
        }
    }

    pub fn with_mode(mut self, k: u32, c: f64, s: f64) -> Self {
        self.modes.push((k, c, s));
        self
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.mean
            + self
                .modes
                .iter()
                .map(|&(k, c, s)| c * (k as f64 * theta).cos() + s * (k as f64 * theta).sin())
                .sum::<f64>()
    }

    pub fn synthesize(&self, curve: &BoundaryCurve) -> Result<BoundaryField> {
        if let Some(&(k, _, _)) = self.modes.iter().find(|m| 2 * m.0 as usize >= curve.n()) {
            return Err(validation(format!(
                "Fourier mode {k} is not resolved on a grid of {} nodes",
                curve.n()
            )));
        }
        Ok(curve.field(|t| self.eval(t)))
    }

    pub fn is_constant(&self) -> bool {
        self.modes.iter().all(|&(_, c, s)| c == 0.0 && s == 0.0)
    }
}

/// ∫ f dS by the trapezoid rule in the parameter.
pub fn integrate_boundary(curve: &BoundaryCurve, f: &[f64]) -> Result<f64> {
    check_len(curve.n(), f.len())?;
    Ok(f.iter().zip(&curve.weights).map(|(a, w)| a * w).sum())
}

/// ∫ f g ω dS for a strictly positive weight ω.
pub fn weighted_inner(curve: &BoundaryCurve, f: &[f64], g: &[f64], weight: &[f64]) -> Result<f64> {
    check_len(curve.n(), f.len())?;
    check_len(curve.n(), g.len())?;
    check_len(curve.n(), weight.len())?;
    if let Some(i) = weight.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::Validation(format!(
            "weight must be positive, found {} at node {i}",
            weight[i]
        )));
    }
    Ok((0..curve.n())
        .map(|i| f[i] * g[i] * weight[i] * curve.weights[i])
        .sum())
}

pub(crate) fn inner(curve: &BoundaryCurve, f: &[f64], g: &[f64]) -> f64 {
    f.iter()
        .zip(g)
        .zip(&curve.weights)
        .map(|((a, b), w)| a * b * w)
        .sum()
}

/// L²(∂Ω, dS) norm.
pub fn l2_norm(curve: &BoundaryCurve, f: &[f64]) -> f64 {
    inner(curve, f, f).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Composite Simpson rule on the analytic arclength integrand.
    fn arclength_oracle(speed: impl Fn(f64) -> f64, panels: usize) -> f64 {
        let h = 2.0 * PI / panels as f64;
        let mut s = speed(0.0) + speed(2.0 * PI);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * speed(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn unit_circle_geometry() {
        let c = make_curve(CurveShape::unit_circle(), 64).unwrap();
        for i in 0..64 {
            assert_abs_diff_eq!(c.speed()[i], 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(c.curvature()[i], 1.0, epsilon = 1e-12);
            let t = c.theta()[i];
            assert_abs_diff_eq!(c.normals()[i][0], t.cos(), epsilon = 1e-13);
            assert_abs_diff_eq!(c.normals()[i][1], t.sin(), epsilon = 1e-13);
        }
        assert_abs_diff_eq!(c.perimeter(), 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn ellipse_perimeter_matches_oracle() {
        let c = make_curve(CurveShape::Ellipse { a: 1.0, b: 0.5 }, 256).unwrap();
        // Adaptive-quadrature reference for the complete elliptic integral.
        assert_abs_diff_eq!(c.perimeter(), 4.8442241102738395, epsilon = 1e-10);
        assert_abs_diff_eq!(c.perimeter(), 4.84422411, epsilon = 1e-6);
        let simpson = arclength_oracle(|t| t.sin().hypot(0.5 * t.cos()), 20000);
        assert!((c.perimeter() - simpson).abs() <= 1e-10 * simpson);
        let ones = c.constant(1.0);
        assert_abs_diff_eq!(
            integrate_boundary(&c, &ones).unwrap(),
            4.84422411,
            epsilon = 1e-6
        );
    }

    #[test]
    fn star_invariants() {
        let c = make_curve(CurveShape::Star { epsilon: 0.1, m: 3 }, 128).unwrap();
        assert!(c.speed().iter().all(|&s| s > 0.0));
        for nrm in c.normals() {
            assert_abs_diff_eq!(nrm[0].hypot(nrm[1]), 1.0, epsilon = 1e-12);
        }
        let nx: f64 = (0..128).map(|i| c.normals()[i][0] * c.weights()[i]).sum();
        let ny: f64 = (0..128).map(|i| c.normals()[i][1] * c.weights()[i]).sum();
        assert!(nx.abs() < 1e-10 && ny.abs() < 1e-10);
        let simpson = arclength_oracle(
            |t| {
                let r = 1.0 + 0.1 * (3.0 * t).cos();
                let dr = -0.3 * (3.0 * t).sin();
                r.hypot(dr)
            },
            20000,
        );
        assert!((c.perimeter() - simpson).abs() <= 1e-10 * simpson);
    }

    #[test]
    fn shape_validation() {
        assert!(make_curve(CurveShape::unit_circle(), 15).is_err());
        assert!(make_curve(CurveShape::unit_circle(), 8).is_err());
        assert!(make_curve(CurveShape::Circle { radius: -1.0 }, 32).is_err());
        assert!(make_curve(CurveShape::Ellipse { a: 1.0, b: 0.0 }, 32).is_err());
        assert!(make_curve(CurveShape::Star { epsilon: 0.2, m: 3 }, 64).is_err());
        assert!(make_curve(CurveShape::Star { epsilon: 0.05, m: 7 }, 16).is_err());
    }

    #[test]
    fn integration_examples() {
        let c = make_curve(CurveShape::unit_circle(), 64).unwrap();
        let one = c.constant(1.0);
        let cos = c.field(f64::cos);
        let sin = c.field(f64::sin);
        assert_abs_diff_eq!(integrate_boundary(&c, &one).unwrap(), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate_boundary(&c, &cos).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(weighted_inner(&c, &one, &one, &one).unwrap(), 2.0 * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(weighted_inner(&c, &cos, &sin, &one).unwrap(), 0.0, epsilon = 1e-12);
        let two = c.constant(2.0);
        assert_abs_diff_eq!(weighted_inner(&c, &cos, &cos, &two).unwrap(), 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn weighted_inner_rejects_nonpositive_weight() {
        let c = make_curve(CurveShape::unit_circle(), 16).unwrap();
        let mut w = c.constant(1.0);
        w.values_mut()[3] = 0.0;
        let err = weighted_inner(&c, &w, &w, &w).unwrap_err();
        assert!(err.to_string().contains("node 3"));
        assert!(integrate_boundary(&c, &[1.0; 8]).is_err());
    }

    #[test]
    fn contains_and_spacing() {
        let c = make_curve(CurveShape::Ellipse { a: 2.0, b: 1.0 }, 64).unwrap();
        assert!(c.contains([0.0, 0.0]));
        assert!(c.contains([1.9, 0.0]));
        assert!(!c.contains([0.0, 1.1]));
        assert!(c.node_spacing() > 0.0 && c.node_spacing() < 2.0 * PI * 2.0 / 64.0 + 1e-12);
    }

    #[test]
    fn fourier_series_rejects_unresolved_modes() {
        let c = make_curve(CurveShape::unit_circle(), 16).unwrap();
        let s = FourierSeries::constant(1.0).with_mode(8, 1.0, 0.0);
        assert!(s.synthesize(&c).is_err());
        let s = FourierSeries::constant(1.0).with_mode(2, 0.5, 0.25);
        let f = s.synthesize(&c).unwrap();
        assert_abs_diff_eq!(f[0], 1.5, epsilon = 1e-15);
    }
}
