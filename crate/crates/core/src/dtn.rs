//! Discrete Dirichlet-to-Neumann operators.
//!
//! On a circle the operator is the Fourier multiplier |k|/R. On other curves
//! it is assembled with the method of fundamental solutions: logarithmic
//! charges sit outside the domain along the outward normals, each Fourier
//! mode of the boundary data is fitted by a Tikhonov-regularised least-squares
//! collocation, and the normal derivative of the fitted expansion gives the
//! image of that mode. Modes whose fit residual exceeds [`FIT_TOLERANCE`]
//! are treated as unresolved and mapped by the principal symbol k/|γ'(θ)|.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, validation, Error, Result};
use crate::geometry::{make_curve, BoundaryCurve, BoundaryField, CurveShape};
use crate::numerics::{dft_real, sym_eig, DenseMatrix, FourierCoefficients, QrFactors};

/// Dirichlet fit residual below which a Fourier mode counts as resolved.
pub const FIT_TOLERANCE: f64 = 1e-9;

/// Residual above which a low mode makes the construction unusable.
pub const FIT_FAILURE: f64 = 1e-6;

/// Integrity numbers recorded while building an operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    /// max |S_ij − S_ji| of the weighted matrix before symmetrisation.
    pub symmetry_defect: f64,
    /// ‖B·1‖∞ of the final operator.
    pub constant_kernel_defect: f64,
    /// max(0, −λ_min) of the weighted symmetric matrix.
    pub psd_defect: f64,
    /// Fourier modes k < `resolved_modes` were fitted by charges.
    pub resolved_modes: usize,
    pub max_fit_residual: f64,
    pub charge_offset: Option<f64>,
    pub regularization: Option<f64>,
}

#[derive(Clone, Debug)]
struct ChargeExpansion {
    sources: Vec<[f64; 2]>,
    qr: QrFactors,
    resolved_modes: usize,
}

#[derive(Clone, Debug)]
enum Representation {
    Multiplier { radius: f64 },
    Dense(Box<ChargeExpansion>),
}

/// A discrete DtN map bound to its curve.
#[derive(Clone, Debug)]
pub struct DtnOperator {
    curve: BoundaryCurve,
    repr: Representation,
    matrix: DenseMatrix,
    report: BuildReport,
}

/// Harmonic extension values at interior points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorSamples {
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
}

impl InteriorSamples {
    /// Largest violation of the maximum principle relative to boundary data `f`.
    pub fn maximum_principle_violation(&self, f: &[f64]) -> f64 {
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        self.values
            .iter()
            .map(|&v| (v - hi).max(lo - v).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Exact operator on the unit circle with `n` nodes.
pub fn build_dtn_circle(n: usize) -> Result<DtnOperator> {
    if n % 2 != 0 {
        return Err(validation(format!("circle DtN needs an even node count (got {n})")));
    }
    build_dtn_spectral(make_curve(CurveShape::unit_circle(), n)?)
}

/// Exact Fourier-multiplier operator on a circle of any radius.
pub fn build_dtn_spectral(curve: BoundaryCurve) -> Result<DtnOperator> {
    let radius = match *curve.shape() {
        CurveShape::Circle { radius } => radius,
        ref other => {
            return Err(validation(format!(
                "the spectral DtN map only exists for circles, not {other:?}"
            )))
        }
    };
    let n = curve.n();
    let half = n / 2;
    let mut row = vec![0.0; n];
    for (d, r) in row.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in 1..half {
            s += k as f64 * (2.0 * PI * (k * d % n) as f64 / n as f64).cos();
        }
        let nyquist = if d % 2 == 0 { 0.5 } else { -0.5 };
        *r = (2.0 * s / n as f64 + nyquist) / radius;
    }
    let matrix = DenseMatrix::from_fn(n, n, |i, j| row[(i + n - j) % n]);
    let report = BuildReport {
        symmetry_defect: 0.0,
        constant_kernel_defect: norm_inf(&matrix.mul_vec(&vec![1.0; n])),
        psd_defect: 0.0,
        resolved_modes: half + 1,
        max_fit_residual: 0.0,
        charge_offset: None,
        regularization: None,
    };
    Ok(DtnOperator {
        curve,
        repr: Representation::Multiplier { radius },
        matrix,
        report,
    })
}

/// Charge offset used when the configuration leaves it unset:
/// `L·(e^{48/N} − 1)` with `L` the mean radius perimeter/2π.
///
/// Charges at relative distance δ resolve modes up to roughly
/// k ≈ 16/ln(1+δ); this choice keeps the resolved band near N/3.
pub fn default_charge_offset(curve: &BoundaryCurve) -> f64 {
    curve.perimeter() / (2.0 * PI) * ((48.0 / curve.n() as f64).exp() - 1.0)
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Nodal values of the j-th real Fourier basis function together with its
/// wave number; the order is 1, cos θ, sin θ, cos 2θ, …, cos(Nθ/2).
fn basis_function(theta: &[f64], j: usize) -> (usize, Vec<f64>) {
    let n = theta.len();
    if j == 0 {
        return (0, vec![1.0; n]);
    }
    let k = (j + 1) / 2;
    let vals = if j % 2 == 1 {
        theta.iter().map(|t| (k as f64 * t).cos()).collect()
    } else {
        theta.iter().map(|t| (k as f64 * t).sin()).collect()
    };
    (k, vals)
}

/// Dense operator by the method of fundamental solutions.
pub fn build_dtn_general(curve: BoundaryCurve, charge_offset: f64, reg: f64) -> Result<DtnOperator> {
    if !(charge_offset > 0.0 && charge_offset.is_finite()) {
        return Err(validation(format!(
            "charge offset must be positive (got {charge_offset})"
        )));
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(validation(format!("regularization must be nonnegative (got {reg})")));
    }
    let n = curve.n();
    let nodes = curve.nodes();
    let normals = curve.normals();
    let sources: Vec<[f64; 2]> = nodes
        .iter()
        .zip(normals)
        .map(|(x, nu)| [x[0] + charge_offset * nu[0], x[1] + charge_offset * nu[1]])
        .collect();

    // Collocation block: charges, one constant, and a zero-total-charge row
    // so that constants map to zero exactly.
    let m = n + 1;
    let mut a = DenseMatrix::zeros(m, m);
    let mut dn = DenseMatrix::zeros(n, m);
    for i in 0..n {
        for (j, y) in sources.iter().enumerate() {
            let dx = nodes[i][0] - y[0];
            let dy = nodes[i][1] - y[1];
            let r2 = dx * dx + dy * dy;
            a[(i, j)] = 0.5 * r2.ln();
            dn[(i, j)] = (dx * normals[i][0] + dy * normals[i][1]) / r2;
        }
        a[(i, n)] = 1.0;
    }
    for j in 0..n {
        a[(n, j)] = 1.0;
    }
    let lambda = reg * a.max_abs() * (n as f64).sqrt();
    let mut stacked = DenseMatrix::zeros(2 * m, m);
    for i in 0..m {
        stacked.row_mut(i).copy_from_slice(a.row(i));
        stacked[(m + i, i)] = lambda;
    }
    let qr = QrFactors::new(&stacked)?;

    let theta = curve.theta();
    let speed = curve.speed();
    let required = (n / 16).max(4);
    let mut resolved_modes: Option<usize> = None;
    let mut max_fit_residual: f64 = 0.0;
    let mut image = DenseMatrix::zeros(n, n);
    let mut rhs = vec![0.0; 2 * m];
    for j in 0..n {
        let (k, f) = basis_function(theta, j);
        let column: Vec<f64> = if resolved_modes.is_none() {
            rhs[..n].copy_from_slice(&f);
            let x = qr.least_squares(&rhs)?;
            let residual = (0..n)
                .map(|i| (crate::numerics::dot(a.row(i), &x) - f[i]).abs())
                .fold(0.0, f64::max);
            if residual > FIT_FAILURE && k <= required {
                return Err(Error::IllConditioned {
                    mode: k,
                    residual,
                    offset: charge_offset,
                    lambda,
                });
            }
            if residual <= FIT_TOLERANCE {
                max_fit_residual = max_fit_residual.max(residual);
                dn.mul_vec(&x)
            } else {
                resolved_modes = Some(k);
                principal_symbol(k, &f, speed)
            }
        } else {
            principal_symbol(k, &f, speed)
        };
        for i in 0..n {
            image[(i, j)] = column[i];
        }
    }
    let resolved_modes = resolved_modes.unwrap_or(n / 2 + 1);

    let analysis = DenseMatrix::from_fn(n, n, |j, l| analysis_entry(theta, j, l));
    let raw = image.matmul(&analysis);

    let sw: Vec<f64> = curve.weights().iter().map(|w| w.sqrt()).collect();
    let isw: Vec<f64> = sw.iter().map(|s| 1.0 / s).collect();
    let weighted = raw.scale_rows_cols(&sw, &isw);
    let symmetry_defect = weighted.symmetry_defect();
    let weighted = weighted.symmetrized();
    let matrix = weighted.scale_rows_cols(&isw, &sw);

    let lowest = sym_eig(&weighted, 1e-12)?.values[0];
    let report = BuildReport {
        symmetry_defect,
        constant_kernel_defect: norm_inf(&matrix.mul_vec(&vec![1.0; n])),
        psd_defect: (-lowest).max(0.0),
        resolved_modes,
        max_fit_residual,
        charge_offset: Some(charge_offset),
        regularization: Some(lambda),
    };
    Ok(DtnOperator {
        curve,
        repr: Representation::Dense(Box::new(ChargeExpansion {
            sources,
            qr,
            resolved_modes,
        })),
        matrix,
        report,
    })
}

/// Entry (j, l) of the inverse of the basis matrix, i.e. the weight of node
/// l in the coefficient of basis function j.
fn analysis_entry(theta: &[f64], j: usize, l: usize) -> f64 {
    let n = theta.len();
    let nf = n as f64;
    if j == 0 {
        return 1.0 / nf;
    }
    let k = (j + 1) / 2;
    let scale = if k == n / 2 { 1.0 / nf } else { 2.0 / nf };
    let arg = 2.0 * PI * ((k * l) % n) as f64 / nf;
    if j % 2 == 1 {
        scale * arg.cos()
    } else {
        scale * arg.sin()
    }
}

fn principal_symbol(k: usize, f: &[f64], speed: &[f64]) -> Vec<f64> {
    f.iter().zip(speed).map(|(v, s)| k as f64 * v / s).collect()
}

impl DtnOperator {
    pub fn curve(&self) -> &BoundaryCurve {
        &self.curve
    }

    pub fn n(&self) -> usize {
        self.curve.n()
    }

    pub fn report(&self) -> &BuildReport {
        &self.report
    }

    pub fn is_multiplier(&self) -> bool {
        matches!(self.repr, Representation::Multiplier { .. })
    }

    /// Nodal matrix of the operator.
    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// `W^{1/2} B W^{-1/2}`, symmetric whenever B is self-adjoint in L²(dS).
    pub fn weighted_symmetric(&self) -> DenseMatrix {
        let sw: Vec<f64> = self.curve.weights().iter().map(|w| w.sqrt()).collect();
        let isw: Vec<f64> = sw.iter().map(|s| 1.0 / s).collect();
        self.matrix.scale_rows_cols(&sw, &isw).symmetrized()
    }

    /// Applies the operator: through the DFT for a multiplier, by a
    /// matrix-vector product otherwise.
    pub fn apply(&self, f: &[f64]) -> Result<BoundaryField> {
        check_len(self.n(), f.len())?;
        match self.repr {
            Representation::Multiplier { radius } => {
                let c = dft_real(f)?;
                let half = c.max_mode();
                let mut out = FourierCoefficients {
                    mean: 0.0,
                    cos: vec![0.0; half + 1],
                    sin: vec![0.0; half + 1],
                };
                for k in 1..=half {
                    out.cos[k] = k as f64 * c.cos[k] / radius;
                    out.sin[k] = k as f64 * c.sin[k] / radius;
                }
                Ok(BoundaryField::new(crate::numerics::idft_real(&out)?))
            }
            Representation::Dense(_) => Ok(BoundaryField::new(self.matrix.mul_vec(f))),
        }
    }

    /// Evaluates the harmonic extension of `f` at interior points.
    ///
    /// Points must lie inside the curve and farther than one node spacing
    /// from every node. For dense operators only the resolved Fourier band
    /// of `f` is extended.
    pub fn harmonic_extend(&self, f: &[f64], points: &[[f64; 2]]) -> Result<InteriorSamples> {
        check_len(self.n(), f.len())?;
        let h = self.curve.node_spacing();
        for p in points {
            if !self.curve.contains(*p) {
                return Err(validation(format!("point ({}, {}) is outside the domain", p[0], p[1])));
            }
            let d = self.curve.distance_to_nodes(*p);
            if d <= h {
                return Err(validation(format!(
                    "point ({}, {}) is within one node spacing ({h:e}) of the boundary",
                    p[0], p[1]
                )));
            }
        }
        let c = dft_real(f)?;
        let values = match &self.repr {
            Representation::Multiplier { radius } => points
                .iter()
                .map(|p| {
                    let r = p[0].hypot(p[1]) / radius;
                    let t = p[1].atan2(p[0]);
                    let mut v = c.mean;
                    let mut rk = 1.0;
                    for k in 1..=c.max_mode() {
                        rk *= r;
                        let kt = k as f64 * t;
                        v += rk * (c.cos[k] * kt.cos() + c.sin[k] * kt.sin());
                    }
                    v
                })
                .collect(),
            Representation::Dense(exp) => {
                let n = self.n();
                let theta = self.curve.theta();
                let mut band = vec![0.0; n];
                for j in 0..n {
                    let (k, phi) = basis_function(theta, j);
                    if k >= exp.resolved_modes {
                        break;
                    }
                    let coef: f64 = (0..n).map(|l| analysis_entry(theta, j, l) * f[l]).sum();
                    for (b, v) in band.iter_mut().zip(&phi) {
                        *b += coef * v;
                    }
                }
                let mut rhs = vec![0.0; 2 * (n + 1)];
                rhs[..n].copy_from_slice(&band);
                let x = exp.qr.least_squares(&rhs)?;
                points
                    .iter()
                    .map(|p| {
                        let mut v = x[n];
                        for (q, y) in x.iter().zip(&exp.sources) {
                            let dx = p[0] - y[0];
                            let dy = p[1] - y[1];
                            v += q * 0.5 * (dx * dx + dy * dy).ln();
                        }
                        v
                    })
                    .collect()
            }
        };
        Ok(InteriorSamples {
            points: points.to_vec(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::integrate_boundary;
    use approx::assert_abs_diff_eq;

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn circle_pure_modes() {
        let op = build_dtn_circle(64).unwrap();
        let c = op.curve().clone();
        let f = c.field(|t| (3.0 * t).cos());
        let want = c.field(|t| 3.0 * (3.0 * t).cos());
        assert!(max_diff(&op.apply(&f).unwrap(), &want) < 1e-12);
        assert!(op.apply(&c.constant(7.0)).unwrap().norm_inf() < 1e-12);
        let f = c.field(|t| t.cos() + 2.0 * (5.0 * t).sin());
        let want = c.field(|t| t.cos() + 10.0 * (5.0 * t).sin());
        assert!(max_diff(&op.apply(&f).unwrap(), &want) < 1e-12);
        assert!(build_dtn_circle(63).is_err());
    }

    #[test]
    fn circle_matrix_matches_multiplier() {
        let op = build_dtn_circle(32).unwrap();
        let c = op.curve().clone();
        for k in 0..=16 {
            let f = c.field(|t| (k as f64 * t).cos() + 0.3 * (k as f64 * t).sin());
            let via_dft = op.apply(&f).unwrap();
            let via_matrix = op.matrix().mul_vec(&f);
            assert!(max_diff(&via_dft, &via_matrix) < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn circle_radius_scales_symbol() {
        let curve = make_curve(CurveShape::Circle { radius: 2.0 }, 32).unwrap();
        let op = build_dtn_spectral(curve.clone()).unwrap();
        let f = curve.field(|t| (4.0 * t).sin());
        let want = curve.field(|t| 2.0 * (4.0 * t).sin());
        assert!(max_diff(&op.apply(&f).unwrap(), &want) < 1e-12);
        let ellipse = make_curve(CurveShape::Ellipse { a: 1.0, b: 0.5 }, 32).unwrap();
        assert!(build_dtn_spectral(ellipse).is_err());
    }

    #[test]
    fn mfs_on_circle_matches_exact_symbol() {
        let curve = make_curve(CurveShape::unit_circle(), 256).unwrap();
        let op = build_dtn_general(curve.clone(), 0.6, 1e-12).unwrap();
        let mut err: f64 = 0.0;
        for k in 0..=20 {
            let kf = k as f64;
            for f in [curve.field(|t| (kf * t).cos()), curve.field(|t| (kf * t).sin())] {
                let got = op.apply(&f).unwrap();
                err = err.max(max_diff(&got, &f.scaled(kf)));
            }
        }
        assert!(err <= 1e-6, "max error {err:e}");
        let r = op.report();
        assert!(r.symmetry_defect <= 1e-7 && r.psd_defect <= 1e-7, "{r:?}");
        assert!(r.constant_kernel_defect <= 1e-8);
    }

    #[test]
    fn mfs_constant_kernel_and_flux() {
        let curve = make_curve(CurveShape::Star { epsilon: 0.1, m: 3 }, 128).unwrap();
        let off = default_charge_offset(&curve);
        let op = build_dtn_general(curve.clone(), off, 1e-12).unwrap();
        assert!(op.apply(&curve.constant(1.0)).unwrap().norm_inf() <= 1e-8);
        let f = curve.field(|t| (t.cos() * 2.0).exp() + (3.0 * t).sin());
        let flux = integrate_boundary(&curve, &op.apply(&f).unwrap()).unwrap();
        assert!(flux.abs() <= 1e-8 * f.norm_inf(), "flux {flux:e}");
    }

    #[test]
    fn mfs_rejects_bad_parameters() {
        let curve = make_curve(CurveShape::unit_circle(), 32).unwrap();
        assert!(build_dtn_general(curve.clone(), 0.0, 1e-12).is_err());
        assert!(build_dtn_general(curve, 0.5, -1.0).is_err());
    }

    #[test]
    fn mfs_fit_failure_is_reported() {
        // Charges far away cannot reproduce even the lowest modes.
        let curve = make_curve(CurveShape::unit_circle(), 64).unwrap();
        match build_dtn_general(curve, 50.0, 1e-3) {
            Err(Error::IllConditioned { residual, .. }) => assert!(residual > FIT_FAILURE),
            other => panic!("expected ill-conditioning, got {other:?}"),
        }
    }

    #[test]
    fn harmonic_extension_examples() {
        let op = build_dtn_circle(64).unwrap();
        let c = op.curve().clone();
        let s = op.harmonic_extend(&c.field(f64::cos), &[[0.5, 0.0]]).unwrap();
        assert_abs_diff_eq!(s.values[0], 0.5, epsilon = 1e-12);
        let s = op.harmonic_extend(&c.field(|t| (2.0 * t).cos()), &[[0.5, 0.0]]).unwrap();
        assert_abs_diff_eq!(s.values[0], 0.25, epsilon = 1e-12);
        let s = op
            .harmonic_extend(&c.constant(3.5), &[[0.1, -0.3], [0.0, 0.8]])
            .unwrap();
        assert!(s.values.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn harmonic_extension_on_dense_operator() {
        let curve = make_curve(CurveShape::unit_circle(), 64).unwrap();
        let op = build_dtn_general(curve.clone(), default_charge_offset(&curve), 1e-12).unwrap();
        let s = op
            .harmonic_extend(&curve.field(|t| (2.0 * t).cos()), &[[0.5, 0.0], [0.0, 0.0]])
            .unwrap();
        assert_abs_diff_eq!(s.values[0], 0.25, epsilon = 1e-8);
        assert_abs_diff_eq!(s.values[1], 0.0, epsilon = 1e-8);
        let s = op.harmonic_extend(&curve.constant(2.0), &[[0.3, 0.3]]).unwrap();
        assert_abs_diff_eq!(s.values[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn harmonic_extension_rejects_boundary_points() {
        let op = build_dtn_circle(64).unwrap();
        let f = op.curve().constant(1.0);
        assert!(op.harmonic_extend(&f, &[[0.99, 0.0]]).is_err());
        assert!(op.harmonic_extend(&f, &[[1.5, 0.0]]).is_err());
    }
}
