//! First eigenvalue, regime classification, energies and steady states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dtn::DtnOperator;
use crate::error::{check_len, validation, Error, Result};
use crate::geometry::{inner, integrate_boundary, BoundaryCurve, BoundaryField};
use crate::numerics::{dot, sym_eig, DenseMatrix, LuFactors};

/// Smallest admissible |p − 1|.
pub const EXPONENT_GAP: f64 = 0.05;

/// Long-time behaviour selected by the sign of λ₁(p − 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// λ₁(p − 1) < 0: global solutions, u ~ (c + t)^{1/(p−1)}.
    Growth,
    /// λ₁ = 0: global solutions converging to a steady state.
    Neutral,
    /// λ₁(p − 1) > 0: extinction (p > 1) or blow-up (p < 1) in finite time.
    ExtinctionOrBlowup,
}

pub fn validate_exponent(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0) {
        return Err(validation(format!("exponent p must be positive (got {p})")));
    }
    if (p - 1.0).abs() < EXPONENT_GAP {
        return Err(validation(format!(
            "exponent p = {p} is too close to 1: |p - 1| must be at least {EXPONENT_GAP}"
        )));
    }
    Ok(())
}

/// Default Neutral tolerance 1e-8·(1 + ‖a‖∞).
pub fn default_zero_tol(a: &[f64]) -> f64 {
    1e-8 * (1.0 + a.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

pub fn classify_regime(lambda1: f64, p: f64, zero_tol: f64) -> Regime {
    if lambda1.abs() <= zero_tol {
        Regime::Neutral
    } else if lambda1 * (p - 1.0) < 0.0 {
        Regime::Growth
    } else {
        Regime::ExtinctionOrBlowup
    }
}

/// Smallest eigenvalue of B + a and its positive, L²(dS)-normalised eigenfunction.
pub fn first_eigen(dtn: &DtnOperator, a: &[f64]) -> Result<(f64, BoundaryField)> {
    let curve = dtn.curve();
    check_len(curve.n(), a.len())?;
    let mut s = dtn.weighted_symmetric();
    for (i, &ai) in a.iter().enumerate() {
        s[(i, i)] += ai;
    }
    let eig = sym_eig(&s, 1e-8)?;
    let isw: Vec<f64> = curve.weights().iter().map(|w| 1.0 / w.sqrt()).collect();
    let mut phi1: Vec<f64> = eig.vector(0).iter().zip(&isw).map(|(v, s)| v * s).collect();
    if phi1.iter().sum::<f64>() < 0.0 {
        phi1.iter_mut().for_each(|v| *v = -*v);
    }
    let field = BoundaryField::new(phi1);
    if field.min() <= 0.0 {
        return Err(Error::NotSignDefinite {
            min: field.min(),
            max: field.max(),
        });
    }
    Ok((eig.values[0], field))
}

/// Time factor of the separable solution φ·b_c(t).
pub fn separable_b(t: f64, c: f64, p: f64, regime: Regime) -> Result<f64> {
    validate_exponent(p)?;
    if !(c > 0.0) {
        return Err(validation(format!("separable constant c must be positive (got {c})")));
    }
    let e = 1.0 / (p - 1.0);
    match regime {
        Regime::Growth => Ok((c + t).powf(e)),
        Regime::Neutral => Ok(c.powf(e)),
        Regime::ExtinctionOrBlowup => {
            if t >= c {
                Err(validation(format!(
                    "separable solution is only defined for t < c (t = {t}, c = {c})"
                )))
            } else {
                Ok((c - t).powf(e))
            }
        }
    }
}

/// Exponent, coefficient and DtN operator with the derived λ₁ data cached.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    p: f64,
    a: BoundaryField,
    dtn: DtnOperator,
    zero_tol: f64,
    lambda1: f64,
    phi1: BoundaryField,
    regime: Regime,
    linear: DenseMatrix,
}

impl ProblemSpec {
    pub fn new(dtn: DtnOperator, a: BoundaryField, p: f64) -> Result<Self> {
        let tol = default_zero_tol(&a);
        Self::with_zero_tol(dtn, a, p, tol)
    }

    pub fn with_zero_tol(dtn: DtnOperator, a: BoundaryField, p: f64, zero_tol: f64) -> Result<Self> {
        validate_exponent(p)?;
        check_len(dtn.n(), a.len())?;
        if !(zero_tol >= 0.0) {
            return Err(validation("zero tolerance must be nonnegative"));
        }
        let (lambda1, phi1) = first_eigen(&dtn, &a)?;
        let regime = classify_regime(lambda1, p, zero_tol);
        let mut linear = dtn.matrix().clone();
        for (i, &ai) in a.iter().enumerate() {
            linear[(i, i)] += ai;
        }
        Ok(ProblemSpec {
            p,
            a,
            dtn,
            zero_tol,
            lambda1,
            phi1,
            regime,
            linear,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn a(&self) -> &BoundaryField {
        &self.a
    }

    pub fn dtn(&self) -> &DtnOperator {
        &self.dtn
    }

    pub fn curve(&self) -> &BoundaryCurve {
        self.dtn.curve()
    }

    pub fn n(&self) -> usize {
        self.dtn.n()
    }

    pub fn zero_tol(&self) -> f64 {
        self.zero_tol
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn phi1(&self) -> &BoundaryField {
        &self.phi1
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// sgn(λ₁) under the zero tolerance.
    pub fn sign(&self) -> f64 {
        match self.regime {
            Regime::Neutral => 0.0,
            _ => self.lambda1.signum(),
        }
    }

    /// s = sgn(λ₁)·p/|p − 1|, the coefficient of φ^p in the steady equation.
    pub fn source_coefficient(&self) -> f64 {
        self.sign() * self.p / (self.p - 1.0).abs()
    }

    /// Nodal matrix of B + diag(a).
    pub fn linear_matrix(&self) -> &DenseMatrix {
        &self.linear
    }

    /// (B + a)u.
    pub fn apply_linear(&self, u: &[f64]) -> Vec<f64> {
        self.linear.mul_vec(u)
    }

    /// F(φ) = Bφ + aφ − s φ^p.
    pub fn steady_residual(&self, phi: &[f64]) -> BoundaryField {
        let s = self.source_coefficient();
        let lin = self.apply_linear(phi);
        BoundaryField::new(
            lin.iter()
                .zip(phi)
                .map(|(l, f)| l - s * f.powf(self.p))
                .collect(),
        )
    }

    /// M₁ = ∫ w^p φ₁ dS.
    pub fn mass(&self, w: &[f64]) -> f64 {
        let wp: Vec<f64> = w.iter().map(|v| v.powf(self.p)).collect();
        inner(self.curve(), &wp, &self.phi1)
    }
}

/// Stationary profile with its metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteadyState {
    pub phi: BoundaryField,
    pub lambda1: f64,
    pub phi1: BoundaryField,
    pub yp: f64,
    pub residual: f64,
    pub regime: Regime,
    pub newton_iterations: usize,
}

/// G(f) = ∫ ½(f·Bf + a f²) − s/(p+1)·f^{p+1} dS.
pub fn energy_g(f: &[f64], spec: &ProblemSpec) -> Result<f64> {
    check_len(spec.n(), f.len())?;
    if let Some(i) = f.iter().position(|&v| v < 0.0) {
        return Err(validation(format!("energy G needs f >= 0, found {} at node {i}", f[i])));
    }
    let s = spec.source_coefficient();
    let p = spec.p();
    let lin = spec.apply_linear(f);
    let density: Vec<f64> = f
        .iter()
        .zip(&lin)
        .map(|(v, l)| 0.5 * v * l - s / (p + 1.0) * v.powf(p + 1.0))
        .collect();
    integrate_boundary(spec.curve(), &density)
}

/// E_p(f) = (⟨Bf, f⟩ + ∫a f²)/(∫|f|^{p+1})^{2/(p+1)}.
pub fn energy_ep(f: &[f64], spec: &ProblemSpec) -> Result<f64> {
    check_len(spec.n(), f.len())?;
    let p = spec.p();
    let curve = spec.curve();
    let pow: Vec<f64> = f.iter().map(|v| v.abs().powf(p + 1.0)).collect();
    let denom = integrate_boundary(curve, &pow)?;
    if !(denom > 0.0) {
        return Err(validation("E_p is undefined for a field with zero trace norm"));
    }
    let num = inner(curve, &spec.apply_linear(f), f);
    Ok(num / denom.powf(2.0 / (p + 1.0)))
}

/// Estimate of Y_p = inf E_p by minimising over span{φ₁, cos kθ, sin kθ : k ≤ 5}.
///
/// Projected gradient descent on the unit sphere of coefficients, started
/// from φ₁. The result is an upper bound for the discrete infimum.
pub fn estimate_yp(spec: &ProblemSpec) -> Result<f64> {
    let curve = spec.curve();
    let mut basis: Vec<Vec<f64>> = vec![spec.phi1().to_vec()];
    let max_k = 5.min(curve.n() / 2 - 1);
    for k in 1..=max_k {
        let kf = k as f64;
        basis.push(curve.field(|t| (kf * t).cos()).into_vec());
        basis.push(curve.field(|t| (kf * t).sin()).into_vec());
    }
    let m = basis.len();
    let p = spec.p();
    let images: Vec<Vec<f64>> = basis.iter().map(|b| spec.apply_linear(b)).collect();
    let gram = DenseMatrix::from_fn(m, m, |i, j| 0.5 * (inner(curve, &images[i], &basis[j]) + inner(curve, &images[j], &basis[i])));
    let combine = |c: &[f64]| -> Vec<f64> {
        let mut f = vec![0.0; curve.n()];
        for (ci, b) in c.iter().zip(&basis) {
            for (fv, bv) in f.iter_mut().zip(b) {
                *fv += ci * bv;
            }
        }
        f
    };
    let value = |c: &[f64]| -> f64 {
        let f = combine(c);
        let q = dot(c, &gram.mul_vec(c));
        let pw: f64 = f
            .iter()
            .zip(curve.weights())
            .map(|(v, w)| v.abs().powf(p + 1.0) * w)
            .sum();
        q / pw.powf(2.0 / (p + 1.0))
    };
    let gradient = |c: &[f64]| -> Vec<f64> {
        let f = combine(c);
        let q = dot(c, &gram.mul_vec(c));
        let pw: f64 = f
            .iter()
            .zip(curve.weights())
            .map(|(v, w)| v.abs().powf(p + 1.0) * w)
            .sum();
        let e = 2.0 / (p + 1.0);
        let gq = gram.mul_vec(c);
        (0..m)
            .map(|i| {
                let dp: f64 = (0..curve.n())
                    .map(|l| {
                        (p + 1.0) * f[l].abs().powf(p - 1.0) * f[l] * basis[i][l] * curve.weights()[l]
                    })
                    .sum();
                2.0 * gq[i] / pw.powf(e) - e * q * pw.powf(-e - 1.0) * dp
            })
            .collect()
    };

    let mut c = vec![0.0; m];
    c[0] = 1.0;
    let mut e = value(&c);
    let mut step = 1.0;
    for _ in 0..400 {
        let g = gradient(&c);
        // Tangential part of the gradient on the unit sphere.
        let radial = dot(&g, &c);
        let t: Vec<f64> = g.iter().zip(&c).map(|(gi, ci)| gi - radial * ci).collect();
        let tn = dot(&t, &t).sqrt();
        if tn <= 1e-12 * (1.0 + e.abs()) {
            break;
        }
        let mut accepted = false;
        while step > 1e-14 {
            let mut trial: Vec<f64> = c.iter().zip(&t).map(|(ci, ti)| ci - step * ti).collect();
            let nrm = dot(&trial, &trial).sqrt();
            trial.iter_mut().for_each(|v| *v /= nrm);
            let et = value(&trial);
            if et <= e - 1e-4 * step * tn * tn {
                c = trial;
                e = et;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(e)
}

const NEWTON_MAX_ITERATIONS: usize = 200;
const PETVIASHVILI_MAX_ITERATIONS: usize = 2000;

/// Solves F(φ) = Bφ + aφ − sφ^p = 0 for a positive φ.
///
/// In the Neutral regime the steady state is the multiple of φ₁ carrying
/// the conserved mass `mass_target = ∫ w₀^p φ₁ dS`.
pub fn solve_steady(
    spec: &ProblemSpec,
    init: Option<&BoundaryField>,
    mass_target: Option<f64>,
) -> Result<SteadyState> {
    let p = spec.p();
    let curve = spec.curve();
    let phi1 = spec.phi1();
    let phi1_pow: Vec<f64> = phi1.iter().map(|v| v.powf(p + 1.0)).collect();
    let int_phi1_pow = integrate_boundary(curve, &phi1_pow)?;

    let (phi, iterations) = if spec.regime() == Regime::Neutral {
        let mass = mass_target.ok_or_else(|| {
            validation(
                "the Neutral regime has a one-parameter family of steady states; \
                 supply mass_target = integral of w0^p * phi1 to select one",
            )
        })?;
        if !(mass > 0.0) {
            return Err(validation(format!("mass_target must be positive (got {mass})")));
        }
        let scale = (mass / int_phi1_pow).powf(1.0 / p);
        (phi1.scaled(scale), 0)
    } else {
        let start = match init {
            Some(f) => {
                check_len(spec.n(), f.len())?;
                if !f.is_positive() {
                    return Err(validation("initial guess must be strictly positive"));
                }
                f.clone()
            }
            None => {
                // ⟨F(cφ₁), φ₁⟩ = cλ₁ − s c^p ∫φ₁^{p+1} = 0.
                let c = (spec.lambda1() / (spec.source_coefficient() * int_phi1_pow))
                    .powf(1.0 / (p - 1.0));
                phi1.scaled(c)
            }
        };
        match newton(spec, start.clone()) {
            Ok(x) => x,
            // With B + a definite the fixed-point iteration below is globally
            // well behaved; use it to get into Newton's basin.
            Err(Error::NewtonStagnation { .. }) | Err(Error::PositivityLost(_)) if spec.lambda1() > 0.0 => {
                let (near, k) = petviashvili(spec, start)?;
                let (phi, j) = newton(spec, near)?;
                (phi, k + j)
            }
            Err(e) => return Err(e),
        }
    };

    let residual = spec.steady_residual(&phi).norm_inf();
    Ok(SteadyState {
        yp: estimate_yp(spec)?,
        lambda1: spec.lambda1(),
        phi1: phi1.clone(),
        residual,
        regime: spec.regime(),
        newton_iterations: iterations,
        phi,
    })
}

/// φ ← M^{p/(p−1)}(B + a)^{-1}(sφ^p) with M = ⟨(B + a)φ, φ⟩/⟨sφ^p, φ⟩.
fn petviashvili(spec: &ProblemSpec, mut phi: BoundaryField) -> Result<(BoundaryField, usize)> {
    let p = spec.p();
    let s = spec.source_coefficient();
    let lu = LuFactors::new(spec.linear_matrix())?;
    let curve = spec.curve();
    for k in 1..=PETVIASHVILI_MAX_ITERATIONS {
        let src: Vec<f64> = phi.iter().map(|v| s * v.powf(p)).collect();
        let num = inner(curve, &spec.apply_linear(&phi), &phi);
        let den = inner(curve, &src, &phi);
        let m = num / den;
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::NewtonStagnation {
                iterations: k,
                residual: spec.steady_residual(&phi).norm_inf(),
            });
        }
        let factor = m.powf(p / (p - 1.0));
        let next = BoundaryField::new(lu.solve(&src)?.into_iter().map(|v| factor * v).collect());
        if !next.is_positive() {
            return Err(Error::PositivityLost("fixed-point iterate left the positive cone".into()));
        }
        let change = next.zip_map(&phi, |a, b| a - b).norm_inf();
        phi = next;
        if change <= 1e-10 * phi.norm_inf() {
            return Ok((phi, k));
        }
    }
    Err(Error::NewtonStagnation {
        iterations: PETVIASHVILI_MAX_ITERATIONS,
        residual: spec.steady_residual(&phi).norm_inf(),
    })
}

fn newton(spec: &ProblemSpec, mut phi: BoundaryField) -> Result<(BoundaryField, usize)> {
    let p = spec.p();
    let s = spec.source_coefficient();
    let n = spec.n();
    let sq = |f: &BoundaryField| f.iter().map(|v| v * v).sum::<f64>();
    let mut res = spec.steady_residual(&phi);
    let mut iterations = 0;
    loop {
        let scale = 1.0 + phi.norm_inf().powf(p);
        let rn = res.norm_inf();
        if rn <= 1e-13 * scale {
            break;
        }
        if iterations >= NEWTON_MAX_ITERATIONS {
            if rn <= 1e-9 * scale {
                break;
            }
            return Err(Error::NewtonStagnation {
                iterations,
                residual: rn,
            });
        }
        iterations += 1;
        let mut jac = spec.linear_matrix().clone();
        for i in 0..n {
            jac[(i, i)] -= s * p * phi[i].powf(p - 1.0);
        }
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        let delta = match LuFactors::new(&jac).and_then(|lu| lu.solve(&rhs)) {
            Ok(d) => d,
            Err(_) if rn <= 1e-9 * scale => break,
            Err(e) => return Err(e),
        };
        let f0 = sq(&res);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-12 {
            let trial = BoundaryField::new(
                phi.iter().zip(&delta).map(|(f, d)| f + alpha * d).collect(),
            );
            if trial.is_positive() {
                let r = spec.steady_residual(&trial);
                if sq(&r) <= (1.0 - 1e-4 * alpha) * f0 {
                    accepted = Some((trial, r));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, r)) => {
                phi = trial;
                res = r;
            }
            None => {
                // No decrease is possible: either converged to rounding level
                // or genuinely stuck.
                if rn <= 1e-9 * scale {
                    break;
                }
                let any_positive = (0..n).any(|i| phi[i] + 1e-12 * delta[i] > 0.0);
                return Err(if any_positive {
                    Error::NewtonStagnation {
                        iterations,
                        residual: rn,
                    }
                } else {
                    Error::PositivityLost("steady Newton step left the positive cone".into())
                });
            }
        }
    }
    Ok((phi, iterations))
}

/// Outcome of repeated steady solves from random starting points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub trials: usize,
    pub max_distance: f64,
    pub max_residual: f64,
    pub solutions: Vec<BoundaryField>,
}

/// Solves the steady problem from `trials` random positive guesses and
/// reports the largest pairwise sup-distance between the results.
pub fn uniqueness_probe(spec: &ProblemSpec, trials: usize, seed: u64) -> Result<UniquenessReport> {
    if spec.regime() != Regime::Growth {
        return Err(validation("uniqueness is only guaranteed in the Growth regime"));
    }
    if trials == 0 {
        return Err(validation("uniqueness probe needs at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = solve_steady(spec, None, None)?;
    let base = reference.phi.norm_inf();
    let curve = spec.curve();
    let mut solutions = Vec::with_capacity(trials);
    let mut max_residual: f64 = 0.0;
    for _ in 0..trials {
        let scale = base * rng.gen_range(0.3..3.0);
        let coeffs: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
            .collect();
        let guess = curve.field(|t| {
            let mut e = 0.0;
            for (k, (c, s)) in coeffs.iter().enumerate() {
                let kt = (k + 1) as f64 * t;
                e += c * kt.cos() + s * kt.sin();
            }
            scale * e.exp()
        });
        let st = solve_steady(spec, Some(&guess), None)?;
        max_residual = max_residual.max(st.residual);
        solutions.push(st.phi);
    }
    let mut max_distance: f64 = 0.0;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            let d = solutions[i]
                .iter()
                .zip(solutions[j].iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            max_distance = max_distance.max(d);
        }
    }
    Ok(UniquenessReport {
        trials,
        max_distance,
        max_residual,
        solutions,
    })
}
