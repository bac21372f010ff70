//! Linearisation around a steady state and its weighted eigenproblem
//! `L_φ e = μ φ^{p−1} e`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, validation, Error, Result};
use crate::geometry::{BoundaryCurve, BoundaryField};
use crate::numerics::{sym_eig, DenseMatrix};
use crate::stationary::{ProblemSpec, SteadyState};

/// Nodal matrix of L_φ = B + a − s·p·φ^{p−1}.
pub fn assemble_linearized(spec: &ProblemSpec, phi: &[f64]) -> Result<DenseMatrix> {
    check_len(spec.n(), phi.len())?;
    if phi.iter().any(|&v| !(v > 0.0)) {
        return Err(validation("linearisation needs a strictly positive steady state"));
    }
    let sp = spec.source_coefficient() * spec.p();
    let mut l = spec.linear_matrix().clone();
    for (i, &f) in phi.iter().enumerate() {
        l[(i, i)] -= sp * f.powf(spec.p() - 1.0);
    }
    Ok(l)
}

/// Negative, zero and positive mode counts and the sharp rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCounts {
    #[serde(rename = "I")]
    pub unstable: usize,
    #[serde(rename = "K")]
    pub central: usize,
    /// One-based index of the first positive eigenvalue, I + K + 1.
    pub k: usize,
    pub gamma_p: f64,
}

/// Tolerance 1e-6·(1 + |μ₁|) for declaring an eigenvalue zero.
pub fn default_mode_tol(mu: &[f64]) -> f64 {
    1e-6 * (1.0 + mu.first().map_or(0.0, |m| m.abs()))
}

pub fn classify_modes(mu: &[f64], p: f64, zero_tol: f64) -> Result<ModeCounts> {
    let unstable = mu.iter().filter(|&&m| m < -zero_tol).count();
    let central = mu.iter().filter(|&&m| m.abs() <= zero_tol).count();
    let k = unstable + central + 1;
    let mu_k = *mu.get(k - 1).ok_or(Error::NoPositiveEigenvalue)?;
    if !(mu_k > zero_tol) {
        return Err(Error::NoPositiveEigenvalue);
    }
    Ok(ModeCounts {
        unstable,
        central,
        k,
        gamma_p: mu_k / p,
    })
}

/// Weighted eigenpairs of the linearised operator.
#[derive(Clone, Debug)]
pub struct LinearizedSpectrum {
    pub mu: Vec<f64>,
    /// Orthonormal in L²(∂Ω; φ^{p−1} dS).
    pub modes: Vec<BoundaryField>,
    /// The weight φ^{p−1}.
    pub weight: BoundaryField,
    pub phi: BoundaryField,
    pub p: f64,
    pub counts: ModeCounts,
    /// Asymmetry of the conjugated matrix before symmetrisation.
    pub symmetry_defect: f64,
    quadrature: Vec<f64>,
}

/// The exported summary of a spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub mu: Vec<f64>,
    #[serde(rename = "I")]
    pub unstable: usize,
    #[serde(rename = "K")]
    pub central: usize,
    pub k: usize,
    pub gamma_p: f64,
    pub symmetry_defect: f64,
}

pub fn solve_weighted_spectrum(
    l: &DenseMatrix,
    phi: &[f64],
    p: f64,
    curve: &BoundaryCurve,
) -> Result<LinearizedSpectrum> {
    let n = curve.n();
    check_len(n, phi.len())?;
    if l.rows() != n || l.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: l.rows(),
        });
    }
    let weight: Vec<f64> = phi.iter().map(|f| f.powf(p - 1.0)).collect();
    if let Some(i) = weight.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(validation(format!("spectral weight is not positive at node {i}")));
    }
    let w = curve.weights();
    // (WΩ)^{-1/2} W L (WΩ)^{-1/2}
    let left: Vec<f64> = (0..n).map(|i| (w[i] / weight[i]).sqrt()).collect();
    let right: Vec<f64> = (0..n).map(|i| 1.0 / (w[i] * weight[i]).sqrt()).collect();
    let conj = l.scale_rows_cols(&left, &right);
    let symmetry_defect = conj.symmetry_defect();
    let eig = sym_eig(&conj.symmetrized(), 1e-12)?;
    let mut modes: Vec<BoundaryField> = (0..n)
        .map(|j| {
            let y = eig.vector(j);
            BoundaryField::new(y.iter().zip(&right).map(|(v, r)| v * r).collect())
        })
        .collect();
    if modes[0].iter().sum::<f64>() < 0.0 {
        modes[0] = modes[0].scaled(-1.0);
    }
    let mu = eig.values;
    let counts = classify_modes(&mu, p, default_mode_tol(&mu))?;
    Ok(LinearizedSpectrum {
        mu,
        modes,
        weight: BoundaryField::new(weight),
        phi: BoundaryField::new(phi.to_vec()),
        p,
        counts,
        symmetry_defect,
        quadrature: w.to_vec(),
    })
}

/// Spectrum of the linearisation at a computed steady state.
pub fn spectrum_at(spec: &ProblemSpec, steady: &SteadyState) -> Result<LinearizedSpectrum> {
    let l = assemble_linearized(spec, &steady.phi)?;
    solve_weighted_spectrum(&l, &steady.phi, spec.p(), spec.curve())
}

impl LinearizedSpectrum {
    pub fn summary(&self) -> SpectrumSummary {
        SpectrumSummary {
            mu: self.mu.clone(),
            unstable: self.counts.unstable,
            central: self.counts.central,
            k: self.counts.k,
            gamma_p: self.counts.gamma_p,
            symmetry_defect: self.symmetry_defect,
        }
    }

    /// Recomputes the counts with a caller-chosen zero tolerance.
    pub fn reclassify(&mut self, zero_tol: f64) -> Result<()> {
        self.counts = classify_modes(&self.mu, self.p, zero_tol)?;
        Ok(())
    }

    pub fn gamma_p(&self) -> f64 {
        self.counts.gamma_p
    }

    /// ⟨f, g⟩ in L²(∂Ω; φ^{p−1} dS).
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        (0..f.len())
            .map(|i| f[i] * g[i] * self.weight[i] * self.quadrature[i])
            .sum()
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// Cosine between e₁ and φ in the weighted inner product.
    pub fn first_mode_alignment(&self) -> f64 {
        let e1 = &self.modes[0];
        self.inner(e1, &self.phi) / (self.norm(e1) * self.norm(&self.phi))
    }
}

/// y_i = ⟨h, e_i⟩ for i = 1..=up_to.
pub fn project_modes(h: &[f64], spectrum: &LinearizedSpectrum, up_to: usize) -> Result<Vec<f64>> {
    check_len(spectrum.phi.len(), h.len())?;
    if up_to > spectrum.modes.len() {
        return Err(validation(format!(
            "requested {up_to} modes but the spectrum has {}",
            spectrum.modes.len()
        )));
    }
    Ok(spectrum.modes[..up_to]
        .iter()
        .map(|e| spectrum.inner(h, e))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtn::build_dtn_circle;
    use crate::stationary::solve_steady;
    use approx::assert_abs_diff_eq;

    fn circle_case(n: usize, a: f64, p: f64, mass: Option<f64>) -> (ProblemSpec, LinearizedSpectrum) {
        let dtn = build_dtn_circle(n).unwrap();
        let a = dtn.curve().constant(a);
        let spec = ProblemSpec::new(dtn, a, p).unwrap();
        let st = solve_steady(&spec, None, mass).unwrap();
        let sp = spectrum_at(&spec, &st).unwrap();
        (spec, sp)
    }

    /// Multiset {scale·(|k| + shift)} for |k| ≤ kmax, sorted.
    fn symbol_multiset(kmax: usize, shift: f64, scale: f64) -> Vec<f64> {
        let mut v = vec![scale * shift];
        for k in 1..=kmax {
            v.push(scale * (k as f64 + shift));
            v.push(scale * (k as f64 + shift));
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn linearized_symbols() {
        let dtn = build_dtn_circle(32).unwrap();
        let c = dtn.curve().clone();
        let spec = ProblemSpec::new(dtn, c.constant(1.0), 2.0).unwrap();
        let l = assemble_linearized(&spec, &c.constant(0.5)).unwrap();
        for k in 0..8 {
            let f = c.field(|t| (k as f64 * t).cos());
            let lf = l.mul_vec(&f);
            for (a, b) in lf.iter().zip(f.iter()) {
                assert_abs_diff_eq!(*a, (k as f64 - 1.0) * b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn extinction_case_spectrum() {
        let (_, sp) = circle_case(64, 1.0, 2.0, None);
        let want = symbol_multiset(8, -1.0, 2.0);
        for (m, w) in sp.mu.iter().zip(&want) {
            assert_abs_diff_eq!(*m, *w, epsilon = 1e-6);
        }
        assert_eq!(
            (sp.counts.unstable, sp.counts.central, sp.counts.k),
            (1, 2, 4)
        );
        assert_abs_diff_eq!(sp.gamma_p(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sp.mu[0], -2.0, epsilon = 1e-6);
        assert!(sp.first_mode_alignment() >= 1.0 - 1e-8);
    }

    #[test]
    fn blowup_case_spectrum() {
        let (_, sp) = circle_case(64, -1.0, 0.5, None);
        let want = symbol_multiset(8, -0.5, 1.0);
        for (m, w) in sp.mu.iter().zip(&want) {
            assert_abs_diff_eq!(*m, *w, epsilon = 1e-6);
        }
        assert_eq!((sp.counts.unstable, sp.counts.central, sp.counts.k), (1, 0, 2));
        assert_abs_diff_eq!(sp.gamma_p(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn neutral_case_spectrum() {
        let (spec, _) = circle_case(64, 0.0, 2.0, Some(1.0));
        let mass = spec.mass(&spec.curve().constant(1.0));
        let (_, sp) = circle_case(64, 0.0, 2.0, Some(mass));
        assert!(sp.phi.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let want = symbol_multiset(8, 0.0, 1.0);
        for (m, w) in sp.mu.iter().zip(&want) {
            assert_abs_diff_eq!(*m, *w, epsilon = 1e-6);
        }
        assert_eq!((sp.counts.unstable, sp.counts.central, sp.counts.k), (0, 1, 2));
        assert_abs_diff_eq!(sp.gamma_p(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn classify_mode_examples() {
        let c = classify_modes(&[-2.0, 0.0, 0.0, 2.0, 2.0, 4.0], 2.0, 1e-6).unwrap();
        assert_eq!((c.unstable, c.central, c.k, c.gamma_p), (1, 2, 4, 1.0));
        let c = classify_modes(&[-0.5, 0.5, 0.5, 1.5], 0.5, 1e-6).unwrap();
        assert_eq!((c.unstable, c.central, c.k, c.gamma_p), (1, 0, 2, 1.0));
        let c = classify_modes(&[0.0, 1.0, 1.0, 2.0], 2.0, 1e-6).unwrap();
        assert_eq!((c.unstable, c.central, c.k, c.gamma_p), (0, 1, 2, 0.5));
        assert!(classify_modes(&[-1.0, 0.0], 2.0, 1e-6).is_err());
    }

    #[test]
    fn projections() {
        let (_, sp) = circle_case(32, 1.0, 2.0, None);
        let h = sp.modes[4].scaled(0.1);
        let y = project_modes(&h, &sp, 10).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert_abs_diff_eq!(*v, if i == 4 { 0.1 } else { 0.0 }, epsilon = 1e-10);
        }
        let zero = vec![0.0; 32];
        assert!(project_modes(&zero, &sp, 32).unwrap().iter().all(|v| *v == 0.0));
        let h = sp.modes[0].scaled(0.2).axpy(0.3, &sp.modes[1]);
        let y = project_modes(&h, &sp, 3).unwrap();
        assert_abs_diff_eq!(y[0], 0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(y[1], 0.3, epsilon = 1e-10);
        assert_abs_diff_eq!(y[2], 0.0, epsilon = 1e-10);
        assert!(project_modes(&h, &sp, 33).is_err());
    }
}
