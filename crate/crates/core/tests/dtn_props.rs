use std::f64::consts::PI;
use std::sync::OnceLock;

use bdflow_core::dtn::default_charge_offset;
use bdflow_core::geometry::integrate_boundary;
use bdflow_core::{build_dtn_circle, build_dtn_general, make_curve, CurveShape, DtnOperator, FourierSeries};
use proptest::prelude::*;

fn mfs(shape: CurveShape, n: usize) -> DtnOperator {
    let curve = make_curve(shape, n).unwrap();
    let off = default_charge_offset(&curve);
    build_dtn_general(curve, off, 1e-14).unwrap()
}

fn circle_pair() -> &'static (DtnOperator, DtnOperator) {
    static OPS: OnceLock<(DtnOperator, DtnOperator)> = OnceLock::new();
    OPS.get_or_init(|| (build_dtn_circle(128).unwrap(), mfs(CurveShape::unit_circle(), 128)))
}

fn ellipse() -> &'static DtnOperator {
    static OP: OnceLock<DtnOperator> = OnceLock::new();
    OP.get_or_init(|| mfs(CurveShape::Ellipse { a: 1.4, b: 0.8 }, 96))
}

fn small_circle() -> &'static DtnOperator {
    static OP: OnceLock<DtnOperator> = OnceLock::new();
    OP.get_or_init(|| mfs(CurveShape::unit_circle(), 64))
}

fn series(max_k: u32) -> impl Strategy<Value = FourierSeries> {
    (-1.0f64..1.0, prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), max_k as usize)).prop_map(|(m, cs)| {
        cs.iter()
            .enumerate()
            .fold(FourierSeries::constant(m), |s, (i, (c, d))| s.with_mode(i as u32 + 1, *c, *d))
    })
}

fn dot(dtn: &DtnOperator, f: &[f64], g: &[f64]) -> f64 {
    let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    integrate_boundary(dtn.curve(), &prod).unwrap()
}

/// Dirichlet energy over the disk of radius `r` from |∇F|² sampled on rings.
fn ring_energy(dtn: &DtnOperator, f: &[f64], r: f64) -> f64 {
    let (nr, nt, h) = (16, 64, 1e-4);
    let mut ring_integrals = Vec::new();
    for i in 0..=nr {
        let rho = r * i as f64 / nr as f64;
        let mut pts = Vec::new();
        for j in 0..nt {
            let t = 2.0 * PI * j as f64 / nt as f64;
            let (x, y) = (rho * t.cos(), rho * t.sin());
            pts.extend([[x + h, y], [x - h, y], [x, y + h], [x, y - h]]);
        }
        let v = dtn.harmonic_extend(f, &pts).unwrap().values;
        let s: f64 = v
            .chunks(4)
            .map(|c| ((c[0] - c[1]) / (2.0 * h)).powi(2) + ((c[2] - c[3]) / (2.0 * h)).powi(2))
            .sum();
        ring_integrals.push(s * 2.0 * PI / nt as f64 * rho);
    }
    // Composite Simpson in the radius.
    let dr = r / nr as f64;
    (0..=nr)
        .map(|i| {
            let w = if i == 0 || i == nr { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * ring_integrals[i]
        })
        .sum::<f64>()
        * dr
        / 3.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mfs_matches_multiplier_on_resolved_band(s in series(32)) {
        let (exact, dense) = circle_pair();
        let f = s.synthesize(exact.curve()).unwrap();
        let a = exact.apply(&f).unwrap();
        let b = dense.apply(&f).unwrap();
        let scale: f64 = 1.0 + s.modes.iter().map(|m| m.1.abs() + m.2.abs()).sum::<f64>();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-6 * scale, "{} vs {}", x, y);
        }
    }

    #[test]
    fn apply_is_linear(f in series(12), g in series(12), c in -3.0f64..3.0) {
        for dtn in [ellipse(), &circle_pair().1] {
            let ff = f.synthesize(dtn.curve()).unwrap();
            let gg = g.synthesize(dtn.curve()).unwrap();
            let sum = ff.axpy(c, &gg);
            let lhs = dtn.apply(&sum).unwrap();
            let rhs = dtn.apply(&ff).unwrap().axpy(c, &dtn.apply(&gg).unwrap());
            let scale = 1.0 + lhs.norm_inf();
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn self_adjoint_and_semidefinite(f in series(10), g in series(10)) {
        let dtn = ellipse();
        let ff = f.synthesize(dtn.curve()).unwrap();
        let gg = g.synthesize(dtn.curve()).unwrap();
        let bf = dtn.apply(&ff).unwrap();
        let bg = dtn.apply(&gg).unwrap();
        let scale = 1.0 + ff.norm_inf() * gg.norm_inf() * 10.0;
        prop_assert!((dot(dtn, &bf, &gg) - dot(dtn, &ff, &bg)).abs() <= 1e-9 * scale);
        prop_assert!(dot(dtn, &bf, &ff) >= -1e-10 * (1.0 + dot(dtn, &ff, &ff)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn green_identity_on_the_circle(s in series(3)) {
        let dtn = small_circle();
        let f = s.synthesize(dtn.curve()).unwrap();
        let bf = dtn.apply(&f).unwrap();
        let boundary = dot(dtn, &bf, &f);
        // For trigonometric data E(r) is a polynomial in r² without constant
        // term; fit it on interior radii and evaluate at r = 1.
        let radii = [0.5, 0.6, 0.7, 0.8, 0.85];
        let rows: Vec<[f64; 3]> = radii.iter().map(|r: &f64| {
            let s2 = r * r;
            [s2, s2 * s2, s2 * s2 * s2]
        }).collect();
        let e: Vec<f64> = radii.iter().map(|r| ring_energy(dtn, &f, *r)).collect();
        let m = bdflow_core::DenseMatrix::from_fn(5, 3, |i, j| rows[i][j]);
        let coef = bdflow_core::numerics::QrFactors::new(&m).unwrap().least_squares(&e).unwrap();
        let interior = coef.iter().sum::<f64>();
        prop_assert!((interior - boundary).abs() <= 0.02 * boundary.abs().max(1e-12),
            "boundary {} interior {}", boundary, interior);
    }
}
