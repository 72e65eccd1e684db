use std::f64::consts::PI;

use ndarray::Array3;
use proptest::prelude::*;

use hykoop::cli_io::{decode_field, encode_field, DiagnosticsRecord};
use hykoop::densities_currents::hybrid_density;
use hykoop::hybrid_core::{rk4_step, wave_rhs};
use hykoop::{AxisSpec, ComplexField, Grid, GridSpec, HybridHamiltonianSpec, HybridWavefunction, PotentialTerm, C64};

fn grid() -> Grid {
    Grid::new(GridSpec::hybrid(AxisSpec::new(8, 2.0 * PI, 0.0), AxisSpec::centered(16, 12.0), AxisSpec::new(8, 2.0 * PI, 0.0)))
        .unwrap()
}

/// Band-limited random state: a few low Fourier modes in q and x times a
/// Gaussian envelope in p.
fn state(g: &Grid, c: &[f64]) -> HybridWavefunction {
    let u = g.sample(|z| {
        let env = (-z[1] * z[1] / 2.0).exp();
        let a = C64::new(1.0 + c[0] * z[0].cos(), c[1] * z[2].sin());
        let b = C64::new(c[2] * (z[0] + z[2]).cos(), c[3] * z[1] * (z[0]).sin());
        (a + b) * env
    });
    HybridWavefunction::new(ComplexField::new(g, u).unwrap(), 1.0).unwrap().normalized().unwrap()
}

fn spec(lambda: f64, kappa: f64, m: f64) -> HybridHamiltonianSpec {
    HybridHamiltonianSpec::new(1.0, m, 1.0)
        .with_potential(PotentialTerm::Bilinear { lambda })
        .with_potential(PotentialTerm::CosineQ { kappa })
        .with_potential(PotentialTerm::CosineX { kappa: 0.5 * kappa })
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5f64..0.5, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn liouvillian_is_symmetric(a in coeffs(), b in coeffs(), lambda in -1.0f64..1.0, kappa in -1.0f64..1.0, m in 0.5f64..2.0) {
        let g = grid();
        let l = spec(lambda, kappa, m).liouvillian(&g).unwrap();
        let (u, v) = (state(&g, &a), state(&g, &b));
        let lhs = g.inner(u.values(), &l.apply(v.values()).unwrap());
        let rhs = g.inner(&l.apply(u.values()).unwrap(), v.values());
        prop_assert!((lhs - rhs).norm() < 1e-11 * (1.0 + lhs.norm()));
    }

    #[test]
    fn rk4_step_keeps_norm(a in coeffs(), lambda in -1.0f64..1.0, kappa in -1.0f64..1.0) {
        let g = grid();
        let l = spec(lambda, kappa, 1.0).liouvillian(&g).unwrap();
        let u = state(&g, &a);
        let next = rk4_step(|v| wave_rhs(&l, v), u.values(), 1e-3).unwrap();
        prop_assert!((g.norm_sq(&next) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn density_integrates_to_norm(a in coeffs(), scale in 0.1f64..3.0) {
        let g = grid();
        let u = state(&g, &a);
        let w = HybridWavefunction::new(ComplexField::new(&g, u.values() * C64::new(scale, 0.0)).unwrap(), 1.0).unwrap();
        let d = hybrid_density(&w).unwrap();
        prop_assert!((d.integrate() - w.norm_sq()).abs() < 1e-10 * w.norm_sq());
    }

    #[test]
    fn global_phase_leaves_density_unchanged(a in coeffs(), theta in 0.0f64..(2.0 * PI)) {
        let g = grid();
        let u = state(&g, &a);
        let d0 = hybrid_density(&u).unwrap();
        let w = HybridWavefunction::new(ComplexField::new(&g, u.values() * C64::from_polar(1.0, theta)).unwrap(), 1.0).unwrap();
        let d1 = hybrid_density(&w).unwrap();
        prop_assert!(g.l2_distance_real(&d0.values, &d1.values) < 1e-12);
    }

    #[test]
    fn field_encoding_roundtrips(vals in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 4 * 4 * 2)) {
        let a = Array3::from_shape_fn((4, 4, 2), |(i, j, k)| {
            let (re, im) = vals[(i * 4 + j) * 2 + k];
            C64::new(re, im)
        });
        let back = decode_field(&encode_field(&a), [4, 4, 2]).unwrap();
        prop_assert_eq!(a, back);
    }

    #[test]
    fn diagnostics_rows_roundtrip(t in 0.0f64..10.0, norm in 0.5f64..2.0, e in -1e3f64..1e3, m in -1.0f64..1.0) {
        let r = DiagnosticsRecord {
            t,
            norm,
            energy: Some(e),
            min_density: Some(m),
            negativity_mass: None,
            boundary_mass: 1e-9 * norm,
            continuity_residual: None,
            loop_lhs: None,
            loop_rhs: Some(-e),
        };
        let back = DiagnosticsRecord::parse_row(&r.csv_row()).unwrap();
        prop_assert_eq!(r, back);
    }
}
