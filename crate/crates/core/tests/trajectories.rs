use std::cell::RefCell;
use std::f64::consts::PI;

use ndarray::Array3;

use hykoop::interp::FourierInterpolant;
use hykoop::kvh_classical::{characteristic, evolve_classical, phase_transport_error};
use hykoop::madelung_trajectories::{
    advect_loop, advect_trajectories, ellipse_loop, loop_action, phase_along_path, polar_decompose, FieldSeries,
    LagrangianSeries, VelocitySeries,
};
use hykoop::states::Gauss1D;
use hykoop::{evolve, AxisSpec, ComplexField, EvolveOptions, Expr, Grid, GridSpec, HybridHamiltonianSpec, InitialState};
use hykoop::{Axis, PotentialTerm, C64};

fn pendulum() -> Expr {
    &Expr::power(Axis::P, 2).scale(0.5) + &Expr::cos(Axis::Q, 1.0)
}

fn classical_grid() -> Grid {
    Grid::new(GridSpec::classical(AxisSpec::new(64, 2.0 * PI, 0.0), AxisSpec::centered(64, 16.0))).unwrap()
}

fn packet(g: &Grid) -> ComplexField {
    let gq = Gauss1D::new(PI, 0.5, 0.0);
    let gp = Gauss1D::new(0.5, 0.8, 0.3);
    ComplexField::from_fn(g, |z| gq.eval(z[0], g.length(Axis::Q)) * gp.eval(z[1], g.length(Axis::P)))
}

#[test]
fn phase_follows_action_along_characteristics() {
    let g = classical_grid();
    let seeds = [[PI, 0.5], [PI - 0.3, 0.2], [PI + 0.2, 1.0]];
    let err = phase_transport_error(&pendulum(), &packet(&g), 1.0, 0.5, 1e-3, &seeds).unwrap();
    assert!(err < 1e-6, "phase transport error {err:e}");
}

#[test]
fn amplitude_is_carried_by_the_flow() {
    let g = classical_grid();
    let h = pendulum();
    let psi0 = packet(&g);
    let states = evolve_classical(&h, &psi0, 1.0, 0.5, 1e-3).unwrap();
    let a = FourierInterpolant::new(&g, &psi0.values).unwrap();
    let b = FourierInterpolant::new(&g, &states.last().unwrap().values).unwrap();
    for z0 in [[PI, 0.5], [PI + 0.4, -0.3], [PI - 0.2, 1.2]] {
        let (z1, _) = *characteristic(&h, z0, 0.5, 2000).last().unwrap();
        let (u0, u1) = (a.eval(z0[0], z0[1]).norm(), b.eval(z1[0], z1[1]).norm());
        assert!((u0 - u1).abs() < 1e-6 * u0.max(1e-3), "|Ψ| {u0} → {u1}");
    }
}

fn static_series(grid: &Grid, spec: &HybridHamiltonianSpec, t: f64) -> VelocitySeries {
    let mut s = VelocitySeries::new(grid, spec).unwrap();
    let u = Array3::from_elem(grid.shape(), C64::new(1.0, 0.0));
    s.push(0.0, &u).unwrap();
    s.push(t, &u).unwrap();
    s
}

#[test]
fn linear_flow_preserves_polygon_action() {
    let grid =
        Grid::new(GridSpec::hybrid(AxisSpec::centered(16, 12.0), AxisSpec::centered(16, 12.0), AxisSpec::new(4, 2.0 * PI, 0.0)))
            .unwrap();
    let spec = HybridHamiltonianSpec::new(1.0, 1.0, 1.0)
        .with_kinetics(false, true)
        .with_potential(PotentialTerm::HarmonicQ { k: 2.0 });
    let pts = ellipse_loop([0.5, 0.2, 1.0], [0.8, 0.1, 0.0], [0.0, 0.6, 0.0], 48);
    let ens = advect_loop(&static_series(&grid, &spec, 2.0), &pts, 1e-3).unwrap();
    let a0 = loop_action(&grid, &pts);
    let last: Vec<[f64; 3]> = ens.paths.iter().map(|p| *p.last().unwrap()).collect();
    let a1 = loop_action(&grid, &last);
    assert!((a1 - a0).abs() < 1e-10 * a0.abs(), "{a0} → {a1}");
}

#[test]
fn pendulum_flow_preserves_loop_action() {
    let grid = Grid::new(GridSpec::hybrid(
        AxisSpec::new(16, 2.0 * PI, 0.0),
        AxisSpec::centered(16, 12.0),
        AxisSpec::new(4, 2.0 * PI, 0.0),
    ))
    .unwrap();
    let spec = HybridHamiltonianSpec::new(1.0, 1.0, 1.0)
        .with_kinetics(false, true)
        .with_potential(PotentialTerm::CosineQ { kappa: 1.0 });
    let pts = ellipse_loop([PI, 0.3, 0.0], [0.4, 0.0, 0.0], [0.0, 0.3, 0.0], 512);
    let ens = advect_loop(&static_series(&grid, &spec, 1.0), &pts, 1e-3).unwrap();
    let a0 = loop_action(&grid, &pts);
    for n in [ens.times.len() / 2, ens.times.len() - 1] {
        let at: Vec<[f64; 3]> = ens.paths.iter().map(|p| p[n]).collect();
        let a = loop_action(&grid, &at);
        assert!((a - a0).abs() < 1e-4 * a0.abs(), "t={}: {a0} → {a}", ens.times[n]);
    }
}

#[test]
fn hybrid_phase_accumulates_the_lagrangian() {
    let grid = Grid::new(GridSpec::hybrid(
        AxisSpec::new(32, 2.0 * PI, 0.0),
        AxisSpec::new(32, 16.0, -8.0),
        AxisSpec::new(32, 2.0 * PI, 0.0),
    ))
    .unwrap();
    let spec = HybridHamiltonianSpec::new(1.0, 1.0, 1.0).with_potential(PotentialTerm::Bilinear { lambda: 0.5 });
    let init = InitialState::Gaussian {
        q: Gauss1D::new(PI, 0.6, 0.0),
        p: Gauss1D::new(0.0, 1.0, 0.0),
        x: Some(Gauss1D::new(PI, 0.6, 0.5)),
        levels: None,
    };
    let psi0 = init.build(&grid, 1.0).unwrap();
    let vel = RefCell::new(VelocitySeries::new(&grid, &spec).unwrap());
    let lag = RefCell::new(LagrangianSeries::new(&grid, &spec).unwrap());
    let phase = RefCell::new(FieldSeries::new(&grid));
    let mut obs = |_: usize, t: f64, u: &Array3<C64>| {
        vel.borrow_mut().push(t, u).unwrap();
        lag.borrow_mut().push(t, u).unwrap();
        let psi = hykoop::HybridWavefunction::new(ComplexField::new(&grid, u.clone()).unwrap(), 1.0).unwrap();
        let f = polar_decompose(&psi, 1e-6).unwrap();
        phase.borrow_mut().push(t, f.s, f.mask).unwrap();
    };
    let opts = EvolveOptions { energy: false, density: false, ..EvolveOptions::new(0.25, 1e-3) };
    evolve(&spec, &psi0, &opts, &mut [&mut obs]).unwrap();
    let seeds = [[PI, 0.0, PI], [PI + 0.2, 0.3, PI - 0.2]];
    let ens = advect_trajectories(&vel.into_inner(), &seeds, 1e-3).unwrap();
    let pp = phase_along_path(&ens, &lag.into_inner()).unwrap();
    let s = phase.into_inner();
    let n = ens.times.len() - 1;
    for (k, path) in ens.paths.iter().enumerate() {
        assert!(!pp.flagged[k]);
        let ds = s.eval(ens.times[n], path[n]).unwrap() - s.eval(0.0, path[0]).unwrap();
        let d = ds - pp.phases[k][n];
        let d = d - 2.0 * PI * (d / (2.0 * PI)).round();
        assert!(d.abs() < 1e-3, "seed {k}: 𝒮 change {ds}, ∫𝓛 {}", pp.phases[k][n]);
    }
}
