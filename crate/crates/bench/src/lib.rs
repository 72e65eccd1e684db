//! Shared setups for the benchmarks.

use std::f64::consts::PI;

use hykoop::states::Gauss1D;
use hykoop::{AxisSpec, Grid, GridSpec, HybridHamiltonianSpec, HybridWavefunction, InitialState, PotentialTerm};

/// Bilinear-coupled Gaussian on an `n³` grid.
pub fn coupled(n: usize) -> (HybridHamiltonianSpec, HybridWavefunction) {
    let grid = Grid::new(GridSpec::hybrid(
        AxisSpec::new(n, 2.0 * PI, 0.0),
        AxisSpec::new(n, 12.0, -6.0),
        AxisSpec::new(n, 2.0 * PI, 0.0),
    ))
    .expect("valid grid");
    let spec = HybridHamiltonianSpec::new(1.0, 1.0, 4.0).with_potential(PotentialTerm::Bilinear { lambda: 0.5 });
    let init = InitialState::Gaussian {
        q: Gauss1D::new(PI, 0.4, 0.0),
        p: Gauss1D::new(0.0, 0.8, 0.0),
        x: Some(Gauss1D::new(PI, 0.4, 0.0)),
        levels: None,
    };
    let psi = init.build(&grid, 1.0).expect("valid state");
    (spec, psi)
}
