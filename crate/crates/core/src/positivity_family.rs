//! Hamiltonians that depend on the quantum factor only through one set of
//! commuting observables.  Projecting onto their common eigenbasis splits
//! the hybrid wave equation into independent classical sectors.

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities_currents::{density_raw, liouville_rhs, marginals};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hybrid_core::{rk4_step, wave_rhs, HybridHamiltonianSpec, HybridWavefunction};
use crate::lattice::{Axis, ComplexField, Grid, ScalarField};
use crate::liouvillian::{rows_to_matrix, HybridObservable, Liouvillian};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommutingObservable {
    /// `x̂`, diagonal in the x grid basis.
    Position,
    /// Hermitian matrix on a level axis.
    Matrix { rows: Vec<Vec<C64>> },
}

/// Eigen-decomposed commuting observable with one classical Hamiltonian per sector.
#[derive(Clone, Debug)]
pub struct PositivityFamily {
    pub grid: Grid,
    pub classical_grid: Grid,
    pub hbar: f64,
    pub eigenvalues: Vec<f64>,
    /// Column n is the eigenvector of sector n.
    pub eigenvectors: Array2<C64>,
    pub sector_hamiltonians: Vec<Expr>,
    /// Quadrature weight of one quantum basis vector (Δx or 1).
    pub quantum_weight: f64,
}

fn hermitian_eigen(m: &Array2<C64>) -> Result<(Vec<f64>, Array2<C64>)> {
    let d = m.nrows();
    let dm = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let defect = (&dm - dm.adjoint()).norm();
    if defect > 1e-12 {
        return Err(Error::Config(format!("observable is not Hermitian (defect {defect:.2e})")));
    }
    let eig = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Array2::from_shape_fn((d, d), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

impl PositivityFamily {
    /// Explicit per-sector Hamiltonians `H(z, α_n)`, ordered by ascending eigenvalue.
    pub fn new(grid: &Grid, observable: &CommutingObservable, sector_hamiltonians: Vec<Expr>, hbar: f64) -> Result<Self> {
        let nx = grid.n(Axis::X);
        let (eigenvalues, eigenvectors, quantum_weight) = match observable {
            CommutingObservable::Position => {
                if !grid.has_spatial_x() {
                    return Err(Error::Config("position sectors need a spatial x axis".into()));
                }
                (grid.coords(Axis::X).to_vec(), Array2::eye(nx), grid.spacing(Axis::X))
            }
            CommutingObservable::Matrix { rows } => {
                let m = rows_to_matrix(rows)?;
                if grid.has_spatial_x() || m.nrows() != nx {
                    return Err(Error::Config(format!("{}-level observable on a quantum axis of {nx} points", m.nrows())));
                }
                if nx > 8 {
                    return Err(Error::Config("at most 8 levels are supported".into()));
                }
                let (v, e) = hermitian_eigen(&m)?;
                (v, e, 1.0)
            }
        };
        if sector_hamiltonians.len() != nx {
            return Err(Error::Config(format!("{} sector Hamiltonians for {nx} sectors", sector_hamiltonians.len())));
        }
        if sector_hamiltonians.iter().any(|h| h.depends_on(Axis::X)) {
            return Err(Error::Config("sector Hamiltonians must not depend on x".into()));
        }
        Ok(PositivityFamily {
            grid: grid.clone(),
            classical_grid: grid.classical_part()?,
            hbar,
            eigenvalues,
            eigenvectors,
            sector_hamiltonians,
            quantum_weight,
        })
    }

    /// Family structure of a hybrid spec: the quantum kinetic term must be
    /// off, and on level grids all coupling matrices must commute.
    pub fn from_spec(spec: &HybridHamiltonianSpec, grid: &Grid) -> Result<Self> {
        spec.validate_for(grid)?;
        let h = spec.h_i();
        if grid.has_spatial_x() {
            if spec.quantum_kinetic {
                return Err(Error::Config("the quantum kinetic term does not commute with x; outside the family".into()));
            }
            if !spec.level_couplings.is_empty() {
                return Err(Error::Config("level couplings need a level axis".into()));
            }
            let hs = grid.coords(Axis::X).iter().map(|&x| h.substitute(Axis::X, x)).collect();
            return Self::new(grid, &CommutingObservable::Position, hs, spec.hbar);
        }
        let nx = grid.n(Axis::X);
        let mats: Vec<Array2<C64>> = spec.level_couplings.iter().map(|c| rows_to_matrix(&c.matrix)).collect::<Result<_>>()?;
        for (i, a) in mats.iter().enumerate() {
            for b in &mats[i + 1..] {
                let c = a.dot(b) - b.dot(a);
                if c.iter().map(|v| v.norm()).fold(0.0, f64::max) > 1e-12 {
                    return Err(Error::Config("coupling matrices do not commute; outside the family".into()));
                }
            }
        }
        // a generic combination separates every joint eigenspace
        let mut combo = Array2::<C64>::zeros((nx, nx));
        for (i, m) in mats.iter().enumerate() {
            combo = combo + m.mapv(|v| v * (1.0 + 0.618_033_988_75 * i as f64));
        }
        let (_, vecs) = hermitian_eigen(&combo)?;
        let hs = (0..nx)
            .map(|n| {
                let v = vecs.column(n);
                spec.level_couplings.iter().zip(&mats).fold(h.clone(), |acc, (c, m)| {
                    let mv = m.dot(&v);
                    let a: C64 = v.iter().zip(mv.iter()).map(|(x, y)| x.conj() * y).sum();
                    &acc + &c.profile.expr().scale(c.lambda * a.re)
                })
            })
            .collect();
        let rows = crate::liouvillian::matrix_to_rows(&combo);
        let mut fam = Self::new(grid, &CommutingObservable::Matrix { rows }, hs, spec.hbar)?;
        fam.eigenvectors = vecs;
        Ok(fam)
    }

    pub fn sectors(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Υ_n(z) = ⟨α_n|Υ(z)⟩`.
    pub fn alpha_decompose(&self, psi: &HybridWavefunction) -> Result<Vec<ComplexField>> {
        if psi.grid() != &self.grid {
            return Err(Error::GridMismatch("wavefunction grid differs from the family grid".into()));
        }
        let (nq, np, nx) = self.grid.shape();
        let u = psi.values();
        (0..nx)
            .map(|n| {
                let v = self.eigenvectors.column(n);
                let f = Array3::from_shape_fn((nq, np, 1), |(i, j, _)| {
                    u.slice(s![i, j, ..]).iter().zip(v.iter()).map(|(a, b)| b.conj() * a).sum()
                });
                ComplexField::new(&self.classical_grid, f)
            })
            .collect()
    }

    /// `Υ(z) = Σ_n Υ_n(z)|α_n⟩`.
    pub fn recompose(&self, sectors: &[ComplexField]) -> Result<HybridWavefunction> {
        let (nq, np, nx) = self.grid.shape();
        if sectors.len() != nx {
            return Err(Error::Config("sector count differs from the quantum dimension".into()));
        }
        let u = Array3::from_shape_fn((nq, np, nx), |(i, j, k)| {
            (0..nx).map(|n| self.eigenvectors[[k, n]] * sectors[n].values[[i, j, 0]]).sum()
        });
        HybridWavefunction::new(ComplexField::new(&self.grid, u)?, self.hbar)
    }

    /// `Σ_n ‖Υ_n‖²` with the quantum basis weight.
    pub fn sector_norm(&self, sectors: &[ComplexField]) -> f64 {
        sectors.iter().map(|s| s.norm_sq()).sum::<f64>() * self.quantum_weight
    }

    fn sector_liouvillians(&self) -> Result<Vec<Liouvillian>> {
        self.sector_hamiltonians
            .iter()
            .map(|h| Liouvillian::new(&self.classical_grid, &HybridObservable::scalar(h.clone()), self.hbar))
            .collect()
    }

    /// RK4 evolution of every sector under its own covariant Liouvillian.
    /// `observer(step, t, sectors)` sees step 0 and every step after.
    pub fn evolve_sectors(
        &self,
        sectors: &[ComplexField],
        t_final: f64,
        dt: f64,
        observer: &mut dyn FnMut(usize, f64, &[ComplexField]) -> Result<()>,
    ) -> Result<Vec<ComplexField>> {
        if !(dt > 0.0 && t_final >= 0.0) {
            return Err(Error::Config("t_final and dt must be non-negative, dt positive".into()));
        }
        let ls = self.sector_liouvillians()?;
        let steps = (t_final / dt).round() as usize;
        let dt = if steps > 0 { t_final / steps as f64 } else { 0.0 };
        let mut cur: Vec<ComplexField> = sectors.to_vec();
        let norms0: Vec<f64> = cur.iter().map(|s| s.norm_sq()).collect();
        observer(0, 0.0, &cur)?;
        for step in 1..=steps {
            let t = step as f64 * dt;
            cur = cur
                .par_iter()
                .zip(ls.par_iter())
                .map(|(s, l)| {
                    let v = rk4_step(|u| wave_rhs(l, u), &s.values, dt)
                        .map_err(|_| Error::NumericalAbort { t, reason: "non-finite sector field".into() })?;
                    Ok(ComplexField { grid: s.grid.clone(), values: v })
                })
                .collect::<Result<_>>()?;
            for (s, n0) in cur.iter().zip(&norms0) {
                if (s.norm_sq() - n0).abs() > 1e-4 * n0.max(f64::MIN_POSITIVE) {
                    return Err(Error::NumericalAbort { t, reason: "sector norm drift".into() });
                }
            }
            observer(step, t, &cur)?;
        }
        Ok(cur)
    }

    /// `D̃_n = |Υ_n|² + ∂_p(p|Υ_n|²) + iħ{Υ_n, Ῡ_n}` per sector.
    pub fn sector_density(&self, sectors: &[ComplexField]) -> Result<Vec<ScalarField>> {
        sectors
            .iter()
            .map(|s| ScalarField::new(&self.classical_grid, density_raw(&self.classical_grid, &s.values, self.hbar)?))
            .collect()
    }

    /// `ρ_c = Σ_n D̃_n` times the quantum basis weight.
    pub fn classical_marginal(&self, densities: &[ScalarField]) -> Result<ScalarField> {
        let mut acc = Array3::zeros(self.classical_grid.shape());
        for d in densities {
            acc += &d.values;
        }
        ScalarField::new(&self.classical_grid, acc * self.quantum_weight)
    }

    /// Largest L2 residual of `∂_tD̃_n − {H_n, D̃_n}` using a supplied time derivative.
    pub fn liouville_residual(&self, densities: &[ScalarField], rates: &[Array3<f64>]) -> Result<f64> {
        let g = &self.classical_grid;
        let mut worst: f64 = 0.0;
        for ((d, r), h) in densities.iter().zip(rates).zip(&self.sector_hamiltonians) {
            let rhs = liouville_rhs(g, h, &d.values)?;
            worst = worst.max(g.l2_distance_real(r, &rhs));
        }
        Ok(worst)
    }
}

/// `max |ρ_c(sectors) − marginal of 𝒟(Υ)|`.
pub fn marginal_consistency(fam: &PositivityFamily, psi: &HybridWavefunction) -> Result<f64> {
    let d = crate::densities_currents::hybrid_density(psi)?;
    let (rho_c, _) = marginals(&d)?;
    let sectors = fam.alpha_decompose(psi)?;
    let mine = fam.classical_marginal(&fam.sector_density(&sectors)?)?;
    Ok(rho_c.values.iter().zip(mine.values.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PositivityReport {
    pub times: Vec<f64>,
    /// `min_{z,n} D̃_n(z, t)`
    pub min_sector_density: Vec<f64>,
    pub min_rho_c: Vec<f64>,
    /// initial `D̃ ≥ −1e−10` everywhere
    pub initial_nonnegative: bool,
    pub pass: bool,
}

impl PositivityReport {
    pub fn push(&mut self, t: f64, densities: &[ScalarField], rho_c: &ScalarField) {
        let m = densities.iter().map(|d| d.min()).fold(f64::INFINITY, f64::min);
        if self.times.is_empty() {
            self.initial_nonnegative = m >= -1e-10;
        }
        self.times.push(t);
        self.min_sector_density.push(m);
        self.min_rho_c.push(rho_c.min());
        self.pass = positivity_check(&self.min_sector_density);
    }

    pub fn worst_rho_c(&self) -> f64 {
        self.min_rho_c.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// PASS iff `min(t) ≥ min(0) − 1e−6` at every recorded time.
pub fn positivity_check(mins: &[f64]) -> bool {
    match mins.first() {
        Some(&m0) => mins.iter().all(|&m| m >= m0 - 1e-6),
        None => true,
    }
}

/// Sector evolution with a positivity record every `stride` steps.
pub fn run_positivity(
    fam: &PositivityFamily,
    psi0: &HybridWavefunction,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<(Vec<ComplexField>, PositivityReport)> {
    let sectors = fam.alpha_decompose(psi0)?;
    let mut report = PositivityReport::default();
    let steps = (t_final / dt).round() as usize;
    let mut obs = |step: usize, t: f64, s: &[ComplexField]| -> Result<()> {
        if step % stride.max(1) == 0 || step == steps {
            let d = fam.sector_density(s)?;
            let rho = fam.classical_marginal(&d)?;
            report.push(t, &d, &rho);
        }
        Ok(())
    };
    let out = fam.evolve_sectors(&sectors, t_final, dt, &mut obs)?;
    Ok((out, report))
}
