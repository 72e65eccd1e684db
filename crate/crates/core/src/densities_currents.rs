//! Hybrid density 𝒟, density-operator kernel, marginals, currents and
//! continuity residuals.

use ndarray::{s, Array2, Array3, Array4, Zip};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::size_guard;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hybrid_core::{HybridHamiltonianSpec, HybridWavefunction};
use crate::lattice::{Axis, ComplexField, Grid, ScalarField};
use crate::liouvillian::{rows_to_matrix, HybridObservable, Liouvillian, QuantumFactor};

/// Relative amplitude below which polar quantities are masked.
pub const EPS_R: f64 = 1e-6;

/// `p` sampled on the grid.
fn p_field(grid: &Grid) -> Array3<f64> {
    grid.sample_real(|z| z[1])
}

/// `𝒟 = |Υ|² + ∂_p(p|Υ|²) + iħ{Υ, Ῡ}` on raw samples; the bracket term is
/// evaluated as `−2ħ Im(∂_qΥ ∂_pῩ)`, which is real by construction.
pub fn density_raw(grid: &Grid, u: &Array3<C64>, hbar: f64) -> Result<Array3<f64>> {
    let uq = grid.diff(u, Axis::Q)?;
    let up = grid.diff(u, Axis::P)?;
    let p = p_field(grid);
    let pm = Zip::from(u).and(&p).map_collect(|v, &p| C64::new(p * v.norm_sqr(), 0.0));
    let dpm = grid.diff(&pm, Axis::P)?;
    let mut d = Array3::zeros(u.dim());
    Zip::from(&mut d).and(u).and(&dpm).and(&uq).and(&up).for_each(|d, v, a, q, p| {
        *d = v.norm_sqr() + a.re - 2.0 * hbar * (q * p.conj()).im;
    });
    Ok(d)
}

/// Complex form of the density with its imaginary residue kept.
pub fn density_complex(grid: &Grid, u: &Array3<C64>, hbar: f64) -> Result<Array3<C64>> {
    let ubar = u.mapv(|v| v.conj());
    let br = grid.bracket(u, &ubar)?;
    let p = p_field(grid);
    let pm = Zip::from(u).and(&p).map_collect(|v, &p| C64::new(p * v.norm_sqr(), 0.0));
    let dpm = grid.diff(&pm, Axis::P)?;
    let ih = C64::new(0.0, hbar);
    Ok(Zip::from(u).and(&dpm).and(&br).map_collect(|v, a, b| v.norm_sqr() + a + ih * b))
}

pub fn hybrid_density(psi: &HybridWavefunction) -> Result<ScalarField> {
    ScalarField::new(psi.grid(), density_raw(psi.grid(), psi.values(), psi.hbar)?)
}

#[derive(Clone, Debug)]
pub struct DensityFields {
    pub d_hybrid: ScalarField,
    /// on the classical part of the grid
    pub rho_c: ScalarField,
    pub rho_q: Vec<f64>,
    pub min_d: f64,
    pub min_rho_c: f64,
    /// `∫ max(−ρ_c, 0)`
    pub negativity_mass: f64,
}

impl DensityFields {
    pub fn compute(psi: &HybridWavefunction) -> Result<Self> {
        let d = hybrid_density(psi)?;
        let (rho_c, rho_q) = marginals(&d)?;
        let w = rho_c.grid.weight();
        let negativity_mass = rho_c.values.iter().map(|v| (-v).max(0.0)).sum::<f64>() * w;
        Ok(DensityFields {
            min_d: d.min(),
            min_rho_c: rho_c.min(),
            d_hybrid: d,
            rho_c,
            rho_q,
            negativity_mass,
        })
    }
}

/// `ρ_c(z) = ∫𝒟 dx` and `ρ_q(x) = ∫𝒟 dz`.
pub fn marginals(d: &ScalarField) -> Result<(ScalarField, Vec<f64>)> {
    let grid = &d.grid;
    let (nq, np, nx) = grid.shape();
    let cgrid = grid.classical_part()?;
    let wx = grid.weight_x();
    let wz = grid.weight_z();
    let rho_c = Array3::from_shape_fn((nq, np, 1), |(i, j, _)| d.values.slice(s![i, j, ..]).sum() * wx);
    let rho_q = (0..nx).map(|k| d.values.slice(s![.., .., k]).sum() * wz).collect();
    Ok((ScalarField::new(&cgrid, rho_c)?, rho_q))
}

/// `ρ_q(x) = ∫|Υ|² dz`, computed without the divergence terms.
pub fn quantum_marginal_direct(psi: &HybridWavefunction) -> Vec<f64> {
    let grid = psi.grid();
    let wz = grid.weight_z();
    (0..grid.n(Axis::X)).map(|k| psi.values().slice(s![.., .., k]).iter().map(|v| v.norm_sqr()).sum::<f64>() * wz).collect()
}

/// Kernel `K(z; x, x′)` of the hybrid density operator.
#[derive(Clone, Debug)]
pub struct DensityOperatorKernel {
    pub grid: Grid,
    /// shape (n_q, n_p, n_x, n_x)
    pub k: Array4<C64>,
}

pub fn density_operator_kernel(psi: &HybridWavefunction) -> Result<DensityOperatorKernel> {
    let grid = psi.grid();
    size_guard(grid.len())?;
    let (nq, np, nx) = grid.shape();
    let u = psi.values();
    let uq = grid.diff(u, Axis::Q)?;
    let up = grid.diff(u, Axis::P)?;
    let ih = C64::new(0.0, psi.hbar);
    let pc = grid.coords(Axis::P).to_vec();
    // products p Υ(x) Ῡ(x′) laid out with (x, x′) flattened onto the last axis
    let cgrid_shape = (nq, np, nx * nx);
    let prod = Array3::from_shape_fn(cgrid_shape, |(i, j, c)| {
        let (a, b) = (c / nx, c % nx);
        pc[j] * u[(i, j, a)] * u[(i, j, b)].conj()
    });
    let pgrid = Grid::new(crate::lattice::GridSpec {
        x: crate::lattice::QuantumAxis::Levels { d: nx * nx },
        ..*grid.spec()
    })?;
    let dprod = pgrid.diff(&prod, Axis::P)?;
    let k = Array4::from_shape_fn((nq, np, nx, nx), |(i, j, a, b)| {
        u[(i, j, a)] * u[(i, j, b)].conj()
            + dprod[(i, j, a * nx + b)]
            + ih * (uq[(i, j, a)] * up[(i, j, b)].conj() - up[(i, j, a)] * uq[(i, j, b)].conj())
    });
    Ok(DensityOperatorKernel { grid: grid.clone(), k })
}

impl DensityOperatorKernel {
    pub fn diagonal(&self) -> Array3<f64> {
        let (nq, np, nx) = self.grid.shape();
        Array3::from_shape_fn((nq, np, nx), |(i, j, a)| self.k[(i, j, a, a)].re)
    }

    /// `max |K(z;x,x′) − conj K(z;x′,x)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let (nq, np, nx) = self.grid.shape();
        let mut m: f64 = 0.0;
        for i in 0..nq {
            for j in 0..np {
                for a in 0..nx {
                    for b in 0..nx {
                        m = m.max((self.k[(i, j, a, b)] - self.k[(i, j, b, a)].conj()).norm());
                    }
                }
            }
        }
        m
    }

    /// `Tr_x K` at each z, including the x quadrature weight.
    pub fn trace_x(&self) -> Array2<C64> {
        let (nq, np, nx) = self.grid.shape();
        let wx = self.grid.weight_x();
        Array2::from_shape_fn((nq, np), |(i, j)| (0..nx).map(|a| self.k[(i, j, a, a)]).sum::<C64>() * wx)
    }

    /// Matrix `∫K dz` of the quantum density operator, in the basis where
    /// `Tr ρ = Σ_a ρ_aa Δx`.
    pub fn quantum_density_matrix(&self) -> Array2<C64> {
        let (nq, np, nx) = self.grid.shape();
        let wz = self.grid.weight_z();
        Array2::from_shape_fn((nx, nx), |(a, b)| {
            let mut s = C64::new(0.0, 0.0);
            for i in 0..nq {
                for j in 0..np {
                    s += self.k[(i, j, a, b)];
                }
            }
            s * wz
        })
    }

    /// `Tr ∫ Â K` with the local matrices of an observable.
    pub fn expectation(&self, obs: &HybridObservable, hbar: f64) -> Result<f64> {
        let (nq, np, nx) = self.grid.shape();
        let _ = hbar;
        let local = LocalMatrices::new(&self.grid, obs)?;
        let mut s = C64::new(0.0, 0.0);
        for i in 0..nq {
            for j in 0..np {
                let a = local.at(i, j);
                for x in 0..nx {
                    for y in 0..nx {
                        s += a[(y, x)] * self.k[(i, j, x, y)];
                    }
                }
            }
        }
        Ok((s * self.grid.weight()).re)
    }
}

/// Minimum eigenvalue of the Hermitian part of the quantum density matrix.
pub fn min_eigenvalue(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let nm = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
    nm.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Matrices `Â(z)` on the quantum index for every phase-space point.
pub struct LocalMatrices {
    nx: usize,
    np: usize,
    data: Vec<Array2<C64>>,
}

impl LocalMatrices {
    pub fn new(grid: &Grid, obs: &HybridObservable) -> Result<Self> {
        let (nq, np, nx) = grid.shape();
        let mut data = vec![Array2::<C64>::zeros((nx, nx)); nq * np];
        let lap = if grid.has_spatial_x() { Some(laplacian_matrix(grid)?) } else { None };
        for t in &obs.terms {
            match &t.quantum {
                QuantumFactor::Identity => {
                    for i in 0..nq {
                        for j in 0..np {
                            for k in 0..nx {
                                data[i * np + j][(k, k)] += t.f.eval(grid.point(i, j, k));
                            }
                        }
                    }
                }
                QuantumFactor::Laplacian => {
                    let lap = lap.as_ref().ok_or_else(|| Error::GridMismatch("Laplacian without x axis".into()))?;
                    for i in 0..nq {
                        for j in 0..np {
                            let c = t.f.eval(grid.point(i, j, 0));
                            data[i * np + j].scaled_add(c, lap);
                        }
                    }
                }
                QuantumFactor::Matrix(rows) => {
                    let m = rows_to_matrix(rows)?;
                    for i in 0..nq {
                        for j in 0..np {
                            let c = t.f.eval(grid.point(i, j, 0));
                            data[i * np + j].scaled_add(c, &m);
                        }
                    }
                }
            }
        }
        Ok(LocalMatrices { nx, np, data })
    }

    pub fn at(&self, i: usize, j: usize) -> &Array2<C64> {
        &self.data[i * self.np + j]
    }

    pub fn dim(&self) -> usize {
        self.nx
    }
}

/// Spectral `Δ_x` as a dense matrix on the x index.
pub fn laplacian_matrix(grid: &Grid) -> Result<Array2<C64>> {
    let nx = grid.n(Axis::X);
    let k = grid.wavenumbers(Axis::X).to_vec();
    let n = nx as f64;
    Ok(Array2::from_shape_fn((nx, nx), |(a, b)| {
        let mut s = C64::new(0.0, 0.0);
        for (m, &km) in k.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * m as f64 * (a as f64 - b as f64) / n;
            s += C64::from_polar(-km * km / n, phase);
        }
        s
    }))
}

/// `⟨Â⟩ = ∫⟨Υ|L̂_ÂΥ⟩`.
pub fn hybrid_expectation(obs: &HybridObservable, psi: &HybridWavefunction) -> Result<f64> {
    let l = Liouvillian::new(psi.grid(), obs, psi.hbar)?;
    Ok(psi.grid().inner(psi.values(), &l.apply(psi.values())?).re)
}

/// `⟨Â⟩ = Tr∫ Â 𝒟̂`, through the density-operator kernel.
pub fn hybrid_expectation_kernel(obs: &HybridObservable, psi: &HybridWavefunction) -> Result<f64> {
    density_operator_kernel(psi)?.expectation(obs, psi.hbar)
}

/// Hybrid current over Γ: `(J_C^q, J_C^p, J_Q)`.
#[derive(Clone, Debug)]
pub struct Currents {
    pub jc_q: Array3<f64>,
    pub jc_p: Array3<f64>,
    pub jq: Array3<f64>,
    pub mask: Array3<bool>,
}

pub(crate) fn amplitude_mask(u: &Array3<C64>) -> Array3<bool> {
    let rmax = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    u.mapv(|v| v.norm() >= EPS_R * rmax && v.norm() > 0.0)
}

/// `J_C = 𝒟 X_{H_I}` and `J_Q = m⁻¹(σ_x + ∂_p(pσ_x) + ħ² Re(Υ_xq Ῡ_p − Υ_q Ῡ_xp))`,
/// which equals the polar form of [`quantum_current_polar`] pointwise but
/// needs no division by the density.
pub fn currents(psi: &HybridWavefunction, spec: &HybridHamiltonianSpec) -> Result<Currents> {
    let grid = psi.grid();
    spec.validate_for(grid)?;
    let u = psi.values();
    let hbar = psi.hbar;
    let d = density_raw(grid, u, hbar)?;
    let h = spec.h_i();
    let hp = grid.sample_real(|z| h.derivative(Axis::P).eval_real(z));
    let hq = grid.sample_real(|z| h.derivative(Axis::Q).eval_real(z));
    let jc_q = &d * &hp;
    let jc_p = -(&d * &hq);
    let mask = amplitude_mask(u);
    let jq = if grid.has_spatial_x() && spec.quantum_kinetic {
        quantum_current(grid, u, hbar, spec.quantum_mass)?
    } else {
        Array3::zeros(u.dim())
    };
    Ok(Currents { jc_q, jc_p, jq, mask })
}

fn quantum_current(grid: &Grid, u: &Array3<C64>, hbar: f64, m: f64) -> Result<Array3<f64>> {
    let ux = grid.diff(u, Axis::X)?;
    let uq = grid.diff(u, Axis::Q)?;
    let up = grid.diff(u, Axis::P)?;
    let uxq = grid.diff(&ux, Axis::Q)?;
    let uxp = grid.diff(&ux, Axis::P)?;
    let sx = Zip::from(u).and(&ux).map_collect(|v, d| hbar * (v.conj() * d).im);
    let p = p_field(grid);
    let psx = (&p * &sx).mapv(|v| C64::new(v, 0.0));
    let d_psx = grid.diff(&psx, Axis::P)?.mapv(|v| v.re);
    let mut cross = Zip::from(&uxq).and(&up).map_collect(|a, b| (a * b.conj()).re);
    Zip::from(&mut cross).and(&uq).and(&uxp).for_each(|c, a, b| *c -= (a * b.conj()).re);
    Ok((sx + d_psx + cross * (hbar * hbar)) / m)
}

/// `J_Q = m⁻¹(σ_x + ∂_p(pσ_x) + {σ_x, 𝒮} − ħ²{ρ, ∂_xρ}/4ρ)` with `σ_x = R²∂_x𝒮`;
/// zero where the amplitude mask is off.
pub fn quantum_current_polar(psi: &HybridWavefunction, m: f64) -> Result<Array3<f64>> {
    let grid = psi.grid();
    if !grid.has_spatial_x() {
        return Err(Error::Config("quantum current needs a spatial x axis".into()));
    }
    let u = psi.values();
    let hbar = psi.hbar;
    let mask = amplitude_mask(u);
    let ux = grid.diff(u, Axis::X)?;
    let uq = grid.diff(u, Axis::Q)?;
    let up = grid.diff(u, Axis::P)?;
    let rho = u.mapv(|v| v.norm_sqr());
    // σ_a = ħ Im(Ῡ ∂_aΥ) = R² ∂_a𝒮
    let sig = |du: &Array3<C64>| Zip::from(u).and(du).map_collect(|v, d| hbar * (v.conj() * d).im);
    let sx = sig(&ux);
    let sq = sig(&uq);
    let sp = sig(&up);
    let p = p_field(grid);
    let psx = (&p * &sx).mapv(|v| C64::new(v, 0.0));
    let d_psx = grid.diff(&psx, Axis::P)?.mapv(|v| v.re);
    let sx_q = grid.diff_real(&sx, Axis::Q)?;
    let sx_p = grid.diff_real(&sx, Axis::P)?;
    // {R, ∂_xR} = {ρ, ∂_xρ} / (4ρ)
    let rho_x = grid.diff_real(&rho, Axis::X)?;
    let rr = grid.bracket_real(&rho, &rho_x)?;
    let mut jq = Array3::zeros(u.dim());
    Zip::indexed(&mut jq).for_each(|idx, j| {
        if !mask[idx] {
            return;
        }
        let r2 = rho[idx];
        let s_q = sq[idx] / r2;
        let s_p = sp[idx] / r2;
        let br = sx_q[idx] * s_p - sx_p[idx] * s_q;
        *j = (sx[idx] + d_psx[idx] + br - hbar * hbar * rr[idx] / (4.0 * r2)) / m;
    });
    Ok(jq)
}

/// `∂_qJ_C^q + ∂_pJ_C^p + ∂_xJ_Q`.
pub fn divergence(grid: &Grid, j: &Currents) -> Result<Array3<f64>> {
    let mut div = grid.diff_real(&j.jc_q, Axis::Q)? + grid.diff_real(&j.jc_p, Axis::P)?;
    if grid.has_spatial_x() {
        div = div + grid.diff_real(&j.jq, Axis::X)?;
    }
    Ok(div)
}

/// Centered time derivative of a snapshot series at index `i`: fourth order
/// when two neighbours are available on each side, second order otherwise.
pub fn centered_time_derivative(series: &[Array3<f64>], i: usize, dt: f64) -> Result<Array3<f64>> {
    if i == 0 || i + 1 >= series.len() {
        return Err(Error::Config("centered difference needs an interior index".into()));
    }
    if i >= 2 && i + 2 < series.len() {
        Ok((&series[i - 2] - &series[i + 2] + 8.0 * (&series[i + 1] - &series[i - 1])) / (12.0 * dt))
    } else {
        Ok((&series[i + 1] - &series[i - 1]) / (2.0 * dt))
    }
}

/// L2 norm of `(𝒟_{i+1} − 𝒟_{i−1})/2dt + div J(Υ_i)` at every interior snapshot.
pub fn continuity_residual(
    snapshots: &[HybridWavefunction],
    spec: &HybridHamiltonianSpec,
    dt: f64,
) -> Result<Vec<f64>> {
    if snapshots.len() < 3 {
        return Err(Error::Config("continuity residual needs at least 3 snapshots".into()));
    }
    let grid = snapshots[0].grid().clone();
    let dens: Vec<Array3<f64>> =
        snapshots.iter().map(|s| density_raw(&grid, s.values(), s.hbar)).collect::<Result<_>>()?;
    (1..snapshots.len() - 1)
        .map(|i| {
            let dd = (&dens[i + 1] - &dens[i - 1]) / (2.0 * dt);
            let div = divergence(&grid, &currents(&snapshots[i], spec)?)?;
            Ok(grid.l2_norm_real(&(dd + div)))
        })
        .collect()
}

/// `‖∂_t𝒟 + div J‖ / ‖div J‖` at a single state.  𝒟 is quadratic in Υ, so the
/// centered difference along `Υ̇` gives `∂_t𝒟` exactly.
pub fn instantaneous_continuity_residual(psi: &HybridWavefunction, spec: &HybridHamiltonianSpec) -> Result<f64> {
    let g = psi.grid();
    let l = spec.liouvillian(g)?;
    let ud = crate::hybrid_core::wave_rhs(&l, psi.values())?;
    let plus = psi.values() + &ud;
    let minus = psi.values() - &ud;
    let dt = (density_raw(g, &plus, spec.hbar)? - density_raw(g, &minus, spec.hbar)?) * 0.5;
    let div = divergence(g, &currents(psi, spec)?)?;
    let scale = g.l2_norm_real(&div);
    let r = g.l2_norm_real(&(dt + &div));
    Ok(if scale > 0.0 { r / scale } else { r })
}

/// `{H_I, 𝒟}` with analytic derivatives of `H_I`.
pub fn liouville_rhs(grid: &Grid, h_i: &Expr, d: &Array3<f64>) -> Result<Array3<f64>> {
    let hq = grid.sample_real(|z| h_i.derivative(Axis::Q).eval_real(z));
    let hp = grid.sample_real(|z| h_i.derivative(Axis::P).eval_real(z));
    let dq = grid.diff_real(d, Axis::Q)?;
    let dp = grid.diff_real(d, Axis::P)?;
    Ok(&hq * &dp - &hp * &dq)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MarginalReport {
    pub integral: f64,
    pub rho_c_integral: f64,
    pub rho_q_integral: f64,
    pub rho_q_min: f64,
}

pub fn marginal_report(psi: &HybridWavefunction) -> Result<MarginalReport> {
    let f = DensityFields::compute(psi)?;
    Ok(MarginalReport {
        integral: f.d_hybrid.integrate(),
        rho_c_integral: f.rho_c.integrate(),
        rho_q_integral: f.rho_q.iter().sum::<f64>() * psi.grid().weight_x(),
        rho_q_min: f.rho_q.iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

pub fn as_field(grid: &Grid, values: Array3<C64>) -> Result<ComplexField> {
    ComplexField::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_core::PotentialTerm;
    use crate::lattice::{AxisSpec, GridSpec};
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(GridSpec::hybrid(
            AxisSpec::new(16, 2.0 * PI, 0.0),
            AxisSpec::centered(16, 2.0 * PI),
            AxisSpec::new(8, 2.0 * PI, 0.0),
        ))
        .unwrap()
    }

    #[test]
    fn flat_state_density_is_twice_square() {
        let g = Grid::new(GridSpec::hybrid(
            AxisSpec::new(8, 2.0 * PI, 0.0),
            AxisSpec::centered(256, 16.0),
            AxisSpec::new(8, 2.0 * PI, 0.0),
        ))
        .unwrap();
        let c = 0.3;
        let psi = ComplexField::from_fn(&g, |z| C64::new(c * crate::states::plateau(z[1], 3.0, 7.0), 0.0));
        let psi = HybridWavefunction::new(psi, 1.0).unwrap();
        let d = hybrid_density(&psi).unwrap();
        for ((_, j, _), v) in d.values.indexed_iter() {
            if g.coords(Axis::P)[j].abs() <= 3.0 {
                assert!((v - 2.0 * c * c).abs() < 1e-6, "{v}");
            }
        }
    }

    fn continuity_defect(spec: &HybridHamiltonianSpec, g: &Grid) -> f64 {
        let f = ComplexField::from_fn(g, |z| {
            let r = (-(z[1] * z[1]) / 2.0).exp() * (1.2 + z[0].cos()) * (1.5 + (2.0 * z[2]).sin() + 0.3 * z[2].cos());
            C64::from_polar(r, z[0].sin() + 0.3 * z[1] - 0.2 * z[1] * z[1] + z[2].cos() + 0.4 * (z[0] + z[2]).sin())
        });
        let psi = HybridWavefunction::new(f, spec.hbar).unwrap().normalized().unwrap();
        let l = spec.liouvillian(g).unwrap();
        let ud = crate::hybrid_core::wave_rhs(&l, psi.values()).unwrap();
        let eps = 1e-3;
        let plus = psi.values() + &ud.mapv(|v| v * eps);
        let minus = psi.values() - &ud.mapv(|v| v * eps);
        let dt = (density_raw(g, &plus, spec.hbar).unwrap() - density_raw(g, &minus, spec.hbar).unwrap()) / (2.0 * eps);
        let div = divergence(g, &currents(&psi, spec).unwrap()).unwrap();
        g.l2_norm_real(&(dt + &div)) / g.l2_norm_real(&div)
    }

    #[test]
    fn currents_close_the_continuity_equation() {
        let g = Grid::new(GridSpec::hybrid(
            AxisSpec::new(32, 2.0 * PI, 0.0),
            AxisSpec::centered(96, 16.0),
            AxisSpec::new(32, 2.0 * PI, 0.0),
        ))
        .unwrap();
        let full = HybridHamiltonianSpec::new(0.8, 1.3, 0.9)
            .with_potential(PotentialTerm::CosineQ { kappa: 0.7 })
            .with_potential(PotentialTerm::CosineX { kappa: 0.4 })
            .with_potential(PotentialTerm::Bilinear { lambda: 0.5 });
        let quantum_only = HybridHamiltonianSpec::new(0.8, 1.3, 0.9).with_kinetics(true, false);
        for spec in [full, quantum_only] {
            let e = continuity_defect(&spec, &g);
            assert!(e < 1e-8, "{e}");
        }
    }

    #[test]
    fn quantum_current_forms_agree_on_nodeless_states() {
        let g = Grid::new(GridSpec::hybrid(
            AxisSpec::new(32, 2.0 * PI, 0.0),
            AxisSpec::new(32, 2.0 * PI, 0.0),
            AxisSpec::new(32, 2.0 * PI, 0.0),
        ))
        .unwrap();
        let f = ComplexField::from_fn(&g, |z| {
            let r = (1.5 + z[0].cos()) * (1.4 + (z[1] + z[2]).sin()) * (1.3 + 0.5 * z[2].cos());
            C64::from_polar(r, z[0].sin() + (z[1] - z[2]).cos() + 0.5 * (z[0] + z[2]).sin())
        });
        let psi = HybridWavefunction::new(f, 0.7).unwrap();
        let spec = HybridHamiltonianSpec::new(0.7, 1.2, 1.0);
        let a = currents(&psi, &spec).unwrap().jq;
        let b = quantum_current_polar(&psi, 1.2).unwrap();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 1e-10 * scale, "{err} {scale}");
    }

    #[test]
    fn density_is_real_and_integrates_to_norm() {
        let g = grid();
        let f = ComplexField::from_fn(&g, |z| {
            let r = (-(z[1] * z[1])).exp() * (1.2 + z[0].cos()) * (1.5 + (2.0 * z[2]).sin());
            C64::from_polar(r, z[0].sin() + 0.3 * z[1] * z[1] + z[2].cos())
        });
        let psi = HybridWavefunction::new(f, 0.7).unwrap().normalized().unwrap();
        let dc = density_complex(&g, psi.values(), 0.7).unwrap();
        assert!(dc.iter().all(|v| v.im.abs() < 1e-12));
        let dr = density_raw(&g, psi.values(), 0.7).unwrap();
        assert!(dc.iter().zip(dr.iter()).all(|(a, b)| (a.re - b).abs() < 1e-12));
        assert!((g.integrate_real(&dr) - 1.0).abs() < 1e-10);
    }
}
