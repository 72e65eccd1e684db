//! Liouvillian operators of operator-valued phase-space functions.
//!
//! An observable is a finite sum `Σ f_j(q,p,x) ⊗ O_j` where `O_j` is the
//! identity, the x-Laplacian or a dense matrix on the quantum index. Its
//! Liouvillian acts as
//! `L̂_A Υ = iħ(∂_qA ∂_pΥ − ∂_pA ∂_qΥ) + (A − p∂_pA)Υ`.
//! A derivative coefficient that depends on its own variable is applied in
//! the symmetrised form `½(c∂ + ∂c)` so that Hermitian observables give
//! exactly Hermitian matrices on the grid.

use ndarray::{s, Array2, Array3, Zip};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::lattice::{Axis, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantumFactor {
    Identity,
    /// The x-Laplacian `Δ_x`.
    Laplacian,
    /// Dense matrix on the quantum index.
    Matrix(Vec<Vec<C64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableTerm {
    pub f: Expr,
    pub quantum: QuantumFactor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HybridObservable {
    pub terms: Vec<ObservableTerm>,
}

pub fn matrix_to_rows(m: &Array2<C64>) -> Vec<Vec<C64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<C64>]) -> Result<Array2<C64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config("quantum matrix must be square".into()));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

impl HybridObservable {
    pub fn zero() -> Self {
        HybridObservable { terms: Vec::new() }
    }

    pub fn scalar(f: Expr) -> Self {
        HybridObservable { terms: vec![ObservableTerm { f, quantum: QuantumFactor::Identity }] }
    }

    pub fn laplacian(coef: Expr) -> Self {
        HybridObservable { terms: vec![ObservableTerm { f: coef, quantum: QuantumFactor::Laplacian }] }
    }

    pub fn matrix(f: Expr, m: &Array2<C64>) -> Self {
        HybridObservable { terms: vec![ObservableTerm { f, quantum: QuantumFactor::Matrix(matrix_to_rows(m)) }] }
    }

    pub fn plus(mut self, other: HybridObservable) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn scale(&self, s: C64) -> Self {
        HybridObservable {
            terms: self
                .terms
                .iter()
                .map(|t| ObservableTerm { f: t.f.scale_complex(s), quantum: t.quantum.clone() })
                .collect(),
        }
    }
}

enum QOp {
    Laplacian,
    Matrix(Array2<C64>),
}

struct Coeffs {
    /// coefficient of ∂_p (that is ∂_qA), with a flag for symmetrisation
    cp: Option<(Array3<C64>, bool)>,
    /// coefficient of ∂_q (that is ∂_pA)
    cq: Option<(Array3<C64>, bool)>,
    /// A − p ∂_pA
    phase: Option<Array3<C64>>,
}

impl Coeffs {
    fn compile(grid: &Grid, f: &Expr) -> Coeffs {
        let fq = f.derivative(Axis::Q);
        let fp = f.derivative(Axis::P);
        let ph = f.phase_part();
        let sample = |e: &Expr| if e.is_zero() { None } else { Some(grid.sample(|z| e.eval(z))) };
        Coeffs {
            cp: sample(&fq).map(|a| (a, fq.depends_on(Axis::P))),
            cq: sample(&fp).map(|a| (a, fp.depends_on(Axis::Q))),
            phase: sample(&ph),
        }
    }

    fn apply_into(&self, grid: &Grid, hbar: f64, u: &Array3<C64>, out: &mut Array3<C64>) -> Result<()> {
        let ih = C64::new(0.0, hbar);
        if let Some((c, sym)) = &self.cp {
            add_derivative_term(grid, u, c, *sym, Axis::P, ih, out)?;
        }
        if let Some((c, sym)) = &self.cq {
            add_derivative_term(grid, u, c, *sym, Axis::Q, -ih, out)?;
        }
        if let Some(ph) = &self.phase {
            Zip::from(&mut *out).and(ph).and(u).for_each(|o, &a, &b| *o += a * b);
        }
        Ok(())
    }
}

fn add_derivative_term(
    grid: &Grid,
    u: &Array3<C64>,
    c: &Array3<C64>,
    sym: bool,
    axis: Axis,
    factor: C64,
    out: &mut Array3<C64>,
) -> Result<()> {
    let du = grid.diff(u, axis)?;
    if sym {
        let cu = c * u;
        let dcu = grid.diff(&cu, axis)?;
        let half = 0.5 * factor;
        Zip::from(&mut *out).and(c).and(&du).and(&dcu).for_each(|o, &c, &d, &e| *o += half * (c * d + e));
    } else {
        Zip::from(&mut *out).and(c).and(&du).for_each(|o, &c, &d| *o += factor * c * d);
    }
    Ok(())
}

/// A compiled Liouvillian ready for repeated application.
pub struct Liouvillian {
    grid: Grid,
    hbar: f64,
    scalar: Coeffs,
    quantum: Vec<(QOp, Coeffs)>,
}

impl Liouvillian {
    pub fn new(grid: &Grid, obs: &HybridObservable, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::Config("hbar must be positive".into()));
        }
        let nx = grid.n(Axis::X);
        let mut scalar_f = Expr::zero();
        let mut quantum = Vec::new();
        for t in &obs.terms {
            match &t.quantum {
                QuantumFactor::Identity => scalar_f = &scalar_f + &t.f,
                QuantumFactor::Laplacian => {
                    if !grid.has_spatial_x() {
                        return Err(Error::GridMismatch("Laplacian term needs a spatial x axis".into()));
                    }
                    if t.f.depends_on(Axis::X) {
                        return Err(Error::Config("Laplacian coefficient must not depend on x".into()));
                    }
                    quantum.push((QOp::Laplacian, Coeffs::compile(grid, &t.f)));
                }
                QuantumFactor::Matrix(rows) => {
                    let m = rows_to_matrix(rows)?;
                    if m.nrows() != nx {
                        return Err(Error::GridMismatch(format!(
                            "quantum matrix of size {} on an axis of {nx} points",
                            m.nrows()
                        )));
                    }
                    if t.f.depends_on(Axis::X) {
                        return Err(Error::Config("matrix coefficient must not depend on x".into()));
                    }
                    quantum.push((QOp::Matrix(m), Coeffs::compile(grid, &t.f)));
                }
            }
        }
        Ok(Liouvillian { grid: grid.clone(), hbar, scalar: Coeffs::compile(grid, &scalar_f), quantum })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn apply(&self, u: &Array3<C64>) -> Result<Array3<C64>> {
        if u.dim() != self.grid.shape() {
            return Err(Error::GridMismatch(format!("field {:?} vs grid {:?}", u.dim(), self.grid.shape())));
        }
        let mut out = Array3::zeros(u.dim());
        self.scalar.apply_into(&self.grid, self.hbar, u, &mut out)?;
        for (op, coeffs) in &self.quantum {
            let mu = match op {
                QOp::Laplacian => self.grid.diff2(u, Axis::X)?,
                QOp::Matrix(m) => apply_quantum_matrix(m, u),
            };
            coeffs.apply_into(&self.grid, self.hbar, &mu, &mut out)?;
        }
        Ok(out)
    }
}

/// `(M ⊗ I_z) u`: the matrix acts on the last index at every phase-space point.
pub fn apply_quantum_matrix(m: &Array2<C64>, u: &Array3<C64>) -> Array3<C64> {
    let (nq, np, _) = u.dim();
    let mut out = Array3::zeros(u.dim());
    for i in 0..nq {
        for j in 0..np {
            let v = u.slice(s![i, j, ..]);
            out.slice_mut(s![i, j, ..]).assign(&m.dot(&v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{AxisSpec, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(grid: &Grid, seed: u64) -> Array3<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(grid.shape(), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn symmetrised_terms_are_hermitian() {
        let a = AxisSpec::new(8, 2.0 * PI, 0.0);
        let grid = Grid::new(GridSpec::levels(a, a, 2)).unwrap();
        // p-dependent ∂_qA and q-dependent ∂_pA force the symmetrised form
        let f = &Expr::sin(Axis::Q, 1.0) * &Expr::cos(Axis::P, 1.0);
        let m = ndarray::array![[C64::new(1.0, 0.0), C64::new(0.0, -1.0)], [C64::new(0.0, 1.0), C64::new(-1.0, 0.0)]];
        let obs = HybridObservable::matrix(f.clone(), &m).plus(HybridObservable::scalar(f));
        let l = Liouvillian::new(&grid, &obs, 0.7).unwrap();
        let u = random(&grid, 1);
        let v = random(&grid, 2);
        let lhs = grid.inner(&u, &l.apply(&v).unwrap());
        let rhs = grid.inner(&l.apply(&u).unwrap(), &v);
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn matrix_size_checked() {
        let a = AxisSpec::new(8, 2.0 * PI, 0.0);
        let grid = Grid::new(GridSpec::levels(a, a, 3)).unwrap();
        let m = Array2::<C64>::eye(2);
        assert!(Liouvillian::new(&grid, &HybridObservable::matrix(Expr::constant(1.0), &m), 1.0).is_err());
    }
}
