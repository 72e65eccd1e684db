//! Dense matrices of operators on small grids and the matrix exponential.

use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::lattice::Grid;
use crate::liouvillian::Liouvillian;

/// Largest grid (in points) for which dense matrices are assembled.
pub const DENSE_LIMIT: usize = 4096;

pub fn size_guard(points: usize) -> Result<()> {
    if points > DENSE_LIMIT {
        return Err(Error::SizeGuard { points, limit: DENSE_LIMIT });
    }
    Ok(())
}

/// An explicit N×N matrix acting on fields flattened row-major in (q, p, x).
#[derive(Clone, Debug)]
pub struct DenseHybridOperator {
    pub grid: Grid,
    pub matrix: DMatrix<C64>,
}

pub fn flatten(u: &Array3<C64>) -> DVector<C64> {
    DVector::from_iterator(u.len(), u.iter().cloned())
}

pub fn unflatten(grid: &Grid, v: &DVector<C64>) -> Array3<C64> {
    Array3::from_shape_vec(grid.shape(), v.iter().cloned().collect()).expect("length matches grid")
}

impl DenseHybridOperator {
    pub fn new(grid: &Grid, matrix: DMatrix<C64>) -> Result<Self> {
        let n = grid.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::GridMismatch(format!("matrix {}x{} for {n} points", matrix.nrows(), matrix.ncols())));
        }
        Ok(DenseHybridOperator { grid: grid.clone(), matrix })
    }

    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.len();
        DenseHybridOperator { grid: grid.clone(), matrix: DMatrix::zeros(n, n) }
    }

    pub fn identity(grid: &Grid) -> Self {
        let n = grid.len();
        DenseHybridOperator { grid: grid.clone(), matrix: DMatrix::identity(n, n) }
    }

    /// Assemble column by column from a matrix-free operator.
    pub fn from_fn<F>(grid: &Grid, apply: F) -> Result<Self>
    where
        F: Fn(&Array3<C64>) -> Result<Array3<C64>>,
    {
        let n = grid.len();
        size_guard(n)?;
        let mut m = DMatrix::zeros(n, n);
        let mut e = Array3::zeros(grid.shape());
        for j in 0..n {
            let idx = grid.unflat(j);
            e[idx] = C64::new(1.0, 0.0);
            let col = apply(&e)?;
            e[idx] = C64::new(0.0, 0.0);
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(DenseHybridOperator { grid: grid.clone(), matrix: m })
    }

    pub fn from_liouvillian(l: &Liouvillian) -> Result<Self> {
        Self::from_fn(l.grid(), |u| l.apply(u))
    }

    pub fn apply(&self, u: &Array3<C64>) -> Array3<C64> {
        unflatten(&self.grid, &(&self.matrix * flatten(u)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        DenseHybridOperator { grid: self.grid.clone(), matrix: self.matrix.adjoint() }
    }

    /// `‖K − K†‖_F`.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).norm()
    }

    /// `‖U†U − I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        (self.matrix.adjoint() * &self.matrix - DMatrix::<C64>::identity(n, n)).norm()
    }

    /// Partial transpose on the quantum index: `K(z,z',x,x') → K(z,z',x',x)`.
    pub fn quantum_transpose(&self) -> Self {
        let (_, _, nx) = self.grid.shape();
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |r, c| {
            let (zr, xr) = (r / nx, r % nx);
            let (zc, xc) = (c / nx, c % nx);
            self.matrix[(zr * nx + xc, zc * nx + xr)]
        });
        DenseHybridOperator { grid: self.grid.clone(), matrix: m }
    }

    /// Entrywise complex conjugate `Ā u = conj(A conj(u))`.
    pub fn conjugate(&self) -> Self {
        DenseHybridOperator { grid: self.grid.clone(), matrix: self.matrix.map(|v| v.conj()) }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        DenseHybridOperator {
            grid: self.grid.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        }
    }
}

/// Padé-13 scaling-and-squaring matrix exponential.
pub fn expm(a: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(Error::NumericalAbort { t: 0.0, reason: "non-finite matrix in expm".into() });
    }
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let scale = C64::new(0.5f64.powi(s), 0.0);
    let a = a * scale;
    let id = DMatrix::<C64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = |k: usize| C64::new(B[k], 0.0);
    let u_inner = &a6 * (&a6 * c(13) + &a4 * c(11) + &a2 * c(9));
    let u = &a * (u_inner + &a6 * c(7) + &a4 * c(5) + &a2 * c(3) + &id * c(1));
    let v_inner = &a6 * (&a6 * c(12) + &a4 * c(10) + &a2 * c(8));
    let v = v_inner + &a6 * c(6) + &a4 * c(4) + &a2 * c(2) + &id * c(0);
    let lu = (&v - &u).lu();
    let mut r = lu
        .solve(&(&v + &u))
        .ok_or_else(|| Error::NumericalAbort { t: 0.0, reason: "singular Padé denominator".into() })?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<C64>::zeros(5, 5);
        assert!((expm(&z).unwrap() - DMatrix::identity(5, 5)).norm() < 1e-15);
    }

    #[test]
    fn expm_matches_eigen_for_hermitian() {
        let n = 12;
        let h = DMatrix::from_fn(n, n, |i, j| {
            let a = C64::new(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i * 5 + j) % 7) as f64 - 3.0);
            a
        });
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let t = 0.9;
        let u = expm(&(&h * C64::new(0.0, -t))).unwrap();
        let eig = h.clone().symmetric_eigen();
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, -t * l)));
        let want = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
        assert!((u - want).norm() < 1e-10);
    }

    #[test]
    fn expm_of_nilpotent() {
        let mut a = DMatrix::<C64>::zeros(2, 2);
        a[(0, 1)] = C64::new(3.0, 0.0);
        let e = expm(&a).unwrap();
        assert!((e[(0, 1)] - C64::new(3.0, 0.0)).norm() < 1e-14);
        assert!((e[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-14);
    }
}
