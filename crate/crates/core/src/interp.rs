//! Off-grid evaluation of sampled fields.

use ndarray::{Array2, Array3};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::lattice::{Axis, Grid};

/// Cubic Lagrange weights for the stencil `{−1, 0, 1, 2}` at offset `t ∈ [0, 1)`.
pub fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

fn stencil(grid: &Grid, a: Axis, v: f64) -> ([usize; 4], [f64; 4]) {
    let n = grid.n(a);
    let s = (v - grid.origin(a)) / grid.spacing(a);
    let base = s.floor();
    let t = s - base;
    let b = base as i64;
    let idx = [-1i64, 0, 1, 2].map(|o| (b + o).rem_euclid(n as i64) as usize);
    (idx, cubic_weights(t))
}

/// Periodic tensor-product cubic interpolation of a real field.  Axes of
/// length 1 are skipped; a level axis is indexed by `round(x)`.
pub fn cubic_periodic(grid: &Grid, f: &Array3<f64>, z: [f64; 3]) -> f64 {
    let (sq, wq) = stencil(grid, Axis::Q, z[0]);
    let (sp, wp) = stencil(grid, Axis::P, z[1]);
    let nx = grid.n(Axis::X);
    let xs: Vec<(usize, f64)> = if grid.has_spatial_x() {
        let (sx, wx) = stencil(grid, Axis::X, z[2]);
        sx.into_iter().zip(wx).collect()
    } else {
        vec![((z[2].round().max(0.0) as usize).min(nx - 1), 1.0)]
    };
    let mut acc = 0.0;
    for (a, &i) in sq.iter().enumerate() {
        for (b, &j) in sp.iter().enumerate() {
            let w = wq[a] * wp[b];
            for &(k, wx) in &xs {
                acc += w * wx * f[[i, j, k]];
            }
        }
    }
    acc
}

/// Band-limited trigonometric interpolant of each x slice over (q, p).
/// Nyquist modes are taken as cosines so real data stays real.
pub struct FourierInterpolant {
    grid: Grid,
    coef: Vec<Array2<C64>>,
}

fn dft_axis(data: &mut Array2<C64>, ax: usize) {
    let n = data.shape()[ax];
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for mut lane in data.lanes_mut(ndarray::Axis(ax)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b / n as f64;
        }
    }
}

impl FourierInterpolant {
    pub fn new(grid: &Grid, f: &Array3<C64>) -> Result<Self> {
        if f.dim() != grid.shape() {
            return Err(Error::GridMismatch("field shape differs from grid".into()));
        }
        let coef = (0..grid.n(Axis::X))
            .map(|k| {
                let mut c = f.index_axis(ndarray::Axis(2), k).to_owned();
                dft_axis(&mut c, 0);
                dft_axis(&mut c, 1);
                c
            })
            .collect();
        Ok(FourierInterpolant { grid: grid.clone(), coef })
    }

    fn basis(&self, a: Axis, v: f64) -> Vec<C64> {
        let n = self.grid.n(a);
        let d = v - self.grid.origin(a);
        self.grid
            .wavenumbers(a)
            .iter()
            .enumerate()
            .map(|(m, &k)| if m == n / 2 { C64::new((k * d).cos(), 0.0) } else { C64::from_polar(1.0, k * d) })
            .collect()
    }

    pub fn eval_slice(&self, q: f64, p: f64, k: usize) -> C64 {
        let bq = self.basis(Axis::Q, q);
        let bp = self.basis(Axis::P, p);
        let c = &self.coef[k];
        let mut acc = C64::new(0.0, 0.0);
        for (i, eq) in bq.iter().enumerate() {
            let mut row = C64::new(0.0, 0.0);
            for (j, ep) in bp.iter().enumerate() {
                row += c[[i, j]] * ep;
            }
            acc += row * eq;
        }
        acc
    }

    pub fn eval(&self, q: f64, p: f64) -> C64 {
        self.eval_slice(q, p, 0)
    }
}
