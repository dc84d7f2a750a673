//! Bilinear finite elements on a uniform rectangular grid.
//!
//! `L` is the assembled stiffness matrix of the Dirichlet form and `M` the
//! row-sum lumped mass matrix, so `M^-1 L` approximates `-Δ`. The squared
//! operator used by the bending energy zeroes the inner Laplacian on
//! boundary nodes before the second application.

use crate::error::{Error, Result};
use crate::field2::Grid2;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Plain `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }
}

/// Element stiffness of a bilinear `hx x hy` rectangle, nodes ordered
/// `(0,0), (1,0), (1,1), (0,1)`.
pub fn element_stiffness(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let a = hy / (6.0 * hx);
    let b = hx / (6.0 * hy);
    let kx = [
        [2.0, -2.0, -1.0, 1.0],
        [-2.0, 2.0, 1.0, -1.0],
        [-1.0, 1.0, 2.0, -2.0],
        [1.0, -1.0, -2.0, 2.0],
    ];
    let ky = [
        [2.0, 1.0, -1.0, -2.0],
        [1.0, 2.0, -2.0, -1.0],
        [-1.0, -2.0, 2.0, 1.0],
        [-2.0, -1.0, 1.0, 2.0],
    ];
    let mut k = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            k[r][c] = a * kx[r][c] + b * ky[r][c];
        }
    }
    k
}

/// Lumped mass `M` and stiffness `L` on a grid.
#[derive(Clone, Debug)]
pub struct FemOperators {
    pub grid: Grid2,
    pub mass: Vec<f64>,
    pub stiffness: CsrMatrix,
    inv_mass: Vec<f64>,
    boundary: Vec<bool>,
}

impl FemOperators {
    pub fn assemble(grid: &Grid2) -> Result<Self> {
        let [nu, nv] = grid.dims;
        if nu < 2 || nv < 2 {
            return Err(Error::Invalid(format!("degenerate FEM grid {:?}", grid.dims)));
        }
        let n = grid.len();
        let [hx, hy] = grid.spacing;
        let ke = element_stiffness(hx, hy);
        let quarter = 0.25 * hx * hy;

        // Each node couples with at most its 3x3 neighbourhood; accumulate
        // into a dense 9-slot stencil per node and compress afterwards.
        let slot = |di: isize, dj: isize| ((dj + 1) * 3 + (di + 1)) as usize;
        let mut stencil = vec![[0.0f64; 9]; n];
        let mut mass = vec![0.0; n];
        for ej in 0..nv - 1 {
            for ei in 0..nu - 1 {
                let nodes = [(ei, ej), (ei + 1, ej), (ei + 1, ej + 1), (ei, ej + 1)];
                for (r, &(ri, rj)) in nodes.iter().enumerate() {
                    let row = grid.index(ri, rj);
                    mass[row] += quarter;
                    for (c, &(ci, cj)) in nodes.iter().enumerate() {
                        let s = slot(ci as isize - ri as isize, cj as isize - rj as isize);
                        stencil[row][s] += ke[r][c];
                    }
                }
            }
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(9 * n);
        let mut vals = Vec::with_capacity(9 * n);
        row_ptr.push(0);
        for (row, st) in stencil.iter().enumerate() {
            let [i, j] = grid.coords(row);
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    let (ci, cj) = (i as isize + di, j as isize + dj);
                    if ci < 0 || cj < 0 || ci >= nu as isize || cj >= nv as isize {
                        continue;
                    }
                    let v = st[slot(di, dj)];
                    if v != 0.0 {
                        cols.push(grid.index(ci as usize, cj as usize));
                        vals.push(v);
                    }
                }
            }
            row_ptr.push(cols.len());
        }

        let boundary = (0..n)
            .map(|idx| {
                let [i, j] = grid.coords(idx);
                grid.is_boundary(i, j)
            })
            .collect();
        Ok(Self {
            grid: *grid,
            inv_mass: mass.iter().map(|m| 1.0 / m).collect(),
            mass,
            stiffness: CsrMatrix {
                n,
                row_ptr,
                cols,
                vals,
            },
            boundary,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.boundary[idx]
    }

    /// `L u`, evaluated as `sum_j L_ij (u_j - u_i)` so constants map to zero
    /// exactly.
    pub fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        let l = &self.stiffness;
        (0..l.n)
            .map(|i| {
                let ui = u[i];
                l.row(i)
                    .filter(|&(j, _)| j != i)
                    .map(|(j, v)| v * (u[j] - ui))
                    .sum()
            })
            .collect()
    }

    /// `M^-1 L u`, an approximation of `-Δu`.
    pub fn discrete_laplacian(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let mut w = self.apply_stiffness(u);
        for (wi, im) in w.iter_mut().zip(&self.inv_mass) {
            *wi *= im;
        }
        Ok(w)
    }

    /// `M^-1 L u` with boundary nodes set to zero.
    pub fn interior_laplacian(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut w = self.discrete_laplacian(u)?;
        for (wi, &b) in w.iter_mut().zip(&self.boundary) {
            if b {
                *wi = 0.0;
            }
        }
        Ok(w)
    }

    /// Squared discrete Laplacian `M^-1 L B M^-1 L u` with `B` zeroing
    /// boundary rows.
    pub fn bilaplacian(&self, u: &[f64]) -> Result<Vec<f64>> {
        let w = self.interior_laplacian(u)?;
        self.discrete_laplacian(&w)
    }

    pub fn mass_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mass
            .iter()
            .zip(a.iter().zip(b))
            .map(|(m, (x, y))| m * x * y)
            .sum()
    }

    pub fn area(&self) -> f64 {
        self.mass.iter().sum()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::dims(self.len(), len));
        }
        Ok(())
    }
}
