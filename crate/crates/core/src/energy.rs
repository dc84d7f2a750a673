//! Matching and bending energies of a deformation of the graph surface and
//! their first variation.
//!
//! With `r(x) = g(P(ψ(x))) - f(x)` the discrete energies are
//!
//! ```text
//! E_match = 1/2 sum_i M_i r_i^2 A_i
//! E_reg   = 1/2 sum_i M_i (w1_i^2 + w2_i^2 + w3_i^2),  w = B M^-1 L (ψ - (x, z))
//! E       = E_match + λ E_reg
//! ```
//!
//! where `B` zeroes boundary nodes. Subtracting the identity graph before
//! applying the Laplacian is the same operator (linear functions are
//! discretely harmonic inside) but makes the identity an exact zero.
//! Gradients are returned in the lumped-mass inner product, so the
//! directional derivative along `ζ` is `sum_i M_i G_i · ζ_i`.

use std::path::Path;

use crate::camera::{Camera, Jacobian};
use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::field2::{read_stacked, write_stacked, ClassifierImage, Grid2};
use crate::graph::{area_element, GraphSurface};
use crate::io::KeyValues;

/// Nodal deformation `ψ: ω -> R^3` in the surface frame's local
/// coordinates `(x1, x2, height)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    pub grid: Grid2,
    pub values: Vec<[f64; 3]>,
}

impl DeformationField {
    pub fn new(grid: Grid2, values: Vec<[f64; 3]>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dims(grid.len(), values.len()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite deformation value".into()));
        }
        Ok(Self { grid, values })
    }

    /// `ψ(x) = (x, z(x))`.
    pub fn identity(surface: &GraphSurface) -> Self {
        let values = (0..surface.len())
            .map(|idx| {
                let [i, j] = surface.grid.coords(idx);
                surface.local_point(i, j)
            })
            .collect();
        Self {
            grid: surface.grid,
            values,
        }
    }

    /// Identity plus a displacement.
    pub fn from_displacement(surface: &GraphSurface, disp: &[[f64; 3]]) -> Result<Self> {
        let mut psi = Self::identity(surface);
        if disp.len() != psi.values.len() {
            return Err(Error::dims(psi.values.len(), disp.len()));
        }
        for (p, d) in psi.values.iter_mut().zip(disp) {
            for c in 0..3 {
                p[c] += d[c];
            }
        }
        Ok(psi)
    }

    /// `ψ - (x, z)`.
    pub fn displacement(&self, surface: &GraphSurface) -> Vec<[f64; 3]> {
        self.values
            .iter()
            .enumerate()
            .map(|(idx, p)| {
                let [i, j] = surface.grid.coords(idx);
                let id = surface.local_point(i, j);
                [p[0] - id[0], p[1] - id[1], p[2] - id[2]]
            })
            .collect()
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|p| p[c]).collect()
    }

    /// `self + t * dir`.
    pub fn axpy(&self, t: f64, dir: &DeformationField) -> DeformationField {
        DeformationField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&dir.values)
                .map(|(p, d)| [p[0] + t * d[0], p[1] + t * d[1], p[2] + t * d[2]])
                .collect(),
        }
    }

    /// Largest nodal Euclidean distance to `other`.
    pub fn max_distance(&self, other: &DeformationField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    /// Three stacked components in the 2D field format.
    pub fn write(&self, path: &Path) -> Result<()> {
        let c: Vec<Vec<f64>> = (0..3).map(|k| self.component(k)).collect();
        write_stacked(path, &self.grid, &[&c[0], &c[1], &c[2]])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (grid, parts) = read_stacked(path)?;
        if parts.len() != 3 {
            return Err(Error::format(path, "deformation files hold three components"));
        }
        let values = (0..grid.len())
            .map(|i| [parts[0][i], parts[1][i], parts[2][i]])
            .collect();
        Self::new(grid, values)
    }
}

/// Energy breakdown of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyReport {
    pub e_match: f64,
    pub e_reg: f64,
    pub e_total: f64,
    pub lambda: f64,
    /// Fraction of nodes whose projection left the image and was clamped.
    pub out_of_domain_fraction: f64,
}

impl EnergyReport {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("e_match", self.e_match);
        kv.set("e_reg", self.e_reg);
        kv.set("e_total", self.e_total);
        kv.set("lambda", self.lambda);
        kv.set("out_of_domain_fraction", self.out_of_domain_fraction);
        kv
    }

    /// Append the report as `key=value` lines to a log file.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        writeln!(file, "{}", self.to_kv()).map_err(|e| Error::io(path, e))
    }
}

/// Everything the energy needs on one grid level.
#[derive(Clone, Debug)]
pub struct RegistrationProblem {
    pub surface: GraphSurface,
    /// Surface classifier on the surface grid.
    pub f: ClassifierImage,
    /// Image classifier in pixel coordinates, already smoothed for this level.
    pub g: ClassifierImage,
    pub camera: Camera,
    pub area: Vec<f64>,
    pub ops: FemOperators,
    pub lambda: f64,
}

/// Per-node matching terms shared by energy and gradient.
struct MatchTerms {
    residual: Vec<f64>,
    image_gradient: Vec<[f64; 2]>,
    jacobian: Vec<Jacobian>,
    outside: usize,
}

fn local_jacobian(jac: Jacobian, axes: &[[f64; 3]; 3]) -> Jacobian {
    let mut out = [[0.0; 3]; 2];
    for r in 0..2 {
        for (a, axis) in axes.iter().enumerate() {
            out[r][a] = jac[r][0] * axis[0] + jac[r][1] * axis[1] + jac[r][2] * axis[2];
        }
    }
    out
}

impl RegistrationProblem {
    pub fn new(
        surface: GraphSurface,
        f: ClassifierImage,
        g: ClassifierImage,
        camera: Camera,
        lambda: f64,
    ) -> Result<Self> {
        if f.grid.dims != surface.grid.dims {
            return Err(Error::dims(surface.grid.dims, f.grid.dims));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        let ops = FemOperators::assemble(&surface.grid)?;
        let area = area_element(&surface).values;
        Ok(Self {
            surface,
            f,
            g,
            camera,
            area,
            ops,
            lambda,
        })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn identity(&self) -> DeformationField {
        DeformationField::identity(&self.surface)
    }

    fn check(&self, psi: &DeformationField) -> Result<()> {
        if psi.grid.dims != self.surface.grid.dims {
            return Err(Error::dims(self.surface.grid.dims, psi.grid.dims));
        }
        Ok(())
    }

    /// `None` when a node falls behind a perspective camera.
    fn match_terms(&self, psi: &DeformationField, with_gradient: bool) -> Option<MatchTerms> {
        let n = psi.values.len();
        let mut terms = MatchTerms {
            residual: Vec::with_capacity(n),
            image_gradient: Vec::with_capacity(if with_gradient { n } else { 0 }),
            jacobian: Vec::with_capacity(if with_gradient { n } else { 0 }),
            outside: 0,
        };
        let frame = &self.surface.frame;
        for (idx, p) in psi.values.iter().enumerate() {
            let world = frame.to_world(*p);
            let (uv, jac) = if with_gradient {
                let (uv, jac) = self.camera.project_with_jacobian(world).ok()?;
                (uv, local_jacobian(jac, &frame.axes))
            } else {
                (self.camera.project(world).ok()?, [[0.0; 3]; 2])
            };
            let s = self.g.sample_cubic(uv);
            if !s.inside {
                terms.outside += 1;
            }
            terms.residual.push(s.value - self.f.values[idx]);
            if with_gradient {
                terms.image_gradient.push(s.gradient);
                terms.jacobian.push(jac);
            }
        }
        Some(terms)
    }

    /// `E_match` and the out-of-image fraction. Infinite when a node falls
    /// behind a perspective camera.
    pub fn match_energy(&self, psi: &DeformationField) -> Result<(f64, f64)> {
        self.check(psi)?;
        let Some(terms) = self.match_terms(psi, false) else {
            return Ok((f64::INFINITY, 1.0));
        };
        let e = 0.5
            * terms
                .residual
                .iter()
                .zip(&self.ops.mass)
                .zip(&self.area)
                .map(|((r, m), a)| m * r * r * a)
                .sum::<f64>();
        Ok((e, terms.outside as f64 / psi.values.len() as f64))
    }

    /// Inner Laplacians `B M^-1 L (ψ_c - id_c)` per component.
    fn bending(&self, psi: &DeformationField) -> Result<[Vec<f64>; 3]> {
        let disp = psi.displacement(&self.surface);
        let mut out: [Vec<f64>; 3] = Default::default();
        for (c, slot) in out.iter_mut().enumerate() {
            let u: Vec<f64> = disp.iter().map(|d| d[c]).collect();
            *slot = self.ops.interior_laplacian(&u)?;
        }
        Ok(out)
    }

    pub fn reg_energy(&self, psi: &DeformationField) -> Result<f64> {
        self.check(psi)?;
        let w = self.bending(psi)?;
        Ok(0.5 * w.iter().map(|wc| self.ops.mass_inner(wc, wc)).sum::<f64>())
    }

    pub fn total_energy(&self, psi: &DeformationField) -> Result<EnergyReport> {
        let (e_match, ood) = self.match_energy(psi)?;
        let e_reg = self.reg_energy(psi)?;
        Ok(EnergyReport {
            e_match,
            e_reg,
            e_total: e_match + self.lambda * e_reg,
            lambda: self.lambda,
            out_of_domain_fraction: ood,
        })
    }

    /// Lumped-mass representation of `E'[ψ]`.
    pub fn gradient(&self, psi: &DeformationField) -> Result<DeformationField> {
        self.evaluate(psi).map(|(_, g)| g)
    }

    /// Energy report and gradient in one pass.
    pub fn evaluate(&self, psi: &DeformationField) -> Result<(EnergyReport, DeformationField)> {
        self.check(psi)?;
        let terms = self
            .match_terms(psi, true)
            .ok_or(Error::BehindCamera(0.0))?;
        let n = psi.values.len();
        let mut grad = vec![[0.0; 3]; n];
        let mut e_match = 0.0;
        for i in 0..n {
            let r = terms.residual[i];
            let a = self.area[i];
            e_match += self.ops.mass[i] * r * r * a;
            let gu = terms.image_gradient[i];
            let jac = &terms.jacobian[i];
            for (c, slot) in grad[i].iter_mut().enumerate() {
                *slot = r * a * (gu[0] * jac[0][c] + gu[1] * jac[1][c]);
            }
        }
        e_match *= 0.5;

        let w = self.bending(psi)?;
        let e_reg = 0.5 * w.iter().map(|wc| self.ops.mass_inner(wc, wc)).sum::<f64>();
        if self.lambda != 0.0 {
            for (c, wc) in w.iter().enumerate() {
                let bilap = self.ops.discrete_laplacian(wc)?;
                for (g, b) in grad.iter_mut().zip(&bilap) {
                    g[c] += self.lambda * b;
                }
            }
        }
        let report = EnergyReport {
            e_match,
            e_reg,
            e_total: e_match + self.lambda * e_reg,
            lambda: self.lambda,
            out_of_domain_fraction: terms.outside as f64 / n as f64,
        };
        Ok((report, DeformationField { grid: psi.grid, values: grad }))
    }

    /// `sum_i M_i a_i · b_i`.
    pub fn mass_inner(&self, a: &DeformationField, b: &DeformationField) -> f64 {
        self.ops
            .mass
            .iter()
            .zip(a.values.iter().zip(&b.values))
            .map(|(m, (x, y))| m * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]))
            .sum()
    }

    /// Bending energy of the unit reference bump: a height Gaussian of
    /// amplitude `h` and standard deviation `h` centred in ω, with `h` the
    /// finer grid spacing.
    pub fn reference_bump_energy(&self) -> Result<f64> {
        let grid = self.surface.grid;
        let ext = grid.extent();
        let centre = [grid.origin[0] + 0.5 * ext[0], grid.origin[1] + 0.5 * ext[1]];
        let h = grid.spacing[0].min(grid.spacing[1]);
        let disp: Vec<[f64; 3]> = (0..grid.len())
            .map(|idx| {
                let [i, j] = grid.coords(idx);
                let p = grid.position(i, j);
                let r2 = (p[0] - centre[0]).powi(2) + (p[1] - centre[1]).powi(2);
                [0.0, 0.0, h * (-r2 / (2.0 * h * h)).exp()]
            })
            .collect();
        let psi = DeformationField::from_displacement(&self.surface, &disp)?;
        self.reg_energy(&psi)
    }

    /// `scale * E_match(identity) / E_reg(reference bump)`.
    pub fn auto_lambda(&self, scale: f64) -> Result<f64> {
        let (e_match, _) = self.match_energy(&self.identity())?;
        let e_ref = self.reference_bump_energy()?;
        let lambda = scale * e_match / e_ref;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!(
                "automatic lambda is {lambda}; the matching energy at the identity vanishes"
            )));
        }
        Ok(lambda)
    }
}
