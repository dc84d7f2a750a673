//! Armijo gradient descent in the lumped-mass metric and the cascadic
//! coarse-to-fine driver.

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::na::DMatrix;
use nalgebra_sparse::CscMatrix;

use crate::camera::Camera;
use crate::energy::{DeformationField, EnergyReport, RegistrationProblem};
use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::field2::{ClassifierImage, Field2, Grid2};
use crate::graph::GraphSurface;
use crate::io::KeyValues;

#[derive(Clone, Debug, PartialEq)]
pub struct DescentConfig {
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    /// Stop once `|G|_M` falls below this fraction of its value at the start
    /// of the level.
    pub grad_tol: f64,
    pub levels: usize,
    /// Fixed regularization weight; `None` selects it automatically.
    pub lambda: Option<f64>,
    /// Factor of the automatic weight `scale * E_match(id) / E_reg(bump)`.
    pub lambda_scale: f64,
    /// Weight `s` of the metric `M + s L`; zero keeps the plain mass metric.
    pub sobolev: f64,
    /// Image smoothing in pixels at the finest level; doubles per level.
    pub smoothing_px: f64,
    /// Smallest node count per axis on the coarsest level.
    pub min_nodes: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            grad_tol: 1e-6,
            levels: 4,
            lambda: None,
            lambda_scale: 0.1,
            sobolev: 10.0,
            smoothing_px: 2.0,
            min_nodes: 9,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Invalid(msg.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Invalid(format!("lambda must be positive, got {l}")));
            }
        }
        if !(self.lambda_scale > 0.0) {
            return bad("lambda_scale must be positive");
        }
        if !(self.sobolev >= 0.0) {
            return bad("sobolev weight must be non-negative");
        }
        if !(self.smoothing_px >= 0.0) {
            return bad("smoothing_px must be non-negative");
        }
        if self.min_nodes < 2 {
            return bad("min_nodes must be at least 2");
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("max_iters", self.max_iters);
        kv.set("armijo_c", self.armijo_c);
        kv.set("backtrack_factor", self.backtrack_factor);
        kv.set("initial_step", self.initial_step);
        kv.set("grad_tol", self.grad_tol);
        kv.set("levels", self.levels);
        kv.set(
            "lambda",
            self.lambda.map_or_else(|| "auto".to_string(), |l| l.to_string()),
        );
        kv.set("lambda_scale", self.lambda_scale);
        kv.set("sobolev", self.sobolev);
        kv.set("smoothing_px", self.smoothing_px);
        kv.set("min_nodes", self.min_nodes);
    }

    /// Override defaults with any keys present in `kv`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = kv.parse_value("max_iters")? {
            cfg.max_iters = v;
        }
        if let Some(v) = kv.parse_value("armijo_c")? {
            cfg.armijo_c = v;
        }
        if let Some(v) = kv.parse_value("backtrack_factor")? {
            cfg.backtrack_factor = v;
        }
        if let Some(v) = kv.parse_value("initial_step")? {
            cfg.initial_step = v;
        }
        if let Some(v) = kv.parse_value("grad_tol")? {
            cfg.grad_tol = v;
        }
        if let Some(v) = kv.parse_value("levels")? {
            cfg.levels = v;
        }
        match kv.get("lambda") {
            None | Some("auto") => {}
            Some(_) => cfg.lambda = kv.parse_value("lambda")?,
        }
        if let Some(v) = kv.parse_value("lambda_scale")? {
            cfg.lambda_scale = v;
        }
        if let Some(v) = kv.parse_value("sobolev")? {
            cfg.sobolev = v;
        }
        if let Some(v) = kv.parse_value("smoothing_px")? {
            cfg.smoothing_px = v;
        }
        if let Some(v) = kv.parse_value("min_nodes")? {
            cfg.min_nodes = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub level: usize,
    pub iteration: usize,
    pub step: f64,
    pub e_match: f64,
    pub e_reg: f64,
    pub e_total: f64,
    pub grad_norm: f64,
    pub out_of_domain_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    fn push(&mut self, level: usize, iteration: usize, step: f64, r: &EnergyReport, grad_norm: f64) {
        self.records.push(TraceRecord {
            level,
            iteration,
            step,
            e_match: r.e_match,
            e_reg: r.e_reg,
            e_total: r.e_total,
            grad_norm,
            out_of_domain_fraction: r.out_of_domain_fraction,
        });
    }

    pub fn extend(&mut self, other: RunTrace) {
        self.records.extend(other.records);
    }

    /// Accepted energies never increase within a level.
    pub fn is_monotone(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].level != w[1].level || w[1].e_total <= w[0].e_total)
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("level,iteration,step,e_match,e_reg,e_total,grad_norm,out_of_domain_fraction\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.level, r.iteration, r.step, r.e_match, r.e_reg, r.e_total, r.grad_norm, r.out_of_domain_fraction
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// What the descent loop needs from an energy.
pub trait Objective {
    fn energy(&self, psi: &DeformationField) -> Result<EnergyReport>;
    fn energy_and_gradient(&self, psi: &DeformationField) -> Result<(EnergyReport, DeformationField)>;
    /// Lumped mass weights of the metric.
    fn mass(&self) -> &[f64];
    /// Operators for the Sobolev metric, if the objective lives on a FEM grid.
    fn operators(&self) -> Option<&FemOperators> {
        None
    }
}

impl Objective for RegistrationProblem {
    fn energy(&self, psi: &DeformationField) -> Result<EnergyReport> {
        self.total_energy(psi)
    }

    fn energy_and_gradient(&self, psi: &DeformationField) -> Result<(EnergyReport, DeformationField)> {
        self.evaluate(psi)
    }

    fn mass(&self) -> &[f64] {
        &self.ops.mass
    }

    fn operators(&self) -> Option<&FemOperators> {
        Some(&self.ops)
    }
}

fn mass_dot(mass: &[f64], a: &DeformationField, b: &DeformationField) -> f64 {
    mass.iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(m, (x, y))| m * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]))
        .sum()
}

/// Factorized Sobolev metric `M + s L`.
pub struct SobolevMetric {
    mass: Vec<f64>,
    factor: CscCholesky<f64>,
}

impl SobolevMetric {
    pub fn new(ops: &FemOperators, s: f64) -> Result<Self> {
        let k = &ops.stiffness;
        let mut vals = Vec::with_capacity(k.vals.len());
        for i in 0..k.n {
            for idx in k.row_ptr[i]..k.row_ptr[i + 1] {
                let mut v = s * k.vals[idx];
                if k.cols[idx] == i {
                    v += ops.mass[i];
                }
                vals.push(v);
            }
        }
        // Symmetric, so the row layout doubles as the column layout.
        let matrix = CscMatrix::try_from_csc_data(k.n, k.n, k.row_ptr.clone(), k.cols.clone(), vals)
            .map_err(|e| Error::Invalid(format!("Sobolev metric assembly: {e}")))?;
        let factor = CscCholesky::factor(&matrix)
            .map_err(|e| Error::Invalid(format!("Sobolev metric factorization: {e}")))?;
        Ok(Self {
            mass: ops.mass.clone(),
            factor,
        })
    }

    /// Solve `(M + s L) d = M g` for all three components.
    pub fn direction(&self, grad: &DeformationField) -> DeformationField {
        let n = self.mass.len();
        let rhs = DMatrix::from_fn(n, 3, |i, c| self.mass[i] * grad.values[i][c]);
        let sol = self.factor.solve(&rhs);
        DeformationField {
            grid: grad.grid,
            values: (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]]).collect(),
        }
    }
}

/// Armijo-controlled descent on one grid. The step starts from the last
/// accepted value doubled and is halved until
/// `E(ψ - τD) <= E(ψ) - c τ <G, D>_M`.
pub fn descend_level<O: Objective>(
    psi0: DeformationField,
    problem: &O,
    cfg: &DescentConfig,
    level: usize,
) -> Result<(DeformationField, RunTrace)> {
    cfg.validate()?;
    if psi0.values.len() != problem.mass().len() {
        return Err(Error::dims(problem.mass().len(), psi0.values.len()));
    }
    let mut trace = RunTrace::default();
    let mut psi = psi0;
    let (mut report, mut grad) = problem.energy_and_gradient(&psi)?;
    if !report.e_total.is_finite() {
        return Err(Error::NonFiniteEnergy { level, iteration: 0 });
    }
    let mass = problem.mass();
    let mut gnorm = mass_dot(mass, &grad, &grad).sqrt();
    trace.push(level, 0, 0.0, &report, gnorm);
    let tol = cfg.grad_tol * gnorm;
    let min_step = 1e-14 * cfg.initial_step;
    let mut tau = cfg.initial_step;
    let metric = match problem.operators() {
        Some(ops) if cfg.sobolev > 0.0 => Some(SobolevMetric::new(ops, cfg.sobolev)?),
        _ => None,
    };
    for it in 1..=cfg.max_iters {
        if gnorm == 0.0 || gnorm <= tol {
            break;
        }
        let dir = match &metric {
            Some(m) => m.direction(&grad),
            None => grad.clone(),
        };
        let slope = mass_dot(mass, &grad, &dir);
        if it > 1 {
            tau *= 2.0;
        }
        let trial = loop {
            let trial = psi.axpy(-tau, &dir);
            let e = problem.energy(&trial)?.e_total;
            if e.is_finite() && e <= report.e_total - cfg.armijo_c * tau * slope {
                break trial;
            }
            tau *= cfg.backtrack_factor;
            if tau < min_step {
                return Err(Error::Stall { level, iteration: it, step: tau });
            }
        };
        psi = trial;
        (report, grad) = problem.energy_and_gradient(&psi)?;
        if !report.e_total.is_finite() {
            return Err(Error::NonFiniteEnergy { level, iteration: it });
        }
        gnorm = mass_dot(mass, &grad, &grad).sqrt();
        trace.push(level, it, tau, &report, gnorm);
    }
    if let Some(r) = trace.last() {
        debug!(
            "level {level}: {} iterations, E = {:.6e}, |G| = {:.3e}",
            r.iteration, r.e_total, r.grad_norm
        );
    }
    Ok((psi, trace))
}

/// Node counts per axis from coarsest to finest.
pub fn level_dims(finest: [usize; 2], levels: usize, min_nodes: usize) -> Vec<[usize; 2]> {
    let mut dims = vec![finest];
    while dims.len() < levels {
        let d = *dims.last().unwrap();
        let next = [d[0].div_ceil(2), d[1].div_ceil(2)];
        if next[0] < min_nodes || next[1] < min_nodes || next == d {
            break;
        }
        dims.push(next);
    }
    dims.reverse();
    dims
}

/// Grid spanning the same rectangle as `grid` with `dims` nodes.
pub fn resampled_grid(grid: &Grid2, dims: [usize; 2]) -> Result<Grid2> {
    if dims[0] < 2 || dims[1] < 2 {
        return Err(Error::Invalid(format!("grid needs at least 2 nodes per axis, got {dims:?}")));
    }
    let ext = grid.extent();
    Grid2::new(
        dims,
        [ext[0] / (dims[0] - 1) as f64, ext[1] / (dims[1] - 1) as f64],
        grid.origin,
    )
}

fn check_factor_two(coarse: [usize; 2], fine: [usize; 2]) -> Result<()> {
    for a in 0..2 {
        let c = coarse[a] as isize;
        let f = fine[a] as isize;
        if (2 * c - 1 - f).abs() > 1 || c > f {
            return Err(Error::Invalid(format!(
                "grids {coarse:?} and {fine:?} are not a factor-two pair"
            )));
        }
    }
    Ok(())
}

/// Tent-weighted average onto a coarser grid over the same rectangle. For
/// nested grids this is full weighting.
pub fn restrict(field: &Field2, coarse_dims: [usize; 2]) -> Result<Field2> {
    check_factor_two(coarse_dims, field.grid.dims)?;
    let fine = field.grid;
    let coarse = resampled_grid(&fine, coarse_dims)?;
    let mut values = Vec::with_capacity(coarse.len());
    for cj in 0..coarse_dims[1] {
        for ci in 0..coarse_dims[0] {
            let p = coarse.position(ci, cj);
            let mut range = [(0usize, 0usize); 2];
            for a in 0..2 {
                let s = (p[a] - fine.origin[a]) / fine.spacing[a];
                let r = coarse.spacing[a] / fine.spacing[a];
                let lo = (s - r).ceil().max(0.0) as usize;
                let hi = ((s + r).floor() as usize).min(fine.dims[a] - 1);
                range[a] = (lo, hi);
            }
            let (mut acc, mut wsum) = (0.0, 0.0);
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let q = fine.position(i, j);
                    let wx = 1.0 - (q[0] - p[0]).abs() / coarse.spacing[0];
                    let wy = 1.0 - (q[1] - p[1]).abs() / coarse.spacing[1];
                    if wx <= 0.0 || wy <= 0.0 {
                        continue;
                    }
                    acc += wx * wy * field.at(i, j);
                    wsum += wx * wy;
                }
            }
            values.push(acc / wsum);
        }
    }
    Field2::new(coarse, values)
}

/// Bilinear samples of `field` at the nodes of a grid over the same
/// rectangle; plain injection when the grids are nested.
pub fn resample(field: &Field2, dims: [usize; 2]) -> Result<Field2> {
    if dims == field.grid.dims {
        return Ok(field.clone());
    }
    let grid = resampled_grid(&field.grid, dims)?;
    Ok(Field2::from_fn(grid, |p| field.sample(p).value))
}

/// Restrict through every intermediate grid of `chain` (finest first) down
/// to `chain[k]`.
fn restrict_chain(field: &Field2, chain: &[[usize; 2]], k: usize) -> Result<Field2> {
    let mut out = field.clone();
    for d in &chain[1..=k] {
        out = restrict(&out, *d)?;
    }
    Ok(out)
}

/// Bilinear prolongation of the displacement `ψ - id_coarse`, added to the
/// identity of the finer surface.
pub fn prolongate(
    psi: &DeformationField,
    coarse: &GraphSurface,
    fine: &GraphSurface,
) -> Result<DeformationField> {
    if psi.grid.dims != coarse.grid.dims {
        return Err(Error::dims(coarse.grid.dims, psi.grid.dims));
    }
    check_factor_two(coarse.grid.dims, fine.grid.dims)?;
    let disp = psi.displacement(coarse);
    let comps: Vec<Field2> = (0..3)
        .map(|c| Field2 {
            grid: coarse.grid,
            values: disp.iter().map(|d| d[c]).collect(),
        })
        .collect();
    let fine_disp: Vec<[f64; 3]> = (0..fine.len())
        .map(|idx| {
            let [i, j] = fine.grid.coords(idx);
            let p = fine.grid.position(i, j);
            [
                comps[0].sample(p).value,
                comps[1].sample(p).value,
                comps[2].sample(p).value,
            ]
        })
        .collect();
    DeformationField::from_displacement(fine, &fine_disp)
}

/// Pixels per unit of ω length around the middle of the surface.
fn pixel_scale(surface: &GraphSurface, cam: &Camera) -> f64 {
    let [nx, ny] = surface.grid.dims;
    let (i, j) = (nx / 2, ny / 2);
    let x = surface.world_point(i, j);
    match cam.jacobian(x) {
        Ok(jac) => {
            let mut total = 0.0;
            for axis in surface.frame.axes.iter().take(2) {
                let du = jac[0][0] * axis[0] + jac[0][1] * axis[1] + jac[0][2] * axis[2];
                let dv = jac[1][0] * axis[0] + jac[1][1] * axis[1] + jac[1][2] * axis[2];
                total += (du * du + dv * dv).sqrt();
            }
            total / 2.0
        }
        Err(_) => 1.0,
    }
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub psi: DeformationField,
    pub trace: RunTrace,
    /// Regularization weight shared by all levels.
    pub lambda: f64,
    pub level_dims: Vec<[usize; 2]>,
}

/// Level problems of a cascade, coarsest first. Each level carries its own
/// regularization weight.
pub struct Cascade {
    pub surfaces: Vec<GraphSurface>,
    pub problems: Vec<RegistrationProblem>,
}

impl Cascade {
    pub fn lambda(&self) -> f64 {
        self.problems[0].lambda
    }
}

impl Cascade {
    pub fn build(
        surface: &GraphSurface,
        f: &ClassifierImage,
        g: &ClassifierImage,
        cam: &Camera,
        cfg: &DescentConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if f.grid.dims != surface.grid.dims {
            return Err(Error::dims(surface.grid.dims, f.grid.dims));
        }
        let dims = level_dims(surface.grid.dims, cfg.levels, cfg.min_nodes);
        let finest = dims.len() - 1;
        let chain: Vec<[usize; 2]> = dims.iter().rev().copied().collect();
        let heights = surface.height_field();
        let px_per_unit = pixel_scale(surface, cam);
        let mut surfaces = Vec::with_capacity(dims.len());
        let mut problems = Vec::with_capacity(dims.len());
        for (k, d) in dims.iter().enumerate() {
            let ratio = f64::from(1u32 << (finest - k));
            let sigma_px = cfg.smoothing_px * ratio;
            let g_k = g.blurred(sigma_px);
            let f_fine = f.blurred(sigma_px / px_per_unit);
            let f_k = ClassifierImage::saturating(resample(f_fine.field(), *d)?);
            let z_k = restrict_chain(&heights, &chain, finest - k)?;
            debug_assert_eq!(z_k.grid.dims, *d);
            let s_k = GraphSurface::new(z_k.grid, z_k.values, surface.frame)?;
            problems.push(RegistrationProblem::new(s_k.clone(), f_k, g_k, *cam, 1.0)?);
            surfaces.push(s_k);
        }
        // One weight for the whole hierarchy, fixed on the finest level.
        let lambda = match cfg.lambda {
            Some(l) => l,
            None => problems[finest].auto_lambda(cfg.lambda_scale)?,
        };
        for p in &mut problems {
            p.lambda = lambda;
        }
        Ok(Self { surfaces, problems })
    }
}

/// Coarse-to-fine registration starting from the identity graph.
pub fn cascadic_register(
    surface: &GraphSurface,
    f: &ClassifierImage,
    g: &ClassifierImage,
    cam: &Camera,
    cfg: &DescentConfig,
) -> Result<RegistrationResult> {
    let cascade = Cascade::build(surface, f, g, cam, cfg)?;
    info!(
        "cascade over {} levels, lambda {:.4e}",
        cascade.problems.len(),
        cascade.lambda()
    );
    let mut trace = RunTrace::default();
    let mut psi = cascade.problems[0].identity();
    for (k, problem) in cascade.problems.iter().enumerate() {
        if k > 0 {
            psi = prolongate(&psi, &cascade.surfaces[k - 1], &cascade.surfaces[k])?;
        }
        let (out, t) = descend_level(psi, problem, cfg, k)?;
        psi = out;
        trace.extend(t);
    }
    Ok(RegistrationResult {
        psi,
        trace,
        lambda: cascade.lambda(),
        level_dims: cascade.surfaces.iter().map(|s| s.grid.dims).collect(),
    })
}
