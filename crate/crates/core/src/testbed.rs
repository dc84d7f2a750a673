//! Synthetic scenes with known creases and a known deformation, and error
//! metrics against that ground truth.
//!
//! Lengths in [`SceneParams`] are multiples of the grid spacing `h`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{check_points_no_self_occlusion, Camera, Projection};
use crate::classifier::{
    classify_volume, point_segment_distance_sq, rasterize_polylines, surface_classifier,
    ClassifierParams, DEFAULT_BAND_VOXELS, DEFAULT_STROKE_SIGMA,
};
use crate::energy::{DeformationField, RegistrationProblem};
use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::field2::{load_classifier, ClassifierImage, Field2, Grid2};
use crate::fmm::redistance_fmm;
use crate::graph::{Frame, GraphSurface};
use crate::io::{join, KeyValues};
use crate::volume::{BinaryMask3, Grid3};

pub type Curve = Vec<[f64; 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub dims: [usize; 2],
    pub spacing: f64,
    /// Crease count; `None` draws 3 to 6.
    pub curves: Option<usize>,
    /// Background bump count; `None` draws 4 to 10.
    pub bumps: Option<usize>,
    pub bump_amplitude: f64,
    pub valley_depth: f64,
    pub valley_width: f64,
    /// Smallest distance between two creases, in `h`.
    pub curve_separation: f64,
    /// Largest displacement of the ground-truth deformation.
    pub amplitude: f64,
    /// Width of the boundary band that stays undeformed and unscored.
    pub band: f64,
    /// Standard deviation of the deformation bumps as a fraction of the
    /// interior side length.
    pub deformation_scale: f64,
    /// Ridge profile width of rendered creases, in pixels.
    pub stroke_sigma: f64,
    /// Image border around the projected domain, in pixels.
    pub margin_px: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            dims: [129, 129],
            spacing: 1.0,
            curves: None,
            bumps: None,
            bump_amplitude: 5.0,
            valley_depth: 3.0,
            valley_width: 4.0,
            curve_separation: 8.0,
            amplitude: 4.0,
            band: 16.0,
            deformation_scale: 0.45,
            stroke_sigma: DEFAULT_STROKE_SIGMA,
            margin_px: 16,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.dims[0] < 33 || self.dims[1] < 33 {
            return Err(Error::Invalid(format!(
                "synthetic scenes need at least 33 nodes per axis, got {:?}",
                self.dims
            )));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Invalid("spacing must be positive".into()));
        }
        if self.bumps.is_some_and(|b| b > 10) {
            return Err(Error::Invalid("at most 10 bumps".into()));
        }
        if !(0.0..=5.0).contains(&self.bump_amplitude) {
            return Err(Error::Invalid("bump amplitude must lie in [0, 5] h".into()));
        }
        for (name, v) in [
            ("valley_depth", self.valley_depth),
            ("curve_separation", self.curve_separation),
            ("amplitude", self.amplitude),
            ("band", self.band),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be non-negative")));
            }
        }
        if !(self.valley_width > 0.0 && self.stroke_sigma > 0.0 && self.deformation_scale > 0.0) {
            return Err(Error::Invalid("valley width and stroke sigma must be positive".into()));
        }
        let min_side = (self.dims[0].min(self.dims[1]) - 1) as f64;
        if 2.0 * self.band + 8.0 > min_side {
            return Err(Error::Invalid("boundary band leaves no interior".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("dims", join(&self.dims));
        kv.set("spacing", self.spacing);
        kv.set("curves", self.curves.map_or("auto".into(), |c| c.to_string()));
        kv.set("bumps", self.bumps.map_or("auto".into(), |c| c.to_string()));
        kv.set("bump_amplitude", self.bump_amplitude);
        kv.set("valley_depth", self.valley_depth);
        kv.set("valley_width", self.valley_width);
        kv.set("curve_separation", self.curve_separation);
        kv.set("amplitude", self.amplitude);
        kv.set("band", self.band);
        kv.set("deformation_scale", self.deformation_scale);
        kv.set("stroke_sigma", self.stroke_sigma);
        kv.set("margin_px", self.margin_px);
    }

    /// Defaults overridden by any keys present in `kv`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut p = Self::default();
        if let Some(d) = kv.parse_list::<usize>("dims")? {
            if d.len() != 2 {
                return Err(kv.error("dims needs 2 entries".into()));
            }
            p.dims = [d[0], d[1]];
        }
        let count = |key: &str| -> Result<Option<Option<usize>>> {
            match kv.get(key) {
                None => Ok(None),
                Some("auto") => Ok(Some(None)),
                Some(_) => Ok(Some(kv.parse_value(key)?)),
            }
        };
        if let Some(c) = count("curves")? {
            p.curves = c;
        }
        if let Some(c) = count("bumps")? {
            p.bumps = c;
        }
        macro_rules! real {
            ($($field:ident),*) => {$(
                if let Some(v) = kv.parse_value(stringify!($field))? {
                    p.$field = v;
                }
            )*};
        }
        real!(spacing, bump_amplitude, valley_depth, valley_width, curve_separation, amplitude, band, deformation_scale, stroke_sigma, margin_px);
        p.validate()?;
        Ok(p)
    }

    pub fn grid(&self) -> Result<Grid2> {
        Grid2::new(self.dims, [self.spacing; 2], [0.0, 0.0])
    }

    /// Downward orthographic camera mapping `ω` onto pixel centres, one
    /// pixel per `h`, with `margin_px` pixels of border.
    pub fn camera(&self) -> Result<Camera> {
        let m = self.margin_px as f64 + 0.5;
        let inv = 1.0 / self.spacing;
        Camera::new(
            Projection::Orthographic {
                su: inv,
                sv: -inv,
                cu: m,
                cv: m,
            },
            [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            [0.0, 0.0, 100.0 * self.spacing],
            self.dims[0] + 2 * self.margin_px,
            self.dims[1] + 2 * self.margin_px,
        )
    }
}

fn curve_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn bezier(p: &[[f64; 2]; 4], t: f64) -> [f64; 2] {
    let s = 1.0 - t;
    let w = [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t];
    [
        w.iter().zip(p).map(|(w, q)| w * q[0]).sum(),
        w.iter().zip(p).map(|(w, q)| w * q[1]).sum(),
    ]
}

const CURVE_ATTEMPTS: usize = 20_000;
/// Candidates tried before the partial set is discarded and placement restarts.
const CURVE_RESTART: usize = 500;

fn curves_closer_than(a: &Curve, b: &Curve, d: f64) -> bool {
    let d2 = d * d;
    a.iter().step_by(4).any(|p| {
        b.iter()
            .step_by(4)
            .any(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) < d2)
    })
}

/// Random smooth bent crease curves inside the box `[lo, hi]^2`, each
/// spanning most of a chord of the box, pairwise at least `sep` apart and
/// sampled every quarter of `h`.
fn random_curves(
    rng: &mut ChaCha8Rng,
    count: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    sep: f64,
    h: f64,
) -> Result<Vec<Curve>> {
    let centre = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
    let mut curves: Vec<Curve> = Vec::with_capacity(count);
    for attempt in 0..CURVE_ATTEMPTS {
        if curves.len() == count {
            return Ok(curves);
        }
        if attempt % CURVE_RESTART == CURVE_RESTART - 1 {
            curves.clear();
        }
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let dir = [theta.cos(), theta.sin()];
        let nrm = [-dir[1], dir[0]];
        let offset = rng.gen_range(-0.8..0.8) * half[0].min(half[1]);
        let c = [centre[0] + offset * nrm[0], centre[1] + offset * nrm[1]];
        // Chord of the box along `dir` through `c`.
        let mut reach = f64::INFINITY;
        for a in 0..2 {
            if dir[a].abs() > 1e-12 {
                let ahead = if dir[a] > 0.0 { (hi[a] - c[a]) / dir[a] } else { (lo[a] - c[a]) / dir[a] };
                let back = if dir[a] > 0.0 { (c[a] - lo[a]) / dir[a] } else { (c[a] - hi[a]) / dir[a] };
                reach = reach.min(ahead.min(back));
            }
        }
        let len = 2.0 * rng.gen_range(0.5..0.95) * reach;
        if len < 0.5 * half[0].min(half[1]) {
            continue;
        }
        let at = |s: f64, o: f64| [c[0] + s * len * dir[0] + o * len * nrm[0], c[1] + s * len * dir[1] + o * len * nrm[1]];
        let ctrl = [
            at(-0.5, 0.0),
            at(-1.0 / 6.0, rng.gen_range(-0.4..0.4)),
            at(1.0 / 6.0, rng.gen_range(-0.4..0.4)),
            at(0.5, 0.0),
        ];
        let steps = (2.0 * len / (0.25 * h)).ceil() as usize;
        let pts: Curve = (0..=steps).map(|k| bezier(&ctrl, k as f64 / steps as f64)).collect();
        let inside = pts
            .iter()
            .all(|p| (lo[0]..=hi[0]).contains(&p[0]) && (lo[1]..=hi[1]).contains(&p[1]));
        if inside && !curves.iter().any(|other| curves_closer_than(&pts, other, sep)) {
            curves.push(pts);
        }
    }
    if curves.len() == count {
        return Ok(curves);
    }
    Err(Error::Invalid(format!(
        "could not place {count} creases {sep} apart; lower curve_separation or the count"
    )))
}

pub fn distance_to_curve(p: [f64; 2], curve: &Curve) -> f64 {
    curve
        .windows(2)
        .map(|s| point_segment_distance_sq(p, s[0], s[1]))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Gaussian bumps carved by Gaussian valleys along random curves; the
/// deepest valley wins where valleys meet.
pub fn make_synthetic_surface(params: &SceneParams, seed: u64) -> Result<(GraphSurface, Vec<Curve>)> {
    params.validate()?;
    let h = params.spacing;
    let grid = params.grid()?;
    let ext = grid.extent();
    let mut rng = curve_rng(seed, 1);
    let n_curves = params.curves.unwrap_or_else(|| rng.gen_range(3..=6));
    let n_bumps = params.bumps.unwrap_or_else(|| rng.gen_range(4..=10));
    let bumps: Vec<[f64; 4]> = (0..n_bumps)
        .map(|_| {
            [
                rng.gen_range(0.0..ext[0]),
                rng.gen_range(0.0..ext[1]),
                rng.gen_range(12.0..24.0) * h,
                rng.gen_range(-1.0..1.0) * params.bump_amplitude * h,
            ]
        })
        .collect();
    let b = params.band * h;
    let curves = if n_curves == 0 {
        Vec::new()
    } else {
        random_curves(&mut rng, n_curves, [b, b], [ext[0] - b, ext[1] - b], params.curve_separation * h, h)?
    };
    let sigma = 0.5 * params.valley_width * h;
    let depth = params.valley_depth * h;
    let reach = 6.0 * sigma;
    let surface = GraphSurface::from_fn(grid, Frame::identity(), |p| {
        let mut z = 0.0;
        for bump in &bumps {
            let r2 = (p[0] - bump[0]).powi(2) + (p[1] - bump[1]).powi(2);
            z += bump[3] * (-r2 / (2.0 * bump[2] * bump[2])).exp();
        }
        if depth > 0.0 {
            let mut valley: f64 = 0.0;
            for c in &curves {
                let d = distance_to_curve(p, c);
                if d < reach {
                    valley = valley.min(-depth * (-d * d / (2.0 * sigma * sigma)).exp());
                }
            }
            z += valley;
        }
        z
    })?;
    Ok((surface, curves))
}

/// `sin^2` window vanishing outside `[b, L - b]` on both axes.
fn window(p: [f64; 2], ext: [f64; 2], b: f64) -> f64 {
    let mut w = 1.0;
    for a in 0..2 {
        let t = (p[a] - b) / (ext[a] - 2.0 * b);
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        w *= (std::f64::consts::PI * t).sin().powi(2);
    }
    w
}

/// Identity graph plus a smooth in-plane displacement supported away from
/// the boundary band, scaled so its largest nodal norm is `amplitude * h`.
pub fn make_ground_truth_deformation(
    surface: &GraphSurface,
    amplitude: f64,
    band: f64,
    scale: f64,
    seed: u64,
) -> Result<DeformationField> {
    let grid = surface.grid;
    let h = grid.spacing[0].min(grid.spacing[1]);
    let ext = grid.extent();
    let b = band * h;
    if 2.0 * b >= ext[0].min(ext[1]) {
        return Err(Error::Invalid("boundary band leaves no interior".into()));
    }
    let mut rng = curve_rng(seed, 2);
    let count = rng.gen_range(2..=4);
    let bumps: Vec<[f64; 5]> = (0..count)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let mag = rng.gen_range(0.5..1.0);
            [
                rng.gen_range(b..ext[0] - b),
                rng.gen_range(b..ext[1] - b),
                rng.gen_range(0.75..1.25) * scale * (ext[0] - 2.0 * b).min(ext[1] - 2.0 * b),
                mag * angle.cos(),
                mag * angle.sin(),
            ]
        })
        .collect();
    let mut disp: Vec<[f64; 3]> = (0..grid.len())
        .map(|idx| {
            let [i, j] = grid.coords(idx);
            let p = grid.position(i, j);
            let w = window(p, ext, b);
            let mut d = [0.0; 3];
            for bump in &bumps {
                let r2 = (p[0] - bump[0]).powi(2) + (p[1] - bump[1]).powi(2);
                let g = w * (-r2 / (2.0 * bump[2] * bump[2])).exp();
                d[0] += bump[3] * g;
                d[1] += bump[4] * g;
            }
            d
        })
        .collect();
    let peak = disp
        .iter()
        .map(|d| (d[0] * d[0] + d[1] * d[1]).sqrt())
        .fold(0.0, f64::max);
    let scale = if peak > 0.0 { amplitude * h / peak } else { 0.0 };
    for d in &mut disp {
        d[0] *= scale;
        d[1] *= scale;
    }
    DeformationField::from_displacement(surface, &disp)
}

/// `ψ` at an arbitrary point of `ω`: bilinear displacement plus the graph.
pub fn deform_point(psi: &DeformationField, surface: &GraphSurface, p: [f64; 2]) -> [f64; 3] {
    let disp = psi.displacement(surface);
    deform_with(&disp, surface, p)
}

fn deform_with(disp: &[[f64; 3]], surface: &GraphSurface, p: [f64; 2]) -> [f64; 3] {
    let grid = surface.grid;
    let comp = |c: usize| Field2 {
        grid,
        values: disp.iter().map(|d| d[c]).collect(),
    };
    let z = surface.height_field().sample(p).value;
    [
        p[0] + comp(0).sample(p).value,
        p[1] + comp(1).sample(p).value,
        z + comp(2).sample(p).value,
    ]
}

/// Crease curves pushed through `P ∘ ψ` and rasterized with the ridge
/// profile on the camera's pixel grid.
pub fn render_projected_classifier(
    surface: &GraphSurface,
    curves: &[Curve],
    psi: &DeformationField,
    camera: &Camera,
    stroke_sigma: f64,
) -> Result<ClassifierImage> {
    let grid = surface.grid;
    let disp = psi.displacement(surface);
    let comps: Vec<Field2> = (0..3)
        .map(|c| Field2 {
            grid,
            values: disp.iter().map(|d| d[c]).collect(),
        })
        .collect();
    let heights = surface.height_field();
    let mut projected = Vec::with_capacity(curves.len());
    for curve in curves {
        let mut line = Vec::with_capacity(curve.len());
        for &p in curve {
            let local = [
                p[0] + comps[0].sample(p).value,
                p[1] + comps[1].sample(p).value,
                heights.sample(p).value + comps[2].sample(p).value,
            ];
            line.push(camera.project(surface.frame.to_world(local))?);
        }
        projected.push(line);
    }
    let image = Grid2::image(camera.width, camera.height)?;
    Ok(rasterize_polylines(&projected, stroke_sigma, &image))
}

/// Surface classifier drawn directly from the creases in `ω`, in units of
/// the surface grid. The pixel width is converted with the camera scale.
pub fn crease_classifier(surface: &GraphSurface, curves: &[Curve], stroke_sigma_px: f64, px_per_unit: f64) -> ClassifierImage {
    rasterize_polylines(curves, stroke_sigma_px / px_per_unit, &surface.grid)
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub params: SceneParams,
    pub seed: u64,
    pub surface: GraphSurface,
    pub crease_curves: Vec<Curve>,
    pub psi_true: DeformationField,
    pub camera: Camera,
    pub f_true: ClassifierImage,
    pub g_rendered: ClassifierImage,
}

impl SyntheticScene {
    /// Surface, deformation, camera and both classifiers for one seed.
    /// Fails with [`Error::SelfOcclusion`] when the deformed graph folds or
    /// hides part of itself from the camera.
    pub fn generate(params: &SceneParams, seed: u64) -> Result<Self> {
        let (surface, curves) = make_synthetic_surface(params, seed)?;
        let psi_true = make_ground_truth_deformation(&surface, params.amplitude, params.band, params.deformation_scale, seed)?;
        let camera = params.camera()?;
        let world: Vec<[f64; 3]> = psi_true.values.iter().map(|p| surface.frame.to_world(*p)).collect();
        let report = check_points_no_self_occlusion(surface.grid.dims, &world, &camera);
        if !report.injective {
            return Err(Error::SelfOcclusion {
                nodes: report.nodes,
            });
        }
        let g_rendered = render_projected_classifier(&surface, &curves, &psi_true, &camera, params.stroke_sigma)?;
        let f_true = crease_classifier(&surface, &curves, params.stroke_sigma, 1.0 / params.spacing);
        Ok(Self {
            params: params.clone(),
            seed,
            surface,
            crease_curves: curves,
            psi_true,
            camera,
            f_true,
            g_rendered,
        })
    }

    /// Same scene with the image rendered from the undeformed surface.
    pub fn undeformed(&self) -> Result<Self> {
        let psi = DeformationField::identity(&self.surface);
        let g = render_projected_classifier(&self.surface, &self.crease_curves, &psi, &self.camera, self.params.stroke_sigma)?;
        Ok(Self {
            psi_true: psi,
            g_rendered: g,
            ..self.clone()
        })
    }

    pub fn manifest(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        self.params.to_kv(&mut kv);
        kv.set("curve_count", self.crease_curves.len());
        kv.set("surface", "surface.hdr");
        kv.set("psi_true", "psi_true.hdr");
        kv.set("camera", "camera.txt");
        kv.set("f", "f.hdr");
        kv.set("g", "g.hdr");
        kv
    }

    /// Bundle directory with surface, psi_true, camera, f, g and manifest.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.surface.write(&dir.join("surface.hdr"))?;
        self.psi_true.write(&dir.join("psi_true.hdr"))?;
        self.camera.write(&dir.join("camera.txt"))?;
        self.f_true.write(&dir.join("f.hdr"))?;
        self.g_rendered.write(&dir.join("g.hdr"))?;
        self.manifest().write(&dir.join("manifest.txt"))
    }

    /// Read a bundle; crease curves are regenerated from the manifest seed.
    pub fn read_bundle(dir: &Path) -> Result<Self> {
        let manifest = KeyValues::read(&dir.join("manifest.txt"))?;
        let seed: u64 = manifest.require_value("seed")?;
        let params = SceneParams::from_kv(&manifest)?;
        let surface = GraphSurface::load(&dir.join("surface.hdr"))?;
        let psi_true = DeformationField::load(&dir.join("psi_true.hdr"))?;
        if psi_true.grid.dims != surface.grid.dims {
            return Err(Error::dims(surface.grid.dims, psi_true.grid.dims));
        }
        let camera = Camera::load(&dir.join("camera.txt"))?;
        let f_true = load_classifier(&dir.join("f.hdr"))?;
        let g_rendered = load_classifier(&dir.join("g.hdr"))?;
        let (_, curves) = make_synthetic_surface(&params, seed)?;
        Ok(Self {
            params,
            seed,
            surface,
            crease_curves: curves,
            psi_true,
            camera,
            f_true,
            g_rendered,
        })
    }

    pub fn interior_band_nodes(&self) -> usize {
        self.params.band.ceil() as usize
    }

    pub fn score(&self, psi: &DeformationField) -> Result<ErrorMetrics> {
        let identity = DeformationField::identity(&self.surface);
        score_against(&self.surface, psi, &self.psi_true, &identity, self.interior_band_nodes(), |p| {
            let problem = RegistrationProblem::new(
                self.surface.clone(),
                self.f_true.clone(),
                self.g_rendered.clone(),
                self.camera,
                1.0,
            )?;
            image_residual(&problem, p, self.interior_band_nodes())
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorMetrics {
    /// Mass-weighted RMS of `|ψ - ψ_true|` over interior nodes, in `h`.
    pub rms_surface_error: f64,
    pub max_surface_error: f64,
    /// RMS of `g(P(ψ)) - f` over interior nodes.
    pub rms_image_residual: f64,
    /// RMS error of the identity against the ground truth.
    pub initial_rms: f64,
    /// `rms_surface_error / initial_rms`.
    pub ratio: f64,
}

impl ErrorMetrics {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("rms_surface_error", self.rms_surface_error);
        kv.set("max_surface_error", self.max_surface_error);
        kv.set("rms_image_residual", self.rms_image_residual);
        kv.set("initial_rms", self.initial_rms);
        kv.set("ratio", self.ratio);
        kv
    }
}

/// RMS and max of `|ψ - ψ_true|` in units of `h` over nodes at least
/// `band` nodes away from the boundary, weighted by the lumped mass.
pub fn surface_error(
    psi: &DeformationField,
    psi_true: &DeformationField,
    mass: &[f64],
    band: usize,
) -> Result<(f64, f64)> {
    if psi.grid.dims != psi_true.grid.dims {
        return Err(Error::dims(psi_true.grid.dims, psi.grid.dims));
    }
    if mass.len() != psi.values.len() {
        return Err(Error::dims(psi.values.len(), mass.len()));
    }
    let grid = psi.grid;
    let h = grid.spacing[0].min(grid.spacing[1]);
    let (mut num, mut den, mut max) = (0.0, 0.0, 0.0f64);
    for idx in 0..grid.len() {
        let [i, j] = grid.coords(idx);
        if grid.boundary_distance(i, j) < band {
            continue;
        }
        let a = psi.values[idx];
        let b = psi_true.values[idx];
        let e2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
        num += mass[idx] * e2;
        den += mass[idx];
        max = max.max(e2.sqrt());
    }
    if den == 0.0 {
        return Err(Error::Invalid("boundary band covers the whole grid".into()));
    }
    Ok(((num / den).sqrt() / h, max / h))
}

fn image_residual(problem: &RegistrationProblem, psi: &DeformationField, band: usize) -> Result<f64> {
    let grid = psi.grid;
    let (mut num, mut count) = (0.0, 0usize);
    for (idx, p) in psi.values.iter().enumerate() {
        let [i, j] = grid.coords(idx);
        if grid.boundary_distance(i, j) < band {
            continue;
        }
        let uv = problem.camera.project(problem.surface.frame.to_world(*p))?;
        let r = problem.g.sample(uv).value - problem.f.values[idx];
        num += r * r;
        count += 1;
    }
    Ok((num / count.max(1) as f64).sqrt())
}

fn score_against(
    surface: &GraphSurface,
    psi: &DeformationField,
    psi_true: &DeformationField,
    identity: &DeformationField,
    band: usize,
    residual: impl Fn(&DeformationField) -> Result<f64>,
) -> Result<ErrorMetrics> {
    let ops = FemOperators::assemble(&surface.grid)?;
    let (rms, max) = surface_error(psi, psi_true, &ops.mass, band)?;
    let (initial, _) = surface_error(identity, psi_true, &ops.mass, band)?;
    Ok(ErrorMetrics {
        rms_surface_error: rms,
        max_surface_error: max,
        rms_image_residual: residual(psi)?,
        initial_rms: initial,
        ratio: if initial > 0.0 { rms / initial } else { 0.0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineParams {
    pub classifier: ClassifierParams,
    /// Clamp window of the surface classifier; `None` maps the median of `C`
    /// over the surface to 0 and its `upper_quantile` to 1.
    pub clamp: Option<(f64, f64)>,
    pub upper_quantile: f64,
    /// Free space above and below the surface, in `h`.
    pub padding: f64,
}

impl PipelineParams {
    pub fn for_spacing(h: f64) -> Self {
        Self {
            classifier: ClassifierParams::for_spacing(h),
            clamp: None,
            upper_quantile: 0.99,
            padding: 12.0,
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[k]
}

/// Volumetric classifier route to `f`: voxelize the solid below the graph,
/// redistance it, classify, and read the classifier off the surface.
pub fn pipeline_classifier(surface: &GraphSurface, params: &PipelineParams) -> Result<ClassifierImage> {
    let grid = surface.grid;
    if (grid.spacing[0] - grid.spacing[1]).abs() > 1e-12 * grid.spacing[0] {
        return Err(Error::Invalid("volumetric pipeline needs square surface cells".into()));
    }
    if !(0.5..1.0).contains(&params.upper_quantile) {
        return Err(Error::Invalid("upper_quantile must lie in [0.5, 1)".into()));
    }
    let h = grid.spacing[0];
    let (zmin, zmax) = surface.height_field().min_max();
    let pad = (params.padding + params.classifier.eps / h).ceil() * h;
    let z0 = ((zmin - pad) / h).floor() * h;
    let nz = (((zmax + pad) - z0) / h).ceil() as usize + 1;
    let vol = Grid3::new([grid.dims[0], grid.dims[1], nz], h, [grid.origin[0], grid.origin[1], z0])?;
    let mut inside = Vec::with_capacity(vol.len());
    for k in 0..nz {
        for j in 0..grid.dims[1] {
            for i in 0..grid.dims[0] {
                let top = surface.local_point(i, j)[2];
                inside.push(vol.position(i, j, k)[2] < top);
            }
        }
    }
    let mask = BinaryMask3::new(vol, inside)?;
    let sdf = redistance_fmm(&mask)?;
    let c = classify_volume(&sdf, &params.classifier, DEFAULT_BAND_VOXELS * h)?;
    let local = GraphSurface::new(grid, surface.z.clone(), Frame::identity())?;
    let (lo, hi) = match params.clamp {
        Some(window) => window,
        None => {
            let raw = surface_classifier(&c, &local, 0.0, 1.0)?;
            // Flagged low-confidence nodes carry exactly 0.
            let mut v: Vec<f64> = raw.field().values.iter().copied().filter(|&x| x > 0.0).collect();
            if v.is_empty() {
                return Err(Error::Invalid("classifier is flagged on the whole surface".into()));
            }
            v.sort_by(f64::total_cmp);
            let lo = quantile(&v, 0.5);
            let hi = quantile(&v, params.upper_quantile);
            if hi <= lo {
                return Err(Error::Invalid("classifier has no contrast on the surface".into()));
            }
            (lo, hi)
        }
    };
    surface_classifier(&c, &local, lo, hi)
}
