//! Crease classification on implicit surfaces and rasterised annotations.
//!
//! The zero moment shift of a ball `B_eps(x)` is
//!
//! ```text
//! M(x) = 1/|B_eps(x)| * integral over B_eps(x) of d(y) (y - x) dy
//! ```
//!
//! with `d` the signed distance. On a flat surface `|M| / eps^2 = 1/5`; near
//! edges and corners the ball sees less of the surface on one side and the
//! magnitude drops. The scalar classifier `C = 1 / (1 + beta t^2)` with
//! `t = |M| / eps^2` is therefore smallest on flat regions and increases
//! towards creases and corners.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field2::{ClassifierImage, Field2, Grid2};
use crate::graph::GraphSurface;
use crate::io::{self, KeyValues};
use crate::volume::ScalarField3;

/// Default narrow band, in voxels, in which the classifier is evaluated.
pub const DEFAULT_BAND_VOXELS: f64 = 2.0;
/// Default clamp window mapping C onto the surface classifier.
pub const DEFAULT_CLAMP: (f64, f64) = (0.55, 0.9);
/// Default Gaussian half-width of annotation strokes, in pixels.
pub const DEFAULT_STROKE_SIGMA: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierParams {
    /// Ball radius in length units.
    pub eps: f64,
    /// Sharpness of the profile `g_beta`.
    pub beta: f64,
    /// Midpoint-rule samples per axis over the ball's bounding cube.
    pub quadrature_points_per_axis: usize,
}

impl ClassifierParams {
    /// `eps = 8h`, `beta = 20`, `2 eps / h` quadrature points per axis.
    pub fn for_spacing(h: f64) -> Self {
        Self::with_eps(8.0 * h, h)
    }

    pub fn with_eps(eps: f64, h: f64) -> Self {
        Self {
            eps,
            beta: 20.0,
            quadrature_points_per_axis: ((2.0 * eps / h).round() as usize).max(4),
        }
    }

    pub fn validate(&self, h: f64) -> Result<()> {
        if !(self.eps >= 2.0 * h) {
            return Err(Error::Invalid(format!(
                "eps = {} is below 2h = {}",
                self.eps,
                2.0 * h
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.quadrature_points_per_axis < 4 {
            return Err(Error::Invalid(
                "quadrature needs at least 4 points per axis".into(),
            ));
        }
        Ok(())
    }
}

/// `g_beta(t) = 1 / (1 + beta t^2)`.
#[inline]
pub fn g_beta(t: f64, beta: f64) -> f64 {
    1.0 / (1.0 + beta * t * t)
}

/// Midpoint offsets strictly inside the unit-radius ball scaled by `eps`.
fn ball_offsets(eps: f64, points_per_axis: usize) -> Vec<[f64; 3]> {
    let q = points_per_axis;
    let step = 2.0 * eps / q as f64;
    let coord = |i: usize| -eps + (i as f64 + 0.5) * step;
    let mut out = Vec::new();
    for k in 0..q {
        for j in 0..q {
            for i in 0..q {
                let o = [coord(i), coord(j), coord(k)];
                if o[0] * o[0] + o[1] * o[1] + o[2] * o[2] < eps * eps {
                    out.push(o);
                }
            }
        }
    }
    out
}

fn moment_with_offsets(sdf: &ScalarField3, x: [f64; 3], offsets: &[[f64; 3]]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for o in offsets {
        let d = sdf.sample_clamped([x[0] + o[0], x[1] + o[1], x[2] + o[2]]);
        m[0] += d * o[0];
        m[1] += d * o[1];
        m[2] += d * o[2];
    }
    let n = offsets.len() as f64;
    m.map(|v| v / n)
}

/// Zero moment shift `M(x)` by midpoint quadrature over the ball. Samples
/// leaving the grid read clamped coordinates.
pub fn zero_moment_shift(
    sdf: &ScalarField3,
    x: [f64; 3],
    eps: f64,
    points_per_axis: usize,
) -> [f64; 3] {
    let offsets = ball_offsets(eps, points_per_axis.max(1));
    moment_with_offsets(sdf, x, &offsets)
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Classifier value `C(x)` at a single point.
pub fn classify_point(sdf: &ScalarField3, x: [f64; 3], params: &ClassifierParams) -> f64 {
    let m = zero_moment_shift(sdf, x, params.eps, params.quadrature_points_per_axis);
    g_beta(norm3(m) / (params.eps * params.eps), params.beta)
}

/// Evaluate `C` on every voxel with `|d| <= band`; everything else, and every
/// voxel whose ball leaves the grid, is 0.
pub fn classify_volume(
    sdf: &ScalarField3,
    params: &ClassifierParams,
    band: f64,
) -> Result<ScalarField3> {
    let grid = sdf.grid;
    params.validate(grid.spacing)?;
    let offsets = ball_offsets(params.eps, params.quadrature_points_per_axis);
    let lower = grid.origin;
    let upper = grid.upper();
    let eps = params.eps;
    let inv_eps2 = 1.0 / (eps * eps);
    let values: Vec<f64> = sdf
        .values
        .par_iter()
        .enumerate()
        .map(|(idx, &d)| {
            if d.abs() > band {
                return 0.0;
            }
            let [i, j, k] = grid.coords(idx);
            let x = grid.position(i, j, k);
            let ball_inside = (0..3).all(|a| x[a] - eps >= lower[a] && x[a] + eps <= upper[a]);
            if !ball_inside {
                return 0.0;
            }
            let m = moment_with_offsets(sdf, x, &offsets);
            g_beta(norm3(m) * inv_eps2, params.beta)
        })
        .collect();
    ScalarField3::new(grid, values)
}

/// Read `C` on the graph surface and rescale `[lo, hi]` onto `[0, 1]`.
pub fn surface_classifier(
    c: &ScalarField3,
    surface: &GraphSurface,
    clamp_lo: f64,
    clamp_hi: f64,
) -> Result<ClassifierImage> {
    if !(0.0..1.0).contains(&clamp_lo) || !(clamp_lo < clamp_hi && clamp_hi <= 1.0) {
        return Err(Error::Invalid(format!(
            "clamp window [{clamp_lo}, {clamp_hi}] must satisfy 0 <= lo < hi <= 1"
        )));
    }
    let grid = surface.grid;
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.dims[1] {
        for i in 0..grid.dims[0] {
            let x = surface.world_point(i, j);
            let v = c.sample_trilinear(x)?;
            values.push(((v - clamp_lo) / (clamp_hi - clamp_lo)).clamp(0.0, 1.0));
        }
    }
    ClassifierImage::new(Field2::new(grid, values)?)
}

/// Hand-drawn crease marks on an image, in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub stroke_sigma: f64,
}

impl Annotation {
    /// Parse `sigma=<float>` followed by one polyline per line,
    /// `x0,y0 x1,y1 ...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sigma = None;
        let mut polylines = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("sigma=") {
                sigma = Some(rest.trim().parse::<f64>().map_err(|_| {
                    Error::Invalid(format!("line {}: bad sigma {rest:?}", lineno + 1))
                })?);
                continue;
            }
            let mut pts = Vec::new();
            for tok in line.split_whitespace() {
                let (x, y) = tok.split_once(',').ok_or_else(|| {
                    Error::Invalid(format!("line {}: expected x,y got {tok:?}", lineno + 1))
                })?;
                let parse = |s: &str| {
                    s.parse::<f64>().map_err(|_| {
                        Error::Invalid(format!("line {}: bad coordinate {s:?}", lineno + 1))
                    })
                };
                pts.push([parse(x)?, parse(y)?]);
            }
            polylines.push(pts);
        }
        let stroke_sigma =
            sigma.ok_or_else(|| Error::Invalid("annotation lacks a sigma= header".into()))?;
        Ok(Self {
            polylines,
            stroke_sigma,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::ensure_exists(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Invalid(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("sigma={}\n", self.stroke_sigma);
        for line in &self.polylines {
            let pts: Vec<String> = line.iter().map(|p| format!("{},{}", p[0], p[1])).collect();
            out.push_str(&pts.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.stroke_sigma > 0.0 && self.stroke_sigma.is_finite()) {
            return Err(Error::Invalid("stroke sigma must be positive".into()));
        }
        for (n, line) in self.polylines.iter().enumerate() {
            if line.len() < 2 {
                return Err(Error::Invalid(format!("polyline {n} has fewer than 2 points")));
            }
            if let Some(p) = line.iter().find(|p| {
                !(0.0..=width as f64).contains(&p[0]) || !(0.0..=height as f64).contains(&p[1])
            }) {
                return Err(Error::Invalid(format!(
                    "polyline {n} point {p:?} lies outside the {width}x{height} image"
                )));
            }
        }
        Ok(())
    }
}

/// Rasterise an annotation into a `width x height` image classifier.
pub fn rasterize_annotation(
    ann: &Annotation,
    width: usize,
    height: usize,
) -> Result<ClassifierImage> {
    ann.validate(width, height)?;
    let grid = Grid2::image(width, height)?;
    if ann.polylines.is_empty() {
        log::warn!("annotation has no polylines; classifier image is all zeros");
    }
    Ok(rasterize_polylines(&ann.polylines, ann.stroke_sigma, &grid))
}

pub(crate) fn point_segment_distance_sq(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    dx * dx + dy * dy
}

/// Gaussian ridge `max over segments exp(-dist^2 / (2 sigma^2))` evaluated at
/// the nodes of `grid`; `sigma` is in the grid's physical units. Contributions
/// beyond six standard deviations are dropped.
pub fn rasterize_polylines(polylines: &[Vec<[f64; 2]>], sigma: f64, grid: &Grid2) -> ClassifierImage {
    let mut values = vec![0.0f64; grid.len()];
    let cutoff = 6.0 * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for line in polylines {
        for seg in line.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let lo = [a[0].min(b[0]) - cutoff, a[1].min(b[1]) - cutoff];
            let hi = [a[0].max(b[0]) + cutoff, a[1].max(b[1]) + cutoff];
            let range = |axis: usize| {
                let h = grid.spacing[axis];
                let o = grid.origin[axis];
                let n = grid.dims[axis] as isize;
                let first = (((lo[axis] - o) / h).ceil() as isize).clamp(0, n);
                let last = (((hi[axis] - o) / h).floor() as isize + 1).clamp(0, n);
                first as usize..last as usize
            };
            let (ri, rj) = (range(0), range(1));
            for j in rj {
                for i in ri.clone() {
                    let p = grid.position(i, j);
                    let d2 = point_segment_distance_sq(p, a, b);
                    if d2 <= cutoff * cutoff {
                        let v = (-d2 * inv).exp();
                        let slot = &mut values[grid.index(i, j)];
                        if v > *slot {
                            *slot = v;
                        }
                    }
                }
            }
        }
    }
    ClassifierImage::saturating(Field2 {
        grid: *grid,
        values,
    })
}

/// Write a classifier image in the field format and, when `pgm` is given,
/// as an 8-bit preview.
pub fn write_classifier(img: &ClassifierImage, path: &Path, pgm: Option<&Path>) -> Result<()> {
    img.write(path)?;
    if let Some(pgm) = pgm {
        img.write_pgm(pgm)?;
    }
    Ok(())
}

/// Echo classifier parameters into a manifest.
pub fn params_to_kv(params: &ClassifierParams, kv: &mut KeyValues) {
    kv.set("eps", params.eps);
    kv.set("beta", params.beta);
    kv.set("quadrature_points_per_axis", params.quadrature_points_per_axis);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid3;

    fn plane_sdf(n: usize, c: f64) -> ScalarField3 {
        let g = Grid3::new([n, n, n], 1.0, [0.0; 3]).unwrap();
        ScalarField3::from_fn(g, |p| p[2] - c).unwrap()
    }

    #[test]
    fn g_beta_reference_values() {
        assert_eq!(g_beta(0.0, 20.0), 1.0);
        assert!((g_beta(0.2, 20.0) - 1.0 / 1.8).abs() < 1e-15);
        assert!((g_beta(0.2, 20.0) - 0.5556).abs() < 5e-5);
    }

    #[test]
    fn tangential_moment_vanishes_off_plane() {
        let sdf = plane_sdf(40, 19.5);
        for delta in [-3.0, 0.0, 2.5] {
            let m = zero_moment_shift(&sdf, [20.0, 20.0, 19.5 + delta], 8.0, 16);
            assert!(m[0].abs() < 1e-12 && m[1].abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn params_reject_small_eps() {
        let p = ClassifierParams::with_eps(1.5, 1.0);
        assert!(p.validate(1.0).is_err());
        assert!(ClassifierParams::for_spacing(1.0).validate(1.0).is_ok());
    }

    #[test]
    fn classify_volume_outputs_unit_range_and_zero_off_band() {
        let sdf = plane_sdf(30, 14.5);
        let c = classify_volume(&sdf, &ClassifierParams::for_spacing(1.0), 2.0).unwrap();
        for (idx, &v) in c.values.iter().enumerate() {
            assert!((0.0..=1.0).contains(&v));
            if sdf.values[idx].abs() > 2.0 {
                assert_eq!(v, 0.0);
            }
        }
        let centre = c.at(15, 15, 14);
        assert!((centre - 0.5556).abs() < 0.02, "{centre}");
        // Within eps of the domain boundary: low confidence, zeroed.
        assert_eq!(c.at(3, 15, 14), 0.0);
    }

    #[test]
    fn surface_classifier_rescaling() {
        let g3 = Grid3::new([12, 12, 12], 1.0, [0.0; 3]).unwrap();
        let half = ScalarField3::from_fn(g3, |_| 0.5).unwrap();
        let surface = GraphSurface::flat([5, 5], [1.0, 1.0], [3.0, 3.0], 6.0);
        let f = surface_classifier(&half, &surface, 0.25, 0.75).unwrap();
        assert!(f.values.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let ident = surface_classifier(&half, &surface, 0.0, 1.0).unwrap();
        assert!(ident.values.iter().all(|&v| v == 0.5));
        let flat = ScalarField3::from_fn(g3, |_| 1.0 / 1.8).unwrap();
        let f0 = surface_classifier(&flat, &surface, 1.0 / 1.8, 0.9).unwrap();
        assert!(f0.values.iter().all(|&v| v == 0.0));
        assert!(surface_classifier(&half, &surface, 0.6, 0.6).is_err());
    }

    #[test]
    fn horizontal_stroke_profile() {
        let ann = Annotation {
            polylines: vec![vec![[2.0, 10.5], [19.0, 10.5]]],
            stroke_sigma: 2.0,
        };
        let img = rasterize_annotation(&ann, 21, 21).unwrap();
        assert_eq!(img.at(10, 10), 1.0);
        assert!((img.at(10, 11) - (-0.125f64).exp()).abs() < 1e-15);
        // exp(-1/2) sits one sigma (two pixels) off the centreline.
        assert!((img.at(10, 12) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn crossing_strokes_compose_by_max() {
        let ann = Annotation {
            polylines: vec![
                vec![[0.5, 5.5], [10.5, 5.5]],
                vec![[5.5, 0.5], [5.5, 10.5]],
            ],
            stroke_sigma: 1.5,
        };
        let img = rasterize_annotation(&ann, 11, 11).unwrap();
        assert_eq!(img.at(5, 5), 1.0);
        assert!(img.values.iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn empty_annotation_is_zero() {
        let ann = Annotation {
            polylines: vec![],
            stroke_sigma: 2.0,
        };
        let img = rasterize_annotation(&ann, 8, 6).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn annotation_text_round_trip_and_validation() {
        let text = "sigma=2.5\n1,2 3,4 5.5,6\n0,0 8,6\n";
        let ann = Annotation::parse(text).unwrap();
        assert_eq!(ann.polylines.len(), 2);
        assert_eq!(Annotation::parse(&ann.to_text()).unwrap(), ann);
        assert!(ann.validate(8, 6).is_ok());
        assert!(ann.validate(5, 6).is_err());
        assert!(Annotation::parse("sigma=1\n1,2\n").unwrap().validate(8, 8).is_err());
        assert!(Annotation::parse("1,2 3,4\n").is_err());
    }
}
