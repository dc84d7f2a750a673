//! Node-centred 2D scalar fields over a rectangle, used for height maps,
//! nodal quantities on the parameter domain, and images on the image plane.
//!
//! Images use pixel units with pixel `(i, j)` centred at `(i + 0.5, j + 0.5)`,
//! so the continuous image domain is `[0, width] x [0, height]`.

use std::ops::Deref;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, Dtype, KeyValues};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2 {
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    pub origin: [f64; 2],
}

impl Grid2 {
    pub fn new(dims: [usize; 2], spacing: [f64; 2], origin: [f64; 2]) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::Invalid(format!(
                "2D grid needs at least 2 nodes per axis, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Invalid(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Pixel grid of an image with the given size.
    pub fn image(width: usize, height: usize) -> Result<Self> {
        Self::new([width, height], [1.0, 1.0], [0.5, 0.5])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.dims[0] * j
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 2] {
        [idx % self.dims[0], idx / self.dims[0]]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
        ]
    }

    pub fn upper(&self) -> [f64; 2] {
        [
            self.origin[0] + (self.dims[0] - 1) as f64 * self.spacing[0],
            self.origin[1] + (self.dims[1] - 1) as f64 * self.spacing[1],
        ]
    }

    /// Physical extent of the node rectangle.
    pub fn extent(&self) -> [f64; 2] {
        [
            (self.dims[0] - 1) as f64 * self.spacing[0],
            (self.dims[1] - 1) as f64 * self.spacing[1],
        ]
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.dims[0] || j + 1 == self.dims[1]
    }

    /// Distance of node `(i, j)` to the nearest boundary row/column, in nodes.
    pub fn boundary_distance(&self, i: usize, j: usize) -> usize {
        i.min(j).min(self.dims[0] - 1 - i).min(self.dims[1] - 1 - j)
    }

    pub(crate) fn write_header(&self, kv: &mut KeyValues) {
        kv.set("dims", io::join(&self.dims));
        kv.set("spacing", io::join(&self.spacing));
        kv.set("origin", io::join(&self.origin));
    }

    pub(crate) fn read_header(kv: &KeyValues) -> Result<Self> {
        let dims: Vec<usize> = kv.require_list("dims", 2)?;
        let spacing: Vec<f64> = kv
            .parse_list("spacing")?
            .ok_or_else(|| kv.error("missing key \"spacing\"".into()))?;
        let spacing = match spacing.as_slice() {
            [h] => [*h, *h],
            [hu, hv] => [*hu, *hv],
            _ => return Err(kv.error("spacing needs 1 or 2 entries".into())),
        };
        let origin: Vec<f64> = kv.parse_list("origin")?.unwrap_or_else(|| vec![0.0; 2]);
        if origin.len() != 2 {
            return Err(kv.error("origin needs 2 entries".into()));
        }
        Grid2::new([dims[0], dims[1]], spacing, [origin[0], origin[1]])
    }
}

/// Result of a clamped bilinear lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub value: f64,
    /// Derivative of the bilinear interpolant; zero along clamped axes.
    pub gradient: [f64; 2],
    pub inside: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field2 {
    pub grid: Grid2,
    pub values: Vec<f64>,
}

impl Field2 {
    pub fn new(grid: Grid2, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dims(grid.len(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite field value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2, f: impl Fn([f64; 2]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.dims[1] {
            for i in 0..grid.dims[0] {
                values.push(f(grid.position(i, j)));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Bilinear lookup with coordinates clamped to the node rectangle.
    #[inline]
    pub fn sample(&self, p: [f64; 2]) -> Sample {
        let g = &self.grid;
        let mut base = [0usize; 2];
        let mut t = [0.0; 2];
        let mut clamped = [false; 2];
        for a in 0..2 {
            let s = (p[a] - g.origin[a]) / g.spacing[a];
            let max = (g.dims[a] - 1) as f64;
            clamped[a] = !(0.0..=max).contains(&s);
            let s = s.clamp(0.0, max);
            let i0 = (s.floor() as usize).min(g.dims[a] - 2);
            base[a] = i0;
            t[a] = s - i0 as f64;
        }
        let [i, j] = base;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        let value = v00 * (1.0 - t[0]) * (1.0 - t[1])
            + v10 * t[0] * (1.0 - t[1])
            + v01 * (1.0 - t[0]) * t[1]
            + v11 * t[0] * t[1];
        let du = ((v10 - v00) * (1.0 - t[1]) + (v11 - v01) * t[1]) / g.spacing[0];
        let dv = ((v01 - v00) * (1.0 - t[0]) + (v11 - v10) * t[0]) / g.spacing[1];
        Sample {
            value,
            gradient: [
                if clamped[0] { 0.0 } else { du },
                if clamped[1] { 0.0 } else { dv },
            ],
            inside: !clamped[0] && !clamped[1],
        }
    }

    /// Catmull-Rom bicubic lookup with clamped coordinates and replicated
    /// edges. The interpolant is C1 and its gradient at nodes equals the
    /// central differences of the samples.
    pub fn sample_cubic(&self, p: [f64; 2]) -> Sample {
        let g = &self.grid;
        let mut base = [0isize; 2];
        let mut w = [[0.0; 4]; 2];
        let mut dw = [[0.0; 4]; 2];
        let mut clamped = [false; 2];
        for a in 0..2 {
            let s = (p[a] - g.origin[a]) / g.spacing[a];
            let max = (g.dims[a] - 1) as f64;
            clamped[a] = !(0.0..=max).contains(&s);
            let s = s.clamp(0.0, max);
            let i0 = (s.floor() as usize).min(g.dims[a] - 2);
            let t = s - i0 as f64;
            let (t2, t3) = (t * t, t * t * t);
            base[a] = i0 as isize - 1;
            w[a] = [
                0.5 * (-t3 + 2.0 * t2 - t),
                0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                0.5 * (t3 - t2),
            ];
            let inv = 1.0 / g.spacing[a];
            dw[a] = [
                0.5 * (-3.0 * t2 + 4.0 * t - 1.0) * inv,
                0.5 * (9.0 * t2 - 10.0 * t) * inv,
                0.5 * (-9.0 * t2 + 8.0 * t + 1.0) * inv,
                0.5 * (3.0 * t2 - 2.0 * t) * inv,
            ];
        }
        let (mut value, mut du, mut dv) = (0.0, 0.0, 0.0);
        for b in 0..4 {
            let j = (base[1] + b as isize).clamp(0, g.dims[1] as isize - 1) as usize;
            let (mut row, mut drow) = (0.0, 0.0);
            for a in 0..4 {
                let i = (base[0] + a as isize).clamp(0, g.dims[0] as isize - 1) as usize;
                let v = self.at(i, j);
                row += w[0][a] * v;
                drow += dw[0][a] * v;
            }
            value += w[1][b] * row;
            du += w[1][b] * drow;
            dv += dw[1][b] * row;
        }
        Sample {
            value,
            gradient: [
                if clamped[0] { 0.0 } else { du },
                if clamped[1] { 0.0 } else { dv },
            ],
            inside: !clamped[0] && !clamped[1],
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Separable Gaussian blur with standard deviation `sigma` in physical
    /// units; edges replicate the border value.
    pub fn gaussian_blur(&self, sigma: f64) -> Field2 {
        if sigma <= 0.0 {
            return self.clone();
        }
        let [nu, nv] = self.grid.dims;
        let kernel = |h: f64| -> Vec<f64> {
            let s = sigma / h;
            let radius = (4.0 * s).ceil() as isize;
            let mut k: Vec<f64> = (-radius..=radius)
                .map(|x| (-(x * x) as f64 / (2.0 * s * s)).exp())
                .collect();
            let sum: f64 = k.iter().sum();
            k.iter_mut().for_each(|w| *w /= sum);
            k
        };
        let ku = kernel(self.grid.spacing[0]);
        let kv = kernel(self.grid.spacing[1]);
        let ru = (ku.len() / 2) as isize;
        let rv = (kv.len() / 2) as isize;
        let mut tmp = vec![0.0; self.values.len()];
        for j in 0..nv {
            for i in 0..nu {
                let mut acc = 0.0;
                for (o, w) in ku.iter().enumerate() {
                    let ii = (i as isize + o as isize - ru).clamp(0, nu as isize - 1) as usize;
                    acc += w * self.at(ii, j);
                }
                tmp[self.grid.index(i, j)] = acc;
            }
        }
        let mut out = vec![0.0; self.values.len()];
        for j in 0..nv {
            for i in 0..nu {
                let mut acc = 0.0;
                for (o, w) in kv.iter().enumerate() {
                    let jj = (j as isize + o as isize - rv).clamp(0, nv as isize - 1) as usize;
                    acc += w * tmp[self.grid.index(i, jj)];
                }
                out[self.grid.index(i, j)] = acc;
            }
        }
        Field2 {
            grid: self.grid,
            values: out,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_stacked(path, &self.grid, &[&self.values])
    }

    /// 8-bit binary PGM, `round(255 * clamp(v, 0, 1))`, first row = `j = 0`.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let [nu, nv] = self.grid.dims;
        let mut bytes = format!("P5\n{nu} {nv}\n255\n").into_bytes();
        for j in 0..nv {
            for i in 0..nu {
                bytes.push((255.0 * self.at(i, j).clamp(0.0, 1.0)).round() as u8);
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Write `components` stacked fields sharing one grid under a single header.
pub fn write_stacked(path: &Path, grid: &Grid2, components: &[&[f64]]) -> Result<()> {
    let mut kv = KeyValues::new();
    grid.write_header(&mut kv);
    if components.len() != 1 {
        kv.set("components", components.len());
    }
    kv.set("dtype", Dtype::F64.name());
    let payload = io::default_payload_name(path);
    kv.set("data", &payload);
    kv.write(path)?;
    let mut all = Vec::with_capacity(grid.len() * components.len());
    for c in components {
        if c.len() != grid.len() {
            return Err(Error::dims(grid.len(), c.len()));
        }
        all.extend_from_slice(c);
    }
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    io::write_raw(&base.join(payload), Dtype::F64, &all)
}

/// Read a header written by [`write_stacked`]; returns the grid and one
/// vector per component.
pub fn read_stacked(path: &Path) -> Result<(Grid2, Vec<Vec<f64>>)> {
    io::ensure_exists(path)?;
    let kv = KeyValues::read(path)?;
    let grid = Grid2::read_header(&kv)?;
    let components: usize = kv.parse_value("components")?.unwrap_or(1);
    if components == 0 {
        return Err(kv.error("components must be positive".into()));
    }
    let dtype: Dtype = kv
        .require_value::<String>("dtype")?
        .parse()
        .map_err(|_| kv.error("dtype must be uint8, float32 or float64".into()))?;
    let values = io::read_raw(
        &io::payload_path(path, &kv)?,
        dtype,
        grid.len() * components,
    )?;
    let parts = values.chunks(grid.len()).map(<[f64]>::to_vec).collect();
    Ok((grid, parts))
}

pub fn load_field2(path: &Path) -> Result<Field2> {
    let (grid, mut parts) = read_stacked(path)?;
    if parts.len() != 1 {
        return Err(Error::format(path, "expected a single-component field"));
    }
    Field2::new(grid, parts.remove(0))
}

/// A 2D field whose values lie in `[0, 1]`: the surface classifier on the
/// parameter domain or the image classifier on the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierImage(Field2);

impl ClassifierImage {
    pub fn new(field: Field2) -> Result<Self> {
        if let Some(v) = field.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!(
                "classifier value {v} outside [0, 1]"
            )));
        }
        Ok(Self(field))
    }

    /// Clamp into `[0, 1]` instead of rejecting.
    pub fn saturating(mut field: Field2) -> Self {
        field.values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self(field)
    }

    pub fn zeros(grid: Grid2) -> Self {
        Self(Field2::constant(grid, 0.0))
    }

    pub fn field(&self) -> &Field2 {
        &self.0
    }

    pub fn into_field(self) -> Field2 {
        self.0
    }

    pub fn blurred(&self, sigma: f64) -> Self {
        Self::saturating(self.0.gaussian_blur(sigma))
    }
}

impl Deref for ClassifierImage {
    type Target = Field2;

    fn deref(&self) -> &Field2 {
        &self.0
    }
}

pub fn load_classifier(path: &Path) -> Result<ClassifierImage> {
    ClassifierImage::new(load_field2(path)?)
}
