//! Regular 3D grids: scalar fields (signed distances, volumetric classifiers)
//! and binary masks, with file I/O and trilinear sampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{self, Dtype, KeyValues};

/// Geometry of an isotropic node-centred 3D grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid3 {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
}

impl Grid3 {
    pub fn new(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::Invalid(format!(
                "grid needs at least 2 nodes per axis, got {dims:?}"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Invalid(format!("grid spacing must be positive, got {spacing}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Invalid("grid origin must be finite".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
            self.origin[2] + k as f64 * self.spacing,
        ]
    }

    /// Upper corner of the bounding box.
    pub fn upper(&self) -> [f64; 3] {
        let mut u = self.origin;
        for (a, ua) in u.iter_mut().enumerate() {
            *ua += (self.dims[a] - 1) as f64 * self.spacing;
        }
        u
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let tol = 1e-9 * self.spacing;
        let upper = self.upper();
        (0..3).all(|a| p[a] >= self.origin[a] - tol && p[a] <= upper[a] + tol)
    }

    pub fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        let upper = self.upper();
        [
            p[0].clamp(self.origin[0], upper[0]),
            p[1].clamp(self.origin[1], upper[1]),
            p[2].clamp(self.origin[2], upper[2]),
        ]
    }

    fn write_header(&self, kv: &mut KeyValues) {
        kv.set("dims", io::join(&self.dims));
        kv.set("spacing", self.spacing);
        kv.set("origin", io::join(&self.origin));
    }

    fn read_header(kv: &KeyValues) -> Result<Self> {
        let dims: Vec<usize> = kv.require_list("dims", 3)?;
        let spacing: Vec<f64> = kv
            .parse_list("spacing")?
            .ok_or_else(|| kv.error("missing key \"spacing\"".into()))?;
        let spacing = match spacing.as_slice() {
            [h] => *h,
            [hx, hy, hz] if hx == hy && hy == hz => *hx,
            [_, _, _] => {
                return Err(Error::Invalid(format!(
                    "anisotropic spacing {spacing:?} is not supported"
                )))
            }
            _ => return Err(kv.error("spacing needs 1 or 3 entries".into())),
        };
        let origin: Vec<f64> = kv
            .parse_list("origin")?
            .unwrap_or_else(|| vec![0.0; 3]);
        if origin.len() != 3 {
            return Err(kv.error("origin needs 3 entries".into()));
        }
        Grid3::new(
            [dims[0], dims[1], dims[2]],
            spacing,
            [origin[0], origin[1], origin[2]],
        )
    }
}

/// Scalar values on a [`Grid3`], x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField3 {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl ScalarField3 {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dims(grid.len(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite field value at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Sample `f` at every node.
    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    values.push(f(grid.position(i, j, k)));
                }
            }
        }
        Self::new(grid, values)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Trilinear interpolation; fails outside the bounding box.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> Result<f64> {
        if !self.grid.contains(p) {
            return Err(Error::OutOfDomain(p));
        }
        Ok(self.sample_clamped(p))
    }

    /// Trilinear interpolation with coordinates clamped to the bounding box.
    #[inline]
    pub fn sample_clamped(&self, p: [f64; 3]) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let s = ((p[a] - g.origin[a]) / g.spacing).clamp(0.0, (g.dims[a] - 1) as f64);
            let i0 = (s.floor() as usize).min(g.dims[a] - 2);
            base[a] = i0;
            t[a] = s - i0 as f64;
        }
        let [i, j, k] = base;
        let lerp = |a: f64, b: f64, w: f64| a + (b - a) * w;
        let c00 = lerp(self.at(i, j, k), self.at(i + 1, j, k), t[0]);
        let c10 = lerp(self.at(i, j + 1, k), self.at(i + 1, j + 1, k), t[0]);
        let c01 = lerp(self.at(i, j, k + 1), self.at(i + 1, j, k + 1), t[0]);
        let c11 = lerp(self.at(i, j + 1, k + 1), self.at(i + 1, j + 1, k + 1), t[0]);
        lerp(lerp(c00, c10, t[1]), lerp(c01, c11, t[1]), t[2])
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Write `path` (header) and its raw payload next to it.
    pub fn write(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let mut kv = KeyValues::new();
        self.grid.write_header(&mut kv);
        kv.set("dtype", dtype.name());
        let payload = io::default_payload_name(path);
        kv.set("data", &payload);
        kv.write(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        io::write_raw(&base.join(payload), dtype, &self.values)
    }
}

/// Load a scalar volume from a header file.
pub fn load_volume(path: &Path) -> Result<ScalarField3> {
    io::ensure_exists(path)?;
    let kv = KeyValues::read(path)?;
    let grid = Grid3::read_header(&kv)?;
    let dtype: Dtype = kv
        .require_value::<String>("dtype")?
        .parse()
        .map_err(|_| kv.error("dtype must be uint8, float32 or float64".into()))?;
    let values = io::read_raw(&io::payload_path(path, &kv)?, dtype, grid.len())?;
    ScalarField3::new(grid, values)
}

pub fn write_volume(field: &ScalarField3, path: &Path) -> Result<()> {
    field.write(path, Dtype::F64)
}

/// Inside/outside membership on a [`Grid3`]; `true` marks the object.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask3 {
    pub grid: Grid3,
    pub values: Vec<bool>,
}

impl BinaryMask3 {
    pub fn new(grid: Grid3, values: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dims(grid.len(), values.len()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid3, inside: impl Fn([f64; 3]) -> bool) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    values.push(inside(grid.position(i, j, k)));
                }
            }
        }
        Self { grid, values }
    }

    /// Threshold `d < 0` into a mask.
    pub fn from_sdf(sdf: &ScalarField3) -> Self {
        Self {
            grid: sdf.grid,
            values: sdf.values.iter().map(|&d| d < 0.0).collect(),
        }
    }

    pub fn count_inside(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let field = ScalarField3 {
            grid: self.grid,
            values: self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        };
        field.write(path, Dtype::U8)
    }
}

/// Load a `uint8` mask with 0/1 values.
pub fn load_mask(path: &Path) -> Result<BinaryMask3> {
    io::ensure_exists(path)?;
    let kv = KeyValues::read(path)?;
    if kv.get("dtype") != Some("uint8") {
        return Err(kv.error("mask files must use dtype=uint8".into()));
    }
    let field = load_volume(path)?;
    let mut values = Vec::with_capacity(field.values.len());
    for (i, &v) in field.values.iter().enumerate() {
        match v as u8 {
            0 => values.push(false),
            1 => values.push(true),
            other => {
                return Err(kv.error(format!("mask value {other} at index {i} is not 0/1")))
            }
        }
    }
    BinaryMask3::new(field.grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid3 {
        Grid3::new([n, n, n], 1.0, [0.0; 3]).unwrap()
    }

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.hdr");
        write_volume(&ScalarField3::zeros(grid(4)), &path).unwrap();
        let loaded = load_volume(&path).unwrap();
        assert_eq!(loaded.grid.dims, [4, 4, 4]);
        assert_eq!(loaded.values, vec![0.0; 64]);
    }

    #[test]
    fn short_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.hdr");
        std::fs::write(&path, "dims=4,4,4\nspacing=1\ndtype=float64\ndata=v.raw\n").unwrap();
        io::write_raw(&dir.path().join("v.raw"), Dtype::F64, &[0.0; 63]).unwrap();
        let err = load_volume(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_volume(Path::new("/nonexistent/volume.hdr")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn anisotropic_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.hdr");
        std::fs::write(&path, "dims=2,2,2\nspacing=1,1,2\ndtype=uint8\ndata=v.raw\n").unwrap();
        io::write_raw(&dir.path().join("v.raw"), Dtype::U8, &[0.0; 8]).unwrap();
        assert!(load_volume(&path).is_err());
    }

    #[test]
    fn random_field_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid3::new([5, 6, 7], 0.5, [-1.0, 2.0, 0.25]).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let field = ScalarField3::new(g, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.hdr");
        write_volume(&field, &path).unwrap();
        let loaded = load_volume(&path).unwrap();
        assert_eq!(loaded.grid, field.grid);
        let same = loaded
            .values
            .iter()
            .zip(&field.values)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn mask_round_trip() {
        let g = grid(6);
        let mask = BinaryMask3::from_fn(g, |p| p[2] < 2.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hdr");
        mask.write(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn node_samples_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = grid(5);
        let values: Vec<f64> = (0..g.len()).map(|_| rng.gen()).collect();
        let field = ScalarField3::new(g, values).unwrap();
        for (i, j, k) in [(0, 0, 0), (4, 4, 4), (2, 3, 1), (4, 0, 2)] {
            let v = field.sample_trilinear(g.position(i, j, k)).unwrap();
            assert_eq!(v, field.at(i, j, k));
        }
    }

    #[test]
    fn affine_fields_are_reproduced() {
        let g = Grid3::new([6, 5, 7], 0.5, [1.0, -1.0, 0.0]).unwrap();
        let affine = |p: [f64; 3]| 2.0 * p[0] + 3.0 * p[1] - p[2] + 1.0;
        let field = ScalarField3::from_fn(g, affine).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let upper = g.upper();
        for _ in 0..200 {
            let p = [0, 1, 2].map(|a| rng.gen_range(g.origin[a]..upper[a]));
            let v = field.sample_trilinear(p).unwrap();
            assert!((v - affine(p)).abs() < 1e-12, "{v} vs {}", affine(p));
        }
    }

    #[test]
    fn matches_eight_corner_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(6);
        let values: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = ScalarField3::new(g, values).unwrap();
        for _ in 0..200 {
            let p = [0, 1, 2].map(|_| rng.gen_range(0.0..5.0));
            let base = p.map(|x: f64| (x.floor() as usize).min(4));
            let frac = [0, 1, 2].map(|a| p[a] - base[a] as f64);
            let mut expected = 0.0;
            for corner in 0..8 {
                let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let weight: f64 = (0..3)
                    .map(|a| if off[a] == 1 { frac[a] } else { 1.0 - frac[a] })
                    .product();
                expected +=
                    weight * field.at(base[0] + off[0], base[1] + off[1], base[2] + off[2]);
            }
            let v = field.sample_trilinear(p).unwrap();
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_point_is_rejected() {
        let field = ScalarField3::zeros(grid(4));
        assert!(matches!(
            field.sample_trilinear([3.5, 1.0, 1.0]),
            Err(Error::OutOfDomain(_))
        ));
        assert!(field.sample_trilinear([-0.01, 1.0, 1.0]).is_err());
    }
}
