//! Graph surfaces `{(x, z(x)) : x in ω}` over a rectangular parameter domain.
//!
//! A [`Frame`] places the local coordinates `(x1, x2, height)` in the world.
//! Heights are extracted from a signed distance function by marching down
//! the height axis and taking the first outside-to-inside crossing, which
//! keeps the outermost sheet and makes the graph single-valued.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::field2::{read_stacked, write_stacked, Field2, Grid2};
use crate::io::{self, KeyValues};
use crate::volume::ScalarField3;

/// Orthonormal frame: world = origin + x1 e1 + x2 e2 + height e3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: [f64; 3],
    pub axes: [[f64; 3]; 3],
}

impl Default for Frame {
    fn default() -> Self {
        Self::identity()
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Frame {
    pub fn identity() -> Self {
        Self {
            origin: [0.0; 3],
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn new(origin: [f64; 3], axes: [[f64; 3]; 3]) -> Result<Self> {
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { 1.0 } else { 0.0 };
                if (dot(axes[a], axes[b]) - expected).abs() > 1e-10 {
                    return Err(Error::Invalid(format!("frame axes are not orthonormal: {axes:?}")));
                }
            }
        }
        Ok(Self { origin, axes })
    }

    /// Frame whose height axis points towards a camera with world-to-camera
    /// rotation `rotation` (i.e. against the optical axis).
    pub fn facing_camera(origin: [f64; 3], rotation: &[[f64; 3]; 3]) -> Self {
        let r = rotation;
        Self {
            origin,
            axes: [
                r[0],
                [-r[1][0], -r[1][1], -r[1][2]],
                [-r[2][0], -r[2][1], -r[2][2]],
            ],
        }
    }

    #[inline]
    pub fn to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for (a, axis) in self.axes.iter().enumerate() {
            for c in 0..3 {
                w[c] += local[a] * axis[c];
            }
        }
        w
    }

    #[inline]
    pub fn to_local(&self, world: [f64; 3]) -> [f64; 3] {
        let d = [
            world[0] - self.origin[0],
            world[1] - self.origin[1],
            world[2] - self.origin[2],
        ];
        [dot(d, self.axes[0]), dot(d, self.axes[1]), dot(d, self.axes[2])]
    }
}

/// Axis-aligned rectangle in parameter coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSurface {
    pub grid: Grid2,
    pub z: Vec<f64>,
    pub frame: Frame,
}

impl GraphSurface {
    pub fn new(grid: Grid2, z: Vec<f64>, frame: Frame) -> Result<Self> {
        if z.len() != grid.len() {
            return Err(Error::dims(grid.len(), z.len()));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite height at node {i}")));
        }
        Ok(Self { grid, z, frame })
    }

    pub fn from_fn(grid: Grid2, frame: Frame, height: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let z = Field2::from_fn(grid, height).values;
        Self::new(grid, z, frame)
    }

    /// Constant-height surface in the identity frame.
    pub fn flat(dims: [usize; 2], spacing: [f64; 2], origin: [f64; 2], height: f64) -> Self {
        let grid = Grid2::new(dims, spacing, origin).expect("valid flat grid");
        Self {
            grid,
            z: vec![height; grid.len()],
            frame: Frame::identity(),
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    #[inline]
    pub fn height(&self, i: usize, j: usize) -> f64 {
        self.z[self.grid.index(i, j)]
    }

    /// `(x1, x2, z)` at a node.
    #[inline]
    pub fn local_point(&self, i: usize, j: usize) -> [f64; 3] {
        let p = self.grid.position(i, j);
        [p[0], p[1], self.height(i, j)]
    }

    #[inline]
    pub fn world_point(&self, i: usize, j: usize) -> [f64; 3] {
        self.frame.to_world(self.local_point(i, j))
    }

    pub fn height_field(&self) -> Field2 {
        Field2 {
            grid: self.grid,
            values: self.z.clone(),
        }
    }

    /// Write the heights in the field format and a `.frame` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_stacked(path, &self.grid, &[&self.z])?;
        let mut kv = KeyValues::new();
        kv.set("frame_origin", io::join(&self.frame.origin));
        for (a, axis) in self.frame.axes.iter().enumerate() {
            kv.set(&format!("frame_e{}", a + 1), io::join(axis));
        }
        kv.set("omega_dims", io::join(&self.grid.dims));
        kv.set("omega_spacing", io::join(&self.grid.spacing));
        kv.set("omega_origin", io::join(&self.grid.origin));
        kv.write(&frame_sidecar(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (grid, mut parts) = read_stacked(path)?;
        if parts.len() != 1 {
            return Err(Error::format(path, "surface file must hold one component"));
        }
        let sidecar = frame_sidecar(path);
        let frame = if sidecar.exists() {
            let kv = KeyValues::read(&sidecar)?;
            let v3 = |key: &str| -> Result<[f64; 3]> {
                let v: Vec<f64> = kv.require_list(key, 3)?;
                Ok([v[0], v[1], v[2]])
            };
            Frame::new(
                v3("frame_origin")?,
                [v3("frame_e1")?, v3("frame_e2")?, v3("frame_e3")?],
            )?
        } else {
            Frame::identity()
        };
        Self::new(grid, parts.remove(0), frame)
    }
}

pub fn frame_sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("frame")
}

/// Parameter interval `[t_lo, t_hi]` of `origin + t dir` inside the box.
fn clip_ray(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - origin[a]) / dir[a];
        let tb = (hi[a] - origin[a]) / dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Extract heights over `region` sampled with `dims` nodes.
pub fn extract_graph(
    sdf: &ScalarField3,
    region: Rect,
    frame: Frame,
    dims: [usize; 2],
) -> Result<GraphSurface> {
    let spacing = [
        (region.max[0] - region.min[0]) / (dims[0].max(2) - 1) as f64,
        (region.max[1] - region.min[1]) / (dims[1].max(2) - 1) as f64,
    ];
    let grid = Grid2::new(dims, spacing, region.min)?;
    let h = sdf.grid.spacing;
    let step = 0.5 * h;
    let lo = sdf.grid.origin;
    let hi = sdf.grid.upper();
    let mut z = vec![0.0; grid.len()];
    let mut failed = Vec::new();
    for j in 0..dims[1] {
        for i in 0..dims[0] {
            let p = grid.position(i, j);
            let base = frame.to_world([p[0], p[1], 0.0]);
            let found = clip_ray(base, frame.axes[2], lo, hi).and_then(|(t_lo, t_hi)| {
                let at = |t: f64| {
                    sdf.sample_clamped([
                        base[0] + t * frame.axes[2][0],
                        base[1] + t * frame.axes[2][1],
                        base[2] + t * frame.axes[2][2],
                    ])
                };
                let mut t_prev = t_hi;
                let mut d_prev = at(t_prev);
                let mut k = 1usize;
                loop {
                    let t = (t_hi - k as f64 * step).max(t_lo);
                    let d = at(t);
                    if d_prev > 0.0 && d <= 0.0 {
                        return Some(t_prev + d_prev * (t - t_prev) / (d_prev - d));
                    }
                    if t <= t_lo {
                        return None;
                    }
                    t_prev = t;
                    d_prev = d;
                    k += 1;
                }
            });
            match found {
                Some(t) => z[grid.index(i, j)] = t,
                None => failed.push((i, j)),
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::RayMiss { nodes: failed });
    }
    GraphSurface::new(grid, z, frame)
}

/// Area element `sqrt(1 + |∇z|^2)` with central differences inside and
/// one-sided differences on the boundary.
pub fn area_element(surface: &GraphSurface) -> Field2 {
    let grid = surface.grid;
    let [nu, nv] = grid.dims;
    let [hx, hy] = grid.spacing;
    let diff = |n: usize, c: usize, h: f64, at: &dyn Fn(usize) -> f64| -> f64 {
        if c == 0 {
            (at(1) - at(0)) / h
        } else if c + 1 == n {
            (at(c) - at(c - 1)) / h
        } else {
            (at(c + 1) - at(c - 1)) / (2.0 * h)
        }
    };
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..nv {
        for i in 0..nu {
            let zx = diff(nu, i, hx, &|ii| surface.height(ii, j));
            let zy = diff(nv, j, hy, &|jj| surface.height(i, jj));
            values.push((1.0 + zx * zx + zy * zy).sqrt());
        }
    }
    Field2 { grid, values }
}

/// Discrete Laplacian `Δz = -M^-1 L z` of the heights, the operator the
/// bending energy uses.
pub fn laplacian_z(surface: &GraphSurface, ops: &FemOperators) -> Result<Vec<f64>> {
    if ops.grid != surface.grid {
        return Err(Error::dims(ops.grid.dims, surface.grid.dims));
    }
    let mut w = ops.discrete_laplacian(&surface.z)?;
    w.iter_mut().for_each(|v| *v = -*v);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid3;

    #[test]
    fn frame_round_trip() {
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        let frame = Frame::new([1.0, 2.0, 3.0], [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
            .unwrap();
        let p = [0.7, -1.2, 4.0];
        let back = frame.to_local(frame.to_world(p));
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-14);
        }
        assert!(Frame::new([0.0; 3], [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn half_space_height_is_exact() {
        let g = Grid3::new([16, 16, 16], 1.0, [0.0; 3]).unwrap();
        let c = 7.3;
        let sdf = ScalarField3::from_fn(g, |p| p[2] - c).unwrap();
        let region = Rect {
            min: [2.0, 2.0],
            max: [12.0, 12.0],
        };
        let surf = extract_graph(&sdf, region, Frame::identity(), [11, 11]).unwrap();
        assert!(surf.z.iter().all(|z| (z - c).abs() < 1e-3));
    }

    #[test]
    fn sphere_cap_matches_analytic_heights() {
        let n = 64;
        let g = Grid3::new([n, n, n], 1.0, [-31.5, -31.5, -31.5]).unwrap();
        let r = 20.0;
        let sdf = ScalarField3::from_fn(g, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r)
            .unwrap();
        let region = Rect {
            min: [-6.0, -6.0],
            max: [6.0, 6.0],
        };
        let surf = extract_graph(&sdf, region, Frame::identity(), [25, 25]).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..25 {
            for i in 0..25 {
                let [x, y, z] = surf.local_point(i, j);
                worst = worst.max((z - (r * r - x * x - y * y).sqrt()).abs());
            }
        }
        assert!(worst <= 0.05, "max height error {worst}");
    }

    #[test]
    fn missing_crossing_lists_nodes() {
        let g = Grid3::new([10, 10, 10], 1.0, [0.0; 3]).unwrap();
        // Ball of radius 2 at the centre: most rays miss it.
        let sdf = ScalarField3::from_fn(g, |p| {
            ((p[0] - 4.5).powi(2) + (p[1] - 4.5).powi(2) + (p[2] - 4.5).powi(2)).sqrt() - 2.0
        })
        .unwrap();
        let region = Rect {
            min: [0.0, 0.0],
            max: [9.0, 9.0],
        };
        match extract_graph(&sdf, region, Frame::identity(), [10, 10]) {
            Err(Error::RayMiss { nodes }) => {
                assert_eq!(nodes[0], (0, 0));
                assert!(!nodes.contains(&(4, 4)));
            }
            other => panic!("expected ray miss, got {other:?}"),
        }
    }

    #[test]
    fn area_element_of_flat_and_ramp() {
        let flat = GraphSurface::flat([6, 6], [1.0, 1.0], [0.0, 0.0], 2.0);
        assert!(area_element(&flat).values.iter().all(|&a| a == 1.0));
        let grid = Grid2::new([7, 5], [0.5, 0.5], [0.0, 0.0]).unwrap();
        let ramp = GraphSurface::from_fn(grid, Frame::identity(), |p| 2.0 * p[0]).unwrap();
        for a in area_element(&ramp).values {
            assert!((a - 5f64.sqrt()).abs() < 1e-12);
            assert!((a - 2.2360680).abs() < 1e-7);
        }
    }

    #[test]
    fn area_element_converges_for_sine() {
        let err = |n: usize| {
            let h = std::f64::consts::PI / (n - 1) as f64;
            let grid = Grid2::new([n, 4], [h, h], [0.0, 0.0]).unwrap();
            let s = GraphSurface::from_fn(grid, Frame::identity(), |p| p[0].sin()).unwrap();
            let a = area_element(&s);
            (1..n - 1)
                .map(|i| {
                    let x = grid.position(i, 1)[0];
                    (a.at(i, 1) - (1.0 + x.cos().powi(2)).sqrt()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(33), err(65));
        assert!(coarse < 2e-3);
        // Second order: halving the spacing cuts the error about four times.
        assert!(coarse / fine > 3.5, "{coarse} {fine}");
    }

    #[test]
    fn laplacian_of_paraboloid_is_four() {
        let grid = Grid2::new([17, 17], [0.25, 0.25], [-2.0, -2.0]).unwrap();
        let s = GraphSurface::from_fn(grid, Frame::identity(), |p| p[0] * p[0] + p[1] * p[1])
            .unwrap();
        let ops = FemOperators::assemble(&grid).unwrap();
        let lap = laplacian_z(&s, &ops).unwrap();
        for (idx, v) in lap.iter().enumerate() {
            if !ops.is_boundary(idx) {
                assert!((v - 4.0).abs() < 1e-10, "{v}");
            }
        }
        // Same values as direct matrix application.
        let direct = ops.stiffness.matvec(&s.z);
        for (idx, v) in lap.iter().enumerate() {
            assert!((v + direct[idx] / ops.mass[idx]).abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_of_constant_and_linear() {
        let grid = Grid2::new([9, 9], [1.0, 1.0], [0.0, 0.0]).unwrap();
        let ops = FemOperators::assemble(&grid).unwrap();
        let flat = GraphSurface::flat([9, 9], [1.0, 1.0], [0.0, 0.0], 3.0);
        assert!(laplacian_z(&flat, &ops).unwrap().iter().all(|&v| v == 0.0));
        let lin = GraphSurface::from_fn(grid, Frame::identity(), |p| 0.3 * p[0] - 1.7 * p[1])
            .unwrap();
        for (idx, v) in laplacian_z(&lin, &ops).unwrap().iter().enumerate() {
            if !ops.is_boundary(idx) {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn surface_round_trip_with_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.hdr");
        let grid = Grid2::new([4, 3], [0.5, 0.5], [1.0, 1.0]).unwrap();
        let frame = Frame::facing_camera([0.0, 0.0, 10.0], &[[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]);
        let s = GraphSurface::from_fn(grid, frame, |p| p[0] * p[1]).unwrap();
        s.write(&path).unwrap();
        assert_eq!(GraphSurface::load(&path).unwrap(), s);
    }
}
