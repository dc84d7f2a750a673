//! Pinhole and orthographic projections onto the image plane, their
//! Jacobians, and a self-occlusion check for projected graph surfaces.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::GraphSurface;
use crate::io::{self, KeyValues};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Perspective { fu: f64, fv: f64, cu: f64, cv: f64 },
    Orthographic { su: f64, sv: f64, cu: f64, cv: f64 },
}

/// World-to-image projection. `rotation` and `translation` map world points
/// into the camera frame, whose `+z` axis is the viewing direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub projection: Projection,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

pub type Jacobian = [[f64; 3]; 2];

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Camera {
    pub fn new(
        projection: Projection,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..3).map(|c| rotation[a][c] * rotation[b][c]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                if (d - expected).abs() > 1e-10 {
                    return Err(Error::Invalid("camera rotation is not orthonormal".into()));
                }
            }
        }
        match projection {
            Projection::Perspective { fu, fv, .. } if !(fu > 0.0 && fv > 0.0) => {
                return Err(Error::Invalid("focal lengths must be positive".into()))
            }
            Projection::Orthographic { su, sv, .. } if su == 0.0 || sv == 0.0 => {
                return Err(Error::Invalid("orthographic scales must be non-zero".into()))
            }
            _ => {}
        }
        if width == 0 || height == 0 {
            return Err(Error::Invalid("image size must be positive".into()));
        }
        Ok(Self {
            projection,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Orthographic camera with identity extrinsics.
    pub fn orthographic(su: f64, sv: f64, cu: f64, cv: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            Projection::Orthographic { su, sv, cu, cv },
            IDENTITY,
            [0.0; 3],
            width,
            height,
        )
    }

    /// Perspective camera with identity extrinsics.
    pub fn perspective(fu: f64, fv: f64, cu: f64, cv: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            Projection::Perspective { fu, fv, cu, cv },
            IDENTITY,
            [0.0; 3],
            width,
            height,
        )
    }

    pub fn with_extrinsics(mut self, rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        self.rotation = rotation;
        self.translation = translation;
        Self::new(self.projection, rotation, translation, self.width, self.height)
    }

    #[inline]
    pub fn to_camera(&self, x: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * x[0] + r[0][1] * x[1] + r[0][2] * x[2] + t[0],
            r[1][0] * x[0] + r[1][1] * x[1] + r[1][2] * x[2] + t[1],
            r[2][0] * x[0] + r[2][1] * x[1] + r[2][2] * x[2] + t[2],
        ]
    }

    /// Camera-frame depth of a world point.
    pub fn depth(&self, x: [f64; 3]) -> f64 {
        self.to_camera(x)[2]
    }

    pub fn project(&self, x: [f64; 3]) -> Result<[f64; 2]> {
        let c = self.to_camera(x);
        match self.projection {
            Projection::Perspective { fu, fv, cu, cv } => {
                if c[2] <= 0.0 {
                    return Err(Error::BehindCamera(c[2]));
                }
                Ok([fu * c[0] / c[2] + cu, fv * c[1] / c[2] + cv])
            }
            Projection::Orthographic { su, sv, cu, cv } => Ok([su * c[0] + cu, sv * c[1] + cv]),
        }
    }

    pub fn jacobian(&self, x: [f64; 3]) -> Result<Jacobian> {
        self.project_with_jacobian(x).map(|(_, j)| j)
    }

    /// Projection and its derivative with respect to the world point.
    #[inline]
    pub fn project_with_jacobian(&self, x: [f64; 3]) -> Result<([f64; 2], Jacobian)> {
        let c = self.to_camera(x);
        let r = &self.rotation;
        match self.projection {
            Projection::Perspective { fu, fv, cu, cv } => {
                if c[2] <= 0.0 {
                    return Err(Error::BehindCamera(c[2]));
                }
                let iz = 1.0 / c[2];
                let iz2 = iz * iz;
                let mut jac = [[0.0; 3]; 2];
                for k in 0..3 {
                    jac[0][k] = fu * (r[0][k] * c[2] - c[0] * r[2][k]) * iz2;
                    jac[1][k] = fv * (r[1][k] * c[2] - c[1] * r[2][k]) * iz2;
                }
                Ok(([fu * c[0] * iz + cu, fv * c[1] * iz + cv], jac))
            }
            Projection::Orthographic { su, sv, cu, cv } => Ok((
                [su * c[0] + cu, sv * c[1] + cv],
                [
                    [su * r[0][0], su * r[0][1], su * r[0][2]],
                    [sv * r[1][0], sv * r[1][1], sv * r[1][2]],
                ],
            )),
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let flat: Vec<f64> = self.rotation.iter().flatten().copied().collect();
        match self.projection {
            Projection::Perspective { fu, fv, cu, cv } => {
                kv.set("mode", "perspective");
                kv.set("rotation", io::join(&flat));
                kv.set("translation", io::join(&self.translation));
                kv.set("fu", fu);
                kv.set("fv", fv);
                kv.set("cu", cu);
                kv.set("cv", cv);
            }
            Projection::Orthographic { su, sv, cu, cv } => {
                kv.set("mode", "orthographic");
                kv.set("rotation", io::join(&flat));
                kv.set("translation", io::join(&self.translation));
                kv.set("su", su);
                kv.set("sv", sv);
                kv.set("cu", cu);
                kv.set("cv", cv);
            }
        }
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let rot: Vec<f64> = kv.require_list("rotation", 9)?;
        let rotation = [
            [rot[0], rot[1], rot[2]],
            [rot[3], rot[4], rot[5]],
            [rot[6], rot[7], rot[8]],
        ];
        let t: Vec<f64> = kv.require_list("translation", 3)?;
        let cu = kv.require_value("cu")?;
        let cv = kv.require_value("cv")?;
        let projection = match kv.require("mode")? {
            "perspective" => Projection::Perspective {
                fu: kv.require_value("fu")?,
                fv: kv.require_value("fv")?,
                cu,
                cv,
            },
            "orthographic" => Projection::Orthographic {
                su: kv.require_value("su")?,
                sv: kv.require_value("sv")?,
                cu,
                cv,
            },
            other => return Err(kv.error(format!("unknown camera mode {other:?}"))),
        };
        Self::new(
            projection,
            rotation,
            [t[0], t[1], t[2]],
            kv.require_value("width")?,
            kv.require_value("height")?,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::ensure_exists(path)?;
        Self::from_kv(&KeyValues::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }
}

/// Outcome of [`check_no_self_occlusion`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OcclusionReport {
    pub injective: bool,
    /// Nodes of folded or occluded cells, sorted and deduplicated.
    pub nodes: Vec<(usize, usize)>,
}

pub fn check_no_self_occlusion(surface: &GraphSurface, cam: &Camera) -> OcclusionReport {
    let points: Vec<[f64; 3]> = (0..surface.len())
        .map(|idx| {
            let [i, j] = surface.grid.coords(idx);
            surface.world_point(i, j)
        })
        .collect();
    check_points_no_self_occlusion(surface.grid.dims, &points, cam)
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Occlusion check on a node grid of world points (x-fastest). A cell is
/// reported when its projection is folded against the majority orientation,
/// or when it lies behind a non-adjacent cell covering the same sample of a
/// raster whose pitch is half the median projected edge length.
pub fn check_points_no_self_occlusion(
    dims: [usize; 2],
    points: &[[f64; 3]],
    cam: &Camera,
) -> OcclusionReport {
    let [nu, nv] = dims;
    let idx = |i: usize, j: usize| i + nu * j;
    let mut bad = vec![false; points.len()];
    let mut proj = vec![[0.0; 2]; points.len()];
    let mut depth = vec![0.0; points.len()];
    for (k, p) in points.iter().enumerate() {
        match cam.project(*p) {
            Ok(uv) => proj[k] = uv,
            Err(_) => bad[k] = true,
        }
        depth[k] = cam.depth(*p);
    }

    let cells: Vec<(usize, usize)> = (0..nv - 1)
        .flat_map(|j| (0..nu - 1).map(move |i| (i, j)))
        .collect();
    let corners = |i: usize, j: usize| [idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)];
    let triangles = |c: [usize; 4]| [[c[0], c[1], c[2]], [c[0], c[2], c[3]]];

    let total: f64 = cells
        .iter()
        .flat_map(|&(i, j)| triangles(corners(i, j)))
        .map(|t| signed_area(proj[t[0]], proj[t[1]], proj[t[2]]))
        .sum();
    let orientation = if total >= 0.0 { 1.0 } else { -1.0 };

    let flag_cell = |bad: &mut Vec<bool>, i: usize, j: usize| {
        for k in corners(i, j) {
            bad[k] = true;
        }
    };
    for &(i, j) in &cells {
        let folded = triangles(corners(i, j))
            .iter()
            .any(|t| orientation * signed_area(proj[t[0]], proj[t[1]], proj[t[2]]) <= 0.0);
        if folded {
            flag_cell(&mut bad, i, j);
        }
    }

    let mut edges: Vec<f64> = cells
        .iter()
        .flat_map(|&(i, j)| {
            let c = corners(i, j);
            [(c[0], c[1]), (c[0], c[3])]
        })
        .map(|(a, b)| ((proj[a][0] - proj[b][0]).powi(2) + (proj[a][1] - proj[b][1]).powi(2)).sqrt())
        .filter(|l| *l > 0.0)
        .collect();
    if !edges.is_empty() {
        edges.sort_by(f64::total_cmp);
        let median = edges[edges.len() / 2];
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &proj {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut pitch = 0.5 * median;
        let samples = |pitch: f64| {
            (((hi[0] - lo[0]) / pitch) as usize + 2) * (((hi[1] - lo[1]) / pitch) as usize + 2)
        };
        while samples(pitch) > 8_000_000 {
            pitch *= 1.5;
        }
        let su = ((hi[0] - lo[0]) / pitch) as usize + 2;
        let sv = ((hi[1] - lo[1]) / pitch) as usize + 2;
        let mut cover: Vec<Option<(u32, f64)>> = vec![None; su * sv];
        for (cell_id, &(i, j)) in cells.iter().enumerate() {
            for t in triangles(corners(i, j)) {
                let [a, b, c] = [proj[t[0]], proj[t[1]], proj[t[2]]];
                let area = signed_area(a, b, c);
                if area.abs() < 1e-300 {
                    continue;
                }
                let x0 = ((a[0].min(b[0]).min(c[0]) - lo[0]) / pitch).floor().max(0.0) as usize;
                let x1 = (((a[0].max(b[0]).max(c[0]) - lo[0]) / pitch).ceil() as usize).min(su - 1);
                let y0 = ((a[1].min(b[1]).min(c[1]) - lo[1]) / pitch).floor().max(0.0) as usize;
                let y1 = (((a[1].max(b[1]).max(c[1]) - lo[1]) / pitch).ceil() as usize).min(sv - 1);
                for sy in y0..=y1 {
                    for sx in x0..=x1 {
                        let p = [lo[0] + (sx as f64 + 0.5) * pitch, lo[1] + (sy as f64 + 0.5) * pitch];
                        let w0 = signed_area(b, c, p) / area;
                        let w1 = signed_area(c, a, p) / area;
                        let w2 = 1.0 - w0 - w1;
                        if w0 <= 1e-12 || w1 <= 1e-12 || w2 <= 1e-12 {
                            continue;
                        }
                        let z = w0 * depth[t[0]] + w1 * depth[t[1]] + w2 * depth[t[2]];
                        let slot = &mut cover[sx + su * sy];
                        match *slot {
                            None => *slot = Some((cell_id as u32, z)),
                            Some((other, oz)) => {
                                let (oi, oj) = cells[other as usize];
                                let adjacent = oi.abs_diff(i) <= 1 && oj.abs_diff(j) <= 1;
                                if other as usize != cell_id && !adjacent {
                                    if z > oz {
                                        flag_cell(&mut bad, i, j);
                                    } else {
                                        flag_cell(&mut bad, oi, oj);
                                        *slot = Some((cell_id as u32, z));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let nodes: Vec<(usize, usize)> = bad
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(k, _)| (k % nu, k / nu))
        .collect();
    OcclusionReport {
        injective: nodes.is_empty(),
        nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field2::Grid2;
    use crate::graph::Frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot_xyz(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
        let rx = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rz = [[c.cos(), -c.sin(), 0.0], [c.sin(), c.cos(), 0.0], [0.0, 0.0, 1.0]];
        let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
            let mut r = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    r[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
                }
            }
            r
        };
        mul(rx, mul(ry, rz))
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let cam = Camera::perspective(500.0, 400.0, 250.0, 200.0, 500, 400).unwrap();
        assert_eq!(cam.project([0.0, 0.0, 3.0]).unwrap(), [250.0, 200.0]);
        let j = cam.jacobian([0.0, 0.0, 2.0]).unwrap();
        assert_eq!(j, [[250.0, 0.0, 0.0], [0.0, 200.0, 0.0]]);
    }

    #[test]
    fn perspective_reference_point() {
        let cam = Camera::perspective(500.0, 500.0, 250.0, 250.0, 500, 500).unwrap();
        let uv = cam.project([0.1, -0.2, 0.5]).unwrap();
        assert!((uv[0] - 350.0).abs() < 1e-12 && (uv[1] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = Camera::perspective(1.0, 1.0, 0.0, 0.0, 10, 10).unwrap();
        assert!(matches!(cam.project([0.0, 0.0, -1.0]), Err(Error::BehindCamera(_))));
        assert!(cam.jacobian([0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn orthographic_drops_depth() {
        let cam = Camera::orthographic(1.0, 1.0, 0.0, 0.0, 10, 10).unwrap();
        assert_eq!(cam.project([1.5, -2.0, 7.0]).unwrap(), [1.5, -2.0]);
        assert_eq!(
            cam.jacobian([3.0, 1.0, -4.0]).unwrap(),
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let persp = Camera::perspective(800.0, 780.0, 320.0, 240.0, 640, 480)
            .unwrap()
            .with_extrinsics(rot_xyz(0.2, -0.1, 0.3), [0.1, -0.2, 2.0])
            .unwrap();
        let ortho = Camera::orthographic(2.0, 1.5, 10.0, 20.0, 64, 64)
            .unwrap()
            .with_extrinsics(rot_xyz(-0.4, 0.25, 1.0), [1.0, 2.0, 3.0])
            .unwrap();
        for cam in [persp, ortho] {
            for _ in 0..100 {
                let x = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
                let jac = cam.jacobian(x).unwrap();
                let h = 1e-6;
                for k in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let (up, um) = (cam.project(xp).unwrap(), cam.project(xm).unwrap());
                    for r in 0..2 {
                        let fd = (up[r] - um[r]) / (2.0 * h);
                        let scale = jac[r].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        assert!((fd - jac[r][k]).abs() <= 1e-6 * scale.max(1e-12), "{fd} {}", jac[r][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn projection_is_constant_along_rays() {
        let cam = Camera::perspective(600.0, 600.0, 300.0, 300.0, 600, 600)
            .unwrap()
            .with_extrinsics(rot_xyz(0.3, 0.2, -0.5), [0.5, 0.1, 4.0])
            .unwrap();
        let r = cam.rotation;
        let t = cam.translation;
        // Camera centre in world coordinates: -R^T t.
        let centre = [0, 1, 2].map(|k| -(0..3).map(|i| r[i][k] * t[i]).sum::<f64>());
        let dir = [0.1, -0.2, 0.9];
        let p1 = cam.project([0, 1, 2].map(|k| centre[k] + 1.0 * dir[k])).unwrap();
        let p2 = cam.project([0, 1, 2].map(|k| centre[k] + 3.7 * dir[k])).unwrap();
        assert!((p1[0] - p2[0]).abs() < 1e-9 && (p1[1] - p2[1]).abs() < 1e-9);
    }

    #[test]
    fn camera_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.txt");
        let cam = Camera::perspective(500.0, 510.0, 250.0, 240.0, 500, 480)
            .unwrap()
            .with_extrinsics(rot_xyz(0.1, 0.2, 0.3), [0.0, 0.0, 200.0])
            .unwrap();
        cam.write(&path).unwrap();
        assert_eq!(Camera::load(&path).unwrap(), cam);
    }

    #[test]
    fn flat_graph_seen_from_above_is_injective() {
        let surface = GraphSurface::flat([9, 9], [1.0, 1.0], [-4.0, -4.0], 0.0);
        let down = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        let cam = Camera::perspective(100.0, 100.0, 50.0, 50.0, 100, 100)
            .unwrap()
            .with_extrinsics(down, [0.0, 0.0, 20.0])
            .unwrap();
        let report = check_no_self_occlusion(&surface, &cam);
        assert!(report.injective, "{:?}", report.nodes);
    }

    #[test]
    fn graph_along_its_height_axis_is_injective() {
        let grid = Grid2::new([21, 21], [1.0, 1.0], [0.0, 0.0]).unwrap();
        let s = GraphSurface::from_fn(grid, Frame::identity(), |p| {
            6.0 * (0.3 * p[0]).sin() * (0.2 * p[1]).cos()
        })
        .unwrap();
        let cam = Camera::orthographic(1.0, 1.0, 0.0, 0.0, 32, 32).unwrap();
        assert!(check_no_self_occlusion(&s, &cam).injective);
    }
}
