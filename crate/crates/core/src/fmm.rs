//! First-order fast marching redistancing of binary masks.
//!
//! The interface is placed halfway between voxels of opposite membership
//! (the zero crossing of the linearly interpolated ±½ indicator). Voxels
//! adjacent to the interface are initialised with their distance to the
//! local plane through those crossings; the front then marches outward on
//! both sides with the standard upwind quadratic update. The result is
//! negative inside the object.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3, ScalarField3};

/// Default narrow band half-width in voxels.
pub const DEFAULT_BAND_VOXELS: f64 = 12.0;

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Far,
    Trial,
    Known,
}

#[derive(Clone, Copy)]
struct Entry {
    dist: f64,
    idx: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Min-heap on distance, ties broken by index for a deterministic order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Redistance with the default band of [`DEFAULT_BAND_VOXELS`] voxels.
pub fn redistance_fmm(mask: &BinaryMask3) -> Result<ScalarField3> {
    redistance_fmm_band(mask, Some(DEFAULT_BAND_VOXELS * mask.grid.spacing))
}

/// Redistance `mask`; with `band = Some(w)` marching stops once the front
/// passes `w` and remaining voxels are set to `±w`.
pub fn redistance_fmm_band(mask: &BinaryMask3, band: Option<f64>) -> Result<ScalarField3> {
    let grid = mask.grid;
    let n = grid.len();
    let inside = mask.count_inside();
    if inside == 0 {
        return Err(Error::DegenerateMask("inside"));
    }
    if inside == n {
        return Err(Error::DegenerateMask("outside"));
    }
    let h = grid.spacing;
    let limit = band.unwrap_or(f64::INFINITY);
    let [nx, ny, _] = grid.dims;
    let strides = [1, nx, nx * ny];

    let neighbour = |idx: usize, axis: usize, forward: bool| -> Option<usize> {
        let c = grid.coords(idx)[axis];
        if forward {
            (c + 1 < grid.dims[axis]).then(|| idx + strides[axis])
        } else {
            (c > 0).then(|| idx - strides[axis])
        }
    };

    let mut dist = vec![f64::INFINITY; n];
    let mut state = vec![State::Far; n];

    for idx in 0..n {
        let me = mask.values[idx];
        let mut inv_sq = 0.0;
        for axis in 0..3 {
            let crosses = [false, true]
                .into_iter()
                .filter_map(|fwd| neighbour(idx, axis, fwd))
                .any(|nb| mask.values[nb] != me);
            if crosses {
                let d = 0.5 * h;
                inv_sq += 1.0 / (d * d);
            }
        }
        if inv_sq > 0.0 {
            dist[idx] = 1.0 / inv_sq.sqrt();
            state[idx] = State::Known;
        }
    }

    let mut heap = BinaryHeap::new();
    let update = |idx: usize, dist: &[f64], state: &[State]| -> f64 {
        let mut a = [f64::INFINITY; 3];
        for (axis, slot) in a.iter_mut().enumerate() {
            for fwd in [false, true] {
                if let Some(nb) = neighbour(idx, axis, fwd) {
                    if state[nb] == State::Known {
                        *slot = slot.min(dist[nb]);
                    }
                }
            }
        }
        solve_upwind(a, h)
    };

    let seeds: Vec<usize> = (0..n).filter(|&i| state[i] == State::Known).collect();
    for &idx in &seeds {
        for axis in 0..3 {
            for fwd in [false, true] {
                if let Some(nb) = neighbour(idx, axis, fwd) {
                    if state[nb] != State::Known {
                        let t = update(nb, &dist, &state);
                        if t < dist[nb] {
                            dist[nb] = t;
                            state[nb] = State::Trial;
                            heap.push(Entry { dist: t, idx: nb });
                        }
                    }
                }
            }
        }
    }

    while let Some(Entry { dist: d, idx }) = heap.pop() {
        if state[idx] == State::Known || d > dist[idx] {
            continue;
        }
        if d > limit {
            break;
        }
        state[idx] = State::Known;
        for axis in 0..3 {
            for fwd in [false, true] {
                if let Some(nb) = neighbour(idx, axis, fwd) {
                    if state[nb] != State::Known {
                        let t = update(nb, &dist, &state);
                        if t < dist[nb] {
                            dist[nb] = t;
                            state[nb] = State::Trial;
                            heap.push(Entry { dist: t, idx: nb });
                        }
                    }
                }
            }
        }
    }

    let values = dist
        .iter()
        .zip(&state)
        .zip(&mask.values)
        .map(|((&d, &s), &inside)| {
            let magnitude = if s == State::Known { d.min(limit) } else { limit };
            let magnitude = if magnitude.is_finite() { magnitude } else { 0.0 };
            if inside {
                -magnitude
            } else {
                magnitude
            }
        })
        .collect();
    ScalarField3::new(grid, values)
}

/// Upwind solution of `sum_a max(T - a_a, 0)^2 = h^2` given the smallest
/// known neighbour value per axis.
fn solve_upwind(mut a: [f64; 3], h: f64) -> f64 {
    a.sort_by(f64::total_cmp);
    let t = a[0] + h;
    if t <= a[1] {
        return t;
    }
    let s = a[0] + a[1];
    let disc = 2.0 * h * h - (a[0] - a[1]).powi(2);
    let t = 0.5 * (s + disc.max(0.0).sqrt());
    if t <= a[2] {
        return t;
    }
    let s = a[0] + a[1] + a[2];
    let q = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
    let disc = s * s - 3.0 * (q - h * h);
    (s + disc.max(0.0).sqrt()) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid3;

    #[test]
    fn upwind_one_two_three_terms() {
        let h = 1.0;
        assert_eq!(solve_upwind([0.0, f64::INFINITY, f64::INFINITY], h), 1.0);
        let t2 = solve_upwind([0.0, 0.0, f64::INFINITY], h);
        assert!((t2 - (0.5f64).sqrt()).abs() < 1e-15);
        let t3 = solve_upwind([0.0, 0.0, 0.0], h);
        assert!((t3 - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn half_space_is_exact() {
        let g = Grid3::new([12, 12, 20], 1.0, [0.0; 3]).unwrap();
        let c = 9.5;
        let mask = BinaryMask3::from_fn(g, |p| p[2] < c);
        let d = redistance_fmm_band(&mask, None).unwrap();
        for (idx, &v) in d.values.iter().enumerate() {
            let [i, j, k] = g.coords(idx);
            let expected = g.position(i, j, k)[2] - c;
            assert!((v - expected).abs() <= 0.5 + 1e-12, "{v} vs {expected}");
        }
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let g = Grid3::new([4, 4, 4], 1.0, [0.0; 3]).unwrap();
        let all = BinaryMask3::from_fn(g, |_| true);
        assert!(matches!(
            redistance_fmm(&all),
            Err(Error::DegenerateMask("outside"))
        ));
        let none = BinaryMask3::from_fn(g, |_| false);
        assert!(matches!(
            redistance_fmm(&none),
            Err(Error::DegenerateMask("inside"))
        ));
    }

    #[test]
    fn band_clamps_far_values() {
        let g = Grid3::new([8, 8, 40], 1.0, [0.0; 3]).unwrap();
        let mask = BinaryMask3::from_fn(g, |p| p[2] < 19.5);
        let d = redistance_fmm_band(&mask, Some(5.0)).unwrap();
        let (lo, hi) = d.min_max();
        assert_eq!((lo, hi), (-5.0, 5.0));
        assert_eq!(d.at(3, 3, 22), 22.0 - 19.5);
    }

    #[test]
    fn sign_matches_membership() {
        let g = Grid3::new([20, 20, 20], 1.0, [0.0; 3]).unwrap();
        let mask = BinaryMask3::from_fn(g, |p| {
            let r = ((p[0] - 9.3).powi(2) + (p[1] - 10.1).powi(2) + (p[2] - 9.7).powi(2)).sqrt();
            r < 6.0
        });
        let d = redistance_fmm(&mask).unwrap();
        for (v, &inside) in d.values.iter().zip(&mask.values) {
            assert_eq!(*v < 0.0, inside);
        }
    }
}
