//! Seeded synthetic earth models for benchmarks and tests.
//!
//! Values are drawn on a coarse lattice and trilinearly interpolated, so
//! the result is smooth at the wavelength scale (abrupt jumps would just
//! measure the stencil's dispersion, not the kernels). The same seed and
//! grid always reproduce the same model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{EarthModel, Grid};
use crate::real::Real;

/// Coarse-lattice spacing in grid points.
const LATTICE_STEP: usize = 8;

/// Random values on the coarse lattice for one property.
struct Lattice {
    vals: Vec<f64>,
    dims: [usize; 3],
    step: f64,
}

impl Lattice {
    fn draw(rng: &mut ChaCha8Rng, grid_dims: [usize; 3], lo: f64, hi: f64) -> Self {
        let dims = grid_dims.map(|n| (n - 1) / LATTICE_STEP + 2);
        let vals = (0..dims[0] * dims[1] * dims[2]).map(|_| rng.gen_range(lo..=hi)).collect();
        Self { vals, dims, step: LATTICE_STEP as f64 }
    }

    fn at_node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.vals[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    /// Trilinear interpolation at a grid point.
    fn sample(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        let locate = |i: usize, n: usize| {
            let c = ((i as f64 / self.step) as usize).min(n - 2);
            (c, i as f64 / self.step - c as f64)
        };
        let (cx, fx) = locate(ix, self.dims[0]);
        let (cy, fy) = locate(iy, self.dims[1]);
        let (cz, fz) = locate(iz, self.dims[2]);
        let mut acc = 0.0;
        for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    acc += wx * wy * wz * self.at_node(cx + dx, cy + dy, cz + dz);
                }
            }
        }
        acc
    }
}

/// Draws the interior property arrays (vz in m/s, ε, δ) for
/// [`smooth_random_model`]; exposed so the arrays can also be serialized
/// as a model file. δ = ε·r with r in [0, 1], so ε ≥ δ holds everywhere
/// by construction (the reduced system's well-posedness condition).
pub fn smooth_random_arrays(
    grid: &Grid,
    seed: u64,
    vz_range: (f64, f64),
    eps_max: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gd = [grid.nx(), grid.ny(), grid.nz()];
    let vz_lat = Lattice::draw(&mut rng, gd, vz_range.0, vz_range.1);
    let eps_lat = Lattice::draw(&mut rng, gd, 0.0, eps_max);
    let ratio_lat = Lattice::draw(&mut rng, gd, 0.0, 1.0);

    let n = grid.n_interior();
    let mut vz = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    for iz in 0..gd[2] {
        for iy in 0..gd[1] {
            for ix in 0..gd[0] {
                let e = eps_lat.sample(ix, iy, iz);
                vz.push(vz_lat.sample(ix, iy, iz));
                eps.push(e);
                delta.push(e * ratio_lat.sample(ix, iy, iz));
            }
        }
    }
    (vz, eps, delta)
}

/// Builds a smooth random model on `grid`: vz uniform in `vz_range` (m/s),
/// ε in [0, eps_max], and δ ≤ ε everywhere.
pub fn smooth_random_model<T: Real>(
    grid: &Grid,
    seed: u64,
    vz_range: (f64, f64),
    eps_max: f64,
) -> Result<EarthModel<T>> {
    let (vz, eps, delta) = smooth_random_arrays(grid, seed, vz_range, eps_max);
    let vz2: Vec<T> = vz.iter().map(|&v| T::from_f64(v * v)).collect();
    let eps: Vec<T> = eps.iter().map(|&v| T::from_f64(v)).collect();
    let delta: Vec<T> = delta.iter().map(|&v| T::from_f64(v)).collect();
    EarthModel::build(grid.clone(), &vz2, &eps, &delta, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_in_range() {
        let grid = Grid::uniform(24, 20, 28, 10.0, 10.0, 4, 4).unwrap();
        let a = smooth_random_model::<f32>(&grid, 42, (1500.0, 3500.0), 0.3).unwrap();
        let b = smooth_random_model::<f32>(&grid, 42, (1500.0, 3500.0), 0.3).unwrap();
        assert_eq!(a.vz2().as_slice(), b.vz2().as_slice());
        let c = smooth_random_model::<f32>(&grid, 43, (1500.0, 3500.0), 0.3).unwrap();
        assert_ne!(a.vz2().as_slice(), c.vz2().as_slice());

        assert_eq!(a.aniso_violations(), 0);
        for k in grid.interior_z() {
            for j in grid.interior_y() {
                for i in grid.interior_x() {
                    let v2 = a.vz2().get(i, j, k) as f64;
                    assert!((1500.0 * 1500.0..=3500.0 * 3500.0).contains(&v2));
                    let e = a.eps().get(i, j, k);
                    let d = a.delta().get(i, j, k);
                    assert!((0.0..=0.3).contains(&e));
                    assert!(d >= 0.0 && d <= e);
                }
            }
        }
    }

    #[test]
    fn interpolation_is_smooth() {
        // Neighbour-to-neighbour steps must be far below the full range —
        // i.e. no lattice-scale jumps leak through.
        let grid = Grid::uniform(33, 9, 9, 10.0, 10.0, 2, 2).unwrap();
        let m = smooth_random_model::<f64>(&grid, 7, (2000.0, 3000.0), 0.2).unwrap();
        let j = grid.interior_y().start;
        let k = grid.interior_z().start;
        for i in grid.interior_x().skip(1) {
            let a = m.vz2().get(i - 1, j, k).sqrt();
            let b = m.vz2().get(i, j, k).sqrt();
            assert!((a - b).abs() < 1000.0 / LATTICE_STEP as f64 * 1.5);
        }
    }
}
