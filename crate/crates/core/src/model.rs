//! Grid geometry, earth model, and the absorbing sponge profile.
//!
//! The computational grid is the user-visible interior of `nx × ny × nz`
//! points surrounded by a stencil halo (`r_xy` points in x and y, `r_z`
//! planes in z) that is *defined* to hold zeros — the propagator never
//! writes it, which together with the sponge band emulates a transparent
//! boundary. On top of the halo, the allocated x extent is rounded up to a
//! multiple of 16 points so rows start vector-aligned regardless of `nx`.

use crate::error::{Error, Result};
use crate::field::Field3;
use crate::propagator::WaveState;
use crate::real::Real;
use crate::stencil::StencilWeights;

/// Geometry of a padded simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    nz: usize,
    h: f64,
    /// Plane coordinates for all `nz + 2·pad_z` padded planes, meters,
    /// strictly increasing.
    z_coords: Vec<f64>,
    pad_xy: usize,
    pad_z: usize,
    /// Extra dead columns appended in x so the allocated x extent is a
    /// multiple of 16; never read or written by kernels.
    x_stride_pad: usize,
}

impl Grid {
    /// Builds a grid from padded plane coordinates (`nz + 2·r_z` values).
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        h: f64,
        z_coords: Vec<f64>,
        r_xy: usize,
        r_z: usize,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Geometry(format!(
                "interior extents must be positive, got {nx}×{ny}×{nz}"
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Parameter(format!("grid spacing h must be positive, got {h}")));
        }
        if r_xy < 1 || r_z < 1 {
            return Err(Error::Parameter(format!(
                "stencil radii must be at least 1, got r_xy={r_xy}, r_z={r_z}"
            )));
        }
        if z_coords.len() != nz + 2 * r_z {
            return Err(Error::Geometry(format!(
                "{} plane coordinates supplied, nz={nz} with halo {r_z} needs {}",
                z_coords.len(),
                nz + 2 * r_z
            )));
        }
        for (i, pair) in z_coords.windows(2).enumerate() {
            if !(pair[0].is_finite() && pair[1].is_finite() && pair[1] > pair[0]) {
                return Err(Error::Geometry(format!(
                    "plane coordinates must be finite and strictly increasing; \
                     z[{}] = {}, z[{}] = {}",
                    i,
                    pair[0],
                    i + 1,
                    pair[1]
                )));
            }
        }
        let logical_x = nx + 2 * r_xy;
        let x_stride_pad = (16 - logical_x % 16) % 16;
        Ok(Self { nx, ny, nz, h, z_coords, pad_xy: r_xy, pad_z: r_z, x_stride_pad })
    }

    /// Convenience constructor for a uniform z spacing `dz`.
    pub fn uniform(
        nx: usize,
        ny: usize,
        nz: usize,
        h: f64,
        dz: f64,
        r_xy: usize,
        r_z: usize,
    ) -> Result<Self> {
        if !(dz.is_finite() && dz > 0.0) {
            return Err(Error::Parameter(format!("plane spacing dz must be positive, got {dz}")));
        }
        let coords = (0..nz + 2 * r_z).map(|k| k as f64 * dz).collect();
        Self::new(nx, ny, nz, h, coords, r_xy, r_z)
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn pad_xy(&self) -> usize {
        self.pad_xy
    }

    #[inline]
    pub fn pad_z(&self) -> usize {
        self.pad_z
    }

    #[inline]
    pub fn x_stride_pad(&self) -> usize {
        self.x_stride_pad
    }

    /// Padded plane coordinates (length `nz + 2·pad_z`).
    #[inline]
    pub fn z_coords(&self) -> &[f64] {
        &self.z_coords
    }

    /// Allocated array extents; x includes halo and alignment pad.
    #[inline]
    pub fn padded_dims(&self) -> [usize; 3] {
        [
            self.nx + 2 * self.pad_xy + self.x_stride_pad,
            self.ny + 2 * self.pad_xy,
            self.nz + 2 * self.pad_z,
        ]
    }

    /// Interior index ranges in padded coordinates.
    #[inline]
    pub fn interior_x(&self) -> std::ops::Range<usize> {
        self.pad_xy..self.pad_xy + self.nx
    }

    #[inline]
    pub fn interior_y(&self) -> std::ops::Range<usize> {
        self.pad_xy..self.pad_xy + self.ny
    }

    #[inline]
    pub fn interior_z(&self) -> std::ops::Range<usize> {
        self.pad_z..self.pad_z + self.nz
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        self.interior_x().contains(&i)
            && self.interior_y().contains(&j)
            && self.interior_z().contains(&k)
    }

    #[inline]
    pub fn n_interior(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Flat index into a padded field.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        let [px, py, _] = self.padded_dims();
        (k * py + j) * px + i
    }

    /// Local z cell size around padded plane `k` (centered difference of the
    /// plane coordinates); used for optional source volume normalization.
    pub fn local_dz(&self, k: usize) -> f64 {
        debug_assert!(k >= 1 && k + 1 < self.z_coords.len());
        0.5 * (self.z_coords[k + 1] - self.z_coords[k - 1])
    }

    /// Derives the maximal-order stencil set matching this grid's spacing,
    /// plane coordinates, and halo radii.
    pub fn stencil_weights(&self) -> Result<StencilWeights> {
        StencilWeights::compute(self.pad_xy, self.h, &self.z_coords, self.pad_z)
    }
}

/// Extends interior plane coordinates with `r_z` halo planes on each side,
/// continuing the edge spacing outward. Geometry plumbing for inputs that
/// describe only the interior.
pub fn extend_z_coords(interior: &[f64], r_z: usize) -> Result<Vec<f64>> {
    if interior.len() < 2 {
        return Err(Error::Geometry(
            "need at least 2 interior plane coordinates to extend a halo".into(),
        ));
    }
    let lo_step = interior[1] - interior[0];
    let n = interior.len();
    let hi_step = interior[n - 1] - interior[n - 2];
    if !(lo_step > 0.0 && hi_step > 0.0) {
        return Err(Error::Geometry("interior plane coordinates must be increasing".into()));
    }
    let mut out = Vec::with_capacity(n + 2 * r_z);
    for m in (1..=r_z).rev() {
        out.push(interior[0] - m as f64 * lo_step);
    }
    out.extend_from_slice(interior);
    for m in 1..=r_z {
        out.push(interior[n - 1] + m as f64 * hi_step);
    }
    Ok(out)
}

/// Earth model: νz², ε, δ plus the derived νx² = νz²(1+2ε) and
/// νn² = νz²(1+2δ), all stored padded at simulation precision. The derived
/// arrays are computed element-wise *in the simulation precision*, so the
/// stored identity is exact and rebuilding from the same inputs is
/// bit-idempotent.
#[derive(Debug, Clone)]
pub struct EarthModel<T: Real> {
    grid: Grid,
    vz2: Field3<T>,
    eps: Field3<T>,
    delta: Field3<T>,
    vx2: Field3<T>,
    vn2: Field3<T>,
    /// Number of interior points where ε − δ < 0. Physically suspect for
    /// the reduced system (it makes the coupled operator lose its real
    /// negative spectrum), but only an error under `strict_aniso`.
    aniso_violations: usize,
}

impl<T: Real> EarthModel<T> {
    /// Builds a model from interior-shaped arrays (x fastest, length
    /// `nx·ny·nz`). `vz2` is the squared vertical velocity in m²/s².
    pub fn build(
        grid: Grid,
        vz2: &[T],
        eps: &[T],
        delta: &[T],
        strict_aniso: bool,
    ) -> Result<Self> {
        let n = grid.n_interior();
        for (name, arr) in [("vz2", vz2), ("eps", eps), ("delta", delta)] {
            if arr.len() != n {
                return Err(Error::Model(format!(
                    "{name} has {} values, interior {}×{}×{} needs {n}",
                    arr.len(),
                    grid.nx(),
                    grid.ny(),
                    grid.nz()
                )));
            }
        }
        let dims = grid.padded_dims();
        let mut fz2 = Field3::zeros(dims);
        let mut feps = Field3::zeros(dims);
        let mut fdelta = Field3::zeros(dims);
        let mut fvx2 = Field3::zeros(dims);
        let mut fvn2 = Field3::zeros(dims);
        let two = T::from_f64(2.0);
        let mut violations = 0usize;
        let mut first_violation = None;
        let mut src = 0usize;
        for k in grid.interior_z() {
            for j in grid.interior_y() {
                for i in grid.interior_x() {
                    let v = vz2[src];
                    let e = eps[src];
                    let d = delta[src];
                    src += 1;
                    if !(v.is_finite() && v > T::zero()) {
                        return Err(Error::Model(format!(
                            "vz2 must be finite and positive everywhere; found {v} at padded \
                             index ({i}, {j}, {k})"
                        )));
                    }
                    if !e.is_finite() || !d.is_finite() {
                        return Err(Error::Model(format!(
                            "non-finite anisotropy value at padded index ({i}, {j}, {k})"
                        )));
                    }
                    if e < d {
                        if violations == 0 {
                            first_violation = Some((
                                i - grid.interior_x().start,
                                j - grid.interior_y().start,
                                k - grid.interior_z().start,
                            ));
                        }
                        violations += 1;
                    }
                    let at = fz2.idx(i, j, k);
                    fz2.as_mut_slice()[at] = v;
                    feps.as_mut_slice()[at] = e;
                    fdelta.as_mut_slice()[at] = d;
                    fvx2.as_mut_slice()[at] = v * (T::one() + two * e);
                    fvn2.as_mut_slice()[at] = v * (T::one() + two * d);
                }
            }
        }
        if strict_aniso && violations > 0 {
            let (x, y, z) = first_violation.unwrap();
            return Err(Error::Anisotropy { count: violations, x, y, z });
        }
        Ok(Self {
            grid,
            vz2: fz2,
            eps: feps,
            delta: fdelta,
            vx2: fvx2,
            vn2: fvn2,
            aniso_violations: violations,
        })
    }

    /// Constant-model shorthand: `vz` in m/s (squared internally), scalar
    /// ε and δ everywhere.
    pub fn constant(grid: Grid, vz: f64, eps: f64, delta: f64, strict_aniso: bool) -> Result<Self> {
        if !(vz.is_finite() && vz > 0.0) {
            return Err(Error::Model(format!("vz must be finite and positive, got {vz}")));
        }
        let n = grid.n_interior();
        let vz2 = vec![T::from_f64(vz * vz); n];
        let e = vec![T::from_f64(eps); n];
        let d = vec![T::from_f64(delta); n];
        Self::build(grid, &vz2, &e, &d, strict_aniso)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn vz2(&self) -> &Field3<T> {
        &self.vz2
    }

    #[inline]
    pub fn eps(&self) -> &Field3<T> {
        &self.eps
    }

    #[inline]
    pub fn delta(&self) -> &Field3<T> {
        &self.delta
    }

    #[inline]
    pub fn vx2(&self) -> &Field3<T> {
        &self.vx2
    }

    #[inline]
    pub fn vn2(&self) -> &Field3<T> {
        &self.vn2
    }

    #[inline]
    pub fn aniso_violations(&self) -> usize {
        self.aniso_violations
    }

    /// Largest horizontal coefficient max(νx², νn²) over the interior, f64.
    pub fn max_horizontal_v2(&self) -> f64 {
        let mut m = 0.0f64;
        for k in self.grid.interior_z() {
            for j in self.grid.interior_y() {
                for i in self.grid.interior_x() {
                    let a = self.vx2.get(i, j, k).to_f64();
                    let b = self.vn2.get(i, j, k).to_f64();
                    m = m.max(a).max(b);
                }
            }
        }
        m
    }

    /// Largest νz² over the interior, f64.
    pub fn max_vz2(&self) -> f64 {
        let mut m = 0.0f64;
        for k in self.grid.interior_z() {
            for j in self.grid.interior_y() {
                for i in self.grid.interior_x() {
                    m = m.max(self.vz2.get(i, j, k).to_f64());
                }
            }
        }
        m
    }
}

/// Cosine-free sponge gain per axis: for a point at distance-in-points `d`
/// from the taper's outer edge, g = exp(−(α·(width − d))²) while d < width
/// and 1 elsewhere; the 3-D gain is the product of the axis gains, so
/// corners damp harder. Each time level of both fields is multiplied by g
/// once per step.
#[derive(Debug, Clone)]
pub struct DampingProfile<T: Real> {
    width: usize,
    alpha: f64,
    gx: Vec<T>,
    gy: Vec<T>,
    gz: Vec<T>,
}

/// Default taper width in points.
pub const DEFAULT_DAMPING_WIDTH: usize = 20;
/// Default gain steepness.
pub const DEFAULT_DAMPING_ALPHA: f64 = 0.015;

impl<T: Real> DampingProfile<T> {
    pub fn build(grid: &Grid, width: usize, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Parameter(format!(
                "damping alpha must be finite and non-negative, got {alpha}"
            )));
        }
        for (name, n) in [("nx", grid.nx()), ("ny", grid.ny()), ("nz", grid.nz())] {
            if width > 0 && 2 * width >= n {
                return Err(Error::Geometry(format!(
                    "damping width {width} needs 2·width < {name} = {n}"
                )));
            }
        }
        let axis = |n: usize| -> Vec<T> {
            (0..n)
                .map(|idx| {
                    let d = idx.min(n - 1 - idx);
                    if d < width {
                        T::from_f64((-(alpha * (width - d) as f64).powi(2)).exp())
                    } else {
                        T::one()
                    }
                })
                .collect()
        };
        Ok(Self { width, alpha, gx: axis(grid.nx()), gy: axis(grid.ny()), gz: axis(grid.nz()) })
    }

    /// A profile that multiplies by exactly 1 everywhere (damping off).
    pub fn disabled(grid: &Grid) -> Self {
        Self::build(grid, 0, 0.0).expect("width 0 is always valid")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Gain at an interior-relative point, evaluated in the same order the
    /// application loop uses: gx·(gy·gz).
    #[inline]
    pub fn g(&self, ix: usize, iy: usize, iz: usize) -> T {
        self.gx[ix] * (self.gy[iy] * self.gz[iz])
    }

    #[inline]
    pub fn gx(&self) -> &[T] {
        &self.gx
    }

    #[inline]
    pub fn gy(&self) -> &[T] {
        &self.gy
    }

    #[inline]
    pub fn gz(&self) -> &[T] {
        &self.gz
    }

    /// True when every gain is exactly 1 (width 0 or alpha 0).
    pub fn is_identity(&self) -> bool {
        self.width == 0 || self.alpha == 0.0
    }
}

/// Zeros everything outside the interior (stencil halo and x alignment
/// columns) of every time level of both fields. The propagator establishes
/// this once at start; kernels never write the exterior, so it stays zero.
pub fn zero_exterior<T: Real>(state: &mut WaveState<T>, grid: &Grid) {
    for field in state.all_fields_mut() {
        zero_exterior_field(field, grid);
    }
}

/// Zeros the exterior of a single padded field.
pub fn zero_exterior_field<T: Real>(field: &mut Field3<T>, grid: &Grid) {
    let [px, py, pz] = field.dims();
    debug_assert_eq!([px, py, pz], grid.padded_dims());
    for k in 0..pz {
        for j in 0..py {
            let row_interior =
                grid.interior_z().contains(&k) && grid.interior_y().contains(&j);
            let base = (k * py + j) * px;
            let row = &mut field.as_mut_slice()[base..base + px];
            if row_interior {
                row[..grid.interior_x().start].fill(T::zero());
                row[grid.interior_x().end..].fill(T::zero());
            } else {
                row.fill(T::zero());
            }
        }
    }
}

/// Interior L2 norm (f64 accumulation).
pub fn interior_l2<T: Real>(field: &Field3<T>, grid: &Grid) -> f64 {
    let mut acc = 0.0f64;
    for k in grid.interior_z() {
        for j in grid.interior_y() {
            for i in grid.interior_x() {
                let v = field.get(i, j, k).to_f64();
                acc += v * v;
            }
        }
    }
    acc.sqrt()
}

/// Largest interior |value| (f64).
pub fn interior_max_abs<T: Real>(field: &Field3<T>, grid: &Grid) -> f64 {
    let mut m = 0.0f64;
    for k in grid.interior_z() {
        for j in grid.interior_y() {
            for i in grid.interior_x() {
                m = m.max(field.get(i, j, k).to_f64().abs());
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_extent_is_padded_to_sixteen() {
        let g = Grid::uniform(61, 33, 47, 10.0, 10.0, 12, 8).unwrap();
        let [px, py, pz] = g.padded_dims();
        assert_eq!(px % 16, 0);
        assert_eq!(px, 96); // 61 + 24 = 85 → 96
        assert_eq!(py, 57);
        assert_eq!(pz, 63);
        assert_eq!(g.x_stride_pad(), 11);

        // Already aligned: no dead columns.
        let g2 = Grid::uniform(24, 24, 24, 10.0, 10.0, 12, 8).unwrap();
        assert_eq!(g2.x_stride_pad(), 0);
        assert_eq!(g2.padded_dims()[0], 48);
    }

    #[test]
    fn grid_validates_coordinates() {
        assert!(Grid::uniform(0, 4, 4, 1.0, 1.0, 1, 1).is_err());
        assert!(Grid::uniform(4, 4, 4, -1.0, 1.0, 1, 1).is_err());
        assert!(Grid::new(4, 4, 4, 1.0, vec![0.0; 5], 1, 1).is_err()); // needs 6
        let decreasing = vec![0.0, 1.0, 2.0, 3.0, 2.5, 5.0];
        assert!(Grid::new(4, 4, 4, 1.0, decreasing, 1, 1).is_err());
    }

    #[test]
    fn extend_z_coords_continues_edge_spacing() {
        let inner = [0.0, 1.0, 3.0, 6.0];
        let full = extend_z_coords(&inner, 2).unwrap();
        assert_eq!(full, vec![-2.0, -1.0, 0.0, 1.0, 3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn derived_fields_satisfy_the_identity_exactly() {
        let g = Grid::uniform(6, 5, 4, 10.0, 10.0, 2, 2).unwrap();
        let n = g.n_interior();
        let vz2: Vec<f32> = (0..n).map(|i| 1.0e6 + i as f32).collect();
        let eps: Vec<f32> = (0..n).map(|i| 0.3 * (i as f32 / n as f32)).collect();
        let delta: Vec<f32> = (0..n).map(|i| 0.1 * (i as f32 / n as f32)).collect();
        let m = EarthModel::build(g.clone(), &vz2, &eps, &delta, false).unwrap();
        assert_eq!(m.aniso_violations(), 0);
        for k in g.interior_z() {
            for j in g.interior_y() {
                for i in g.interior_x() {
                    let v = m.vz2().get(i, j, k);
                    let e = m.eps().get(i, j, k);
                    let d = m.delta().get(i, j, k);
                    assert_eq!(m.vx2().get(i, j, k).to_bits(), (v * (1.0 + 2.0 * e)).to_bits());
                    assert_eq!(m.vn2().get(i, j, k).to_bits(), (v * (1.0 + 2.0 * d)).to_bits());
                }
            }
        }
        // Rebuilding from the same inputs is bit-identical.
        let m2 = EarthModel::build(g, &vz2, &eps, &delta, false).unwrap();
        assert_eq!(m.vx2().as_slice(), m2.vx2().as_slice());
    }

    #[test]
    fn anisotropy_policy() {
        let g = Grid::uniform(4, 4, 4, 1.0, 1.0, 1, 1).unwrap();
        // δ > ε at every point: warn by default, error when strict.
        let warned = EarthModel::<f64>::constant(g.clone(), 2000.0, 0.0, 0.1, false).unwrap();
        assert_eq!(warned.aniso_violations(), g.n_interior());
        match EarthModel::<f64>::constant(g, 2000.0, 0.0, 0.1, true) {
            Err(Error::Anisotropy { count, x, y, z }) => {
                assert_eq!(count, 64);
                assert_eq!((x, y, z), (0, 0, 0));
            }
            other => panic!("expected anisotropy error, got {other:?}"),
        }
    }

    #[test]
    fn model_rejects_bad_values() {
        let g = Grid::uniform(3, 3, 3, 1.0, 1.0, 1, 1).unwrap();
        let n = g.n_interior();
        let mut vz2 = vec![1.0f64; n];
        vz2[5] = 0.0;
        assert!(EarthModel::build(g.clone(), &vz2, &vec![0.0; n], &vec![0.0; n], false).is_err());
        vz2[5] = f64::NAN;
        assert!(EarthModel::build(g.clone(), &vz2, &vec![0.0; n], &vec![0.0; n], false).is_err());
        assert!(EarthModel::build(g, &vec![1.0; n - 1], &vec![0.0; n], &vec![0.0; n], false)
            .is_err());
    }

    #[test]
    fn damping_profile_matches_the_gain_formula() {
        let g = Grid::uniform(64, 64, 64, 1.0, 1.0, 2, 2).unwrap();
        let p = DampingProfile::<f64>::build(&g, DEFAULT_DAMPING_WIDTH, DEFAULT_DAMPING_ALPHA)
            .unwrap();
        // Outermost interior point: exp(−(0.015·20)²) = exp(−0.09).
        let expect = (-0.09f64).exp();
        assert!((p.gx()[0] - expect).abs() < 1e-15);
        assert!((p.gx()[63] - expect).abs() < 1e-15);
        assert!((expect - 0.9139311852712282).abs() < 1e-12);
        // Inside the taper the gain rises monotonically to 1.
        for d in 1..20 {
            assert!(p.gx()[d] > p.gx()[d - 1]);
        }
        assert_eq!(p.gx()[20], 1.0);
        assert_eq!(p.gx()[32], 1.0);
        // Corners take the product of the axis gains.
        assert_eq!(p.g(0, 0, 0), ((expect * expect) * expect));
        assert!(!p.is_identity());
    }

    #[test]
    fn damping_width_zero_is_identity() {
        let g = Grid::uniform(8, 8, 8, 1.0, 1.0, 1, 1).unwrap();
        let p = DampingProfile::<f32>::disabled(&g);
        assert!(p.is_identity());
        assert!(p.gx().iter().all(|&v| v == 1.0));
        // 2·width must stay below the interior extent.
        assert!(DampingProfile::<f32>::build(&g, 4, 0.015).is_err());
        assert!(DampingProfile::<f32>::build(&g, 3, 0.015).is_ok());
    }
}
