//! Finite-difference weight construction.
//!
//! Two stencil families drive the propagator:
//!
//! - a symmetric x–y stencil of radius `r_xy` on the uniform horizontal
//!   spacing `h`, stored as `r_xy + 1` dimensionless weights for the *scaled*
//!   operator h²(∂xx + ∂yy) — `w[0]` is the combined center weight (the 1-D
//!   center weight counted once per axis) and `w[l]` multiplies the sum of
//!   the four neighbors at offset ±l along x and y;
//! - an asymmetric z stencil of radius `r_z` on arbitrary strictly increasing
//!   plane coordinates, one row of `2·r_z + 1` weights per interior plane,
//!   with the local spacings absorbed (units 1/m²).
//!
//! Weights are the maximal-order polynomial-exactness solution on the node
//! set, obtained from the classic divided-difference recursion (numerically
//! equivalent to solving the moment system, but stable at large radii), and
//! are always derived in f64 no matter what precision the simulation runs
//! at. Dispersion-optimized weight sets are deliberately *not* generated
//! here; they can be supplied as overrides and are only checked for shape
//! and low-order consistency.

use crate::error::{Error, Result};
use crate::field::Field3;
use crate::real::Real;

/// Relative tolerance for the consistency checks on user-supplied override
/// rows (row sum zero, exact second derivative of a parabola). Optimized
/// weight families trade high-order exactness for bandwidth but keep these
/// low-order constraints, so the bound is loose compared to what freshly
/// derived weights achieve (~1e-14).
const OVERRIDE_TOL: f64 = 1e-6;

/// Residual above which a *derived* weight row is reported as an
/// ill-conditioned solve rather than silently returned.
const DERIVED_TOL: f64 = 1e-9;

/// Weights for the k-th derivative (k ≤ `max_deriv`) at `x0` on the given
/// distinct nodes; returns one row per derivative order, each row one weight
/// per node. Exact for polynomials up to degree `nodes.len() - 1`.
fn fd_weights(x0: f64, nodes: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let m = max_deriv;
    debug_assert!(n > m, "need at least {} nodes for derivative {}", m + 1, m);
    // c[j][k] converges to the weight of node j for the k-th derivative.
    let mut c = vec![vec![0.0f64; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Second-derivative weights at `x0` on distinct `nodes` (maximal order).
pub fn second_derivative_weights(x0: f64, nodes: &[f64]) -> Result<Vec<f64>> {
    if nodes.len() < 3 {
        return Err(Error::Parameter(format!(
            "second-derivative weights need at least 3 nodes, got {}",
            nodes.len()
        )));
    }
    for w in nodes.windows(2) {
        if w[1] == w[0] {
            return Err(Error::Parameter(format!("repeated stencil node {}", w[0])));
        }
    }
    Ok(fd_weights(x0, nodes, 2).pop().expect("derivative rows"))
}

/// Scaled residuals of the two low-order constraints every admissible
/// second-derivative row satisfies on its own nodes: Σw = 0 (constants) and
/// Σw·(z−x0)² = 2 (parabola). Residuals are relative to the row's own
/// magnitude so conditioning, not units, sets the scale.
fn row_residuals(x0: f64, nodes: &[f64], w: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_mag = 0.0;
    let mut para = 0.0;
    let mut para_mag = 0.0;
    for (&wj, &zj) in w.iter().zip(nodes) {
        let d = zj - x0;
        sum += wj;
        sum_mag += wj.abs();
        para += wj * d * d;
        para_mag += (wj * d * d).abs();
    }
    (sum.abs() / sum_mag.max(f64::MIN_POSITIVE), (para - 2.0).abs() / para_mag.max(2.0))
}

fn check_row(x0: f64, nodes: &[f64], w: &[f64], tol: f64, what: &str) -> Result<()> {
    if let Some(bad) = w.iter().find(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{what}: non-finite weight {bad}")));
    }
    let (sum_res, para_res) = row_residuals(x0, nodes, w);
    if sum_res > tol || para_res > tol {
        return Err(Error::Parameter(format!(
            "{what}: ill-conditioned or inconsistent weight row \
             (row-sum residual {sum_res:.3e}, parabola residual {para_res:.3e}, tol {tol:.0e})"
        )));
    }
    Ok(())
}

/// Symmetric x–y Laplacian weights.
///
/// Invariants held by construction (and enforced on overrides):
/// `w[0] + 4·Σ_{l≥1} w[l] = 0`, and the underlying 1-D row differentiates
/// x² exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct XYWeights {
    r_xy: usize,
    h: f64,
    w: Vec<f64>,
}

impl XYWeights {
    /// Derives maximal-order weights for radius `r_xy` ≥ 1 and spacing
    /// `h` > 0. The stored weights are spacing-independent; `h` is kept so
    /// the propagator can apply the 1/h² scaling once per point.
    pub fn compute(r_xy: usize, h: f64) -> Result<Self> {
        if r_xy < 1 {
            return Err(Error::Parameter("x–y stencil radius must be at least 1".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Parameter(format!("grid spacing h must be positive, got {h}")));
        }
        let nodes: Vec<f64> = (-(r_xy as isize)..=r_xy as isize).map(|l| l as f64).collect();
        let c = second_derivative_weights(0.0, &nodes)?;
        check_row(0.0, &nodes, &c, DERIVED_TOL, &format!("derived x–y row r={r_xy}"))?;
        let mut w = Vec::with_capacity(r_xy + 1);
        // Center counted once per axis, so the combined weight doubles it.
        w.push(2.0 * c[r_xy]);
        w.extend_from_slice(&c[r_xy + 1..]);
        Ok(Self { r_xy, h, w })
    }

    /// Accepts an externally supplied row (e.g. dispersion-optimized
    /// weights) in the combined layout `[w0, w1, ..., w_R]`.
    pub fn from_row(r_xy: usize, h: f64, w: Vec<f64>) -> Result<Self> {
        if r_xy < 1 {
            return Err(Error::Parameter("x–y stencil radius must be at least 1".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Parameter(format!("grid spacing h must be positive, got {h}")));
        }
        if w.len() != r_xy + 1 {
            return Err(Error::Parameter(format!(
                "x–y weight row has {} entries, radius {} needs {}",
                w.len(),
                r_xy,
                r_xy + 1
            )));
        }
        // Expand to the full symmetric 1-D row to reuse the generic checks.
        let nodes: Vec<f64> = (-(r_xy as isize)..=r_xy as isize).map(|l| l as f64).collect();
        let mut full = vec![0.0; 2 * r_xy + 1];
        full[r_xy] = w[0] / 2.0;
        for l in 1..=r_xy {
            full[r_xy + l] = w[l];
            full[r_xy - l] = w[l];
        }
        check_row(0.0, &nodes, &full, OVERRIDE_TOL, "override x–y row")?;
        Ok(Self { r_xy, h, w })
    }

    #[inline]
    pub fn r_xy(&self) -> usize {
        self.r_xy
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Combined weights `[w0, w1, ..., w_R]` (dimensionless).
    #[inline]
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    /// The underlying 1-D second-derivative row `[c0, c1, ..., cR]` on
    /// unit-spaced nodes (c0 = w0/2).
    pub fn one_dimensional(&self) -> Vec<f64> {
        let mut c = self.w.clone();
        c[0] /= 2.0;
        c
    }

    /// Direct evaluation of the scaled operator h²(∂xx + ∂yy) at one point,
    /// accumulating in f64. This is the oracle the sweep kernels are tested
    /// against; it is deliberately written as the plain textbook sum.
    pub fn apply_at<T: Real>(&self, field: &Field3<T>, i: usize, j: usize, k: usize) -> Result<f64> {
        let [nx, ny, nz] = field.dims();
        let r = self.r_xy;
        if i < r || i + r >= nx || j < r || j + r >= ny || k >= nz {
            return Err(Error::Index(format!(
                "x–y stencil of radius {r} cannot be applied at ({i}, {j}, {k}) in a \
                 {nx}×{ny}×{nz} array"
            )));
        }
        let mut acc = self.w[0] * field.get(i, j, k).to_f64();
        for l in 1..=r {
            let x_pair = field.get(i + l, j, k).to_f64() + field.get(i - l, j, k).to_f64();
            let y_pair = field.get(i, j + l, k).to_f64() + field.get(i, j - l, k).to_f64();
            acc += self.w[l] * (x_pair + y_pair);
        }
        Ok(acc)
    }
}

/// Per-plane nonuniform z second-derivative weights.
///
/// Row `ki` (one per interior plane) applies at global plane `ki + r_z` of
/// the padded grid and spans the `2·r_z + 1` planes centered there. Spacing
/// is absorbed into the weights, so applying a row to raw field values
/// yields ∂zz directly (1/m² times field units).
#[derive(Debug, Clone, PartialEq)]
pub struct ZWeights {
    r_z: usize,
    n_z: usize,
    w: Vec<f64>, // n_z rows × (2·r_z + 1), row-contiguous
}

impl ZWeights {
    /// Derives one maximal-order row per interior plane from the padded
    /// plane coordinates (`n_z + 2·r_z` strictly increasing values).
    pub fn compute(z_coords: &[f64], r_z: usize) -> Result<Self> {
        if r_z < 1 {
            return Err(Error::Parameter("z stencil radius must be at least 1".into()));
        }
        Self::check_coords(z_coords, r_z)?;
        let n_z = z_coords.len() - 2 * r_z;
        let width = 2 * r_z + 1;
        let mut w = Vec::with_capacity(n_z * width);
        for ki in 0..n_z {
            let k = ki + r_z;
            let window = &z_coords[k - r_z..=k + r_z];
            Self::check_window_spread(window, ki)?;
            let row = second_derivative_weights(z_coords[k], window)?;
            check_row(z_coords[k], window, &row, DERIVED_TOL, &format!("derived z row {ki}"))?;
            w.extend_from_slice(&row);
        }
        Ok(Self { r_z, n_z, w })
    }

    /// Accepts externally supplied rows (flattened, `n_z` rows of
    /// `2·r_z + 1` weights each, same layout as [`ZWeights::rows_flat`]).
    /// The padded coordinates are still required so each row can be checked
    /// for low-order consistency on its own nodes.
    pub fn from_rows(z_coords: &[f64], r_z: usize, w: Vec<f64>) -> Result<Self> {
        if r_z < 1 {
            return Err(Error::Parameter("z stencil radius must be at least 1".into()));
        }
        Self::check_coords(z_coords, r_z)?;
        let n_z = z_coords.len() - 2 * r_z;
        let width = 2 * r_z + 1;
        if w.len() != n_z * width {
            return Err(Error::Parameter(format!(
                "z weight table has {} entries, expected {} rows × {} = {}",
                w.len(),
                n_z,
                width,
                n_z * width
            )));
        }
        for ki in 0..n_z {
            let k = ki + r_z;
            let window = &z_coords[k - r_z..=k + r_z];
            let row = &w[ki * width..(ki + 1) * width];
            check_row(z_coords[k], window, row, OVERRIDE_TOL, &format!("override z row {ki}"))?;
        }
        Ok(Self { r_z, n_z, w })
    }

    fn check_coords(z_coords: &[f64], r_z: usize) -> Result<()> {
        if z_coords.len() < 2 * r_z + 1 {
            return Err(Error::Geometry(format!(
                "{} plane coordinates cannot host a z stencil of radius {r_z}",
                z_coords.len()
            )));
        }
        for (i, pair) in z_coords.windows(2).enumerate() {
            if !(pair[1].is_finite() && pair[0].is_finite() && pair[1] > pair[0]) {
                return Err(Error::Geometry(format!(
                    "z coordinates must be finite and strictly increasing; \
                     z[{}] = {}, z[{}] = {}",
                    i,
                    pair[0],
                    i + 1,
                    pair[1]
                )));
            }
        }
        Ok(())
    }

    /// Guards the solve against pathological local stretching: a spacing
    /// spread beyond ~1e6 within one stencil window makes the row meaningless
    /// in f64 and is reported as geometry trouble, not returned as garbage.
    fn check_window_spread(window: &[f64], ki: usize) -> Result<()> {
        let mut min_d = f64::INFINITY;
        let mut max_d: f64 = 0.0;
        for pair in window.windows(2) {
            let d = pair[1] - pair[0];
            min_d = min_d.min(d);
            max_d = max_d.max(d);
        }
        if max_d / min_d > 1e6 {
            return Err(Error::Geometry(format!(
                "z spacing spread {:.3e} within the stencil window of interior plane {ki} \
                 is too large for a stable weight solve",
                max_d / min_d
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn r_z(&self) -> usize {
        self.r_z
    }

    /// Number of interior planes (= number of rows).
    #[inline]
    pub fn n_z(&self) -> usize {
        self.n_z
    }

    /// Weights for interior plane `ki`.
    #[inline]
    pub fn row(&self, ki: usize) -> &[f64] {
        let width = 2 * self.r_z + 1;
        &self.w[ki * width..(ki + 1) * width]
    }

    /// All rows, row-contiguous.
    #[inline]
    pub fn rows_flat(&self) -> &[f64] {
        &self.w
    }

    /// Direct evaluation of ∂zz at one point (f64 accumulation); oracle
    /// counterpart of [`XYWeights::apply_at`]. The field's z extent must be
    /// `n_z + 2·r_z` so plane k maps onto row k − r_z.
    pub fn apply_at<T: Real>(&self, field: &Field3<T>, i: usize, j: usize, k: usize) -> Result<f64> {
        let [nx, ny, nz] = field.dims();
        if nz != self.n_z + 2 * self.r_z {
            return Err(Error::Geometry(format!(
                "field z extent {nz} does not match {} interior planes + 2×{} halo",
                self.n_z, self.r_z
            )));
        }
        if i >= nx || j >= ny || k < self.r_z || k >= self.r_z + self.n_z {
            return Err(Error::Index(format!(
                "z stencil of radius {} cannot be applied at ({i}, {j}, {k}) in a \
                 {nx}×{ny}×{nz} array",
                self.r_z
            )));
        }
        let row = self.row(k - self.r_z);
        let mut acc = 0.0;
        for (m, &wm) in row.iter().enumerate() {
            acc += wm * field.get(i, j, k - self.r_z + m).to_f64();
        }
        Ok(acc)
    }
}

/// The full stencil set a simulation needs: one x–y row plus the z table.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilWeights {
    pub xy: XYWeights,
    pub z: ZWeights,
}

impl StencilWeights {
    pub fn compute(r_xy: usize, h: f64, z_coords: &[f64], r_z: usize) -> Result<Self> {
        Ok(Self { xy: XYWeights::compute(r_xy, h)?, z: ZWeights::compute(z_coords, r_z)? })
    }
}
