//! Shared helpers for the integration suites.
//!
//! The centerpiece is an *independent* derivation of second-derivative
//! weights: instead of the divided-difference recursion the library uses,
//! this solves the moment (Vandermonde) system directly with Gaussian
//! elimination, so agreement between the two is a real cross-check and not
//! the same algorithm twice.

#![allow(dead_code)]

use vtiprop_core::Real;

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
/// `a` is row-major, square. Panics on a (numerically) singular matrix —
/// fine for a test oracle, which is only called on distinct nodes.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .expect("non-empty system");
        assert!(a[pivot][col] != 0.0, "singular moment matrix");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Second-derivative weights at `x0` on `nodes` from the moment system
/// `Σ_j w_j (x_j − x0)^d = 2·[d == 2]` for d = 0..n−1, solved on nodes
/// scaled to the unit interval for conditioning and scaled back.
pub fn moment_weights(x0: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    assert!(n >= 3, "need at least 3 nodes for a second derivative");
    let scale = nodes
        .iter()
        .map(|&z| (z - x0).abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let xi: Vec<f64> = nodes.iter().map(|&z| (z - x0) / scale).collect();
    // Row d of the system: Σ_j w'_j · xi_j^d = rhs_d.
    let mut a = vec![vec![0.0f64; n]; n];
    for (d, row) in a.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = xi[j].powi(d as i32);
        }
    }
    let mut rhs = vec![0.0f64; n];
    rhs[2] = 2.0;
    let scaled = gauss_solve(a, rhs);
    scaled.iter().map(|w| w / (scale * scale)).collect()
}

/// Max over both slices of |a−b| / max(|a|, |b|, floor).
pub fn max_rel_err<T: Real>(a: &[T], b: &[T], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64(), y.to_f64());
        let denom = x.abs().max(y.abs()).max(floor);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

/// Strictly increasing z coordinates with pseudo-random spacings in
/// `[0.5, 1.5]·mean_dz`, starting at `z0`. Deterministic in `seed`.
pub fn random_monotone_coords(n: usize, z0: f64, mean_dz: f64, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(n);
    let mut cur = z0;
    for _ in 0..n {
        z.push(cur);
        cur += mean_dz * rng.gen_range(0.5..1.5);
    }
    z
}
