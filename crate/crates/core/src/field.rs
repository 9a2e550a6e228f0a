use crate::real::Real;

/// Dense 3-D array in x-fastest layout: element (i, j, k) lives at
/// `(k * dims[1] + j) * dims[0] + i`.
///
/// `dims` are the *allocated* extents — for wavefields that is the interior
/// plus stencil halo plus the x alignment pad, and the index math here knows
/// nothing about which part is interior (that is [`crate::model::Grid`]'s
/// job).
#[derive(Debug, Clone, PartialEq)]
pub struct Field3<T> {
    data: Vec<T>,
    dims: [usize; 3],
}

impl<T: Real> Field3<T> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { data: vec![T::zero(); dims[0] * dims[1] * dims[2]], dims }
    }

    /// Builds a field from existing data; panics if the length disagrees.
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            dims[0] * dims[1] * dims[2],
            "field data length does not match dims {dims:?}"
        );
        Self { data, dims }
    }

    #[inline(always)]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// x stride is 1; y stride is this.
    #[inline(always)]
    pub fn stride_y(&self) -> usize {
        self.dims[0]
    }

    /// z stride: one full x–y plane.
    #[inline(always)]
    pub fn stride_z(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline(always)]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.idx(i, j, k)]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let at = self.idx(i, j, k);
        self.data[at] = v;
    }

    #[inline(always)]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline(always)]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_x_fastest() {
        let mut f = Field3::<f64>::zeros([3, 4, 5]);
        f.set(1, 2, 3, 7.0);
        assert_eq!(f.as_slice()[(3 * 4 + 2) * 3 + 1], 7.0);
        assert_eq!(f.idx(0, 0, 1) - f.idx(0, 0, 0), 12);
        assert_eq!(f.idx(0, 1, 0) - f.idx(0, 0, 0), 3);
        assert_eq!(f.idx(1, 0, 0) - f.idx(0, 0, 0), 1);
    }

    #[test]
    #[should_panic(expected = "length does not match")]
    fn from_vec_checks_length() {
        let _ = Field3::<f32>::from_vec([2, 2, 2], vec![0.0; 7]);
    }
}
