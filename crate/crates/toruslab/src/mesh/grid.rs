//! Index arithmetic for the periodic vertex/cell lattice.

use crate::error::{Error, Result};

/// Uniform periodic grid over `[0,1)^3` with `n` vertices per axis and mesh
/// width `h = 1/n`. Vertices, cells, edges, and faces all share the flat
/// index `(i * n + j) * n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicGrid {
    n: usize,
}

impl PeriodicGrid {
    /// Smallest resolution with distinct nearest and next-nearest neighbors
    /// in every central-difference stencil.
    pub const MIN_RESOLUTION: usize = 4;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_RESOLUTION {
            return Err(Error::Resolution {
                n,
                min: Self::MIN_RESOLUTION,
            });
        }
        Ok(PeriodicGrid { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Flat index of the vertex at lattice coordinates, which must already
    /// lie in `[0, n)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Lattice coordinates of a flat index.
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n;
        let j = (idx / self.n) % self.n;
        let i = idx / (self.n * self.n);
        [i, j, k]
    }

    /// Coordinates of a vertex in `[0,1)^3`.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.coords(idx);
        let h = self.h();
        [i as f64 * h, j as f64 * h, k as f64 * h]
    }

    /// Wraps a signed lattice coordinate into `[0, n)`.
    #[inline]
    pub fn wrap(&self, c: i64) -> usize {
        c.rem_euclid(self.n as i64) as usize
    }

    /// Neighbor of `idx` displaced `by` steps along `axis`, with periodic
    /// wrap-around.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, by: i64) -> usize {
        let mut c = self.coords(idx);
        c[axis] = self.wrap(c[axis] as i64 + by);
        self.index(c[0], c[1], c[2])
    }

    /// The eight corner vertices of the cell with minimum corner `cell`.
    pub fn cell_corners(&self, cell: usize) -> [usize; 8] {
        let [i, j, k] = self.coords(cell);
        let ip = (i + 1) % self.n;
        let jp = (j + 1) % self.n;
        let kp = (k + 1) % self.n;
        [
            self.index(i, j, k),
            self.index(i, j, kp),
            self.index(i, jp, k),
            self.index(i, jp, kp),
            self.index(ip, j, k),
            self.index(ip, j, kp),
            self.index(ip, jp, k),
            self.index(ip, jp, kp),
        ]
    }

    /// The four corner vertices of the face of cell `cell` normal to `axis`
    /// (the face containing the cell's minimum corner).
    pub fn face_corners(&self, cell: usize, axis: usize) -> [usize; 4] {
        let base = self.coords(cell);
        let (q, r) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut out = [0usize; 4];
        for (slot, (dq, dr)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let mut c = base;
            c[q] = (c[q] + dq) % self.n;
            c[r] = (c[r] + dr) % self.n;
            out[slot] = self.index(c[0], c[1], c[2]);
        }
        out
    }
}
