//! Finite periodic lattice standing in for `Z^d`, and the discrete Laplacian.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Flattened row-major site index.
pub type Site = usize;

/// The torus `(Z / L Z)^d`. Cloning is cheap; the neighbor table is shared.
#[derive(Clone)]
pub struct Lattice {
    dim: usize,
    side: usize,
    n_sites: usize,
    neighbors: Arc<[Site]>,
}

impl std::fmt::Debug for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lattice")
            .field("dim", &self.dim)
            .field("side", &self.side)
            .finish()
    }
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.side == other.side
    }
}

impl Eq for Lattice {}

impl Lattice {
    /// `side >= 3` so that the `2d` neighbors of a site are distinct.
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidLattice("dimension must be at least 1".into()));
        }
        if side < 3 {
            return Err(Error::InvalidLattice(format!(
                "side {side} < 3 produces duplicate neighbors"
            )));
        }
        let n_sites = side
            .checked_pow(dim as u32)
            .filter(|&n| n <= (1usize << 32))
            .ok_or_else(|| Error::InvalidLattice(format!("{side}^{dim} sites is too large")))?;

        let degree = 2 * dim;
        let mut table = vec![0usize; n_sites * degree];
        let mut coords = vec![0usize; dim];
        for site in 0..n_sites {
            decode(site, side, &mut coords);
            for axis in 0..dim {
                let stride = side.pow((dim - 1 - axis) as u32);
                let c = coords[axis];
                let up = if c + 1 == side { site - c * stride } else { site + stride };
                let down = if c == 0 { site + (side - 1) * stride } else { site - stride };
                table[site * degree + 2 * axis] = up;
                table[site * degree + 2 * axis + 1] = down;
            }
        }
        Ok(Self {
            dim,
            side,
            n_sites,
            neighbors: table.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Number of neighbors, `2d`.
    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    /// Number of undirected nearest-neighbor edges, `d L^d`.
    pub fn n_edges(&self) -> usize {
        self.dim * self.n_sites
    }

    /// The origin is site 0.
    pub fn origin(&self) -> Site {
        0
    }

    /// Neighbors in the order `+e_1, -e_1, +e_2, -e_2, ...`.
    pub fn neighbors(&self, site: Site) -> &[Site] {
        let degree = self.degree();
        &self.neighbors[site * degree..(site + 1) * degree]
    }

    /// Neighbor across direction `dir` (`2*axis` is `+`, `2*axis+1` is `-`).
    pub fn neighbor(&self, site: Site, dir: usize) -> Site {
        self.neighbors[site * self.degree() + dir]
    }

    pub fn coords(&self, site: Site) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        decode(site, self.side, &mut out);
        out
    }

    pub fn coords_into(&self, site: Site, out: &mut [usize]) {
        decode(site, self.side, out);
    }

    /// Site of canonical coordinates. Fails if any coordinate is `>= L`.
    pub fn site(&self, coords: &[usize]) -> Result<Site> {
        if coords.len() != self.dim || coords.iter().any(|&c| c >= self.side) {
            return Err(Error::InvalidLattice(format!(
                "coordinates {coords:?} are not canonical for side {}",
                self.side
            )));
        }
        Ok(coords.iter().fold(0, |acc, &c| acc * self.side + c))
    }

    /// Site of arbitrary integer coordinates, wrapped onto the torus.
    pub fn wrap(&self, coords: &[i64]) -> Site {
        debug_assert_eq!(coords.len(), self.dim);
        let l = self.side as i64;
        coords
            .iter()
            .fold(0, |acc, &c| acc * self.side + c.rem_euclid(l) as usize)
    }

    /// l1 distance on the torus.
    pub fn distance(&self, a: Site, b: Site) -> usize {
        let mut ca = vec![0; self.dim];
        let mut cb = vec![0; self.dim];
        decode(a, self.side, &mut ca);
        decode(b, self.side, &mut cb);
        ca.iter()
            .zip(&cb)
            .map(|(&x, &y)| {
                let d = x.abs_diff(y);
                d.min(self.side - d)
            })
            .sum()
    }

    /// l1 torus distance to the origin.
    pub fn norm(&self, site: Site) -> usize {
        self.distance(site, 0)
    }
}

fn decode(mut site: Site, side: usize, out: &mut [usize]) {
    for c in out.iter_mut().rev() {
        *c = site % side;
        site /= side;
    }
}

/// A real value per site.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    lattice: Lattice,
    values: Vec<f64>,
}

impl FieldSnapshot {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.n_sites() {
            return Err(Error::InvalidParameter {
                field: "values",
                reason: format!("{} values for {} sites", values.len(), lattice.n_sites()),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("site {i}: {}", values[i])));
        }
        Ok(Self { lattice, values })
    }

    pub fn constant(lattice: Lattice, value: f64) -> Result<Self> {
        let n = lattice.n_sites();
        Self::new(lattice, vec![value; n])
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, site: Site) -> f64 {
        self.values[site]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `(Δf)(x) = Σ_{y~x} [f(y) - f(x)]`.
pub fn laplacian_apply(field: &FieldSnapshot) -> FieldSnapshot {
    let mut out = vec![0.0; field.values.len()];
    laplacian_into(&field.lattice, &field.values, &mut out);
    FieldSnapshot {
        lattice: field.lattice.clone(),
        values: out,
    }
}

pub(crate) fn laplacian_into(lattice: &Lattice, f: &[f64], out: &mut [f64]) {
    let degree = lattice.degree() as f64;
    for (x, o) in out.iter_mut().enumerate() {
        let s: f64 = lattice.neighbors(x).iter().map(|&y| f[y]).sum();
        *o = s - degree * f[x];
    }
}
