//! Level sets `{x : q(x) <= α}` and wrap-around spanning on the torus.
//!
//! A cluster spans when it contains a closed loop with nonzero winding
//! number in some axis. The union-find below stores, for every site, its
//! lifted displacement from its parent, so closing a loop reveals the
//! winding directly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::environments::EnvTrace;
use crate::error::{invalid, Result};
use crate::lattice::{FieldSnapshot, Lattice, Site};

pub const PROFILE_HEADER: &str = "alpha,largest_fraction,n_components,spanning";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub alpha: f64,
    /// Component sizes, largest first.
    pub sizes: Vec<usize>,
    pub largest_fraction: f64,
    pub spanning: bool,
}

impl ComponentReport {
    pub fn n_components(&self) -> usize {
        self.sizes.len()
    }

    pub fn occupied(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Incremental union-find over sites activated in increasing value order.
#[derive(Debug, Clone)]
pub struct LevelSetSweep {
    lattice: Lattice,
    order: Vec<Site>,
    values: Vec<f64>,
    next: usize,
    active: Vec<bool>,
    parent: Vec<u32>,
    // lifted displacement of a site from its parent, dim entries per site
    offset: Vec<i32>,
    size: Vec<u32>,
    spans: Vec<bool>,
    alpha: f64,
}

impl LevelSetSweep {
    pub fn new(snapshot: &FieldSnapshot) -> Self {
        let lattice = snapshot.lattice().clone();
        let n = lattice.n_sites();
        let values = snapshot.values().to_vec();
        let mut order: Vec<Site> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        LevelSetSweep {
            order,
            values,
            next: 0,
            active: vec![false; n],
            parent: (0..n as u32).collect(),
            offset: vec![0; n * lattice.dim()],
            size: vec![1; n],
            spans: vec![false; n],
            alpha: f64::NEG_INFINITY,
            lattice,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Root of `x` and the lifted position of `x` relative to it.
    fn find(&mut self, x: Site, pos: &mut [i32]) -> Site {
        let d = self.lattice.dim();
        pos.iter_mut().for_each(|p| *p = 0);
        let mut path = Vec::new();
        let mut cur = x;
        while self.parent[cur] as usize != cur {
            path.push(cur);
            cur = self.parent[cur] as usize;
        }
        let root = cur;
        // compress: walk back from the node nearest the root
        let mut acc = vec![0i32; d];
        for &node in path.iter().rev() {
            for k in 0..d {
                acc[k] += self.offset[node * d + k];
                self.offset[node * d + k] = acc[k];
            }
            self.parent[node] = root as u32;
        }
        if !path.is_empty() {
            pos.copy_from_slice(&self.offset[x * d..x * d + d]);
        }
        root
    }

    fn join(&mut self, a: Site, b: Site, axis: usize, step: i32) {
        let d = self.lattice.dim();
        let mut pa = vec![0i32; d];
        let mut pb = vec![0i32; d];
        let ra = self.find(a, &mut pa);
        let rb = self.find(b, &mut pb);
        // lifted position of b relative to ra, reached through this edge
        pa[axis] += step;
        if ra == rb {
            if pa != pb {
                self.spans[ra] = true;
            }
            return;
        }
        let (big, small, sign) = if self.size[ra] >= self.size[rb] { (ra, rb, 1) } else { (rb, ra, -1) };
        for k in 0..d {
            // position of rb relative to ra is pa - pb
            self.offset[small * d + k] = sign * (pa[k] - pb[k]);
        }
        self.parent[small] = big as u32;
        self.size[big] += self.size[small];
        self.spans[big] = self.spans[big] || self.spans[small];
    }

    /// Activate every site with value `<= alpha`. `alpha` must not decrease.
    pub fn advance_to(&mut self, alpha: f64) {
        assert!(alpha >= self.alpha, "level sweep must move upward");
        self.alpha = alpha;
        let d = self.lattice.dim();
        while self.next < self.order.len() && self.values[self.order[self.next]] <= alpha {
            let x = self.order[self.next];
            self.next += 1;
            self.active[x] = true;
            for dir in 0..2 * d {
                let y = self.lattice.neighbor(x, dir);
                if self.active[y] {
                    let step = if dir % 2 == 0 { 1 } else { -1 };
                    self.join(x, y, dir / 2, step);
                }
            }
        }
    }

    /// Component label of every site (root index), `None` outside the level set.
    pub fn labels(&mut self) -> Vec<Option<Site>> {
        let d = self.lattice.dim();
        let mut scratch = vec![0i32; d];
        (0..self.lattice.n_sites())
            .map(|x| self.active[x].then(|| self.find(x, &mut scratch)))
            .collect()
    }

    pub fn report(&self) -> ComponentReport {
        let n = self.lattice.n_sites();
        let mut sizes = Vec::new();
        let mut spanning = false;
        for x in 0..n {
            if self.active[x] && self.parent[x] as usize == x {
                sizes.push(self.size[x] as usize);
                spanning |= self.spans[x];
            }
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        ComponentReport {
            alpha: self.alpha,
            largest_fraction: sizes.first().map_or(0.0, |&s| s as f64 / n as f64),
            sizes,
            spanning,
        }
    }
}

pub fn level_set_components(snapshot: &FieldSnapshot, alpha: f64) -> ComponentReport {
    let mut sweep = LevelSetSweep::new(snapshot);
    sweep.advance_to(alpha);
    sweep.report()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercolationProfile {
    pub reports: Vec<ComponentReport>,
    /// First grid level whose level set spans.
    pub threshold: Option<f64>,
    /// Fraction of sites in the level set at the threshold.
    pub threshold_density: Option<f64>,
}

impl PercolationProfile {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{PROFILE_HEADER}")?;
        for r in &self.reports {
            writeln!(out, "{},{},{},{}", r.alpha, r.largest_fraction, r.n_components(), r.spanning)?;
        }
        Ok(())
    }
}

pub fn snapshot_profile(snapshot: &FieldSnapshot, alpha_grid: &[f64]) -> Result<PercolationProfile> {
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| a.is_nan()) || alpha_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("alpha_grid", "must be nonempty and sorted"));
    }
    let n = snapshot.lattice().n_sites() as f64;
    let mut sweep = LevelSetSweep::new(snapshot);
    let mut reports = Vec::with_capacity(alpha_grid.len());
    let mut threshold = None;
    let mut threshold_density = None;
    for &a in alpha_grid {
        sweep.advance_to(a);
        let r = sweep.report();
        if r.spanning && threshold.is_none() {
            threshold = Some(a);
            threshold_density = Some(r.occupied() as f64 / n);
        }
        reports.push(r);
    }
    Ok(PercolationProfile {
        reports,
        threshold,
        threshold_density,
    })
}

/// Profile of the level sets of `q^T(x) = sup_{0<=t<=T} ξ(x,t)`.
pub fn percolation_profile(trace: &EnvTrace, t: f64, alpha_grid: &[f64]) -> Result<PercolationProfile> {
    let q = trace.sup_field(t)?;
    snapshot_profile(&q, alpha_grid)
}
