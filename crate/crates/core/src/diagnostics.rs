//! Space-time block diagnostics: good/bad blocks, bad-block counts along
//! paths, mixing-event frequencies, the tail condition, N-sufficiency of
//! pedestal blocks and the regularity path statistic.
//!
//! Blocks live on the periodic lift of the torus: a spatial coordinate `z`
//! of `Z^d` refers to the site `z mod L`. The block scale `s = A^R` must be
//! an integer, and enumerating the block grid also needs `s | L`.
//!
//! Time windows are resolved exactly on the constancy intervals of the
//! trace, so "for all s" conditions involve no discretization.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::{sample_centered, EnvModelSpec, EnvTrace};
use crate::error::{invalid, Error, Result};
use crate::feynman_kac::{path_functional, sample_walk_with, Orientation, WalkPath, CHUNK};
use crate::lattice::{Lattice, Site};
use crate::rng::SeedTree;
use crate::stats::{mean, std_error, wilson95, z_quantile};

/// Upper bound on the number of path classes (or DP states) an exhaustive
/// search may visit.
pub const EXHAUSTIVE_BOUND: u128 = 1_000_000;

pub const MIXING_HEADER: &str = "A,R,C,b,c,n_env,frequency,ci_low,ci_high,reference_bound";
pub const TAIL_HEADER: &str = "R,C,alpha,n_samples,probability,ci_low,ci_high,bound";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "R")]
    pub r: u32,
    /// Box-sum threshold `C`; a box is over threshold when its sum exceeds `C A^{Rd}`.
    #[serde(rename = "C")]
    pub big_c: f64,
    pub b: u32,
    pub c: u32,
    /// Spatial width multiplier: 1 for ordinary blocks, `4M` for pedestal blocks.
    #[serde(default = "one")]
    pub width: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub x: Vec<i64>,
    pub k: u64,
}

impl BlockId {
    pub fn new(x: Vec<i64>, k: u64) -> Self {
        Self { x, k }
    }
}

impl BlockSpec {
    pub fn new(a: f64, r: u32, big_c: f64, b: u32, c: u32) -> Result<Self> {
        let spec = Self {
            a,
            r,
            big_c,
            b,
            c,
            width: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_width(mut self, width: f64) -> Result<Self> {
        self.width = width;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 1.0) {
            return Err(invalid("A", format!("must be > 1, got {}", self.a)));
        }
        if self.r == 0 {
            return Err(invalid("R", "must be a positive integer"));
        }
        if !(self.big_c.is_finite() && self.big_c >= 0.0) {
            return Err(invalid("C", format!("must be finite and >= 0, got {}", self.big_c)));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(invalid("width", format!("must be > 0, got {}", self.width)));
        }
        Ok(())
    }

    /// The next coarser level `R + 1`.
    pub fn coarser(&self) -> BlockSpec {
        BlockSpec { r: self.r + 1, ..self.clone() }
    }

    /// `A^R` as an integer.
    pub fn scale(&self) -> Result<usize> {
        self.validate()?;
        let s = self.a.powi(self.r as i32);
        let rounded = s.round();
        if (s - rounded).abs() > 1e-9 * s.max(1.0) || rounded > 1e12 {
            return Err(invalid("A", format!("A^R = {s} must be a (moderate) integer")));
        }
        Ok(rounded as usize)
    }

    pub fn threshold(&self, dim: usize) -> Result<f64> {
        Ok(self.big_c * (self.scale()? as f64).powi(dim as i32))
    }

    /// Time window `[(k - c) s, (k + 1) s)` of the extended block.
    pub fn time_window(&self, k: u64) -> Result<(f64, f64)> {
        let s = self.scale()? as f64;
        Ok(((k as f64 - f64::from(self.c)) * s, (k as f64 + 1.0) * s))
    }

    /// Integer points `[lo, hi]` (inclusive) of the extended spatial range
    /// along one axis.
    fn spatial_range(&self, xj: i64) -> Result<(i64, i64)> {
        let ws = self.width * self.scale()? as f64;
        let b = i64::from(self.b);
        let lo = ((xj - 1 - b) as f64 * ws).ceil() as i64;
        let hi = ((xj + 1 + b) as f64 * ws).ceil() as i64 - 1;
        Ok((lo, hi))
    }
}

fn check_window(trace: &EnvTrace, t0: f64, t1: f64, what: &str) -> Result<()> {
    if t0 < 0.0 || t1 > trace.horizon() {
        return Err(Error::BlockOutsideWindow(format!(
            "{what} time window [{t0}, {t1}) not inside [0, {}]",
            trace.horizon()
        )));
    }
    Ok(())
}

fn cartesian(ranges: &[(i64, i64)]) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::with_capacity(ranges.len())];
    for &(lo, hi) in ranges {
        let mut next = Vec::new();
        for prefix in &out {
            for v in lo..=hi {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Exact good/bad verdict of `B_R^A(x, k)` with respect to its extended block.
pub fn classify_block(trace: &EnvTrace, spec: &BlockSpec, id: &BlockId) -> Result<Verdict> {
    let lattice = trace.lattice();
    let d = lattice.dim();
    let s = spec.scale()?;
    if id.x.len() != d {
        return Err(invalid("block", format!("block coordinate has {} entries, lattice dimension is {d}", id.x.len())));
    }
    if s > lattice.side() {
        return Err(invalid("A", format!("box side A^R = {s} exceeds the torus side {}", lattice.side())));
    }
    let (t0, t1) = spec.time_window(id.k)?;
    check_window(trace, t0, t1, "extended block")?;

    let mut ranges = Vec::with_capacity(d);
    for &xj in &id.x {
        let (lo, hi) = spec.spatial_range(xj)?;
        let top = hi - s as i64 + 1;
        if top < lo {
            return Ok(Verdict::Good);
        }
        ranges.push((lo, top));
    }
    let offsets = cartesian(&vec![(0, s as i64 - 1); d]);
    let boxes: Vec<Vec<Site>> = cartesian(&ranges)
        .into_iter()
        .map(|y| {
            offsets
                .iter()
                .map(|o| {
                    let z: Vec<i64> = y.iter().zip(o).map(|(a, b)| a + b).collect();
                    lattice.wrap(&z)
                })
                .collect()
        })
        .collect();
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); lattice.n_sites()];
    for (i, bx) in boxes.iter().enumerate() {
        for &z in bx {
            owners[z].push(i);
        }
    }
    let thr = spec.threshold(d)?;
    let mut field: Vec<f64> = (0..lattice.n_sites()).map(|z| trace.value_at(z, t0)).collect();
    let over = |bx: &[Site], field: &[f64]| bx.iter().map(|&z| field[z]).sum::<f64>() > thr;
    if boxes.iter().any(|bx| over(bx, &field)) {
        return Ok(Verdict::Bad);
    }
    let events = trace.events();
    let start = events.partition_point(|e| e.time <= t0);
    let mut touched = vec![false; boxes.len()];
    let mut dirty = Vec::new();
    let mut i = start;
    while i < events.len() && events[i].time < t1 {
        let t = events[i].time;
        while i < events.len() && events[i].time == t {
            let e = &events[i];
            field[e.site] = e.value;
            for &bx in &owners[e.site] {
                if !touched[bx] {
                    touched[bx] = true;
                    dirty.push(bx);
                }
            }
            i += 1;
        }
        for bx in dirty.drain(..) {
            touched[bx] = false;
            if over(&boxes[bx], &field) {
                return Ok(Verdict::Bad);
            }
        }
    }
    Ok(Verdict::Good)
}

/// Verdicts of every block of one level on the periodic block grid.
#[derive(Debug, Clone)]
pub struct BlockGrid {
    spec: BlockSpec,
    dim: usize,
    side: usize,
    scale: usize,
    /// Grid cells per axis, `L / s`.
    cells: usize,
    /// Time indices `0..n_k` whose blocks end by the horizon.
    n_k: usize,
    /// `None` where the extended window starts before time 0.
    verdicts: Vec<Option<Verdict>>,
}

impl BlockGrid {
    pub fn build(trace: &EnvTrace, spec: &BlockSpec) -> Result<Self> {
        let lattice = trace.lattice();
        let s = spec.scale()?;
        let ws = spec.width * s as f64;
        if ws.fract() != 0.0 || lattice.side() % (ws as usize) != 0 {
            return Err(invalid("A", format!("block spacing {ws} must divide the torus side {}", lattice.side())));
        }
        let d = lattice.dim();
        let cells = lattice.side() / ws as usize;
        let n_k = (trace.horizon() / s as f64 + 1e-12).floor() as usize;
        let n_cells = cells.pow(d as u32);
        let verdicts = (0..n_k * n_cells)
            .into_par_iter()
            .map(|idx| {
                let k = (idx / n_cells) as u64;
                if k < u64::from(spec.c) {
                    return Ok(None);
                }
                let x = cell_coords(idx % n_cells, cells, d);
                classify_block(trace, spec, &BlockId::new(x, k)).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            dim: d,
            side: lattice.side(),
            scale: s,
            cells,
            n_k,
            verdicts,
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn n_times(&self) -> usize {
        self.n_k
    }

    pub fn n_cells(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn verdict(&self, cell: usize, k: usize) -> Option<Verdict> {
        if k >= self.n_k {
            return None;
        }
        self.verdicts[k * self.n_cells() + cell]
    }

    pub fn count_bad(&self) -> usize {
        self.verdicts.iter().filter(|v| **v == Some(Verdict::Bad)).count()
    }

    /// Cells whose inner block `[(x-1)s, (x+1)s)^d` contains the site with
    /// coordinates `z`, modulo `L`.
    fn cells_containing(&self, z: &[usize]) -> Vec<usize> {
        let per_axis: Vec<Vec<usize>> = z
            .iter()
            .map(|&zj| {
                (0..self.cells)
                    .filter(|&x| {
                        let lo = (x as i64 - 1) * self.scale as i64;
                        (zj as i64 - lo).rem_euclid(self.side as i64) < 2 * self.scale as i64
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0usize];
        let mut stride = 1;
        for axis in per_axis {
            out = out.iter().flat_map(|&base| axis.iter().map(move |&x| base + x * stride)).collect();
            stride *= self.cells;
        }
        out
    }

    /// Blocks `(k, cell)` whose inner block meets the path's space-time graph.
    pub fn crossed(&self, lattice: &Lattice, path: &WalkPath) -> BTreeSet<(usize, usize)> {
        let s = self.scale as f64;
        let mut out = BTreeSet::new();
        let n_pieces = path.sites.len();
        for (i, (site, from, to)) in path.pieces().enumerate() {
            let last = i + 1 == n_pieces;
            if !last && to <= from {
                continue;
            }
            let k0 = (from / s).floor() as usize;
            let k1 = if last { (to / s).floor() as usize } else { ((to / s).ceil() as usize).saturating_sub(1) };
            let cells = self.cells_containing(&lattice.coords(site));
            for k in k0..=k1.min(self.n_k.saturating_sub(1)) {
                if k >= self.n_k {
                    break;
                }
                for &c in &cells {
                    out.insert((k, c));
                }
            }
        }
        out
    }
}

fn cell_coords(mut idx: usize, cells: usize, d: usize) -> Vec<i64> {
    (0..d)
        .map(|_| {
            let v = idx % cells;
            idx /= cells;
            v as i64
        })
        .collect()
}

/// Number of bad blocks of the grid whose inner time window meets `[t0, t1)`.
/// Blocks that cannot be classified inside the simulated window are skipped.
pub fn count_bad_blocks(trace: &EnvTrace, spec: &BlockSpec, t0: f64, t1: f64) -> Result<usize> {
    let grid = BlockGrid::build(trace, spec)?;
    let s = grid.scale as f64;
    Ok((0..grid.n_k)
        .filter(|&k| (k as f64) * s < t1 && (k as f64 + 1.0) * s > t0)
        .map(|k| (0..grid.n_cells()).filter(|&c| grid.verdict(c, k) == Some(Verdict::Bad)).count())
        .sum())
}

/// Bad-block counts along one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct XiPsi {
    /// Bad R-blocks crossed.
    pub xi: usize,
    /// Good (R+1)-blocks crossed that contain a bad R-block.
    pub psi: usize,
    pub r_blocks_crossed: usize,
    pub coarse_good_crossed: usize,
    pub coarse_bad_crossed: usize,
}

/// Verdict grids at levels R and R+1, with the containment relation.
#[derive(Debug, Clone)]
pub struct TwoLevel {
    pub fine: BlockGrid,
    pub coarse: BlockGrid,
    coarse_has_bad: Vec<bool>,
}

impl TwoLevel {
    pub fn build(trace: &EnvTrace, spec: &BlockSpec) -> Result<Self> {
        if spec.width != 1.0 {
            return Err(invalid("width", "path counts use ordinary blocks (width 1)"));
        }
        let fine = BlockGrid::build(trace, spec)?;
        let coarse = BlockGrid::build(trace, &spec.coarser())?;
        let a = spec.a.round() as i64;
        let d = fine.dim;
        let mut coarse_has_bad = vec![false; coarse.verdicts.len()];
        for k in 0..coarse.n_k {
            for cell in 0..coarse.n_cells() {
                let y = cell_coords(cell, coarse.cells, d);
                let ranges: Vec<(i64, i64)> = y.iter().map(|&yj| ((yj - 1) * a + 1, (yj + 1) * a - 1)).collect();
                let mut found = false;
                'search: for kk in (k as i64 * a)..((k as i64 + 1) * a) {
                    for x in cartesian(&ranges) {
                        let idx = x.iter().rev().fold(0usize, |acc, &xj| {
                            acc * fine.cells + xj.rem_euclid(fine.cells as i64) as usize
                        });
                        if fine.verdict(idx, kk as usize) == Some(Verdict::Bad) {
                            found = true;
                            break 'search;
                        }
                    }
                }
                coarse_has_bad[k * coarse.n_cells() + cell] = found;
            }
        }
        Ok(Self {
            fine,
            coarse,
            coarse_has_bad,
        })
    }

    pub fn evaluate(&self, lattice: &Lattice, path: &WalkPath) -> XiPsi {
        let mut out = XiPsi::default();
        for (k, c) in self.fine.crossed(lattice, path) {
            out.r_blocks_crossed += 1;
            if self.fine.verdict(c, k) == Some(Verdict::Bad) {
                out.xi += 1;
            }
        }
        for (k, c) in self.coarse.crossed(lattice, path) {
            match self.coarse.verdict(c, k) {
                Some(Verdict::Good) => {
                    out.coarse_good_crossed += 1;
                    if self.coarse_has_bad[k * self.coarse.n_cells() + c] {
                        out.psi += 1;
                    }
                }
                Some(Verdict::Bad) => out.coarse_bad_crossed += 1,
                None => {}
            }
        }
        out
    }
}

pub fn xi_psi_for_path(trace: &EnvTrace, spec: &BlockSpec, path: &WalkPath) -> Result<XiPsi> {
    if path.end_time > trace.horizon() {
        return Err(Error::OutOfBounds {
            t: path.end_time,
            lo: 0.0,
            hi: trace.horizon(),
        });
    }
    if path.sites.iter().any(|&x| x >= trace.lattice().n_sites()) {
        return Err(invalid("path", "site outside the lattice"));
    }
    Ok(TwoLevel::build(trace, spec)?.evaluate(trace.lattice(), path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    Sampled { n: usize, seed: u64 },
}

/// Paths on `[0, t]` with exactly `jumps` jumps, confined to the box
/// `[-C1 t log t, C1 t log t]^d` (whole torus when `c1` is `None`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpFamily {
    pub jumps: usize,
    pub t: f64,
    pub c1: Option<f64>,
}

impl JumpFamily {
    fn allowed(&self, lattice: &Lattice) -> Vec<bool> {
        let radius = match self.c1 {
            None => f64::INFINITY,
            Some(c1) => (c1 * self.t * self.t.ln()).max(0.0),
        };
        let l = lattice.side();
        (0..lattice.n_sites())
            .map(|x| lattice.coords(x).iter().all(|&c| (c.min(l - c)) as f64 <= radius))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupXiPsi {
    pub xi: usize,
    pub psi: usize,
    /// True only for an exhaustive search; sampled values are lower bounds.
    pub exact: bool,
    pub paths_evaluated: u128,
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Suprema of Ξ and Ψ over a jump-count path family.
///
/// A path's counts depend only on its start, its steps and the time slab
/// of length `A^R` that holds each jump. A jump placed exactly on a slab
/// boundary crosses a subset of the blocks crossed by a nearby interior
/// placement, and both counts are monotone in the crossed set, so the
/// exhaustive search visits one interior representative per class.
pub fn sup_xi_psi(trace: &EnvTrace, spec: &BlockSpec, family: &JumpFamily, mode: SearchMode) -> Result<SupXiPsi> {
    let lattice = trace.lattice();
    if !(family.t > 0.0 && family.t <= trace.horizon()) {
        return Err(Error::OutOfBounds {
            t: family.t,
            lo: 0.0,
            hi: trace.horizon(),
        });
    }
    let levels = TwoLevel::build(trace, spec)?;
    let allowed = family.allowed(lattice);
    let starts: Vec<Site> = (0..lattice.n_sites()).filter(|&x| allowed[x]).collect();
    if starts.is_empty() {
        return Ok(SupXiPsi {
            xi: 0,
            psi: 0,
            exact: matches!(mode, SearchMode::Exhaustive),
            paths_evaluated: 0,
        });
    }
    let s = spec.scale()? as f64;
    let t = family.t;
    let j = family.jumps;
    match mode {
        SearchMode::Exhaustive => {
            let slabs = (t / s).ceil() as u128;
            let count = (starts.len() as u128)
                .saturating_mul((lattice.degree() as u128).saturating_pow(j as u32))
                .saturating_mul(binomial(slabs + j as u128 - 1, j as u128));
            if count > EXHAUSTIVE_BOUND {
                return Err(Error::EnumerationBound {
                    count,
                    bound: EXHAUSTIVE_BOUND,
                });
            }
            let ctx = Enumerator {
                lattice,
                levels: &levels,
                allowed: &allowed,
                j,
                t,
                s,
                slabs: slabs as usize,
            };
            let best = starts
                .par_iter()
                .map(|&x0| {
                    let mut acc = (0usize, 0usize, 0u128);
                    let mut sites = vec![x0];
                    let mut slab_of = Vec::with_capacity(j);
                    ctx.walk(&mut sites, &mut slab_of, &mut acc);
                    acc
                })
                .reduce(|| (0, 0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2 + b.2));
            Ok(SupXiPsi {
                xi: best.0,
                psi: best.1,
                exact: true,
                paths_evaluated: best.2,
            })
        }
        SearchMode::Sampled { n, seed } => {
            let tree = SeedTree::new(seed);
            let n_chunks = n.div_ceil(CHUNK);
            let best = (0..n_chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = tree.stream("paths", c as u64);
                    let mut acc = (0usize, 0usize, 0u128);
                    for _ in 0..CHUNK.min(n - c * CHUNK) {
                        let mut x = starts[rng.random_range(0..starts.len())];
                        let mut sites = vec![x];
                        let mut ok = true;
                        for _ in 0..j {
                            let options: Vec<Site> = lattice.neighbors(x).iter().copied().filter(|&y| allowed[y]).collect();
                            if options.is_empty() {
                                ok = false;
                                break;
                            }
                            x = options[rng.random_range(0..options.len())];
                            sites.push(x);
                        }
                        if !ok {
                            continue;
                        }
                        let mut times: Vec<f64> = (0..j).map(|_| rng.random::<f64>() * t).collect();
                        times.sort_by(f64::total_cmp);
                        let path = WalkPath {
                            jump_times: times,
                            sites,
                            end_time: t,
                        };
                        let r = levels.evaluate(lattice, &path);
                        acc = (acc.0.max(r.xi), acc.1.max(r.psi), acc.2 + 1);
                    }
                    acc
                })
                .reduce(|| (0, 0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2 + b.2));
            Ok(SupXiPsi {
                xi: best.0,
                psi: best.1,
                exact: false,
                paths_evaluated: best.2,
            })
        }
    }
}

struct Enumerator<'a> {
    lattice: &'a Lattice,
    levels: &'a TwoLevel,
    allowed: &'a [bool],
    j: usize,
    t: f64,
    s: f64,
    slabs: usize,
}

impl Enumerator<'_> {
    fn walk(&self, sites: &mut Vec<Site>, slab_of: &mut Vec<usize>, acc: &mut (usize, usize, u128)) {
        if slab_of.len() == self.j {
            let jump_times = slab_of
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    let lo = m as f64 * self.s;
                    let hi = ((m + 1) as f64 * self.s).min(self.t);
                    lo + (hi - lo) * (i + 1) as f64 / (self.j + 1) as f64
                })
                .collect();
            let path = WalkPath {
                jump_times,
                sites: sites.clone(),
                end_time: self.t,
            };
            let r = self.levels.evaluate(self.lattice, &path);
            acc.0 = acc.0.max(r.xi);
            acc.1 = acc.1.max(r.psi);
            acc.2 += 1;
            return;
        }
        let x = *sites.last().expect("nonempty");
        let first_slab = slab_of.last().copied().unwrap_or(0);
        for &y in self.lattice.neighbors(x) {
            if !self.allowed[y] {
                continue;
            }
            sites.push(y);
            for m in first_slab..self.slabs {
                slab_of.push(m);
                self.walk(sites, slab_of, acc);
                slab_of.pop();
            }
            sites.pop();
        }
    }
}

/// Whether `B_{R+1}(y, l)` is good but contains a bad R-block.
pub fn mixing_event(trace: &EnvTrace, spec: &BlockSpec, coarse_id: &BlockId) -> Result<bool> {
    let coarse = spec.coarser();
    if classify_block(trace, &coarse, coarse_id)? == Verdict::Bad {
        return Ok(false);
    }
    let a = coarse.a.round() as i64;
    if (coarse.a - a as f64).abs() > 1e-12 {
        return Err(invalid("A", "containment of blocks needs an integer A"));
    }
    let ranges: Vec<(i64, i64)> = coarse_id.x.iter().map(|&yj| ((yj - 1) * a + 1, (yj + 1) * a - 1)).collect();
    let k0 = coarse_id.k as i64 * a;
    for k in k0..k0 + a {
        if k < i64::from(spec.c) {
            continue;
        }
        for x in cartesian(&ranges) {
            if classify_block(trace, spec, &BlockId::new(x, k as u64))? == Verdict::Bad {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub spec: BlockSpec,
    pub n_env: usize,
    pub trials: usize,
    pub successes: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `(A^{1+2d})^{-R(1+d)}`, the mixing bound with `K = 1`, `n = 1`.
    pub reference_bound: f64,
}

/// Frequency of the mixing event over independent environments, each
/// probed at `blocks_per_env` random (R+1)-block positions. The Wilson
/// interval treats all probes as independent.
pub fn mixing_event_frequency(
    spec: &BlockSpec,
    env: &EnvModelSpec,
    lattice: &Lattice,
    n_env: usize,
    blocks_per_env: usize,
    seed: u64,
) -> Result<MixingReport> {
    if n_env == 0 || blocks_per_env == 0 {
        return Err(invalid("n_env", "need at least one environment and one block"));
    }
    let coarse = spec.coarser();
    let big_s = coarse.scale()?;
    if lattice.side() % big_s != 0 {
        return Err(invalid("A", format!("A^(R+1) = {big_s} must divide the torus side {}", lattice.side())));
    }
    let cells = (lattice.side() / big_s) as i64;
    let horizon = (f64::from(spec.c) + 1.0) * big_s as f64;
    let tree = SeedTree::new(seed);
    let hits = (0..n_env)
        .into_par_iter()
        .map(|i| {
            let trace = sample_centered(env, lattice, horizon, tree.derive("env", i as u64))?;
            let mut rng = tree.stream("blocks", i as u64);
            let mut hits = 0usize;
            for _ in 0..blocks_per_env {
                let x: Vec<i64> = (0..lattice.dim()).map(|_| rng.random_range(0..cells)).collect();
                if mixing_event(&trace, spec, &BlockId::new(x, u64::from(spec.c)))? {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    let trials = n_env * blocks_per_env;
    let (lo, hi) = wilson95(hits, trials);
    let d = lattice.dim() as f64;
    Ok(MixingReport {
        spec: spec.clone(),
        n_env,
        trials,
        successes: hits,
        frequency: hits as f64 / trials as f64,
        ci_low: lo,
        ci_high: hi,
        reference_bound: spec.a.powf(1.0 + 2.0 * d).powf(-(f64::from(spec.r)) * (1.0 + d)),
    })
}

pub fn write_mixing_csv<W: Write>(rows: &[MixingReport], mut out: W) -> Result<()> {
    writeln!(out, "{MIXING_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.spec.a, r.spec.r, r.spec.big_c, r.spec.b, r.spec.c, r.n_env, r.frequency, r.ci_low, r.ci_high, r.reference_bound
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub alpha: f64,
    pub n_samples: usize,
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `|B_R|^{-α}`.
    pub bound: f64,
}

/// Sup over `s ∈ [0, 1]` of the mean of `ξ(·, s)` over `B_R = [-R, R]^d`.
pub fn box_average_sup(trace: &EnvTrace, r: usize) -> Result<f64> {
    let lattice = trace.lattice();
    if 2 * r + 1 > lattice.side() {
        return Err(invalid("R", format!("[-{r}, {r}]^d does not fit in a torus of side {}", lattice.side())));
    }
    if trace.horizon() < 1.0 {
        return Err(Error::OutOfBounds {
            t: 1.0,
            lo: 0.0,
            hi: trace.horizon(),
        });
    }
    let d = lattice.dim();
    let members: Vec<Site> = cartesian(&vec![(-(r as i64), r as i64); d]).iter().map(|z| lattice.wrap(z)).collect();
    let mut inside = vec![false; lattice.n_sites()];
    members.iter().for_each(|&z| inside[z] = true);
    let size = members.len() as f64;
    let mut field = trace.initial().to_vec();
    let avg = |field: &[f64]| members.iter().map(|&z| field[z]).sum::<f64>() / size;
    let mut best = avg(&field);
    for group in trace.event_groups() {
        if group[0].time > 1.0 {
            break;
        }
        let mut changed = false;
        for e in group {
            field[e.site] = e.value;
            changed |= inside[e.site];
        }
        if changed {
            best = best.max(avg(&field));
        }
    }
    Ok(best)
}

pub fn tail_condition_check(
    env: &EnvModelSpec,
    lattice: &Lattice,
    r_list: &[usize],
    c_list: &[f64],
    alpha: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<TailRow>> {
    if n_samples == 0 || r_list.is_empty() || c_list.is_empty() {
        return Err(invalid("n_samples", "need samples, R values and C values"));
    }
    if let Some(&r) = r_list.iter().find(|&&r| 2 * r + 1 > lattice.side()) {
        return Err(invalid("R", format!("[-{r}, {r}]^d does not fit in a torus of side {}", lattice.side())));
    }
    let tree = SeedTree::new(seed);
    let sups: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let trace = sample_centered(env, lattice, 1.0, tree.derive("env", i as u64))?;
            r_list.iter().map(|&r| box_average_sup(&trace, r)).collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (ri, &r) in r_list.iter().enumerate() {
        let volume = ((2 * r + 1) as f64).powi(lattice.dim() as i32);
        for &c in c_list {
            // ties up to rounding of the box average count as exceedances
            let tol = 1e-12 * c.abs().max(1.0);
            let hits = sups.iter().filter(|row| row[ri] >= c - tol).count();
            let (lo, hi) = wilson95(hits, n_samples);
            rows.push(TailRow {
                r,
                big_c: c,
                alpha,
                n_samples,
                probability: hits as f64 / n_samples as f64,
                ci_low: lo,
                ci_high: hi,
                bound: volume.powf(-alpha),
            });
        }
    }
    Ok(rows)
}

pub fn write_tail_csv<W: Write>(rows: &[TailRow], mut out: W) -> Result<()> {
    writeln!(out, "{TAIL_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.r, r.big_c, r.alpha, r.n_samples, r.probability, r.ci_low, r.ci_high, r.bound
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sufficiency {
    Sufficient,
    Insufficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestalSite {
    pub site: Site,
    pub estimate: f64,
    pub std_error: f64,
    /// One-sided 95% upper bound.
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    pub verdict: Sufficiency,
    /// `exp((λ + ε) A^R)`.
    pub threshold: f64,
    pub sites: Vec<PedestalSite>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyParams {
    pub kappa: f64,
    /// Truncation level: ξ is clamped to `[-N, N]`.
    pub n_trunc: f64,
    pub lambda_ref: f64,
    pub eps: f64,
    /// Jump cap per unit time; also fixes the width `4M`.
    pub m: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Subpedestal sites of the pedestal block `B̂_R^A(x, k)`: along every axis,
/// points at distance at least `2M A^R` from both faces of the spatial
/// projection, at time `k A^R`.
pub fn subpedestal(lattice: &Lattice, spec: &BlockSpec, x: &[i64], m: f64) -> Result<Vec<Site>> {
    let s = spec.scale()? as f64;
    let ws = 4.0 * m * s;
    let margin = 2.0 * m * s;
    let mut ranges = Vec::with_capacity(x.len());
    for &xj in x {
        let lo = ((xj - 1) as f64 * ws).ceil();
        let hi = ((xj + 1) as f64 * ws).ceil() - 1.0;
        let a = (lo + margin).ceil() as i64;
        let b = (hi - margin).floor() as i64;
        if b < a {
            return Ok(Vec::new());
        }
        ranges.push((a, b));
    }
    let set: BTreeSet<Site> = cartesian(&ranges).iter().map(|z| lattice.wrap(z)).collect();
    Ok(set.into_iter().collect())
}

/// N-sufficiency of a pedestal block by Monte Carlo over the capped,
/// truncated forward Feynman-Kac weight at each subpedestal site.
pub fn classify_sufficient(trace: &EnvTrace, spec: &BlockSpec, id: &BlockId, p: &SufficiencyParams) -> Result<SufficiencyReport> {
    let lattice = trace.lattice();
    if id.x.len() != lattice.dim() {
        return Err(invalid("block", "block coordinate does not match the lattice dimension"));
    }
    if !(p.m > 0.0 && p.m.is_finite()) {
        return Err(invalid("M", "must be > 0"));
    }
    if (spec.width - 4.0 * p.m).abs() > 1e-12 {
        return Err(invalid("width", format!("pedestal blocks need width 4M = {}, got {}", 4.0 * p.m, spec.width)));
    }
    if !(p.n_trunc >= 0.0 && p.kappa >= 0.0 && p.n_samples > 0) {
        return Err(invalid("N", "need N >= 0, kappa >= 0 and at least one sample"));
    }
    let s = spec.scale()? as f64;
    let t0 = id.k as f64 * s;
    check_window(trace, t0, t0 + s, "pedestal block")?;
    let sites = subpedestal(lattice, spec, &id.x, p.m)?;
    let truncated = trace.map_values(|v| v.clamp(-p.n_trunc, p.n_trunc));
    let cap = (p.m * s).floor() as usize;
    let threshold = ((p.lambda_ref + p.eps) * s).exp();
    let z = z_quantile(0.95);
    let tree = SeedTree::new(p.seed);
    let results = sites
        .par_iter()
        .map(|&y| {
            let site_tree = tree.child("pedestal", y as u64);
            let mut weights = Vec::with_capacity(p.n_samples);
            for c in 0..p.n_samples.div_ceil(CHUNK) {
                let mut rng = site_tree.stream("walk", c as u64);
                for _ in 0..CHUNK.min(p.n_samples - c * CHUNK) {
                    let path = sample_walk_with(lattice, p.kappa, y, s, &mut rng);
                    weights.push(if path.n_jumps() <= cap {
                        path_functional(&truncated, &path, 0.0, s, t0, Orientation::Forward)?.exp()
                    } else {
                        0.0
                    });
                }
            }
            let hits = weights.iter().filter(|&&w| w > 0.0).count();
            if hits == 0 {
                return Err(Error::Degenerate {
                    hits,
                    n_samples: p.n_samples,
                });
            }
            let est = mean(&weights);
            let se = std_error(&weights);
            Ok(PedestalSite {
                site: y,
                estimate: est,
                std_error: se,
                upper: est + z * se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verdict = if results.iter().all(|r| r.upper <= threshold) {
        Sufficiency::Sufficient
    } else {
        Sufficiency::Insufficient
    };
    Ok(SufficiencyReport {
        verdict,
        threshold,
        sites: results,
    })
}

/// Paths on `[0, nt]` that sit still on every `[(j-1)t+1, jt)`, visiting
/// sites of norm at most `J` with at most `J` jumps in total, where
/// `J = nt / log(1/κ)^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityFamily {
    pub n: usize,
    pub t: f64,
    pub kappa: f64,
    pub b: f64,
}

impl RegularityFamily {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be >= 1"));
        }
        if !(self.t > 1.0 && self.t.is_finite()) {
            return Err(invalid("t", "must exceed 1"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(invalid("kappa", "must lie in (0, 1)"));
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(invalid("b", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Jump and norm budget `floor(nt / log(1/κ)^b)`.
    pub fn budget(&self) -> usize {
        let total = self.n as f64 * self.t;
        (total / (1.0 / self.kappa).ln().powf(self.b)).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityResult {
    pub value: f64,
    pub exact: bool,
    /// Site held on each segment by the best path found.
    pub sites: Vec<Site>,
}

/// `sup (1/nt) Σ_j ∫_{(j-1)t+1}^{jt} ξ(x_j, s) ds` over the family, with
/// jumps counted as torus distances between consecutive `x_j`.
pub fn regularity_statistic(trace: &EnvTrace, family: &RegularityFamily, mode: SearchMode) -> Result<RegularityResult> {
    family.validate()?;
    let total = family.n as f64 * family.t;
    if total > trace.horizon() {
        return Err(Error::OutOfBounds {
            t: total,
            lo: 0.0,
            hi: trace.horizon(),
        });
    }
    let lattice = trace.lattice();
    let budget = family.budget();
    let allowed: Vec<Site> = (0..lattice.n_sites()).filter(|&x| lattice.norm(x) <= budget).collect();
    let t = family.t;
    let seg: Vec<Vec<f64>> = (1..=family.n)
        .map(|j| {
            let (a, b) = ((j - 1) as f64 * t + 1.0, j as f64 * t);
            allowed.iter().map(|&x| trace.integral_unchecked(x, a, b)).collect()
        })
        .collect();
    let dist: Vec<Vec<usize>> = allowed.iter().map(|&x| allowed.iter().map(|&y| lattice.distance(x, y)).collect()).collect();
    match mode {
        SearchMode::Exhaustive => {
            let states = (family.n as u128) * (allowed.len() as u128) * (budget as u128 + 1);
            if states > EXHAUSTIVE_BOUND {
                return Err(Error::EnumerationBound {
                    count: states,
                    bound: EXHAUSTIVE_BOUND,
                });
            }
            let na = allowed.len();
            let width = budget + 1;
            // best[x * width + m]: best partial sum ending at x with m jumps used
            let mut best = vec![f64::NEG_INFINITY; na * width];
            let mut parents: Vec<Vec<usize>> = Vec::with_capacity(family.n);
            for x in 0..na {
                best[x * width] = seg[0][x];
            }
            parents.push(vec![usize::MAX; na * width]);
            for segj in seg.iter().skip(1) {
                let mut next = vec![f64::NEG_INFINITY; na * width];
                let mut parent = vec![usize::MAX; na * width];
                for x in 0..na {
                    for m in 0..width {
                        let v = best[x * width + m];
                        if v == f64::NEG_INFINITY {
                            continue;
                        }
                        for y in 0..na {
                            let mm = m + dist[x][y];
                            if mm > budget {
                                continue;
                            }
                            let cand = v + segj[y];
                            if cand > next[y * width + mm] {
                                next[y * width + mm] = cand;
                                parent[y * width + mm] = x * width + m;
                            }
                        }
                    }
                }
                best = next;
                parents.push(parent);
            }
            let (mut arg, value) = best
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, av), (i, &v)| if v > av { (i, v) } else { (ai, av) });
            let mut sites = vec![0; family.n];
            for j in (0..family.n).rev() {
                sites[j] = allowed[arg / width];
                arg = parents[j][arg];
            }
            Ok(RegularityResult {
                value: value / total,
                exact: true,
                sites,
            })
        }
        SearchMode::Sampled { n, seed } => {
            let mut rng = SeedTree::new(seed).stream("regularity", 0);
            let mut best = (f64::NEG_INFINITY, Vec::new());
            for _ in 0..n {
                let mut idx = rng.random_range(0..allowed.len());
                let mut used = 0;
                let mut acc = seg[0][idx];
                let mut seq = vec![idx];
                for segj in seg.iter().skip(1) {
                    let options: Vec<usize> = (0..allowed.len()).filter(|&y| used + dist[idx][y] <= budget).collect();
                    let y = options[rng.random_range(0..options.len())];
                    used += dist[idx][y];
                    acc += segj[y];
                    idx = y;
                    seq.push(y);
                }
                if acc > best.0 {
                    best = (acc, seq);
                }
            }
            Ok(RegularityResult {
                value: best.0 / total,
                exact: false,
                sites: best.1.into_iter().map(|i| allowed[i]).collect(),
            })
        }
    }
}
