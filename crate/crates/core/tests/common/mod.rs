//! Brute-force oracles and instance generators shared by the integration
//! tests. Everything here works straight from the definitions, on d = 1,
//! without the incremental bookkeeping of the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use pamlab::environments::{EnvModelSpec, EnvTrace, Event};
use pamlab::feynman_kac::WalkPath;
use pamlab::rng::stream_from_seed;
use pamlab::{FieldSnapshot, Lattice};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct Params {
    pub a: usize,
    pub r: u32,
    pub big_c: f64,
    pub b: i64,
    pub c: i64,
}

impl Params {
    pub fn s(&self) -> i64 {
        self.a.pow(self.r) as i64
    }

    pub fn coarse(&self) -> Params {
        Params { r: self.r + 1, ..*self }
    }
}

fn wrap(l: i64, z: i64) -> usize {
    z.rem_euclid(l) as usize
}

/// Every time in `[t0, t1)` at which some site may change, plus `t0`.
fn breakpoints(trace: &EnvTrace, t0: f64, t1: f64) -> Vec<f64> {
    let mut ts = vec![t0];
    ts.extend(trace.events().iter().map(|e| e.time).filter(|&t| t > t0 && t < t1));
    ts.dedup();
    ts
}

/// `Some(true)` for a bad block, `None` when the extended window leaves `[0, horizon]`.
pub fn classify(trace: &EnvTrace, p: Params, x: i64, k: i64) -> Option<bool> {
    let s = p.s();
    let l = trace.lattice().side() as i64;
    let (t0, t1) = (((k - p.c) * s) as f64, ((k + 1) * s) as f64);
    if t0 < 0.0 || t1 > trace.horizon() {
        return None;
    }
    let lo = (x - 1 - p.b) * s;
    let hi = (x + 1 + p.b) * s; // exclusive
    let thr = p.big_c * s as f64;
    for tb in breakpoints(trace, t0, t1) {
        let mut y = lo;
        while y + s <= hi {
            let sum: f64 = (y..y + s).map(|z| trace.query(wrap(l, z), tb).unwrap()).sum();
            if sum > thr {
                return Some(true);
            }
            y += 1;
        }
    }
    Some(false)
}

/// All verdicts of one level: `(cell, k) -> bad`.
pub fn verdict_table(trace: &EnvTrace, p: Params) -> BTreeMap<(i64, i64), bool> {
    let s = p.s();
    let l = trace.lattice().side() as i64;
    let mut out = BTreeMap::new();
    let mut k = 0;
    while ((k + 1) * s) as f64 <= trace.horizon() {
        for x in 0..l / s {
            if let Some(bad) = classify(trace, p, x, k) {
                out.insert((x, k), bad);
            }
        }
        k += 1;
    }
    out
}

pub fn count_bad(trace: &EnvTrace, p: Params, t0: f64, t1: f64) -> usize {
    let s = p.s() as f64;
    verdict_table(trace, p)
        .iter()
        .filter(|(&(_, k), &bad)| bad && (k as f64) * s < t1 && (k as f64 + 1.0) * s > t0)
        .count()
}

/// Blocks `(cell, k)` of scale `s`, with `(k+1)s <= horizon`, met by the path.
pub fn crossed(l: i64, horizon: f64, s: i64, path: &WalkPath) -> BTreeSet<(i64, i64)> {
    let mut out = BTreeSet::new();
    let pieces: Vec<(usize, f64, f64)> = path.pieces().collect();
    let mut k = 0;
    while ((k + 1) * s) as f64 <= horizon {
        let (w0, w1) = ((k * s) as f64, ((k + 1) * s) as f64);
        for x in 0..l / s {
            let hit = pieces.iter().enumerate().any(|(i, &(z, from, to))| {
                let last = i + 1 == pieces.len();
                let time_ok = if last { from < w1 && to >= w0 } else { to > from && from < w1 && to > w0 };
                let space_ok = (-3..=3).any(|m| {
                    let lifted = z as i64 + m * l;
                    (x - 1) * s <= lifted && lifted < (x + 1) * s
                });
                time_ok && space_ok
            });
            if hit {
                out.insert((x, k));
            }
        }
        k += 1;
    }
    out
}

pub struct Tables {
    pub fine: BTreeMap<(i64, i64), bool>,
    pub coarse: BTreeMap<(i64, i64), bool>,
    /// Coarse blocks containing a bad fine block.
    pub coarse_has_bad: BTreeSet<(i64, i64)>,
}

pub fn tables(trace: &EnvTrace, p: Params) -> Tables {
    let l = trace.lattice().side() as i64;
    let fine = verdict_table(trace, p);
    let coarse = verdict_table(trace, p.coarse());
    let (s, big) = (p.s(), p.coarse().s());
    let mut coarse_has_bad = BTreeSet::new();
    for &(y, kk) in coarse.keys() {
        let contains = fine.iter().any(|(&(x, k), &bad)| {
            let time_in = k * s >= kk * big && (k + 1) * s <= (kk + 1) * big;
            let space_in = (-3..=3).any(|m| {
                let xl = x + m * (l / s);
                (xl - 1) * s >= (y - 1) * big && (xl + 1) * s <= (y + 1) * big
            });
            bad && time_in && space_in
        });
        if contains {
            coarse_has_bad.insert((y, kk));
        }
    }
    Tables {
        fine,
        coarse,
        coarse_has_bad,
    }
}

pub fn xi_psi(trace: &EnvTrace, p: Params, tabs: &Tables, path: &WalkPath) -> (usize, usize) {
    let l = trace.lattice().side() as i64;
    let h = trace.horizon();
    let xi = crossed(l, h, p.s(), path).iter().filter(|b| tabs.fine.get(b) == Some(&true)).count();
    let psi = crossed(l, h, p.coarse().s(), path)
        .iter()
        .filter(|b| tabs.coarse.get(b) == Some(&false) && tabs.coarse_has_bad.contains(b))
        .count();
    (xi, psi)
}

/// Sup of Ξ and Ψ over paths with `j` jumps, jump times drawn from slab
/// boundaries and two interior points of every slab.
pub fn sup_xi_psi(trace: &EnvTrace, p: Params, j: usize, t: f64) -> (usize, usize) {
    let lat = trace.lattice().clone();
    let tabs = tables(trace, p);
    let s = p.s() as f64;
    let mut grid = Vec::new();
    let mut m = 0.0;
    while m * s < t {
        for f in [0.0, 0.3, 0.6] {
            let tau = (m + f) * s;
            if tau > 0.0 && tau < t {
                grid.push(tau);
            }
        }
        m += 1.0;
    }
    let mut best = (0, 0);
    let mut rec = |sites: Vec<usize>, times: Vec<f64>| {
        let path = WalkPath::new(&lat, sites, times, t).unwrap();
        let r = xi_psi(trace, p, &tabs, &path);
        best = (best.0.max(r.0), best.1.max(r.1));
    };
    fn go(
        lat: &Lattice,
        grid: &[f64],
        j: usize,
        sites: &mut Vec<usize>,
        times: &mut Vec<f64>,
        from: usize,
        f: &mut dyn FnMut(Vec<usize>, Vec<f64>),
    ) {
        if times.len() == j {
            f(sites.clone(), times.clone());
            return;
        }
        let x = *sites.last().unwrap();
        for dir in 0..lat.degree() {
            for gi in from..grid.len() {
                sites.push(lat.neighbor(x, dir));
                times.push(grid[gi]);
                go(lat, grid, j, sites, times, gi + 1, f);
                times.pop();
                sites.pop();
            }
        }
    }
    for x0 in 0..lat.n_sites() {
        go(&lat, &grid, j, &mut vec![x0], &mut Vec::new(), 0, &mut rec);
    }
    best
}

fn torus_norm(l: usize, z: usize) -> usize {
    z.min(l - z)
}

/// Direct enumeration of all site sequences for the regularity statistic.
pub fn regularity(trace: &EnvTrace, n: usize, t: f64, kappa: f64, b: f64) -> f64 {
    let l = trace.lattice().side();
    let budget = ((n as f64 * t) / (1.0 / kappa).ln().powf(b)).floor() as usize;
    let allowed: Vec<usize> = (0..l).filter(|&z| torus_norm(l, z) <= budget).collect();
    let seg = |j: usize, z: usize| trace.occupation_integral(z, (j - 1) as f64 * t + 1.0, j as f64 * t).unwrap();
    fn go(
        allowed: &[usize],
        l: usize,
        n: usize,
        budget: usize,
        seq: &mut Vec<usize>,
        used: usize,
        seg: &dyn Fn(usize, usize) -> f64,
        best: &mut f64,
    ) {
        if seq.len() == n {
            let mut acc = seg(1, seq[0]);
            for (j, &z) in seq.iter().enumerate().skip(1) {
                acc += seg(j + 1, z);
            }
            *best = best.max(acc);
            return;
        }
        for &z in allowed {
            let step = seq.last().map_or(0, |&prev| torus_norm(l, (z + l - prev) % l));
            if used + step <= budget {
                seq.push(z);
                go(allowed, l, n, budget, seq, used + step, seg, best);
                seq.pop();
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(&allowed, l, n, budget, &mut Vec::new(), 0, &seg, &mut best);
    best / (n as f64 * t)
}

/// Random integer-valued d = 1 trace with event times on a quarter grid,
/// so events often sit on block boundaries.
pub fn random_trace(seed: u64, side: usize, horizon: f64) -> EnvTrace {
    let mut rng = stream_from_seed(seed, "instance");
    let lat = Lattice::new(1, side).unwrap();
    let initial: Vec<f64> = (0..side).map(|_| f64::from(rng.random_range(-2i32..=3))).collect();
    let n_events = rng.random_range(0..=3 * side);
    let mut events: Vec<Event> = (0..n_events)
        .map(|_| Event {
            time: f64::from(rng.random_range(1..=(horizon * 4.0) as u32)) / 4.0,
            site: rng.random_range(0..side),
            value: f64::from(rng.random_range(-2i32..=3)),
        })
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.site.cmp(&b.site)));
    events.dedup_by(|a, b| a.time == b.time && a.site == b.site);
    EnvTrace::from_parts(lat, horizon, EnvModelSpec::constant(0.0), seed, initial, events).unwrap()
}

pub fn random_params(seed: u64, side: usize) -> Params {
    let mut rng = stream_from_seed(seed, "params");
    let r = if side % 8 == 0 { rng.random_range(1..=2) } else { 1 };
    Params {
        a: 2,
        r,
        big_c: [0.0, 0.5, 1.0, 1.5][rng.random_range(0..4)],
        b: rng.random_range(0..=1),
        c: rng.random_range(0..=1),
    }
}

pub fn random_path(seed: u64, lat: &Lattice, t: f64) -> WalkPath {
    let mut rng = stream_from_seed(seed, "path");
    let j = rng.random_range(0..=4);
    let mut times: Vec<f64> = (0..j).map(|_| f64::from(rng.random_range(1..(t * 4.0) as u32)) / 4.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut sites = vec![rng.random_range(0..lat.n_sites())];
    for _ in 0..times.len() {
        let x = *sites.last().unwrap();
        sites.push(lat.neighbor(x, rng.random_range(0..lat.degree())));
    }
    WalkPath::new(lat, sites, times, t).unwrap()
}

/// Flood fill with lifted coordinates: reaching a visited site at a
/// different lifted position means the cluster wraps.
pub fn bfs(snapshot: &FieldSnapshot, alpha: f64) -> (Vec<usize>, bool, Vec<Option<usize>>) {
    let lat = snapshot.lattice();
    let n = lat.n_sites();
    let d = lat.dim();
    let inside: Vec<bool> = snapshot.values().iter().map(|&v| v <= alpha).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut lifted: Vec<Vec<i64>> = vec![Vec::new(); n];
    let mut sizes = Vec::new();
    let mut spanning = false;
    for s in 0..n {
        if !inside[s] || label[s].is_some() {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        label[s] = Some(id);
        lifted[s] = lat.coords(s).iter().map(|&c| c as i64).collect();
        let mut q = VecDeque::from([s]);
        while let Some(x) = q.pop_front() {
            size += 1;
            for dir in 0..2 * d {
                let y = lat.neighbor(x, dir);
                if !inside[y] {
                    continue;
                }
                let mut p = lifted[x].clone();
                p[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
                if label[y].is_none() {
                    label[y] = Some(id);
                    lifted[y] = p;
                    q.push_back(y);
                } else if lifted[y] != p {
                    spanning = true;
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    (sizes, spanning, label)
}

pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(x, y)| match (x, y) {
        (None, None) => true,
        (Some(x), Some(y)) => *fwd.entry(*x).or_insert(*y) == *y && *back.entry(*y).or_insert(*x) == *x,
        _ => false,
    })
}
