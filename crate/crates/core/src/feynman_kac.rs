//! Monte Carlo evaluation of the Feynman-Kac representation
//!
//! ```text
//! u(x,t) = E_x[ exp{ ∫_0^t ξ(X(s), t-s) ds } u0(X(t)) ]
//! ```
//!
//! and of its forward-time variant with integrand `ξ(X(s), s)`. `X` is the
//! continuous-time simple random walk with jump rate `2dκ`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::environments::EnvTrace;
use crate::error::{invalid, Error, Result};
use crate::lattice::{Lattice, Site};
use crate::rng::{stream_from_seed, SeedTree, StreamRng};
use crate::solver::InitialCondition;
use crate::stats::log_mean_exp;

/// Samples per independent random stream. Fixed so that results do not
/// depend on the worker count.
pub const CHUNK: usize = 1024;

/// A nearest-neighbor path on `[0, end_time]`, right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    pub jump_times: Vec<f64>,
    /// `sites[0]` is the start; `sites[i]` is occupied after jump `i`.
    pub sites: Vec<Site>,
    pub end_time: f64,
}

impl WalkPath {
    pub fn constant(site: Site, end_time: f64) -> Self {
        Self {
            jump_times: Vec::new(),
            sites: vec![site],
            end_time,
        }
    }

    /// Validates ordering and nearest-neighbor steps.
    pub fn new(lattice: &Lattice, sites: Vec<Site>, jump_times: Vec<f64>, end_time: f64) -> Result<Self> {
        if sites.len() != jump_times.len() + 1 {
            return Err(invalid("path", "need one more site than jump times"));
        }
        let mut prev = 0.0;
        for &t in &jump_times {
            if !(t > prev || (t == prev && prev > 0.0)) || t > end_time {
                return Err(invalid("path", "jump times must be sorted within (0, end_time]"));
            }
            prev = t;
        }
        if sites.iter().any(|&s| s >= lattice.n_sites()) {
            return Err(invalid("path", "site outside the lattice"));
        }
        if sites.windows(2).any(|w| lattice.distance(w[0], w[1]) != 1) {
            return Err(invalid("path", "consecutive sites must be neighbors"));
        }
        Ok(Self { jump_times, sites, end_time })
    }

    pub fn start(&self) -> Site {
        self.sites[0]
    }

    pub fn end(&self) -> Site {
        *self.sites.last().expect("nonempty")
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Position at time `s` (right-continuous).
    pub fn at(&self, s: f64) -> Site {
        self.sites[self.jump_times.partition_point(|&t| t <= s)]
    }

    /// Pieces `(site, from, to)`; the last piece ends at `end_time`.
    pub fn pieces(&self) -> impl Iterator<Item = (Site, f64, f64)> + '_ {
        (0..self.sites.len()).map(move |i| {
            let from = if i == 0 { 0.0 } else { self.jump_times[i - 1] };
            let to = self.jump_times.get(i).copied().unwrap_or(self.end_time);
            (self.sites[i], from, to)
        })
    }
}

/// Rate-`2dκ` simple random walk from `x0` on `[0, t]`.
pub fn sample_walk(lattice: &Lattice, kappa: f64, x0: Site, t: f64, seed: u64) -> Result<WalkPath> {
    if !(kappa >= 0.0 && t >= 0.0) {
        return Err(invalid("kappa", "kappa and t must be >= 0"));
    }
    let mut rng = stream_from_seed(seed, "walk");
    Ok(sample_walk_with(lattice, kappa, x0, t, &mut rng))
}

pub(crate) fn sample_walk_with(lattice: &Lattice, kappa: f64, x0: Site, t: f64, rng: &mut StreamRng) -> WalkPath {
    let rate = 2.0 * lattice.dim() as f64 * kappa * t;
    let n = if rate > 0.0 {
        Poisson::new(rate).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let mut jump_times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * t).collect();
    jump_times.sort_by(f64::total_cmp);
    let mut sites = Vec::with_capacity(n + 1);
    sites.push(x0);
    let degree = lattice.degree();
    let mut x = x0;
    for _ in 0..n {
        x = lattice.neighbor(x, rng.random_range(0..degree));
        sites.push(x);
    }
    WalkPath {
        jump_times,
        sites,
        end_time: t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `∫ ξ(X(s), anchor - s) ds`
    Reversed,
    /// `∫ ξ(X(s), anchor + s) ds`
    Forward,
}

/// `∫_a^b ξ(X(s), anchor ∓ s) ds`, exact over path and environment breakpoints.
pub fn path_functional(trace: &EnvTrace, path: &WalkPath, a: f64, b: f64, anchor: f64, orientation: Orientation) -> Result<f64> {
    if !(0.0 <= a && a <= b && b <= path.end_time) {
        return Err(invalid("path_functional", format!("need 0 <= a <= b <= {}, got [{a}, {b}]", path.end_time)));
    }
    let (lo, hi) = match orientation {
        Orientation::Reversed => (anchor - b, anchor),
        Orientation::Forward => (anchor, anchor + b),
    };
    if lo < 0.0 || hi > trace.horizon() {
        return Err(Error::OutOfBounds { t: if lo < 0.0 { lo } else { hi }, lo: 0.0, hi: trace.horizon() });
    }
    Ok(functional_unchecked(trace, path, a, b, anchor, orientation))
}

fn functional_unchecked(trace: &EnvTrace, path: &WalkPath, a: f64, b: f64, anchor: f64, orientation: Orientation) -> f64 {
    let mut acc = 0.0;
    for (site, from, to) in path.pieces() {
        let s0 = from.max(a);
        let s1 = to.min(b);
        if s1 <= s0 {
            continue;
        }
        acc += match orientation {
            Orientation::Reversed => trace.integral_unchecked(site, anchor - s1, anchor - s0),
            Orientation::Forward => trace.integral_unchecked(site, anchor + s0, anchor + s1),
        };
    }
    acc
}

/// Monte Carlo estimate of `log u(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    /// Estimate of `log E[weight]` when `log_domain`, else of `E[weight]`.
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Samples with nonzero weight.
    pub n_nonzero: usize,
    pub log_domain: bool,
}

/// Per-sample log weights `I + log u0(X(t))`, in sample order.
pub fn fk_log_weights(
    trace: &EnvTrace,
    kappa: f64,
    u0: &InitialCondition,
    x: Site,
    t: f64,
    n_samples: usize,
    seed: u64,
    orientation: Orientation,
) -> Result<Vec<f64>> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(invalid("kappa", format!("must be finite and >= 0, got {kappa}")));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples", "at least one sample required"));
    }
    if !(t >= 0.0 && t <= trace.horizon()) {
        return Err(Error::OutOfBounds { t, lo: 0.0, hi: trace.horizon() });
    }
    let lattice = trace.lattice();
    if x >= lattice.n_sites() {
        return Err(invalid("x", "site outside the lattice"));
    }
    if let InitialCondition::Custom(_) = u0 {
        u0.values(lattice)?;
    }
    let anchor = match orientation {
        Orientation::Reversed => t,
        Orientation::Forward => 0.0,
    };
    let tree = SeedTree::new(seed);
    let n_chunks = n_samples.div_ceil(CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = tree.stream("fk", c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            (0..len)
                .map(|_| {
                    let path = sample_walk_with(lattice, kappa, x, t, &mut rng);
                    let w0 = u0.at(lattice, path.end());
                    if w0 <= 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        functional_unchecked(trace, &path, 0.0, t, anchor, orientation) + w0.ln()
                    }
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

fn estimate_from(log_w: &[f64]) -> Result<MCEstimate> {
    let n_samples = log_w.len();
    let n_nonzero = log_w.iter().filter(|w| w.is_finite()).count();
    if n_nonzero == 0 || (n_nonzero < 100 && n_nonzero < n_samples) {
        return Err(Error::Degenerate { hits: n_nonzero, n_samples });
    }
    let (mean, std_error) = log_mean_exp(log_w);
    Ok(MCEstimate {
        mean,
        std_error,
        n_samples,
        n_nonzero,
        log_domain: true,
    })
}

/// Estimate of `log u(x, t)` through the time-reversed representation.
pub fn fk_estimate(trace: &EnvTrace, kappa: f64, u0: &InitialCondition, x: Site, t: f64, n_samples: usize, seed: u64) -> Result<MCEstimate> {
    estimate_from(&fk_log_weights(trace, kappa, u0, x, t, n_samples, seed, Orientation::Reversed)?)
}

/// Estimate of `log E_x[exp{∫_0^t ξ(X(s), s) ds} u0(X(t))]`.
pub fn fk_forward_estimate(trace: &EnvTrace, kappa: f64, u0: &InitialCondition, x: Site, t: f64, n_samples: usize, seed: u64) -> Result<MCEstimate> {
    estimate_from(&fk_log_weights(trace, kappa, u0, x, t, n_samples, seed, Orientation::Forward)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{sample_centered, sample_env, EnvModelSpec};
    use crate::solver::{solve_pam, SolverConfig};
    use rand_distr::Exp;

    fn lat(d: usize, l: usize) -> Lattice {
        Lattice::new(d, l).unwrap()
    }

    #[test]
    fn no_jumps_without_diffusion() {
        let p = sample_walk(&lat(2, 5), 0.0, 3, 10.0, 1).unwrap();
        assert_eq!(p.n_jumps(), 0);
        assert_eq!(p.end(), 3);
    }

    #[test]
    fn jump_count_is_poisson() {
        let l = lat(1, 16);
        let mut rng = stream_from_seed(5, "t");
        let n = 100_000;
        let counts: Vec<f64> = (0..n).map(|_| sample_walk_with(&l, 1.0, 0, 2.0, &mut rng).n_jumps() as f64).collect();
        let m = crate::stats::mean(&counts);
        let se = (4.0 / n as f64).sqrt();
        assert!((m - 4.0).abs() < 4.0 * se, "{m}");
    }

    #[test]
    fn sampled_paths_step_to_neighbors() {
        let l = lat(2, 6);
        let mut rng = stream_from_seed(8, "t");
        for _ in 0..200 {
            let p = sample_walk_with(&l, 2.0, 7, 3.0, &mut rng);
            assert!(WalkPath::new(&l, p.sites.clone(), p.jump_times.clone(), 3.0).is_ok());
        }
    }

    #[test]
    fn functional_on_constant_field() {
        let l = lat(1, 8);
        let tr = sample_env(&EnvModelSpec::constant(1.5), &l, 5.0, 0).unwrap();
        let p = sample_walk(&l, 1.0, 0, 3.0, 2).unwrap();
        for o in [Orientation::Reversed, Orientation::Forward] {
            let v = path_functional(&tr, &p, 0.5, 2.5, if o == Orientation::Reversed { 3.0 } else { 1.0 }, o).unwrap();
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn functional_on_constant_path() {
        let l = lat(1, 8);
        let tr = sample_centered(&EnvModelSpec::two_state(), &l, 5.0, 3).unwrap();
        let p = WalkPath::constant(4, 3.0);
        let rev = path_functional(&tr, &p, 1.0, 3.0, 4.0, Orientation::Reversed).unwrap();
        assert!((rev - tr.occupation_integral(4, 1.0, 3.0).unwrap()).abs() < 1e-12);
        let fwd = path_functional(&tr, &p, 1.0, 3.0, 1.5, Orientation::Forward).unwrap();
        assert!((fwd - tr.occupation_integral(4, 2.5, 4.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn functional_bounds() {
        let l = lat(1, 4);
        let tr = sample_env(&EnvModelSpec::constant(0.0), &l, 2.0, 0).unwrap();
        let p = WalkPath::constant(0, 2.0);
        assert!(path_functional(&tr, &p, 0.0, 2.0, 1.0, Orientation::Reversed).is_err());
        assert!(path_functional(&tr, &p, 0.0, 2.0, 1.0, Orientation::Forward).is_err());
        assert!(path_functional(&tr, &p, 1.0, 0.5, 2.0, Orientation::Reversed).is_err());
    }

    #[test]
    fn functional_matches_riemann_sum() {
        let l = lat(1, 8);
        let tr = sample_centered(&EnvModelSpec::two_state_with(-1.0, 2.0, 1.5), &l, 6.0, 11).unwrap();
        let p = sample_walk(&l, 1.0, 0, 3.0, 4).unwrap();
        let dt = 1e-4;
        for (o, anchor) in [(Orientation::Reversed, 5.0), (Orientation::Forward, 2.0)] {
            let exact = path_functional(&tr, &p, 0.25, 2.75, anchor, o).unwrap();
            let steps = ((2.75 - 0.25) / dt) as usize;
            let riemann: f64 = (0..steps)
                .map(|i| {
                    let s = 0.25 + (i as f64 + 0.5) * dt;
                    let tt = if o == Orientation::Reversed { anchor - s } else { anchor + s };
                    tr.query(p.at(s), tt).unwrap() * dt
                })
                .sum();
            assert!((exact - riemann).abs() <= 1e-3 * exact.abs().max(1.0), "{exact} vs {riemann}");
        }
    }

    #[test]
    fn deterministic_cases() {
        let l = lat(1, 8);
        let tr = sample_centered(&EnvModelSpec::two_state(), &l, 2.0, 1).unwrap();
        let est = fk_estimate(&tr, 0.0, &InitialCondition::Ones, 3, 2.0, 500, 1).unwrap();
        assert!((est.mean - tr.occupation_integral(3, 0.0, 2.0).unwrap()).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);

        let zero = sample_env(&EnvModelSpec::constant(0.0), &l, 2.0, 0).unwrap();
        let est = fk_estimate(&zero, 1.0, &InitialCondition::Ones, 0, 2.0, 500, 1).unwrap();
        assert_eq!((est.mean, est.std_error), (0.0, 0.0));

        let c = sample_env(&EnvModelSpec::constant(0.3), &l, 2.0, 0).unwrap();
        let est = fk_forward_estimate(&c, 1.0, &InitialCondition::Ones, 0, 2.0, 500, 1).unwrap();
        assert!((est.mean - 0.6).abs() < 1e-12);
    }

    #[test]
    fn degenerate_delta_estimate_flagged() {
        let l = lat(1, 64);
        let tr = sample_env(&EnvModelSpec::constant(0.0), &l, 2.0, 0).unwrap();
        // the walk from site 32 cannot reach the origin in so short a time
        let err = fk_estimate(&tr, 0.1, &InitialCondition::Delta0, 32, 2.0, 1000, 1).unwrap_err();
        assert!(matches!(err, Error::Degenerate { hits: 0, .. }));
    }

    #[test]
    fn static_field_orientations_agree_pathwise() {
        let l = lat(1, 8);
        let values: Vec<f64> = (0..8).map(|x| (x as f64 * 0.7).cos()).collect();
        let tr = EnvTrace::from_parts(l, 3.0, EnvModelSpec::constant(0.0), 0, values, vec![]).unwrap();
        let a = fk_log_weights(&tr, 1.0, &InitialCondition::Ones, 0, 3.0, 3000, 9, Orientation::Reversed).unwrap();
        let b = fk_log_weights(&tr, 1.0, &InitialCondition::Ones, 0, 3.0, 3000, 9, Orientation::Forward).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn ones_dominates_delta_on_matched_seeds() {
        let l = lat(1, 8);
        let tr = sample_centered(&EnvModelSpec::two_state(), &l, 2.0, 5).unwrap();
        let ones = fk_log_weights(&tr, 1.0, &InitialCondition::Ones, 0, 2.0, 2000, 3, Orientation::Reversed).unwrap();
        let delta = fk_log_weights(&tr, 1.0, &InitialCondition::Delta0, 0, 2.0, 2000, 3, Orientation::Reversed).unwrap();
        assert!(ones.iter().zip(&delta).all(|(a, b)| a >= b));
        let eo = estimate_from(&ones).unwrap();
        let ed = estimate_from(&delta).unwrap();
        assert!(eo.mean >= ed.mean);
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let l = lat(1, 8);
        let tr = sample_centered(&EnvModelSpec::two_state(), &l, 2.0, 5).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fk_estimate(&tr, 1.0, &InitialCondition::Delta0, 0, 2.0, 5000, 77).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn agrees_with_solver_on_small_instance() {
        let l = lat(1, 8);
        let tr = sample_centered(&EnvModelSpec::two_state(), &l, 2.0, 12).unwrap();
        let sol = solve_pam(&tr, 1.0, &InitialCondition::Delta0, &[2.0], &SolverConfig { max_dt: 0.01, ..SolverConfig::default() }).unwrap();
        let est = fk_estimate(&tr, 1.0, &InitialCondition::Delta0, 0, 2.0, 100_000, 3).unwrap();
        assert!((est.mean - sol.log_u_origin[0]).abs() < 4.0 * est.std_error, "{} vs {}", est.mean, sol.log_u_origin[0]);
    }

    #[test]
    fn forward_return_probability_matches_direct_simulation() {
        let l = lat(1, 8);
        let zero = sample_env(&EnvModelSpec::constant(0.0), &l, 1.5, 0).unwrap();
        let est = fk_forward_estimate(&zero, 1.0, &InitialCondition::Delta0, 0, 1.5, 200_000, 4).unwrap();
        let p_fk = est.mean.exp();
        let se_fk = p_fk * est.std_error;

        // direct oracle: exponential inter-arrival times, independent stream
        let mut rng = stream_from_seed(99, "oracle");
        let clock = Exp::new(2.0).unwrap();
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let mut t = rng.sample(clock);
            let mut pos: i64 = 0;
            while t <= 1.5 {
                pos += if rng.random::<bool>() { 1 } else { -1 };
                t += rng.sample(clock);
            }
            if pos.rem_euclid(8) == 0 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p - p_fk).abs() < 1.96 * (se * se + se_fk * se_fk).sqrt(), "{p} vs {p_fk}");
    }
}
