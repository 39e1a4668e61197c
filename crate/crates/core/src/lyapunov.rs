//! Quenched and annealed Lyapunov-exponent estimation.
//!
//! All estimators are finite-`t`, finite-`L` surrogates of the limits. For a
//! given master seed, replica `r` always sees the same environment, whatever
//! `κ`, `u0` or `p` is being evaluated, so rows of a sweep are computed on
//! matched environments.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::{sample_centered, EnvModelSpec};
use crate::error::{invalid, Error, Result};
use crate::lattice::Lattice;
use crate::rng::SeedTree;
use crate::solver::{solve_pam, InitialCondition, SolverConfig};
use crate::stats::{log_mean_exp, mean, std_error, t_half_width95, t_quantile};

pub const SWEEP_HEADER: &str = "kappa,p,t,u0,estimate,ci_half_width,n_replicas,seed,model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovPoint {
    pub kappa: f64,
    /// 0 for the quenched exponent, `p >= 1` for the p-th annealed one.
    pub p: u32,
    pub t: f64,
    pub estimate: f64,
    pub ci_half_width: f64,
    pub u0: String,
    pub n_env_replicas: usize,
    pub seed: u64,
    pub model: String,
}

/// Seed of the environment seen by replica `r`.
pub fn replica_env_seed(seed: u64, r: usize) -> u64 {
    SeedTree::new(seed).derive("env", r as u64)
}

/// `log u(0, t)` for every replica and every time of the grid.
#[derive(Debug, Clone)]
pub struct ReplicaSet {
    pub kappa: f64,
    pub t_grid: Vec<f64>,
    pub u0: InitialCondition,
    pub seed: u64,
    pub model: String,
    /// `log_u[r][i] = log u(0, t_grid[i])` for replica `r`.
    pub log_u: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn solve_replicas(
    spec: &EnvModelSpec,
    lattice: &Lattice,
    kappa: f64,
    t_grid: &[f64],
    n_replicas: usize,
    u0: &InitialCondition,
    solver: &SolverConfig,
    seed: u64,
) -> Result<ReplicaSet> {
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(invalid("t_grid", "times must be finite and > 0"));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("t_grid", "must be sorted"));
    }
    if n_replicas == 0 {
        return Err(invalid("n_replicas", "at least one replica required"));
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(invalid("kappa", format!("must be finite and >= 0, got {kappa}")));
    }
    let horizon = *t_grid.last().expect("nonempty");
    let results: Vec<Result<Vec<f64>>> = (0..n_replicas)
        .into_par_iter()
        .map(|r| {
            let trace = sample_centered(spec, lattice, horizon, replica_env_seed(seed, r))?;
            Ok(solve_pam(&trace, kappa, u0, t_grid, solver)?.log_u_origin)
        })
        .collect();
    let mut log_u = Vec::with_capacity(n_replicas);
    for (index, r) in results.into_iter().enumerate() {
        log_u.push(r.map_err(|e| Error::Replica { index, source: Box::new(e) })?);
    }
    Ok(ReplicaSet {
        kappa,
        t_grid: t_grid.to_vec(),
        u0: u0.clone(),
        seed,
        model: spec.name().to_string(),
        log_u,
    })
}

impl ReplicaSet {
    pub fn n_replicas(&self) -> usize {
        self.log_u.len()
    }

    /// Per-replica `(1/t) log u(0, t)` at grid index `i`.
    pub fn quenched_samples(&self, i: usize) -> Vec<f64> {
        let t = self.t_grid[i];
        self.log_u.iter().map(|row| row[i] / t).collect()
    }

    fn point(&self, p: u32, i: usize, estimate: f64, ci_half_width: f64) -> LyapunovPoint {
        LyapunovPoint {
            kappa: self.kappa,
            p,
            t: self.t_grid[i],
            estimate,
            ci_half_width,
            u0: self.u0.name().to_string(),
            n_env_replicas: self.n_replicas(),
            seed: self.seed,
            model: self.model.clone(),
        }
    }

    /// Mean of `(1/t) log u(0,t)` with a 95% t-interval from the replica spread.
    pub fn quenched(&self, i: usize) -> LyapunovPoint {
        let xs = self.quenched_samples(i);
        self.point(0, i, mean(&xs), t_half_width95(&xs))
    }

    /// `(1/(pt)) log mean_r u_r(0,t)^p`, delta-method interval.
    pub fn annealed(&self, p: u32, i: usize) -> Result<LyapunovPoint> {
        if p == 0 {
            return Err(invalid("p", "annealed order must be >= 1"));
        }
        let n = self.n_replicas();
        if n < 2 {
            return Err(invalid("n_env", "at least two environments required"));
        }
        let t = self.t_grid[i];
        let pf = f64::from(p);
        let powered: Vec<f64> = self.log_u.iter().map(|row| pf * row[i]).collect();
        let (log_mean, se) = log_mean_exp(&powered);
        let ci = t_quantile(0.95, n - 1) * se / (pf * t);
        Ok(self.point(p, i, log_mean / (pf * t), ci))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn quenched_estimate(
    spec: &EnvModelSpec,
    lattice: &Lattice,
    kappa: f64,
    t_grid: &[f64],
    n_replicas: usize,
    u0: &InitialCondition,
    solver: &SolverConfig,
    seed: u64,
) -> Result<Vec<LyapunovPoint>> {
    let set = solve_replicas(spec, lattice, kappa, t_grid, n_replicas, u0, solver, seed)?;
    Ok((0..t_grid.len()).map(|i| set.quenched(i)).collect())
}

#[allow(clippy::too_many_arguments)]
pub fn annealed_estimate(
    spec: &EnvModelSpec,
    lattice: &Lattice,
    kappa: f64,
    p: u32,
    t: f64,
    n_env: usize,
    solver: &SolverConfig,
    seed: u64,
) -> Result<LyapunovPoint> {
    if p == 0 {
        return Err(invalid("p", "annealed order must be >= 1"));
    }
    if n_env < 2 {
        return Err(invalid("n_env", "at least two environments required"));
    }
    let set = solve_replicas(spec, lattice, kappa, &[t], n_env, &InitialCondition::Delta0, solver, seed)?;
    set.annealed(p, 0)
}

/// Violation message if `L < 4 sqrt(2dκt)`, the walk-range guard for
/// quenched runs.
pub fn wraparound_guard(lattice: &Lattice, kappa: f64, t: f64) -> Option<String> {
    let range = (2.0 * lattice.dim() as f64 * kappa * t).sqrt();
    let needed = 4.0 * range;
    ((lattice.side() as f64) < needed).then(|| {
        format!("side {} < 4 sqrt(2 d kappa t) = {needed:.2}; wrap-around may bias the estimate", lattice.side())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kappa_grid: Vec<f64>,
    /// Orders to report; 0 is the quenched exponent.
    pub p_list: Vec<u32>,
    pub t_grid: Vec<f64>,
    pub replicas: usize,
    pub u0_list: Vec<InitialCondition>,
}

/// Table of a κ-sweep plus the replica data it was computed from.
#[derive(Debug, Clone)]
pub struct KappaSweep {
    pub rows: Vec<LyapunovPoint>,
    /// One replica set per `(κ, u0)` pair, κ-major.
    pub sets: Vec<ReplicaSet>,
}

pub fn kappa_sweep(spec: &EnvModelSpec, lattice: &Lattice, cfg: &SweepConfig, solver: &SolverConfig, seed: u64) -> Result<KappaSweep> {
    if cfg.kappa_grid.is_empty() || cfg.kappa_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("kappa_grid", "must be nonempty and strictly increasing"));
    }
    if cfg.kappa_grid[0] != 0.0 {
        return Err(invalid("kappa_grid", "must include 0"));
    }
    if cfg.p_list.is_empty() || cfg.u0_list.is_empty() {
        return Err(invalid("p_list", "p_list and u0_list must be nonempty"));
    }
    let jobs: Vec<(f64, &InitialCondition)> = cfg
        .kappa_grid
        .iter()
        .flat_map(|&k| cfg.u0_list.iter().map(move |u| (k, u)))
        .collect();
    let results: Vec<Result<ReplicaSet>> = jobs
        .par_iter()
        .map(|&(kappa, u0)| solve_replicas(spec, lattice, kappa, &cfg.t_grid, cfg.replicas, u0, solver, seed))
        .collect();
    let mut sets = Vec::with_capacity(jobs.len());
    let mut failures = Vec::new();
    for ((kappa, u0), r) in jobs.iter().zip(results) {
        match r {
            Ok(s) => sets.push(s),
            Err(e) => failures.push(format!("kappa={kappa} u0={}: {e}", u0.name())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Aggregate(failures));
    }
    let mut rows = Vec::new();
    for set in &sets {
        for i in 0..cfg.t_grid.len() {
            for &p in &cfg.p_list {
                rows.push(if p == 0 { set.quenched(i) } else { set.annealed(p, i)? });
            }
        }
    }
    Ok(KappaSweep { rows, sets })
}

/// `λ̂₀(κ) - λ̂₀(0)` and the difference quotient at one κ, with 95%
/// intervals from the paired per-replica differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityRow {
    pub kappa: f64,
    pub delta: f64,
    pub delta_ci: f64,
    pub quotient: f64,
    pub quotient_ci: f64,
}

impl KappaSweep {
    pub fn set(&self, kappa: f64, u0: &str) -> Option<&ReplicaSet> {
        self.sets.iter().find(|s| s.kappa == kappa && s.u0.name() == u0)
    }

    /// Continuity / non-Lipschitz diagnostics at grid index `i`.
    pub fn continuity(&self, u0: &str, i: usize) -> Vec<ContinuityRow> {
        let Some(base) = self.set(0.0, u0) else {
            return Vec::new();
        };
        let b = base.quenched_samples(i);
        self.sets
            .iter()
            .filter(|s| s.kappa > 0.0 && s.u0.name() == u0)
            .map(|s| {
                let diffs: Vec<f64> = s.quenched_samples(i).iter().zip(&b).map(|(x, y)| x - y).collect();
                let delta = mean(&diffs);
                let delta_ci = t_half_width95(&diffs);
                ContinuityRow {
                    kappa: s.kappa,
                    delta,
                    delta_ci,
                    quotient: delta / s.kappa,
                    quotient_ci: delta_ci / s.kappa,
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_sweep_csv(&self.rows, out)
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[LyapunovPoint], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.kappa, r.p, r.t, r.u0, r.estimate, r.ci_half_width, r.n_env_replicas, r.seed, r.model
        )?;
    }
    Ok(())
}

/// Fit `estimate ≈ a + b / t` over the t-grid for each `(κ, p, u0)`.
/// Auxiliary output only; `a` is a crude large-`t` extrapolation.
pub fn extrapolate(rows: &[LyapunovPoint]) -> Vec<(f64, u32, String, f64, f64)> {
    let mut keys: Vec<(f64, u32, String)> = Vec::new();
    for r in rows {
        let k = (r.kappa, r.p, r.u0.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .filter_map(|(kappa, p, u0)| {
            let sel: Vec<&LyapunovPoint> = rows.iter().filter(|r| r.kappa == kappa && r.p == p && r.u0 == u0).collect();
            if sel.len() < 2 {
                return None;
            }
            let x: Vec<f64> = sel.iter().map(|r| 1.0 / r.t).collect();
            let y: Vec<f64> = sel.iter().map(|r| r.estimate).collect();
            let (a, b) = crate::stats::linear_fit(&x, &y);
            Some((kappa, p, u0, a, b))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityRow {
    pub t: f64,
    pub value: f64,
    pub ci_half_width: f64,
}

pub const VOLATILITY_HEADER: &str = "t,value,ci_half_width";

/// `E|∫_0^t (ξ(0,s) - ξ(e,s)) ds| / log t` over independent environments,
/// `e` the unit vector along `axis`.
pub fn volatility_statistic(
    spec: &EnvModelSpec,
    lattice: &Lattice,
    t_grid: &[f64],
    n_replicas: usize,
    axis: usize,
    seed: u64,
) -> Result<Vec<VolatilityRow>> {
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 1.0 && t.is_finite())) {
        return Err(invalid("t_grid", "times must exceed 1 so that log t > 0"));
    }
    if axis >= lattice.dim() {
        return Err(invalid("axis", format!("axis {axis} >= dimension {}", lattice.dim())));
    }
    if n_replicas == 0 {
        return Err(invalid("n_replicas", "at least one replica required"));
    }
    let horizon = t_grid.iter().copied().fold(0.0, f64::max);
    let e = lattice.neighbor(lattice.origin(), 2 * axis);
    let per_replica: Vec<Result<Vec<f64>>> = (0..n_replicas)
        .into_par_iter()
        .map(|r| {
            let trace = sample_centered(spec, lattice, horizon, replica_env_seed(seed, r))?;
            Ok(t_grid
                .iter()
                .map(|&t| {
                    let diff = trace.integral_unchecked(0, 0.0, t) - trace.integral_unchecked(e, 0.0, t);
                    diff.abs() / t.ln()
                })
                .collect())
        })
        .collect();
    let mut samples = Vec::with_capacity(n_replicas);
    for (index, r) in per_replica.into_iter().enumerate() {
        samples.push(r.map_err(|e| Error::Replica { index, source: Box::new(e) })?);
    }
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let xs: Vec<f64> = samples.iter().map(|row| row[i]).collect();
            VolatilityRow {
                t,
                value: mean(&xs),
                ci_half_width: t_half_width95(&xs),
            }
        })
        .collect())
}

/// Replica standard error of the quenched statistic at grid index `i`.
pub fn quenched_std_error(set: &ReplicaSet, i: usize) -> f64 {
    std_error(&set.quenched_samples(i))
}
