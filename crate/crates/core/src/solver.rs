//! Direct solution of `∂u/∂t = κΔu + ξu` for one environment realization.
//!
//! Steps never straddle an environment event, so on every step the
//! potential is constant in time and its factor `exp(ξ dt / 2)` is exact.
//! The Laplacian part is stepped explicitly under a positivity-preserving
//! cap. The solution is carried as `u = v · exp(offset)` with `max v = 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::environments::{dominates, EnvTrace};
use crate::error::{invalid, Error, Result};
use crate::lattice::{laplacian_into, FieldSnapshot, Lattice, Site};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Half potential step, Laplacian step (SSP-RK2 substeps), half potential step.
    #[default]
    StrangSplitting,
    /// Forward Euler on the full right-hand side.
    ExplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_max_dt")]
    pub max_dt: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_max_dt() -> f64 {
    0.1
}

fn default_safety() -> f64 {
    0.5
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::StrangSplitting,
            max_dt: default_max_dt(),
            safety: default_safety(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_dt.is_finite() && self.max_dt > 0.0) {
            return Err(invalid("max_dt", format!("must be > 0, got {}", self.max_dt)));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(invalid("safety", format!("must lie in (0, 1], got {}", self.safety)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Indicator of the origin.
    Delta0,
    Ones,
    Custom(Vec<f64>),
}

impl InitialCondition {
    pub fn name(&self) -> &'static str {
        match self {
            InitialCondition::Delta0 => "delta0",
            InitialCondition::Ones => "ones",
            InitialCondition::Custom(_) => "custom",
        }
    }

    pub fn values(&self, lattice: &Lattice) -> Result<Vec<f64>> {
        let n = lattice.n_sites();
        let v = match self {
            InitialCondition::Delta0 => {
                let mut v = vec![0.0; n];
                v[lattice.origin()] = 1.0;
                v
            }
            InitialCondition::Ones => vec![1.0; n],
            InitialCondition::Custom(v) => {
                let v = FieldSnapshot::new(lattice.clone(), v.clone())?.into_values();
                if v.iter().any(|&x| x < 0.0) {
                    return Err(invalid("u0", "initial condition must be nonnegative"));
                }
                v
            }
        };
        Ok(v)
    }

    /// `u0(site)`.
    pub fn at(&self, lattice: &Lattice, site: Site) -> f64 {
        match self {
            InitialCondition::Delta0 => f64::from(u8::from(site == lattice.origin())),
            InitialCondition::Ones => 1.0,
            InitialCondition::Custom(v) => v[site],
        }
    }
}

/// `u(·, t)` at the requested times.
#[derive(Debug, Clone)]
pub struct SolutionTrace {
    pub lattice: Lattice,
    pub kappa: f64,
    pub u0: InitialCondition,
    pub sample_times: Vec<f64>,
    /// Normalized snapshots `v` with `u = v · exp(log_scale)`.
    pub snapshots: Vec<Vec<f64>>,
    pub log_scales: Vec<f64>,
    /// `log u(0, t)` per sample time.
    pub log_u_origin: Vec<f64>,
}

impl SolutionTrace {
    /// `log u(site, t_i)`; `-inf` where `u` vanishes.
    pub fn log_u(&self, site: Site, i: usize) -> f64 {
        self.snapshots[i][site].ln() + self.log_scales[i]
    }

    /// `u(·, t_i)` in linear scale (may overflow for large `t`).
    pub fn snapshot(&self, i: usize) -> FieldSnapshot {
        let s = self.log_scales[i].exp();
        FieldSnapshot::new(self.lattice.clone(), self.snapshots[i].iter().map(|v| v * s).collect())
            .expect("solution overflowed f64")
    }

    pub fn write_origin_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,log_u_origin")?;
        for (t, l) in self.sample_times.iter().zip(&self.log_u_origin) {
            writeln!(out, "{t},{l}")?;
        }
        Ok(())
    }

    pub fn write_snapshots_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,site,log_u")?;
        for (i, t) in self.sample_times.iter().enumerate() {
            for site in 0..self.lattice.n_sites() {
                writeln!(out, "{t},{site},{}", self.log_u(site, i))?;
            }
        }
        Ok(())
    }
}

struct Workspace {
    v: Vec<f64>,
    lap: Vec<f64>,
    stage: Vec<f64>,
    offset: f64,
}

pub fn solve_pam(
    trace: &EnvTrace,
    kappa: f64,
    u0: &InitialCondition,
    sample_times: &[f64],
    config: &SolverConfig,
) -> Result<SolutionTrace> {
    config.validate()?;
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(invalid("kappa", format!("must be finite and >= 0, got {kappa}")));
    }
    if sample_times.is_empty() {
        return Err(invalid("sample_times", "at least one sample time required"));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("sample_times", "must be sorted"));
    }
    for &t in sample_times {
        if !(t >= 0.0 && t <= trace.horizon()) {
            return Err(Error::OutOfBounds { t, lo: 0.0, hi: trace.horizon() });
        }
    }
    let lattice = trace.lattice().clone();
    let n = lattice.n_sites();
    let mut ws = Workspace {
        v: u0.values(&lattice)?,
        lap: vec![0.0; n],
        stage: vec![0.0; n],
        offset: 0.0,
    };
    renormalize(&mut ws);

    let two_d_kappa = 2.0 * lattice.dim() as f64 * kappa;
    let rate_bound = two_d_kappa + trace.max_abs();
    let h_cap = if rate_bound > 0.0 {
        config.max_dt.min(config.safety / rate_bound)
    } else {
        config.max_dt
    };
    let sub_cap = if kappa > 0.0 {
        config.safety / (2.0 * two_d_kappa)
    } else {
        f64::INFINITY
    };

    let mut xi = trace.initial().to_vec();
    let events = trace.events();
    let mut next_event = 0usize;
    let mut t = 0.0f64;
    let mut out = SolutionTrace {
        lattice: lattice.clone(),
        kappa,
        u0: u0.clone(),
        sample_times: sample_times.to_vec(),
        snapshots: Vec::with_capacity(sample_times.len()),
        log_scales: Vec::with_capacity(sample_times.len()),
        log_u_origin: Vec::with_capacity(sample_times.len()),
    };

    for &target in sample_times {
        while t < target {
            while next_event < events.len() && events[next_event].time <= t {
                let e = events[next_event];
                xi[e.site] = e.value;
                next_event += 1;
            }
            let boundary = events.get(next_event).map_or(target, |e| e.time.min(target));
            let end = boundary.min(t + h_cap);
            let dt = end - t;
            match config.scheme {
                Scheme::StrangSplitting => strang_step(&lattice, &xi, kappa, dt, sub_cap, &mut ws),
                Scheme::ExplicitEuler => euler_step(&lattice, &xi, kappa, dt, &mut ws),
            }
            renormalize(&mut ws);
            t = end;
        }
        out.snapshots.push(ws.v.clone());
        out.log_scales.push(ws.offset);
        out.log_u_origin.push(ws.v[lattice.origin()].ln() + ws.offset);
    }
    Ok(out)
}

fn potential_half(xi: &[f64], dt: f64, v: &mut [f64]) {
    for (u, &q) in v.iter_mut().zip(xi) {
        *u *= (0.5 * q * dt).exp();
    }
}

fn strang_step(lattice: &Lattice, xi: &[f64], kappa: f64, dt: f64, sub_cap: f64, ws: &mut Workspace) {
    potential_half(xi, dt, &mut ws.v);
    if kappa > 0.0 {
        let n_sub = (dt / sub_cap).ceil().max(1.0) as usize;
        let h = kappa * dt / n_sub as f64;
        for _ in 0..n_sub {
            // Heun / SSP-RK2: average of the input and two Euler stages.
            laplacian_into(lattice, &ws.v, &mut ws.lap);
            for ((s, &u), &l) in ws.stage.iter_mut().zip(&ws.v).zip(&ws.lap) {
                *s = u + h * l;
            }
            laplacian_into(lattice, &ws.stage, &mut ws.lap);
            for ((u, &s), &l) in ws.v.iter_mut().zip(&ws.stage).zip(&ws.lap) {
                *u = 0.5 * (*u + s + h * l);
            }
        }
    }
    potential_half(xi, dt, &mut ws.v);
}

fn euler_step(lattice: &Lattice, xi: &[f64], kappa: f64, dt: f64, ws: &mut Workspace) {
    laplacian_into(lattice, &ws.v, &mut ws.lap);
    for ((u, &l), &q) in ws.v.iter_mut().zip(&ws.lap).zip(xi) {
        *u += dt * (kappa * l + q * *u);
    }
}

fn renormalize(ws: &mut Workspace) {
    let m = ws.v.iter().copied().fold(0.0f64, f64::max);
    if m > 0.0 && m != 1.0 {
        let inv = 1.0 / m;
        ws.v.iter_mut().for_each(|u| *u *= inv);
        ws.offset += m.ln();
    }
}

/// Solve with `trace_a >= trace_b` pointwise and report whether
/// `u_A(x, t) >= u_B(x, t) - 1e-9 u_A(x, t)` at every site.
///
/// A violated precondition is returned as [`Error::OrderViolation`].
pub fn compare_solutions(
    trace_a: &EnvTrace,
    trace_b: &EnvTrace,
    kappa: f64,
    u0: &InitialCondition,
    t: f64,
    config: &SolverConfig,
) -> Result<bool> {
    dominates(trace_a, trace_b)?;
    let ua = solve_pam(trace_a, kappa, u0, &[t], config)?;
    let ub = solve_pam(trace_b, kappa, u0, &[t], config)?;
    Ok((0..trace_a.lattice().n_sites()).all(|x| {
        let la = ua.log_u(x, 0);
        let lb = ub.log_u(x, 0);
        if lb == f64::NEG_INFINITY {
            return true;
        }
        if la == f64::NEG_INFINITY {
            return false;
        }
        (lb - la).exp() <= 1.0 + 1e-9
    }))
}
