//! Experiment configuration, validation and orchestration.
//!
//! A run reads an [`ExperimentConfig`], writes the CSV tables of the chosen
//! experiment into an output directory together with `manifest.json`, and
//! removes whatever it wrote if any step fails.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{mixing_event_frequency, tail_condition_check, write_mixing_csv, write_tail_csv, BlockSpec};
use crate::environments::{sample_centered, write_events, EnvModelSpec, TraceManifest};
use crate::error::{invalid, Error, Result};
use crate::feynman_kac::fk_estimate;
use crate::lattice::Lattice;
use crate::lyapunov::{
    extrapolate, kappa_sweep, replica_env_seed, volatility_statistic, wraparound_guard, SweepConfig, VOLATILITY_HEADER,
};
use crate::percolation::percolation_profile;
use crate::rng::SeedTree;
use crate::solver::{solve_pam, InitialCondition, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EnvSample,
    Solve,
    Fk,
    LyapunovSweep,
    Diagnostics,
    Percolation,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::EnvSample => "env-sample",
            ExperimentKind::Solve => "solve",
            ExperimentKind::Fk => "fk",
            ExperimentKind::LyapunovSweep => "lyapunov-sweep",
            ExperimentKind::Diagnostics => "diagnostics",
            ExperimentKind::Percolation => "percolation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub dim: usize,
    pub side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_samples: usize,
    /// Lattice site at which `u` is estimated.
    pub site: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_samples: 10_000, site: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub kappa_grid: Vec<f64>,
    pub p_list: Vec<u32>,
    pub u0_list: Vec<InitialCondition>,
    /// Run even when `L < 4 sqrt(2dκt)`.
    pub allow_small_lattice: bool,
    /// Also write `volatility.csv` over `t_grid` (needs every t > 1).
    pub volatility: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kappa_grid: vec![0.0],
            p_list: vec![0, 1, 2],
            u0_list: vec![InitialCondition::Delta0],
            allow_small_lattice: false,
            volatility: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub blocks: Vec<BlockSpec>,
    pub n_env: usize,
    pub blocks_per_env: usize,
    /// Box radii for the tail table; empty skips it.
    pub tail_r: Vec<usize>,
    pub tail_c: Vec<f64>,
    pub tail_alpha: f64,
    pub tail_samples: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            blocks: Vec::new(),
            n_env: 100,
            blocks_per_env: 1,
            tail_r: Vec::new(),
            tail_c: Vec::new(),
            tail_alpha: 0.0,
            tail_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PercolationSection {
    pub alpha_grid: Vec<f64>,
    /// Time `T` of the running supremum `q^T`.
    pub t: f64,
}

impl Default for PercolationSection {
    fn default() -> Self {
        Self { alpha_grid: Vec::new(), t: 1.0 }
    }
}

fn default_u0() -> InitialCondition {
    InitialCondition::Delta0
}

fn default_replicas() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub lattice: LatticeConfig,
    pub env: EnvModelSpec,
    pub horizon: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "default_u0")]
    pub u0: InitialCondition,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub percolation: PercolationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parse with `kind` forced, so a file may omit it or name another kind.
    pub fn from_toml_as(text: &str, kind: ExperimentKind) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        table.insert("kind".into(), toml::Value::String(kind.name().into()));
        table.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.lattice.dim, self.lattice.side)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn push_err(out: &mut Vec<Violation>, prefix: &str, e: Error) {
    let (field, message) = match e {
        Error::InvalidParameter { field, reason } => (format!("{prefix}.{field}"), reason),
        other => (prefix.to_string(), other.to_string()),
    };
    out.push(Violation { field, message });
}

fn violation(out: &mut Vec<Violation>, field: &str, message: impl Into<String>) {
    out.push(Violation {
        field: field.to_string(),
        message: message.into(),
    });
}

fn check_sorted(out: &mut Vec<Violation>, field: &str, xs: &[f64]) {
    if xs.is_empty() {
        violation(out, field, "must be nonempty");
    } else if xs.iter().any(|x| !x.is_finite()) || xs.windows(2).any(|w| w[1] < w[0]) {
        violation(out, field, "must be finite and sorted ascending");
    }
}

/// Every reason the config cannot run; empty iff [`run`] would start.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let lattice = match cfg.lattice() {
        Ok(l) => Some(l),
        Err(e) => {
            let field = if cfg.lattice.dim == 0 { "lattice.dim" } else { "lattice.side" };
            violation(&mut out, field, e.to_string());
            None
        }
    };
    if let Err(e) = cfg.env.validate() {
        push_err(&mut out, "env", e);
    }
    if !(cfg.horizon.is_finite() && cfg.horizon > 0.0) {
        violation(&mut out, "horizon", format!("must be finite and > 0, got {}", cfg.horizon));
    }
    if let Err(e) = cfg.solver.validate() {
        push_err(&mut out, "solver", e);
    }
    if !(cfg.kappa.is_finite() && cfg.kappa >= 0.0) {
        violation(&mut out, "kappa", format!("must be finite and >= 0, got {}", cfg.kappa));
    }
    if cfg.replicas == 0 {
        violation(&mut out, "replicas", "must be >= 1");
    }
    if let (Some(l), InitialCondition::Custom(v)) = (&lattice, &cfg.u0) {
        if v.len() != l.n_sites() {
            violation(&mut out, "u0", format!("custom initial condition has {} values for {} sites", v.len(), l.n_sites()));
        }
    }
    let needs_t = matches!(cfg.kind, ExperimentKind::Solve | ExperimentKind::Fk | ExperimentKind::LyapunovSweep);
    if needs_t {
        check_sorted(&mut out, "t_grid", &cfg.t_grid);
        if cfg.t_grid.iter().any(|&t| t > cfg.horizon) {
            violation(&mut out, "t_grid", format!("times exceed the horizon {}", cfg.horizon));
        }
        let min_t = if cfg.kind == ExperimentKind::Solve { 0.0 } else { f64::MIN_POSITIVE };
        if cfg.t_grid.iter().any(|&t| t < min_t) {
            violation(&mut out, "t_grid", "times must be > 0 (>= 0 for solve)");
        }
    }
    match cfg.kind {
        ExperimentKind::Fk => {
            if cfg.mc.n_samples == 0 {
                violation(&mut out, "mc.n_samples", "must be >= 1");
            }
            if let Some(l) = &lattice {
                if cfg.mc.site >= l.n_sites() {
                    violation(&mut out, "mc.site", format!("site {} outside a lattice of {} sites", cfg.mc.site, l.n_sites()));
                }
            }
        }
        ExperimentKind::LyapunovSweep => {
            let s = &cfg.sweep;
            check_sorted(&mut out, "sweep.kappa_grid", &s.kappa_grid);
            if s.kappa_grid.first() != Some(&0.0) || s.kappa_grid.windows(2).any(|w| w[1] <= w[0]) {
                violation(&mut out, "sweep.kappa_grid", "must start at 0 and be strictly increasing");
            }
            if s.kappa_grid.iter().any(|&k| k < 0.0) {
                violation(&mut out, "sweep.kappa_grid", "must be >= 0");
            }
            if s.volatility && cfg.t_grid.iter().any(|&t| t <= 1.0) {
                violation(&mut out, "t_grid", "volatility needs every time > 1");
            }
            if s.p_list.is_empty() {
                violation(&mut out, "sweep.p_list", "must be nonempty");
            }
            if s.u0_list.is_empty() {
                violation(&mut out, "sweep.u0_list", "must be nonempty");
            }
            if s.p_list.iter().any(|&p| p > 0) && cfg.replicas < 2 {
                violation(&mut out, "replicas", "annealed orders need at least two replicas");
            }
            if let (Some(l), Some(&t)) = (&lattice, cfg.t_grid.last()) {
                if !s.allow_small_lattice {
                    if let Some(msg) = s.kappa_grid.iter().rev().find_map(|&k| wraparound_guard(l, k, t)) {
                        violation(&mut out, "lattice.side", format!("{msg} (set sweep.allow_small_lattice to override)"));
                    }
                }
            }
        }
        ExperimentKind::Diagnostics => {
            let d = &cfg.diagnostics;
            if d.blocks.is_empty() {
                violation(&mut out, "diagnostics.blocks", "must be nonempty");
            }
            if d.n_env == 0 || d.blocks_per_env == 0 {
                violation(&mut out, "diagnostics.n_env", "need n_env >= 1 and blocks_per_env >= 1");
            }
            for (i, b) in d.blocks.iter().enumerate() {
                let field = format!("diagnostics.blocks[{i}]");
                match b.coarser().scale() {
                    Err(e) => push_err(&mut out, &field, e),
                    Ok(big) => {
                        if let Some(l) = &lattice {
                            if l.side() % big != 0 {
                                violation(&mut out, &field, format!("A^(R+1) = {big} must divide the side {}", l.side()));
                            }
                        }
                    }
                }
            }
            if !d.tail_r.is_empty() {
                if d.tail_c.is_empty() {
                    violation(&mut out, "diagnostics.tail_c", "must be nonempty when tail_r is set");
                }
                if d.tail_samples == 0 {
                    violation(&mut out, "diagnostics.tail_samples", "must be >= 1");
                }
                if let Some(l) = &lattice {
                    if d.tail_r.iter().any(|&r| 2 * r + 1 > l.side()) {
                        violation(&mut out, "diagnostics.tail_r", "boxes [-R, R]^d must fit in the torus");
                    }
                }
                if cfg.horizon < 1.0 {
                    violation(&mut out, "horizon", "the tail table needs horizon >= 1");
                }
            }
        }
        ExperimentKind::Percolation => {
            check_sorted(&mut out, "percolation.alpha_grid", &cfg.percolation.alpha_grid);
            let t = cfg.percolation.t;
            if !(t > 0.0 && t <= cfg.horizon) {
                violation(&mut out, "percolation.t", format!("must lie in (0, horizon], got {t}"));
            }
        }
        ExperimentKind::EnvSample | ExperimentKind::Solve => {}
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub tool_version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputRecord>,
    pub seed: u64,
    /// Labels of the random streams derived from the master seed.
    pub stream_labels: Vec<String>,
    pub threads: usize,
}

/// Files written by a run; deleted on drop unless the run completed.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            keep: false,
        })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn records(&self) -> Result<Vec<OutputRecord>> {
        self.files
            .iter()
            .map(|p| {
                let data = fs::read(p)?;
                Ok(OutputRecord {
                    file: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                    bytes: data.len() as u64,
                    sha256: hex::encode(Sha256::digest(&data)),
                })
            })
            .collect()
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.keep {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Run in a dedicated pool of `threads` workers (rayon's default when `None`).
pub fn run_with_threads(cfg: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<RunManifest> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| invalid("threads", e.to_string()))?;
    pool.install(|| run(cfg, out_dir))
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let problems = validate(cfg);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|v| v.to_string()).collect();
        return Err(Error::InvalidParameter {
            field: "config",
            reason: list.join("; "),
        });
    }
    let started = Instant::now();
    let lattice = cfg.lattice()?;
    let mut outputs = Outputs::new(out_dir)?;
    let mut labels = Vec::new();
    match cfg.kind {
        ExperimentKind::EnvSample => {
            labels.push("env/0".to_string());
            let trace = sample_centered(&cfg.env, &lattice, cfg.horizon, replica_env_seed(cfg.seed, 0))?;
            outputs.write("events.csv", |w| write_events(&trace, w))?;
            outputs.write("trace.json", |w| {
                serde_json::to_writer_pretty(&mut *w, &TraceManifest::of(&trace)).map_err(|e| Error::Io(e.to_string()))?;
                writeln!(w)?;
                Ok(())
            })?;
        }
        ExperimentKind::Solve => {
            labels.push("env/0".to_string());
            let trace = sample_centered(&cfg.env, &lattice, cfg.horizon, replica_env_seed(cfg.seed, 0))?;
            let sol = solve_pam(&trace, cfg.kappa, &cfg.u0, &cfg.t_grid, &cfg.solver)?;
            outputs.write("origin.csv", |w| sol.write_origin_csv(w))?;
            outputs.write("snapshots.csv", |w| sol.write_snapshots_csv(w))?;
        }
        ExperimentKind::Fk => {
            labels.push("env/0".to_string());
            labels.push("fk/<t index>".to_string());
            let trace = sample_centered(&cfg.env, &lattice, cfg.horizon, replica_env_seed(cfg.seed, 0))?;
            let sol = solve_pam(&trace, cfg.kappa, &cfg.u0, &cfg.t_grid, &cfg.solver)?;
            let tree = SeedTree::new(cfg.seed);
            let mut rows = Vec::with_capacity(cfg.t_grid.len());
            for (i, &t) in cfg.t_grid.iter().enumerate() {
                let est = fk_estimate(&trace, cfg.kappa, &cfg.u0, cfg.mc.site, t, cfg.mc.n_samples, tree.derive("fk", i as u64))?;
                rows.push((t, est, sol.log_u(cfg.mc.site, i)));
            }
            outputs.write("fk.csv", |w| {
                writeln!(w, "t,site,log_u_estimate,std_error,n_samples,n_nonzero,log_u_solver")?;
                for (t, e, s) in &rows {
                    writeln!(w, "{t},{},{},{},{},{},{s}", cfg.mc.site, e.mean, e.std_error, e.n_samples, e.n_nonzero)?;
                }
                Ok(())
            })?;
        }
        ExperimentKind::LyapunovSweep => {
            labels.push("env/<replica>".to_string());
            let sweep_cfg = SweepConfig {
                kappa_grid: cfg.sweep.kappa_grid.clone(),
                p_list: cfg.sweep.p_list.clone(),
                t_grid: cfg.t_grid.clone(),
                replicas: cfg.replicas,
                u0_list: cfg.sweep.u0_list.clone(),
            };
            let sweep = kappa_sweep(&cfg.env, &lattice, &sweep_cfg, &cfg.solver, cfg.seed)?;
            outputs.write("sweep.csv", |w| sweep.write_csv(w))?;
            outputs.write("extrapolation.csv", |w| {
                writeln!(w, "kappa,p,u0,a,b")?;
                for (k, p, u0, a, b) in extrapolate(&sweep.rows) {
                    writeln!(w, "{k},{p},{u0},{a},{b}")?;
                }
                Ok(())
            })?;
            if cfg.sweep.volatility {
                let rows = volatility_statistic(&cfg.env, &lattice, &cfg.t_grid, cfg.replicas, 0, cfg.seed)?;
                outputs.write("volatility.csv", |w| {
                    writeln!(w, "{VOLATILITY_HEADER}")?;
                    for r in &rows {
                        writeln!(w, "{},{},{}", r.t, r.value, r.ci_half_width)?;
                    }
                    Ok(())
                })?;
            }
            let last = cfg.t_grid.len() - 1;
            outputs.write("continuity.csv", |w| {
                writeln!(w, "kappa,u0,t,delta,delta_ci,quotient,quotient_ci")?;
                for u0 in &cfg.sweep.u0_list {
                    for r in sweep.continuity(u0.name(), last) {
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{}",
                            r.kappa,
                            u0.name(),
                            cfg.t_grid[last],
                            r.delta,
                            r.delta_ci,
                            r.quotient,
                            r.quotient_ci
                        )?;
                    }
                }
                Ok(())
            })?;
        }
        ExperimentKind::Diagnostics => {
            labels.push("env/<environment>".to_string());
            labels.push("blocks/<environment>".to_string());
            let d = &cfg.diagnostics;
            let tree = SeedTree::new(cfg.seed);
            let reports = d
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| mixing_event_frequency(b, &cfg.env, &lattice, d.n_env, d.blocks_per_env, tree.derive("mixing", i as u64)))
                .collect::<Result<Vec<_>>>()?;
            outputs.write("mixing.csv", |w| write_mixing_csv(&reports, w))?;
            if !d.tail_r.is_empty() {
                let rows = tail_condition_check(&cfg.env, &lattice, &d.tail_r, &d.tail_c, d.tail_alpha, d.tail_samples, tree.derive("tail", 0))?;
                outputs.write("tail.csv", |w| write_tail_csv(&rows, w))?;
            }
        }
        ExperimentKind::Percolation => {
            labels.push("env/<replica>".to_string());
            let profiles = (0..cfg.replicas)
                .map(|r| {
                    let trace = sample_centered(&cfg.env, &lattice, cfg.horizon, replica_env_seed(cfg.seed, r))?;
                    percolation_profile(&trace, cfg.percolation.t, &cfg.percolation.alpha_grid)
                })
                .collect::<Result<Vec<_>>>()?;
            outputs.write("profile.csv", |w| profiles[0].write_csv(w))?;
            outputs.write("thresholds.csv", |w| {
                writeln!(w, "replica,threshold,density")?;
                for (r, p) in profiles.iter().enumerate() {
                    let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
                    writeln!(w, "{r},{},{}", fmt(p.threshold), fmt(p.threshold_density))?;
                }
                Ok(())
            })?;
        }
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: outputs.records()?,
        seed: cfg.seed,
        stream_labels: labels,
        threads: rayon::current_num_threads(),
    };
    outputs.write("manifest.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })?;
    outputs.keep = true;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "solve"
seed = 7
horizon = 2.0
kappa = 1.0
u0 = "ones"
t_grid = [0.5, 1.0, 2.0]

[lattice]
dim = 1
side = 8

[env]
model = "constant"
value = 0.0
centering = "none"
"#;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_toml(BASE).unwrap()
    }

    fn fields(cfg: &ExperimentConfig) -> Vec<String> {
        validate(cfg).into_iter().map(|v| v.field).collect()
    }

    #[test]
    fn parses_and_roundtrips() {
        let cfg = base();
        assert_eq!(cfg.kind, ExperimentKind::Solve);
        assert_eq!(cfg.u0, InitialCondition::Ones);
        assert!(validate(&cfg).is_empty());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml("kind = \"solve\"\nbogus = 1").is_err());
    }

    #[test]
    fn violations_name_fields() {
        let mut cfg = base();
        cfg.lattice.side = 2;
        assert_eq!(fields(&cfg), vec!["lattice.side"]);
        let mut cfg = base();
        cfg.t_grid = vec![1.0, 3.0];
        assert_eq!(fields(&cfg), vec!["t_grid"]);
        let mut cfg = base();
        cfg.env = EnvModelSpec::new(crate::environments::EnvModel::ZeroRange { rho: 1.0, beta: 1.5 }, Default::default());
        assert_eq!(fields(&cfg), vec!["env.beta"]);
    }

    #[test]
    fn lyapunov_guard_can_be_overridden() {
        let mut cfg = base();
        cfg.kind = ExperimentKind::LyapunovSweep;
        cfg.replicas = 2;
        cfg.horizon = 10.0;
        cfg.t_grid = vec![5.0, 10.0];
        cfg.sweep.kappa_grid = vec![0.0, 1.0];
        assert_eq!(fields(&cfg), vec!["lattice.side"]);
        cfg.sweep.allow_small_lattice = true;
        assert!(validate(&cfg).is_empty());
    }

    #[test]
    fn solve_with_zero_field_and_ones_gives_zero_logs() {
        let dir = tempfile::tempdir().unwrap();
        let m = run(&base(), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("origin.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,log_u_origin"));
        for line in lines {
            let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert!(v.abs() < 1e-12, "{line}");
        }
        assert_eq!(m.outputs.len(), 2);
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn sweep_on_constant_field_reports_the_constant() {
        let mut cfg = base();
        cfg.kind = ExperimentKind::LyapunovSweep;
        cfg.env = EnvModelSpec::constant(0.3);
        cfg.replicas = 3;
        cfg.sweep.kappa_grid = vec![0.0];
        let dir = tempfile::tempdir().unwrap();
        run(&cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(crate::lyapunov::SWEEP_HEADER));
        for line in lines {
            let v: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
            assert!((v - 0.3).abs() < 1e-12, "{line}");
        }
    }

    #[test]
    fn failed_run_leaves_no_outputs() {
        let mut cfg = base();
        cfg.kind = ExperimentKind::Fk;
        cfg.u0 = InitialCondition::Delta0;
        cfg.kappa = 0.0;
        cfg.mc.site = 3;
        cfg.mc.n_samples = 10;
        // κ = 0 from a site away from the origin never reaches δ_0: degenerate
        let parent = tempfile::tempdir().unwrap();
        let out = parent.path().join("run");
        assert!(matches!(run(&cfg, &out), Err(Error::Degenerate { .. })));
        assert!(!out.exists());
    }

    #[test]
    fn invalid_config_does_not_start() {
        let mut cfg = base();
        cfg.horizon = -1.0;
        let parent = tempfile::tempdir().unwrap();
        let out = parent.path().join("run");
        let err = run(&cfg, &out).unwrap_err();
        assert!(err.to_string().contains("horizon"));
        assert!(!out.exists());
    }
}
