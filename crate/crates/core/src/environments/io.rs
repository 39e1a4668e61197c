//! Trace persistence: a JSON manifest plus a `time,site,new_value` table.
//!
//! The table starts with one row per site at time `0` holding the initial
//! field, followed by the event log in time order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

use super::spec::EnvModelSpec;
use super::trace::{EnvTrace, Event};

pub const EVENT_HEADER: &str = "time,site,new_value";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub spec: EnvModelSpec,
    pub dim: usize,
    pub side: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Total particle number for particle models.
    pub particle_count: Option<u64>,
    pub n_events: usize,
    pub centered_by: f64,
}

impl TraceManifest {
    pub fn of(trace: &EnvTrace) -> Self {
        let particle_count = (trace.spec().is_particle_model() && trace.centered_by() == 0.0)
            .then(|| trace.initial_total().round() as u64);
        Self {
            spec: trace.spec().clone(),
            dim: trace.lattice().dim(),
            side: trace.lattice().side(),
            horizon: trace.horizon(),
            seed: trace.seed(),
            particle_count,
            n_events: trace.events().len(),
            centered_by: trace.centered_by(),
        }
    }
}

pub fn write_events<W: Write>(trace: &EnvTrace, mut out: W) -> Result<()> {
    writeln!(out, "{EVENT_HEADER}")?;
    for (site, v) in trace.initial().iter().enumerate() {
        writeln!(out, "0,{site},{v}")?;
    }
    for e in trace.events() {
        writeln!(out, "{},{},{}", e.time, e.site, e.value)?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(manifest: &TraceManifest, input: R) -> Result<EnvTrace> {
    let lattice = Lattice::new(manifest.dim, manifest.side)?;
    let n = lattice.n_sites();
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != EVENT_HEADER {
        return Err(Error::Parse(format!("expected header `{EVENT_HEADER}`, found `{header}`")));
    }
    let mut initial = vec![f64::NAN; n];
    let mut events = Vec::with_capacity(manifest.n_events);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("line {}: `{line}`", lineno + 2));
        let mut cols = line.split(',');
        let time: f64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let site: usize = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let value: f64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if cols.next().is_some() || site >= n {
            return Err(bad());
        }
        if time == 0.0 {
            initial[site] = value;
        } else {
            events.push(Event { time, site, value });
        }
    }
    if initial.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse("initial field incomplete".into()));
    }
    let mut trace = EnvTrace::from_parts(lattice, manifest.horizon, manifest.spec.clone(), manifest.seed, initial, events)?;
    // values on disk are already shifted; only the bookkeeping is restored
    trace.set_centered_by(manifest.centered_by);
    Ok(trace)
}
