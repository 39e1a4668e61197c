use crate::error::{invalid, Error, Result};
use crate::lattice::{FieldSnapshot, Lattice, Site};

use super::spec::EnvModelSpec;

/// A single update `ξ(site, t) := value` at time `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub site: Site,
    pub value: f64,
}

/// Piecewise-constant, right-continuous realization of `ξ` on
/// `lattice × [0, horizon]`.
///
/// Besides the global time-ordered event log, each site keeps its own
/// change list with running integrals, so point queries and occupation
/// integrals are `O(log m)` in the number of changes at that site.
#[derive(Debug, Clone)]
pub struct EnvTrace {
    lattice: Lattice,
    horizon: f64,
    spec: EnvModelSpec,
    seed: u64,
    initial: Vec<f64>,
    events: Vec<Event>,
    offsets: Vec<usize>,
    change_times: Vec<f64>,
    change_values: Vec<f64>,
    /// `∫_0^{change_times[i]} ξ(site, s) ds`.
    change_prefix: Vec<f64>,
    centered_by: f64,
    max_abs: f64,
}

impl EnvTrace {
    /// Build a trace from an initial field and a time-ordered event log.
    pub fn from_parts(
        lattice: Lattice,
        horizon: f64,
        spec: EnvModelSpec,
        seed: u64,
        initial: Vec<f64>,
        events: Vec<Event>,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon", format!("must be finite and > 0, got {horizon}")));
        }
        let initial = FieldSnapshot::new(lattice.clone(), initial)?.into_values();
        let n = lattice.n_sites();
        let mut last = 0.0;
        for (i, e) in events.iter().enumerate() {
            if !(e.time > 0.0 && e.time <= horizon) {
                return Err(invalid("events", format!("event {i} at time {} outside (0, {horizon}]", e.time)));
            }
            if e.time < last {
                return Err(invalid("events", format!("event {i} is out of time order")));
            }
            if e.site >= n {
                return Err(invalid("events", format!("event {i} names site {} >= {n}", e.site)));
            }
            if !e.value.is_finite() {
                return Err(Error::NonFinite(format!("event {i} value {}", e.value)));
            }
            last = e.time;
        }
        Ok(Self::index(lattice, horizon, spec, seed, initial, events, 0.0))
    }

    fn index(
        lattice: Lattice,
        horizon: f64,
        spec: EnvModelSpec,
        seed: u64,
        initial: Vec<f64>,
        events: Vec<Event>,
        centered_by: f64,
    ) -> Self {
        let n = lattice.n_sites();
        let mut counts = vec![0usize; n + 1];
        for e in &events {
            counts[e.site + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut fill = offsets.clone();
        let m = events.len();
        let mut change_times = vec![0.0; m];
        let mut change_values = vec![0.0; m];
        for e in &events {
            let slot = fill[e.site];
            change_times[slot] = e.time;
            change_values[slot] = e.value;
            fill[e.site] += 1;
        }
        let mut change_prefix = vec![0.0; m];
        for x in 0..n {
            let mut acc = 0.0;
            let mut t_prev = 0.0;
            let mut v_prev = initial[x];
            for i in offsets[x]..offsets[x + 1] {
                acc += v_prev * (change_times[i] - t_prev);
                change_prefix[i] = acc;
                t_prev = change_times[i];
                v_prev = change_values[i];
            }
        }
        let max_abs = initial
            .iter()
            .chain(change_values.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            lattice,
            horizon,
            spec,
            seed,
            initial,
            events,
            offsets,
            change_times,
            change_values,
            change_prefix,
            centered_by,
            max_abs,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn spec(&self) -> &EnvModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn initial_snapshot(&self) -> FieldSnapshot {
        FieldSnapshot::new(self.lattice.clone(), self.initial.clone()).expect("validated at construction")
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Amount subtracted from the raw field by centering (0 if uncentered).
    pub fn centered_by(&self) -> f64 {
        self.centered_by
    }

    /// `max |ξ|` over the whole trace.
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    /// Events grouped by identical time stamps.
    pub fn event_groups(&self) -> impl Iterator<Item = &[Event]> {
        self.events.chunk_by(|a, b| a.time == b.time)
    }

    /// Change times and values recorded at `site`.
    pub fn site_changes(&self, site: Site) -> (&[f64], &[f64]) {
        let r = self.offsets[site]..self.offsets[site + 1];
        (&self.change_times[r.clone()], &self.change_values[r])
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                t,
                lo: 0.0,
                hi: self.horizon,
            })
        }
    }

    /// Index (global) of the last change at `site` with time `<= t`.
    fn last_change(&self, site: Site, t: f64) -> Option<usize> {
        let lo = self.offsets[site];
        let times = &self.change_times[lo..self.offsets[site + 1]];
        let k = times.partition_point(|&s| s <= t);
        (k > 0).then(|| lo + k - 1)
    }

    /// `ξ(site, t)`, right-continuous at event times.
    pub fn query(&self, site: Site, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.value_at(site, t))
    }

    pub(crate) fn value_at(&self, site: Site, t: f64) -> f64 {
        match self.last_change(site, t) {
            Some(i) => self.change_values[i],
            None => self.initial[site],
        }
    }

    /// `ξ(site, anchor - s)`.
    pub fn query_reversed(&self, site: Site, s: f64, anchor: f64) -> Result<f64> {
        if !(s >= 0.0 && s <= anchor) {
            return Err(Error::OutOfBounds { t: s, lo: 0.0, hi: anchor });
        }
        self.query(site, anchor - s)
    }

    /// `∫_0^t ξ(site, s) ds`.
    pub(crate) fn integral_to(&self, site: Site, t: f64) -> f64 {
        match self.last_change(site, t) {
            Some(i) => self.change_prefix[i] + self.change_values[i] * (t - self.change_times[i]),
            None => self.initial[site] * t,
        }
    }

    /// `∫_{t0}^{t1} ξ(site, s) ds`, exact over the constancy intervals.
    pub fn occupation_integral(&self, site: Site, t0: f64, t1: f64) -> Result<f64> {
        self.check_time(t0)?;
        self.check_time(t1)?;
        if t0 > t1 {
            return Err(Error::OutOfBounds { t: t0, lo: 0.0, hi: t1 });
        }
        Ok(self.integral_unchecked(site, t0, t1))
    }

    pub(crate) fn integral_unchecked(&self, site: Site, t0: f64, t1: f64) -> f64 {
        // Sum directly over the pieces when the window is short relative to
        // the change list; this avoids cancellation in prefix differences.
        let (times, values) = self.site_changes(site);
        let start = times.partition_point(|&s| s <= t0);
        let end = times.partition_point(|&s| s <= t1);
        if end - start <= 32 {
            let mut v = if start == 0 { self.initial[site] } else { values[start - 1] };
            let mut t = t0;
            let mut acc = 0.0;
            for i in start..end {
                acc += v * (times[i] - t);
                t = times[i];
                v = values[i];
            }
            acc + v * (t1 - t)
        } else {
            self.integral_to(site, t1) - self.integral_to(site, t0)
        }
    }

    /// Constancy pieces `(start, end, value)` of `ξ(site, ·)` on `[t0, t1]`.
    pub fn segments(&self, site: Site, t0: f64, t1: f64) -> Vec<(f64, f64, f64)> {
        let (times, values) = self.site_changes(site);
        let start = times.partition_point(|&s| s <= t0);
        let end = times.partition_point(|&s| s <= t1);
        let mut out = Vec::with_capacity(end - start + 1);
        let mut v = if start == 0 { self.initial[site] } else { values[start - 1] };
        let mut t = t0;
        for i in start..end {
            if times[i] > t {
                out.push((t, times[i], v));
            }
            t = times[i];
            v = values[i];
        }
        out.push((t, t1, v));
        out
    }

    /// `q^T(x) = sup_{0 <= t <= T} ξ(x, t)` per site.
    pub fn sup_field(&self, horizon: f64) -> Result<FieldSnapshot> {
        if !(horizon > 0.0 && horizon <= self.horizon) {
            return Err(Error::OutOfBounds {
                t: horizon,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        let values = (0..self.lattice.n_sites())
            .map(|x| {
                let (times, vals) = self.site_changes(x);
                let end = times.partition_point(|&s| s <= horizon);
                vals[..end].iter().copied().fold(self.initial[x], f64::max)
            })
            .collect();
        FieldSnapshot::new(self.lattice.clone(), values)
    }

    /// Field snapshot at time `t`.
    pub fn snapshot(&self, t: f64) -> Result<FieldSnapshot> {
        self.check_time(t)?;
        let values = (0..self.lattice.n_sites()).map(|x| self.value_at(x, t)).collect();
        FieldSnapshot::new(self.lattice.clone(), values)
    }

    /// Apply `f` to every value of the trace.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> EnvTrace {
        let initial = self.initial.iter().map(|&v| f(v)).collect();
        let events = self
            .events
            .iter()
            .map(|e| Event { value: f(e.value), ..*e })
            .collect();
        Self::index(
            self.lattice.clone(),
            self.horizon,
            self.spec.clone(),
            self.seed,
            initial,
            events,
            self.centered_by,
        )
    }

    /// Shift the field by `-mean`, recording the shift.
    pub(crate) fn shifted(&self, mean: f64) -> EnvTrace {
        let mut out = self.map_values(|v| v - mean);
        out.centered_by = self.centered_by + mean;
        out
    }

    pub(crate) fn set_centered_by(&mut self, c: f64) {
        self.centered_by = c;
    }

    /// Restrict the trace to `[0, horizon]` with `horizon <= self.horizon`.
    pub fn truncate(&self, horizon: f64) -> Result<EnvTrace> {
        if !(horizon > 0.0 && horizon <= self.horizon) {
            return Err(Error::OutOfBounds {
                t: horizon,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        let events = self.events.iter().copied().filter(|e| e.time <= horizon).collect();
        Ok(Self::index(
            self.lattice.clone(),
            horizon,
            self.spec.clone(),
            self.seed,
            self.initial.clone(),
            events,
            self.centered_by,
        ))
    }

    /// Sum of the field at time 0.
    pub fn initial_total(&self) -> f64 {
        self.initial.iter().sum()
    }

    /// Replay the event log and return the total `Σ_x ξ(x, ·)` if it is the
    /// same after every group of simultaneous events, `None` otherwise.
    pub fn conserved_total(&self) -> Option<f64> {
        let mut current = self.initial.clone();
        let total = self.initial_total();
        let mut running = total;
        for group in self.event_groups() {
            for e in group {
                running += e.value - current[e.site];
                current[e.site] = e.value;
            }
            if running != total {
                return None;
            }
        }
        Some(total)
    }

    /// All values at time 0 and after every event.
    pub fn all_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.initial.iter().copied().chain(self.events.iter().map(|e| e.value))
    }
}

/// Pointwise `a(x, s) >= b(x, s)` for all `(x, s)`; returns the first
/// violation found.
pub fn dominates(a: &EnvTrace, b: &EnvTrace) -> Result<()> {
    if a.lattice() != b.lattice() {
        return Err(invalid("trace", "traces live on different lattices"));
    }
    let horizon = a.horizon().min(b.horizon());
    for x in 0..a.lattice().n_sites() {
        let (ta, _) = a.site_changes(x);
        let (tb, _) = b.site_changes(x);
        let mut breaks: Vec<f64> = std::iter::once(0.0)
            .chain(ta.iter().copied())
            .chain(tb.iter().copied())
            .filter(|&t| t <= horizon)
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        for &t in &breaks {
            let (va, vb) = (a.value_at(x, t), b.value_at(x, t));
            if va < vb {
                return Err(Error::OrderViolation {
                    site: x,
                    time: t,
                    upper: va,
                    lower: vb,
                });
            }
        }
    }
    Ok(())
}
