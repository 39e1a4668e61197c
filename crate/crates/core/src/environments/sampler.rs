//! Exact continuous-time simulation of the built-in environments.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{invalid, Error, Result};
use crate::lattice::{Lattice, Site};
use crate::rng::{stream_from_seed, StreamRng};

use super::spec::{Centering, EnvModel, EnvModelSpec, MarkovChain, ZeroRangeLaw};
use super::trace::{EnvTrace, Event};

/// Upper bound on the total particle number of a particle trace.
pub const MAX_PARTICLES: u64 = 1 << 31;

/// Sample a stationary-start trace on `[0, horizon]`.
///
/// The returned trace is *raw*; apply [`center_field`] to subtract the mean.
pub fn sample_env(spec: &EnvModelSpec, lattice: &Lattice, horizon: f64, seed: u64) -> Result<EnvTrace> {
    spec.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("horizon", format!("must be finite and > 0, got {horizon}")));
    }
    let mut rng = stream_from_seed(seed, "env");
    let (initial, events) = match &spec.model {
        EnvModel::Constant { value } => (vec![*value; lattice.n_sites()], Vec::new()),
        EnvModel::IidMarkov { .. } => {
            let chain = MarkovChain::from_model(&spec.model)?;
            iid_markov(&chain, lattice, horizon, &mut rng)
        }
        EnvModel::IndependentWalks { nu } => independent_walks(*nu, lattice, horizon, &mut rng)?,
        EnvModel::Exclusion { rho } => exclusion(*rho, lattice, horizon, &mut rng),
        EnvModel::ZeroRange { rho, beta } => {
            let law = ZeroRangeLaw::new(*rho, *beta)?;
            zero_range(&law, lattice, horizon, &mut rng)?
        }
    };
    EnvTrace::from_parts(lattice.clone(), horizon, spec.clone(), seed, initial, events)
}

/// Sample and center according to `spec.centering`.
pub fn sample_centered(spec: &EnvModelSpec, lattice: &Lattice, horizon: f64, seed: u64) -> Result<EnvTrace> {
    center_field(&sample_env(spec, lattice, horizon, seed)?)
}

/// Subtract the stationary mean (analytic) or the space-time average
/// (empirical) from every value. Already-centered traces are returned as is.
pub fn center_field(trace: &EnvTrace) -> Result<EnvTrace> {
    if trace.centered_by() != 0.0 {
        return Ok(trace.clone());
    }
    let mean = match trace.spec().centering {
        Centering::None => return Ok(trace.clone()),
        Centering::Analytic => trace.spec().stationary_mean()?,
        Centering::Empirical => empirical_mean(trace),
    };
    Ok(trace.shifted(mean))
}

/// Space-time average `(1 / (L^d T)) Σ_x ∫_0^T ξ(x, s) ds`.
pub fn empirical_mean(trace: &EnvTrace) -> f64 {
    let n = trace.lattice().n_sites();
    let total: f64 = (0..n).map(|x| trace.integral_to(x, trace.horizon())).sum();
    total / (n as f64 * trace.horizon())
}

fn exp_clock(rate: f64) -> Exp<f64> {
    Exp::new(rate).expect("positive finite rate")
}

fn iid_markov(chain: &MarkovChain, lattice: &Lattice, horizon: f64, rng: &mut StreamRng) -> (Vec<f64>, Vec<Event>) {
    let n_states = chain.states.len();
    let pick = |rng: &mut StreamRng, weights: &[f64], total: f64| -> usize {
        let mut u = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(n_states - 1)
    };
    let mut initial = Vec::with_capacity(lattice.n_sites());
    let mut events = Vec::new();
    for site in 0..lattice.n_sites() {
        let mut state = pick(rng, &chain.stationary, 1.0);
        initial.push(chain.states[state]);
        let mut t = 0.0;
        loop {
            let q = chain.exit_rates[state];
            if q <= 0.0 {
                break;
            }
            t += rng.sample(exp_clock(q));
            if t > horizon {
                break;
            }
            state = pick(rng, &chain.rates[state], q);
            events.push(Event {
                time: t,
                site,
                value: chain.states[state],
            });
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.site.cmp(&b.site)));
    (initial, events)
}

fn poisson_count(mean: f64, rng: &mut StreamRng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn independent_walks(nu: f64, lattice: &Lattice, horizon: f64, rng: &mut StreamRng) -> Result<(Vec<f64>, Vec<Event>)> {
    let n = lattice.n_sites();
    let mut counts = vec![0u64; n];
    let mut particles: Vec<Site> = Vec::new();
    for (site, c) in counts.iter_mut().enumerate() {
        *c = poisson_count(nu, rng);
        if particles.len() as u64 + *c > MAX_PARTICLES {
            return Err(Error::ParticleOverflow(particles.len() as u64 + *c));
        }
        particles.extend(std::iter::repeat_n(site, *c as usize));
    }
    let initial = counts.iter().map(|&c| c as f64).collect();
    let mut events = Vec::new();
    if particles.is_empty() {
        return Ok((initial, events));
    }
    let clock = exp_clock(particles.len() as f64);
    let degree = lattice.degree();
    let mut t = 0.0;
    loop {
        t += rng.sample(clock);
        if t > horizon {
            break;
        }
        let p = rng.random_range(0..particles.len());
        let from = particles[p];
        let to = lattice.neighbor(from, rng.random_range(0..degree));
        particles[p] = to;
        counts[from] -= 1;
        counts[to] += 1;
        events.push(Event { time: t, site: from, value: counts[from] as f64 });
        events.push(Event { time: t, site: to, value: counts[to] as f64 });
    }
    Ok((initial, events))
}

fn exclusion(rho: f64, lattice: &Lattice, horizon: f64, rng: &mut StreamRng) -> (Vec<f64>, Vec<Event>) {
    let n = lattice.n_sites();
    let mut occ: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < rho).collect();
    let initial = occ.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let mut events = Vec::new();
    // every undirected edge {x, x + e_axis} carries a rate-1 clock
    let clock = exp_clock(lattice.n_edges() as f64);
    let dim = lattice.dim();
    let mut t = 0.0;
    loop {
        t += rng.sample(clock);
        if t > horizon {
            break;
        }
        let x = rng.random_range(0..n);
        let axis = rng.random_range(0..dim);
        let y = lattice.neighbor(x, 2 * axis);
        if occ[x] != occ[y] {
            occ.swap(x, y);
            events.push(Event { time: t, site: x, value: f64::from(u8::from(occ[x])) });
            events.push(Event { time: t, site: y, value: f64::from(u8::from(occ[y])) });
        }
    }
    (initial, events)
}

/// Fenwick tree over nonnegative site rates.
struct RateTree {
    tree: Vec<f64>,
    rates: Vec<f64>,
}

impl RateTree {
    fn new(rates: Vec<f64>) -> Self {
        let mut t = Self {
            tree: vec![0.0; rates.len() + 1],
            rates: vec![0.0; rates.len()],
        };
        t.rebuild(rates);
        t
    }

    fn rebuild(&mut self, rates: Vec<f64>) {
        let n = rates.len();
        self.tree.iter_mut().for_each(|v| *v = 0.0);
        for (i, &r) in rates.iter().enumerate() {
            // children of j have smaller indices and are already folded in
            let j = i + 1;
            self.tree[j] += r;
            let parent = j + (j & j.wrapping_neg());
            if parent <= n {
                let v = self.tree[j];
                self.tree[parent] += v;
            }
        }
        self.rates = rates;
    }

    fn set(&mut self, i: usize, rate: f64) {
        let delta = rate - self.rates[i];
        self.rates[i] = rate;
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut j = self.rates.len();
        let mut s = 0.0;
        while j > 0 {
            s += self.tree[j];
            j -= j & j.wrapping_neg();
        }
        s
    }

    /// Smallest index whose cumulative rate exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.rates.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        // float drift can push past the last positive rate
        let mut idx = pos.min(n - 1);
        while self.rates[idx] <= 0.0 && idx > 0 {
            idx -= 1;
        }
        while self.rates[idx] <= 0.0 && idx + 1 < n {
            idx += 1;
        }
        idx
    }
}

fn zero_range(law: &ZeroRangeLaw, lattice: &Lattice, horizon: f64, rng: &mut StreamRng) -> Result<(Vec<f64>, Vec<Event>)> {
    let n = lattice.n_sites();
    let mut counts = Vec::with_capacity(n);
    let mut total: u64 = 0;
    for _ in 0..n {
        let k = law.quantile(rng.random::<f64>());
        total += k;
        if total > MAX_PARTICLES {
            return Err(Error::ParticleOverflow(total));
        }
        counts.push(k);
    }
    let initial = counts.iter().map(|&c| c as f64).collect();
    let mut events = Vec::new();
    let beta = law.beta;
    let g = |k: u64| if k == 0 { 0.0 } else { (k as f64).powf(beta) };
    let mut tree = RateTree::new(counts.iter().map(|&k| g(k)).collect());
    let degree = lattice.degree();
    let mut t = 0.0;
    let mut since_rebuild = 0usize;
    loop {
        let rate = tree.total();
        if rate <= 0.0 {
            break;
        }
        t += rng.sample(exp_clock(rate));
        if t > horizon {
            break;
        }
        let from = tree.find(rng.random::<f64>() * rate);
        let to = lattice.neighbor(from, rng.random_range(0..degree));
        counts[from] -= 1;
        counts[to] += 1;
        tree.set(from, g(counts[from]));
        tree.set(to, g(counts[to]));
        events.push(Event { time: t, site: from, value: counts[from] as f64 });
        events.push(Event { time: t, site: to, value: counts[to] as f64 });
        since_rebuild += 1;
        if since_rebuild >= 1 << 16 {
            tree.rebuild(counts.iter().map(|&k| g(k)).collect());
            since_rebuild = 0;
        }
    }
    Ok((initial, events))
}
