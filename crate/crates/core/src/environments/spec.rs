use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Which dynamic random field drives the equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum EnvModel {
    /// Independent copies of a finite-state continuous-time Markov chain,
    /// one per site. `rates[i][j]` is the jump rate from state `i` to `j`.
    IidMarkov { states: Vec<f64>, rates: Vec<Vec<f64>> },
    /// Poisson(`nu`) particles per site, each an independent rate-1 walk.
    IndependentWalks { nu: f64 },
    /// Nearest-neighbor symmetric exclusion started from Bernoulli(`rho`).
    Exclusion { rho: f64 },
    /// Zero-range process with departure rate `k^beta`, started from the
    /// product law with fugacity `rho`.
    ZeroRange { rho: f64, beta: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    Analytic,
    Empirical,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvModelSpec {
    #[serde(flatten)]
    pub model: EnvModel,
    #[serde(default)]
    pub centering: Centering,
}

impl EnvModelSpec {
    pub fn new(model: EnvModel, centering: Centering) -> Self {
        Self { model, centering }
    }

    /// Two-state chain on `{-1, +1}` flipping at rate 1 in each direction.
    pub fn two_state() -> Self {
        Self::two_state_with(-1.0, 1.0, 1.0)
    }

    pub fn two_state_with(low: f64, high: f64, rate: f64) -> Self {
        Self::new(
            EnvModel::IidMarkov {
                states: vec![low, high],
                rates: vec![vec![0.0, rate], vec![rate, 0.0]],
            },
            Centering::Analytic,
        )
    }

    pub fn constant(value: f64) -> Self {
        Self::new(EnvModel::Constant { value }, Centering::None)
    }

    pub fn with_centering(mut self, centering: Centering) -> Self {
        self.centering = centering;
        self
    }

    /// Short model tag used in CSV outputs.
    pub fn name(&self) -> &'static str {
        match self.model {
            EnvModel::IidMarkov { .. } => "iid_markov",
            EnvModel::IndependentWalks { .. } => "independent_walks",
            EnvModel::Exclusion { .. } => "exclusion",
            EnvModel::ZeroRange { .. } => "zero_range",
            EnvModel::Constant { .. } => "constant",
        }
    }

    pub fn is_particle_model(&self) -> bool {
        matches!(
            self.model,
            EnvModel::IndependentWalks { .. } | EnvModel::Exclusion { .. } | EnvModel::ZeroRange { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match &self.model {
            EnvModel::IidMarkov { .. } => {
                MarkovChain::from_model(&self.model)?;
            }
            EnvModel::IndependentWalks { nu } => {
                if !(nu.is_finite() && *nu >= 0.0) {
                    return Err(invalid("nu", format!("intensity must be finite and >= 0, got {nu}")));
                }
            }
            EnvModel::Exclusion { rho } => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(invalid("rho", format!("density must lie in [0, 1], got {rho}")));
                }
            }
            EnvModel::ZeroRange { rho, beta } => {
                if !(rho.is_finite() && *rho > 0.0) {
                    return Err(invalid("rho", format!("fugacity must be > 0, got {rho}")));
                }
                if !(*beta > 0.0 && *beta <= 1.0) {
                    return Err(invalid("beta", format!("exponent must lie in (0, 1], got {beta}")));
                }
            }
            EnvModel::Constant { value } => {
                if !value.is_finite() {
                    return Err(invalid("value", "constant must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Mean of `ξ(0,0)` under the stationary law.
    pub fn stationary_mean(&self) -> Result<f64> {
        self.validate()?;
        Ok(match &self.model {
            EnvModel::IidMarkov { .. } => MarkovChain::from_model(&self.model)?.mean(),
            EnvModel::IndependentWalks { nu } => *nu,
            EnvModel::Exclusion { rho } => *rho,
            EnvModel::ZeroRange { rho, beta } => ZeroRangeLaw::new(*rho, *beta)?.mean(),
            EnvModel::Constant { value } => *value,
        })
    }
}

/// Finite-state chain with its stationary distribution.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    pub states: Vec<f64>,
    pub rates: Vec<Vec<f64>>,
    pub exit_rates: Vec<f64>,
    pub stationary: Vec<f64>,
}

impl MarkovChain {
    pub fn from_model(model: &EnvModel) -> Result<Self> {
        let EnvModel::IidMarkov { states, rates } = model else {
            return Err(invalid("model", "not an iid_markov model"));
        };
        let n = states.len();
        if n == 0 {
            return Err(invalid("states", "at least one state required"));
        }
        if states.iter().any(|s| !s.is_finite()) {
            return Err(invalid("states", "state values must be finite"));
        }
        if rates.len() != n || rates.iter().any(|r| r.len() != n) {
            return Err(invalid("rates", format!("rate matrix must be {n}x{n}")));
        }
        let mut rates = rates.clone();
        for (i, row) in rates.iter_mut().enumerate() {
            row[i] = 0.0;
            if row.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(invalid("rates", "rates must be finite and >= 0"));
            }
        }
        let exit_rates: Vec<f64> = rates.iter().map(|r| r.iter().sum()).collect();

        // π Q = 0 with Σ π = 1: transpose the generator and replace the last
        // equation by the normalization.
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(j, i)] = if i == j { -exit_rates[i] } else { rates[i][j] };
            }
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| invalid("rates", "chain is not irreducible (no unique stationary law)"))?;
        if pi.iter().any(|p| !p.is_finite() || *p < -1e-12) {
            return Err(invalid("rates", "chain is not irreducible (no unique stationary law)"));
        }
        let stationary = pi.iter().map(|p| p.max(0.0)).collect();
        Ok(Self {
            states: states.clone(),
            rates,
            exit_rates,
            stationary,
        })
    }

    pub fn mean(&self) -> f64 {
        self.states.iter().zip(&self.stationary).map(|(s, p)| s * p).sum()
    }
}

/// Single-site marginal `π_ρ(k) = γ ρ^k / (g(1)⋯g(k))` with `g(k) = k^β`.
#[derive(Debug, Clone)]
pub struct ZeroRangeLaw {
    pub rho: f64,
    pub beta: f64,
    /// Normalization constant γ.
    pub gamma: f64,
    pub pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl ZeroRangeLaw {
    const MAX_TERMS: usize = 1 << 22;

    pub fn new(rho: f64, beta: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(invalid("rho", format!("fugacity must be > 0, got {rho}")));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid("beta", format!("exponent must lie in (0, 1], got {beta}")));
        }
        // Terms are accumulated relative to the largest one seen so far so
        // that large fugacities do not overflow.
        let log_rho = rho.ln();
        let mut log_terms = vec![0.0f64];
        let mut log_fact = 0.0;
        let mut peak = 0.0f64;
        let mut partial = 1.0f64;
        let mut k = 0usize;
        loop {
            k += 1;
            log_fact += (k as f64).ln();
            let lt = k as f64 * log_rho - beta * log_fact;
            let prev = log_terms[k - 1];
            log_terms.push(lt);
            if lt > peak {
                partial = partial * (peak - lt).exp() + 1.0;
                peak = lt;
            } else {
                partial += (lt - peak).exp();
            }
            if lt < prev && (lt - peak).exp() < 1e-16 * partial {
                break;
            }
            if k >= Self::MAX_TERMS {
                return Err(invalid("rho", "series for the normalization did not converge"));
            }
        }
        let peak = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_terms.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = weights.iter().sum();
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let gamma = pmf[0];
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            rho,
            beta,
            gamma,
            pmf,
            cdf,
        })
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> u64 {
        self.cdf.partition_point(|&c| c <= u).min(self.pmf.len() - 1) as u64
    }
}
