//! Backoff contention on an idle channel.
//!
//! Every contender draws a backoff counter uniformly from `1..=lambda_max`
//! mini-slots. The unique smallest counter wins the slot; a tie on the
//! smallest counter is an RTS/CTS collision and nobody transmits. For `k`
//! contenders the probability that one particular contender wins is
//!
//! ```text
//! g(k) = Σ_{λ=1}^{λmax} (1/λmax) · ((λmax − λ)/λmax)^(k−1)
//! ```
//!
//! which is evaluated for real `k ≥ 1` so that mean-field masses can be fed
//! in directly.

use rand::Rng;

use crate::error::{Error, Result};

/// Number of backoff mini-slots per contention stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentionConfig {
    lambda_max: u32,
}

impl ContentionConfig {
    pub fn new(lambda_max: u32) -> Result<Self> {
        if lambda_max == 0 {
            return Err(Error::InvalidParameter(
                "lambda_max must be at least 1".into(),
            ));
        }
        Ok(Self { lambda_max })
    }

    pub fn lambda_max(&self) -> u32 {
        self.lambda_max
    }
}

/// Probability that a given contender out of `k` wins the channel.
///
/// `k` may be fractional. The `λ = λmax` term is `0^(k−1)`, which is 1 at
/// `k = 1` and 0 above it.
pub fn grab_probability(k: f64, cfg: ContentionConfig) -> Result<f64> {
    if !(k >= 1.0) {
        return Err(Error::ContenderDomain(k));
    }
    Ok(grab_unchecked(k, cfg.lambda_max))
}

fn grab_unchecked(k: f64, lambda_max: u32) -> f64 {
    let l = lambda_max as f64;
    let exponent = k - 1.0;
    // Summing from the smallest terms up keeps the rounding error well below 1e-15.
    let sum: f64 = (0..lambda_max).map(|j| (j as f64 / l).powf(exponent)).sum();
    sum / l
}

/// Memoized `g(k)` for integer `k`, with a real-valued fallback.
///
/// Owned per worker; the engine builds one per run.
#[derive(Debug, Clone)]
pub struct GrabTable {
    cfg: ContentionConfig,
    values: Vec<f64>,
}

impl GrabTable {
    /// Precomputes `g(1..=k_max)`.
    pub fn new(cfg: ContentionConfig, k_max: usize) -> Self {
        let values = (1..=k_max.max(1))
            .map(|k| grab_unchecked(k as f64, cfg.lambda_max))
            .collect();
        Self { cfg, values }
    }

    pub fn config(&self) -> ContentionConfig {
        self.cfg
    }

    /// `g(k)` for an integer contender count. `k = 0` is treated as 1.
    pub fn get(&self, k: usize) -> f64 {
        let k = k.max(1);
        match self.values.get(k - 1) {
            Some(&v) => v,
            None => grab_unchecked(k as f64, self.cfg.lambda_max),
        }
    }

    /// `g` at a real-valued mass; masses below one contender clamp to `g = 1`.
    pub fn at_mass(&self, mass: f64) -> f64 {
        if mass <= 1.0 {
            1.0
        } else {
            grab_unchecked(mass, self.cfg.lambda_max)
        }
    }
}

/// Resolves one contention round from explicit backoff draws.
///
/// Returns the id holding the unique minimum counter, or `None` on a tie.
pub fn resolve_backoff<I>(draws: I) -> Option<usize>
where
    I: IntoIterator<Item = (usize, u32)>,
{
    let mut best: Option<(usize, u32)> = None;
    let mut tied = false;
    for (id, lambda) in draws {
        match best {
            None => best = Some((id, lambda)),
            Some((_, b)) if lambda < b => {
                best = Some((id, lambda));
                tied = false;
            }
            Some((_, b)) if lambda == b => tied = true,
            Some(_) => {}
        }
    }
    match (best, tied) {
        (Some((id, _)), false) => Some(id),
        _ => None,
    }
}

/// Runs one contention round among `contenders`, drawing every backoff from `rng`.
pub fn run_contention<R: Rng + ?Sized>(
    contenders: &[usize],
    cfg: ContentionConfig,
    rng: &mut R,
) -> Option<usize> {
    if contenders.len() == 1 {
        return Some(contenders[0]);
    }
    let draws: Vec<(usize, u32)> = contenders
        .iter()
        .map(|&id| (id, rng.random_range(1..=cfg.lambda_max)))
        .collect();
    resolve_backoff(draws)
}
