//! Primary-traffic channel availability and Rayleigh-faded slot rates.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// How the idle/busy state of a channel evolves from slot to slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdleModel {
    /// Independent Bernoulli draw each slot, idle with probability `theta`.
    Iid { theta: f64 },
    /// Two-state chain: `p` is busy→idle, `q` is idle→busy.
    Markov { p: f64, q: f64 },
}

impl IdleModel {
    /// Markov chain with stationary idle probability `theta` and mixing `mu`:
    /// `p = mu·theta`, `q = mu·(1 − theta)`.
    pub fn markov_from_theta(theta: f64, mu: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidChannel(format!(
                "idle probability {theta} outside (0,1)"
            )));
        }
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::InvalidChannel(format!("mixing {mu} outside (0,1]")));
        }
        let model = IdleModel::Markov {
            p: mu * theta,
            q: mu * (1.0 - theta),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            IdleModel::Iid { theta } => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::InvalidChannel(format!(
                        "idle probability {theta} outside (0,1)"
                    )));
                }
            }
            IdleModel::Markov { p, q } => {
                for (name, v) in [("p", p), ("q", q)] {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(Error::InvalidChannel(format!(
                            "transition probability {name}={v} outside (0,1]"
                        )));
                    }
                }
                if p == 1.0 && q == 1.0 {
                    return Err(Error::InvalidChannel(
                        "p = q = 1 is a deterministic alternation".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Long-run fraction of idle slots.
    pub fn stationary_idle_prob(&self) -> f64 {
        match *self {
            IdleModel::Iid { theta } => theta,
            IdleModel::Markov { p, q } => p / (p + q),
        }
    }
}

/// Stationary idle probability `p / (p + q)` of a Markov channel.
pub fn stationary_idle_prob(p: f64, q: f64) -> Result<f64> {
    if !(p + q > 0.0) {
        return Err(Error::InvalidChannel("p + q must be positive".into()));
    }
    Ok(p / (p + q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelState {
    Idle,
    Busy,
}

impl ChannelState {
    pub fn is_idle(self) -> bool {
        matches!(self, ChannelState::Idle)
    }
}

/// One licensed channel. Bandwidth in MHz, noise power in mW.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub id: usize,
    pub bandwidth_mhz: f64,
    pub idle: IdleModel,
    pub noise_power_mw: f64,
    /// Default mean of the exponential channel gain.
    pub mean_gain: f64,
}

impl ChannelSpec {
    pub fn new(
        id: usize,
        bandwidth_mhz: f64,
        idle: IdleModel,
        noise_power_mw: f64,
        mean_gain: f64,
    ) -> Result<Self> {
        idle.validate()?;
        for (name, v) in [
            ("bandwidth", bandwidth_mhz),
            ("noise power", noise_power_mw),
            ("mean gain", mean_gain),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidChannel(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            id,
            bandwidth_mhz,
            idle,
            noise_power_mw,
            mean_gain,
        })
    }

    pub fn theta(&self) -> f64 {
        self.idle.stationary_idle_prob()
    }

    /// Draws the state of the next slot. `prev = None` starts a Markov chain
    /// from its stationary distribution.
    pub fn sample_state<R: Rng + ?Sized>(
        &self,
        prev: Option<ChannelState>,
        rng: &mut R,
    ) -> ChannelState {
        let p_idle = match (self.idle, prev) {
            (IdleModel::Iid { theta }, _) => theta,
            (m @ IdleModel::Markov { .. }, None) => m.stationary_idle_prob(),
            (IdleModel::Markov { p, .. }, Some(ChannelState::Busy)) => p,
            (IdleModel::Markov { q, .. }, Some(ChannelState::Idle)) => 1.0 - q,
        };
        if rng.random::<f64>() < p_idle {
            ChannelState::Idle
        } else {
            ChannelState::Busy
        }
    }
}

/// Per-user radio parameters: transmit power in mW and per-channel mean gains.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRadioSpec {
    pub id: usize,
    pub tx_power_mw: f64,
    pub mean_gain: Vec<f64>,
}

impl UserRadioSpec {
    pub fn new(id: usize, tx_power_mw: f64, mean_gain: Vec<f64>) -> Result<Self> {
        if !(tx_power_mw > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "user {id}: transmit power must be positive"
            )));
        }
        if let Some(g) = mean_gain.iter().find(|g| !(**g > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "user {id}: mean gain must be positive, got {g}"
            )));
        }
        Ok(Self {
            id,
            tx_power_mw,
            mean_gain,
        })
    }
}

/// Shannon rate in Mbps for a given instantaneous gain.
pub fn shannon_rate(bandwidth_mhz: f64, tx_power_mw: f64, gain: f64, noise_power_mw: f64) -> f64 {
    bandwidth_mhz * (1.0 + tx_power_mw * gain / noise_power_mw).log2()
}

/// Draws one slot rate (Mbps) for `user` on `channel` under Rayleigh fading.
pub fn sample_rate<R: Rng + ?Sized>(
    channel: &ChannelSpec,
    user: &UserRadioSpec,
    rng: &mut R,
) -> f64 {
    let mean_gain = user
        .mean_gain
        .get(channel.id)
        .copied()
        .unwrap_or(channel.mean_gain);
    let h: f64 = Exp1.sample(rng);
    shannon_rate(
        channel.bandwidth_mhz,
        user.tx_power_mw,
        mean_gain * h,
        channel.noise_power_mw,
    )
}

/// `E[log2(1 + snr·X)]` for `X ~ Exp(1)`, by Simpson's rule after `x = e^u`.
pub fn mean_log2_rayleigh(mean_snr: f64) -> f64 {
    if mean_snr <= 0.0 {
        return 0.0;
    }
    // integrand ln(1 + a e^u) exp(−e^u) e^u, negligible outside [−45, 4.5]
    let (lo, hi) = (-45.0_f64, 4.5_f64);
    let n = 6000usize;
    let h = (hi - lo) / n as f64;
    let f = |u: f64| {
        let x = u.exp();
        (mean_snr * x).ln_1p() * (-x).exp() * x
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0 / std::f64::consts::LN_2
}

/// Expected slot rate (Mbps) given a mean gain.
pub fn mean_rate(bandwidth_mhz: f64, tx_power_mw: f64, mean_gain: f64, noise_power_mw: f64) -> f64 {
    bandwidth_mhz * mean_log2_rayleigh(tx_power_mw * mean_gain / noise_power_mw)
}

/// Finds the mean gain whose expected Shannon rate equals `target_mbps`.
///
/// Bisection on `ln(snr)`; the result reproduces the target to ~1e-10 relative.
pub fn calibrate_mean_gain(
    target_mbps: f64,
    bandwidth_mhz: f64,
    tx_power_mw: f64,
    noise_power_mw: f64,
) -> Result<f64> {
    if !(target_mbps > 0.0 && target_mbps.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target mean rate must be positive, got {target_mbps}"
        )));
    }
    let bits = target_mbps / bandwidth_mhz;
    let (mut lo, mut hi) = (-40.0_f64, 120.0_f64);
    if mean_log2_rayleigh(hi.exp()) < bits {
        return Err(Error::InvalidParameter(format!(
            "mean rate {target_mbps} Mbps is unreachable on {bandwidth_mhz} MHz"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_log2_rayleigh(mid.exp()) < bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let snr = (0.5 * (lo + hi)).exp();
    Ok(snr * noise_power_mw / tx_power_mw)
}

/// mW from dBm.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}
