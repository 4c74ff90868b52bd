//! Expected-throughput model `U = θ_m · B_m^n · g(k_m)` shared by the
//! simulator, the mean-field dynamics and the analysis routines.

use crate::contention::{ContentionConfig, GrabTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ThroughputModel {
    idle: Vec<f64>,
    /// One row when rates are shared by all users, else one row per user.
    rates: Vec<Vec<f64>>,
    shared: bool,
    grab: GrabTable,
}

impl ThroughputModel {
    /// All users see the same mean rate on a channel.
    pub fn homogeneous(
        idle: Vec<f64>,
        rate: Vec<f64>,
        contention: ContentionConfig,
    ) -> Result<Self> {
        Self::check_channels(&idle, &rate)?;
        let k_max = 512;
        Ok(Self {
            idle,
            rates: vec![rate],
            shared: true,
            grab: GrabTable::new(contention, k_max),
        })
    }

    /// `rates[n][m]` is the mean rate of user `n` on channel `m`.
    pub fn heterogeneous(
        idle: Vec<f64>,
        rates: Vec<Vec<f64>>,
        contention: ContentionConfig,
    ) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidParameter("no users in rate table".into()));
        }
        for row in &rates {
            Self::check_channels(&idle, row)?;
        }
        let k_max = rates.len().max(1);
        Ok(Self {
            idle,
            rates,
            shared: false,
            grab: GrabTable::new(contention, k_max),
        })
    }

    fn check_channels(idle: &[f64], rate: &[f64]) -> Result<()> {
        if idle.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one channel is required".into(),
            ));
        }
        if idle.len() != rate.len() {
            return Err(Error::InvalidParameter(format!(
                "{} idle probabilities but {} rates",
                idle.len(),
                rate.len()
            )));
        }
        if let Some(t) = idle.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "idle probability {t} outside (0,1]"
            )));
        }
        if let Some(b) = rate.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidParameter(format!("mean rate {b} is invalid")));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.idle.len()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.shared
    }

    /// Number of rate rows when heterogeneous.
    pub fn user_rows(&self) -> Option<usize> {
        (!self.shared).then_some(self.rates.len())
    }

    pub fn idle(&self) -> &[f64] {
        &self.idle
    }

    pub fn shared_rates(&self) -> Option<&[f64]> {
        self.shared.then(|| self.rates[0].as_slice())
    }

    pub fn rate(&self, user: usize, channel: usize) -> f64 {
        if self.shared {
            self.rates[0][channel]
        } else {
            self.rates[user][channel]
        }
    }

    pub fn grab(&self) -> &GrabTable {
        &self.grab
    }

    pub fn contention(&self) -> ContentionConfig {
        self.grab.config()
    }

    /// `θ_m · B_m^n` for a sole user.
    pub fn peak(&self, user: usize, channel: usize) -> f64 {
        self.idle[channel] * self.rate(user, channel)
    }

    /// Largest `θ_m · B_m^n` over channels (and users, if heterogeneous).
    pub fn max_peak(&self) -> f64 {
        self.rates
            .iter()
            .flat_map(|row| row.iter().zip(&self.idle).map(|(b, t)| b * t))
            .fold(0.0, f64::max)
    }

    /// Expected throughput of `user` on `channel` with `k` contenders.
    pub fn utility(&self, user: usize, channel: usize, k: usize) -> f64 {
        self.peak(user, channel) * self.grab.get(k)
    }

    /// Expected throughput on `channel` at a real-valued contender mass (shared rates).
    pub fn utility_at_mass(&self, channel: usize, mass: f64) -> f64 {
        self.idle[channel] * self.rates[0][channel] * self.grab.at_mass(mass)
    }

    /// Per-user expected throughputs of an allocation.
    pub fn allocation_utilities(&self, allocation: &[usize]) -> Vec<f64> {
        let counts = occupancy(allocation, self.channels());
        allocation
            .iter()
            .enumerate()
            .map(|(n, &m)| self.utility(n, m, counts[m]))
            .collect()
    }
}

/// Number of users on each channel.
pub fn occupancy(allocation: &[usize], channels: usize) -> Vec<usize> {
    let mut counts = vec![0; channels];
    for &m in allocation {
        counts[m] += 1;
    }
    counts
}
