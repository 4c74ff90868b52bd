//! Maximum-likelihood estimates of the grab probability, the idle
//! probability and the mean rate from one decision period of slot
//! observations, plus the additive-noise abstraction of the throughput
//! estimate.
//!
//! All three estimators are sample averages. The idle probability and the
//! mean rate are folded into running means over every period a user has
//! spent on a channel; the grab probability depends on the current
//! congestion and is re-estimated each period.

use rand::Rng;

use crate::error::{Error, Result};

/// Slot observations of one user during one decision period.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationLog {
    pub period: usize,
    /// Channel state per slot (`true` = idle).
    pub state: Vec<bool>,
    /// Whether the user won the contention in the slot.
    pub grabbed: Vec<bool>,
    /// Realized rate in Mbps (zero unless grabbed).
    pub rate: Vec<f64>,
}

impl ObservationLog {
    pub fn new(
        period: usize,
        state: Vec<bool>,
        grabbed: Vec<bool>,
        rate: Vec<f64>,
    ) -> Result<Self> {
        let log = Self {
            period,
            state,
            grabbed,
            rate,
        };
        log.validate()?;
        Ok(log)
    }

    pub fn with_capacity(period: usize, slots: usize) -> Self {
        Self {
            period,
            state: Vec::with_capacity(slots),
            grabbed: Vec::with_capacity(slots),
            rate: Vec::with_capacity(slots),
        }
    }

    pub fn clear(&mut self, period: usize) {
        self.period = period;
        self.state.clear();
        self.grabbed.clear();
        self.rate.clear();
    }

    pub fn push(&mut self, idle: bool, grabbed: bool, rate: f64) {
        debug_assert!(idle || !grabbed);
        debug_assert!(grabbed || rate == 0.0);
        self.state.push(idle);
        self.grabbed.push(grabbed);
        self.rate.push(rate);
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.state.len();
        if self.grabbed.len() != l || self.rate.len() != l {
            return Err(Error::InvalidParameter(
                "observation arrays differ in length".into(),
            ));
        }
        for (tau, ((&s, &i), &b)) in self
            .state
            .iter()
            .zip(&self.grabbed)
            .zip(&self.rate)
            .enumerate()
        {
            if i && !s {
                return Err(Error::InvalidParameter(format!(
                    "slot {tau}: grabbed a busy channel"
                )));
            }
            if !(b >= 0.0) || (b > 0.0 && !i) {
                return Err(Error::InvalidParameter(format!(
                    "slot {tau}: rate {b} without a successful grab"
                )));
            }
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.state.len()
    }

    pub fn idle_slots(&self) -> usize {
        self.state.iter().filter(|&&s| s).count()
    }

    pub fn grabs(&self) -> usize {
        self.grabbed.iter().filter(|&&i| i).count()
    }

    pub fn total_rate(&self) -> f64 {
        self.rate.iter().sum()
    }
}

/// `Σ I / Σ S`, or `None` when the channel was busy in every slot.
pub fn estimate_grab_prob(log: &ObservationLog) -> Option<f64> {
    match log.idle_slots() {
        0 => None,
        s => Some(log.grabs() as f64 / s as f64),
    }
}

/// One-period idle estimate `Σ S / L`.
pub fn one_period_idle(log: &ObservationLog) -> Option<f64> {
    match log.slots() {
        0 => None,
        l => Some(log.idle_slots() as f64 / l as f64),
    }
}

/// One-period mean-rate estimate `Σ b / Σ I`.
pub fn one_period_rate(log: &ObservationLog) -> Option<f64> {
    match log.grabs() {
        0 => None,
        i => Some(log.total_rate() / i as f64),
    }
}

/// A user's running statistics for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub channel: usize,
    pub theta_hat: f64,
    pub rate_hat: f64,
    /// Latest grab-probability estimate.
    pub grab_hat: f64,
    /// Periods folded into `theta_hat`.
    pub periods_used: usize,
    /// Periods folded into `rate_hat`; lags `periods_used` when a period had no grabs.
    pub rate_periods: usize,
}

impl ChannelEstimate {
    /// Estimates before any observation: `θ̃ = 0.5`, `B̃ = 0`, `g̃ = 1`.
    pub fn new(channel: usize) -> Self {
        Self {
            channel,
            theta_hat: 0.5,
            rate_hat: 0.0,
            grab_hat: 1.0,
            periods_used: 0,
            rate_periods: 0,
        }
    }

    /// Drops accumulated history, keeping the channel id.
    pub fn reset(&mut self) {
        *self = Self::new(self.channel);
    }

    /// Folds one period into every estimate.
    pub fn observe(&mut self, log: &ObservationLog) {
        self.update_idle(log);
        self.update_rate(log);
        if let Some(g) = estimate_grab_prob(log) {
            self.grab_hat = g;
        }
    }

    pub fn update_idle(&mut self, log: &ObservationLog) {
        if let Some(theta) = one_period_idle(log) {
            let c = self.periods_used as f64;
            self.theta_hat = if self.periods_used == 0 {
                theta
            } else {
                (self.theta_hat * c + theta) / (c + 1.0)
            };
            self.periods_used += 1;
        }
    }

    pub fn update_rate(&mut self, log: &ObservationLog) {
        if let Some(b) = one_period_rate(log) {
            let c = self.rate_periods as f64;
            self.rate_hat = if self.rate_periods == 0 {
                b
            } else {
                (self.rate_hat * c + b) / (c + 1.0)
            };
            self.rate_periods += 1;
        }
    }

    /// `θ̃ · B̃ · g̃` with this channel's own grab estimate.
    pub fn throughput(&self) -> f64 {
        estimate_throughput(self.grab_hat, self.theta_hat, self.rate_hat)
    }
}

/// Folds the period's idle estimate into `prior`.
pub fn estimate_idle_prob(log: &ObservationLog, prior: &ChannelEstimate) -> ChannelEstimate {
    let mut next = prior.clone();
    next.update_idle(log);
    next
}

/// Folds the period's rate estimate into `prior`; a period without grabs leaves it unchanged.
pub fn estimate_mean_rate(log: &ObservationLog, prior: &ChannelEstimate) -> ChannelEstimate {
    let mut next = prior.clone();
    next.update_rate(log);
    next
}

pub fn estimate_throughput(grab: f64, theta: f64, rate: f64) -> f64 {
    grab * theta * rate
}

/// Zero-mean estimation noise added to a throughput, `Ũ = U + ω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Uniform on `(−half_width, half_width)`; zero width means no noise.
    Uniform { half_width: f64 },
    /// Symmetric triangular density on `(−half_width, half_width)`.
    Triangular { half_width: f64 },
}

impl NoiseModel {
    pub fn uniform(half_width: f64) -> Result<Self> {
        Self::check(half_width)?;
        Ok(NoiseModel::Uniform { half_width })
    }

    pub fn triangular(half_width: f64) -> Result<Self> {
        Self::check(half_width)?;
        Ok(NoiseModel::Triangular { half_width })
    }

    fn check(half_width: f64) -> Result<()> {
        if !(half_width >= 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise half width must be non-negative, got {half_width}"
            )));
        }
        Ok(())
    }

    /// Default for analysis: uniform with half width `0.05 · max θB`.
    pub fn default_for(max_expected_throughput: f64) -> Self {
        NoiseModel::Uniform {
            half_width: 0.05 * max_expected_throughput,
        }
    }

    pub fn half_width(&self) -> f64 {
        match *self {
            NoiseModel::Uniform { half_width } | NoiseModel::Triangular { half_width } => {
                half_width
            }
        }
    }

    /// `(ω_lower, ω_upper)`.
    pub fn support(&self) -> (f64, f64) {
        let a = self.half_width();
        (-a, a)
    }

    /// Density `f(ω)`.
    pub fn density(&self, w: f64) -> f64 {
        let a = self.half_width();
        if a == 0.0 || w <= -a || w >= a {
            return 0.0;
        }
        match self {
            NoiseModel::Uniform { .. } => 0.5 / a,
            NoiseModel::Triangular { .. } => (a - w.abs()) / (a * a),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.half_width();
        if a == 0.0 {
            return 0.0;
        }
        match self {
            NoiseModel::Uniform { .. } => rng.random_range(-a..a),
            NoiseModel::Triangular { .. } => {
                rng.random_range(-a / 2.0..a / 2.0) + rng.random_range(-a / 2.0..a / 2.0)
            }
        }
    }
}

/// `U + ω` with one noise draw.
pub fn apply_noise<R: Rng + ?Sized>(throughput: f64, model: &NoiseModel, rng: &mut R) -> f64 {
    throughput + model.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn log(s: &[u8], i: &[u8], b: &[f64]) -> ObservationLog {
        ObservationLog::new(
            1,
            s.iter().map(|&x| x == 1).collect(),
            i.iter().map(|&x| x == 1).collect(),
            b.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn grab_sample_average() {
        let l = log(&[1, 0, 1, 1], &[1, 0, 0, 1], &[3.0, 0.0, 0.0, 4.0]);
        assert!((estimate_grab_prob(&l).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let all = log(&[1, 1, 1], &[1, 1, 1], &[1.0, 1.0, 1.0]);
        assert_eq!(estimate_grab_prob(&all), Some(1.0));
        let busy = log(&[0, 0], &[0, 0], &[0.0, 0.0]);
        assert_eq!(estimate_grab_prob(&busy), None);
    }

    #[test]
    fn busy_period_keeps_previous_grab() {
        let mut est = ChannelEstimate::new(0);
        est.observe(&log(&[1, 1], &[1, 0], &[5.0, 0.0]));
        assert_eq!(est.grab_hat, 0.5);
        est.observe(&log(&[0, 0], &[0, 0], &[0.0, 0.0]));
        assert_eq!(est.grab_hat, 0.5);
        assert_eq!(est.periods_used, 2);
        assert_eq!(est.rate_periods, 1);
    }

    #[test]
    fn idle_running_mean() {
        let p0 = ChannelEstimate::new(2);
        let p1 = estimate_idle_prob(&log(&[1, 1, 1, 0], &[0; 4], &[0.0; 4]), &p0);
        assert_eq!(p1.theta_hat, 0.75);
        let p2 = estimate_idle_prob(&log(&[1, 0, 0, 0], &[0; 4], &[0.0; 4]), &p1);
        assert_eq!(p2.theta_hat, 0.5);
        assert_eq!(p2.periods_used, 2);
    }

    #[test]
    fn rate_estimate_and_skip() {
        let p0 = ChannelEstimate::new(0);
        let p1 = estimate_mean_rate(
            &log(&[1, 1, 1, 1], &[1, 0, 0, 1], &[10.0, 0.0, 0.0, 20.0]),
            &p0,
        );
        assert_eq!(p1.rate_hat, 15.0);
        let p2 = estimate_mean_rate(&log(&[1, 1], &[1, 1], &[90.0, 90.0]), &p0);
        assert_eq!(p2.rate_hat, 90.0);
        let p3 = estimate_mean_rate(&log(&[1, 1], &[0, 0], &[0.0, 0.0]), &p1);
        assert_eq!(p3, p1);
    }

    #[test]
    fn throughput_product() {
        assert_eq!(estimate_throughput(1.0, 1.0, 50.0), 50.0);
        assert!((estimate_throughput(0.49, 2.0 / 3.0, 90.0) - 29.4).abs() < 1e-12);
    }

    #[test]
    fn malformed_logs_rejected() {
        assert!(ObservationLog::new(0, vec![false], vec![true], vec![0.0]).is_err());
        assert!(ObservationLog::new(0, vec![true], vec![false], vec![3.0]).is_err());
        assert!(ObservationLog::new(0, vec![true], vec![], vec![]).is_err());
    }

    #[test]
    fn zero_width_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = NoiseModel::uniform(0.0).unwrap();
        assert_eq!(apply_noise(12.5, &m, &mut rng), 12.5);
    }

    #[test]
    fn uniform_noise_zero_mean_and_positive_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = NoiseModel::uniform(1.0).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut bins = [0usize; 20];
        for _ in 0..n {
            let w = apply_noise(0.0, &m, &mut rng);
            assert!(w > -1.0 && w < 1.0);
            sum += w;
            bins[((w + 1.0) * 10.0) as usize] += 1;
        }
        let mean = sum / n as f64;
        let sigma = (1.0 / 3.0_f64).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma);
        assert!(bins.iter().all(|&c| c > 0));
        assert!(m.density(0.99) > 0.0 && m.density(-0.99) > 0.0);
    }

    #[test]
    fn triangular_noise_is_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = NoiseModel::triangular(2.0).unwrap();
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| m.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!(NoiseModel::uniform(-1.0).is_err());
    }
}
