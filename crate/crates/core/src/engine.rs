//! The per-period imitation loop.
//!
//! Each decision period every user stays on one channel for `L` slots,
//! senses it, contends for it and records what happened. At the end of the
//! period it updates its estimates, asks one (or `F`) random neighbors for
//! their estimate, and moves to the neighbor's channel if that estimate is
//! strictly better than its own.
//!
//! In heterogeneous mode users first scan every channel in a random order,
//! revisiting channels on which they never won a slot (so have no rate
//! sample) for at most `SCAN_LIMIT_FACTOR · M` scan periods in total.
//! Afterwards a neighbor reports its grab-probability estimate instead of
//! its throughput, and the user projects its own throughput on the
//! neighbor's channel from its own idle/rate statistics.

use std::collections::VecDeque;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::{self, ChannelSpec, ChannelState, IdleModel, UserRadioSpec};
use crate::contention::{resolve_backoff, ContentionConfig};
use crate::error::{Error, Result};
use crate::estimation::{ChannelEstimate, NoiseModel, ObservationLog};
use crate::graph::EffectiveGraph;
use crate::model::{occupancy, ThroughputModel};
use crate::rng::{channel_stream, user_stream, Stream};

/// Physical radio parameters shared by all channels/users unless overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioDefaults {
    pub bandwidth_mhz: f64,
    pub noise_power_mw: f64,
    pub tx_power_mw: f64,
}

impl Default for RadioDefaults {
    /// 10 MHz channels, −100 dBm noise, 100 mW transmit power.
    fn default() -> Self {
        Self {
            bandwidth_mhz: 10.0,
            noise_power_mw: channel::dbm_to_mw(-100.0),
            tx_power_mw: 100.0,
        }
    }
}

/// Channels, user radios, the expected-throughput model and who listens to whom.
#[derive(Debug, Clone)]
pub struct Network {
    pub channels: Vec<ChannelSpec>,
    pub radios: Vec<UserRadioSpec>,
    pub model: ThroughputModel,
    pub neighborhoods: EffectiveGraph,
}

impl Network {
    /// Builds a network whose fading gains are calibrated so that each user's
    /// mean rate on each channel equals `rates[n][m]` (or the shared row).
    pub fn calibrated(
        idle: &[IdleModel],
        rates: &Rates,
        radio: RadioDefaults,
        contention: ContentionConfig,
        neighborhoods: EffectiveGraph,
    ) -> Result<Self> {
        let users = neighborhoods.users();
        if users == 0 {
            return Err(Error::InvalidParameter(
                "at least one user is required".into(),
            ));
        }
        let m = idle.len();
        let theta: Vec<f64> = idle.iter().map(IdleModel::stationary_idle_prob).collect();
        let gain_for = |b: f64| {
            channel::calibrate_mean_gain(
                b,
                radio.bandwidth_mhz,
                radio.tx_power_mw,
                radio.noise_power_mw,
            )
        };
        let (model, gains): (ThroughputModel, Vec<Vec<f64>>) = match rates {
            Rates::Shared(row) => {
                let g: Vec<f64> = row.iter().map(|&b| gain_for(b)).collect::<Result<_>>()?;
                (
                    ThroughputModel::homogeneous(theta, row.clone(), contention)?,
                    vec![g; users],
                )
            }
            Rates::PerUser(table) => {
                if table.len() != users {
                    return Err(Error::InvalidParameter(format!(
                        "rate table has {} rows for {users} users",
                        table.len()
                    )));
                }
                let g = table
                    .iter()
                    .map(|row| row.iter().map(|&b| gain_for(b)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                (
                    ThroughputModel::heterogeneous(theta, table.clone(), contention)?,
                    g,
                )
            }
        };
        let channels = idle
            .iter()
            .enumerate()
            .map(|(id, &model)| {
                let mean_gain = gains[0][id];
                ChannelSpec::new(
                    id,
                    radio.bandwidth_mhz,
                    model,
                    radio.noise_power_mw,
                    mean_gain,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let radios = gains
            .into_iter()
            .enumerate()
            .map(|(id, g)| UserRadioSpec::new(id, radio.tx_power_mw, g))
            .collect::<Result<Vec<_>>>()?;
        if channels.len() != m {
            unreachable!();
        }
        Ok(Self {
            channels,
            radios,
            model,
            neighborhoods,
        })
    }

    pub fn users(&self) -> usize {
        self.neighborhoods.users()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    fn validate(&self) -> Result<()> {
        if self.radios.len() != self.users() {
            return Err(Error::InvalidParameter(
                "one radio spec per user is required".into(),
            ));
        }
        if self.model.channels() != self.channels.len() {
            return Err(Error::InvalidParameter(
                "model and channel list disagree".into(),
            ));
        }
        if let Some(rows) = self.model.user_rows() {
            if rows != self.users() {
                return Err(Error::InvalidParameter(
                    "rate table and user count disagree".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Mean-rate targets in Mbps.
#[derive(Debug, Clone, PartialEq)]
pub enum Rates {
    Shared(Vec<f64>),
    PerUser(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Throughput estimates are exchanged and compared directly.
    Homogeneous,
    /// Channel scan first; grab-probability estimates are exchanged.
    Heterogeneous,
}

/// Where throughput estimates come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// Slot-level simulation and sample-average estimates.
    Mle,
    /// `Ũ = U + ω` on the exact expected throughput; slots are not simulated.
    AbstractNoise(NoiseModel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub slots_per_period: usize,
    pub fanout: usize,
    pub delay: usize,
    pub mode: Mode,
    pub periods: usize,
    pub estimator: Estimator,
    /// Drop a channel's running statistics when the user comes back to it.
    pub reset_on_return: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            slots_per_period: 100,
            fanout: 1,
            delay: 0,
            mode: Mode::Homogeneous,
            periods: 500,
            estimator: Estimator::Mle,
            reset_on_return: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots_per_period == 0 {
            return Err(Error::InvalidParameter(
                "slots_per_period must be at least 1".into(),
            ));
        }
        if self.fanout == 0 {
            return Err(Error::InvalidParameter("fanout must be at least 1".into()));
        }
        if self.periods == 0 {
            return Err(Error::InvalidParameter("periods must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a user tells an enquiring neighbor about one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Report {
    pub channel: usize,
    pub estimate: f64,
    pub grab: f64,
}

/// The entry `delay` periods before the newest one, or the oldest available.
pub fn delayed_estimate<T: Copy>(buffer: &VecDeque<T>, delay: usize) -> Option<T> {
    let len = buffer.len();
    if len == 0 {
        return None;
    }
    buffer.get(len - 1 - delay.min(len - 1)).copied()
}

/// Channel to use next period given the own estimate and the enquired peers.
///
/// The best peer (ties to the lowest channel index) is imitated only if its
/// value strictly exceeds the own estimate.
pub fn imitation_decision(own_channel: usize, own_estimate: f64, peers: &[(usize, f64)]) -> usize {
    let best = peers.iter().copied().reduce(|best, cand| {
        if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
            cand
        } else {
            best
        }
    });
    match best {
        Some((channel, value)) if value > own_estimate => channel,
        _ => own_channel,
    }
}

/// `θ̃_{m'} · B̃_{m'}^n · g̃_peer`.
pub fn heterogeneous_projection(theta_hat: f64, rate_hat: f64, peer_grab: f64) -> f64 {
    theta_hat * rate_hat * peer_grab
}

/// Scan stage length cap, in multiples of the channel count.
pub const SCAN_LIMIT_FACTOR: usize = 4;

/// Per-user order in which the scan stage visits the channels.
pub fn scan_order<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..channels).collect();
    order.shuffle(rng);
    order
}

/// Runs the scan stage alone, returning the initial visiting orders and
/// each user's estimate table once every user has finished scanning.
pub fn initial_channel_scan(
    net: &Network,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<ChannelEstimate>>)> {
    let scan_cfg = EngineConfig {
        mode: Mode::Heterogeneous,
        periods: SCAN_LIMIT_FACTOR * net.channel_count(),
        ..*cfg
    };
    let mut engine = Engine::new(net, scan_cfg, seed)?;
    while engine.scan_end().is_none() {
        engine.run_period();
    }
    Ok((engine.scan_orders.clone(), engine.estimates.clone()))
}

/// Everything recorded during a run. Rows are indexed by period.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub users: usize,
    pub channels: usize,
    pub slots_per_period: usize,
    /// Period by which every user had finished scanning (heterogeneous mode).
    pub scan_periods: usize,
    pub choices: Vec<Vec<usize>>,
    pub estimates: Vec<Vec<f64>>,
    pub occupancy: Vec<Vec<usize>>,
    /// Mean realized rate per slot during the period, Mbps.
    pub realized: Vec<Vec<f64>>,
    /// Channel switches made at the end of each period.
    pub switches: Vec<usize>,
}

impl SimulationTrace {
    pub fn periods(&self) -> usize {
        self.choices.len()
    }

    /// Per-user mean realized throughput over periods `from..`.
    pub fn time_average_throughput(&self, from: usize) -> Vec<f64> {
        let rows = &self.realized[from.min(self.periods())..];
        let mut acc = vec![0.0; self.users];
        for row in rows {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = rows.len().max(1) as f64;
        acc.into_iter().map(|a| a / n).collect()
    }

    pub fn occupancy_fractions(&self, period: usize) -> Vec<f64> {
        let n = self.users as f64;
        self.occupancy[period]
            .iter()
            .map(|&c| c as f64 / n)
            .collect()
    }

    /// Mean occupancy fractions over periods `from..`.
    pub fn time_averaged_occupancy(&self, from: usize) -> Vec<f64> {
        window_mean(self, from.min(self.periods()), self.periods())
    }

    /// Channel each user held most often over periods `from..` (ties to the lower index).
    pub fn modal_choices(&self, from: usize) -> Vec<usize> {
        let mut counts = vec![vec![0usize; self.channels]; self.users];
        for row in &self.choices[from.min(self.periods())..] {
            for (n, &m) in row.iter().enumerate() {
                counts[n][m] += 1;
            }
        }
        counts
            .into_iter()
            .map(|c| {
                let max = *c.iter().max().unwrap_or(&0);
                c.iter().position(|&v| v == max).unwrap_or(0)
            })
            .collect()
    }

    /// Fraction of periods from `from` that each user spent on each channel.
    pub fn time_shares(&self, from: usize) -> Vec<Vec<f64>> {
        let rows = &self.choices[from.min(self.periods())..];
        let mut shares = vec![vec![0.0; self.channels]; self.users];
        for row in rows {
            for (n, &m) in row.iter().enumerate() {
                shares[n][m] += 1.0;
            }
        }
        let len = rows.len().max(1) as f64;
        shares.iter_mut().flatten().for_each(|s| *s /= len);
        shares
    }

    /// Integer allocation whose counts are the time-averaged occupancy
    /// rounded by largest remainder. Seats go greedily to the users with
    /// the largest time share on each channel.
    pub fn settled_allocation(&self, from: usize) -> Vec<usize> {
        let targets: Vec<f64> = self
            .time_averaged_occupancy(from)
            .iter()
            .map(|f| f * self.users as f64)
            .collect();
        let mut seats = crate::analysis::largest_remainder(&targets, self.users);
        let shares = self.time_shares(from);
        let mut pairs: Vec<(usize, usize)> = (0..self.users)
            .flat_map(|n| (0..self.channels).map(move |m| (n, m)))
            .collect();
        pairs.sort_by(|a, b| shares[b.0][b.1].total_cmp(&shares[a.0][a.1]).then(a.cmp(b)));
        let mut allocation = vec![usize::MAX; self.users];
        for (n, m) in pairs {
            if allocation[n] == usize::MAX && seats[m] > 0 {
                allocation[n] = m;
                seats[m] -= 1;
            }
        }
        allocation
    }
}

fn window_mean(trace: &SimulationTrace, from: usize, to: usize) -> Vec<f64> {
    let mut acc = vec![0.0; trace.channels];
    for t in from..to {
        for (a, f) in acc.iter_mut().zip(trace.occupancy_fractions(t)) {
            *a += f;
        }
    }
    let n = (to - from).max(1) as f64;
    acc.into_iter().map(|a| a / n).collect()
}

/// Outcome of the sliding-window stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    /// First period of the window that matched its predecessor.
    pub converged_at: Option<usize>,
    /// Mean occupancy fractions per window.
    pub windows: Vec<Vec<f64>>,
}

impl Convergence {
    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }
}

/// Splits periods `from..` into windows of `window` periods and declares
/// convergence at the first window whose mean occupancy differs from the
/// previous window's by less than `threshold` in max norm.
pub fn detect_convergence(
    trace: &SimulationTrace,
    from: usize,
    window: usize,
    threshold: f64,
) -> Convergence {
    let window = window.max(1);
    let mut windows = Vec::new();
    let mut start = from;
    while start + window <= trace.periods() {
        windows.push(window_mean(trace, start, start + window));
        start += window;
    }
    let converged_at = windows
        .windows(2)
        .position(|w| max_abs_diff(&w[0], &w[1]) < threshold)
        .map(|i| from + (i + 1) * window);
    Convergence {
        converged_at,
        windows,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs the imitation mechanism period by period.
pub struct Engine<'a> {
    net: &'a Network,
    cfg: EngineConfig,
    period: usize,
    choice: Vec<usize>,
    previous: Vec<Option<usize>>,
    estimates: Vec<Vec<ChannelEstimate>>,
    history: Vec<VecDeque<Report>>,
    scan_orders: Vec<Vec<usize>>,
    scan_done: Vec<Option<usize>>,
    channel_state: Vec<Option<ChannelState>>,
    user_rngs: Vec<Stream>,
    channel_rngs: Vec<Stream>,
    logs: Vec<ObservationLog>,
}

/// One period's record.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRow {
    pub choices: Vec<usize>,
    pub estimates: Vec<f64>,
    pub occupancy: Vec<usize>,
    pub realized: Vec<f64>,
    pub switches: usize,
}

impl<'a> Engine<'a> {
    pub fn new(net: &'a Network, cfg: EngineConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        net.validate()?;
        let n = net.users();
        let m = net.channel_count();
        let mut user_rngs: Vec<Stream> = (0..n).map(|u| user_stream(seed, u)).collect();
        let channel_rngs = (0..m).map(|c| channel_stream(seed, c)).collect();
        let (choice, scan_orders) = match cfg.mode {
            Mode::Homogeneous => (
                user_rngs.iter_mut().map(|r| r.random_range(0..m)).collect(),
                Vec::new(),
            ),
            Mode::Heterogeneous => {
                let orders: Vec<Vec<usize>> =
                    user_rngs.iter_mut().map(|r| scan_order(m, r)).collect();
                (orders.iter().map(|o| o[0]).collect(), orders)
            }
        };
        Ok(Self {
            net,
            cfg,
            period: 0,
            choice,
            previous: vec![None; n],
            estimates: (0..n)
                .map(|_| (0..m).map(ChannelEstimate::new).collect())
                .collect(),
            history: vec![VecDeque::with_capacity(cfg.delay + 1); n],
            scan_done: match cfg.mode {
                Mode::Homogeneous => vec![Some(0); n],
                Mode::Heterogeneous => vec![None; n],
            },
            scan_orders,
            channel_state: vec![None; m],
            user_rngs,
            channel_rngs,
            logs: (0..n)
                .map(|_| ObservationLog::with_capacity(0, cfg.slots_per_period))
                .collect(),
        })
    }

    /// Overrides the starting channels (homogeneous mode).
    pub fn with_initial_choices(mut self, choices: Vec<usize>) -> Result<Self> {
        if choices.len() != self.net.users()
            || choices.iter().any(|&c| c >= self.net.channel_count())
        {
            return Err(Error::InvalidParameter(
                "initial choices do not match the network".into(),
            ));
        }
        if self.cfg.mode == Mode::Heterogeneous {
            return Err(Error::InvalidParameter(
                "heterogeneous runs start with the channel scan".into(),
            ));
        }
        self.choice = choices;
        Ok(self)
    }

    pub fn choices(&self) -> &[usize] {
        &self.choice
    }

    pub fn estimates(&self, user: usize) -> &[ChannelEstimate] {
        &self.estimates[user]
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Period by which every user has finished its scan, if all have.
    pub fn scan_end(&self) -> Option<usize> {
        self.scan_done
            .iter()
            .try_fold(0, |acc, d| d.map(|d| acc.max(d)))
    }

    /// Next scan channel for `u`, or `None` when its scan ends this period.
    fn next_scan_channel(&mut self, u: usize) -> Option<usize> {
        let m = self.net.channel_count();
        let visited = self.period + 1;
        if visited < m {
            return Some(self.scan_orders[u][visited]);
        }
        if visited >= SCAN_LIMIT_FACTOR * m {
            return None;
        }
        let unrated: Vec<usize> = (0..m)
            .filter(|&c| self.estimates[u][c].rate_periods == 0)
            .collect();
        if unrated.is_empty() {
            None
        } else {
            Some(unrated[self.user_rngs[u].random_range(0..unrated.len())])
        }
    }

    /// Executes one decision period and moves every user to its next channel.
    pub fn run_period(&mut self) -> PeriodRow {
        let n = self.net.users();
        let m = self.net.channel_count();
        let counts = occupancy(&self.choice, m);

        if self.cfg.reset_on_return {
            for u in 0..n {
                if self.previous[u].is_some_and(|p| p != self.choice[u]) {
                    self.estimates[u][self.choice[u]].reset();
                }
            }
        }

        let mut own_estimate = vec![0.0; n];
        let mut realized = vec![0.0; n];
        let mut reports = Vec::with_capacity(n);
        match self.cfg.estimator {
            Estimator::Mle => {
                self.simulate_slots(&counts);
                let slots = self.cfg.slots_per_period as f64;
                for u in 0..n {
                    let c = self.choice[u];
                    let log = &self.logs[u];
                    realized[u] = log.total_rate() / slots;
                    let est = &mut self.estimates[u][c];
                    est.observe(log);
                    own_estimate[u] = est.throughput();
                    reports.push(Report {
                        channel: c,
                        estimate: own_estimate[u],
                        grab: est.grab_hat,
                    });
                }
            }
            Estimator::AbstractNoise(noise) => {
                for u in 0..n {
                    let c = self.choice[u];
                    let exact = self.net.model.utility(u, c, counts[c]);
                    realized[u] = exact;
                    own_estimate[u] = exact + noise.sample(&mut self.user_rngs[u]);
                    let est = &mut self.estimates[u][c];
                    est.theta_hat = self.net.model.idle()[c];
                    est.rate_hat = self.net.model.rate(u, c);
                    est.grab_hat = self.net.model.grab().get(counts[c]);
                    est.periods_used += 1;
                    est.rate_periods += 1;
                    reports.push(Report {
                        channel: c,
                        estimate: own_estimate[u],
                        grab: est.grab_hat,
                    });
                }
            }
        }

        for (u, r) in reports.into_iter().enumerate() {
            let h = &mut self.history[u];
            h.push_back(r);
            while h.len() > self.cfg.delay + 1 {
                h.pop_front();
            }
        }

        let row_choices = self.choice.clone();
        let mut switches = 0;
        let mut next = self.choice.clone();
        for u in 0..n {
            if self.scan_done[u].is_some() {
                next[u] = self.decide(u, own_estimate[u]);
                switches += usize::from(next[u] != self.choice[u]);
            } else if let Some(c) = self.next_scan_channel(u) {
                next[u] = c;
            } else {
                // scan finished: stay on the last scanned channel
                self.scan_done[u] = Some(self.period + 1);
            }
        }
        for u in 0..n {
            self.previous[u] = Some(self.choice[u]);
        }
        self.choice = next;
        self.period += 1;

        PeriodRow {
            choices: row_choices,
            estimates: own_estimate,
            occupancy: counts,
            realized,
            switches,
        }
    }

    fn simulate_slots(&mut self, counts: &[usize]) {
        let n = self.net.users();
        let m = self.net.channel_count();
        let lambda_max = self.net.model.contention().lambda_max();
        let mut on_channel: Vec<Vec<usize>> =
            (0..m).map(|c| Vec::with_capacity(counts[c])).collect();
        for u in 0..n {
            on_channel[self.choice[u]].push(u);
        }
        for log in &mut self.logs {
            log.clear(self.period);
        }
        let mut draws = Vec::new();
        for _ in 0..self.cfg.slots_per_period {
            for c in 0..m {
                let spec = &self.net.channels[c];
                let state = spec.sample_state(self.channel_state[c], &mut self.channel_rngs[c]);
                self.channel_state[c] = Some(state);
                let users = &on_channel[c];
                if users.is_empty() {
                    continue;
                }
                if !state.is_idle() {
                    for &u in users {
                        self.logs[u].push(false, false, 0.0);
                    }
                    continue;
                }
                let winner = if users.len() == 1 {
                    Some(users[0])
                } else {
                    draws.clear();
                    draws.extend(
                        users
                            .iter()
                            .map(|&u| (u, self.user_rngs[u].random_range(1..=lambda_max))),
                    );
                    resolve_backoff(draws.iter().copied())
                };
                for &u in users {
                    if Some(u) == winner {
                        let rate =
                            channel::sample_rate(spec, &self.net.radios[u], &mut self.user_rngs[u]);
                        self.logs[u].push(true, true, rate);
                    } else {
                        self.logs[u].push(true, false, 0.0);
                    }
                }
            }
        }
    }

    fn decide(&mut self, u: usize, own: f64) -> usize {
        let neighbors = self.net.neighborhoods.neighbors(u);
        if neighbors.is_empty() {
            return self.choice[u];
        }
        let rng = &mut self.user_rngs[u];
        let picked: Vec<usize> = if self.cfg.fanout >= neighbors.len() {
            neighbors.to_vec()
        } else if self.cfg.fanout == 1 {
            vec![neighbors[rng.random_range(0..neighbors.len())]]
        } else {
            index::sample(rng, neighbors.len(), self.cfg.fanout)
                .into_iter()
                .map(|i| neighbors[i])
                .collect()
        };
        let mut peers = Vec::with_capacity(picked.len());
        for p in picked {
            let Some(report) = delayed_estimate(&self.history[p], self.cfg.delay) else {
                continue;
            };
            let value = match self.cfg.mode {
                Mode::Homogeneous => report.estimate,
                Mode::Heterogeneous => match self.cfg.estimator {
                    Estimator::Mle => {
                        let e = &self.estimates[u][report.channel];
                        heterogeneous_projection(e.theta_hat, e.rate_hat, report.grab)
                    }
                    Estimator::AbstractNoise(noise) => {
                        let exact = self.net.model.peak(u, report.channel) * report.grab;
                        exact + noise.sample(&mut self.user_rngs[u])
                    }
                },
            };
            peers.push((report.channel, value));
        }
        imitation_decision(self.choice[u], own, &peers)
    }
}

/// Runs `cfg.periods` periods from a seeded start.
pub fn run_simulation(net: &Network, cfg: EngineConfig, seed: u64) -> Result<SimulationTrace> {
    let mut engine = Engine::new(net, cfg, seed)?;
    Ok(run_engine(&mut engine, cfg.periods))
}

/// Drives an already-constructed engine for `periods` periods.
pub fn run_engine(engine: &mut Engine<'_>, periods: usize) -> SimulationTrace {
    let mut trace = SimulationTrace {
        users: engine.net.users(),
        channels: engine.net.channel_count(),
        slots_per_period: engine.cfg.slots_per_period,
        scan_periods: 0,
        choices: Vec::with_capacity(periods),
        estimates: Vec::with_capacity(periods),
        occupancy: Vec::with_capacity(periods),
        realized: Vec::with_capacity(periods),
        switches: Vec::with_capacity(periods),
    };
    for _ in 0..periods {
        let row = engine.run_period();
        trace.choices.push(row.choices);
        trace.estimates.push(row.estimates);
        trace.occupancy.push(row.occupancy);
        trace.realized.push(row.realized);
        trace.switches.push(row.switches);
    }
    trace.scan_periods = engine.scan_end().unwrap_or(engine.period);
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SocialGraph;

    fn reference_idle() -> Vec<IdleModel> {
        [2.0 / 3.0, 4.0 / 7.0, 5.0 / 9.0, 0.5, 0.8]
            .iter()
            .map(|&theta| IdleModel::Iid { theta })
            .collect()
    }

    fn net(users: usize) -> Network {
        Network::calibrated(
            &reference_idle(),
            &Rates::Shared(vec![15.0, 70.0, 90.0, 40.0, 100.0]),
            RadioDefaults::default(),
            ContentionConfig::new(50).unwrap(),
            SocialGraph::complete(users).effective(),
        )
        .unwrap()
    }

    #[test]
    fn decision_rule() {
        assert_eq!(imitation_decision(0, 5.0, &[(2, 7.0)]), 2);
        assert_eq!(imitation_decision(0, 5.0, &[(2, 5.0)]), 0);
        assert_eq!(imitation_decision(0, 5.0, &[(2, 7.0), (3, 9.0)]), 3);
        assert_eq!(imitation_decision(4, 5.0, &[(3, 9.0), (1, 9.0)]), 1);
        assert_eq!(imitation_decision(4, 5.0, &[]), 4);
    }

    #[test]
    fn delayed_indexing() {
        let buf: VecDeque<u32> = (1..=10).collect();
        assert_eq!(delayed_estimate(&buf, 0), Some(10));
        assert_eq!(delayed_estimate(&buf, 3), Some(7));
        assert_eq!(delayed_estimate(&buf, 50), Some(1));
        assert_eq!(delayed_estimate(&VecDeque::<u32>::new(), 0), None);
    }

    #[test]
    fn projection_is_linear() {
        assert!((heterogeneous_projection(0.5, 20.0, 0.3) - 3.0).abs() < 1e-12);
        let a = heterogeneous_projection(0.6, 80.0, 0.2);
        let b = heterogeneous_projection(0.6, 40.0, 0.2);
        assert!((a - 2.0 * b).abs() < 1e-12);
    }

    #[test]
    fn zero_periods_rejected() {
        let n = net(3);
        let cfg = EngineConfig {
            periods: 0,
            ..EngineConfig::default()
        };
        assert!(run_simulation(&n, cfg, 1).is_err());
        let cfg = EngineConfig {
            fanout: 0,
            ..EngineConfig::default()
        };
        assert!(run_simulation(&n, cfg, 1).is_err());
    }

    #[test]
    fn lone_user_never_switches_and_earns_theta_b() {
        let n = net(1);
        let cfg = EngineConfig {
            periods: 3000,
            ..EngineConfig::default()
        };
        let trace = run_simulation(&n, cfg, 9).unwrap();
        let ch = trace.choices[0][0];
        assert!(trace.choices.iter().all(|row| row[0] == ch));
        let avg = trace.time_average_throughput(0)[0];
        let expected = n.model.peak(0, ch);
        assert!(
            (avg - expected).abs() < 0.03 * expected,
            "{avg} vs {expected}"
        );
    }

    #[test]
    fn equal_estimates_never_switch() {
        let n = net(4);
        let cfg = EngineConfig {
            periods: 5,
            estimator: Estimator::AbstractNoise(NoiseModel::uniform(0.0).unwrap()),
            ..EngineConfig::default()
        };
        let mut engine = Engine::new(&n, cfg, 3)
            .unwrap()
            .with_initial_choices(vec![2; 4])
            .unwrap();
        let trace = run_engine(&mut engine, 5);
        assert!(trace.switches.iter().all(|&s| s == 0));
    }

    #[test]
    fn occupancy_matches_choices() {
        let n = net(12);
        let cfg = EngineConfig {
            periods: 40,
            ..EngineConfig::default()
        };
        let trace = run_simulation(&n, cfg, 5).unwrap();
        for t in 0..trace.periods() {
            assert_eq!(trace.occupancy[t].iter().sum::<usize>(), 12);
            assert_eq!(trace.occupancy[t], occupancy(&trace.choices[t], 5));
        }
    }

    #[test]
    fn scan_visits_each_channel_once() {
        let n = net(6);
        let cfg = EngineConfig {
            mode: Mode::Heterogeneous,
            periods: 5,
            ..EngineConfig::default()
        };
        let trace = run_simulation(&n, cfg, 21).unwrap();
        for u in 0..6 {
            let mut seen: Vec<usize> = (0..5).map(|t| trace.choices[t][u]).collect();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
        let (orders, table) = initial_channel_scan(&n, &cfg, 21).unwrap();
        assert_eq!(orders.len(), 6);
        assert!(table.iter().all(|row| row
            .iter()
            .all(|e| e.periods_used >= 1 && e.rate_periods >= 1)));
    }

    #[test]
    fn scan_revisits_unrated_channels() {
        let n = net(150);
        let cfg = EngineConfig {
            mode: Mode::Heterogeneous,
            periods: 40,
            ..EngineConfig::default()
        };
        let mut engine = Engine::new(&n, cfg, 5).unwrap();
        let trace = run_engine(&mut engine, 40);
        assert!(trace.scan_periods > 5 && trace.scan_periods <= SCAN_LIMIT_FACTOR * 5);
        let unrated = (0..150)
            .flat_map(|u| engine.estimates(u).iter())
            .filter(|e| e.rate_periods == 0)
            .count();
        assert!(unrated < 15, "{unrated} unrated entries");
        assert!(trace.switches[..5].iter().all(|&s| s == 0));
    }

    #[test]
    fn same_seed_same_trace() {
        let n = net(10);
        let cfg = EngineConfig {
            periods: 30,
            ..EngineConfig::default()
        };
        assert_eq!(
            run_simulation(&n, cfg, 77).unwrap(),
            run_simulation(&n, cfg, 77).unwrap()
        );
        assert_ne!(
            run_simulation(&n, cfg, 77).unwrap(),
            run_simulation(&n, cfg, 78).unwrap()
        );
    }
}
