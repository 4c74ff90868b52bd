//! Scenario files: sectioned `key = value` text.
//!
//! ```text
//! # comment
//! [channels]
//! theta = 2/3, 4/7, 5/9, 1/2, 4/5
//! rate = 15, 70, 90, 40, 100
//! [users]
//! count = 150
//! [graph]
//! source = topology
//! topology = chain
//! sizes = 50, 50, 50
//! ```
//!
//! Every key is optional; [`Scenario::to_text`] writes all of them with
//! defaults resolved. Numbers may be written as fractions `a/b`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::topology::ClusterTopology;

#[derive(Debug, Clone, PartialEq)]
pub enum IdleKind {
    Iid,
    /// Two-state chain with `p = μθ`, `q = μ(1−θ)`.
    Markov {
        mu: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSection {
    pub theta: Vec<f64>,
    pub rate: Vec<f64>,
    pub idle: IdleKind,
    pub bandwidth_mhz: f64,
    pub noise_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSection {
    pub count: usize,
    pub tx_power_mw: f64,
    /// Users (chosen at random) whose rates are `random_base + U(0, random_spread)` per channel.
    pub heterogeneous: usize,
    pub random_base: f64,
    pub random_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    Complete,
    /// Edge-list file, resolved relative to the scenario file.
    File(PathBuf),
    /// Random geometric graph; `radius = None` picks the smallest connecting radius.
    Geometric {
        side: f64,
        radius: Option<f64>,
    },
    Topology {
        kind: ClusterTopology,
        sizes: Vec<usize>,
    },
    ErdosRenyi {
        p: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Mle,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseShape {
    Uniform,
    Triangular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSection {
    pub lambda_max: u32,
    pub slots: usize,
    pub fanout: usize,
    pub delay: usize,
    pub periods: usize,
    pub mode: Mode,
    pub estimator: EstimatorKind,
    pub noise: NoiseShape,
    /// `None` means `0.05 · max θB`.
    pub noise_half_width: Option<f64>,
    pub reset_on_return: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSection {
    pub meanfield: bool,
    pub optimum: bool,
    pub window: usize,
    pub threshold: f64,
    /// Equilibrium tolerance as a fraction of mean throughput.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub channels: ChannelSection,
    pub users: UserSection,
    pub graph: GraphSource,
    pub engine: EngineSection,
    pub analysis: AnalysisSection,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            channels: ChannelSection {
                theta: vec![2.0 / 3.0, 4.0 / 7.0, 5.0 / 9.0, 0.5, 0.8],
                rate: vec![15.0, 70.0, 90.0, 40.0, 100.0],
                idle: IdleKind::Iid,
                bandwidth_mhz: 10.0,
                noise_dbm: -100.0,
            },
            users: UserSection {
                count: 150,
                tx_power_mw: 100.0,
                heterogeneous: 0,
                random_base: 100.0,
                random_spread: 100.0,
            },
            graph: GraphSource::Complete,
            engine: EngineSection {
                lambda_max: 50,
                slots: 100,
                fanout: 1,
                delay: 0,
                periods: 500,
                mode: Mode::Homogeneous,
                estimator: EstimatorKind::Mle,
                noise: NoiseShape::Uniform,
                noise_half_width: None,
                reset_on_return: false,
            },
            analysis: AnalysisSection {
                meanfield: false,
                optimum: false,
                window: 100,
                threshold: 0.02,
                epsilon: 0.05,
            },
            seed: 0,
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "channels",
        &["theta", "rate", "idle", "mu", "bandwidth_mhz", "noise_dbm"],
    ),
    (
        "users",
        &[
            "count",
            "tx_power_mw",
            "heterogeneous",
            "random_base",
            "random_spread",
        ],
    ),
    (
        "graph",
        &["source", "file", "side", "radius", "topology", "sizes", "p"],
    ),
    (
        "engine",
        &[
            "lambda_max",
            "slots",
            "fanout",
            "delay",
            "periods",
            "mode",
            "estimator",
            "noise",
            "noise_half_width",
            "reset_on_return",
        ],
    ),
    (
        "analysis",
        &["meanfield", "optimum", "window", "threshold", "epsilon"],
    ),
    ("run", &["seed"]),
];

struct Entry {
    value: String,
    line: usize,
}

struct Reader<'a> {
    path: &'a Path,
    entries: BTreeMap<(String, String), Entry>,
}

impl Reader<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn parse<T>(
        &self,
        section: &str,
        key: &str,
        default: T,
        f: impl Fn(&str) -> Option<T>,
    ) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => f(&e.value).ok_or_else(|| {
                self.err(
                    e.line,
                    format!("{section}.{key}: cannot parse `{}`", e.value),
                )
            }),
        }
    }

    fn number(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        self.parse(section, key, default, parse_number)
    }

    fn int<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        self.parse(section, key, default, |s| s.parse().ok())
    }

    fn list(&self, section: &str, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        self.parse(section, key, default, |s| {
            s.split(',').map(|v| parse_number(v.trim())).collect()
        })
    }

    fn flag(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        self.parse(section, key, default, |s| match s {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        })
    }

    /// Fails naming the key and line when `ok` is false.
    fn check(&self, section: &str, key: &str, ok: bool, what: &str) -> Result<()> {
        if ok {
            return Ok(());
        }
        let line = self.get(section, key).map_or(0, |e| e.line);
        Err(self.err(line, format!("{section}.{key}: {what}")))
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => s.parse().ok()?,
    };
    v.is_finite().then_some(v)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses scenario text. Relative graph files resolve against `path`'s directory.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut reader = Reader {
            path,
            entries: BTreeMap::new(),
        };
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(reader.err(line, format!("unknown section `[{name}]`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(reader.err(line, format!("expected `key = value`, got `{content}`")));
            };
            let Some(sec) = section.clone() else {
                return Err(reader.err(line, "key outside of any section"));
            };
            let key = key.trim().to_string();
            let known = KEYS
                .iter()
                .find(|(s, _)| *s == sec)
                .is_some_and(|(_, keys)| keys.contains(&key.as_str()));
            if !known {
                return Err(reader.err(line, format!("unknown key `{key}` in [{sec}]")));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if let Some(prev) = reader.entries.insert((sec.clone(), key.clone()), entry) {
                return Err(reader.err(
                    line,
                    format!("{sec}.{key} already set on line {}", prev.line),
                ));
            }
        }
        Self::from_reader(&reader)
    }

    fn from_reader(r: &Reader<'_>) -> Result<Self> {
        let d = Scenario::default();

        let theta = r.list("channels", "theta", d.channels.theta.clone())?;
        r.check(
            "channels",
            "theta",
            !theta.is_empty(),
            "at least one channel is required",
        )?;
        r.check(
            "channels",
            "theta",
            theta.iter().all(|t| *t > 0.0 && *t < 1.0),
            "idle probabilities must lie in (0, 1)",
        )?;
        let rate = r.list("channels", "rate", d.channels.rate.clone())?;
        r.check(
            "channels",
            "rate",
            rate.len() == theta.len(),
            "needs one rate per channel",
        )?;
        r.check(
            "channels",
            "rate",
            rate.iter().all(|b| *b > 0.0),
            "rates must be positive",
        )?;
        let idle_name = r.parse("channels", "idle", "iid".to_string(), |s| {
            Some(s.to_string())
        })?;
        let mu = r.number("channels", "mu", 0.5)?;
        let idle = match idle_name.as_str() {
            "iid" => IdleKind::Iid,
            "markov" => IdleKind::Markov { mu },
            _ => {
                return Err(r.err(
                    r.get("channels", "idle").map_or(0, |e| e.line),
                    "channels.idle: expected `iid` or `markov`",
                ))
            }
        };
        if let IdleKind::Markov { mu } = idle {
            r.check(
                "channels",
                "mu",
                mu > 0.0 && mu <= 1.0,
                "must lie in (0, 1]",
            )?;
        }
        let bandwidth_mhz = r.number("channels", "bandwidth_mhz", d.channels.bandwidth_mhz)?;
        r.check(
            "channels",
            "bandwidth_mhz",
            bandwidth_mhz > 0.0,
            "must be positive",
        )?;
        let noise_dbm = r.number("channels", "noise_dbm", d.channels.noise_dbm)?;

        let count: usize = r.int("users", "count", d.users.count)?;
        r.check(
            "users",
            "count",
            count >= 1,
            "at least one user is required",
        )?;
        let tx_power_mw = r.number("users", "tx_power_mw", d.users.tx_power_mw)?;
        r.check(
            "users",
            "tx_power_mw",
            tx_power_mw > 0.0,
            "must be positive",
        )?;
        let heterogeneous: usize = r.int("users", "heterogeneous", d.users.heterogeneous)?;
        r.check(
            "users",
            "heterogeneous",
            heterogeneous <= count,
            "exceeds users.count",
        )?;
        let random_base = r.number("users", "random_base", d.users.random_base)?;
        let random_spread = r.number("users", "random_spread", d.users.random_spread)?;
        r.check(
            "users",
            "random_base",
            random_base >= 0.0,
            "must be non-negative",
        )?;
        r.check(
            "users",
            "random_spread",
            random_spread >= 0.0,
            "must be non-negative",
        )?;
        r.check(
            "users",
            "random_spread",
            heterogeneous == 0 || random_base + random_spread > 0.0,
            "random rates would all be zero",
        )?;

        let source = r.parse("graph", "source", "complete".to_string(), |s| {
            Some(s.to_string())
        })?;
        let graph = match source.as_str() {
            "complete" => GraphSource::Complete,
            "file" => {
                let Some(e) = r.get("graph", "file") else {
                    return Err(r.err(
                        r.get("graph", "source").map_or(0, |e| e.line),
                        "graph.file is required for source = file",
                    ));
                };
                let rel = PathBuf::from(&e.value);
                let full = if rel.is_absolute() {
                    rel
                } else {
                    r.path.parent().unwrap_or(Path::new("")).join(rel)
                };
                if !full.is_file() {
                    return Err(r.err(
                        e.line,
                        format!("graph.file: `{}` does not exist", full.display()),
                    ));
                }
                GraphSource::File(full)
            }
            "geometric" => {
                let side = r.number("graph", "side", 250.0)?;
                r.check("graph", "side", side > 0.0, "must be positive")?;
                let radius = r.parse("graph", "radius", None, |s| {
                    if s == "auto" {
                        Some(None)
                    } else {
                        parse_number(s).filter(|v| *v >= 0.0).map(Some)
                    }
                })?;
                GraphSource::Geometric { side, radius }
            }
            "topology" => {
                let kind = r.parse("graph", "topology", ClusterTopology::Complete, |s| {
                    s.parse().ok()
                })?;
                let sizes: Vec<usize> = r.parse("graph", "sizes", vec![count], |s| {
                    s.split(',').map(|v| v.trim().parse().ok()).collect()
                })?;
                r.check(
                    "graph",
                    "sizes",
                    !sizes.is_empty() && !sizes.contains(&0),
                    "sizes must be positive",
                )?;
                r.check(
                    "graph",
                    "sizes",
                    sizes.iter().sum::<usize>() == count,
                    "cluster sizes must add up to users.count",
                )?;
                GraphSource::Topology { kind, sizes }
            }
            "erdos_renyi" => {
                let p = r.number("graph", "p", 0.1)?;
                r.check("graph", "p", (0.0..=1.0).contains(&p), "must lie in [0, 1]")?;
                GraphSource::ErdosRenyi { p }
            }
            other => {
                return Err(r.err(
                    r.get("graph", "source").map_or(0, |e| e.line),
                    format!("graph.source: unknown source `{other}`"),
                ))
            }
        };

        let de = &d.engine;
        let lambda_max: u32 = r.int("engine", "lambda_max", de.lambda_max)?;
        r.check(
            "engine",
            "lambda_max",
            lambda_max >= 1,
            "must be at least 1",
        )?;
        let slots: usize = r.int("engine", "slots", de.slots)?;
        r.check("engine", "slots", slots >= 1, "must be at least 1")?;
        let fanout: usize = r.int("engine", "fanout", de.fanout)?;
        r.check("engine", "fanout", fanout >= 1, "must be at least 1")?;
        let delay: usize = r.int("engine", "delay", de.delay)?;
        let periods: usize = r.int("engine", "periods", de.periods)?;
        r.check("engine", "periods", periods >= 1, "must be at least 1")?;
        let mode = r.parse("engine", "mode", de.mode, parse_mode)?;
        let estimator = r.parse("engine", "estimator", de.estimator, |s| match s {
            "mle" => Some(EstimatorKind::Mle),
            "noise" => Some(EstimatorKind::Noise),
            _ => None,
        })?;
        let noise = r.parse("engine", "noise", de.noise, |s| match s {
            "uniform" => Some(NoiseShape::Uniform),
            "triangular" => Some(NoiseShape::Triangular),
            _ => None,
        })?;
        let noise_half_width = r.parse("engine", "noise_half_width", None, |s| {
            if s == "auto" {
                Some(None)
            } else {
                parse_number(s).filter(|v| *v >= 0.0).map(Some)
            }
        })?;
        let reset_on_return = r.flag("engine", "reset_on_return", de.reset_on_return)?;

        let da = &d.analysis;
        let meanfield = r.flag("analysis", "meanfield", da.meanfield)?;
        let optimum = r.flag("analysis", "optimum", da.optimum)?;
        let window: usize = r.int("analysis", "window", da.window)?;
        r.check("analysis", "window", window >= 1, "must be at least 1")?;
        let threshold = r.number("analysis", "threshold", da.threshold)?;
        r.check("analysis", "threshold", threshold > 0.0, "must be positive")?;
        let epsilon = r.number("analysis", "epsilon", da.epsilon)?;
        r.check(
            "analysis",
            "epsilon",
            epsilon >= 0.0,
            "must be non-negative",
        )?;

        let seed: u64 = r.int("run", "seed", d.seed)?;

        Ok(Scenario {
            channels: ChannelSection {
                theta,
                rate,
                idle,
                bandwidth_mhz,
                noise_dbm,
            },
            users: UserSection {
                count,
                tx_power_mw,
                heterogeneous,
                random_base,
                random_spread,
            },
            graph,
            engine: EngineSection {
                lambda_max,
                slots,
                fanout,
                delay,
                periods,
                mode,
                estimator,
                noise,
                noise_half_width,
                reset_on_return,
            },
            analysis: AnalysisSection {
                meanfield,
                optimum,
                window,
                threshold,
                epsilon,
            },
            seed,
        })
    }

    /// Writes every key. Parsing the output yields an equal scenario.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let mut o = String::new();
        let c = &self.channels;
        let _ = writeln!(o, "[channels]");
        let _ = writeln!(o, "theta = {}", list(&c.theta));
        let _ = writeln!(o, "rate = {}", list(&c.rate));
        match c.idle {
            IdleKind::Iid => {
                let _ = writeln!(o, "idle = iid");
            }
            IdleKind::Markov { mu } => {
                let _ = writeln!(o, "idle = markov");
                let _ = writeln!(o, "mu = {mu}");
            }
        }
        let _ = writeln!(o, "bandwidth_mhz = {}", c.bandwidth_mhz);
        let _ = writeln!(o, "noise_dbm = {}", c.noise_dbm);

        let u = &self.users;
        let _ = writeln!(o, "\n[users]");
        let _ = writeln!(o, "count = {}", u.count);
        let _ = writeln!(o, "tx_power_mw = {}", u.tx_power_mw);
        let _ = writeln!(o, "heterogeneous = {}", u.heterogeneous);
        let _ = writeln!(o, "random_base = {}", u.random_base);
        let _ = writeln!(o, "random_spread = {}", u.random_spread);

        let _ = writeln!(o, "\n[graph]");
        match &self.graph {
            GraphSource::Complete => {
                let _ = writeln!(o, "source = complete");
            }
            GraphSource::File(p) => {
                let _ = writeln!(o, "source = file");
                let _ = writeln!(o, "file = {}", p.display());
            }
            GraphSource::Geometric { side, radius } => {
                let _ = writeln!(o, "source = geometric");
                let _ = writeln!(o, "side = {side}");
                match radius {
                    Some(r) => {
                        let _ = writeln!(o, "radius = {r}");
                    }
                    None => {
                        let _ = writeln!(o, "radius = auto");
                    }
                }
            }
            GraphSource::Topology { kind, sizes } => {
                let sizes: Vec<String> = sizes.iter().map(usize::to_string).collect();
                let _ = writeln!(o, "source = topology");
                let _ = writeln!(o, "topology = {kind}");
                let _ = writeln!(o, "sizes = {}", sizes.join(", "));
            }
            GraphSource::ErdosRenyi { p } => {
                let _ = writeln!(o, "source = erdos_renyi");
                let _ = writeln!(o, "p = {p}");
            }
        }

        let e = &self.engine;
        let _ = writeln!(o, "\n[engine]");
        let _ = writeln!(o, "lambda_max = {}", e.lambda_max);
        let _ = writeln!(o, "slots = {}", e.slots);
        let _ = writeln!(o, "fanout = {}", e.fanout);
        let _ = writeln!(o, "delay = {}", e.delay);
        let _ = writeln!(o, "periods = {}", e.periods);
        let _ = writeln!(o, "mode = {}", mode_name(e.mode));
        let _ = writeln!(
            o,
            "estimator = {}",
            match e.estimator {
                EstimatorKind::Mle => "mle",
                EstimatorKind::Noise => "noise",
            }
        );
        let _ = writeln!(
            o,
            "noise = {}",
            match e.noise {
                NoiseShape::Uniform => "uniform",
                NoiseShape::Triangular => "triangular",
            }
        );
        match e.noise_half_width {
            Some(a) => {
                let _ = writeln!(o, "noise_half_width = {a}");
            }
            None => {
                let _ = writeln!(o, "noise_half_width = auto");
            }
        }
        let _ = writeln!(o, "reset_on_return = {}", e.reset_on_return);

        let a = &self.analysis;
        let _ = writeln!(o, "\n[analysis]");
        let _ = writeln!(o, "meanfield = {}", a.meanfield);
        let _ = writeln!(o, "optimum = {}", a.optimum);
        let _ = writeln!(o, "window = {}", a.window);
        let _ = writeln!(o, "threshold = {}", a.threshold);
        let _ = writeln!(o, "epsilon = {}", a.epsilon);

        let _ = writeln!(o, "\n[run]");
        let _ = writeln!(o, "seed = {}", self.seed);
        o
    }
}

pub fn parse_mode(s: &str) -> Option<Mode> {
    match s {
        "hom" => Some(Mode::Homogeneous),
        "het" => Some(Mode::Heterogeneous),
        _ => None,
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Homogeneous => "hom",
        Mode::Heterogeneous => "het",
    }
}
