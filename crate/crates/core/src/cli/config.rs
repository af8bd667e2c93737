//! Experiment configuration: built-in defaults, `key=value` files and command-line
//! overrides, plus construction of the configured scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::environments::{
    Crosswalk, CrosswalkParams, Lander, LanderParams, Pendulum, PendulumParams, PendulumPolicy, Toy,
};
use crate::error::{Error, Result};
use crate::samplers::InitStrategy;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum ScenarioKind {
    Toy,
    Pendulum,
    Crosswalk,
    Lander,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Method {
    Hmc,
    Pg,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InitChoice {
    Prior,
    Pso,
}

macro_rules! names {
    ($ty:ty, $what:literal, $($v:ident => $s:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(Error::parse($what, format!("unknown value `{s}`"))),
                }
            }
        }
    };
}

names!(ScenarioKind, "scenario", Toy => "toy", Pendulum => "pendulum", Crosswalk => "crosswalk", Lander => "lander");
names!(Method, "method", Hmc => "hmc", Pg => "pg", Mc => "mc");
names!(InitChoice, "init", Prior => "prior", Pso => "pso");

impl From<InitChoice> for InitStrategy {
    fn from(c: InitChoice) -> Self {
        match c {
            InitChoice::Prior => InitStrategy::Prior,
            InitChoice::Pso => InitStrategy::Pso,
        }
    }
}

impl ScenarioKind {
    pub fn default_chains(self) -> usize {
        match self {
            ScenarioKind::Toy | ScenarioKind::Pendulum => 10,
            ScenarioKind::Crosswalk => 20,
            ScenarioKind::Lander => 30,
        }
    }

    pub fn default_init(self) -> InitChoice {
        match self {
            ScenarioKind::Lander => InitChoice::Pso,
            _ => InitChoice::Prior,
        }
    }
}

/// Scenario parameters that may be overridden with `--param key=value`.
pub const PARAM_KEYS: &[&str] = &[
    "toy.threshold",
    "pendulum.sigma",
    "pendulum.horizon",
    "pendulum.theta_fail",
    "pendulum.policy",
    "crosswalk.horizon",
    "crosswalk.var_accel_lon",
    "crosswalk.var_accel_lat",
    "crosswalk.var_position",
    "crosswalk.var_velocity",
    "crosswalk.collision_radius",
    "lander.max_steps",
    "lander.hard_landing_speed",
    "lander.max_thrust",
    "lander.max_side_force",
];

/// Everything that determines a run's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    pub method: Method,
    pub chains: usize,
    /// Reported draws per chain (NUTS, after an equal warmup) or sweeps per chain (PG).
    pub samples: usize,
    /// Direct Monte Carlo draws; defaults to `chains * samples`.
    pub mc_draws: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub init: InitChoice,
    pub particles: usize,
    pub output_dir: PathBuf,
    pub params: BTreeMap<String, String>,
}

/// Partially specified configuration; unset fields take scenario defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub scenario: Option<ScenarioKind>,
    pub method: Option<Method>,
    pub chains: Option<usize>,
    pub samples: Option<usize>,
    pub mc_draws: Option<usize>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub init: Option<InitChoice>,
    pub particles: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub params: BTreeMap<String, String>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| Error::parse(format!("config key `{key}`"), e.to_string()))
}

impl ConfigOverrides {
    /// Parses `key=value` lines. Blank lines and `#` comments are skipped; keys that are
    /// not configuration (run results in a manifest) are ignored.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut o = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(
                    format!("config line {}", n + 1),
                    format!("expected key=value, got `{line}`"),
                )
            })?;
            o.set(key.trim(), value.trim())?;
        }
        Ok(o)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scenario" => self.scenario = Some(value.parse()?),
            "method" => self.method = Some(value.parse()?),
            "chains" => self.chains = Some(parse_value(key, value)?),
            "samples" => self.samples = Some(parse_value(key, value)?),
            "mc_draws" => self.mc_draws = Some(parse_value(key, value)?),
            "epsilon" => self.epsilon = Some(parse_value(key, value)?),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "init" => self.init = Some(value.parse()?),
            "particles" => self.particles = Some(parse_value(key, value)?),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            _ => {
                if let Some(p) = key.strip_prefix("param.") {
                    self.params.insert(p.to_string(), value.to_string());
                }
            }
        }
        Ok(())
    }

    /// Fields set in `other` win.
    pub fn merge(mut self, other: ConfigOverrides) -> Self {
        macro_rules! take {
            ($($f:ident),+) => { $( if other.$f.is_some() { self.$f = other.$f; } )+ };
        }
        take!(
            scenario, method, chains, samples, mc_draws, epsilon, seed, init, particles, output_dir
        );
        self.params.extend(other.params);
        self
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let scenario = self
            .scenario
            .ok_or_else(|| Error::InvalidConfig("no scenario given".into()))?;
        let method = self.method.unwrap_or(Method::Hmc);
        let chains = self.chains.unwrap_or_else(|| scenario.default_chains());
        let samples = self.samples.unwrap_or(1000);
        let seed = self.seed.unwrap_or(0);
        let epsilon = match self.epsilon {
            Some(e) => e,
            None => with_scenario_kind(scenario, |s| s.default_epsilon()),
        };
        let cfg = ExperimentConfig {
            scenario,
            method,
            chains,
            samples,
            mc_draws: self.mc_draws.unwrap_or(chains * samples),
            epsilon,
            seed,
            init: self.init.unwrap_or_else(|| scenario.default_init()),
            particles: self.particles.unwrap_or(1000),
            output_dir: self
                .output_dir
                .unwrap_or_else(|| PathBuf::from(format!("runs/{scenario}-{method}-{seed}"))),
            params: self.params,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs `f` on a default-parameter scenario of the given kind.
fn with_scenario_kind<T>(kind: ScenarioKind, f: impl Fn(&dyn DefaultEpsilon) -> T) -> T {
    match kind {
        ScenarioKind::Toy => f(&Toy::default()),
        // The policy does not affect the smoothing default; skip cloning the network.
        ScenarioKind::Pendulum => f(&Pendulum::with_expert()),
        ScenarioKind::Crosswalk => f(&Crosswalk::default()),
        ScenarioKind::Lander => f(&Lander::default()),
    }
}

/// Object-safe view of [`Scenario::default_epsilon`].
trait DefaultEpsilon {
    fn default_epsilon(&self) -> f64;
}

impl<S: Scenario> DefaultEpsilon for S {
    fn default_epsilon(&self) -> f64 {
        Scenario::default_epsilon(self)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.chains == 0 {
            return bad("chains must be at least 1".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.method == Method::Mc && self.mc_draws == 0 {
            return bad("mc_draws must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.method == Method::Pg && self.particles < 2 {
            return bad("particles must be at least 2".into());
        }
        let prefix = format!("{}.", self.scenario);
        for key in self.params.keys() {
            if !PARAM_KEYS.contains(&key.as_str()) || !key.starts_with(&prefix) {
                return bad(format!(
                    "unknown parameter `{key}` for scenario {}",
                    self.scenario
                ));
            }
        }
        // Surface bad parameter values before any sampling.
        match self.scenario {
            ScenarioKind::Toy => self.toy().map(drop),
            ScenarioKind::Pendulum => self.pendulum().map(drop),
            ScenarioKind::Crosswalk => self.crosswalk().map(drop),
            ScenarioKind::Lander => self.lander().map(drop),
        }
    }

    fn param<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.params
            .get(key)
            .map(|v| parse_value::<T>(&format!("param.{key}"), v))
            .transpose()
    }

    fn positive(&self, key: &str) -> Result<Option<f64>> {
        match self.param::<f64>(key)? {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(Error::InvalidConfig(format!(
                "param.{key} must be positive, got {v}"
            ))),
            v => Ok(v),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.param::<usize>(key)? {
            Some(0) => Err(Error::InvalidConfig(format!(
                "param.{key} must be at least 1"
            ))),
            v => Ok(v),
        }
    }

    pub fn toy(&self) -> Result<Toy> {
        Ok(Toy::new(self.positive("toy.threshold")?.unwrap_or(5.0)))
    }

    pub fn pendulum(&self) -> Result<Pendulum> {
        let mut p = PendulumParams::default();
        if let Some(v) = self.positive("pendulum.sigma")? {
            p.sigma = v;
        }
        if let Some(v) = self.count("pendulum.horizon")? {
            p.horizon = v;
        }
        if let Some(v) = self.positive("pendulum.theta_fail")? {
            p.theta_fail = v;
        }
        let policy = match self.params.get("pendulum.policy").map(String::as_str) {
            None | Some("cloned") => PendulumPolicy::cloned(),
            Some("expert") => PendulumPolicy::Expert(Default::default()),
            Some(other) => {
                return Err(Error::InvalidConfig(format!(
                    "param.pendulum.policy must be `cloned` or `expert`, got `{other}`"
                )))
            }
        };
        Ok(Pendulum::new(p, policy))
    }

    pub fn crosswalk(&self) -> Result<Crosswalk> {
        let mut p = CrosswalkParams::default();
        if let Some(v) = self.count("crosswalk.horizon")? {
            p.horizon = v;
        }
        for (key, field) in [
            ("crosswalk.var_accel_lon", &mut p.var_accel_lon),
            ("crosswalk.var_accel_lat", &mut p.var_accel_lat),
            ("crosswalk.var_position", &mut p.var_position),
            ("crosswalk.var_velocity", &mut p.var_velocity),
            ("crosswalk.collision_radius", &mut p.collision_radius),
        ] {
            if let Some(v) = self.positive(key)? {
                *field = v;
            }
        }
        Ok(Crosswalk::new(p))
    }

    pub fn lander(&self) -> Result<Lander> {
        let mut p = LanderParams::default();
        if let Some(v) = self.count("lander.max_steps")? {
            p.max_steps = v;
        }
        for (key, field) in [
            ("lander.hard_landing_speed", &mut p.hard_landing_speed),
            ("lander.max_thrust", &mut p.max_thrust),
            ("lander.max_side_force", &mut p.max_side_force),
        ] {
            if let Some(v) = self.positive(key)? {
                *field = v;
            }
        }
        Ok(Lander::new(p, Default::default()))
    }

    /// Builds the configured scenario and hands it to `f`.
    pub fn with_scenario<T>(&self, f: impl ScenarioFn<T>) -> Result<T> {
        match self.scenario {
            ScenarioKind::Toy => f.call(&self.toy()?),
            ScenarioKind::Pendulum => f.call(&self.pendulum()?),
            ScenarioKind::Crosswalk => f.call(&self.crosswalk()?),
            ScenarioKind::Lander => f.call(&self.lander()?),
        }
    }

    /// Configuration lines of the run manifest, readable by
    /// [`ConfigOverrides::from_key_values`].
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("scenario".to_string(), self.scenario.to_string()),
            ("method".into(), self.method.to_string()),
            ("chains".into(), self.chains.to_string()),
            ("samples".into(), self.samples.to_string()),
            ("mc_draws".into(), self.mc_draws.to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("init".into(), self.init.to_string()),
            ("particles".into(), self.particles.to_string()),
        ];
        kv.extend(
            self.params
                .iter()
                .map(|(k, v)| (format!("param.{k}"), v.clone())),
        );
        kv
    }
}

/// A computation generic over the scenario type.
pub trait ScenarioFn<T> {
    fn call<S: Scenario>(self, scenario: &S) -> Result<T>
    where
        S::State<f64>: Send + Sync;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ConfigOverrides {
        ConfigOverrides {
            scenario: Some(ScenarioKind::Pendulum),
            ..Default::default()
        }
    }

    #[test]
    fn scenario_defaults() {
        let cfg = base().resolve().unwrap();
        assert_eq!((cfg.chains, cfg.samples, cfg.particles), (10, 1000, 1000));
        assert_eq!(cfg.init, InitChoice::Prior);
        assert_eq!(cfg.mc_draws, 10_000);
        let lander = ConfigOverrides {
            scenario: Some(ScenarioKind::Lander),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((lander.chains, lander.init), (30, InitChoice::Pso));
        assert_eq!(lander.epsilon, 0.1);
    }

    #[test]
    fn key_value_round_trip() {
        let mut o = base();
        o.seed = Some(9);
        o.params.insert("pendulum.sigma".into(), "0.5".into());
        let cfg = o.resolve().unwrap();
        let text: String = cfg
            .to_key_values()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let mut back =
            ConfigOverrides::from_key_values(&format!("# run\n{text}total_time_s=3\n")).unwrap();
        back.output_dir = Some(cfg.output_dir.clone());
        assert_eq!(back.resolve().unwrap(), cfg);
    }

    #[test]
    fn later_overrides_win() {
        let file = ConfigOverrides::from_key_values("scenario=toy\nchains=3\nseed=1").unwrap();
        let flags = ConfigOverrides {
            seed: Some(2),
            ..Default::default()
        };
        let cfg = file.merge(flags).resolve().unwrap();
        assert_eq!((cfg.chains, cfg.seed), (3, 2));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ConfigOverrides::default().resolve().is_err());
        for bad in [
            "scenario=toy\nchains=0",
            "scenario=toy\nepsilon=-1",
            "scenario=toy\nmethod=pg\nparticles=1",
            "scenario=toy\nparam.pendulum.sigma=1",
            "scenario=toy\nparam.toy.threshold=0",
            "scenario=toy\nparam.toy.bogus=1",
            "scenario=pendulum\nparam.pendulum.policy=lqr",
            "scenario=mars",
            "chains",
        ] {
            let r = ConfigOverrides::from_key_values(bad).and_then(ConfigOverrides::resolve);
            assert!(r.is_err(), "{bad:?} accepted");
        }
    }
}
