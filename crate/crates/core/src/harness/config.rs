//! Run configuration files.
//!
//! ```text
//! # comment
//! [run]
//! env = pendulum-dense
//! total_env_steps = 50000
//! eval_interval = 1000
//! seeds = 0,1,2
//!
//! [agent]
//! variant = crossq_wn
//! critic_hidden = 512,512
//!
//! [diagnostics]
//! qbias = true
//! ```
//!
//! Every line is blank, a `#` comment, a `[section]` header or `key = value`.
//! Unknown keys, malformed values and constraint violations are all collected
//! and reported together; line-level problems carry their line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diagnostics::QBiasConfig;
use crate::envs::{make_env, ENV_IDS};
use crate::nn::Activation;
use crate::rl::AgentConfig;
use crate::{Error, Result};

/// Environment variable that relative output directories are resolved against.
pub const OUTPUT_ROOT_VAR: &str = "CROSSQ_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub env: String,
    pub agent: AgentConfig,
    pub total_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub precision: Precision,
    /// Runs executed concurrently.
    pub workers: usize,
    /// Record elapsed seconds; off keeps CSVs byte-reproducible.
    pub wallclock: bool,
    /// Estimate Q-bias at every evaluation point after warmup.
    pub qbias: bool,
    pub qbias_config: QBiasConfig,
    pub ci_level: f64,
    pub n_boot: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            env: "pendulum-dense".into(),
            agent: AgentConfig::default(),
            total_env_steps: 50_000,
            eval_interval: 1000,
            eval_episodes: 5,
            seeds: (0..10).collect(),
            output: PathBuf::from("runs"),
            precision: Precision::F32,
            workers: 1,
            wallclock: false,
            qbias: true,
            qbias_config: QBiasConfig::default(),
            ci_level: 0.95,
            n_boot: 2000,
        }
    }
}

/// A parsed configuration together with its non-fatal remarks.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// Every violated constraint, including the agent's.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if make_env(&self.env).is_err() {
            out.push(format!("unknown env `{}` (expected one of {ENV_IDS:?})", self.env));
        }
        if self.eval_interval == 0 {
            out.push("eval_interval must be positive".into());
        } else if !self.total_env_steps.is_multiple_of(self.eval_interval) {
            out.push(format!(
                "eval_interval {} does not divide total_env_steps {}",
                self.eval_interval, self.total_env_steps
            ));
        }
        if self.eval_episodes == 0 {
            out.push("eval_episodes must be at least 1".into());
        }
        if self.seeds.is_empty() {
            out.push("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            out.push("seeds must be distinct".into());
        }
        if self.workers == 0 {
            out.push("workers must be at least 1".into());
        }
        if self.qbias_config.n_states == 0 {
            out.push("qbias_states must be at least 1".into());
        }
        if self.qbias_config.episodes == 0 {
            out.push("qbias_episodes must be at least 1".into());
        }
        if !(self.qbias_config.tail > 0.0 && self.qbias_config.tail < 1.0) {
            out.push(format!("qbias_tail out of (0,1): {}", self.qbias_config.tail));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            out.push(format!("ci_level out of (0,1): {}", self.ci_level));
        }
        if self.n_boot == 0 {
            out.push("n_boot must be at least 1".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            out.push(format!(
                "name `{}` must be non-empty without path separators",
                self.name
            ));
        }
        out.extend(self.agent.issues());
        out
    }

    pub fn validated(self) -> Result<Validated> {
        let issues = self.issues();
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }
        let warnings = self.agent.warnings();
        Ok(Validated { config: self, warnings })
    }

    /// Output directory with relative paths placed under `$CROSSQ_OUTPUT_ROOT`
    /// when that variable is set.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output.is_relative() => PathBuf::from(root).join(&self.output),
            _ => self.output.clone(),
        }
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn render(&self) -> String {
        let a = &self.agent;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "env = {}", self.env);
        let _ = writeln!(s, "total_env_steps = {}", self.total_env_steps);
        let _ = writeln!(s, "eval_interval = {}", self.eval_interval);
        let _ = writeln!(s, "eval_episodes = {}", self.eval_episodes);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "precision = {}", self.precision.name());
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "wallclock = {}", self.wallclock);
        let _ = writeln!(s, "\n[agent]");
        let _ = writeln!(s, "variant = {}", a.variant);
        let _ = writeln!(s, "utd = {}", a.utd);
        let _ = writeln!(s, "actor_utd = {}", a.actor_utd);
        let _ = writeln!(s, "gamma = {:?}", a.gamma);
        let _ = writeln!(s, "actor_lr = {:?}", a.actor_lr);
        let _ = writeln!(s, "critic_lr = {:?}", a.critic_lr);
        let _ = writeln!(s, "alpha_lr = {:?}", a.alpha_lr);
        let _ = writeln!(s, "batch_size = {}", a.batch_size);
        let _ = writeln!(s, "actor_hidden = {}", list(&a.actor_hidden));
        let _ = writeln!(s, "critic_hidden = {}", list(&a.critic_hidden));
        let _ = writeln!(s, "activation = {}", a.activation.name());
        if let Some(h) = a.target_entropy {
            let _ = writeln!(s, "target_entropy = {h:?}");
        }
        let _ = writeln!(s, "initial_alpha = {:?}", a.initial_alpha);
        let _ = writeln!(s, "tau = {:?}", a.tau);
        if let Some(k) = a.reset_interval {
            let _ = writeln!(s, "reset_interval = {k}");
        }
        let _ = writeln!(s, "warmup = {}", a.warmup);
        let _ = writeln!(s, "buffer_capacity = {}", a.buffer_capacity);
        let _ = writeln!(s, "bn_momentum = {:?}", a.bn_momentum);
        let _ = writeln!(s, "bn_eps = {:?}", a.bn_eps);
        let _ = writeln!(s, "actor_bn_train = {}", a.actor_bn_train);
        let _ = writeln!(s, "\n[diagnostics]");
        let _ = writeln!(s, "qbias = {}", self.qbias);
        let _ = writeln!(s, "qbias_states = {}", self.qbias_config.n_states);
        let _ = writeln!(s, "qbias_tail = {:?}", self.qbias_config.tail);
        let _ = writeln!(s, "qbias_episodes = {}", self.qbias_config.episodes);
        let _ = writeln!(s, "ci_level = {:?}", self.ci_level);
        let _ = writeln!(s, "n_boot = {}", self.n_boot);
        s
    }
}

fn parse_list<T: FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|x| x.trim().parse().ok()).collect()
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    parse_bool(v).ok_or_else(|| format!("expected true or false, got `{v}`"))
}

fn widths(v: &str) -> std::result::Result<Vec<usize>, String> {
    parse_list(v).ok_or_else(|| format!("expected comma-separated widths, got `{v}`"))
}

#[allow(clippy::unit_arg)]
fn setters(section: &str) -> Option<BTreeMap<&'static str, Setter>> {
    let mut m: BTreeMap<&'static str, Setter> = BTreeMap::new();
    match section {
        "run" => {
            m.insert("name", |c, v| {
                let _: () = c.name = v.to_string();
                Ok(())
            });
            m.insert("env", |c, v| {
                let _: () = c.env = v.to_string();
                Ok(())
            });
            m.insert("total_env_steps", |c, v| {
                let _: () = c.total_env_steps = num(v)?;
                Ok(())
            });
            m.insert("eval_interval", |c, v| {
                let _: () = c.eval_interval = num(v)?;
                Ok(())
            });
            m.insert("eval_episodes", |c, v| {
                let _: () = c.eval_episodes = num(v)?;
                Ok(())
            });
            m.insert("seeds", |c, v| {
                c.seeds = parse_list(v).ok_or_else(|| format!("expected comma-separated seeds, got `{v}`"))?;
                Ok(())
            });
            m.insert("output", |c, v| {
                let _: () = c.output = PathBuf::from(v);
                Ok(())
            });
            m.insert("precision", |c, v| {
                c.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("precision must be f32 or f64, got `{v}`")),
                };
                Ok(())
            });
            m.insert("workers", |c, v| {
                let _: () = c.workers = num(v)?;
                Ok(())
            });
            m.insert("wallclock", |c, v| {
                let _: () = c.wallclock = flag(v)?;
                Ok(())
            });
        }
        "agent" => {
            m.insert("variant", |c, v| {
                let _: () = c.agent.variant = v.parse()?;
                Ok(())
            });
            m.insert("utd", |c, v| {
                let _: () = c.agent.utd = num(v)?;
                Ok(())
            });
            m.insert("actor_utd", |c, v| {
                let _: () = c.agent.actor_utd = num(v)?;
                Ok(())
            });
            m.insert("gamma", |c, v| {
                let _: () = c.agent.gamma = num(v)?;
                Ok(())
            });
            m.insert("actor_lr", |c, v| {
                let _: () = c.agent.actor_lr = num(v)?;
                Ok(())
            });
            m.insert("critic_lr", |c, v| {
                let _: () = c.agent.critic_lr = num(v)?;
                Ok(())
            });
            m.insert("alpha_lr", |c, v| {
                let _: () = c.agent.alpha_lr = num(v)?;
                Ok(())
            });
            m.insert("batch_size", |c, v| {
                let _: () = c.agent.batch_size = num(v)?;
                Ok(())
            });
            m.insert("actor_hidden", |c, v| {
                let _: () = c.agent.actor_hidden = widths(v)?;
                Ok(())
            });
            m.insert("critic_hidden", |c, v| {
                let _: () = c.agent.critic_hidden = widths(v)?;
                Ok(())
            });
            m.insert("activation", |c, v| {
                c.agent.activation = Activation::parse(v).ok_or_else(|| format!("unknown activation `{v}`"))?;
                Ok(())
            });
            m.insert("target_entropy", |c, v| {
                let _: () = c.agent.target_entropy = Some(num(v)?);
                Ok(())
            });
            m.insert("initial_alpha", |c, v| {
                let _: () = c.agent.initial_alpha = num(v)?;
                Ok(())
            });
            m.insert("tau", |c, v| {
                let _: () = c.agent.tau = num(v)?;
                Ok(())
            });
            m.insert("reset_interval", |c, v| {
                let _: () = c.agent.reset_interval = Some(num(v)?);
                Ok(())
            });
            m.insert("warmup", |c, v| {
                let _: () = c.agent.warmup = num(v)?;
                Ok(())
            });
            m.insert("buffer_capacity", |c, v| {
                let _: () = c.agent.buffer_capacity = num(v)?;
                Ok(())
            });
            m.insert("bn_momentum", |c, v| {
                let _: () = c.agent.bn_momentum = num(v)?;
                Ok(())
            });
            m.insert("bn_eps", |c, v| {
                let _: () = c.agent.bn_eps = num(v)?;
                Ok(())
            });
            m.insert("actor_bn_train", |c, v| {
                let _: () = c.agent.actor_bn_train = flag(v)?;
                Ok(())
            });
        }
        "diagnostics" => {
            m.insert("qbias", |c, v| {
                let _: () = c.qbias = flag(v)?;
                Ok(())
            });
            m.insert("qbias_states", |c, v| {
                let _: () = c.qbias_config.n_states = num(v)?;
                Ok(())
            });
            m.insert("qbias_tail", |c, v| {
                let _: () = c.qbias_config.tail = num(v)?;
                Ok(())
            });
            m.insert("qbias_episodes", |c, v| {
                let _: () = c.qbias_config.episodes = num(v)?;
                Ok(())
            });
            m.insert("ci_level", |c, v| {
                let _: () = c.ci_level = num(v)?;
                Ok(())
            });
            m.insert("n_boot", |c, v| {
                let _: () = c.n_boot = num(v)?;
                Ok(())
            });
        }
        _ => return None,
    }
    Some(m)
}

/// Parses config text; keys absent from the text keep their defaults.
pub fn parse_config(text: &str) -> Result<Validated> {
    let mut config = RunConfig::default();
    let mut issues = Vec::new();
    let mut section: Option<(String, BTreeMap<&'static str, Setter>)> = None;
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            match setters(name) {
                Some(s) => section = Some((name.to_string(), s)),
                None => {
                    issues.push(format!("line {n}: unknown section [{name}]"));
                    section = None;
                }
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(format!("line {n}: expected `key = value`, got `{line}`"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some((sec, table)) = &section else {
            issues.push(format!("line {n}: `{key}` appears outside a known section"));
            continue;
        };
        let Some(set) = table.get(key) else {
            issues.push(format!("line {n}: unknown key `{key}` in [{sec}]"));
            continue;
        };
        if let Some(prev) = seen.insert((sec.clone(), key.to_string()), n) {
            issues.push(format!("line {n}: `{key}` already set on line {prev}"));
            continue;
        }
        if let Err(e) = set(&mut config, value) {
            issues.push(format!("line {n}: {key}: {e}"));
        }
    }
    issues.extend(config.issues());
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    config.validated()
}

pub fn load_config(path: &Path) -> Result<Validated> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::Variant;

    fn issues(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let v = parse_config("[run]\nenv = pointmass\n").unwrap();
        assert_eq!(v.config.agent.utd, 1);
        assert_eq!(v.config.env, "pointmass");
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn discount_outside_unit_interval() {
        let all = issues("[agent]\ngamma = 1.5\n");
        assert!(all.iter().any(|i| i.contains("discount out of (0,1)")), "{all:?}");
    }

    #[test]
    fn reports_every_problem_with_line_numbers() {
        let text = "[run]\nbogus = 1\neval_interval = x\n[agent]\nutd = 0\nvariant = td3\nnot a pair\n[extra]\n";
        let all = issues(text);
        assert!(all.iter().any(|i| i.starts_with("line 2: unknown key `bogus`")));
        assert!(all.iter().any(|i| i.starts_with("line 3: eval_interval")));
        assert!(all.iter().any(|i| i.starts_with("line 6: variant")));
        assert!(all.iter().any(|i| i.starts_with("line 7: expected `key = value`")));
        assert!(all.iter().any(|i| i.starts_with("line 8: unknown section")));
        assert!(all.iter().any(|i| i == "utd must be at least 1"));
    }

    #[test]
    fn resets_on_crossq_warn() {
        let v = parse_config("[agent]\nvariant = crossq\nreset_interval = 1000\n").unwrap();
        assert_eq!(v.warnings.len(), 1);
        let v = parse_config("[agent]\nvariant = sac\nreset_interval = 1000\n").unwrap();
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn grid_and_seed_constraints() {
        let all = issues("[run]\ntotal_env_steps = 1000\neval_interval = 300\nseeds = 1,2,1\n");
        assert!(all.iter().any(|i| i.contains("does not divide")));
        assert!(all.iter().any(|i| i.contains("distinct")));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let all = issues("[agent]\nutd = 2\nutd = 3\n");
        assert_eq!(all, vec!["line 3: `utd` already set on line 2".to_string()]);
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.agent.reset_interval = Some(500);
        c.agent.variant = Variant::Sac;
        c.agent.target_entropy = Some(-0.5);
        c.seeds = vec![3, 9];
        c.precision = Precision::F64;
        c.qbias_config.tail = 1e-4;
        let back = parse_config(&c.render()).unwrap().config;
        assert_eq!(back, c);
    }
}
