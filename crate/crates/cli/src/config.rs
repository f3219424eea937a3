//! Run configuration: flat key = value entries in named sections.
//!
//! Parsing is strict (unknown sections or keys are errors) and writing
//! materializes every field, so a config written once round-trips losslessly
//! and records exactly what a run used.

use fwdguide_core::guidance::{GuessKind, OuterSampler, Strategy};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [schedule]
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    // [data]
    pub data_points: usize,
    pub noise_sigma: f64,
    pub data_seed: u64,
    // [train]
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub train_seed: u64,
    pub log_every: usize,
    pub time_freqs: usize,
    // [sample]
    pub sample_count: usize,
    pub sample_seed: u64,
    pub outer: OuterSampler,
    // [guidance]
    pub strategy: Strategy,
    pub guess: GuessName,
    pub frames: usize,
    pub lambda: f64,
    pub stride: usize,
    // [objective]
    pub objective_kind: ObjectiveName,
    pub circle_target: f64,
    pub mask: Vec<f64>,
    pub mask_target: Vec<f64>,
    // [metrics]
    pub tol: f64,
    // [output]
    pub out_dir: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessName {
    Random,
    Score,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveName {
    Circle,
    Masked,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schedule_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            data_points: 5000,
            noise_sigma: 0.02,
            data_seed: 7,
            train_steps: 4000,
            batch: 128,
            lr: 1e-3,
            train_seed: 7,
            log_every: 50,
            time_freqs: 8,
            sample_count: 256,
            sample_seed: 7,
            outer: OuterSampler::AncestralDdpm,
            strategy: Strategy::Titan,
            guess: GuessName::Score,
            frames: 2,
            lambda: 0.1,
            stride: 1,
            objective_kind: ObjectiveName::Circle,
            circle_target: 0.3,
            mask: vec![1.0, 0.0],
            mask_target: vec![0.7, 0.0],
            tol: 0.1,
            out_dir: "out".to_string(),
        }
    }
}

impl RunConfig {
    pub fn guess_kind(&self) -> GuessKind {
        match self.guess {
            GuessName::Random => GuessKind::Random,
            GuessName::Score => GuessKind::Score,
            GuessName::Sampled => GuessKind::Sampled { frames: self.frames },
        }
    }

    /// Serializes with every field present.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[schedule]");
        let _ = writeln!(s, "steps = {}", self.schedule_steps);
        let _ = writeln!(s, "beta_start = {}", self.beta_start);
        let _ = writeln!(s, "beta_end = {}", self.beta_end);
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "points = {}", self.data_points);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "seed = {}", self.data_seed);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "steps = {}", self.train_steps);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "seed = {}", self.train_seed);
        let _ = writeln!(s, "log_every = {}", self.log_every);
        let _ = writeln!(s, "time_freqs = {}", self.time_freqs);
        let _ = writeln!(s, "\n[sample]");
        let _ = writeln!(s, "count = {}", self.sample_count);
        let _ = writeln!(s, "seed = {}", self.sample_seed);
        let outer = match self.outer {
            OuterSampler::AncestralDdpm => "ancestral",
            OuterSampler::DeterministicDdim => "deterministic",
        };
        let _ = writeln!(s, "outer = {outer}");
        let _ = writeln!(s, "\n[guidance]");
        let _ = writeln!(s, "strategy = {}", self.strategy.name());
        let guess = match self.guess {
            GuessName::Random => "random",
            GuessName::Score => "score",
            GuessName::Sampled => "sampled",
        };
        let _ = writeln!(s, "guess = {guess}");
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "stride = {}", self.stride);
        let _ = writeln!(s, "\n[objective]");
        let kind = match self.objective_kind {
            ObjectiveName::Circle => "circle",
            ObjectiveName::Masked => "masked",
        };
        let _ = writeln!(s, "kind = {kind}");
        let _ = writeln!(s, "circle_target = {}", self.circle_target);
        let _ = writeln!(s, "mask = {}", join_floats(&self.mask));
        let _ = writeln!(s, "mask_target = {}", join_floats(&self.mask_target));
        let _ = writeln!(s, "\n[metrics]");
        let _ = writeln!(s, "tol = {}", self.tol);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir);
        s
    }

    /// Parses over the defaults; unknown sections or keys and malformed
    /// values are errors.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key = value", lineno + 1));
            };
            let key = key.trim();
            let value = value.trim();
            let full = format!("{section}.{key}");
            if seen.insert(full.clone(), ()).is_some() {
                return Err(format!("duplicate key {full}"));
            }
            apply(&mut cfg, &full, value)?;
        }
        Ok(cfg)
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_floats(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad float list entry {p:?}")))
        .collect()
}

fn apply(cfg: &mut RunConfig, full: &str, value: &str) -> Result<(), String> {
    fn num<T: std::str::FromStr>(full: &str, value: &str) -> Result<T, String> {
        value.parse().map_err(|_| format!("bad value for {full}: {value:?}"))
    }
    match full {
        "schedule.steps" => cfg.schedule_steps = num(full, value)?,
        "schedule.beta_start" => cfg.beta_start = num(full, value)?,
        "schedule.beta_end" => cfg.beta_end = num(full, value)?,
        "data.points" => cfg.data_points = num(full, value)?,
        "data.noise_sigma" => cfg.noise_sigma = num(full, value)?,
        "data.seed" => cfg.data_seed = num(full, value)?,
        "train.steps" => cfg.train_steps = num(full, value)?,
        "train.batch" => cfg.batch = num(full, value)?,
        "train.lr" => cfg.lr = num(full, value)?,
        "train.seed" => cfg.train_seed = num(full, value)?,
        "train.log_every" => cfg.log_every = num(full, value)?,
        "train.time_freqs" => cfg.time_freqs = num(full, value)?,
        "sample.count" => cfg.sample_count = num(full, value)?,
        "sample.seed" => cfg.sample_seed = num(full, value)?,
        "sample.outer" => {
            cfg.outer = match value {
                "ancestral" => OuterSampler::AncestralDdpm,
                "deterministic" => OuterSampler::DeterministicDdim,
                other => return Err(format!("bad sample.outer {other:?}")),
            }
        }
        "guidance.strategy" => cfg.strategy = parse_strategy(value)?,
        "guidance.guess" => cfg.guess = parse_guess(value)?,
        "guidance.frames" => cfg.frames = num(full, value)?,
        "guidance.lambda" => cfg.lambda = num(full, value)?,
        "guidance.stride" => cfg.stride = num(full, value)?,
        "objective.kind" => {
            cfg.objective_kind = match value {
                "circle" => ObjectiveName::Circle,
                "masked" => ObjectiveName::Masked,
                other => return Err(format!("bad objective.kind {other:?}")),
            }
        }
        "objective.circle_target" => cfg.circle_target = num(full, value)?,
        "objective.mask" => cfg.mask = parse_floats(value)?,
        "objective.mask_target" => cfg.mask_target = parse_floats(value)?,
        "metrics.tol" => cfg.tol = num(full, value)?,
        "output.dir" => cfg.out_dir = value.to_string(),
        other => return Err(format!("unknown config key {other}")),
    }
    Ok(())
}

pub fn parse_strategy(value: &str) -> Result<Strategy, String> {
    Ok(match value {
        "unguided" => Strategy::Unguided,
        "tweedie" => Strategy::Tweedie,
        "direct" => Strategy::Direct,
        "titan" => Strategy::Titan,
        other => return Err(format!("bad strategy {other:?}")),
    })
}

pub fn parse_guess(value: &str) -> Result<GuessName, String> {
    Ok(match value {
        "random" => GuessName::Random,
        "score" => GuessName::Score,
        "sampled" => GuessName::Sampled,
        other => return Err(format!("bad guess {other:?}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_losslessly() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, parsed);
        assert_eq!(text, parsed.to_text());
    }

    #[test]
    fn partial_configs_fill_from_defaults() {
        let cfg = RunConfig::parse("[train]\nsteps = 10\n\n[sample]\ncount = 4\n").unwrap();
        assert_eq!(cfg.train_steps, 10);
        assert_eq!(cfg.sample_count, 4);
        assert_eq!(cfg.batch, RunConfig::default().batch);
    }

    #[test]
    fn unknown_keys_and_bad_values_error() {
        assert!(RunConfig::parse("[train]\nstepz = 10\n").is_err());
        assert!(RunConfig::parse("[nope]\nsteps = 10\n").is_err());
        assert!(RunConfig::parse("[train]\nsteps = banana\n").is_err());
        assert!(RunConfig::parse("[train]\nsteps\n").is_err());
        assert!(RunConfig::parse("[train]\nsteps = 1\nsteps = 2\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse("# top\n[metrics]\n; c\ntol = 0.25\n\n").unwrap();
        assert_eq!(cfg.tol, 0.25);
    }
}
