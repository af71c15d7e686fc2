//! Flat `key = value` configuration. Keys match the long flag names, with
//! `-` and `_` interchangeable; flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sag_core::experiment::{DataSource, ExperimentConfig};
use sag_core::{Amplitude, DeltaVariant, SyntheticFamily, SyntheticSpec};

#[derive(Debug, Clone)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub experiment: ExperimentConfig,
    pub seeds_given: bool,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub checkpoint: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: SyntheticSpec::default(),
            experiment: ExperimentConfig::default(),
            seeds_given: false,
            out: None,
            jobs: 1,
            checkpoint: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => bail!("invalid value {value:?} for {key}: expected true or false"),
    }
}

/// `3`, `0,2,5` or the half-open range `0..10`.
pub fn parse_seed_list(value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse("seeds", a.trim())?, parse("seeds", b.trim())?);
        if a >= b {
            bail!("empty seed range {value:?}");
        }
        return Ok((a..b).collect());
    }
    value
        .split(',')
        .map(|s| parse("seeds", s.trim()))
        .collect()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let exp = &mut self.experiment;
        let SyntheticFamily::SineVsCenteredBump {
            periods,
            bump_amplitude,
            bump_width,
            phase_jitter,
            level_std,
        } = &mut self.synthetic.family;
        match key.as_str() {
            "data" => self.data = Some(PathBuf::from(value)),
            "synthetic" => {
                if parse_bool(&key, value)? {
                    self.data = None;
                }
            }
            "epsilon" => exp.epsilon = parse(&key, value)?,
            "seed" => {
                exp.seeds = vec![parse(&key, value)?];
                self.seeds_given = true;
            }
            "seeds" => {
                exp.seeds = parse_seed_list(value)?;
                self.seeds_given = true;
            }
            "epochs" => exp.train.epochs = parse(&key, value)?,
            "lr" | "learning_rate" => exp.train.learning_rate = parse(&key, value)?,
            "batch" | "batch_size" => exp.train.batch_size = Some(parse(&key, value)?),
            "channels" => {
                exp.channels = value
                    .split(',')
                    .map(|c| parse(&key, c.trim()))
                    .collect::<Result<_>>()?
            }
            "inject_class" => exp.shortcut.target_class = parse(&key, value)?,
            "inject_pos" => exp.shortcut.position = parse(&key, value)?,
            "inject_width" => exp.shortcut.width = parse(&key, value)?,
            "amplitude_k" => exp.shortcut.amplitude = Amplitude::Relative(parse(&key, value)?),
            "amplitude_abs" => exp.shortcut.amplitude = Amplitude::Absolute(parse(&key, value)?),
            "delta_variant" => exp.delta_variant = parse::<DeltaVariant>(&key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "jobs" => self.jobs = parse(&key, value)?,
            "checkpoint" => self.checkpoint = parse_bool(&key, value)?,
            "n_per_class" => self.synthetic.n_per_class = parse(&key, value)?,
            "length" => self.synthetic.length = parse(&key, value)?,
            "noise_std" => self.synthetic.noise_std = parse(&key, value)?,
            "periods" => *periods = parse(&key, value)?,
            "bump_amplitude" => *bump_amplitude = parse(&key, value)?,
            "bump_width" => *bump_width = parse(&key, value)?,
            "phase_jitter" => *phase_jitter = parse(&key, value)?,
            "level_std" => *level_std = parse(&key, value)?,
            _ => bail!("unknown setting {key:?}"),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", i + 1))?;
            self.set(key, value)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<String> {
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
    }

    /// The experiment with its data source resolved.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        let mut exp = self.experiment.clone();
        exp.source = match &self.data {
            Some(prefix) => DataSource::Ucr(prefix.clone()),
            None => DataSource::Synthetic(self.synthetic.clone()),
        };
        exp.validate()?;
        Ok(exp)
    }
}
