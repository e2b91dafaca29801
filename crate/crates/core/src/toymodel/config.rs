use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Network and optimiser settings for the desk-scale model.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    /// Input height and width.
    pub input_size: (usize, usize),
    /// Encoder channels for stages 2, 3 and 4.
    pub channels: [usize; 3],
    /// Decoder and attention width C.
    pub width: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch: usize,
    pub epochs: usize,
    /// Size of the generated synthetic set (80% train, 20% held out).
    pub samples: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            input_size: (32, 32),
            channels: [8, 16, 32],
            width: 8,
            lr: 1e-4,
            lr_decay: 0.1,
            decay_every: 50,
            batch: 16,
            epochs: 50,
            samples: 80,
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: [&str; 10] =
    ["input_size", "channels", "width", "lr", "lr_decay", "decay_every", "batch", "epochs", "samples", "seed"];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Contract(format!("invalid value for config key `{key}`: {value:?}")))
}

impl ToyConfig {
    /// Settings for short desk runs: the default network with a larger
    /// step size so a few hundred Adam steps make visible progress.
    pub fn desk() -> Self {
        Self { lr: 1e-3, ..Self::default() }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::Contract(format!("input_size {h}x{w} must be a positive multiple of 8")));
        }
        if self.channels.contains(&0) || self.width == 0 {
            return Err(Error::Contract("channel counts must be positive".into()));
        }
        if self.batch == 0 || self.decay_every == 0 {
            return Err(Error::Contract("batch and decay_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Contract("lr must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input_size" => {
                let parts: Vec<&str> = value.split(['x', 'X', ',']).collect();
                self.input_size = match parts[..] {
                    [s] => {
                        let n = parse_num(key, s)?;
                        (n, n)
                    }
                    [h, w] => (parse_num(key, h)?, parse_num(key, w)?),
                    _ => return Err(Error::Contract(format!("invalid value for config key `{key}`: {value:?}"))),
                };
            }
            "channels" => {
                let parts: Vec<usize> = value.split(',').map(|s| parse_num(key, s)).collect::<Result<_>>()?;
                self.channels = parts
                    .try_into()
                    .map_err(|_| Error::Contract("config key `channels` needs exactly 3 stage widths".into()))?;
            }
            "width" => self.width = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "lr_decay" => self.lr_decay = parse_num(key, value)?,
            "decay_every" => self.decay_every = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "samples" => self.samples = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => return Err(Error::Contract(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` lines over `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are rejected.
    pub fn parse_over(mut self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Contract(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn to_kv_text(&self) -> String {
        let [c2, c3, c4] = self.channels;
        format!(
            "input_size = {}x{}\nchannels = {c2},{c3},{c4}\nwidth = {}\nlr = {}\nlr_decay = {}\ndecay_every = {}\nbatch = {}\nepochs = {}\nsamples = {}\nseed = {}\n",
            self.input_size.0,
            self.input_size.1,
            self.width,
            self.lr,
            self.lr_decay,
            self.decay_every,
            self.batch,
            self.epochs,
            self.samples,
            self.seed
        )
    }
}

/// Members of the ablation lattice, from the single-branch baseline to the
/// full cascade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AblationVariant {
    /// AiF branch only, no depth, no attention.
    Model1,
    /// Both branches, no attention.
    Model2,
    /// Both branches, attention in the first cascade slot only.
    Model3,
    /// Both branches, attention in the second cascade slot only.
    Model4,
    /// Both branches, both attention modules.
    Cma,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [Self::Model1, Self::Model2, Self::Model3, Self::Model4, Self::Cma];

    pub fn name(self) -> &'static str {
        match self {
            Self::Model1 => "model1",
            Self::Model2 => "model2",
            Self::Model3 => "model3",
            Self::Model4 => "model4",
            Self::Cma => "cma",
        }
    }

    pub fn uses_depth(self) -> bool {
        self != Self::Model1
    }

    pub fn first_attention(self) -> bool {
        matches!(self, Self::Model3 | Self::Cma)
    }

    pub fn second_attention(self) -> bool {
        matches!(self, Self::Model4 | Self::Cma)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Contract(format!("unknown variant `{s}` (expected model1..model4 or cma)")))
    }
}
