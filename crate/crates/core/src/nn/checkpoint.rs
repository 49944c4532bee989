//! Plain-text model checkpoints.
//!
//! ```text
//! DEEPCLIFE1
//! seed=<u64>
//! tau=<u32>
//! activation=relu|tanh
//! termination=observed | learnable <log_rate> | fixed <window>
//! standardizer <width>
//! <means>
//! <scales>
//! dense <in> <out>
//! <one line of out weights per input>
//! <bias>
//! batchnorm <width>
//! <gamma>
//! <beta>
//! <running mean>
//! <running var>
//! config <lines>
//! <key=value lines>
//! end
//! ```
//!
//! Numbers use shortest round-trip formatting, so a save and load is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Time;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::features::Standardizer;
use crate::nn::network::{Activation, BatchNorm, Dense, ModelParams};
use crate::termination::TerminationModel;

pub const MAGIC: &str = "DEEPCLIFE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub tau: Time,
    /// Resolved run configuration as `key=value` lines.
    pub config: String,
}

fn row(out: &mut String, values: &[f64]) {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&cells.join(" "));
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "tau={}", self.tau);
        let _ = writeln!(out, "activation={}", p.activation.name());
        let _ = match p.termination {
            TerminationModel::ObservedSignals => writeln!(out, "termination=observed"),
            TerminationModel::LearnableExponential { log_rate } => {
                writeln!(out, "termination=learnable {log_rate:?}")
            }
            TerminationModel::FixedTimeout { window } => writeln!(out, "termination=fixed {window}"),
        };
        let _ = writeln!(out, "standardizer {}", p.standardizer.width());
        row(&mut out, &p.standardizer.mean);
        row(&mut out, &p.standardizer.scale);
        for layer in &p.layers {
            let _ = writeln!(out, "dense {} {}", layer.fan_in(), layer.width());
            for r in 0..layer.fan_in() {
                row(&mut out, layer.weights.row(r));
            }
            row(&mut out, &layer.bias);
        }
        for bn in &p.batch_norm {
            let _ = writeln!(out, "batchnorm {}", bn.gamma.len());
            row(&mut out, &bn.gamma);
            row(&mut out, &bn.beta);
            row(&mut out, &bn.running_mean);
            row(&mut out, &bn.running_var);
        }
        let config: Vec<&str> = self.config.lines().collect();
        let _ = writeln!(out, "config {}", config.len());
        for line in config {
            let _ = writeln!(out, "{line}");
        }
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        if lines.next()? != MAGIC {
            return Err(Error::Checkpoint(format!("missing {MAGIC} header")));
        }
        let seed = parse_one(lines.field("seed")?)?;
        let tau = parse_one(lines.field("tau")?)?;
        let act = lines.field("activation")?;
        let activation = Activation::parse(act)
            .ok_or_else(|| Error::Checkpoint(format!("unknown activation {act:?}")))?;
        let term = lines.field("termination")?;
        let termination = match term.split_once(' ') {
            None if term == "observed" => TerminationModel::ObservedSignals,
            Some(("learnable", v)) => TerminationModel::LearnableExponential {
                log_rate: parse_one(v)?,
            },
            Some(("fixed", v)) => TerminationModel::FixedTimeout {
                window: parse_one(v)?,
            },
            _ => return Err(Error::Checkpoint(format!("bad termination {term:?}"))),
        };
        let width = lines.header("standardizer", 1)?[0];
        let standardizer = Standardizer {
            mean: lines.row(width)?,
            scale: lines.row(width)?,
        };

        let mut layers = Vec::new();
        let mut batch_norm = Vec::new();
        let config_len = loop {
            let line = lines.next()?;
            let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
            let dims: Vec<usize> = rest
                .split_whitespace()
                .map(parse_one)
                .collect::<Result<_>>()?;
            match (tag, dims.as_slice()) {
                ("dense", &[fan_in, out]) => {
                    let mut data = Vec::with_capacity(fan_in * out);
                    for _ in 0..fan_in {
                        data.extend(lines.row(out)?);
                    }
                    layers.push(Dense {
                        weights: Matrix::from_vec(fan_in, out, data),
                        bias: lines.row(out)?,
                    });
                }
                ("batchnorm", &[w]) => batch_norm.push(BatchNorm {
                    gamma: lines.row(w)?,
                    beta: lines.row(w)?,
                    running_mean: lines.row(w)?,
                    running_var: lines.row(w)?,
                }),
                ("config", &[n]) => break n,
                _ => return Err(Error::Checkpoint(format!("unexpected line {line:?}"))),
            }
        };
        let mut config = String::new();
        for _ in 0..config_len {
            config.push_str(lines.next()?);
            config.push('\n');
        }
        if lines.next()? != "end" {
            return Err(Error::Checkpoint("missing end marker".into()));
        }

        if layers.is_empty() || layers[0].fan_in() != width {
            return Err(Error::Checkpoint("layer shapes do not match the inputs".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].width() != pair[1].fan_in() {
                return Err(Error::Checkpoint("inconsistent layer shapes".into()));
            }
        }
        let hidden = layers.len() - 1;
        if !(batch_norm.is_empty()
            || (batch_norm.len() == hidden
                && batch_norm
                    .iter()
                    .zip(&layers)
                    .all(|(bn, l)| bn.gamma.len() == l.width())))
        {
            return Err(Error::Checkpoint("batch norm shapes do not match".into()));
        }
        Ok(Self {
            params: ModelParams {
                standardizer,
                layers,
                batch_norm,
                activation,
                termination,
            },
            seed,
            tau,
            config,
        })
    }
}

fn parse_one<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("cannot parse {s:?}")))
}

struct Lines<'a, I: Iterator<Item = (usize, &'a str)>> {
    inner: I,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Lines<'a, I> {
    fn next(&mut self) -> Result<&'a str> {
        self.inner
            .next()
            .map(|(_, l)| l.trim_end())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| Error::Checkpoint(format!("expected {key}=, got {line:?}")))
    }

    fn header(&mut self, tag: &str, n: usize) -> Result<Vec<usize>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(tag) {
            return Err(Error::Checkpoint(format!("expected {tag}, got {line:?}")));
        }
        let dims: Vec<usize> = parts.map(parse_one).collect::<Result<_>>()?;
        if dims.len() != n {
            return Err(Error::Checkpoint(format!("malformed {tag} header")));
        }
        Ok(dims)
    }

    fn row(&mut self, width: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let values: Vec<f64> = line.split_whitespace().map(parse_one).collect::<Result<_>>()?;
        if values.len() != width {
            return Err(Error::Checkpoint(format!(
                "expected {width} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }
}
