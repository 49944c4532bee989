//! Flat `key=value` run configuration with `#` comments.

use std::path::Path;

use crate::data::Time;
use crate::divergence::{BoundForm, DivergenceKind, PairSampling};
use crate::error::{Error, Result};
use crate::nn::network::Activation;
use crate::nn::train::{TerminationChoice, TrainConfig};

/// Everything a run needs besides file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// `None` picks all pairs for up to 8 clusters and `K` sampled pairs above.
    pub pair_sampling: Option<PairSampling>,
    /// Measurement horizon used when reading datasets.
    pub t_m: Time,
    pub folds: usize,
    /// Training subjects drawn per fold; `None` uses every non-test subject.
    pub n_train: Option<usize>,
    /// Window for [`TerminationChoice::FixedTimeout`] and for evaluation flags
    /// when the data carry none.
    pub timeout_window: Option<Time>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            pair_sampling: None,
            t_m: 150,
            folds: 5,
            n_train: None,
            timeout_window: None,
        }
    }
}

/// Splits text into `(key, value)` pairs, dropping comments and blank lines.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_all(&parse_kv(&text)?)?;
        Ok(cfg)
    }

    pub fn apply_all(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Sets one key. The termination choice `fixed` reads `timeout_window`
    /// when the config is resolved, so key order does not matter.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "clusters" | "k" => t.clusters = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "t_m" => self.t_m = parse(key, value)?,
            "hidden_layers" => t.hidden_layers = parse(key, value)?,
            "hidden_units" => t.hidden_units = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "l2" => t.l2 = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "patience" => t.early_stop_patience = parse(key, value)?,
            "validation_fraction" => t.validation_fraction = parse(key, value)?,
            "batch_norm" => t.batch_norm = parse_bool(key, value)?,
            "activation" => {
                t.activation = Activation::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown activation {value:?}")))?
            }
            "divergence" => {
                t.divergence.kind = match value {
                    "kuiper_ub" => DivergenceKind::KuiperUb,
                    "mmd" => DivergenceKind::Mmd { bandwidth: None },
                    _ => return Err(Error::Config(format!("unknown divergence {value:?}"))),
                }
            }
            "mmd_bandwidth" => {
                let bw = if value == "auto" {
                    None
                } else {
                    let h: f64 = parse(key, value)?;
                    if !(h > 0.0) {
                        return Err(Error::Config("mmd_bandwidth must be positive".into()));
                    }
                    Some(h)
                };
                if let DivergenceKind::Mmd { bandwidth } = &mut t.divergence.kind {
                    *bandwidth = bw;
                } else if bw.is_some() {
                    return Err(Error::Config("mmd_bandwidth needs divergence=mmd first".into()));
                }
            }
            "bound" => {
                t.divergence.bound = BoundForm::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown bound form {value:?}")))?
            }
            "grad_through_n" => t.divergence.grad_through_n = parse_bool(key, value)?,
            "min_effective_n" => t.divergence.min_effective_n = parse(key, value)?,
            "pair_sampling" => {
                self.pair_sampling = match value {
                    "auto" => None,
                    "all" => Some(PairSampling::AllPairs),
                    n => Some(PairSampling::SampleWithoutReplacement(parse(key, n)?)),
                }
            }
            "termination" => {
                t.termination = match value {
                    "observed" => TerminationChoice::Observed,
                    "learnable" => TerminationChoice::Learnable,
                    // window filled in by `resolved_train`
                    "fixed" => TerminationChoice::FixedTimeout(0),
                    _ => return Err(Error::Config(format!("unknown termination {value:?}"))),
                }
            }
            "timeout_window" => self.timeout_window = Some(parse(key, value)?),
            "folds" => self.folds = parse(key, value)?,
            "n_train" => {
                self.n_train = if value == "all" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Training config with defaults that depend on other keys filled in.
    pub fn resolved_train(&self) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.divergence.pair_sampling = self
            .pair_sampling
            .unwrap_or_else(|| PairSampling::default_for(t.clusters));
        if let TerminationChoice::FixedTimeout(_) = t.termination {
            let w = self.timeout_window.ok_or_else(|| {
                Error::Config("termination=fixed requires timeout_window".into())
            })?;
            t.termination = TerminationChoice::FixedTimeout(w);
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        Ok(t)
    }

    /// Every key in a fixed order; feeding the output back reproduces `self`.
    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let d = &t.divergence;
        let mut lines: Vec<(&str, String)> = vec![
            ("seed", t.seed.to_string()),
            ("clusters", t.clusters.to_string()),
            ("tau", t.tau.to_string()),
            ("t_m", self.t_m.to_string()),
            ("folds", self.folds.to_string()),
            (
                "n_train",
                self.n_train.map_or("all".to_string(), |n| n.to_string()),
            ),
            ("hidden_layers", t.hidden_layers.to_string()),
            ("hidden_units", t.hidden_units.to_string()),
            ("activation", t.activation.name().to_string()),
            ("batch_norm", t.batch_norm.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", format!("{:?}", t.learning_rate)),
            ("l2", format!("{:?}", t.l2)),
            ("epochs", t.epochs.to_string()),
            ("patience", t.early_stop_patience.to_string()),
            ("validation_fraction", format!("{:?}", t.validation_fraction)),
        ];
        match d.kind {
            DivergenceKind::KuiperUb => lines.push(("divergence", "kuiper_ub".into())),
            DivergenceKind::Mmd { bandwidth } => {
                lines.push(("divergence", "mmd".into()));
                lines.push((
                    "mmd_bandwidth",
                    bandwidth.map_or("auto".to_string(), |h| format!("{h:?}")),
                ));
            }
        }
        lines.push(("bound", d.bound.name().into()));
        lines.push(("grad_through_n", d.grad_through_n.to_string()));
        lines.push(("min_effective_n", format!("{:?}", d.min_effective_n)));
        lines.push((
            "pair_sampling",
            match self.pair_sampling {
                None => "auto".into(),
                Some(PairSampling::AllPairs) => "all".into(),
                Some(PairSampling::SampleWithoutReplacement(n)) => n.to_string(),
            },
        ));
        lines.push((
            "termination",
            match t.termination {
                TerminationChoice::Observed => "observed",
                TerminationChoice::Learnable => "learnable",
                TerminationChoice::FixedTimeout(_) => "fixed",
            }
            .into(),
        ));
        if let Some(w) = self.timeout_window {
            lines.push(("timeout_window", w.to_string()));
        }
        lines
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
