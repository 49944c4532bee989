//! Three-cluster synthetic lifetime benchmark with ground-truth labels.
//!
//! Lifetimes are discrete: `T = max(1, ceil(X))` for a continuous `X`, so
//! `P(T > t) = P(X > t)` at integer `t`.
//!
//! * `C2`: Weibull, shape 1.5, scale 80.
//! * `C3`: `C2` with hazard doubled, `S3(t) = S2(t)^2`.
//! * `C1`: 15% Weibull(1.5, 5) and 85% exponential with mean 1000; its survival
//!   curve starts below both others and ends above them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Weibull};

use crate::data::{Dataset, SubjectRecord, Time};
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 20;
/// Features `0..LOW_VARIANCE_FEATURES` have unit variance, the rest variance 10.
pub const LOW_VARIANCE_FEATURES: usize = 10;
const MODES: usize = 3;
const MEAN_RANGE: f64 = 30.0;

const WEIBULL_SHAPE: f64 = 1.5;
const C2_SCALE: f64 = 80.0;
const C1_FAST_WEIGHT: f64 = 0.15;
const C1_FAST_SCALE: f64 = 5.0;
const C1_SLOW_MEAN: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SynthCluster {
    C1,
    C2,
    C3,
}

impl SynthCluster {
    pub const ALL: [SynthCluster; 3] = [SynthCluster::C1, SynthCluster::C2, SynthCluster::C3];

    fn index(self) -> u64 {
        match self {
            SynthCluster::C1 => 1,
            SynthCluster::C2 => 2,
            SynthCluster::C3 => 3,
        }
    }

    /// C3's Weibull scale: doubling the hazard divides the scale by `2^(1/shape)`.
    fn c3_scale() -> f64 {
        C2_SCALE * 2f64.powf(-1.0 / WEIBULL_SHAPE)
    }

    /// `P(T > t)` of the generating law.
    pub fn survival(self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let weibull = |scale: f64| (-(t / scale).powf(WEIBULL_SHAPE)).exp();
        match self {
            SynthCluster::C1 => {
                C1_FAST_WEIGHT * weibull(C1_FAST_SCALE)
                    + (1.0 - C1_FAST_WEIGHT) * (-t / C1_SLOW_MEAN).exp()
            }
            SynthCluster::C2 => weibull(C2_SCALE),
            SynthCluster::C3 => weibull(Self::c3_scale()),
        }
    }

    fn sample_lifetime<R: Rng + ?Sized>(self, rng: &mut R) -> Time {
        let x: f64 = match self {
            SynthCluster::C1 => {
                if rng.random::<f64>() < C1_FAST_WEIGHT {
                    weibull(C1_FAST_SCALE).sample(rng)
                } else {
                    weibull_exp(C1_SLOW_MEAN).sample(rng)
                }
            }
            SynthCluster::C2 => weibull(C2_SCALE).sample(rng),
            SynthCluster::C3 => weibull(Self::c3_scale()).sample(rng),
        };
        // Saturate: anything beyond u32 is censored anyway.
        x.ceil().clamp(1.0, f64::from(Time::MAX)) as Time
    }
}

fn weibull(scale: f64) -> Weibull<f64> {
    Weibull::new(scale, WEIBULL_SHAPE).expect("positive Weibull parameters")
}

fn weibull_exp(mean: f64) -> Weibull<f64> {
    Weibull::new(mean, 1.0).expect("positive Weibull parameters")
}

impl fmt::Display for SynthCluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.index())
    }
}

impl FromStr for SynthCluster {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C1" => Ok(SynthCluster::C1),
            "C2" => Ok(SynthCluster::C2),
            "C3" => Ok(SynthCluster::C3),
            other => Err(Error::Config(format!("unknown synthetic cluster {other:?}"))),
        }
    }
}

/// Parses a comma-separated list such as `C1,C3`.
pub fn parse_clusters(list: &str) -> Result<Vec<SynthCluster>> {
    list.split(',').map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub clusters: Vec<SynthCluster>,
    pub n_per_cluster: usize,
    pub t_m: Time,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clusters: SynthCluster::ALL.to_vec(),
            n_per_cluster: 10_000,
            t_m: 150,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Position of each subject's cluster in `SynthSpec::clusters`.
    pub labels: Vec<usize>,
}

/// Seed for one cluster's stream: independent of which other clusters are requested.
fn cluster_seed(seed: u64, cluster: SynthCluster) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(cluster.index().wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

pub fn generate(spec: &SynthSpec) -> Result<SyntheticData> {
    if spec.clusters.is_empty() {
        return Err(Error::Config("no synthetic clusters requested".into()));
    }
    if spec.t_m == 0 {
        return Err(Error::Config("t_m must be positive".into()));
    }
    for (i, c) in spec.clusters.iter().enumerate() {
        if spec.clusters[..i].contains(c) {
            return Err(Error::Config(format!("cluster {c} requested twice")));
        }
    }
    let mut subjects = Vec::with_capacity(spec.clusters.len() * spec.n_per_cluster);
    let mut labels = Vec::with_capacity(subjects.capacity());
    for (label, &cluster) in spec.clusters.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cluster_seed(spec.seed, cluster));
        let means: Vec<[f64; MODES]> = (0..N_FEATURES)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..MEAN_RANGE)))
            .collect();
        let low = Normal::new(0.0, 1.0).expect("unit normal");
        let high = Normal::new(0.0, 10f64.sqrt()).expect("normal");
        for u in 0..spec.n_per_cluster {
            let covariates = means
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let mode = rng.random_range(0..MODES);
                    let noise = if i < LOW_VARIANCE_FEATURES {
                        low.sample(&mut rng)
                    } else {
                        high.sample(&mut rng)
                    };
                    m[mode] + noise
                })
                .collect();
            let t = cluster.sample_lifetime(&mut rng);
            let h = t.min(spec.t_m);
            let mut s = SubjectRecord::new(format!("{cluster}-{u}"), covariates, vec![h]);
            s.termination_flags = Some(vec![t <= spec.t_m]);
            s.true_lifetime = Some(t);
            subjects.push(s);
            labels.push(label);
        }
    }
    Ok(SyntheticData {
        dataset: Dataset::new(subjects, spec.t_m)?,
        labels,
    })
}
