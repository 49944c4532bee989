use lifeclust::data::Time;
use lifeclust::km::weighted_kaplan_meier;
use lifeclust::synth::{generate, SynthCluster, SynthSpec, LOW_VARIANCE_FEATURES};

const N: usize = 10_000;

fn cluster(c: SynthCluster, seed: u64) -> lifeclust::data::Dataset {
    generate(&SynthSpec {
        clusters: vec![c],
        n_per_cluster: N,
        t_m: 150,
        seed,
    })
    .unwrap()
    .dataset
}

fn km(data: &lifeclust::data::Dataset) -> Vec<f64> {
    let beta: Vec<f64> = data
        .subjects
        .iter()
        .map(|s| f64::from(u8::from(s.last_termination_flag().unwrap())))
        .collect();
    weighted_kaplan_meier(data, &vec![1.0; data.len()], &beta).unwrap().values
}

#[test]
fn c2_c3_cumulative_hazard_ratio_is_flat() {
    let s2 = km(&cluster(SynthCluster::C2, 1));
    let s3 = km(&cluster(SynthCluster::C3, 1));
    // start once a few hundred events have accumulated in the slower cluster
    let ratios: Vec<f64> = (20..=150).map(|t| s3[t].ln() / s2[t].ln()).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64).sqrt();
    assert!(sd / mean < 0.15, "cv {} (mean ratio {mean})", sd / mean);
    assert!((mean - 2.0).abs() < 0.2);
}

fn sign_changes(a: &[f64], b: &[f64]) -> usize {
    let signs: Vec<bool> = a
        .iter()
        .zip(b)
        .skip(1)
        .filter(|(x, y)| x != y)
        .map(|(x, y)| x > y)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

#[test]
fn c1_crosses_the_other_two() {
    let s1 = km(&cluster(SynthCluster::C1, 2));
    for other in [SynthCluster::C2, SynthCluster::C3] {
        let s = km(&cluster(other, 2));
        assert!(sign_changes(&s1, &s) >= 1, "C1 does not cross {other}");
    }
}

#[test]
fn empirical_curves_within_dkw_band() {
    let delta: f64 = 0.01;
    let eps = ((2.0 / delta).ln() / (2.0 * N as f64)).sqrt();
    for c in SynthCluster::ALL {
        let data = cluster(c, 3);
        let truth: Vec<Time> = data.subjects.iter().map(|s| s.true_lifetime.unwrap()).collect();
        for t in 0..=150u32 {
            let empirical = truth.iter().filter(|&&x| x > t).count() as f64 / N as f64;
            let law = c.survival(f64::from(t));
            assert!((empirical - law).abs() <= eps, "{c} t={t}: {empirical} vs {law}");
        }
        for s in &data.subjects {
            let t = s.true_lifetime.unwrap();
            assert_eq!(s.last_termination_flag(), Some(t <= 150));
            assert_eq!(s.observed_lifetime(), t.min(150));
        }
    }
}

#[test]
fn low_variance_features_carry_signal() {
    let synth = generate(&SynthSpec {
        clusters: vec![SynthCluster::C1, SynthCluster::C2],
        n_per_cluster: 2000,
        t_m: 150,
        seed: 4,
    })
    .unwrap();
    let rows: Vec<(&[f64], usize)> = synth
        .dataset
        .subjects
        .iter()
        .zip(&synth.labels)
        .map(|(s, &l)| (s.covariates.as_slice(), l))
        .collect();
    let (train, test): (Vec<_>, Vec<_>) = rows.iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let accuracy = |set: &[(usize, &(&[f64], usize))], f: usize, thr: f64, above: usize| {
        set.iter()
            .filter(|(_, (x, l))| usize::from(x[f] > thr) == usize::from(*l == above))
            .count() as f64
            / set.len() as f64
    };
    let mut best = (0.0, 0, 0.0, 0);
    for f in 0..LOW_VARIANCE_FEATURES {
        for step in 0..=60 {
            let thr = step as f64 * 0.5;
            for above in 0..2 {
                let acc = accuracy(&train, f, thr, above);
                if acc > best.0 {
                    best = (acc, f, thr, above);
                }
            }
        }
    }
    let held_out = accuracy(&test, best.1, best.2, best.3);
    assert!(held_out > 0.6, "stump accuracy {held_out}");
}
