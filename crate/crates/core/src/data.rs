//! Subjects, datasets and the on-disk CSV schema.
//!
//! Time is discrete throughout: every duration is a nonnegative integer
//! number of time units. Fractional values in input files are rejected.
//!
//! CSV layout (header row required):
//!
//! ```text
//! id,joining_time,inter_event_times,termination_flag,true_lifetime,cov_0,...,cov_{p-1}
//! u17,0,3;4;0,1,,0.25,-1.5
//! ```
//!
//! `inter_event_times` is `;`-joined, `termination_flag` is `0`, `1` or
//! empty (no signal observed), `true_lifetime` is an integer or empty.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Discrete time unit.
pub type Time = u32;

const FIXED_COLUMNS: [&str; 5] = [
    "id",
    "joining_time",
    "inter_event_times",
    "termination_flag",
    "true_lifetime",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub covariates: Vec<f64>,
    pub inter_event_times: Vec<Time>,
    /// Per-event covariates, aligned with `inter_event_times`.
    pub event_covariates: Option<Vec<Vec<f64>>>,
    pub joining_time: Time,
    /// Per-event termination markers, aligned with `inter_event_times`.
    pub termination_flags: Option<Vec<bool>>,
    /// Ground-truth lifetime, only known for simulated subjects.
    pub true_lifetime: Option<Time>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, covariates: Vec<f64>, inter_event_times: Vec<Time>) -> Self {
        Self {
            id: id.into(),
            covariates,
            inter_event_times,
            event_covariates: None,
            joining_time: 0,
            termination_flags: None,
            true_lifetime: None,
        }
    }

    /// Observed lifetime `H`: the sum of all inter-event times.
    pub fn observed_lifetime(&self) -> Time {
        self.inter_event_times.iter().sum()
    }

    /// Number of events observed up to absolute time `t`.
    pub fn event_count(&self, t: Time) -> usize {
        let Some(horizon) = t.checked_sub(self.joining_time) else {
            return 0;
        };
        let mut elapsed: Time = 0;
        let mut count = 0;
        for &gap in &self.inter_event_times {
            elapsed += gap;
            if elapsed > horizon {
                break;
            }
            count += 1;
        }
        count
    }

    /// The flag attached to the last observed event, if signals were recorded.
    pub fn last_termination_flag(&self) -> Option<bool> {
        self.termination_flags
            .as_ref()
            .map(|flags| flags.last().copied().unwrap_or(false))
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidSubject {
            id: self.id.clone(),
            reason,
        };
        let n = self.inter_event_times.len();
        if let Some(flags) = &self.termination_flags {
            if flags.len() != n {
                return Err(invalid(format!(
                    "{} termination flags for {n} events",
                    flags.len()
                )));
            }
            if let Some(pos) = flags.iter().position(|&f| f) {
                if pos + 1 != n {
                    return Err(invalid("termination flag set before the last event".into()));
                }
            }
        }
        if let Some(events) = &self.event_covariates {
            if events.len() != n {
                return Err(invalid(format!(
                    "{} event covariate rows for {n} events",
                    events.len()
                )));
            }
        }
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite covariate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    /// Measurement horizon.
    pub t_m: Time,
    /// Largest observed lifetime across subjects.
    pub t_max: Time,
}

impl Dataset {
    /// Validates every subject against the horizon and computes `t_max`.
    pub fn new(subjects: Vec<SubjectRecord>, t_m: Time) -> Result<Self> {
        let mut t_max = 0;
        let width = subjects.first().map(|s| s.covariates.len());
        for s in &subjects {
            s.validate()?;
            if Some(s.covariates.len()) != width {
                return Err(Error::InvalidSubject {
                    id: s.id.clone(),
                    reason: format!(
                        "{} covariates, expected {}",
                        s.covariates.len(),
                        width.unwrap_or(0)
                    ),
                });
            }
            let h = s.observed_lifetime();
            if u64::from(s.joining_time) + u64::from(h) > u64::from(t_m) {
                return Err(Error::InvalidSubject {
                    id: s.id.clone(),
                    reason: format!(
                        "joining time {} plus observed lifetime {h} exceeds horizon {t_m}",
                        s.joining_time
                    ),
                });
            }
            t_max = t_max.max(h);
        }
        Ok(Self {
            subjects,
            t_m,
            t_max,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.covariates.len())
    }

    pub fn observed_lifetimes(&self) -> Vec<Time> {
        self.subjects.iter().map(|s| s.observed_lifetime()).collect()
    }

    /// Inactive period `chi = t_m - joining_time - H` for subject `idx`.
    pub fn inactive_period(&self, idx: usize) -> Time {
        let s = &self.subjects[idx];
        self.t_m - s.joining_time - s.observed_lifetime()
    }

    pub fn inactive_periods(&self) -> Vec<Time> {
        (0..self.len()).map(|i| self.inactive_period(i)).collect()
    }

    /// New dataset over the given subject indices, sharing this horizon.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        Self::new(subjects, self.t_m)
    }

    pub fn read_csv(path: impl AsRef<Path>, t_m: Time) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, t_m, &path.display().to_string())
    }

    pub fn from_reader<R: Read>(reader: R, t_m: Time, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < FIXED_COLUMNS.len()
            || headers.iter().zip(FIXED_COLUMNS).any(|(h, want)| h != want)
        {
            return Err(Error::Parse {
                path: source.to_string(),
                line: 1,
                message: format!("header must start with {}", FIXED_COLUMNS.join(",")),
            });
        }
        let mut subjects = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let line = row as u64 + 2;
            let perr = |message: String| Error::Parse {
                path: source.to_string(),
                line,
                message,
            };
            let id = record[0].to_string();
            let joining_time = parse_time(&record[1]).map_err(&perr)?;
            let inter_event_times = if record[2].is_empty() {
                Vec::new()
            } else {
                record[2]
                    .split(';')
                    .map(|tok| parse_time(tok.trim()))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(&perr)?
            };
            let termination_flags = match &record[3] {
                "" => None,
                "0" | "1" => {
                    let terminal = &record[3] == "1";
                    if terminal && inter_event_times.is_empty() {
                        return Err(perr("termination flag set on a subject with no events".into()));
                    }
                    let mut flags = vec![false; inter_event_times.len()];
                    if let Some(last) = flags.last_mut() {
                        *last = terminal;
                    }
                    Some(flags)
                }
                other => return Err(perr(format!("termination_flag must be 0, 1 or empty, got `{other}`"))),
            };
            let true_lifetime = match &record[4] {
                "" => None,
                v => Some(parse_time(v).map_err(&perr)?),
            };
            let covariates = record
                .iter()
                .skip(FIXED_COLUMNS.len())
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| perr(format!("covariate `{v}` is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            subjects.push(SubjectRecord {
                id,
                covariates,
                inter_event_times,
                event_covariates: None,
                joining_time,
                termination_flags,
                true_lifetime,
            });
        }
        Self::new(subjects, t_m)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_writer(file)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((0..self.n_covariates()).map(|i| format!("cov_{i}")));
        wtr.write_record(&header)?;
        for s in &self.subjects {
            let mut row = vec![
                s.id.clone(),
                s.joining_time.to_string(),
                s.inter_event_times
                    .iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                match s.last_termination_flag() {
                    None => String::new(),
                    Some(true) => "1".into(),
                    Some(false) => "0".into(),
                },
                s.true_lifetime.map(|t| t.to_string()).unwrap_or_default(),
            ];
            // `{:?}` on f64 is the shortest representation that round-trips.
            row.extend(s.covariates.iter().map(|x| format!("{x:?}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn parse_time(tok: &str) -> std::result::Result<Time, String> {
    tok.parse::<Time>()
        .map_err(|_| format!("`{tok}` is not a nonnegative integer time"))
}

/// Reads a `id,label` CSV as written by [`write_labels`].
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let label = record
            .get(1)
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: row as u64 + 2,
                message: "label must be a nonnegative integer".into(),
            })?;
        out.push((record[0].to_string(), label));
    }
    Ok(out)
}

pub fn write_labels<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, usize)>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["id", "label"])?;
    for (id, label) in rows {
        wtr.write_record([id, &label.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(times: &[Time]) -> SubjectRecord {
        SubjectRecord::new("s", vec![0.0], times.to_vec())
    }

    #[test]
    fn observed_lifetime_is_sum_of_gaps() {
        assert_eq!(subject(&[2, 3, 4]).observed_lifetime(), 9);
        assert_eq!(subject(&[]).observed_lifetime(), 0);
    }

    #[test]
    fn event_count_uses_prefix_sums() {
        let mut s = subject(&[2, 3, 4]);
        s.joining_time = 10;
        assert_eq!(s.event_count(9), 0);
        assert_eq!(s.event_count(11), 0);
        assert_eq!(s.event_count(12), 1);
        assert_eq!(s.event_count(15), 2);
        assert_eq!(s.event_count(100), 3);
    }

    #[test]
    fn inactive_period_and_t_max() {
        let mut a = subject(&[3, 2]);
        a.joining_time = 1;
        let b = subject(&[7]);
        let data = Dataset::new(vec![a, b], 10).unwrap();
        assert_eq!(data.t_max, 7);
        assert_eq!(data.inactive_period(0), 4);
        assert_eq!(data.inactive_period(1), 3);
    }

    #[test]
    fn rejects_subject_past_horizon() {
        let mut s = subject(&[6]);
        s.joining_time = 5;
        assert!(matches!(
            Dataset::new(vec![s], 10),
            Err(Error::InvalidSubject { .. })
        ));
    }

    #[test]
    fn rejects_early_termination_flag() {
        let mut s = subject(&[1, 2]);
        s.termination_flags = Some(vec![true, false]);
        assert!(s.validate().is_err());
        s.termination_flags = Some(vec![false, true]);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let mut a = subject(&[3, 0, 4]);
        a.id = "a".into();
        a.covariates = vec![0.1, -2.5];
        a.termination_flags = Some(vec![false, false, true]);
        a.true_lifetime = Some(7);
        let mut b = subject(&[5]);
        b.id = "b".into();
        b.covariates = vec![1.0 / 3.0, 1e-300];
        b.joining_time = 2;
        let data = Dataset::new(vec![a, b], 20).unwrap();
        let mut buf = Vec::new();
        data.to_writer(&mut buf).unwrap();
        let back = Dataset::from_reader(buf.as_slice(), 20, "mem").unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_rejects_fractional_times() {
        let text = "id,joining_time,inter_event_times,termination_flag,true_lifetime,cov_0\n\
                    a,0,2.5,1,,0.0\n";
        let err = Dataset::from_reader(text.as_bytes(), 10, "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn csv_requires_header() {
        let text = "a,0,2,1,,0.0\n";
        assert!(Dataset::from_reader(text.as_bytes(), 10, "mem").is_err());
    }
}
