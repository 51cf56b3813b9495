use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sweep::{ResultRow, RESULT_HEADER};

pub const SUMMARY_HEADER: [&str; 6] = ["model", "s", "n", "mean_ms", "sem_ms", "runs"];

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("no completed runs for model={model} s={s} n={n}")]
    EmptyCell { model: String, s: usize, n: usize },
    #[error("results header {found:?} does not match {expected:?}")]
    Header {
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub s: usize,
    pub n: usize,
    pub mean_ms: f64,
    /// Standard error of the mean (sample standard deviation over √runs).
    pub sem_ms: f64,
    pub runs: usize,
}

/// Mean and standard error of `wall_ms` per `(model, s, n)`, aborted runs
/// excluded. Cells are ordered by model, then `s`, then `n`.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>, SummaryError> {
    let mut cells: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let cell = cells.entry((r.model.clone(), r.s, r.n)).or_default();
        if !r.aborted() {
            cell.push(r.wall_ms);
        }
    }
    cells
        .into_iter()
        .map(|((model, s, n), times)| {
            if times.is_empty() {
                return Err(SummaryError::EmptyCell { model, s, n });
            }
            let (mean_ms, sem_ms) = mean_sem(&times);
            Ok(SummaryRow {
                model,
                s,
                n,
                mean_ms,
                sem_ms,
                runs: times.len(),
            })
        })
        .collect()
}

/// A single sample has no spread estimate; its SEM is reported as 0.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>, SummaryError> {
    let mut r = csv::Reader::from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != RESULT_HEADER {
        return Err(SummaryError::Header {
            found,
            expected: RESULT_HEADER.iter().map(|s| s.to_string()).collect(),
        });
    }
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(Into::into)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), SummaryError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: usize, n: usize, seed: u64, wall_ms: f64) -> ResultRow {
        ResultRow {
            model: "cultural".into(),
            s,
            n,
            seed,
            steps: 10,
            wall_ms,
            digest: "00".into(),
        }
    }

    #[test]
    fn identical_times_have_zero_sem() {
        assert_eq!(mean_sem(&[7.0, 7.0, 7.0]), (7.0, 0.0));
    }

    #[test]
    fn forced_arithmetic() {
        let (mean, sem) = mean_sem(&[10.0, 10.0, 10.0, 10.0, 20.0]);
        assert_eq!(mean, 12.0);
        assert!((sem - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_row_per_cell() {
        let mut rows = Vec::new();
        for s in [10, 50, 100] {
            for n in 1..=2 {
                for seed in 0..5 {
                    rows.push(row(s, n, seed, (s * n) as f64));
                }
            }
        }
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.len(), 3 * 2);
        assert!(summary.iter().all(|r| r.runs == 5 && r.sem_ms == 0.0));
        assert_eq!((summary[0].s, summary[0].n), (10, 1));
        assert_eq!((summary[1].s, summary[1].n), (10, 2));
    }

    #[test]
    fn aborted_runs_are_excluded_and_empty_cells_reported() {
        let rows = vec![row(10, 1, 0, 5.0), row(10, 1, 1, -1.0), row(10, 2, 0, -1.0)];
        match summarize(&rows) {
            Err(SummaryError::EmptyCell { s: 10, n: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let summary = summarize(&rows[..2]).unwrap();
        assert_eq!(summary[0].runs, 1);
        assert_eq!(summary[0].mean_ms, 5.0);
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_summary(
            &summarize(&[row(10, 1, 0, 1.5), row(10, 1, 1, 2.5)]).unwrap(),
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("model,s,n,mean_ms,sem_ms,runs\ncultural,10,1,2.0,0.5,2\n"),
            "{text}"
        );

        let results = "model,s,n,seed,steps,wall_ms,digest\ncultural,10,1,1,100,2.5,00ff\n";
        let rows = read_results(results.as_bytes()).unwrap();
        assert_eq!(rows[0].wall_ms, 2.5);
        assert!(read_results("model,s\n".as_bytes()).is_err());
    }
}
