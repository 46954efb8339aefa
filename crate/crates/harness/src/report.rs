use crate::HarnessError;
use nmips_core::datagen::write_atomic;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const RESULT_HEADER: &str = "family,task_id,params,seed,mse,best_cost,evals,generations,wall_s,transfer,expression";

/// One (task, seed) outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub family: String,
    pub task_id: usize,
    /// Parameter values joined with `;`.
    pub params: String,
    pub seed: u64,
    pub mse: f64,
    pub best_cost: f64,
    pub evals: usize,
    pub generations: usize,
    pub wall_s: f64,
    pub transfer: bool,
    pub expression: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub family: String,
    pub task_id: usize,
    pub params: String,
    pub seed: u64,
    pub mse_transfer: f64,
    pub mse_no_transfer: f64,
    /// `mse_no_transfer - mse_transfer`; positive when transfer helped.
    pub delta: f64,
}

/// Mean over seeds per task, plus one `avg` row over all tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummaryRow {
    pub family: String,
    pub task_id: String,
    pub mse_transfer: f64,
    pub mse_no_transfer: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub noise_level: f64,
    /// Standard deviation of the injected noise.
    pub sigma: f64,
    pub family: String,
    pub task_id: usize,
    pub params: String,
    pub seed: u64,
    pub mse: f64,
    pub best_cost: f64,
    pub evals: usize,
    pub generations: usize,
    pub wall_s: f64,
    pub transfer: bool,
    pub expression: String,
}

pub fn format_params(params: &[f64]) -> String {
    params.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for r in rows {
            wtr.serialize(r).map_err(std::io::Error::other)?;
        }
        wtr.flush()
    })
    .map_err(|e| HarnessError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(HarnessError::runtime)?;
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

/// Pairs rows of the two arms by (task, seed).
pub fn pair_ablation(with: &[ResultRow], without: &[ResultRow]) -> Vec<AblationRow> {
    with.iter()
        .filter_map(|a| {
            let b = without.iter().find(|b| b.task_id == a.task_id && b.seed == a.seed)?;
            Some(AblationRow {
                family: a.family.clone(),
                task_id: a.task_id,
                params: a.params.clone(),
                seed: a.seed,
                mse_transfer: a.mse,
                mse_no_transfer: b.mse,
                delta: b.mse - a.mse,
            })
        })
        .collect()
}

pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<AblationSummaryRow> {
    let mut tasks: Vec<usize> = rows.iter().map(|r| r.task_id).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let mean_of = |subset: &[&AblationRow], label: String| {
        let n = subset.len().max(1) as f64;
        let with = subset.iter().map(|r| r.mse_transfer).sum::<f64>() / n;
        let without = subset.iter().map(|r| r.mse_no_transfer).sum::<f64>() / n;
        AblationSummaryRow {
            family: subset.first().map(|r| r.family.clone()).unwrap_or_default(),
            task_id: label,
            mse_transfer: with,
            mse_no_transfer: without,
            delta: without - with,
        }
    };
    let mut out: Vec<AblationSummaryRow> = tasks
        .iter()
        .map(|&k| {
            let subset: Vec<&AblationRow> = rows.iter().filter(|r| r.task_id == k).collect();
            mean_of(&subset, k.to_string())
        })
        .collect();
    let all: Vec<&AblationRow> = rows.iter().collect();
    out.push(mean_of(&all, "avg".into()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(task_id: usize, seed: u64, mse: f64, transfer: bool) -> ResultRow {
        ResultRow {
            family: "adv1d".into(),
            task_id,
            params: "0.1".into(),
            seed,
            mse,
            best_cost: 1.0,
            evals: 10,
            generations: 1,
            wall_s: 0.5,
            transfer,
            expression: "x - t".into(),
        }
    }

    #[test]
    fn header_matches_row_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&path, &[row(0, 1, 0.25, true)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), RESULT_HEADER);
        let back: Vec<ResultRow> = read_csv(&path).unwrap();
        assert_eq!(back, vec![row(0, 1, 0.25, true)]);
    }

    #[test]
    fn ablation_delta_and_average() {
        let with = vec![row(0, 1, 0.2, true), row(1, 1, 0.4, true)];
        let without = vec![row(1, 1, 0.5, false), row(0, 1, 0.1, false)];
        let paired = pair_ablation(&with, &without);
        assert_eq!(paired.len(), 2);
        assert!((paired[0].delta - (0.1 - 0.2)).abs() < 1e-15);
        let summary = summarize_ablation(&paired);
        let avg = summary.last().unwrap();
        assert_eq!(avg.task_id, "avg");
        assert!((avg.mse_transfer - 0.3).abs() < 1e-15);
        assert!((avg.mse_no_transfer - 0.3).abs() < 1e-15);
    }

    #[test]
    fn params_are_semicolon_joined() {
        assert_eq!(format_params(&[0.4, 0.002]), "0.4;0.002");
    }
}
