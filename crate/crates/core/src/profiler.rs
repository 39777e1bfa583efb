// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task-conditioned concept activation.
//!
//! Every code snippet is wrapped in every task instruction; the concept
//! probability of each prompt's last-token state is then averaged per
//! `(task, layer)` cell.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::{predict, Probe};
use crate::tinylm::Model;

/// Per-layer probabilities of one prompt, `None` when it was too long.
type PromptActivations = Option<Vec<(usize, f64)>>;

const BUILTIN_TASKS: &str = include_str!("../data/tasks.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub instruction: String,
}

/// The ten bundled tasks in their fixed order.
pub fn builtin_tasks() -> Vec<Task> {
    serde_json::from_str(BUILTIN_TASKS).expect("bundled task list is valid JSON")
}

/// A task list from a JSON array of `{task_id, instruction}` objects.
pub fn load_tasks(path: &Path) -> Result<Vec<Task>> {
    let tasks: Vec<Task> = crate::io::read_json(path)?;
    validate_tasks(&tasks)?;
    Ok(tasks)
}

fn validate_tasks(tasks: &[Task]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::Empty("task list"));
    }
    let mut seen = HashSet::new();
    for t in tasks {
        if !seen.insert(t.task_id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate task id `{}`",
                t.task_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub task_id: String,
    pub instruction: String,
    /// Position of the snippet in the code list.
    pub code_index: usize,
    pub code: String,
    pub rendered: String,
}

/// Instruction, a blank line, then the code in a `java` fence.
pub fn render(instruction: &str, code: &str) -> String {
    format!("{instruction}\n\n```java\n{code}\n```")
}

/// Every `(task, code)` combination, task-major.
pub fn build_grid(tasks: &[Task], codes: &[String]) -> Result<Vec<TaskPrompt>> {
    validate_tasks(tasks)?;
    if codes.is_empty() {
        return Err(Error::Empty("code list"));
    }
    Ok(tasks
        .iter()
        .flat_map(|t| {
            codes.iter().enumerate().map(move |(i, code)| TaskPrompt {
                task_id: t.task_id.clone(),
                instruction: t.instruction.clone(),
                code_index: i,
                code: code.clone(),
                rendered: render(&t.instruction, code),
            })
        })
        .collect())
}

/// Summary of one `(task, layer)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationProfile {
    /// task id → layer → stats.
    pub cells: BTreeMap<String, BTreeMap<usize, CellStats>>,
    /// Prompts per task dropped for exceeding the model context.
    pub skipped: BTreeMap<String, usize>,
}

impl ActivationProfile {
    /// `task_id,layer,mean,stddev,n` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task_id", "layer", "mean", "stddev", "n"])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (task, layers) in &self.cells {
            for (layer, c) in layers {
                w.write_record([
                    task.clone(),
                    layer.to_string(),
                    c.mean.to_string(),
                    c.stddev.to_string(),
                    c.n.to_string(),
                ])
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and population standard deviation, independent of input order.
pub fn cell_stats(values: &[f64]) -> Result<CellStats> {
    if values.is_empty() {
        return Err(Error::Empty("cell values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = pairwise_sum(&v) / n;
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    Ok(CellStats {
        mean,
        stddev: (pairwise_sum(&sq) / n).sqrt(),
        n: v.len(),
    })
}

/// Probe probabilities for every prompt, averaged per `(task, layer)`.
///
/// Prompts longer than the model context are counted in `skipped` and left
/// out of the means.
pub fn activation_profile(
    model: &Model,
    probes: &BTreeMap<usize, Probe>,
    prompts: &[TaskPrompt],
) -> Result<ActivationProfile> {
    if probes.is_empty() {
        return Err(Error::Empty("probes"));
    }
    let n_layers = model.config().n_layers;
    if let Some(&l) = probes.keys().find(|&&l| l == 0 || l > n_layers) {
        return Err(Error::InvalidArgument(format!(
            "probe layer {l} outside 1..={n_layers}"
        )));
    }
    let rows: Vec<Result<PromptActivations>> = prompts
        .par_iter()
        .map(|p| {
            let trace = match model.embed(&p.rendered) {
                Ok(t) => t,
                Err(Error::SequenceTooLong { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            probes
                .iter()
                .map(|(&l, probe)| Ok((l, predict(probe, &trace[l - 1].vector)?)))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect();

    let mut values: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for (p, row) in prompts.iter().zip(rows) {
        skipped.entry(p.task_id.clone()).or_insert(0);
        match row? {
            Some(acts) => {
                let cell = values.entry(&p.task_id).or_default();
                for (l, a) in acts {
                    cell.entry(l).or_default().push(a);
                }
            }
            None => *skipped.get_mut(&p.task_id).expect("inserted above") += 1,
        }
    }
    let mut cells = BTreeMap::new();
    for (task, layers) in values {
        let mut stats = BTreeMap::new();
        for (l, v) in layers {
            stats.insert(l, cell_stats(&v)?);
        }
        cells.insert(task.to_owned(), stats);
    }
    Ok(ActivationProfile { cells, skipped })
}
