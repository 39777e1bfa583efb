// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer logistic probes and Concept Activation Vectors.
//!
//! A probe is an L2-regularised logistic regression fitted on last-token
//! hidden states: label 1 for inputs containing the concept, 0 for the
//! stripped counterparts. Embeddings are used as-is, without
//! standardisation, so that the probe's weight direction (the CAV) lives in
//! the model's own coordinates and can be added back into the residual
//! stream.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comments::ConceptKind;
use crate::dataset::{split, SplitSpec};
use crate::error::{Error, Result};

/// Smallest value [`predict`] returns.
pub const PROB_FLOOR: f64 = f64::MIN_POSITIVE;
/// Largest value [`predict`] returns.
pub const PROB_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

/// A fitted linear concept classifier for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub concept: ConceptKind,
    /// 1-based layer index; 0 when not tied to a layer.
    pub layer: usize,
    pub w: Vec<f64>,
    pub b: f64,
    /// Accuracy on the held-out test set. [`train_probe`] fills in training
    /// accuracy until the probe is evaluated.
    pub test_accuracy: f64,
    /// Training records (positive/negative pairs) the probe saw.
    pub train_size: usize,
    /// Whether the optimiser reached its gradient tolerance.
    #[serde(default = "yes")]
    pub converged: bool,
}

fn yes() -> bool {
    true
}

impl Probe {
    /// A probe from explicit parameters.
    pub fn from_parts(
        concept: ConceptKind,
        layer: usize,
        w: Vec<f64>,
        b: f64,
        test_accuracy: f64,
    ) -> Self {
        Probe {
            concept,
            layer,
            w,
            b,
            test_accuracy,
            train_size: 0,
            converged: true,
        }
    }

    /// `w . e + b`.
    pub fn logit(&self, e: &[f64]) -> Result<f64> {
        check_dim(self.w.len(), e.len())?;
        Ok(dot(&self.w, e) + self.b)
    }

    /// The probe with `(-w, -b)`: predicts the complement.
    pub fn negated(&self) -> Probe {
        Probe {
            w: self.w.iter().map(|v| -v).collect(),
            b: -self.b,
            ..self.clone()
        }
    }
}

/// Optimiser settings for [`train_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// L2 strength on `w`; `None` means `1 / n_train` (unit inverse
    /// regularisation on the summed loss).
    pub lambda: Option<f64>,
    /// Stop once the gradient's infinity norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lambda: None,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Logistic function, computed without overflow and kept inside the open
/// interval `(0, 1)`: results that would round to 0 or 1 are clamped to
/// [`PROB_FLOOR`] / [`PROB_CEIL`].
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

/// `ln(p / (1 - p))`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Concept probability `sigmoid(w . e + b)`.
pub fn predict(probe: &Probe, e: &[f64]) -> Result<f64> {
    Ok(sigmoid(probe.logit(e)?))
}

/// Fit a logistic probe by damped Newton iterations from `w = 0, b = 0`.
///
/// Minimises mean log-loss plus `lambda / 2 * |w|^2` (the intercept is not
/// penalised). The returned probe has `layer = 0`, `concept = Comment`,
/// `train_size = min(|pos|, |neg|)` and training accuracy in
/// `test_accuracy`; callers overwrite these.
pub fn train_probe(pos: &[Vec<f64>], neg: &[Vec<f64>], opts: &TrainOptions) -> Result<Probe> {
    if pos.is_empty() {
        return Err(Error::Empty("positive examples"));
    }
    if neg.is_empty() {
        return Err(Error::Empty("negative examples"));
    }
    let d = pos[0].len();
    for x in pos.iter().chain(neg) {
        check_dim(d, x.len())?;
    }
    let xs: Vec<(&[f64], f64)> = pos
        .iter()
        .map(|x| (x.as_slice(), 1.0))
        .chain(neg.iter().map(|x| (x.as_slice(), 0.0)))
        .collect();
    let n = xs.len() as f64;
    let lambda = opts.lambda.unwrap_or(1.0 / n);
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let p = d + 1;

    let objective = |theta: &[f64]| -> f64 {
        let (w, b) = theta.split_at(d);
        let loss: f64 = xs
            .iter()
            .map(|(x, y)| {
                let z = dot(w, x) + b[0];
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n;
        loss + 0.5 * lambda * dot(w, w)
    };

    let mut theta = vec![0.0; p];
    let mut converged = false;
    let mut f = objective(&theta);
    for _ in 0..opts.max_iter {
        let (w, b) = theta.split_at(d);
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for (x, y) in &xs {
            let z = dot(w, x) + b[0];
            let s = sigmoid_unclamped(z);
            let r = s - y;
            let c = s * (1.0 - s);
            for i in 0..d {
                grad[i] += r * x[i];
            }
            grad[d] += r;
            for i in 0..p {
                let xi = if i < d { x[i] } else { 1.0 };
                let ci = c * xi;
                if ci == 0.0 {
                    continue;
                }
                let row = &mut hess[i * p..i * p + i + 1];
                for (j, h) in row.iter_mut().enumerate() {
                    let xj = if j < d { x[j] } else { 1.0 };
                    *h += ci * xj;
                }
            }
        }
        for g in grad.iter_mut() {
            *g /= n;
        }
        for i in 0..d {
            grad[i] += lambda * theta[i];
        }
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) <= opts.tol {
            converged = true;
            break;
        }
        for i in 0..p {
            for j in 0..=i {
                hess[i * p + j] /= n;
            }
            if i < d {
                hess[i * p + i] += lambda;
            }
        }
        let step = solve_spd(&hess, &grad, p);
        let slope = dot(&grad, &step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(th, s)| th - t * s).collect();
            let ft = objective(&trial);
            if ft <= f - 1e-4 * t * slope {
                theta = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let (w, b) = theta.split_at(d);
    let mut probe = Probe {
        concept: ConceptKind::Comment,
        layer: 0,
        w: w.to_vec(),
        b: b[0],
        test_accuracy: 0.0,
        train_size: pos.len().min(neg.len()),
        converged,
    };
    let train: Vec<(Vec<f64>, bool)> = pos
        .iter()
        .map(|x| (x.clone(), true))
        .chain(neg.iter().map(|x| (x.clone(), false)))
        .collect();
    probe.test_accuracy = accuracy(&probe, &train)?;
    Ok(probe)
}

fn sigmoid_unclamped(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Solve `H x = g` for symmetric positive semi-definite `H` (lower triangle
/// filled), adding diagonal jitter until the Cholesky factorisation succeeds.
fn solve_spd(h: &[f64], g: &[f64], p: usize) -> Vec<f64> {
    let scale = (0..p)
        .map(|i| h[i * p + i].abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut jitter = 0.0;
    loop {
        if let Some(l) = cholesky(h, p, jitter) {
            let mut y = vec![0.0; p];
            for i in 0..p {
                let s: f64 = (0..i).map(|k| l[i * p + k] * y[k]).sum();
                y[i] = (g[i] - s) / l[i * p + i];
            }
            let mut x = vec![0.0; p];
            for i in (0..p).rev() {
                let s: f64 = (i + 1..p).map(|k| l[k * p + i] * x[k]).sum();
                x[i] = (y[i] - s) / l[i * p + i];
            }
            return x;
        }
        jitter = if jitter == 0.0 {
            scale * 1e-12
        } else {
            jitter * 10.0
        };
    }
}

fn cholesky(h: &[f64], p: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * p + k] * l[j * p + k]).sum();
            if i == j {
                let v = h[i * p + i] + jitter - s;
                if !v.is_finite() || v <= 0.0 {
                    return None;
                }
                l[i * p + i] = v.sqrt();
            } else {
                l[i * p + j] = (h[i * p + j] - s) / l[j * p + j];
            }
        }
    }
    Some(l)
}

/// Fraction of `examples` where `predict >= 0.5` agrees with the label.
pub fn accuracy(probe: &Probe, examples: &[(Vec<f64>, bool)]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for (x, label) in examples {
        if (predict(probe, x)? >= 0.5) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Positive and negative embeddings of the same records at one layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerPairs {
    pub ids: Vec<String>,
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
}

impl LayerPairs {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One point of an accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub train_size: usize,
    pub test_accuracy: f64,
}

/// Test accuracy against training-set size for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub layer: usize,
    /// Record ids of the fixed test set, shared by every point.
    pub test_ids: Vec<String>,
    pub points: Vec<CurvePoint>,
}

fn labeled(records: &[usize], data: &LayerPairs) -> Vec<(Vec<f64>, bool)> {
    records
        .iter()
        .flat_map(|&i| [(data.pos[i].clone(), true), (data.neg[i].clone(), false)])
        .collect()
}

/// Train on `spec.train_size` records and score on the fixed test set.
pub fn train_layer_probe(
    concept: ConceptKind,
    layer: usize,
    data: &LayerPairs,
    spec: &SplitSpec,
    opts: &TrainOptions,
) -> Result<(Probe, Vec<String>)> {
    if data.pos.len() != data.len() || data.neg.len() != data.len() {
        return Err(Error::Invariant("layer pairs have ragged columns".into()));
    }
    let index: Vec<usize> = (0..data.len()).collect();
    let (train, test) = split(&index, spec)?;
    let pos: Vec<Vec<f64>> = train.iter().map(|&i| data.pos[i].clone()).collect();
    let neg: Vec<Vec<f64>> = train.iter().map(|&i| data.neg[i].clone()).collect();
    let mut probe = train_probe(&pos, &neg, opts)?;
    probe.concept = concept;
    probe.layer = layer;
    probe.train_size = spec.train_size;
    probe.test_accuracy = accuracy(&probe, &labeled(&test, data))?;
    let test_ids = test.iter().map(|&i| data.ids[i].clone()).collect();
    Ok((probe, test_ids))
}

/// Accuracy over the eight-point train-size grid with a fixed test set of
/// `test_size` records.
pub fn accuracy_curve(
    layer: usize,
    data: &LayerPairs,
    test_size: usize,
    seed: u64,
    opts: &TrainOptions,
) -> Result<AccuracyCurve> {
    let required = 2 * test_size;
    if data.len() < required {
        return Err(Error::InsufficientData {
            required,
            available: data.len(),
        });
    }
    let mut test_ids = Vec::new();
    let mut points = Vec::new();
    for spec in SplitSpec::grid(test_size, seed)? {
        let (probe, ids) = train_layer_probe(ConceptKind::Comment, layer, data, &spec, opts)?;
        test_ids = ids;
        points.push(CurvePoint {
            train_size: spec.train_size,
            test_accuracy: probe.test_accuracy,
        });
    }
    Ok(AccuracyCurve {
        layer,
        test_ids,
        points,
    })
}

/// Unit-length concept direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cav(Vec<f64>);

impl Cav {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `w / |w|`.
pub fn cav(probe: &Probe) -> Result<Cav> {
    let n = norm(&probe.w);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroWeight);
    }
    Ok(Cav(probe.w.iter().map(|v| v / n).collect()))
}

/// Median; mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("accuracy table"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Identifies one per-layer accuracy table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccuracyKey {
    pub concept: ConceptKind,
    pub model_id: String,
}

/// Minimum over tables of each table's median per-layer accuracy.
pub fn dynamic_threshold(tables: &BTreeMap<AccuracyKey, Vec<f64>>) -> Result<f64> {
    if tables.is_empty() {
        return Err(Error::Empty("accuracy tables"));
    }
    let mut min = f64::INFINITY;
    for values in tables.values() {
        min = min.min(median(values)?);
    }
    Ok(min)
}

/// File name of a probe inside a store directory.
pub fn probe_file_name(concept: ConceptKind, layer: usize) -> String {
    format!("{concept}_layer{layer:03}.json")
}

pub fn save_probe(dir: &Path, probe: &Probe) -> Result<PathBuf> {
    let path = dir.join(probe_file_name(probe.concept, probe.layer));
    crate::io::write_json(&path, probe)?;
    Ok(path)
}

/// All probes in one store directory (non-recursive), sorted by
/// `(concept, layer)`.
pub fn load_probes(dir: &Path) -> Result<Vec<Probe>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.contains("_layer"))
        })
        .collect();
    paths.sort();
    let mut probes = Vec::with_capacity(paths.len());
    for p in paths {
        probes.push(crate::io::read_json::<Probe>(&p)?);
    }
    probes.sort_by_key(|p| (p.concept, p.layer));
    Ok(probes)
}

/// Probes for one concept keyed by layer.
pub fn load_concept_probes(dir: &Path, concept: ConceptKind) -> Result<BTreeMap<usize, Probe>> {
    let map: BTreeMap<usize, Probe> = load_probes(dir)?
        .into_iter()
        .filter(|p| p.concept == concept)
        .map(|p| (p.layer, p))
        .collect();
    if map.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no {concept} probes in {}",
            dir.display()
        )));
    }
    Ok(map)
}

/// Per-layer accuracy tables for every probe store at or below `root`,
/// keyed by `(concept, store path)`.
pub fn accuracy_tables(root: &Path) -> Result<BTreeMap<AccuracyKey, Vec<f64>>> {
    let mut tables: BTreeMap<AccuracyKey, Vec<f64>> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if !entry.file_type().is_dir() {
            continue;
        }
        let probes = load_probes(entry.path())?;
        for p in probes {
            tables
                .entry(AccuracyKey {
                    concept: p.concept,
                    model_id: entry.path().display().to_string(),
                })
                .or_default()
                .push(p.test_accuracy);
        }
    }
    Ok(tables)
}
