// SPDX-License-Identifier: MIT OR Apache-2.0

//! Browser bindings for the static demo page in `www/`.
//!
//! Each export takes plain strings and numbers and returns a JSON string,
//! so the page needs no generated TypeScript types.

use std::collections::BTreeMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use commentcav::comments::{concept_groups, scan_comments, strip_concept, CommentSpan};
use commentcav::metrics::{extract_identifiers, Metric};
use commentcav::probes::{logit, predict};
use commentcav::steering::{epsilon, perturb};
use commentcav::{ConceptKind, Probe, SteeringDirection};

#[derive(Serialize)]
struct Group {
    kind: ConceptKind,
    line_start: usize,
    line_end: usize,
    spans: usize,
}

#[derive(Serialize)]
struct Analysis {
    spans: Vec<CommentSpan>,
    groups: Vec<Group>,
    stripped: BTreeMap<ConceptKind, String>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Comments, concept groups and the four stripped variants of `source`.
#[wasm_bindgen]
pub fn analyze(source: &str) -> Result<String, JsValue> {
    let groups = concept_groups(source)
        .into_iter()
        .map(|g| Group {
            kind: g.kind,
            line_start: g.spans[0].line_start,
            line_end: g.spans[g.spans.len() - 1].line_end,
            spans: g.spans.len(),
        })
        .collect();
    let stripped = ConceptKind::ALL
        .into_iter()
        .map(|k| (k, strip_concept(source, k)))
        .collect();
    to_json(&Analysis {
        spans: scan_comments(source),
        groups,
        stripped,
    })
}

#[derive(Serialize)]
struct SteerResult {
    logit: f64,
    p: f64,
    target_logit: f64,
    /// Accuracy strictly above the threshold.
    qualifies: bool,
    epsilon: Option<f64>,
    moved: Option<Vec<f64>>,
    p_after: Option<f64>,
    note: Option<String>,
}

/// One steering step on a hand-entered probe and hidden state.
#[wasm_bindgen]
pub fn steer(
    w: Vec<f64>,
    b: f64,
    e: Vec<f64>,
    direction: &str,
    target: f64,
    accuracy: f64,
    threshold: f64,
) -> Result<String, JsValue> {
    let direction: SteeringDirection = direction.parse().map_err(js_err)?;
    if !(target > 0.0 && target < 1.0) {
        return Err(js_err("target probability must lie in (0, 1)"));
    }
    let probe = Probe::from_parts(ConceptKind::Comment, 1, w, b, accuracy);
    let z = probe.logit(&e).map_err(js_err)?;
    let mut out = SteerResult {
        logit: z,
        p: predict(&probe, &e).map_err(js_err)?,
        target_logit: logit(target),
        qualifies: accuracy > threshold,
        epsilon: None,
        moved: None,
        p_after: None,
        note: None,
    };
    if !out.qualifies {
        out.note =
            Some("layer accuracy does not exceed the threshold; state passes unchanged".into());
        return to_json(&out);
    }
    match epsilon(&probe, &e, target, direction) {
        Ok(eps) => {
            let moved = perturb(&probe, &e, target, direction).map_err(js_err)?;
            out.p_after = Some(predict(&probe, &moved).map_err(js_err)?);
            out.epsilon = Some(eps);
            out.moved = Some(moved);
        }
        Err(err) => out.note = Some(format!("{err}; state passes unchanged")),
    }
    to_json(&out)
}

#[derive(Serialize)]
struct Scores {
    scores: BTreeMap<Metric, f64>,
    candidate_ids: Vec<String>,
    reference_ids: Vec<String>,
}

/// Every metric for one candidate against one reference.
#[wasm_bindgen]
pub fn score(candidate: &str, reference: &str) -> Result<String, JsValue> {
    to_json(&Scores {
        scores: Metric::ALL
            .into_iter()
            .map(|m| (m, m.score(candidate, reference)))
            .collect(),
        candidate_ids: extract_identifiers(candidate),
        reference_ids: extract_identifiers(reference),
    })
}
