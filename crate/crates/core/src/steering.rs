// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise concept steering.
//!
//! At each layer whose probe is accurate enough, the hidden state is moved
//! along the probe's CAV by the smallest step that puts the probe's
//! probability exactly at the target. For a linear probe the set of states
//! with `sigmoid(w . e + b) = p` is the hyperplane `w . e + b = logit(p)`,
//! and the closest point on it is the orthogonal projection:
//!
//! ```text
//! e' = e + (logit(p) - (w . e + b)) / |w|^2 * w
//! ```
//!
//! Comparisons happen in logit space. A state whose logit is within a few
//! ulps of the target logit counts as already at the target, which makes a
//! second application a no-op.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::comments::ConceptKind;
use crate::error::{Error, Result};
use crate::probes::{dot, logit, norm, Probe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SteeringDirection {
    /// Raise the concept probability.
    Toward,
    /// Lower the concept probability.
    Against,
}

impl SteeringDirection {
    /// 0.99 toward, 0.01 against.
    pub fn default_target(self) -> f64 {
        match self {
            SteeringDirection::Toward => 0.99,
            SteeringDirection::Against => 0.01,
        }
    }

    fn sign(self) -> f64 {
        match self {
            SteeringDirection::Toward => 1.0,
            SteeringDirection::Against => -1.0,
        }
    }
}

impl fmt::Display for SteeringDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SteeringDirection::Toward => "toward",
            SteeringDirection::Against => "against",
        })
    }
}

impl FromStr for SteeringDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toward" => Ok(SteeringDirection::Toward),
            "against" => Ok(SteeringDirection::Against),
            _ => Err(Error::InvalidArgument(format!("unknown direction `{s}`"))),
        }
    }
}

/// Which forward passes are steered during generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SteeringScope {
    /// The prompt pass and every decode step.
    #[default]
    AllSteps,
    /// Only the pass over the prompt.
    PromptOnly,
}

impl FromStr for SteeringScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" | "all_steps" => Ok(SteeringScope::AllSteps),
            "prompt" | "prompt_only" => Ok(SteeringScope::PromptOnly),
            _ => Err(Error::InvalidArgument(format!("unknown scope `{s}`"))),
        }
    }
}

/// Single-concept steering configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPlan {
    pub concept: ConceptKind,
    pub direction: SteeringDirection,
    pub target_p: f64,
    pub threshold_t: f64,
    pub probes: BTreeMap<usize, Probe>,
    pub scope: SteeringScope,
}

impl SteeringPlan {
    /// A plan with the direction's default target and [`SteeringScope::AllSteps`].
    pub fn new(
        concept: ConceptKind,
        direction: SteeringDirection,
        threshold_t: f64,
        probes: BTreeMap<usize, Probe>,
    ) -> Result<Self> {
        let plan = SteeringPlan {
            concept,
            direction,
            target_p: direction.default_target(),
            threshold_t,
            probes,
            scope: SteeringScope::AllSteps,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_target(mut self, target_p: f64) -> Result<Self> {
        self.target_p = target_p;
        self.validate()?;
        Ok(self)
    }

    pub fn with_scope(mut self, scope: SteeringScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_p > 0.0 && self.target_p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target_p must lie in (0, 1), got {}",
                self.target_p
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold_t) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold_t
            )));
        }
        if let Some((l, p)) = self.probes.iter().find(|(l, p)| p.layer != **l) {
            return Err(Error::Invariant(format!(
                "probe for layer {} stored under {l}",
                p.layer
            )));
        }
        Ok(())
    }

    /// Layers whose probe accuracy strictly exceeds the threshold.
    pub fn qualifying_layers(&self) -> Vec<usize> {
        self.probes
            .iter()
            .filter(|(_, p)| p.test_accuracy > self.threshold_t)
            .map(|(&l, _)| l)
            .collect()
    }
}

/// Signed gap `L - z` with `z = w . e + b`, zeroed when `z` is within
/// rounding error of `L`.
fn logit_gap(probe: &Probe, e: &[f64], target_p: f64) -> Result<f64> {
    let z = probe.logit(e)?;
    let target = logit(target_p);
    let scale = 1.0
        + probe.b.abs()
        + probe
            .w
            .iter()
            .zip(e)
            .map(|(w, x)| (w * x).abs())
            .sum::<f64>();
    let gap = target - z;
    Ok(if gap.abs() <= 1e-10 * scale { 0.0 } else { gap })
}

fn direction_holds(gap: f64, direction: SteeringDirection) -> bool {
    // Toward needs z < L (gap > 0); against needs z > L (gap < 0).
    gap * direction.sign() > 0.0
}

/// Whether `layer` passes the accuracy gate and `e` lies on the wrong side
/// of the target for the plan's direction.
pub fn should_perturb(probe: &Probe, e: &[f64], plan: &SteeringPlan, layer: usize) -> Result<bool> {
    if !plan.probes.contains_key(&layer) {
        return Err(Error::MissingProbe(layer));
    }
    if probe.test_accuracy.is_nan() || probe.test_accuracy <= plan.threshold_t {
        return Ok(false);
    }
    let gap = logit_gap(probe, e, plan.target_p)?;
    Ok(direction_holds(gap, plan.direction))
}

/// Step length along the signed unit CAV that reaches `target_p`.
///
/// Zero when `e` is already at the target; an error when reaching the
/// target would need a step against `direction`.
pub fn epsilon(
    probe: &Probe,
    e: &[f64],
    target_p: f64,
    direction: SteeringDirection,
) -> Result<f64> {
    let n = norm(&probe.w);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroWeight);
    }
    let gap = logit_gap(probe, e, target_p)?;
    if gap == 0.0 {
        return Ok(0.0);
    }
    if !direction_holds(gap, direction) {
        return Err(Error::DirectionViolated {
            logit: probe.logit(e)?,
            target_logit: logit(target_p),
        });
    }
    Ok(gap.abs() / n)
}

/// `e + epsilon * v` with `v = ±w / |w|`.
pub fn perturb(
    probe: &Probe,
    e: &[f64],
    target_p: f64,
    direction: SteeringDirection,
) -> Result<Vec<f64>> {
    let eps = epsilon(probe, e, target_p, direction)?;
    if eps == 0.0 {
        return Ok(e.to_vec());
    }
    let n = norm(&probe.w);
    let scale = direction.sign() * eps / n;
    let mut out: Vec<f64> = e.iter().zip(&probe.w).map(|(x, w)| x + scale * w).collect();
    // One Newton correction absorbs the rounding in the step itself.
    let residual = logit(target_p) - (dot(&probe.w, &out) + probe.b);
    let ww = n * n;
    for (o, w) in out.iter_mut().zip(&probe.w) {
        *o += residual / ww * w;
    }
    Ok(out)
}

/// The state passed to the next layer: perturbed when the layer qualifies
/// and the direction condition holds, otherwise `e` unchanged.
pub fn steer_layer_pass(plan: &SteeringPlan, layer: usize, e: &[f64]) -> Vec<f64> {
    let Some(probe) = plan.probes.get(&layer) else {
        return e.to_vec();
    };
    match should_perturb(probe, e, plan, layer) {
        Ok(true) => perturb(probe, e, plan.target_p, plan.direction).unwrap_or_else(|_| e.to_vec()),
        _ => e.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::predict;

    fn probe(w: Vec<f64>, b: f64, acc: f64, layer: usize) -> Probe {
        Probe::from_parts(ConceptKind::Comment, layer, w, b, acc)
    }

    fn plan(direction: SteeringDirection, p: Probe) -> SteeringPlan {
        let mut probes = BTreeMap::new();
        probes.insert(p.layer, p);
        SteeringPlan::new(ConceptKind::Comment, direction, 0.84, probes).unwrap()
    }

    /// A point whose probability under `w = (1, 0), b = 0` is `p`.
    fn at_prob(p: f64) -> Vec<f64> {
        vec![logit(p), 0.0]
    }

    #[test]
    fn gate_and_direction() {
        let pr = probe(vec![1.0, 0.0], 0.0, 0.90, 2);
        let against = plan(SteeringDirection::Against, pr.clone());
        assert!(should_perturb(&pr, &at_prob(0.95), &against, 2).unwrap());

        let toward = plan(SteeringDirection::Toward, pr.clone());
        assert!(!should_perturb(&pr, &at_prob(0.995), &toward, 2).unwrap());

        let weak = probe(vec![1.0, 0.0], 0.0, 0.80, 2);
        let p = plan(SteeringDirection::Against, weak.clone());
        assert!(!should_perturb(&weak, &at_prob(0.95), &p, 2).unwrap());
        assert!(matches!(
            should_perturb(&pr, &at_prob(0.5), &against, 9),
            Err(Error::MissingProbe(9))
        ));
    }

    #[test]
    fn accuracy_gate_is_strict() {
        let pr = probe(vec![1.0, 0.0], 0.0, 0.84, 1);
        let p = plan(SteeringDirection::Against, pr.clone());
        assert!(p.qualifying_layers().is_empty());
        assert!(!should_perturb(&pr, &at_prob(0.95), &p, 1).unwrap());
    }

    #[test]
    fn epsilon_examples() {
        let pr = probe(vec![3.0, 4.0], 0.0, 1.0, 1);
        let eps = epsilon(&pr, &[0.0, 0.0], 0.99, SteeringDirection::Toward).unwrap();
        assert!((eps - 99f64.ln() / 5.0).abs() < 1e-12);
        assert!((eps - 0.919024).abs() < 1e-6);

        let unit = probe(vec![1.0, 0.0], 0.0, 1.0, 1);
        for d in [SteeringDirection::Toward, SteeringDirection::Against] {
            assert_eq!(epsilon(&unit, &at_prob(0.01), 0.01, d).unwrap(), 0.0);
        }
        let zero = probe(vec![0.0, 0.0], 0.0, 1.0, 1);
        assert!(matches!(
            epsilon(&zero, &[1.0, 1.0], 0.5, SteeringDirection::Toward),
            Err(Error::ZeroWeight)
        ));
        assert!(matches!(
            epsilon(&unit, &at_prob(0.5), 0.01, SteeringDirection::Toward),
            Err(Error::DirectionViolated { .. })
        ));
    }

    #[test]
    fn perturb_reaches_target_along_w() {
        let pr = probe(vec![0.5, -2.0, 1.0], 0.3, 1.0, 1);
        let e = vec![4.0, -3.0, 2.0];
        assert!(predict(&pr, &e).unwrap() > 0.999);
        let out = perturb(&pr, &e, 0.01, SteeringDirection::Against).unwrap();
        assert!((predict(&pr, &out).unwrap() - 0.01).abs() < 1e-6);
        let delta: Vec<f64> = out.iter().zip(&e).map(|(a, b)| a - b).collect();
        // Parallel to w: cross-ratios agree.
        let k = delta[0] / pr.w[0];
        for (d, w) in delta.iter().zip(&pr.w) {
            assert!((d - k * w).abs() < 1e-12);
        }
        let again = perturb(&pr, &out, 0.01, SteeringDirection::Against).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn layer_pass_identity_cases() {
        let weak = probe(vec![1.0, 0.0], 0.0, 0.5, 1);
        let p = plan(SteeringDirection::Against, weak);
        let e = at_prob(0.9);
        assert_eq!(steer_layer_pass(&p, 1, &e), e);
        assert_eq!(steer_layer_pass(&p, 4, &e), e);
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "toward".parse::<SteeringDirection>().unwrap(),
            SteeringDirection::Toward
        );
        assert_eq!(
            "AGAINST".parse::<SteeringDirection>().unwrap(),
            SteeringDirection::Against
        );
        assert_eq!(
            "prompt".parse::<SteeringScope>().unwrap(),
            SteeringScope::PromptOnly
        );
        assert!("sideways".parse::<SteeringDirection>().is_err());
    }
}
