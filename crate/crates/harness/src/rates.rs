//! Expected event rate of a repeat-until-success sequence: link stages with
//! optional timeouts, followed by steps that may reject the try.

use qnet_sim::protocol::{TeleportMode, Teleportation};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStage {
    pub success_probability: f64,
    /// Attempt limit after which the whole try restarts.
    pub timeout: Option<u64>,
    /// A memory is rephased for as long as this stage took.
    pub rephase: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostStep {
    pub duration_s: f64,
    /// Probability that the try continues after this step.
    pub pass_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub attempt_period_s: f64,
    pub links: Vec<LinkStage>,
    /// Charge-resonance checks and phase stabilization at the start of a try.
    pub start_overhead_s: f64,
    /// Stabilization before every link stage after the first.
    pub between_links_s: f64,
    pub steps: Vec<PostStep>,
}

impl RateModel {
    /// Rate model of the teleportation sequence in `mode`.
    pub fn teleportation(tp: &Teleportation, mode: TeleportMode) -> Result<Self, HarnessError> {
        let cfg = tp.config();
        let t = &cfg.timing;
        let charlie = tp.charlie_accept_probability(mode)?;
        Ok(Self {
            attempt_period_s: t.attempt_period_s,
            links: vec![
                LinkStage {
                    success_probability: tp.links()[0].success_probability(),
                    timeout: None,
                    rephase: false,
                },
                LinkStage {
                    success_probability: tp.links()[1].success_probability(),
                    timeout: Some(cfg.timeout),
                    rephase: true,
                },
            ],
            start_overhead_s: t.start_overhead_s,
            between_links_s: t.mid_stabilization_s,
            steps: vec![
                PostStep {
                    duration_s: t.bob_bsm_s,
                    pass_probability: tp.bob_accept_probability(),
                },
                PostStep {
                    duration_s: t.charlie_bsm_s,
                    pass_probability: charlie,
                },
            ],
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let durations = [
            self.attempt_period_s,
            self.start_overhead_s,
            self.between_links_s,
        ];
        if !(self.attempt_period_s > 0.0)
            || durations
                .iter()
                .chain(self.steps.iter().map(|s| &s.duration_s))
                .any(|d| !(d.is_finite() && *d >= 0.0))
        {
            return Err(HarnessError::Invalid(
                "durations must be finite and non-negative, the period positive".into(),
            ));
        }
        let probs = self
            .links
            .iter()
            .map(|l| l.success_probability)
            .chain(self.steps.iter().map(|s| s.pass_probability));
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(HarnessError::Invalid(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        if self.links.iter().any(|l| l.timeout == Some(0)) {
            return Err(HarnessError::Invalid(
                "timeouts must allow at least one attempt".into(),
            ));
        }
        Ok(())
    }

    /// Mean duration of one try and the probability that it yields an event.
    pub fn try_statistics(&self) -> Result<(f64, f64), HarnessError> {
        self.validate()?;
        let mut reach = 1.0;
        let mut duration = self.start_overhead_s;
        for (k, link) in self.links.iter().enumerate() {
            let p = link.success_probability;
            if p == 0.0 {
                return Err(HarnessError::ZeroSuccess);
            }
            if k > 0 {
                duration += reach * self.between_links_s;
            }
            let (mean_attempts, success, mean_success_attempts) = match link.timeout {
                None => (1.0 / p, 1.0, 1.0 / p),
                Some(t) => {
                    let t = t as f64;
                    let survive = (1.0 - p).powf(t);
                    let success = 1.0 - survive;
                    // E[N; N ≤ T] for a geometric N.
                    let partial = (1.0 - survive * (1.0 + t * p)) / p;
                    (success / p, success, partial / success)
                }
            };
            duration += reach * mean_attempts * self.attempt_period_s;
            reach *= success;
            if link.rephase {
                duration += reach * mean_success_attempts * self.attempt_period_s;
            }
        }
        for step in &self.steps {
            duration += reach * step.duration_s;
            reach *= step.pass_probability;
        }
        Ok((duration, reach))
    }
}

/// Events per second.
pub fn estimate_rate(model: &RateModel) -> Result<f64, HarnessError> {
    let (duration, success) = model.try_statistics()?;
    Ok(success / duration)
}
