use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adaptive-moment descent with step decay, early stopping and
/// best-iterate tracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescentSchedule {
    pub learning_rate: f64,
    /// Multiplier applied to the rate every `decay_every` steps.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub max_steps: usize,
    /// Stop once the best loss improved by less than `min_improvement`
    /// over the last `patience` steps.
    pub patience: usize,
    pub min_improvement: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for DescentSchedule {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            decay_factor: 0.5,
            decay_every: 200,
            max_steps: 1000,
            patience: 50,
            min_improvement: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl DescentSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.decay_factor > 0.0
            && self.decay_factor <= 1.0
            && self.decay_every > 0
            && self.max_steps > 0
            && self.patience > 0
            && self.min_improvement >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid descent schedule {self:?}")))
        }
    }
}

pub(crate) struct Outcome<S> {
    pub best: S,
    pub best_loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    /// No loss below the initial one within the first `patience` steps.
    pub stalled: bool,
}

/// Minimizes from `start`. `eval` returns loss and gradient at a state;
/// `retract(s, d)` moves a state along the tangent step `d`. The returned
/// state is the lowest-loss one seen, so `best_loss <= initial_loss`.
pub(crate) fn minimize<S: Clone, const N: usize>(
    start: S,
    schedule: &DescentSchedule,
    mut eval: impl FnMut(&S) -> Result<(f64, [f64; N])>,
    retract: impl Fn(&S, &[f64; N]) -> Result<S>,
) -> Result<Outcome<S>> {
    schedule.validate()?;
    let mut state = start;
    let mut m = [0.0; N];
    let mut v = [0.0; N];
    let mut best: Option<(f64, S)> = None;
    let mut best_history: Vec<f64> = Vec::with_capacity(schedule.max_steps);
    let mut initial_loss = f64::NAN;
    let mut improved_early = false;
    let mut iterations = 0;
    for step in 0..schedule.max_steps {
        let (loss, grad) = eval(&state)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid(format!("non-finite loss or gradient at step {step}")));
        }
        iterations = step + 1;
        if step == 0 {
            initial_loss = loss;
        } else if step <= schedule.patience && loss < initial_loss {
            improved_early = true;
        }
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, state.clone()));
        }
        let best_loss = best.as_ref().map(|(b, _)| *b).unwrap_or(loss);
        best_history.push(best_loss);
        if step >= schedule.patience && best_history[step - schedule.patience] - best_loss < schedule.min_improvement {
            break;
        }
        if step + 1 == schedule.max_steps {
            break;
        }
        let rate = schedule.learning_rate * schedule.decay_factor.powi((step / schedule.decay_every) as i32);
        let t = (step + 1) as i32;
        let c1 = 1.0 - schedule.beta1.powi(t);
        let c2 = 1.0 - schedule.beta2.powi(t);
        let mut delta = [0.0; N];
        for j in 0..N {
            m[j] = schedule.beta1 * m[j] + (1.0 - schedule.beta1) * grad[j];
            v[j] = schedule.beta2 * v[j] + (1.0 - schedule.beta2) * grad[j] * grad[j];
            delta[j] = -rate * (m[j] / c1) / ((v[j] / c2).sqrt() + schedule.epsilon);
        }
        state = retract(&state, &delta)?;
    }
    let (best_loss, best) = best.expect("at least one step runs");
    Ok(Outcome {
        best,
        best_loss,
        initial_loss,
        iterations,
        stalled: !improved_early && iterations > schedule.patience,
    })
}
