//! Evaluation quantities: attack success rates, detection rates, dropout
//! ratio and round time.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::orchestrator::RoundLog;
use crate::ClientId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub global_accuracy: f64,
    pub class_accuracy: Vec<Option<f64>>,
    pub asr_targeted: f64,
    /// Misclassified fraction of the attacked class alone.
    pub asr_targeted_class: Option<f64>,
    /// Filled in from a paired no-attack run.
    pub asr_untargeted: Option<f64>,
    pub fp: Option<f64>,
    #[serde(rename = "fn")]
    pub fn_rate: Option<f64>,
    pub round_time_s: f64,
    pub dropouts_this_round: usize,
}

fn check_lengths(predictions: &[usize], truth: &[usize]) -> Result<(), MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { left: predictions.len(), right: truth.len() });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty("test set"));
    }
    Ok(())
}

/// Samples of `attacked_label` predicted as anything else, over the whole test set.
pub fn asr_targeted(predictions: &[usize], truth: &[usize], attacked_label: usize) -> Result<f64, MetricsError> {
    check_lengths(predictions, truth)?;
    let hit = predictions.iter().zip(truth).filter(|(&p, &t)| t == attacked_label && p != attacked_label).count();
    Ok(hit as f64 / truth.len() as f64)
}

/// Same count normalized by the attacked class size; `None` when the class is absent.
pub fn asr_targeted_class(
    predictions: &[usize],
    truth: &[usize],
    attacked_label: usize,
) -> Result<Option<f64>, MetricsError> {
    check_lengths(predictions, truth)?;
    let members = truth.iter().filter(|&&t| t == attacked_label).count();
    if members == 0 {
        return Ok(None);
    }
    let hit = predictions.iter().zip(truth).filter(|(&p, &t)| t == attacked_label && p != attacked_label).count();
    Ok(Some(hit as f64 / members as f64))
}

/// `|A1 - A2| / A1`.
pub fn asr_untargeted(acc_no_attack: f64, acc_under_attack: f64) -> Result<f64, MetricsError> {
    if !(acc_no_attack > 0.0) {
        return Err(MetricsError::Invalid(format!("reference accuracy must be positive, got {acc_no_attack}")));
    }
    Ok((acc_no_attack - acc_under_attack).abs() / acc_no_attack)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub fp: Option<f64>,
    #[serde(rename = "fn")]
    pub fn_rate: Option<f64>,
}

/// False-positive rate over the honest part of `pool`, false-negative rate
/// over its malicious part.
pub fn detection_rates(
    flagged: &[ClientId],
    truly_malicious: &[ClientId],
    pool: &[ClientId],
) -> Result<DetectionRates, MetricsError> {
    if let Some(id) = flagged.iter().find(|id| !pool.contains(id)) {
        return Err(MetricsError::Invalid(format!("flagged client {id} is not in the evaluated pool")));
    }
    let (malicious, honest): (Vec<ClientId>, Vec<ClientId>) =
        pool.iter().partition(|id| truly_malicious.contains(id));
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let fp = honest.iter().filter(|id| flagged.contains(id)).count();
    let missed = malicious.iter().filter(|id| !flagged.contains(id)).count();
    Ok(DetectionRates { fp: ratio(fp, honest.len()), fn_rate: ratio(missed, malicious.len()) })
}

/// Dropped-out outcomes over all selection slots in the run.
pub fn dropout_ratio(logs: &[RoundLog]) -> Result<f64, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::Empty("round logs"));
    }
    let slots: usize = logs.iter().map(|l| l.selected.len()).sum();
    let dropped: usize = logs.iter().map(RoundLog::dropout_count).sum();
    Ok(if slots == 0 { 0.0 } else { dropped as f64 / slots as f64 })
}

/// Mean round time over non-canceled rounds.
pub fn average_round_time(logs: &[RoundLog]) -> Result<f64, MetricsError> {
    mean(logs.iter().filter(|l| !l.canceled).map(|l| l.round_time_s)).ok_or(MetricsError::Empty("completed rounds"))
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}
