//! Reward aggregation and the family of UCT scores used for agent selection.
//!
//! Every function here is pure. Rewards live in `[0, 1]`, confidences in
//! `[0.1, 1]`. The selection score of a node that has never received a
//! backpropagated reward is its initial reward, for every variant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest confidence an assessment can carry after normalization.
pub const MIN_CONFIDENCE: f64 = 0.1;

/// A violated numeric precondition, naming the offending input.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error in `{field}`: {message}")]
pub struct DomainError {
    pub field: &'static str,
    pub message: String,
}

impl DomainError {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

/// Reward bookkeeping for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    /// Initial reward from the agent's own assessment.
    pub r0: f64,
    /// Confidence attached to `r0`.
    pub c0: f64,
    /// Sum of rewards pushed into this node by backpropagation.
    pub reward_sum: f64,
    /// Number of backpropagations received.
    pub n: u64,
}

impl RewardStats {
    /// Fresh stats for a newly created agent.
    pub fn new(r0: f64, c0: f64) -> Result<Self, DomainError> {
        Self::with_history(r0, c0, 0.0, 0)
    }

    /// Stats with an existing backpropagation history.
    pub fn with_history(r0: f64, c0: f64, reward_sum: f64, n: u64) -> Result<Self, DomainError> {
        let stats = Self {
            r0,
            c0,
            reward_sum,
            n,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(0.0..=1.0).contains(&self.r0) {
            return Err(DomainError::new("r0", format!("{} outside [0, 1]", self.r0)));
        }
        if !(MIN_CONFIDENCE..=1.0).contains(&self.c0) {
            return Err(DomainError::new("c0", format!("{} outside [0.1, 1]", self.c0)));
        }
        if self.n == 0 && self.reward_sum != 0.0 {
            return Err(DomainError::new(
                "reward_sum",
                "must be 0 when no backpropagation happened",
            ));
        }
        // Tolerate float accumulation noise at the upper bound.
        let upper = self.n as f64 * (1.0 + 1e-12);
        if !(self.reward_sum >= 0.0 && self.reward_sum <= upper) {
            return Err(DomainError::new(
                "reward_sum",
                format!("{} outside [0, n={}]", self.reward_sum, self.n),
            ));
        }
        Ok(())
    }

    /// Records one backpropagated reward.
    pub fn absorb(&mut self, reward: f64) {
        self.reward_sum += reward;
        self.n += 1;
    }
}

/// Which selection formula to apply.
///
/// The exploration constant only exists on [`UctVariant::LambdaWeighted`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UctVariant {
    /// Confidence-weighted reward plus confidence-scaled exploration.
    Full,
    /// Confidence-weighted reward plus an unweighted exploration term.
    FixedExplorationWeight,
    /// Confidence-weighted reward only.
    NoExploration,
    /// Initial reward only.
    InitialOnly,
    /// Mean backpropagated reward plus `sqrt(ln N / 2n)`.
    OriginalMcts,
    /// Mean backpropagated reward plus `lambda * sqrt(ln N / n)`.
    LambdaWeighted { lambda: f64 },
}

impl UctVariant {
    pub fn lambda_weighted(lambda: f64) -> Result<Self, DomainError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(DomainError::new("lambda", format!("{lambda} is not a positive finite number")));
        }
        Ok(Self::LambdaWeighted { lambda })
    }

    /// Short name used on the command line and in traces.
    pub fn label(&self) -> String {
        match self {
            Self::Full => "full".into(),
            Self::FixedExplorationWeight => "fixed".into(),
            Self::NoExploration => "noexp".into(),
            Self::InitialOnly => "initial".into(),
            Self::OriginalMcts => "original".into(),
            Self::LambdaWeighted { lambda } => format!("lambda:{lambda}"),
        }
    }

    pub fn all_fixed() -> [UctVariant; 5] {
        [
            Self::Full,
            Self::FixedExplorationWeight,
            Self::NoExploration,
            Self::InitialOnly,
            Self::OriginalMcts,
        ]
    }
}

impl std::str::FromStr for UctVariant {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "fixed" => Ok(Self::FixedExplorationWeight),
            "noexp" => Ok(Self::NoExploration),
            "initial" => Ok(Self::InitialOnly),
            "original" => Ok(Self::OriginalMcts),
            other => match other.strip_prefix("lambda:") {
                Some(value) => {
                    let lambda = value
                        .parse::<f64>()
                        .map_err(|_| DomainError::new("lambda", format!("cannot parse `{value}`")))?;
                    Self::lambda_weighted(lambda)
                }
                None => Err(DomainError::new(
                    "variant",
                    format!("unknown variant `{other}` (expected full|fixed|noexp|initial|original|lambda:VALUE)"),
                )),
            },
        }
    }
}

/// Maps a 0..10 score and 0..10 confidence onto `(r0, c0)`.
///
/// Inputs above 10 are clamped; confidence is floored at [`MIN_CONFIDENCE`].
pub fn normalize_assessment(score: u8, confidence: u8) -> (f64, f64) {
    let score = score.min(10);
    let confidence = confidence.min(10);
    let r0 = f64::from(score) / 10.0;
    let c0 = (f64::from(confidence) / 10.0).max(MIN_CONFIDENCE);
    (r0, c0)
}

/// Mean of the backpropagated rewards.
pub fn q_mean(stats: &RewardStats) -> Result<f64, DomainError> {
    if stats.n == 0 {
        return Err(DomainError::new("n", "no backpropagations"));
    }
    Ok(stats.reward_sum / stats.n as f64)
}

/// Initial reward blended with the backpropagated mean, weighted by confidence.
pub fn q_weighted(stats: &RewardStats) -> Result<f64, DomainError> {
    let mean = q_mean(stats)?;
    Ok(stats.c0 * stats.r0 + (1.0 - stats.c0) * mean)
}

/// `1 / (10 * sqrt(2) * c0)`; equals `1/sqrt(2)` at the confidence floor.
pub fn exploration_weight(c0: f64) -> Result<f64, DomainError> {
    if c0.is_nan() || c0 < MIN_CONFIDENCE {
        return Err(DomainError::new("c0", format!("{c0} below the 0.1 floor")));
    }
    Ok(1.0 / (10.0 * std::f64::consts::SQRT_2 * c0))
}

/// Radius `eps = sqrt(ln N / 2n)` such that `N = exp(2 n eps^2)`.
pub fn hoeffding_epsilon(big_n: f64, n: u64) -> Result<f64, DomainError> {
    if !big_n.is_finite() || big_n < 1.0 {
        return Err(DomainError::new("N", format!("{big_n} must be a finite value >= 1")));
    }
    if n == 0 {
        return Err(DomainError::new("n", "must be at least 1"));
    }
    Ok((big_n.ln() / (2.0 * n as f64)).sqrt())
}

/// Selection score of a node whose parent has received `parent_n` backpropagations.
pub fn uct(stats: &RewardStats, parent_n: u64, variant: UctVariant) -> Result<f64, DomainError> {
    if stats.n == 0 {
        return Ok(stats.r0);
    }
    if parent_n < stats.n {
        return Err(DomainError::new(
            "parent_n",
            format!("{parent_n} is smaller than the node's n={}", stats.n),
        ));
    }
    let n = stats.n as f64;
    let log_parent = (parent_n as f64).ln();
    let value = match variant {
        UctVariant::Full => {
            q_weighted(stats)? + exploration_weight(stats.c0)? * (log_parent / n).sqrt()
        }
        UctVariant::FixedExplorationWeight => q_weighted(stats)? + (log_parent / n).sqrt(),
        UctVariant::NoExploration => q_weighted(stats)?,
        UctVariant::InitialOnly => stats.r0,
        UctVariant::OriginalMcts => q_mean(stats)? + (log_parent / (2.0 * n)).sqrt(),
        UctVariant::LambdaWeighted { lambda } => q_mean(stats)? + lambda * (log_parent / n).sqrt(),
    };
    Ok(value)
}
