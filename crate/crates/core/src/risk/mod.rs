//! Risk-node assessment: syscall n-grams, frequency weighting, isolation
//! forest scores and the flagging rule.

pub mod forest;
pub mod ngram;
pub mod tfidf;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use crate::ledger::{NodeId, Term};

pub use forest::{c_factor, score_from_mean_path, ForestError, IsolationForest};
pub use ngram::{extract_ngrams, CountMatrix, Ngram, NgramVocabulary, Symbol, SyscallTrace};
pub use tfidf::{
    count_times_frequency, document_frequency, inverse_document_frequency, term_frequency,
    term_frequency_with, weight_matrix, weight_matrix_with, FrequencyMode, Matrix, WeightedMatrix,
};

/// Minimum number of usable traces for an assessment.
pub const MIN_TRACES: usize = 3;

/// How the cut-off above which a score counts as anomalous is derived from
/// the score distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FlagRule {
    /// `mean + kappa * std` (population standard deviation).
    MeanStd,
    /// `median + kappa * 1.4826 * MAD`. Robust to several anomalies pulling
    /// the mean and inflating the deviation.
    #[default]
    MedianMad,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RiskConfig {
    pub window: usize,
    pub trees: usize,
    pub subsample: usize,
    pub kappa: f64,
    /// Scores at or below this never flag.
    pub score_floor: f64,
    pub frequency: FrequencyMode,
    pub flag_rule: FlagRule,
    pub seed: u64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            window: 5,
            trees: 100,
            subsample: 256,
            kappa: 2.0,
            score_floor: 0.5,
            frequency: FrequencyMode::Column,
            flag_rule: FlagRule::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RiskError {
    #[error("need at least {MIN_TRACES} usable traces, got {0}")]
    DegenerateInput(usize),
    #[error("node {0} submitted more than one trace")]
    DuplicateNode(NodeId),
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskReport {
    pub term: Term,
    pub scores: BTreeMap<NodeId, f64>,
    pub flagged: BTreeSet<NodeId>,
    /// Traces shorter than the window; left out of scoring.
    pub degenerate: BTreeSet<NodeId>,
    pub threshold: f64,
    /// Half or more of the scored nodes were flagged, so the honest-majority
    /// premise behind the rule does not hold for this report.
    pub assumption_violated: bool,
}

/// Scores every trace and flags the outliers.
///
/// Rows are ordered by node id before fitting, so the result does not depend
/// on the order of `traces`. The report's term is the largest term among the
/// traces.
pub fn assess(traces: &[SyscallTrace], config: &RiskConfig) -> Result<RiskReport, RiskError> {
    if config.window == 0 {
        return Err(RiskError::ZeroWindow);
    }
    let mut seen = BTreeSet::new();
    for t in traces {
        if !seen.insert(t.node) {
            return Err(RiskError::DuplicateNode(t.node));
        }
    }
    let mut usable: Vec<SyscallTrace> = Vec::new();
    let mut degenerate = BTreeSet::new();
    for t in traces {
        if t.is_degenerate(config.window) {
            degenerate.insert(t.node);
        } else {
            usable.push(t.clone());
        }
    }
    if usable.len() < MIN_TRACES {
        return Err(RiskError::DegenerateInput(usable.len()));
    }
    usable.sort_by_key(|t| t.node);

    let (_, counts) = CountMatrix::from_traces(&usable, config.window);
    let weighted = weight_matrix_with(&counts, config.frequency);
    let forest = IsolationForest::fit(
        &weighted.values,
        config.trees,
        config.subsample,
        config.seed,
    )?;

    let scores: BTreeMap<NodeId, f64> = (0..counts.num())
        .map(|i| {
            (
                counts.row_owner(i),
                forest.anomaly_score(weighted.values.row(i)),
            )
        })
        .collect();
    let values: Vec<f64> = scores.values().copied().collect();
    let threshold = threshold(&values, config);
    let flagged: BTreeSet<NodeId> = scores
        .iter()
        .filter(|(_, &s)| s > threshold)
        .map(|(&n, _)| n)
        .collect();
    Ok(RiskReport {
        term: traces.iter().map(|t| t.term).max().unwrap_or_default(),
        assumption_violated: flagged.len() * 2 >= scores.len(),
        scores,
        flagged,
        degenerate,
        threshold,
    })
}

/// `max(floor, centre + kappa * spread)` for the configured rule.
pub fn threshold(scores: &[f64], config: &RiskConfig) -> f64 {
    let (centre, spread) = match config.flag_rule {
        FlagRule::MeanStd => {
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            (mean, libm::sqrt(var))
        }
        FlagRule::MedianMad => {
            let med = median(scores.to_vec());
            let mad = median(scores.iter().map(|s| (s - med).abs()).collect());
            (med, 1.4826 * mad)
        }
    };
    config.score_floor.max(centre + config.kappa * spread)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
