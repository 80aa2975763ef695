//! TOPSIS ranking of consensus algorithms over a seven-indicator rubric.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

pub const INDICATORS: [&str; 7] = [
    "consensus_nodes",
    "selection_method",
    "node_weight",
    "byzantine_tolerance",
    "byzantine_controllability",
    "attack_cost",
    "resource_consumption",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown level {level:?} for indicator {indicator}")]
    UnknownLevel {
        indicator: &'static str,
        level: String,
    },
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("matrix has no rows")]
    Empty,
    #[error("value at ({row}, {col}) is not a finite number in [0, 1]")]
    OutOfRange { row: usize, col: usize },
    #[error("{what} has {got} entries, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Qualitative answers for one algorithm, as written in an evaluation table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RubricAnswers {
    /// `Part` or `All`.
    pub consensus_nodes: String,
    /// `Competing`, `Voting` or `Polling`.
    pub selection_method: String,
    /// Equal weighting of consensus nodes: `No` or `Yes`.
    pub node_weight: String,
    /// Tolerated Byzantine share, e.g. `33%`, or `>51%`.
    pub byzantine_tolerance: String,
    /// `No` or `Yes`.
    pub byzantine_controllability: String,
    /// `None`, `Low`, `Middle` or `High`.
    pub attack_cost: String,
    /// `>O(n^2)`, `O(n^2)`, `O(n log n)`, `O(n)` or `O(1)`.
    pub resource_consumption: String,
}

impl RubricAnswers {
    pub fn new(levels: [&str; 7]) -> Self {
        let [a, b, c, d, e, f, g] = levels.map(ToString::to_string);
        Self {
            consensus_nodes: a,
            selection_method: b,
            node_weight: c,
            byzantine_tolerance: d,
            byzantine_controllability: e,
            attack_cost: f,
            resource_consumption: g,
        }
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_ascii_lowercase())
        .collect::<String>()
        .replace('²', "^2")
}

fn lookup(indicator: &'static str, level: &str, table: &[(&str, f64)]) -> Result<f64, EvalError> {
    let key = normalize(level);
    table
        .iter()
        .find(|(name, _)| *name == key)
        .map(|&(_, v)| v)
        .ok_or_else(|| EvalError::UnknownLevel {
            indicator,
            level: level.into(),
        })
}

/// Band score for a tolerated Byzantine percentage: 0 for 0%, 0.3 up to
/// 16%, 0.5 up to 33%, 0.7 up to 51%, 1 above.
pub fn tolerance_score(percent: f64) -> f64 {
    if percent <= 0.0 {
        0.0
    } else if percent <= 16.0 {
        0.3
    } else if percent <= 33.0 {
        0.5
    } else if percent <= 51.0 {
        0.7
    } else {
        1.0
    }
}

fn parse_tolerance(level: &str) -> Result<f64, EvalError> {
    let unknown = || EvalError::UnknownLevel {
        indicator: INDICATORS[3],
        level: level.into(),
    };
    let key = normalize(level);
    let (above, rest) = match key.strip_prefix('>') {
        Some(r) => (true, r),
        None => (false, key.as_str()),
    };
    let pct: f64 = rest
        .strip_suffix('%')
        .unwrap_or(rest)
        .parse()
        .map_err(|_| unknown())?;
    if !(0.0..=100.0).contains(&pct) {
        return Err(unknown());
    }
    // ">51%" sits in the top band even though 51% itself does not.
    Ok(if above {
        tolerance_score(pct + 1e-9)
    } else {
        tolerance_score(pct)
    })
}

/// Looks every answer up in its scoring table.
pub fn score_rubric(a: &RubricAnswers) -> Result<[f64; 7], EvalError> {
    let yes_no = [("no", 0.0), ("yes", 1.0)];
    Ok([
        lookup(
            INDICATORS[0],
            &a.consensus_nodes,
            &[("part", 0.0), ("all", 1.0)],
        )?,
        lookup(
            INDICATORS[1],
            &a.selection_method,
            &[("competing", 0.0), ("voting", 0.5), ("polling", 1.0)],
        )?,
        lookup(INDICATORS[2], &a.node_weight, &yes_no)?,
        parse_tolerance(&a.byzantine_tolerance)?,
        lookup(INDICATORS[4], &a.byzantine_controllability, &yes_no)?,
        lookup(
            INDICATORS[5],
            &a.attack_cost,
            &[("none", 0.0), ("low", 0.3), ("middle", 0.6), ("high", 1.0)],
        )?,
        lookup(
            INDICATORS[6],
            &a.resource_consumption,
            &[
                (">o(n^2)", 0.0),
                ("o(n^2)", 0.3),
                ("o(nlogn)", 0.5),
                ("o(n)", 0.7),
                ("o(1)", 1.0),
            ],
        )?,
    ])
}

/// Rows are algorithms, columns are indicators.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorMatrix {
    algorithms: Vec<String>,
    indicators: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl IndicatorMatrix {
    pub fn new(
        algorithms: Vec<String>,
        indicators: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::Empty);
        }
        if algorithms.len() != values.len() {
            return Err(EvalError::DimensionMismatch {
                what: "algorithm names",
                got: algorithms.len(),
                expected: values.len(),
            });
        }
        let m = indicators.len();
        for (row, r) in values.iter().enumerate() {
            if r.len() != m {
                return Err(EvalError::Ragged {
                    row,
                    got: r.len(),
                    expected: m,
                });
            }
            if let Some(col) = r.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(EvalError::OutOfRange { row, col });
            }
        }
        Ok(Self {
            algorithms,
            indicators,
            values,
        })
    }

    /// Scores each algorithm's answers with the standard indicator names.
    pub fn from_answers(rows: &[(&str, RubricAnswers)]) -> Result<Self, EvalError> {
        let values = rows
            .iter()
            .map(|(_, a)| score_rubric(a).map(|r| r.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(
            rows.iter().map(|(n, _)| n.to_string()).collect(),
            INDICATORS.iter().map(|s| s.to_string()).collect(),
            values,
        )
    }

    pub fn algorithms(&self) -> &[String] {
        &self.algorithms
    }

    pub fn indicators(&self) -> &[String] {
        &self.indicators
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn m(&self) -> usize {
        self.indicators.len()
    }

    /// Each column divided by its Euclidean norm; zero columns stay zero.
    pub fn vector_normalized(&self) -> Self {
        let mut values = self.values.clone();
        for j in 0..self.m() {
            let norm = libm::sqrt(self.values.iter().map(|r| r[j] * r[j]).sum());
            if norm > 0.0 {
                for r in &mut values {
                    r[j] /= norm;
                }
            }
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

/// The five algorithms compared in the reference evaluation, with their
/// qualitative answers.
pub fn reference_answers() -> Vec<(&'static str, RubricAnswers)> {
    alloc::vec![
        (
            "Beh-Raft",
            RubricAnswers::new(["Part", "Voting", "No", "51%", "Yes", "Middle", "O(n)"])
        ),
        (
            "HHRAFT",
            RubricAnswers::new(["Part", "Voting", "Yes", "16%", "Yes", "Low", "O(n)"])
        ),
        (
            "CRAFT",
            RubricAnswers::new(["All", "Voting", "No", "51%", "No", "Low", "O(n)"])
        ),
        (
            "Tendermint BFT",
            RubricAnswers::new(["All", "Polling", "Yes", "33%", "No", "High", "O(n^2)"]),
        ),
        (
            "RAC",
            RubricAnswers::new(["Part", "Voting", "Yes", "51%", "Yes", "Middle", "O(n)"])
        ),
    ]
}

pub fn reference_matrix() -> IndicatorMatrix {
    IndicatorMatrix::from_answers(&reference_answers()).expect("reference answers are valid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdealSolutions {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Column-wise max and min. Every indicator is benefit-type once scored.
pub fn ideal_solutions(matrix: &IndicatorMatrix) -> IdealSolutions {
    let col = |j: usize| matrix.values.iter().map(move |r| r[j]);
    IdealSolutions {
        positive: (0..matrix.m())
            .map(|j| col(j).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        negative: (0..matrix.m())
            .map(|j| col(j).fold(f64::INFINITY, f64::min))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Closeness {
    pub algorithm: String,
    pub s_plus: f64,
    pub s_minus: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosenessScores {
    pub rows: Vec<Closeness>,
    /// The two ideals coincide; every `f` is reported as 0.5.
    pub degenerate_ideals: bool,
}

impl ClosenessScores {
    /// Best first; equal `f` falls back to name order.
    pub fn ranking(&self) -> Vec<&Closeness> {
        let mut r: Vec<&Closeness> = self.rows.iter().collect();
        r.sort_by(|a, b| match b.f.total_cmp(&a.f) {
            Ordering::Equal => a.algorithm.cmp(&b.algorithm),
            o => o,
        });
        r
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn closeness(
    matrix: &IndicatorMatrix,
    ideals: &IdealSolutions,
) -> Result<ClosenessScores, EvalError> {
    for (what, v) in [
        ("positive ideal", &ideals.positive),
        ("negative ideal", &ideals.negative),
    ] {
        if v.len() != matrix.m() {
            return Err(EvalError::DimensionMismatch {
                what,
                got: v.len(),
                expected: matrix.m(),
            });
        }
    }
    let degenerate = ideals.positive == ideals.negative;
    let rows = matrix
        .algorithms
        .iter()
        .zip(&matrix.values)
        .map(|(name, r)| {
            let s_plus = distance(r, &ideals.positive);
            let s_minus = distance(r, &ideals.negative);
            let f = if degenerate {
                0.5
            } else {
                s_minus / (s_minus + s_plus)
            };
            Closeness {
                algorithm: name.clone(),
                s_plus,
                s_minus,
                f,
            }
        })
        .collect();
    Ok(ClosenessScores {
        rows,
        degenerate_ideals: degenerate,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Normalization {
    /// Rubric values as scored.
    #[default]
    Raw,
    Vector,
}

pub fn evaluate(matrix: &IndicatorMatrix, mode: Normalization) -> ClosenessScores {
    let m = match mode {
        Normalization::Raw => matrix.clone(),
        Normalization::Vector => matrix.vector_normalized(),
    };
    closeness(&m, &ideal_solutions(&m)).expect("ideals derived from the same matrix")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn reference_rows() {
        let m = reference_matrix();
        assert_eq!(m.rows()[4], vec![0.0, 0.5, 1.0, 0.7, 1.0, 0.6, 0.7]);
        assert_eq!(m.rows()[3], vec![1.0, 1.0, 1.0, 0.5, 0.0, 1.0, 0.3]);
    }

    #[test]
    fn tolerance_bands() {
        let s = |l: &str| parse_tolerance(l).unwrap();
        assert_eq!(s("51%"), 0.7);
        assert_eq!(s(">51%"), 1.0);
        assert_eq!(s("0%"), 0.0);
        assert_eq!(s("16%"), 0.3);
        assert_eq!(s("17%"), 0.5);
        assert_eq!(s("34 %"), 0.7);
        assert!(parse_tolerance("lots").is_err());
    }

    #[test]
    fn unknown_level() {
        let mut a = reference_answers().remove(0).1;
        a.attack_cost = "Extreme".into();
        assert_eq!(
            score_rubric(&a),
            Err(EvalError::UnknownLevel {
                indicator: "attack_cost",
                level: "Extreme".into()
            })
        );
    }

    #[test]
    fn reference_ideals() {
        let i = ideal_solutions(&reference_matrix());
        assert_eq!(i.positive, vec![1.0, 1.0, 1.0, 0.7, 1.0, 1.0, 0.7]);
        assert_eq!(i.negative, vec![0.0, 0.5, 0.0, 0.3, 0.0, 0.3, 0.3]);
    }

    #[test]
    fn reference_closeness() {
        let s = evaluate(&reference_matrix(), Normalization::Raw);
        let rac = &s.rows[4];
        assert!(close(rac.s_plus, libm::sqrt(1.41)));
        assert!(close(rac.s_minus, libm::sqrt(2.41)));
        // independent Python evaluation
        let want = [
            0.433_393_609_623_294_76,
            0.516_026_300_245_785_1,
            0.409_710_304_076_413_1,
            0.603_498_728_422_19,
            0.566_606_390_376_705_3,
        ];
        for (r, w) in s.rows.iter().zip(want) {
            assert!(close(r.f, w), "{} {} vs {w}", r.algorithm, r.f);
        }
        assert_eq!(s.ranking()[0].algorithm, "Tendermint BFT");
    }

    #[test]
    fn extremes() {
        let m = IndicatorMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["x".into(), "y".into()],
            vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![0.5, 0.2]],
        )
        .unwrap();
        let s = evaluate(&m, Normalization::Raw);
        assert_eq!(s.rows[0].f, 1.0);
        assert_eq!(s.rows[1].f, 0.0);
    }

    #[test]
    fn single_row_is_degenerate() {
        let m =
            IndicatorMatrix::new(vec!["only".into()], vec!["x".into()], vec![vec![0.3]]).unwrap();
        let i = ideal_solutions(&m);
        assert_eq!(i.positive, i.negative);
        let s = closeness(&m, &i).unwrap();
        assert!(s.degenerate_ideals);
        assert_eq!(s.rows[0].f, 0.5);
    }

    #[test]
    fn ties_rank_by_name() {
        let m = IndicatorMatrix::new(
            vec!["zeta".into(), "alpha".into(), "mid".into()],
            vec!["x".into()],
            vec![vec![0.5], vec![0.5], vec![0.0]],
        )
        .unwrap();
        let s = evaluate(&m, Normalization::Raw);
        let order: Vec<_> = s.ranking().iter().map(|c| c.algorithm.as_str()).collect();
        assert_eq!(order, ["alpha", "zeta", "mid"]);
    }

    #[test]
    fn vector_mode_reference() {
        // independent numpy evaluation
        let want = [
            0.420_103_251_720_585,
            0.466_845_534_206_795_1,
            0.443_471_748_737_459_4,
            0.628_277_386_944_887,
            0.527_013_256_207_982_7,
        ];
        let s = evaluate(&reference_matrix(), Normalization::Vector);
        for (r, w) in s.rows.iter().zip(want) {
            assert!(close(r.f, w), "{} {}", r.algorithm, r.f);
        }
    }

    #[test]
    fn validation() {
        assert_eq!(
            IndicatorMatrix::new(
                vec!["a".into()],
                vec!["x".into(), "y".into()],
                vec![vec![0.1]]
            ),
            Err(EvalError::Ragged {
                row: 0,
                got: 1,
                expected: 2
            })
        );
        assert_eq!(
            IndicatorMatrix::new(vec!["a".into()], vec!["x".into()], vec![vec![1.5]]),
            Err(EvalError::OutOfRange { row: 0, col: 0 })
        );
    }
}
