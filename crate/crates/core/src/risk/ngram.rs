use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::ledger::{NodeId, Term};

/// One syscall symbol. Alphabets are small, so 16 bits is ample.
pub type Symbol = u16;

/// A window of `w` consecutive symbols.
pub type Ngram = Vec<Symbol>;

/// Every syscall a node issued during one term.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyscallTrace {
    pub node: NodeId,
    pub term: Term,
    pub calls: Vec<Symbol>,
}

impl SyscallTrace {
    pub fn new(node: NodeId, term: Term, calls: Vec<Symbol>) -> Self {
        Self { node, term, calls }
    }

    /// Too short to yield a single window of length `w`.
    pub fn is_degenerate(&self, w: usize) -> bool {
        self.calls.len() < w
    }
}

/// Stride-1 sliding windows of length `w`, counted. Traces shorter than `w`
/// give an empty multiset.
pub fn extract_ngrams(calls: &[Symbol], w: usize) -> BTreeMap<Ngram, u32> {
    assert!(w >= 1, "window length must be at least 1");
    let mut out = BTreeMap::new();
    for win in calls.windows(w) {
        *out.entry(win.to_vec()).or_insert(0) += 1;
    }
    out
}

/// Column index for every n-gram seen across a set of traces, in
/// lexicographic order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NgramVocabulary {
    index: BTreeMap<Ngram, usize>,
}

impl NgramVocabulary {
    pub fn from_multisets<'a>(sets: impl IntoIterator<Item = &'a BTreeMap<Ngram, u32>>) -> Self {
        let mut index = BTreeMap::new();
        for s in sets {
            for g in s.keys() {
                index.entry(g.clone()).or_insert(0);
            }
        }
        for (j, slot) in index.values_mut().enumerate() {
            *slot = j;
        }
        Self { index }
    }

    /// Number of columns `k`.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn column(&self, g: &[Symbol]) -> Option<usize> {
        self.index.get(g).copied()
    }

    pub fn ngrams(&self) -> impl Iterator<Item = &Ngram> {
        self.index.keys()
    }
}

/// `num x k` matrix of n-gram counts, one row per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    num: usize,
    k: usize,
    values: Vec<u32>,
    row_owner: Vec<NodeId>,
}

impl CountMatrix {
    /// Builds the vocabulary and count matrix for `traces`, rows in input
    /// order.
    pub fn from_traces(traces: &[SyscallTrace], w: usize) -> (NgramVocabulary, CountMatrix) {
        let sets: Vec<_> = traces.iter().map(|t| extract_ngrams(&t.calls, w)).collect();
        let vocab = NgramVocabulary::from_multisets(&sets);
        let k = vocab.len();
        let mut values = alloc::vec![0u32; traces.len() * k];
        for (i, set) in sets.iter().enumerate() {
            for (g, c) in set {
                let j = vocab.column(g).expect("vocabulary built from these sets");
                values[i * k + j] = *c;
            }
        }
        let m = CountMatrix {
            num: traces.len(),
            k,
            values,
            row_owner: traces.iter().map(|t| t.node).collect(),
        };
        (vocab, m)
    }

    /// Direct construction, mainly for tests. `rows` must be rectangular.
    pub fn from_rows(rows: &[Vec<u32>], owners: Vec<NodeId>) -> CountMatrix {
        assert_eq!(rows.len(), owners.len());
        let k = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == k), "ragged count matrix");
        CountMatrix {
            num: rows.len(),
            k,
            values: rows.iter().flatten().copied().collect(),
            row_owner: owners,
        }
    }

    pub fn num(&self) -> usize {
        self.num
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.values[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn row_owner(&self, i: usize) -> NodeId {
        self.row_owner[i]
    }

    pub fn owners(&self) -> &[NodeId] {
        &self.row_owner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::OrgId;
    use alloc::vec;

    fn counts(calls: &[Symbol], w: usize) -> Vec<(Ngram, u32)> {
        extract_ngrams(calls, w).into_iter().collect()
    }

    #[test]
    fn windows_of_two() {
        assert_eq!(
            counts(&[1, 2, 3], 2),
            vec![(vec![1, 2], 1), (vec![2, 3], 1)]
        );
    }

    #[test]
    fn short_trace_is_empty() {
        assert!(extract_ngrams(&[7], 3).is_empty());
        let t = SyscallTrace::new(NodeId::new(0, OrgId(0)), Term(0), vec![7]);
        assert!(t.is_degenerate(3));
    }

    #[test]
    fn repeated_symbol_counts_every_window() {
        assert_eq!(counts(&[1, 1, 1, 1], 2), vec![(vec![1, 1], 3)]);
    }

    #[test]
    fn total_window_count() {
        let calls: Vec<Symbol> = (0..50).map(|i| (i * 7 % 5) as Symbol).collect();
        for w in 1..8 {
            let total: u32 = extract_ngrams(&calls, w).values().sum();
            assert_eq!(total as usize, calls.len() - w + 1);
        }
    }

    #[test]
    fn count_matrix_columns_are_lexicographic() {
        let a = NodeId::new(0, OrgId(0));
        let b = NodeId::new(1, OrgId(0));
        let traces = vec![
            SyscallTrace::new(a, Term(1), vec![3, 1, 3, 1]),
            SyscallTrace::new(b, Term(1), vec![1, 2]),
        ];
        let (vocab, m) = CountMatrix::from_traces(&traces, 2);
        let cols: Vec<_> = vocab.ngrams().cloned().collect();
        assert_eq!(cols, vec![vec![1, 2], vec![1, 3], vec![3, 1]]);
        assert_eq!(m.row(0), &[0, 1, 2]);
        assert_eq!(m.row(1), &[1, 0, 0]);
        assert_eq!(m.row_owner(1), b);
    }
}
