//! A replica's chain together with the proposer term of each block and the
//! commit point.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::ledger::{Block, Chain, Digest, LedgerError, Term, TransactionRequest};

/// What happened to a block offered by the current leader.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Offer {
    Appended,
    /// Already held, byte for byte.
    Duplicate,
    /// The parent is missing; `have` is the local head.
    Missing {
        have: u64,
    },
    /// The local block at `at` (the parent position) differs from the
    /// leader's.
    Conflict {
        at: u64,
    },
    /// The block would replace a committed one, or is malformed.
    Rejected(LedgerError),
}

/// Entries committed for the first time, grouped by block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommittedBlock {
    pub block_num: u64,
    pub digest: Digest,
    pub term: Term,
    pub empty: bool,
    /// Entries not committed by any earlier block.
    pub fresh: Vec<TransactionRequest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLog {
    chain: Chain,
    terms: Vec<Term>,
    commit: u64,
    committed_ids: BTreeSet<u64>,
}

impl Default for BlockLog {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockLog {
    pub fn new() -> Self {
        Self {
            chain: Chain::new(),
            terms: alloc::vec![Term(0)],
            commit: 0,
            committed_ids: BTreeSet::new(),
        }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn last_num(&self) -> u64 {
        self.chain.last_num()
    }

    pub fn last_hash(&self) -> Digest {
        self.chain.last_hash()
    }

    pub fn last_term(&self) -> Term {
        *self.terms.last().expect("genesis term")
    }

    pub fn term_at(&self, n: u64) -> Option<Term> {
        self.terms.get(usize::try_from(n).ok()?).copied()
    }

    pub fn get(&self, n: u64) -> Option<&Block> {
        self.chain.get(n)
    }

    pub fn hash_at(&self, n: u64) -> Option<Digest> {
        self.chain.hash_at(n)
    }

    pub fn commit_num(&self) -> u64 {
        self.commit
    }

    pub fn commit_hash(&self) -> Digest {
        self.chain
            .hash_at(self.commit)
            .expect("commit point inside chain")
    }

    pub fn is_committed(&self, request_id: u64) -> bool {
        self.committed_ids.contains(&request_id)
    }

    /// A candidate whose head is `(last_term, last_num)` is at least as up
    /// to date as this log.
    pub fn is_up_to_date(&self, last_term: Term, last_num: u64) -> bool {
        (last_term, last_num) >= (self.last_term(), self.last_num())
    }

    /// Leader-side append of a block it built itself.
    pub fn append_own(&mut self, block: Block, term: Term) -> Result<Digest, LedgerError> {
        let h = self.chain.append(block)?;
        self.terms.push(term);
        Ok(h)
    }

    /// Follower-side handling of a block sent by the leader. A conflicting
    /// uncommitted suffix is discarded.
    pub fn offer(&mut self, block: Block, term: Term) -> Offer {
        let num = block.block_num;
        if num == 0 {
            return Offer::Duplicate;
        }
        let last = self.last_num();
        if num > last + 1 {
            return Offer::Missing { have: last };
        }
        let parent = self.hash_at(num - 1).expect("num - 1 <= last");
        if block.prehash != parent {
            return Offer::Conflict { at: num - 1 };
        }
        if num <= last {
            if self.hash_at(num) == Some(block.hash()) {
                self.terms[num as usize] = self.terms[num as usize].max(term);
                return Offer::Duplicate;
            }
            if num <= self.commit {
                return Offer::Rejected(LedgerError::HashMismatch {
                    block_num: num,
                    expected: self.hash_at(num).expect("held"),
                    found: block.hash(),
                });
            }
            self.chain.truncate_after(num - 1);
            self.terms.truncate(num as usize);
        }
        match self.chain.append(block) {
            Ok(_) => {
                self.terms.push(term);
                Offer::Appended
            }
            Err(e) => Offer::Rejected(e),
        }
    }

    /// Moves the commit point forward to `to` (never backwards) and returns
    /// the newly committed blocks.
    pub fn advance_commit(&mut self, to: u64) -> Vec<CommittedBlock> {
        let to = to.min(self.last_num());
        let mut out = Vec::new();
        while self.commit < to {
            self.commit += 1;
            let n = self.commit;
            let b = self.chain.get(n).expect("inside chain");
            let fresh = b
                .entries
                .iter()
                .filter(|e| self.committed_ids.insert(e.request_id))
                .cloned()
                .collect();
            out.push(CommittedBlock {
                block_num: n,
                digest: self.chain.hash_at(n).expect("inside chain"),
                term: self.terms[n as usize],
                empty: b.empty_flag,
                fresh,
            });
        }
        out
    }

    /// Adopts a leader's commit point when the local chain holds the same
    /// block at that position.
    pub fn follow_commit(&mut self, num: u64, hash: Digest) -> Vec<CommittedBlock> {
        if num > self.commit && self.hash_at(num) == Some(hash) {
            self.advance_commit(num)
        } else {
            Vec::new()
        }
    }

    /// Request ids present in blocks after the commit point.
    pub fn uncommitted_ids(&self) -> BTreeSet<u64> {
        self.chain.blocks()[self.commit as usize + 1..]
            .iter()
            .flat_map(|b| b.entries.iter().map(|e| e.request_id))
            .collect()
    }
}
