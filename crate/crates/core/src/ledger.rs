//! Ledger primitives: identities, terms, transactions, blocks, the chain and
//! the risk-node list.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{self, Decode, DecodeError, Encode, Reader, Writer};

/// A 256-bit SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // First 8 bytes are plenty to tell digests apart in test output.
        write!(f, "Digest(")?;
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

/// Index of an organization in the cluster's membership table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrgId(pub u16);

/// A registered participant. `value` is unique across the cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeId {
    pub value: u32,
    pub org: OrgId,
}

impl NodeId {
    pub const fn new(value: u32, org: OrgId) -> Self {
        Self { value, org }
    }

    pub fn index(&self) -> usize {
        self.value as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.value)
    }
}

impl Encode for NodeId {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.value);
        w.u16(self.org.0);
    }
}

impl Decode for NodeId {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(NodeId::new(r.u32()?, OrgId(r.u16()?)))
    }
}

/// Logical epoch; one accountant per term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Term(pub u64);

impl Term {
    pub fn next(self) -> Term {
        Term(self.0 + 1)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Simulation time in integer microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ms(ms: u64) -> SimTime {
        SimTime(ms * 1_000)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl core::ops::Add<SimTime> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1_000, self.0 % 1_000)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransactionRequest {
    pub request_id: u64,
    pub client_id: u32,
    pub payload: Vec<u8>,
    pub submit_time: SimTime,
}

impl Encode for TransactionRequest {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.request_id);
        w.u32(self.client_id);
        w.u64(self.submit_time.0);
        w.bytes(&self.payload);
    }
}

impl Decode for TransactionRequest {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let request_id = r.u64()?;
        let client_id = r.u32()?;
        let submit_time = SimTime(r.u64()?);
        let at = r.offset();
        let payload = r.bytes()?.to_vec();
        if payload.is_empty() {
            return Err(DecodeError::Invalid {
                offset: at,
                what: "transaction payload must be non-empty",
            });
        }
        Ok(Self {
            request_id,
            client_id,
            payload,
            submit_time,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Block {
    pub block_num: u64,
    pub prehash: Digest,
    pub time_stamp: SimTime,
    pub merkle_root: Digest,
    pub entries: Vec<TransactionRequest>,
    pub empty_flag: bool,
}

impl Block {
    /// Block 0: no entries, all-zero prehash, timestamp 0.
    pub fn genesis() -> Block {
        Block::new(0, Digest::ZERO, SimTime::ZERO, Vec::new())
    }

    /// Builds a block with a consistent Merkle root and empty flag.
    pub fn new(
        block_num: u64,
        prehash: Digest,
        time_stamp: SimTime,
        entries: Vec<TransactionRequest>,
    ) -> Block {
        Block {
            block_num,
            prehash,
            time_stamp,
            merkle_root: merkle_root(&entries),
            empty_flag: entries.is_empty(),
            entries,
        }
    }

    /// The voided form of this block: same position and parent, no entries.
    pub fn emptied(&self) -> Block {
        Block::new(self.block_num, self.prehash, self.time_stamp, Vec::new())
    }

    /// `empty_flag` and `merkle_root` agree with `entries`.
    pub fn is_well_formed(&self) -> bool {
        self.empty_flag == self.entries.is_empty() && self.merkle_root == merkle_root(&self.entries)
    }

    pub fn hash(&self) -> Digest {
        hash_block(self)
    }
}

impl Encode for Block {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.block_num);
        w.raw(&self.prehash.0);
        w.u64(self.time_stamp.0);
        w.raw(&self.merkle_root.0);
        w.bool(self.empty_flag);
        codec::write_seq(w, &self.entries);
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Block {
            block_num: r.u64()?,
            prehash: Digest(r.array()?),
            time_stamp: SimTime(r.u64()?),
            merkle_root: Digest(r.array()?),
            empty_flag: r.bool()?,
            entries: r.seq()?,
        })
    }
}

/// SHA-256 over the canonical encoding of the whole block, entries included.
pub fn hash_block(block: &Block) -> Digest {
    Digest::of(&block.encode())
}

pub const EMPTY_MERKLE_ROOT: Digest = Digest::ZERO;

pub fn leaf_hash(tx: &TransactionRequest) -> Digest {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(tx.encode());
    Digest(h.finalize().into())
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([0x01]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// Binary Merkle tree over leaf hashes; a level of odd width duplicates its
/// last node.
pub fn merkle_root(entries: &[TransactionRequest]) -> Digest {
    if entries.is_empty() {
        return EMPTY_MERKLE_ROOT;
    }
    let mut level: Vec<Digest> = entries.iter().map(leaf_hash).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node_hash(l, r),
                [l] => node_hash(l, l),
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("block {block_num}: prehash {found} does not match parent hash {expected}")]
    HashMismatch {
        block_num: u64,
        expected: Digest,
        found: Digest,
    },
    #[error("block number {found} does not follow {expected_prev}")]
    NumGap { expected_prev: u64, found: u64 },
    #[error("block {block_num} is malformed (merkle root or empty flag inconsistent)")]
    Malformed { block_num: u64 },
}

/// Append-only sequence of blocks rooted at [`Block::genesis`].
///
/// Hashes are cached next to the blocks so parent checks are O(1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    hashes: Vec<Digest>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    pub fn new() -> Chain {
        let g = Block::genesis();
        let h = g.hash();
        Chain {
            blocks: alloc::vec![g],
            hashes: alloc::vec![h],
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn last_hash(&self) -> Digest {
        *self.hashes.last().expect("chain always holds genesis")
    }

    pub fn last_num(&self) -> u64 {
        self.last().block_num
    }

    pub fn get(&self, block_num: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(block_num).ok()?)
    }

    pub fn hash_at(&self, block_num: u64) -> Option<Digest> {
        self.hashes.get(usize::try_from(block_num).ok()?).copied()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Checks `block` against the current head without modifying the chain.
    pub fn check_next(&self, block: &Block) -> Result<(), LedgerError> {
        let expected_prev = self.last_num();
        if block.block_num != expected_prev + 1 {
            return Err(LedgerError::NumGap {
                expected_prev,
                found: block.block_num,
            });
        }
        let parent = self.last_hash();
        if block.prehash != parent {
            return Err(LedgerError::HashMismatch {
                block_num: block.block_num,
                expected: parent,
                found: block.prehash,
            });
        }
        if !block.is_well_formed() {
            return Err(LedgerError::Malformed {
                block_num: block.block_num,
            });
        }
        Ok(())
    }

    /// Appends `block`; on error the chain is left untouched.
    pub fn append(&mut self, block: Block) -> Result<Digest, LedgerError> {
        self.check_next(&block)?;
        let h = block.hash();
        self.blocks.push(block);
        self.hashes.push(h);
        Ok(h)
    }

    /// Drops every block after `block_num`. Replicas use this to discard an
    /// uncommitted suffix; genesis is never removed.
    pub fn truncate_after(&mut self, block_num: u64) {
        let keep = usize::try_from(block_num)
            .map_or(usize::MAX, |n| n.saturating_add(1))
            .max(1);
        self.blocks.truncate(keep);
        self.hashes.truncate(keep);
    }

    /// Full O(length) verification of every link and Merkle root.
    pub fn validate(&self) -> Result<(), LedgerError> {
        let mut rebuilt = Chain::new();
        if self.blocks[0] != rebuilt.blocks[0] {
            return Err(LedgerError::HashMismatch {
                block_num: 0,
                expected: rebuilt.hashes[0],
                found: self.blocks[0].hash(),
            });
        }
        for b in &self.blocks[1..] {
            rebuilt.append(b.clone())?;
        }
        Ok(())
    }
}

/// Functional form of [`Chain::append`]: returns the extended chain and
/// leaves the input as it was.
pub fn append_block(chain: &Chain, block: Block) -> Result<Chain, LedgerError> {
    chain.check_next(&block)?;
    let mut next = chain.clone();
    next.append(block)?;
    Ok(next)
}

/// Nodes judged Byzantine, with the term in which each was first listed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiskNodeList {
    entries: BTreeMap<NodeId, Term>,
}

impl RiskNodeList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lists `node`, keeping the earliest term if it is already present.
    /// Returns true when the node was newly added.
    pub fn insert(&mut self, node: NodeId, term: Term) -> bool {
        match self.entries.get(&node) {
            Some(_) => false,
            None => {
                self.entries.insert(node, term);
                true
            }
        }
    }

    pub fn remove(&mut self, node: &NodeId) -> Option<Term> {
        self.entries.remove(node)
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.entries.contains_key(node)
    }

    pub fn term_of(&self, node: &NodeId) -> Option<Term> {
        self.entries.get(node).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Term)> {
        self.entries.iter()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    /// Union with `other`; returns the nodes that were newly added.
    pub fn merge(&mut self, other: &RiskNodeList) -> Vec<NodeId> {
        other
            .iter()
            .filter_map(|(n, t)| self.insert(*n, *t).then_some(*n))
            .collect()
    }
}

impl Encode for RiskNodeList {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.entries.len() as u32);
        for (n, t) in &self.entries {
            n.encode_to(w);
            w.u64(t.0);
        }
    }
}

impl Decode for RiskNodeList {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.u32()? as usize;
        let mut out = RiskNodeList::new();
        for _ in 0..n {
            let at = r.offset();
            let node = NodeId::decode_from(r)?;
            let term = Term(r.u64()?);
            if !out.insert(node, term) {
                return Err(DecodeError::Invalid {
                    offset: at,
                    what: "duplicate node in risk list",
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn tx(id: u64, payload: &[u8]) -> TransactionRequest {
        TransactionRequest {
            request_id: id,
            client_id: 7,
            payload: payload.to_vec(),
            submit_time: SimTime::from_ms(id),
        }
    }

    fn next_block(chain: &Chain, entries: Vec<TransactionRequest>) -> Block {
        Block::new(
            chain.last_num() + 1,
            chain.last_hash(),
            SimTime::from_ms(10),
            entries,
        )
    }

    /// Golden value: SHA-256 of the 85-byte canonical genesis encoding.
    const GENESIS_HASH: &str = "940823e72b4ebe643186c2321d8f3ed0e582349bdea20e49b381280ea428382f";

    #[test]
    fn genesis_encoding_layout() {
        let enc = Block::genesis().encode();
        // 8 num + 32 prehash + 8 time + 32 merkle + 1 flag + 4 count
        assert_eq!(enc.len(), 85);
        assert_eq!(enc[80], 1, "genesis carries the empty flag");
    }

    #[test]
    fn genesis_hash_is_pinned() {
        let h = alloc::format!("{}", Block::genesis().hash());
        assert_eq!(h, GENESIS_HASH);
    }

    #[test]
    fn hashing_is_deterministic() {
        let b = Block::new(1, Digest::ZERO, SimTime(5), vec![tx(1, b"abc")]);
        assert_eq!(hash_block(&b), hash_block(&b.clone()));
    }

    #[test]
    fn flipping_a_payload_byte_changes_the_digest() {
        let b = Block::new(
            1,
            Digest::ZERO,
            SimTime(5),
            vec![tx(1, b"abc"), tx(2, b"def")],
        );
        let mut t = b.clone();
        t.entries[1].payload[0] ^= 0x01;
        assert_ne!(hash_block(&b), hash_block(&t));
        // and with a recomputed root as well
        let t2 = Block::new(1, Digest::ZERO, SimTime(5), t.entries.clone());
        assert_ne!(hash_block(&b), hash_block(&t2));
        assert_ne!(b.merkle_root, t2.merkle_root);
    }

    #[test]
    fn merkle_edge_cases() {
        assert_eq!(merkle_root(&[]), EMPTY_MERKLE_ROOT);
        let a = tx(1, b"a");
        assert_eq!(merkle_root(core::slice::from_ref(&a)), leaf_hash(&a));
    }

    #[test]
    fn merkle_four_entries_matches_manual_tree_and_detects_tamper() {
        let e: Vec<_> = (1..=4).map(|i| tx(i, &[i as u8; 3])).collect();
        let l: Vec<_> = e.iter().map(leaf_hash).collect();
        let manual = node_hash(&node_hash(&l[0], &l[1]), &node_hash(&l[2], &l[3]));
        assert_eq!(merkle_root(&e), manual);

        let mut tampered = e.clone();
        tampered[2].payload[1] ^= 0xff;
        assert_ne!(merkle_root(&tampered), manual);
    }

    #[test]
    fn merkle_odd_width_duplicates_last() {
        let e: Vec<_> = (1..=3).map(|i| tx(i, b"x")).collect();
        let l: Vec<_> = e.iter().map(leaf_hash).collect();
        let manual = node_hash(&node_hash(&l[0], &l[1]), &node_hash(&l[2], &l[2]));
        assert_eq!(merkle_root(&e), manual);
    }

    #[test]
    fn append_valid_block() {
        let c = Chain::new();
        let b = next_block(&c, vec![tx(1, b"x")]);
        let c2 = append_block(&c, b).unwrap();
        assert_eq!(c2.len(), 2);
        assert_eq!(c.len(), 1);
        c2.validate().unwrap();
    }

    #[test]
    fn append_wrong_parent_is_hash_mismatch() {
        let c = Chain::new();
        let mut b = next_block(&c, vec![tx(1, b"x")]);
        b.prehash = Digest::of(b"elsewhere");
        assert!(matches!(
            append_block(&c, b),
            Err(LedgerError::HashMismatch { .. })
        ));
    }

    #[test]
    fn append_wrong_number_is_num_gap() {
        let c = Chain::new();
        let mut b = next_block(&c, vec![tx(1, b"x")]);
        b.block_num = 3;
        assert_eq!(
            append_block(&c, b),
            Err(LedgerError::NumGap {
                expected_prev: 0,
                found: 3
            })
        );
    }

    #[test]
    fn append_empty_block_is_accepted() {
        let mut c = Chain::new();
        let b = next_block(&c, vec![tx(1, b"x")]).emptied();
        assert!(b.empty_flag && b.entries.is_empty());
        c.append(b).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn failed_append_leaves_chain_untouched() {
        let mut c = Chain::new();
        c.append(next_block(&c, vec![tx(1, b"x")])).unwrap();
        let before = c.clone();
        let mut bad = next_block(&c, vec![tx(2, b"y")]);
        bad.merkle_root = Digest::ZERO;
        assert!(c.append(bad).is_err());
        assert_eq!(c, before);
    }

    #[test]
    fn truncate_keeps_genesis() {
        let mut c = Chain::new();
        for i in 1..=3 {
            c.append(next_block(&c, vec![tx(i, b"x")])).unwrap();
        }
        c.truncate_after(1);
        assert_eq!(c.last_num(), 1);
        c.truncate_after(0);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn rnl_keeps_first_term_and_merges() {
        let a = NodeId::new(1, OrgId(0));
        let b = NodeId::new(2, OrgId(1));
        let mut r = RiskNodeList::new();
        assert!(r.insert(a, Term(3)));
        assert!(!r.insert(a, Term(5)));
        assert_eq!(r.term_of(&a), Some(Term(3)));
        let mut other = RiskNodeList::new();
        other.insert(a, Term(9));
        other.insert(b, Term(9));
        assert_eq!(r.merge(&other), vec![b]);
        assert_eq!(r.len(), 2);
    }

    fn arb_tx() -> impl Strategy<Value = TransactionRequest> {
        (
            any::<u64>(),
            any::<u32>(),
            proptest::collection::vec(any::<u8>(), 1..40),
            any::<u64>(),
        )
            .prop_map(|(request_id, client_id, payload, t)| TransactionRequest {
                request_id,
                client_id,
                payload,
                submit_time: SimTime(t),
            })
    }

    proptest! {
        #[test]
        fn block_codec_round_trips(entries in proptest::collection::vec(arb_tx(), 0..8), num in 1u64..1000, t in any::<u64>()) {
            let b = Block::new(num, Digest::of(&num.to_be_bytes()), SimTime(t), entries);
            let bytes = b.encode();
            prop_assert_eq!(Block::decode(&bytes).unwrap(), b);
        }

        #[test]
        fn chains_built_by_append_always_validate(sizes in proptest::collection::vec(0usize..4, 1..10)) {
            let mut c = Chain::new();
            let mut id = 0;
            for n in sizes {
                let entries = (0..n).map(|_| { id += 1; tx(id, b"p") }).collect();
                let b = next_block(&c, entries);
                c.append(b).unwrap();
            }
            prop_assert!(c.validate().is_ok());
            let other = c.clone();
            prop_assert_eq!(other.last_hash(), c.last_hash());
        }
    }
}
