//! Quorum safety by exhaustive enumeration, MVCC determinism, PoW attempt
//! statistics, tip-selection uniformity and PoH recomputation.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use dltsim::consensus::eov::{endorse, Orderer, Peer, Validity, WorldState};
use dltsim::consensus::{
    meets_difficulty, poh_extend, poh_verify, pow_seal, tangle_select_tips, EndorsementPolicy,
    QuorumConfig, VotingEngine, WorkLedger,
};
use dltsim::ledger::{hash_block, Block, Dag, DagVertex, Hash, Transaction, TxKind};
use dltsim::{NodeId, SimTime};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[test]
fn quorum_safety_n4_one_equivocator() {
    assert_eq!(QuorumConfig::for_validators(4).unwrap().f, 1);
    for order_b_first in [false, true] {
        assert_eq!(common::conflicting_executions(4, &[], order_b_first), 0);
        for byz in 0..4 {
            assert_eq!(common::conflicting_executions(4, &[byz], order_b_first), 0, "byzantine {byz}");
        }
    }
}

#[test]
fn two_equivocators_exceed_the_bound_at_n4() {
    // Same enumeration past f: the search must be able to find a split.
    assert!(common::conflicting_executions(4, &[2, 3], false) > 0);
}

#[test]
fn three_honest_votes_finalize_at_every_observer() {
    let config = QuorumConfig::for_validators(4).unwrap();
    let (a, b) = common::proposals();
    for byz in 0..4u32 {
        for ballot in common::BALLOTS {
            let mut engine = VotingEngine::new(config);
            engine.register(a.clone());
            engine.register(b.clone());
            for v in (0..4).filter(|&v| v != byz) {
                engine.vote(1, a.block_hash, NodeId(v)).unwrap();
            }
            if matches!(ballot, common::Ballot::B | common::Ballot::Both) {
                engine.vote(1, b.block_hash, NodeId(byz)).unwrap();
            }
            assert_eq!(engine.chain().tip().block_hash, a.block_hash);
        }
    }
}

fn endorsed_block(keys: &[Vec<String>], state: &WorldState, parent: &Block) -> dltsim::consensus::eov::OrderedBlock {
    let responders: BTreeSet<NodeId> = [NodeId(0), NodeId(1)].into();
    let mut work = WorkLedger::default();
    let mut orderer = Orderer::new();
    for (i, k) in keys.iter().enumerate() {
        let tx = Transaction::new(NodeId(10), TxKind::Transfer, (i as u32).to_le_bytes().to_vec(), SimTime(i as u64));
        let etx = endorse(tx, k, state, &responders, 2, EndorsementPolicy::AllOf, &mut work).unwrap();
        orderer.submit(etx, SimTime(0));
    }
    orderer.cut(parent, NodeId(99), SimTime(1), usize::MAX).unwrap()
}

fn key_sets() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(
        prop::collection::btree_set(0u8..6, 1..3).prop_map(|s| s.into_iter().map(|k| format!("k{k}")).collect()),
        1..24,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    /// Peers validating the same ordered blocks agree on every label and on
    /// the resulting world state, and the labels match a serial replay in
    /// which a read is stale once an earlier valid transaction wrote the key.
    #[test]
    fn mvcc_validation_is_deterministic(first in key_sets(), second in key_sets()) {
        let mut p0 = Peer::new(NodeId(0), 2);
        let mut p1 = Peer::new(NodeId(1), 2);
        let mut work = WorkLedger::default();
        let mut written: BTreeSet<String> = BTreeSet::new();
        for keys in [&first, &second] {
            let block = endorsed_block(keys, p0.state(), p0.chain().tip());
            let l0 = p0.validate_and_commit(&block, &mut work).unwrap();
            let l1 = p1.validate_and_commit(&block, &mut work).unwrap();
            prop_assert_eq!(&l0, &l1);
            // every envelope was endorsed against the state before this block
            let mut in_block: BTreeSet<&String> = BTreeSet::new();
            for (k, label) in keys.iter().zip(&l0) {
                let stale = k.iter().any(|key| in_block.contains(key));
                let expected = if stale { Validity::MvccConflict } else { Validity::Valid };
                prop_assert_eq!(*label, expected);
                if !stale {
                    in_block.extend(k.iter());
                    written.extend(k.iter().cloned());
                }
            }
            for key in (0..6).map(|k| format!("k{k}")) {
                prop_assert_eq!(p0.state().version(&key), p1.state().version(&key));
                prop_assert_eq!(p0.state().version(&key).is_some(), written.contains(&key));
            }
        }
        prop_assert_eq!(p0.chain().tip().block_hash, p1.chain().tip().block_hash);
    }
}

fn mean_attempts(bits: u32, blocks: u64) -> f64 {
    let g = Block::genesis();
    let mut total = 0u64;
    for i in 0..blocks {
        let b = Block::child_of(&g, Vec::new(), NodeId(i as u32), SimTime(i));
        let sealed = pow_seal(b, bits, i);
        assert!(meets_difficulty(&sealed.block, bits));
        assert_eq!(hash_block(&sealed.block), sealed.block.block_hash);
        total += sealed.attempts;
    }
    total as f64 / blocks as f64
}

#[test]
fn pow_attempts_converge_to_two_to_the_difficulty() {
    for bits in [4u32, 8, 10] {
        let expected = f64::from(1u32 << bits);
        let mean = mean_attempts(bits, 10_000);
        assert!((mean - expected).abs() <= 0.05 * expected, "d={bits}: mean {mean}, expected {expected}");
        if bits == 8 {
            assert!((230.0..=282.0).contains(&mean), "{mean}");
        }
    }
}

fn dag_with_tips(n: u32) -> (Dag, Vec<Hash>) {
    let mut dag = Dag::new();
    let g = dag.genesis();
    let tips: Vec<Hash> = (0..n)
        .map(|i| {
            let tx = Transaction::new(NodeId(1), TxKind::DataAnchor, i.to_le_bytes().to_vec(), SimTime(0));
            let v = DagVertex::with_nonce([g, g], tx, 0);
            let h = v.vertex_hash;
            dag.attach(v, 0).unwrap();
            h
        })
        .collect();
    assert_eq!(dag.tips().len(), n as usize);
    (dag, tips)
}

/// Chi-square of observed counts against equal expected counts, plus a
/// per-cell 3-sigma check.
fn assert_uniform(counts: &BTreeMap<(Hash, Hash), u64>, cells: usize, draws: u64, critical: f64) {
    assert_eq!(counts.len(), cells);
    let p = 1.0 / cells as f64;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    let mut chi2 = 0.0;
    for &c in counts.values() {
        let d = c as f64 - expected;
        assert!(d.abs() <= 3.0 * sigma, "count {c}, expected {expected} +- {}", 3.0 * sigma);
        chi2 += d * d / expected;
    }
    assert!(chi2 < critical, "chi-square {chi2} >= {critical}");
}

#[test]
fn two_tips_are_drawn_in_both_orders_uniformly() {
    let (dag, tips) = dag_with_tips(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = BTreeMap::new();
    for _ in 0..10_000 {
        let (x, y) = tangle_select_tips(&dag, &mut rng).unwrap();
        assert_ne!(x, y);
        assert!(tips.contains(&x) && tips.contains(&y));
        *counts.entry((x, y)).or_insert(0) += 1;
    }
    // 1 degree of freedom, p = 0.001
    assert_uniform(&counts, 2, 10_000, 10.83);
}

#[test]
fn unordered_pairs_among_five_tips_are_uniform() {
    let (dag, _) = dag_with_tips(5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = BTreeMap::new();
    for _ in 0..10_000 {
        let (x, y) = tangle_select_tips(&dag, &mut rng).unwrap();
        assert_ne!(x, y);
        *counts.entry((x.min(y), x.max(y))).or_insert(0) += 1;
    }
    // 10 pairs, 9 degrees of freedom, p = 0.001
    assert_uniform(&counts, 10, 10_000, 27.88);
}

#[test]
fn poh_matches_independent_recomputation() {
    let start = Block::genesis().block_hash;
    let proof = poh_extend(start, 10_000);
    let mut h: [u8; 32] = start.0;
    for _ in 0..10_000 {
        h = Sha256::digest(h).into();
    }
    assert_eq!(proof.end, Hash(h));
    assert!(poh_verify(&proof));
    let mut bad = proof;
    bad.ticks -= 1;
    assert!(!poh_verify(&bad));
}
