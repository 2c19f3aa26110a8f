//! Tamper evidence and content-store round trips.

use dltsim::ledger::{verify_chain, Block, Chain, ContentStore, Hash, Transaction, TxKind};
use dltsim::{NodeId, SimTime};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn build(blocks: usize, txs_per_block: usize, seed: u64) -> Vec<Block> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = Chain::new();
    for h in 0..blocks as u64 {
        let txs = (0..txs_per_block)
            .map(|_| {
                let len = rng.random_range(0..64);
                let payload = (0..len).map(|_| rng.random()).collect();
                let kind = TxKind::ALL[rng.random_range(0..TxKind::ALL.len())];
                Transaction::new(NodeId(rng.random_range(0..8)), kind, payload, SimTime(rng.random()))
            })
            .collect();
        chain.append(txs, NodeId(h as u32 % 4), SimTime::from_ms(h * 1000));
    }
    chain.blocks().to_vec()
}

/// Every header and transaction field a block carries.
#[derive(Clone, Copy, Debug)]
enum Field {
    Height,
    Parent,
    Proposer,
    Timestamp,
    Nonce,
    BlockHash,
    TxId,
    TxSender,
    TxKind,
    TxPayload,
    TxSignature,
    TxCreatedAt,
    DropTx,
}

const FIELDS: [Field; 13] = [
    Field::Height,
    Field::Parent,
    Field::Proposer,
    Field::Timestamp,
    Field::Nonce,
    Field::BlockHash,
    Field::TxId,
    Field::TxSender,
    Field::TxKind,
    Field::TxPayload,
    Field::TxSignature,
    Field::TxCreatedAt,
    Field::DropTx,
];

fn flip(h: &mut Hash, bit: usize) {
    h.0[bit / 8 % 32] ^= 1 << (bit % 8);
}

fn mutate(b: &mut Block, field: Field, tx: usize, bit: usize) {
    match field {
        Field::Height => b.height ^= 1 << (bit % 64),
        Field::Parent => flip(&mut b.parent, bit),
        Field::Proposer => b.proposer.0 ^= 1 << (bit % 32),
        Field::Timestamp => b.timestamp.0 ^= 1 << (bit % 64),
        Field::Nonce => b.nonce ^= 1 << (bit % 64),
        Field::BlockHash => flip(&mut b.block_hash, bit),
        Field::DropTx => {
            let n = b.txs.len();
            b.txs.remove(tx % n);
        }
        _ => {
            let n = b.txs.len();
            let t = &mut b.txs[tx % n];
            match field {
                Field::TxId => flip(&mut t.tx_id, bit),
                Field::TxSender => t.sender.0 ^= 1 << (bit % 32),
                Field::TxKind => {
                    let i = TxKind::ALL.iter().position(|k| *k == t.kind).unwrap();
                    t.kind = TxKind::ALL[(i + 1 + bit % 5) % 6];
                }
                Field::TxPayload => match t.payload.len() {
                    0 => t.payload.push(bit as u8),
                    len => t.payload[bit / 8 % len] ^= 1 << (bit % 8),
                },
                Field::TxSignature => t.signature.0[bit / 8 % 64] ^= 1 << (bit % 8),
                Field::TxCreatedAt => t.created_at.0 ^= 1 << (bit % 64),
                _ => unreachable!(),
            }
        }
    }
}

fn is_tx_field(f: Field) -> bool {
    !matches!(
        f,
        Field::Height | Field::Parent | Field::Proposer | Field::Timestamp | Field::Nonce | Field::BlockHash
    )
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 512,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn any_field_mutation_breaks_verification(
        seed in any::<u64>(),
        len in 2usize..12,
        block in any::<prop::sample::Index>(),
        field in 0usize..FIELDS.len(),
        tx in any::<usize>(),
        bit in any::<usize>(),
    ) {
        let mut chain = build(len, 3, seed);
        prop_assert!(verify_chain(&chain));
        // genesis carries no transactions, so tx fields pick a later block
        let i = if is_tx_field(FIELDS[field]) {
            1 + block.index(chain.len() - 1)
        } else {
            block.index(chain.len())
        };
        mutate(&mut chain[i], FIELDS[field], tx, bit);
        prop_assert!(!verify_chain(&chain));
    }

    #[test]
    fn rehashing_a_mutated_block_still_breaks_its_child(
        seed in any::<u64>(),
        len in 3usize..10,
        block in any::<prop::sample::Index>(),
        bit in any::<usize>(),
    ) {
        let mut chain = build(len, 2, seed);
        // any block with a successor, genesis excluded
        let i = 1 + block.index(chain.len() - 2);
        mutate(&mut chain[i], Field::TxPayload, 0, bit);
        chain[i].rehash();
        prop_assert!(!verify_chain(&chain));
    }
}

#[test]
fn reordering_or_dropping_blocks_breaks_verification() {
    let chain = build(6, 2, 7);
    let mut swapped = chain.clone();
    swapped.swap(2, 3);
    assert!(!verify_chain(&swapped));
    let mut dropped = chain.clone();
    dropped.remove(3);
    assert!(!verify_chain(&dropped));
    assert!(verify_chain(&chain[..4]));
}

#[test]
fn store_round_trips_random_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ContentStore::new();
    let mut keys = Vec::new();
    for _ in 0..1000 {
        let len = rng.random_range(1..4096);
        let blob: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let key = store.store_blob(&blob).unwrap();
        assert_eq!(key, Hash::digest(&blob));
        keys.push((key, blob));
    }
    for (key, blob) in &keys {
        assert_eq!(store.retrieve(key), Some(blob.as_slice()));
    }
    assert_eq!(store.len(), 1000);
    assert_eq!(store.total_bytes(), keys.iter().map(|(_, b)| b.len() as u64).sum::<u64>());
    assert!(store.is_consistent());
}
