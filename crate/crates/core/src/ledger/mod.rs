//! Hash-linked ledger structures, transaction model, wire sizing and the
//! content-addressed blob store.

mod chain;
mod dag;
mod hash;
pub mod sig;
mod store;
mod tx;
mod wire;

pub use chain::{audit_chain, hash_block, verify_chain, Block, Chain, ChainAudit, HeaderMidstate};
pub use dag::{attach_vertex, hash_vertex, Dag, DagError, DagVertex};
pub use hash::Hash;
pub use sig::Signature;
pub use store::{ContentStore, StoreError};
pub use tx::{Transaction, TxKind};
pub use wire::{wire_size, WireModelError, WireSizeModel};
