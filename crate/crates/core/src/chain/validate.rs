use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::types::{OutPoint, Output, Transaction};

/// The set of unspent outputs, keyed by outpoint. Ordered so that snapshots
/// compare and iterate deterministically.
pub type UtxoSet = BTreeMap<OutPoint, Output>;

/// Read access to a set of unspent outputs.
pub trait UtxoView {
    fn get_output(&self, outpoint: &OutPoint) -> Option<&Output>;
}

impl UtxoView for UtxoSet {
    fn get_output(&self, outpoint: &OutPoint) -> Option<&Output> {
        self.get(outpoint)
    }
}

/// First rule a transaction broke.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxViolation {
    #[error("input {input} references an outpoint that is not unspent")]
    MissingOutpoint { input: usize },
    #[error("input {input} witness does not satisfy the spending condition")]
    BadWitness { input: usize },
    #[error("outputs ({outputs}) exceed inputs ({inputs})")]
    Overspend { inputs: u128, outputs: u128 },
    #[error("input {input} spends an outpoint already spent earlier in the transaction")]
    InternalDoubleSpend { input: usize },
    #[error("non-coinbase transaction needs at least one input and one output")]
    Structure,
}

/// Checks a non-coinbase transaction against a UTXO view.
///
/// Inputs are examined in order; for each one the double-spend, presence and
/// witness rules are applied before moving on, so the reported violation is
/// the first one encountered. Value conservation is checked last.
pub fn validate_transaction(tx: &Transaction, utxo: &impl UtxoView) -> Result<(), TxViolation> {
    if tx.inputs.is_empty() || tx.outputs.is_empty() {
        return Err(TxViolation::Structure);
    }
    let mut seen = BTreeSet::new();
    let mut total_in: u128 = 0;
    for (i, input) in tx.inputs.iter().enumerate() {
        if !seen.insert(input.outpoint) {
            return Err(TxViolation::InternalDoubleSpend { input: i });
        }
        let spent = utxo
            .get_output(&input.outpoint)
            .ok_or(TxViolation::MissingOutpoint { input: i })?;
        if spent.spending_condition != input.witness {
            return Err(TxViolation::BadWitness { input: i });
        }
        total_in += u128::from(spent.amount);
    }
    let total_out: u128 = tx.outputs.iter().map(|o| u128::from(o.amount)).sum();
    if total_out > total_in {
        return Err(TxViolation::Overspend {
            inputs: total_in,
            outputs: total_out,
        });
    }
    Ok(())
}

/// Removes spent outputs and adds created ones. The transaction must already
/// be valid against `utxo` (coinbases are always applicable).
pub fn apply_transaction(utxo: &mut UtxoSet, tx: &Transaction) {
    for input in &tx.inputs {
        utxo.remove(&input.outpoint);
    }
    let txid = tx.hash();
    for (index, output) in tx.outputs.iter().enumerate() {
        utxo.insert(
            OutPoint {
                txid,
                index: index as u32,
            },
            output.clone(),
        );
    }
}
