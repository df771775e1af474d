use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoding::{put_bytes, put_varint, sha256d, DecodeError, Reader};

macro_rules! digest_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub const ZERO: Self = Self([0u8; 32]);

            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
                let mut out = [0u8; 32];
                hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), &self.to_hex()[..12])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

digest_newtype!(
    /// Double SHA-256 of a transaction's canonical encoding.
    TxHash
);
digest_newtype!(
    /// Double SHA-256 of a block's canonical encoding.
    BlockHash
);

/// Reference to output `index` of transaction `txid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OutPoint {
    pub txid: TxHash,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub amount: u64,
    /// Byte string a spender must present verbatim as its witness.
    pub spending_condition: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Input {
    pub outpoint: OutPoint,
    pub witness: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub inputs: Vec<Input>,
    pub outputs: Vec<Output>,
    /// Opaque application data; fake and malicious transactions carry their
    /// hidden message here.
    pub payload: Vec<u8>,
    pub nonce: u64,
}

impl Transaction {
    pub fn is_coinbase(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Canonical encoding:
    /// `varint #inputs, (txid 32B, index u32, varint witness-len, witness)*,
    /// varint #outputs, (amount u64, varint cond-len, cond)*,
    /// varint payload-len, payload, nonce u64`. Integers are little-endian.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        put_varint(out, self.inputs.len() as u64);
        for input in &self.inputs {
            out.extend_from_slice(input.outpoint.txid.as_bytes());
            out.extend_from_slice(&input.outpoint.index.to_le_bytes());
            put_bytes(out, &input.witness);
        }
        put_varint(out, self.outputs.len() as u64);
        for output in &self.outputs {
            out.extend_from_slice(&output.amount.to_le_bytes());
            put_bytes(out, &output.spending_condition);
        }
        put_bytes(out, &self.payload);
        out.extend_from_slice(&self.nonce.to_le_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        // An input is at least 32 + 4 + 1 bytes, an output at least 8 + 1.
        let n_inputs = r.count(37)?;
        let mut inputs = Vec::with_capacity(n_inputs);
        for _ in 0..n_inputs {
            let txid = TxHash(r.array()?);
            let index = r.u32_le()?;
            let witness = r.bytes()?.to_vec();
            inputs.push(Input {
                outpoint: OutPoint { txid, index },
                witness,
            });
        }
        let n_outputs = r.count(9)?;
        let mut outputs = Vec::with_capacity(n_outputs);
        for _ in 0..n_outputs {
            let amount = r.u64_le()?;
            let spending_condition = r.bytes()?.to_vec();
            outputs.push(Output {
                amount,
                spending_condition,
            });
        }
        let payload = r.bytes()?.to_vec();
        let nonce = r.u64_le()?;
        Ok(Self {
            inputs,
            outputs,
            payload,
            nonce,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tx = Self::decode_from(&mut r)?;
        if !r.is_empty() {
            return Err(r.error("trailing bytes after transaction"));
        }
        Ok(tx)
    }

    pub fn hash(&self) -> TxHash {
        hash_transaction(self)
    }
}

pub fn hash_transaction(tx: &Transaction) -> TxHash {
    TxHash(sha256d(&tx.encode()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    /// `BlockHash::ZERO` is reserved for the genesis block.
    pub prev: BlockHash,
    pub nonce: u64,
    pub txs: Vec<Transaction>,
    /// Not part of the encoding; it is implied by `prev`.
    pub height: u64,
}

impl Block {
    /// `prev 32B, nonce u64, varint #txs, txs`.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.prev.as_bytes());
        out.extend_from_slice(&self.nonce.to_le_bytes());
        put_varint(out, self.txs.len() as u64);
        for tx in &self.txs {
            tx.encode_into(out);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn encoded_len(&self) -> usize {
        self.encode().len()
    }

    /// Decodes the wire form; `height` is supplied by the caller because it
    /// is a property of the block's position, not of its bytes.
    pub fn decode_from(r: &mut Reader<'_>, height: u64) -> Result<Self, DecodeError> {
        let prev = BlockHash(r.array()?);
        let nonce = r.u64_le()?;
        // Smallest transaction: 1 + 1 + 1 + 8 bytes.
        let n = r.count(11)?;
        let mut txs = Vec::with_capacity(n);
        for _ in 0..n {
            txs.push(Transaction::decode_from(r)?);
        }
        Ok(Self {
            prev,
            nonce,
            txs,
            height,
        })
    }

    pub fn hash(&self) -> BlockHash {
        BlockHash(sha256d(&self.encode()))
    }

    pub fn is_genesis(&self) -> bool {
        self.prev == BlockHash::ZERO && self.height == 0
    }

    pub fn non_coinbase(&self) -> impl Iterator<Item = &Transaction> {
        self.txs.iter().filter(|tx| !tx.is_coinbase())
    }
}

/// Parameters of the deterministic genesis block. Its coinbase holds the
/// funding outputs that scenario transactions spend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisConfig {
    pub funding_outputs: u32,
    pub amount: u64,
    pub condition: Vec<u8>,
}

impl Default for GenesisConfig {
    fn default() -> Self {
        Self {
            funding_outputs: 16,
            amount: 1_000,
            condition: b"faucet".to_vec(),
        }
    }
}

impl GenesisConfig {
    pub fn coinbase(&self) -> Transaction {
        Transaction {
            inputs: Vec::new(),
            outputs: (0..self.funding_outputs)
                .map(|_| Output {
                    amount: self.amount,
                    spending_condition: self.condition.clone(),
                })
                .collect(),
            payload: b"genesis".to_vec(),
            nonce: 0,
        }
    }

    pub fn block(&self) -> Block {
        Block {
            prev: BlockHash::ZERO,
            nonce: 0,
            txs: vec![self.coinbase()],
            height: 0,
        }
    }

    pub fn funding_outpoint(&self, index: u32) -> OutPoint {
        OutPoint {
            txid: self.coinbase().hash(),
            index,
        }
    }

    /// A payload-carrying transaction spending funding output `index`.
    /// Identical `(index, payload)` pairs always produce the same hash.
    pub fn payload_transaction(&self, index: u32, payload: &[u8], recipient: &[u8]) -> Transaction {
        Transaction {
            inputs: vec![Input {
                outpoint: self.funding_outpoint(index),
                witness: self.condition.clone(),
            }],
            outputs: vec![Output {
                amount: self.amount,
                spending_condition: recipient.to_vec(),
            }],
            payload: payload.to_vec(),
            nonce: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tx(nonce: u64) -> Transaction {
        Transaction {
            inputs: vec![Input {
                outpoint: OutPoint {
                    txid: TxHash([7; 32]),
                    index: 3,
                },
                witness: b"w".to_vec(),
            }],
            outputs: vec![Output {
                amount: 10,
                spending_condition: b"c".to_vec(),
            }],
            payload: b"hello".to_vec(),
            nonce,
        }
    }

    #[test]
    fn identical_transactions_hash_equal() {
        assert_eq!(sample_tx(1).hash(), sample_tx(1).hash());
    }

    #[test]
    fn nonce_changes_hash() {
        assert_ne!(sample_tx(1).hash(), sample_tx(2).hash());
    }

    #[test]
    fn transaction_encoding_layout() {
        let bytes = sample_tx(5).encode();
        // 1 + (32 + 4 + 1 + 1) + 1 + (8 + 1 + 1) + (1 + 5) + 8
        assert_eq!(bytes.len(), 64);
        assert_eq!(bytes[0], 1);
        assert_eq!(&bytes[bytes.len() - 8..], &5u64.to_le_bytes());
        assert_eq!(Transaction::decode(&bytes).unwrap(), sample_tx(5));
    }

    #[test]
    fn decode_rejects_trailing_bytes() {
        let mut bytes = sample_tx(5).encode();
        bytes.push(0);
        let err = Transaction::decode(&bytes).unwrap_err();
        assert_eq!(err.offset, 64);
    }

    #[test]
    fn genesis_is_deterministic() {
        let g = GenesisConfig::default();
        assert_eq!(g.block().hash(), g.block().hash());
        assert!(g.block().is_genesis());
        assert_eq!(g.coinbase().outputs.len(), 16);
    }

    #[test]
    fn hash_hex_round_trip() {
        let h = sample_tx(9).hash();
        assert_eq!(TxHash::from_hex(&h.to_hex()).unwrap(), h);
    }
}
