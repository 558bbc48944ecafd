use super::{Digest, Transaction, SCHEMA_VERSION};
use crate::codec::{Canonical, DecodeError, EncodeError, Reader, Writer};
use crate::identity::{ActorIdentity, PublicKey, Signature};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: i64,
    pub transactions: Vec<Transaction>,
    pub proposer: String,
    pub signature: Signature,
    block_hash: Digest,
}

/// Digest over the stored transaction records:
/// `H(0x01 | count u32 | record...)`.
pub fn tx_root(txs: &[Transaction]) -> Result<Digest, EncodeError> {
    let mut w = Writer::new();
    w.u8(SCHEMA_VERSION);
    w.count("transactions", txs.len())?;
    for tx in txs {
        tx.encode(&mut w)?;
    }
    Ok(Digest::of(&w.into_bytes()))
}

fn tx_root_raw(records: &[&[u8]]) -> Digest {
    let mut buf = vec![SCHEMA_VERSION];
    buf.extend_from_slice(&(records.len() as u32).to_be_bytes());
    for r in records {
        buf.extend_from_slice(r);
    }
    Digest::of(&buf)
}

/// Header bytes signed by the proposer:
/// `0x01 | height u64 | prev_hash 32 | timestamp u64 | tx_root 32 | proposer`.
pub fn header_bytes(
    height: u64,
    prev_hash: &Digest,
    timestamp: i64,
    tx_root: &Digest,
    proposer: &str,
) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::new();
    w.u8(SCHEMA_VERSION);
    w.u64(height);
    w.raw(&prev_hash.0);
    w.timestamp("block.timestamp", timestamp)?;
    w.raw(&tx_root.0);
    w.str("proposer", proposer)?;
    Ok(w.into_bytes())
}

fn hash_of(header: &[u8], signature: &Signature) -> Digest {
    let mut buf = header.to_vec();
    buf.extend_from_slice(&signature.0);
    Digest::of(&buf)
}

impl Block {
    pub fn build(
        height: u64,
        prev_hash: Digest,
        timestamp: i64,
        transactions: Vec<Transaction>,
        proposer: &ActorIdentity,
    ) -> Result<Self, EncodeError> {
        let root = tx_root(&transactions)?;
        let header = header_bytes(height, &prev_hash, timestamp, &root, proposer.actor_id())?;
        let signature = proposer.sign(&header);
        Ok(Self {
            height,
            prev_hash,
            timestamp,
            transactions,
            proposer: proposer.actor_id().to_string(),
            block_hash: hash_of(&header, &signature),
            signature,
        })
    }

    /// Cached digest; `compute_hash` recomputes it.
    pub fn block_hash(&self) -> Digest {
        self.block_hash
    }

    pub fn header_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        header_bytes(
            self.height,
            &self.prev_hash,
            self.timestamp,
            &tx_root(&self.transactions)?,
            &self.proposer,
        )
    }

    pub fn compute_hash(&self) -> Result<Digest, EncodeError> {
        Ok(hash_of(&self.header_bytes()?, &self.signature))
    }

    pub fn verify_proposer(&self, key: &PublicKey) -> bool {
        self.header_bytes()
            .map(|h| key.verify(&h, &self.signature))
            .unwrap_or(false)
    }
}

/// Stored block record:
/// `header (u32-length-prefixed) | signature 64 | block_hash 32 | count u32 | tx record...`.
impl Canonical for Block {
    fn encode(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.bytes("header", &self.header_bytes()?)?;
        w.raw(&self.signature.0);
        w.raw(&self.block_hash.0);
        w.count("transactions", self.transactions.len())?;
        for tx in &self.transactions {
            tx.encode(w)?;
        }
        Ok(())
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let raw = RawBlock::parse(r)?;
        raw.decode()
    }
}

/// A block record split into its byte ranges, so verification can hash the
/// bytes exactly as stored instead of a re-encoding of decoded values.
pub(crate) struct RawBlock<'a> {
    pub header: &'a [u8],
    pub signature: Signature,
    pub block_hash: Digest,
    pub txs: Vec<RawTx<'a>>,
    pub tx_records: Vec<&'a [u8]>,
}

pub(crate) struct RawTx<'a> {
    pub body: &'a [u8],
    pub signature: Signature,
    pub tx_id: Digest,
}

pub(crate) struct Header {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: i64,
    pub tx_root: Digest,
    pub proposer: String,
}

impl<'a> RawBlock<'a> {
    pub fn parse(r: &mut Reader<'a>) -> Result<Self, DecodeError> {
        let header = r.bytes()?;
        let signature = Signature(r.array::<64>()?);
        let block_hash = Digest(r.array::<32>()?);
        let n = r.count(4 + 64 + 32)?;
        let mut txs = Vec::with_capacity(n);
        let mut tx_records = Vec::with_capacity(n);
        for _ in 0..n {
            let start = r.position();
            let body = r.bytes()?;
            let signature = Signature(r.array::<64>()?);
            let tx_id = Digest(r.array::<32>()?);
            txs.push(RawTx {
                body,
                signature,
                tx_id,
            });
            tx_records.push(r.slice_from(start));
        }
        Ok(Self {
            header,
            signature,
            block_hash,
            txs,
            tx_records,
        })
    }

    pub fn header(&self) -> Result<Header, DecodeError> {
        let mut h = Reader::new(self.header);
        if h.u8()? != SCHEMA_VERSION {
            return Err(h.invalid("schema version"));
        }
        let out = Header {
            height: h.u64()?,
            prev_hash: Digest(h.array::<32>()?),
            timestamp: h.timestamp()?,
            tx_root: Digest(h.array::<32>()?),
            proposer: h.string()?,
        };
        h.finish()?;
        Ok(out)
    }

    pub fn recomputed_hash(&self) -> Digest {
        hash_of(self.header, &self.signature)
    }

    pub fn recomputed_tx_root(&self) -> Digest {
        tx_root_raw(&self.tx_records)
    }

    pub fn decode(&self) -> Result<Block, DecodeError> {
        let h = self.header()?;
        let mut transactions = Vec::with_capacity(self.tx_records.len());
        for rec in &self.tx_records {
            transactions.push(Transaction::from_canonical_bytes(rec)?);
        }
        Ok(Block {
            height: h.height,
            prev_hash: h.prev_hash,
            timestamp: h.timestamp,
            transactions,
            proposer: h.proposer,
            signature: self.signature,
            block_hash: self.block_hash,
        })
    }
}
