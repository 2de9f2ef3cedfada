//! Fixed-layout little-endian envelope encoding.
//!
//! ```text
//! envelope   := channel:u8 sender_island:u32 sender_rank:u32 sender_gid:u32 body
//! body       := individual                              (channel 0, intra-island)
//!             | mode:u8 coordinator:u32 individual      (channel 1, emigrant; u32::MAX = none)
//!             | identity                                (channel 2, deactivate)
//! individual := flags:u8 identity loss:f64 count:u32 gene*
//! identity   := island:u32 rank:u32 generation:u64
//! gene       := tag:u8 value:[u8; 8]    (0 real f64, 1 int i64, 2 category u64)
//! ```
//! Individual flags: bit 0 active, bit 1 loss present, bit 2 identity present.

use crate::engine::ExchangeMode;
use crate::space::{GeneValue, Identity, Individual};

use super::{Body, Envelope, TransportError, WorkerAddress};

const NO_COORDINATOR: u32 = u32::MAX;

pub fn encode(envelope: &Envelope, out: &mut Vec<u8>) {
    out.push(envelope.channel().index() as u8);
    let s = envelope.sender;
    out.extend_from_slice(&s.island.to_le_bytes());
    out.extend_from_slice(&s.rank.to_le_bytes());
    out.extend_from_slice(&s.global_id.to_le_bytes());
    match &envelope.body {
        Body::Result(ind) => encode_individual(ind, out),
        Body::Emigrant {
            individual,
            mode,
            coordinator,
        } => {
            out.push(match mode {
                ExchangeMode::Migration => 0,
                ExchangeMode::Pollination => 1,
            });
            out.extend_from_slice(&coordinator.unwrap_or(NO_COORDINATOR).to_le_bytes());
            encode_individual(individual, out);
        }
        Body::Deactivate(id) => encode_identity(id, out),
    }
}

pub fn to_bytes(envelope: &Envelope) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    encode(envelope, &mut out);
    out
}

fn encode_identity(id: &Identity, out: &mut Vec<u8>) {
    out.extend_from_slice(&id.island.to_le_bytes());
    out.extend_from_slice(&id.rank.to_le_bytes());
    out.extend_from_slice(&id.generation.to_le_bytes());
}

fn encode_individual(ind: &Individual, out: &mut Vec<u8>) {
    let flags = u8::from(ind.active) | u8::from(ind.is_evaluated()) << 1 | u8::from(ind.id.is_some()) << 2;
    out.push(flags);
    encode_identity(&ind.id.unwrap_or(Identity::new(0, 0, 0)), out);
    out.extend_from_slice(&ind.loss().unwrap_or(0.0).to_bits().to_le_bytes());
    out.extend_from_slice(&(ind.genes.len() as u32).to_le_bytes());
    for g in &ind.genes {
        let (tag, bits) = match *g {
            GeneValue::Real(v) => (0u8, v.to_bits()),
            GeneValue::Int(v) => (1, v as u64),
            GeneValue::Category(i) => (2, i as u64),
        };
        out.push(tag);
        out.extend_from_slice(&bits.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], TransportError> {
        if self.buf.len() < N {
            return Err(TransportError::Malformed("truncated envelope".into()));
        }
        let (head, rest) = self.buf.split_at(N);
        self.buf = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, TransportError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, TransportError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, TransportError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn identity(&mut self) -> Result<Identity, TransportError> {
        Ok(Identity::new(self.u32()?, self.u32()?, self.u64()?))
    }

    fn individual(&mut self) -> Result<Individual, TransportError> {
        let flags = self.u8()?;
        let id = self.identity()?;
        let loss = f64::from_bits(self.u64()?);
        let count = self.u32()? as usize;
        if count > self.buf.len() / 9 {
            return Err(TransportError::Malformed(format!("gene count {count} exceeds frame")));
        }
        let mut genes = Vec::with_capacity(count);
        for _ in 0..count {
            let tag = self.u8()?;
            let bits = self.u64()?;
            genes.push(match tag {
                0 => GeneValue::Real(f64::from_bits(bits)),
                1 => GeneValue::Int(bits as i64),
                2 => GeneValue::Category(bits as usize),
                t => return Err(TransportError::Malformed(format!("gene tag {t}"))),
            });
        }
        let mut ind = Individual::new(genes);
        ind.active = flags & 1 != 0;
        if flags & 2 != 0 {
            ind.set_loss(loss).expect("fresh individual");
        }
        if flags & 4 != 0 {
            ind.id = Some(id);
        }
        Ok(ind)
    }
}

pub fn decode(buf: &[u8]) -> Result<Envelope, TransportError> {
    let mut r = Reader { buf };
    let channel = r.u8()?;
    let sender = WorkerAddress {
        island: r.u32()?,
        rank: r.u32()?,
        global_id: r.u32()?,
    };
    let body = match channel {
        0 => Body::Result(r.individual()?),
        1 => {
            let mode = match r.u8()? {
                0 => ExchangeMode::Migration,
                1 => ExchangeMode::Pollination,
                m => return Err(TransportError::Malformed(format!("exchange mode {m}"))),
            };
            let coordinator = match r.u32()? {
                NO_COORDINATOR => None,
                c => Some(c),
            };
            Body::Emigrant {
                individual: r.individual()?,
                mode,
                coordinator,
            }
        }
        2 => Body::Deactivate(r.identity()?),
        c => return Err(TransportError::Malformed(format!("channel {c}"))),
    };
    if !r.buf.is_empty() {
        return Err(TransportError::Malformed(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(Envelope { sender, body })
}
