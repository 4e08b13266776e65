//! Client/server message encoding.
//!
//! Every message is framed as:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `FPPM`                            |
//! | 1     | format version (`1`)                    |
//! | 1     | message tag                             |
//! | 4     | body length in bytes, `u32` LE          |
//! | n     | body                                    |
//!
//! Bodies use little-endian fixed-width fields:
//!
//! * tag 1 `ModelBroadcast`: round `u64`, count `u64`, `count` × `f64`
//! * tag 2 `LossReport`: round `u64`, client `u64`, loss `f64`
//! * tag 3 `PlainUpdate`: round `u64`, client `u64`, count `u64`, `count` × `f64`
//! * tag 4 `MaskedUpdate`: round `u64`, client `u64`, count `u64`, `count` × `i128`
//! * tag 5 `SelectionNotice`: round `u64`, client `u64`, role `u8` (0 evaluate, 1 train)

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::secure::FixedPointVector;

pub const MAGIC: [u8; 4] = *b"FPPM";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Evaluate,
    Train,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    ModelBroadcast { round: u64, params: ParamVector },
    LossReport { round: u64, client: u64, loss: f64 },
    PlainUpdate { round: u64, client: u64, params: ParamVector },
    MaskedUpdate { round: u64, client: u64, values: FixedPointVector },
    SelectionNotice { round: u64, client: u64, role: Role },
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Message::ModelBroadcast { .. } => 1,
            Message::LossReport { .. } => 2,
            Message::PlainUpdate { .. } => 3,
            Message::MaskedUpdate { .. } => 4,
            Message::SelectionNotice { .. } => 5,
        }
    }
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn serialize(msg: &Message) -> Vec<u8> {
    let mut body = Vec::new();
    match msg {
        Message::ModelBroadcast { round, params } => {
            body.extend_from_slice(&round.to_le_bytes());
            put_f64s(&mut body, params.as_slice());
        }
        Message::LossReport { round, client, loss } => {
            body.extend_from_slice(&round.to_le_bytes());
            body.extend_from_slice(&client.to_le_bytes());
            body.extend_from_slice(&loss.to_le_bytes());
        }
        Message::PlainUpdate { round, client, params } => {
            body.extend_from_slice(&round.to_le_bytes());
            body.extend_from_slice(&client.to_le_bytes());
            put_f64s(&mut body, params.as_slice());
        }
        Message::MaskedUpdate { round, client, values } => {
            body.extend_from_slice(&round.to_le_bytes());
            body.extend_from_slice(&client.to_le_bytes());
            body.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values.as_slice() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        Message::SelectionNotice { round, client, role } => {
            body.extend_from_slice(&round.to_le_bytes());
            body.extend_from_slice(&client.to_le_bytes());
            body.push(match role {
                Role::Evaluate => 0,
                Role::Train => 1,
            });
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.tag());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Decode {
                offset: self.pos,
                reason: what,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn count(&mut self, width: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64("truncated element count")?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(width as u64).is_none_or(|bytes| bytes > remaining) {
            return Err(Error::Decode {
                offset: at,
                reason: "element count exceeds remaining bytes",
            });
        }
        Ok(n as usize)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64("truncated f64 array")).collect()
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Message> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "truncated magic")? != MAGIC {
        return Err(Error::Decode {
            offset: 0,
            reason: "bad magic",
        });
    }
    if r.u8("truncated version")? != VERSION {
        return Err(Error::Decode {
            offset: 4,
            reason: "unsupported version",
        });
    }
    let tag = r.u8("truncated tag")?;
    let len = u32::from_le_bytes(r.take(4, "truncated length")?.try_into().unwrap()) as usize;
    if bytes.len() - HEADER_LEN != len {
        return Err(Error::Decode {
            offset: 6,
            reason: "body length does not match frame",
        });
    }
    let msg = match tag {
        1 => Message::ModelBroadcast {
            round: r.u64("truncated round")?,
            params: ParamVector::new(r.f64s()?),
        },
        2 => Message::LossReport {
            round: r.u64("truncated round")?,
            client: r.u64("truncated client id")?,
            loss: r.f64("truncated loss")?,
        },
        3 => Message::PlainUpdate {
            round: r.u64("truncated round")?,
            client: r.u64("truncated client id")?,
            params: ParamVector::new(r.f64s()?),
        },
        4 => {
            let round = r.u64("truncated round")?;
            let client = r.u64("truncated client id")?;
            let n = r.count(16)?;
            let values = (0..n)
                .map(|_| Ok(i128::from_le_bytes(r.take(16, "truncated i128 array")?.try_into().unwrap())))
                .collect::<Result<Vec<_>>>()?;
            Message::MaskedUpdate {
                round,
                client,
                values: FixedPointVector::new(values),
            }
        }
        5 => {
            let round = r.u64("truncated round")?;
            let client = r.u64("truncated client id")?;
            let at = r.pos;
            let role = match r.u8("truncated role")? {
                0 => Role::Evaluate,
                1 => Role::Train,
                _ => {
                    return Err(Error::Decode {
                        offset: at,
                        reason: "unknown role",
                    })
                }
            };
            Message::SelectionNotice { round, client, role }
        }
        _ => {
            return Err(Error::Decode {
                offset: 5,
                reason: "unknown message tag",
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Decode {
            offset: r.pos,
            reason: "trailing bytes",
        });
    }
    Ok(msg)
}

/// Pass a message through the byte boundary.
pub fn transmit(msg: &Message) -> Result<Message> {
    deserialize(&serialize(msg))
}
