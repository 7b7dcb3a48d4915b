//! Byte-exact binary encoding of coalition messages for stream transports.
//!
//! Every frame is a 4-byte big-endian body length followed by the body. All
//! integers and floats are big-endian; floats are IEEE-754 binary64.
//!
//! ```text
//! body      = kind:u8 sender:u16 seq:u64 payload
//! kind      = 1 BEST_SOLUTION | 2 WEIGHT_MATRIX | 3 PARAMS_EXCHANGE | 4 STOP
//! solution  = n_routes:u16 { len:u32 { task:u32 }*len }*n_routes
//!             makespan:f64 cost:f64 complete:u8
//! weights   = rows:u16 cols:u16 { w:f64 }*(rows*cols)        row-major
//! params    = robot:u16 n:u32 capacity:f64 { duration:f64 }*n { demand:f64 }*n
//!             { setup_time:f64 }*(n+1)^2 { setup_cost:f64 }*(n+1)^2
//! stop      = 0:u8 | 1:u8 solution
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{CoalitionMessage, ParamsBlock, Payload};
use crate::agent::WeightMatrix;
use crate::schedule::{Genotype, Solution};

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: usize = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("invalid payload: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const KIND_BEST_SOLUTION: u8 = 1;
pub const KIND_WEIGHT_MATRIX: u8 = 2;
pub const KIND_PARAMS_EXCHANGE: u8 = 3;
pub const KIND_STOP: u8 = 4;

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_be_bytes());
    }
}

fn put_solution(buf: &mut Vec<u8>, s: &Solution) -> Result<(), WireError> {
    let routes = &s.genotype.routes;
    let n = u16::try_from(routes.len()).map_err(|_| WireError::Invalid("too many routes".into()))?;
    buf.extend_from_slice(&n.to_be_bytes());
    for route in routes {
        buf.extend_from_slice(&(route.len() as u32).to_be_bytes());
        for &t in route {
            let t = u32::try_from(t).map_err(|_| WireError::Invalid("task index overflow".into()))?;
            buf.extend_from_slice(&t.to_be_bytes());
        }
    }
    put_f64s(buf, &[s.makespan, s.cost]);
    buf.push(s.complete as u8);
    Ok(())
}

/// Body bytes of a message, without the length prefix.
pub fn encode_body(msg: &CoalitionMessage) -> Result<Vec<u8>, WireError> {
    let mut buf = Vec::with_capacity(64);
    buf.push(msg.payload.kind());
    buf.extend_from_slice(&msg.sender.to_be_bytes());
    buf.extend_from_slice(&msg.seq.to_be_bytes());
    match &msg.payload {
        Payload::BestSolution(s) => put_solution(&mut buf, s)?,
        Payload::WeightMatrix(w) => {
            let (rows, cols) = w.shape();
            let dims = (u16::try_from(rows), u16::try_from(cols));
            let (Ok(rows), Ok(cols)) = dims else {
                return Err(WireError::Invalid("weight matrix too large".into()));
            };
            buf.extend_from_slice(&rows.to_be_bytes());
            buf.extend_from_slice(&cols.to_be_bytes());
            put_f64s(&mut buf, w.values());
        }
        Payload::ParamsExchange(p) => {
            buf.extend_from_slice(&p.robot.to_be_bytes());
            buf.extend_from_slice(&(p.duration.len() as u32).to_be_bytes());
            put_f64s(&mut buf, &[p.capacity]);
            put_f64s(&mut buf, &p.duration);
            put_f64s(&mut buf, &p.demand);
            put_f64s(&mut buf, &p.setup_time);
            put_f64s(&mut buf, &p.setup_cost);
        }
        Payload::Stop(None) => buf.push(0),
        Payload::Stop(Some(s)) => {
            buf.push(1);
            put_solution(&mut buf, s)?;
        }
    }
    Ok(buf)
}

/// Length-prefixed frame.
pub fn encode(msg: &CoalitionMessage) -> Result<Vec<u8>, WireError> {
    let body = encode_body(msg)?;
    if body.len() > MAX_FRAME {
        return Err(WireError::TooLarge(body.len()));
    }
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, WireError> {
        if self.buf.len() / 8 < n {
            return Err(WireError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn solution(&mut self) -> Result<Solution, WireError> {
        let n_routes = self.u16()? as usize;
        let mut routes = Vec::with_capacity(n_routes);
        for _ in 0..n_routes {
            let len = self.u32()? as usize;
            if self.buf.len() / 4 < len {
                return Err(WireError::Truncated);
            }
            routes.push((0..len).map(|_| self.u32().map(|t| t as usize)).collect::<Result<Vec<_>, _>>()?);
        }
        let makespan = self.f64()?;
        let cost = self.f64()?;
        let complete = match self.u8()? {
            0 => false,
            1 => true,
            b => return Err(WireError::Invalid(format!("complete flag {b}"))),
        };
        Ok(Solution {
            genotype: Genotype::new(routes),
            makespan,
            cost,
            complete,
        })
    }
}

/// Parses a message body (the bytes after the length prefix).
pub fn decode_body(body: &[u8]) -> Result<CoalitionMessage, WireError> {
    let mut c = Cursor { buf: body };
    let kind = c.u8()?;
    let sender = c.u16()?;
    let seq = c.u64()?;
    let payload = match kind {
        KIND_BEST_SOLUTION => Payload::BestSolution(c.solution()?),
        KIND_WEIGHT_MATRIX => {
            let rows = c.u16()? as usize;
            let cols = c.u16()? as usize;
            let data = c.f64s(rows * cols)?;
            let rows: Vec<Vec<f64>> = if cols == 0 {
                vec![Vec::new(); rows]
            } else {
                data.chunks(cols).map(<[f64]>::to_vec).collect()
            };
            Payload::WeightMatrix(WeightMatrix::from_rows(rows).map_err(|e| WireError::Invalid(e.to_string()))?)
        }
        KIND_PARAMS_EXCHANGE => {
            let robot = c.u16()?;
            let n = c.u32()? as usize;
            let capacity = c.f64()?;
            let duration = c.f64s(n)?;
            let demand = c.f64s(n)?;
            let nodes = (n + 1).checked_mul(n + 1).ok_or(WireError::Truncated)?;
            let setup_time = c.f64s(nodes)?;
            let setup_cost = c.f64s(nodes)?;
            Payload::ParamsExchange(ParamsBlock {
                robot,
                capacity,
                duration,
                demand,
                setup_time,
                setup_cost,
            })
        }
        KIND_STOP => match c.u8()? {
            0 => Payload::Stop(None),
            1 => Payload::Stop(Some(c.solution()?)),
            b => return Err(WireError::Invalid(format!("stop flag {b}"))),
        },
        k => return Err(WireError::UnknownKind(k)),
    };
    if !c.buf.is_empty() {
        return Err(WireError::TrailingBytes(c.buf.len()));
    }
    Ok(CoalitionMessage { sender, seq, payload })
}

pub fn write_frame<W: Write>(w: &mut W, msg: &CoalitionMessage) -> Result<(), WireError> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<CoalitionMessage>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => e.into(),
    })?;
    decode_body(&body).map(Some)
}
