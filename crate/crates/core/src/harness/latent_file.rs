//! Binary persistence for latent codes.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field        | type                                   |
//! |--------------|----------------------------------------|
//! | magic        | `b"EFNZ"`                              |
//! | version      | `u16`                                  |
//! | fingerprint  | `u64`                                  |
//! | method       | `u8` (see [`Method::tag`])             |
//! | T            | `u32`                                  |
//! | shape        | `u16` rank, then one `u64` per extent  |
//! | flags        | `u8`: bit 0 chain, bit 1 `z_1 = 0`, bit 2 condition |
//! | condition    | `u16` length + UTF-8 bytes, if flagged |
//! | payload      | `x_T`, `z_T … z_1`, then `x_T … x_0` if flagged, as `f64` |
//!
//! Readers accept every version from 1 up to [`FORMAT_VERSION`]; the layout
//! has not changed since version 1.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inversion::{LatentCode, Method};
use crate::numerics::Tensor;
use crate::schedule::Schedule;

pub const MAGIC: [u8; 4] = *b"EFNZ";
pub const FORMAT_VERSION: u16 = 1;

const FLAG_AUX: u8 = 1;
const FLAG_Z1: u8 = 1 << 1;
const FLAG_COND: u8 = 1 << 2;

pub fn encode_latent(code: &LatentCode) -> Result<Vec<u8>> {
    let shape = code.shape();
    let steps = code.steps();
    let numel: usize = shape.iter().product();
    let chain = code.aux_chain();
    let maps = 1 + steps + chain.map_or(0, |c| c.len());
    let mut out = Vec::with_capacity(64 + maps * numel * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&code.fingerprint().to_le_bytes());
    out.push(code.method().tag());
    let t = u32::try_from(steps).map_err(|_| Error::InvalidInput(format!("T = {steps} too large")))?;
    out.extend_from_slice(&t.to_le_bytes());
    let rank = u16::try_from(shape.len()).map_err(|_| Error::InvalidInput("rank too large".into()))?;
    out.extend_from_slice(&rank.to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    let mut flags = 0u8;
    if chain.is_some() {
        flags |= FLAG_AUX;
    }
    if code.z1_convention() {
        flags |= FLAG_Z1;
    }
    if code.cond().is_some() {
        flags |= FLAG_COND;
    }
    out.push(flags);
    if let Some(label) = code.cond() {
        let len = u16::try_from(label.len()).map_err(|_| Error::InvalidInput("condition label too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(label.as_bytes());
    }
    let mut put = |x: &Tensor| {
        for v in x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    put(code.x_t());
    for t in (1..=steps).rev() {
        put(code.z(t));
    }
    if let Some(chain) = chain {
        for x in chain.iter().rev() {
            put(x);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Corrupt(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn tensor(&mut self, shape: &[usize], numel: usize) -> Result<Tensor> {
        let bytes = self.take(numel * 8)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("bad payload: {e}")))
    }
}

pub fn decode_latent(buf: &[u8]) -> Result<LatentCode> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.array().map_err(|_| Error::Format("file too short for header".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.u16()?;
    if version == 0 || version > FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let fingerprint = r.u64()?;
    let tag = r.u8()?;
    let method = Method::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown method tag {tag}")))?;
    let steps = r.u32()? as usize;
    if steps == 0 {
        return Err(Error::Corrupt("T = 0".into()));
    }
    let rank = r.u16()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("extent overflows".into()))?;
        shape.push(e);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n > 0 && n.checked_mul(8).is_some())
        .ok_or_else(|| Error::Corrupt(format!("bad shape {shape:?}")))?;
    let flags = r.u8()?;
    if flags & !(FLAG_AUX | FLAG_Z1 | FLAG_COND) != 0 {
        return Err(Error::Format(format!("unknown flags {flags:#04x}")));
    }
    let cond = if flags & FLAG_COND != 0 {
        let len = r.u16()? as usize;
        let bytes = r.take(len)?;
        Some(String::from_utf8(bytes.to_vec()).map_err(|_| Error::Corrupt("condition label is not UTF-8".into()))?)
    } else {
        None
    };
    let maps = 1 + steps + if flags & FLAG_AUX != 0 { steps + 1 } else { 0 };
    let expected = maps
        .checked_mul(numel)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Corrupt("payload size overflows".into()))?;
    let remaining = buf.len() - r.pos;
    if remaining != expected {
        return Err(Error::Corrupt(format!("payload is {remaining} bytes, expected {expected}")));
    }
    let x_t = r.tensor(&shape, numel)?;
    let mut noise = Vec::with_capacity(steps);
    for _ in 0..steps {
        noise.push(r.tensor(&shape, numel)?);
    }
    noise.reverse();
    let aux = if flags & FLAG_AUX != 0 {
        let mut chain = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            chain.push(r.tensor(&shape, numel)?);
        }
        chain.reverse();
        Some(chain)
    } else {
        None
    };
    LatentCode::new(method, x_t, noise, aux, cond, fingerprint, flags & FLAG_Z1 != 0)
        .map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_latent(code: &LatentCode, path: &Path) -> Result<()> {
    let bytes = encode_latent(code)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_latent(path: &Path) -> Result<LatentCode> {
    decode_latent(&fs::read(path)?)
}

/// Loads a code and checks it against the schedule it will be used with.
pub fn load_latent_for(path: &Path, schedule: &Schedule) -> Result<LatentCode> {
    let code = load_latent(path)?;
    code.check_schedule(schedule)?;
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(aux: bool, cond: Option<&str>) -> LatentCode {
        let t = |v: f64| Tensor::new(&[2, 3], (0..6).map(|i| v + i as f64 * 0.25).collect()).unwrap();
        let noise = vec![t(1.0), t(-2.0), t(f64::MIN_POSITIVE)];
        let chain = aux.then(|| vec![t(0.5), t(1.5), t(2.5), t(3.5)]);
        LatentCode::new(Method::EditFriendly, t(9.0), noise, chain, cond.map(String::from), 0xdead_beef, false).unwrap()
    }

    #[test]
    fn round_trip() {
        for c in [code(true, Some("cat")), code(false, None), code(true, Some(""))] {
            assert_eq!(decode_latent(&encode_latent(&c).unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn header_layout() {
        let b = encode_latent(&code(false, None)).unwrap();
        assert_eq!(&b[..4], b"EFNZ");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u64::from_le_bytes(b[6..14].try_into().unwrap()), 0xdead_beef);
        assert_eq!(b[14], Method::EditFriendly.tag());
        assert_eq!(u32::from_le_bytes(b[15..19].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes([b[19], b[20]]), 2);
        assert_eq!(b[37], 0);
        assert_eq!(b.len(), 38 + 4 * 6 * 8);
        // x_T first, then z_T
        assert_eq!(f64::from_le_bytes(b[38..46].try_into().unwrap()), 9.0);
        assert_eq!(f64::from_le_bytes(b[86..94].try_into().unwrap()), f64::MIN_POSITIVE);
    }

    #[test]
    fn rejects_bad_files() {
        let good = encode_latent(&code(true, Some("a"))).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_latent(&bad), Err(Error::Format(_))));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode_latent(&v2), Err(Error::Format(_))));
        assert!(matches!(decode_latent(&good[..good.len() - 3]), Err(Error::Corrupt(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_latent(&long), Err(Error::Corrupt(_))));
        assert!(matches!(decode_latent(b"EF"), Err(Error::Format(_))));
    }
}
