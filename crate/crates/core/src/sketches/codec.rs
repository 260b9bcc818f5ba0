//! Binary encoding of sketch state.
//!
//! Layout (little-endian): magic `SKSK`, `u16` version, `u8` kind, `u8`
//! reserved (zero), `u64` n, `u64` d, `u64` seed, kind parameters, then every
//! cell as an `f64`. Two encodings can be merged only if everything before
//! the cells is byte-identical.

use super::{AmsM, CountSketchM, EstimatorM, LinearSketch};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SKSK";
pub const VERSION: u16 = 1;

const KIND_AMS: u8 = 1;
const KIND_COUNTSKETCH: u8 = 2;
const KIND_ESTIMATOR: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum Sketch {
    Ams(AmsM),
    CountSketch(CountSketchM),
    Estimator(EstimatorM),
}

impl Sketch {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Sketch::Ams(_) => "ams",
            Sketch::CountSketch(_) => "countsketch",
            Sketch::Estimator(_) => "estimator",
        }
    }

    pub fn merge(&mut self, other: &Sketch) -> Result<()> {
        match (self, other) {
            (Sketch::Ams(a), Sketch::Ams(b)) => a.merge(b),
            (Sketch::CountSketch(a), Sketch::CountSketch(b)) => a.merge(b),
            (Sketch::Estimator(a), Sketch::Estimator(b)) => a.merge(b),
            _ => Err(Error::ParameterMismatch),
        }
    }
}

impl From<AmsM> for Sketch {
    fn from(s: AmsM) -> Self {
        Sketch::Ams(s)
    }
}

impl From<CountSketchM> for Sketch {
    fn from(s: CountSketchM) -> Self {
        Sketch::CountSketch(s)
    }
}

impl From<EstimatorM> for Sketch {
    fn from(s: EstimatorM) -> Self {
        Sketch::Estimator(s)
    }
}

fn header(kind: u8, n: usize, d: usize, seed: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    out.push(0);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

pub fn encode(s: &Sketch) -> Vec<u8> {
    let (mut out, cells) = match s {
        Sketch::Ams(a) => {
            let mut h = header(KIND_AMS, a.n(), a.d(), a.seed());
            h.extend_from_slice(&a.eps().to_le_bytes());
            put_u32(&mut h, a.groups());
            put_u32(&mut h, a.per_group());
            (h, a.dense_cells())
        }
        Sketch::CountSketch(c) => {
            let mut h = header(KIND_COUNTSKETCH, c.n(), c.d(), c.seed());
            put_u32(&mut h, c.rows());
            put_u32(&mut h, c.buckets());
            (h, c.dense_cells())
        }
        Sketch::Estimator(e) => {
            let mut h = header(KIND_ESTIMATOR, e.n(), e.d(), e.seed());
            put_u32(&mut h, e.level_count());
            put_u32(&mut h, e.r0());
            put_u32(&mut h, e.b0());
            h.extend_from_slice(&e.xi().to_le_bytes());
            (h, e.dense_cells())
        }
    };
    out.reserve(cells.len() * 8);
    for x in cells {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < k {
            return Err(Error::Decode(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        let v = usize::try_from(v).map_err(|_| Error::Decode(format!("{what} too large")))?;
        if v == 0 {
            return Err(Error::Decode(format!("{what} must be positive")));
        }
        Ok(v)
    }

    /// Reads exactly `count` finite cells and requires the input to end there.
    fn cells(&mut self, count: Option<usize>) -> Result<Vec<f64>> {
        let count = count.ok_or_else(|| Error::Decode("cell count overflows".into()))?;
        let rest = self.buf.len() - self.pos;
        if count.checked_mul(8) != Some(rest) {
            return Err(Error::Decode(format!(
                "expected {count} cells, found {rest} trailing bytes"
            )));
        }
        let mut out = Vec::with_capacity(count);
        for chunk in self.buf[self.pos..].chunks_exact(8) {
            let x = f64::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::Decode("non-finite cell value".into()));
            }
            out.push(x);
        }
        self.pos = self.buf.len();
        Ok(out)
    }
}

fn decode_err(e: Error) -> Error {
    match e {
        Error::Decode(_) => e,
        other => Error::Decode(other.to_string()),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Sketch> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let kind = r.u8()?;
    if r.u8()? != 0 {
        return Err(Error::Decode("reserved byte must be zero".into()));
    }
    let n = r.usize("n")?;
    let d = r.usize("d")?;
    let seed = r.u64()?;
    match kind {
        KIND_AMS => {
            let eps = r.f64()?;
            let groups = r.u32()?;
            let per_group = r.u32()?;
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Decode("AMS epsilon must be positive".into()));
            }
            let count = groups.checked_mul(per_group).and_then(|x| x.checked_mul(d));
            let cells = r.cells(count)?;
            let mut s = AmsM::with_layout(n, d, eps, groups, per_group, seed).map_err(decode_err)?;
            s.cells_mut().copy_from_slice(&cells);
            Ok(Sketch::Ams(s))
        }
        KIND_COUNTSKETCH => {
            let rows = r.u32()?;
            let b = r.u32()?;
            let count = rows.checked_mul(b).and_then(|x| x.checked_mul(d));
            let cells = r.cells(count)?;
            CountSketchM::from_dense(n, d, rows, b, seed, &cells)
                .map(Sketch::CountSketch)
                .map_err(decode_err)
        }
        KIND_ESTIMATOR => {
            let levels = r.u32()?;
            let r0 = r.u32()?;
            let b0 = r.u32()?;
            let xi = r.f64()?;
            if levels > 65 {
                return Err(Error::Decode(format!("{levels} levels")));
            }
            let count = levels
                .checked_mul(r0)
                .and_then(|x| x.checked_mul(b0))
                .and_then(|x| x.checked_mul(d));
            let cells = r.cells(count)?;
            EstimatorM::from_dense(n, d, r0, b0, xi, seed, levels, &cells)
                .map(Sketch::Estimator)
                .map_err(decode_err)
        }
        other => Err(Error::Decode(format!("unknown sketch kind {other}"))),
    }
}

/// Length of the header (everything before the cells) of a valid encoding.
fn header_len(bytes: &[u8]) -> Result<usize> {
    let base = 32;
    let params = match bytes.get(6) {
        Some(&KIND_AMS) => 16,
        Some(&KIND_COUNTSKETCH) => 8,
        Some(&KIND_ESTIMATOR) => 20,
        _ => return Err(Error::Decode("unknown sketch kind".into())),
    };
    Ok(base + params)
}

/// Merges two encodings; their headers must be byte-identical.
pub fn merge_encoded(a: &[u8], b: &[u8]) -> Result<Vec<u8>> {
    let mut sa = decode(a)?;
    let sb = decode(b)?;
    let h = header_len(a)?;
    if a.len() < h || b.len() < h || a[..h] != b[..h] {
        return Err(Error::ParameterMismatch);
    }
    sa.merge(&sb)?;
    Ok(encode(&sa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::TurnstileUpdate;

    fn samples() -> Vec<Sketch> {
        let mut a = AmsM::new(5, 3, 0.5, 7).unwrap();
        a.update(TurnstileUpdate::new(1, 2, -3.0)).unwrap();
        let mut c = CountSketchM::new(5, 3, 3, 8, 7).unwrap();
        c.update_row(4, &[1.0, 0.0, -0.0]).unwrap();
        let mut e = EstimatorM::with_params(5, 3, 2, 4, 4.0, 7).unwrap();
        e.update(TurnstileUpdate::new(0, 0, 2.0)).unwrap();
        vec![a.into(), c.into(), e.into()]
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for s in samples() {
            let bytes = encode(&s);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, s);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn merge_requires_identical_headers() {
        let s = samples();
        let a = encode(&s[0]);
        let merged = merge_encoded(&a, &a).unwrap();
        let Sketch::Ams(m) = decode(&merged).unwrap() else { panic!() };
        let Sketch::Ams(orig) = &s[0] else { panic!() };
        assert_eq!(m.dense_cells(), orig.dense_cells().iter().map(|x| 2.0 * x).collect::<Vec<_>>());
        assert_eq!(merge_encoded(&a, &encode(&s[1])), Err(Error::ParameterMismatch));
        let other = encode(&AmsM::new(5, 3, 0.5, 8).unwrap().into());
        assert_eq!(merge_encoded(&a, &other), Err(Error::ParameterMismatch));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&samples()[1]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(&bytes[..10]).is_err());
        assert!(decode(b"").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        let last = bad.len() - 8;
        bad[last..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&bad).is_err());
        let mut huge = bytes[..40].to_vec();
        huge[32..36].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[36..40].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&huge).is_err());
    }
}
