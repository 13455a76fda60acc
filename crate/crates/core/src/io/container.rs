//! Binary tensor container: magic, version, dtype, rank, little-endian dims
//! and a row-major little-endian payload.

use super::IoError;
use crate::grad::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"UDA1";
pub const TENSOR_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, IoError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(IoError::Dtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Appends the container encoding of `t` to `out`.
pub fn encode_tensor(t: &Tensor, dtype: Dtype, out: &mut Vec<u8>) -> Result<(), IoError> {
    if t.shape().len() > u8::MAX as usize || t.shape().iter().any(|&d| d > u32::MAX as usize) {
        return Err(IoError::DimOverflow(t.shape().iter().map(|&d| d as u64).collect()));
    }
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(dtype.code());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(())
}

pub fn tensor_to_bytes(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::with_capacity(7 + 4 * t.shape().len() + t.len() * dtype.size());
    encode_tensor(t, dtype, &mut out)?;
    Ok(out)
}

/// Bounds-checked little-endian reader.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.remaining() < n {
            return Err(IoError::Truncated { offset: self.pos, needed: n - self.remaining() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), IoError> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("four bytes");
        if found != expected {
            return Err(IoError::BadMagic { found, expected });
        }
        Ok(())
    }
}

pub(crate) fn decode_tensor(r: &mut Reader<'_>) -> Result<(Tensor, Dtype), IoError> {
    r.magic(TENSOR_MAGIC)?;
    let version = r.u8()?;
    if version != TENSOR_VERSION {
        return Err(IoError::Version(version));
    }
    let dtype = Dtype::from_code(r.u8()?)?;
    let ndim = r.u8()? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.u32()? as u64);
    }
    let overflow = || IoError::DimOverflow(dims.clone());
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?)).ok_or_else(overflow)?;
    let bytes = count.checked_mul(dtype.size()).filter(|&b| b <= isize::MAX as usize).ok_or_else(overflow)?;
    let payload = r.take(bytes)?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect(),
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
    };
    let shape = dims.iter().map(|&d| d as usize).collect();
    Ok((Tensor::new(shape, data).expect("payload length matches dims"), dtype))
}

/// Parses exactly one container occupying all of `bytes`.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<(Tensor, Dtype), IoError> {
    let mut r = Reader::new(bytes);
    let out = decode_tensor(&mut r)?;
    if r.remaining() > 0 {
        return Err(IoError::TrailingBytes(r.remaining()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_exact() {
        let t = Tensor::new(vec![2, 3], vec![0.1, -2.5e-300, f64::MAX, 1.0 / 3.0, -0.0, 7.0]).unwrap();
        let (back, dtype) = tensor_from_bytes(&tensor_to_bytes(&t, Dtype::F64).unwrap()).unwrap();
        assert_eq!(dtype, Dtype::F64);
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn errors_are_distinct() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let good = tensor_to_bytes(&t, Dtype::F32).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(tensor_from_bytes(&bad), Err(IoError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(tensor_from_bytes(&bad), Err(IoError::Version(2))));
        let mut bad = good.clone();
        bad[5] = 9;
        assert!(matches!(tensor_from_bytes(&bad), Err(IoError::Dtype(9))));
        assert!(matches!(tensor_from_bytes(&good[..good.len() - 1]), Err(IoError::Truncated { .. })));
        let mut huge = b"UDA1\x01\x01\x03".to_vec();
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(tensor_from_bytes(&huge), Err(IoError::DimOverflow(_))));
    }
}
