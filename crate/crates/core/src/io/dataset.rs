//! Dataset file: magic, version, record count, then per record a label,
//! domain, patient id, input mode and an embedded tensor container.

use super::container::{decode_tensor, encode_tensor, Dtype, Reader};
use super::IoError;
use crate::data::{ArtifactClass, Dataset, Domain, InputMode, Sample};

pub const DATASET_MAGIC: [u8; 4] = *b"UDS1";
pub const DATASET_VERSION: u8 = 1;
pub const UNLABELED: u8 = 255;

fn mode_code(mode: InputMode) -> u8 {
    match mode {
        InputMode::Spatial => 0,
        InputMode::Kspace => 1,
    }
}

pub fn encode_dataset(ds: &Dataset, dtype: Dtype) -> Result<Vec<u8>, IoError> {
    let count = u32::try_from(ds.len()).map_err(|_| IoError::DimOverflow(vec![ds.len() as u64]))?;
    let per_record = 11 + 7 + 12 + ds.height * ds.width * ds.mode.channels() * dtype.size();
    let mut out = Vec::with_capacity(9 + ds.len() * per_record);
    out.extend_from_slice(&DATASET_MAGIC);
    out.push(DATASET_VERSION);
    out.extend_from_slice(&count.to_le_bytes());
    for (index, s) in ds.samples.iter().enumerate() {
        if s.input.shape() != ds.sample_shape() {
            return Err(IoError::Record { index, reason: format!("shape {:?} differs from the dataset", s.input.shape()) });
        }
        out.push(s.label.map_or(UNLABELED, |l| l.index() as u8));
        out.push(s.domain as u8);
        out.extend_from_slice(&s.patient.to_le_bytes());
        out.push(mode_code(ds.mode));
        let stored = match ds.mode {
            InputMode::Spatial => s.input.clone().reshaped(vec![ds.height, ds.width])?,
            InputMode::Kspace => s.input.clone(),
        };
        encode_tensor(&stored, dtype, &mut out)?;
    }
    Ok(out)
}

/// Parses a dataset file. An empty file yields an empty spatial dataset of
/// zero size.
pub fn decode_dataset(bytes: &[u8]) -> Result<(Dataset, Dtype), IoError> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u8()?;
    if version != DATASET_VERSION {
        return Err(IoError::Version(version));
    }
    let count = r.u32()? as usize;
    let mut ds: Option<Dataset> = None;
    let mut dtype = Dtype::F32;
    for index in 0..count {
        let bad = |reason: String| IoError::Record { index, reason };
        let label = match r.u8()? {
            UNLABELED => None,
            l => Some(ArtifactClass::from_index(l as usize).ok_or_else(|| bad(format!("label {l}")))?),
        };
        let domain = match r.u8()? {
            0 => Domain::Source,
            1 => Domain::Target,
            d => return Err(bad(format!("domain {d}"))),
        };
        let patient = r.u32()?;
        let mode = match r.u8()? {
            0 => InputMode::Spatial,
            1 => InputMode::Kspace,
            m => return Err(bad(format!("input mode {m}"))),
        };
        let (t, dt) = decode_tensor(&mut r)?;
        let (h, w, input) = match (mode, t.shape()) {
            (InputMode::Spatial, &[h, w]) => (h, w, t.reshaped(vec![1, h, w])?),
            (InputMode::Kspace, &[2, h, w]) => (h, w, t),
            (_, shape) => return Err(bad(format!("shape {shape:?} does not fit input mode {mode:?}"))),
        };
        let ds = ds.get_or_insert_with(|| {
            dtype = dt;
            Dataset::new(mode, h, w)
        });
        if (ds.mode, ds.height, ds.width) != (mode, h, w) {
            return Err(bad("records disagree on input mode or size".into()));
        }
        ds.samples.push(Sample { input, label, domain, patient });
    }
    if r.remaining() > 0 {
        return Err(IoError::TrailingBytes(r.remaining()));
    }
    Ok((ds.unwrap_or_else(|| Dataset::new(InputMode::Spatial, 0, 0)), dtype))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::Tensor;

    fn tiny(mode: InputMode) -> Dataset {
        let mut ds = Dataset::new(mode, 2, 3);
        let c = mode.channels();
        for i in 0..3u32 {
            let data = (0..c * 6).map(|k| (k as f64 + i as f64) * 0.25).collect();
            ds.samples.push(Sample {
                input: Tensor::new(vec![c, 2, 3], data).unwrap(),
                label: if i == 1 { None } else { ArtifactClass::from_index(i as usize) },
                domain: Domain::Target,
                patient: 40 + i,
            });
        }
        ds
    }

    #[test]
    fn round_trips() {
        for mode in [InputMode::Spatial, InputMode::Kspace] {
            for dtype in [Dtype::F32, Dtype::F64] {
                let ds = tiny(mode);
                let (back, dt) = decode_dataset(&encode_dataset(&ds, dtype).unwrap()).unwrap();
                assert_eq!(back, ds);
                assert_eq!(dt, dtype);
            }
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::new(InputMode::Spatial, 0, 0);
        let bytes = encode_dataset(&ds, Dtype::F32).unwrap();
        assert_eq!(bytes, b"UDS1\x01\x00\x00\x00\x00");
        assert_eq!(decode_dataset(&bytes).unwrap().0, ds);
    }

    #[test]
    fn bad_label_is_rejected() {
        let mut bytes = encode_dataset(&tiny(InputMode::Spatial), Dtype::F32).unwrap();
        bytes[9] = 7;
        assert!(matches!(decode_dataset(&bytes), Err(IoError::Record { index: 0, .. })));
    }
}
