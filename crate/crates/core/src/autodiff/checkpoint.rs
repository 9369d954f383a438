//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"KWSCLCKP"
//! version  u32 (= 1)
//! count    u32                      number of segments
//! repeated count times:
//!   name_len u32, name utf-8 bytes
//!   kind     u8   (0 = trainable, 1 = buffer)
//!   ndim     u32, dims u64 * ndim
//!   payload  f32 * prod(dims)
//! ```

use std::io::{Read, Write};

use super::params::{ParameterVector, SegmentKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"KWSCLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(out: &mut W, params: &ParameterVector) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for s in params.segments() {
        out.write_all(&(s.name.len() as u32).to_le_bytes())?;
        out.write_all(s.name.as_bytes())?;
        out.write_all(&[match s.kind {
            SegmentKind::Trainable => 0,
            SegmentKind::Buffer => 1,
        }])?;
        let shape = s.tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in s.tensor.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &ParameterVector) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<ParameterVector> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(input)?;
    let mut pv = ParameterVector::new();
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("segment name is not utf-8".into()))?;
        let mut kind = [0u8];
        input.read_exact(&mut kind)?;
        let kind = match kind[0] {
            0 => SegmentKind::Trainable,
            1 => SegmentKind::Buffer,
            k => return Err(Error::Checkpoint(format!("unknown segment kind {k}"))),
        };
        let ndim = read_u32(input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        pv.push(name, Tensor::new(shape, data)?, kind)?;
    }
    Ok(pv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_at_f32_precision() {
        let mut pv = ParameterVector::new();
        pv.push(
            "conv.weight",
            Tensor::new(vec![2, 1, 3], vec![0.5, -1.25, 3.0, 1e-3, 2.0, -0.0]).unwrap(),
            SegmentKind::Trainable,
        )
        .unwrap();
        pv.push(
            "bn.running_var",
            Tensor::filled(&[2], 1.0),
            SegmentKind::Buffer,
        )
        .unwrap();
        let bytes = checkpoint_bytes(&pv);
        let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.segment(1).kind, SegmentKind::Buffer);
        for (a, b) in back.flatten().iter().zip(pv.flatten()) {
            assert_eq!(*a, b as f32 as f64);
        }
        assert_eq!(checkpoint_bytes(&back), bytes);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_checkpoint(&mut &b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut bytes = checkpoint_bytes(&ParameterVector::new());
        bytes[8] = 9;
        assert!(matches!(
            read_checkpoint(&mut bytes.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
