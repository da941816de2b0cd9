//! Tensor records: one JSON header line `{"order","shape","name"}` followed by
//! the row-major payload as little-endian `f64`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::DenseTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub order: usize,
    pub shape: Vec<usize>,
    pub name: String,
}

pub fn write_tensor<W: Write>(out: &mut W, name: &str, t: &DenseTensor) -> Result<()> {
    let header = TensorHeader {
        order: t.order(),
        shape: t.shape().to_vec(),
        name: name.to_string(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Reads one record. Returns `None` at a clean end of stream.
pub fn read_tensor<R: BufRead>(input: &mut R) -> Result<Option<(String, DenseTensor)>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let header: TensorHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("bad tensor header: {e}")))?;
    if header.order != header.shape.len() {
        return Err(Error::Format(format!(
            "header order {} disagrees with shape {:?}",
            header.order, header.shape
        )));
    }
    let len: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; len * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated payload for `{}`: {e}", header.name)))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Some((header.name, DenseTensor::new(header.shape, data)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    proptest! {
        #[test]
        fn records_round_trip(
            shape in proptest::collection::vec(1usize..4, 1..5),
            seed in any::<u64>(),
        ) {
            let mut s = seed;
            let t = DenseTensor::from_fn(&shape, |_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits(s >> 2) // arbitrary finite-ish bit patterns
            });
            let mut buf = Vec::new();
            write_tensor(&mut buf, "w", &t).unwrap();
            write_tensor(&mut buf, "second", &t).unwrap();
            let mut cur = Cursor::new(buf);
            let (n1, t1) = read_tensor(&mut cur).unwrap().unwrap();
            let (n2, t2) = read_tensor(&mut cur).unwrap().unwrap();
            prop_assert!(read_tensor(&mut cur).unwrap().is_none());
            prop_assert_eq!(n1, "w");
            prop_assert_eq!(n2, "second");
            prop_assert_eq!(t1.shape(), t.shape());
            let same = t1.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(t2.shape(), t.shape());
        }
    }

    #[test]
    fn header_line_is_plain_json() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, "core", &DenseTensor::ones(&[2, 1])).unwrap();
        let line_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..line_end]).unwrap(),
            r#"{"order":2,"shape":[2,1],"name":"core"}"#
        );
        assert_eq!(buf.len(), line_end + 1 + 16);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, "x", &DenseTensor::ones(&[3])).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_tensor(&mut Cursor::new(buf)), Err(Error::Format(_))));
    }
}
