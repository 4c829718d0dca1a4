//! Parameter checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"JGCKPT\0\0"
//! version u32 (= 1)
//! count   u32
//! count x { name_len u32, name utf-8, ndim u32, dims u64 x ndim, values f64 x prod(dims) }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::array::DenseArray;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"JGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, records: &[(String, DenseArray)]) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, value) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.ndim() as u32).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for x in value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, DenseArray)>> {
    let bad = |what: &str| Error::Checkpoint(what.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad("truncated record name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("record name is not utf-8"))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| bad("truncated record values"))?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, DenseArray::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, records: &[(String, DenseArray)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, DenseArray)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated integer".into()))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_pinned() {
        let mut buf = Vec::new();
        let rec = vec![("w".to_string(), DenseArray::new([1], vec![1.0]).unwrap())];
        write_checkpoint(&mut buf, &rec).unwrap();
        let expected: Vec<u8> = [
            &b"JGCKPT\0\0"[..],
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            &1u32.to_le_bytes(),
            b"w",
            &1u32.to_le_bytes(),
            &1u64.to_le_bytes(),
            &1.0f64.to_le_bytes(),
        ]
        .concat();
        assert_eq!(buf, expected);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut buf = Vec::new();
        let rec = vec![("w".to_string(), DenseArray::zeros([3, 2]))];
        write_checkpoint(&mut buf, &rec).unwrap();
        buf.truncate(buf.len() - 3);
        assert_eq!(read_checkpoint(&buf[..]).unwrap_err().category(), "checkpoint");
    }

    proptest! {
        #[test]
        fn records_survive_a_round_trip(
            values in proptest::collection::vec(-1e6f64..1e6, 1..40),
            name in "[a-z.0-9]{1,12}",
        ) {
            let n = values.len();
            let rec = vec![(name, DenseArray::new([n], values).unwrap())];
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &rec).unwrap();
            let back = read_checkpoint(&buf[..]).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}
