//! Flat binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "QNN1"
//! u32 entry count
//! per entry: u32 name length, UTF-8 name, u32 rank, rank × u64 extents
//! per entry, in manifest order: f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"QNN1";

pub fn write_params<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &e in p.value.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
    }
    for (_, p) in store.iter() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of data".into())
    } else {
        Error::Io(e)
    }
}

/// Named tensors in manifest order.
pub fn read_params<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut manifest = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| Ok(read_u64(&mut r)? as usize))
            .collect::<Result<Vec<_>>>()?;
        manifest.push((name, shape));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after parameter data".into()));
    }
    Ok(out)
}

/// Copies entries into `store`, which must hold the same names and shapes
/// in the same order.
pub fn load_into(store: &mut ParamStore, entries: Vec<(String, Tensor)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Format(format!(
            "{} entries for a model with {} parameters",
            entries.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, (name, value)) in ids.into_iter().zip(entries) {
        let p = store.get(id);
        if p.name != name || p.value.shape() != value.shape() {
            return Err(Error::Format(format!(
                "entry {name} {:?} does not match parameter {} {:?}",
                value.shape(),
                p.name,
                p.value.shape()
            )));
        }
        *store.value_mut(id) = value;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    write_params(store, BufWriter::new(File::create(path)?))
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let entries = read_params(BufReader::new(File::open(path)?))?;
    load_into(store, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::params::ParamRole;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            ParamRole::Transform,
            Tensor::new(
                vec![4, 1, 2],
                (0..8).map(|i| i as f64 * 0.5 - 1.0).collect(),
            )
            .unwrap(),
        );
        s.add(
            "ü.bias",
            ParamRole::Bias,
            Tensor::new(vec![3], vec![f64::MIN_POSITIVE, -0.0, 1e300]).unwrap(),
        );
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let mut buf = Vec::new();
        write_params(&s, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"QNN1");
        let entries = read_params(buf.as_slice()).unwrap();
        assert_eq!(entries[1].0, "ü.bias");
        let mut t = store();
        for v in t.ids().collect::<Vec<_>>() {
            *t.value_mut(v) = Tensor::zeros(s.value(v).shape());
        }
        load_into(&mut t, entries).unwrap();
        for id in s.ids() {
            let (a, b) = (s.value(id).data(), t.value(id).data());
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn byte_layout() {
        let mut s = ParamStore::new();
        s.add(
            "w",
            ParamRole::Bias,
            Tensor::new(vec![1], vec![1.0]).unwrap(),
        );
        let mut buf = Vec::new();
        write_params(&s, &mut buf).unwrap();
        let mut expected = b"QNN1".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.push(b'w');
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let mut buf = Vec::new();
        write_params(&store(), &mut buf).unwrap();
        assert!(matches!(
            read_params(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_params(bad.as_slice()), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            read_params(long.as_slice()),
            Err(Error::Format(_))
        ));
        let mut other = ParamStore::new();
        other.add("a.weight", ParamRole::Transform, Tensor::zeros(&[4, 2, 1]));
        other.add("ü.bias", ParamRole::Bias, Tensor::zeros(&[3]));
        assert!(matches!(
            load_into(&mut other, read_params(buf.as_slice()).unwrap()),
            Err(Error::Format(_))
        ));
    }
}
