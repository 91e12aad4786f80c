use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NumError, Real, Tensor};

/// Named collection of trainable arrays, iterated in name order so
/// every pass over the parameters is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<R> {
    entries: BTreeMap<String, Tensor<R>>,
}

impl<R: Real> ParameterStore<R> {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<R>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.entries.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor<R>, NumError> {
        self.entries.get(name).ok_or_else(|| NumError::Invalid {
            op: "store",
            msg: format!("missing parameter '{name}'"),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<R>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<R>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all arrays.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn cast<S: Real>(&self) -> ParameterStore<S> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

const MAGIC: &[u8; 4] = b"SRNN";
const VERSION: u32 = 1;

/// Write a checkpoint container.
///
/// Byte layout (all integers little-endian u32, values IEEE-754
/// binary32 little-endian, entries in ascending name order):
///
/// ```text
/// magic "SRNN" | version | entry count
/// per entry: name length | name bytes (UTF-8) | rank | dims... | values...
/// ```
pub fn save_checkpoint<R: Real>(store: &ParameterStore<R>, path: &Path) -> Result<(), NumError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            let f = v.to_f32().ok_or(NumError::NonFinite { op: "checkpoint" })?;
            w.write_all(&f.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint container written by [`save_checkpoint`].
pub fn load_checkpoint<R: Real>(path: &Path) -> Result<ParameterStore<R>, NumError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumError::BadCheckpoint(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NumError::BadCheckpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| NumError::BadCheckpoint(format!("non-UTF-8 name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(R::from_f64c(f32::from_le_bytes(buf) as f64));
        }
        store.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(store)
}

fn read_u32(r: &mut impl Read) -> Result<u32, NumError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact_at_32_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");

        let mut store = ParameterStore::<f32>::new();
        store.insert("b.mat", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap());
        store.insert("a.vec", Tensor::vector(vec![1.5f32, -2.25]));
        save_checkpoint(&store, &path).unwrap();

        let loaded: ParameterStore<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(store, loaded);

        // Saving the loaded store reproduces the same bytes.
        let path2 = dir.path().join("params2.bin");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"JUNKxxxx").unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }
}
