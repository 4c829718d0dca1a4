use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::skeleton::Condition;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"JGEMBED\0";
pub const EMBEDDING_VERSION: u32 = 1;

/// Per-clip embeddings with identity, view and condition labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    pub ids: Vec<String>,
    /// `len x dim`, row-major
    pub values: Vec<f64>,
    pub labels: Vec<u32>,
    pub views: Vec<i32>,
    pub conditions: Vec<Condition>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
            views: Vec::new(),
            conditions: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        label: u32,
        view: i32,
        condition: Condition,
        values: &[f64],
    ) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Dimension(format!(
                "embedding has {} values, set dimension is {}",
                values.len(),
                self.dim
            )));
        }
        self.ids.push(id.into());
        self.labels.push(label);
        self.views.push(view);
        self.conditions.push(condition);
        self.values.extend_from_slice(values);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows whose index satisfies `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut out = Self::new(self.dim);
        for i in 0..self.len() {
            if keep(i) {
                out.ids.push(self.ids[i].clone());
                out.labels.push(self.labels[i]);
                out.views.push(self.views[i]);
                out.conditions.push(self.conditions[i]);
                out.values.extend_from_slice(self.row(i));
            }
        }
        out
    }

    /// Distinct views, ascending.
    pub fn distinct_views(&self) -> Vec<i32> {
        let mut v = self.views.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn max_norm_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.row(i).iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Header, then per record: id length, id bytes, label, view, condition code and
/// `dim` little-endian f32 values.
pub fn write_embeddings<W: Write>(mut w: W, set: &EmbeddingSet) -> std::io::Result<()> {
    w.write_all(EMBEDDING_MAGIC)?;
    w_u32(&mut w, EMBEDDING_VERSION)?;
    w_u32(&mut w, set.dim as u32)?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    for i in 0..set.len() {
        let id = set.ids[i].as_bytes();
        w_u32(&mut w, id.len() as u32)?;
        w.write_all(id)?;
        w_u32(&mut w, set.labels[i])?;
        w.write_all(&set.views[i].to_le_bytes())?;
        w.write_all(&[set.conditions[i].code()])?;
        for v in set.row(i) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<EmbeddingSet> {
    let bad = |what: &str| Error::Protocol(format!("embedding file: {what}"));
    let mut read = |buf: &mut [u8], what: &str| r.read_exact(buf).map_err(|_| bad(what));
    let mut magic = [0u8; 8];
    read(&mut magic, "truncated header")?;
    if &magic != EMBEDDING_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    read(&mut b4, "truncated header")?;
    let version = u32::from_le_bytes(b4);
    if version != EMBEDDING_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    read(&mut b4, "truncated header")?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    read(&mut b8, "truncated header")?;
    let count = u64::from_le_bytes(b8);
    let mut set = EmbeddingSet::new(dim);
    let mut values = vec![0.0; dim];
    for _ in 0..count {
        read(&mut b4, "truncated record")?;
        let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
        read(&mut id, "truncated record")?;
        let id = String::from_utf8(id).map_err(|_| bad("clip id is not UTF-8"))?;
        read(&mut b4, "truncated record")?;
        let label = u32::from_le_bytes(b4);
        read(&mut b4, "truncated record")?;
        let view = i32::from_le_bytes(b4);
        let mut c = [0u8; 1];
        read(&mut c, "truncated record")?;
        let condition = Condition::from_code(c[0]).ok_or_else(|| bad("unknown condition code"))?;
        for v in values.iter_mut() {
            read(&mut b4, "truncated record")?;
            *v = f64::from(f32::from_le_bytes(b4));
        }
        set.push(id, label, view, condition, &values)?;
    }
    Ok(set)
}

pub fn save_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(BufWriter::new(f), set).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(f)).map_err(|e| match e {
        Error::Protocol(m) => Error::Protocol(format!("{}: {m}", path.display())),
        other => other,
    })
}
