use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use safetensors::tensor::{Dtype, TensorView};
use sha2::{Digest, Sha256};

use super::NetError;

/// Named f32 tensors, some of which may be trainable [`Var`]s.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    frozen: BTreeMap<String, Tensor>,
    trainable: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Result<Tensor, NetError> {
        if let Some(v) = self.trainable.get(name) {
            return Ok(v.as_tensor().clone());
        }
        self.frozen
            .get(name)
            .cloned()
            .ok_or_else(|| NetError::WeightMismatch(format!("missing tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.frozen.contains_key(name) || self.trainable.contains_key(name)
    }

    /// Inserts a frozen tensor, replacing any existing entry.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        self.trainable.remove(&name);
        self.frozen.insert(name, tensor);
    }

    pub fn remove(&mut self, name: &str) {
        self.trainable.remove(name);
        self.frozen.remove(name);
    }

    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = self
            .frozen
            .keys()
            .chain(self.trainable.keys())
            .cloned()
            .collect();
        n.sort();
        n
    }

    pub fn len(&self) -> usize {
        self.frozen.len() + self.trainable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Makes exactly the tensors selected by `select` trainable.
    pub fn set_trainable(&mut self, select: impl Fn(&str) -> bool) -> Result<(), NetError> {
        let all = self.to_tensors();
        self.frozen.clear();
        self.trainable.clear();
        for (name, t) in all {
            if select(&name) {
                let v = Var::from_tensor(&t)?;
                self.trainable.insert(name, v);
            } else {
                self.frozen.insert(name, t.detach());
            }
        }
        Ok(())
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.trainable.iter()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of the current trainable values.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>, NetError> {
        self.trainable
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &BTreeMap<String, Tensor>) -> Result<(), NetError> {
        for (k, t) in snapshot {
            match self.trainable.get(k) {
                Some(v) => v.set(t)?,
                None => {
                    self.frozen.insert(k.clone(), t.clone());
                }
            }
        }
        Ok(())
    }

    /// All entries as plain, detached tensors.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = self.frozen.clone();
        for (k, v) in &self.trainable {
            out.insert(k.clone(), v.as_tensor().detach());
        }
        out
    }

    /// Copies every entry of `other` under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: &ParamStore) {
        for (k, t) in other.to_tensors() {
            self.insert(format!("{prefix}{k}"), t);
        }
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn extract(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (k, t) in self.to_tensors() {
            if let Some(rest) = k.strip_prefix(prefix) {
                out.insert(rest.to_string(), t);
            }
        }
        out
    }

    pub fn save(&self, path: &Path, metadata: &BTreeMap<String, String>) -> Result<(), NetError> {
        let tensors = self.to_tensors();
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(tensors.len());
        for (name, t) in tensors {
            let shape = t.dims().to_vec();
            let values: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            buffers.push((name, shape, bytes));
        }
        let views = buffers
            .iter()
            .map(|(n, s, b)| {
                TensorView::new(Dtype::F32, s.clone(), b)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| NetError::WeightMismatch(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let meta: HashMap<String, String> = metadata.clone().into_iter().collect();
        safetensors::serialize_to_file(views, Some(meta), path)
            .map_err(|e| NetError::WeightMismatch(e.to_string()))
    }

    /// Reads a safetensors file. Returns the store, its string metadata and the
    /// SHA-256 fingerprint of the file bytes.
    pub fn load(path: &Path) -> Result<(ParamStore, BTreeMap<String, String>, String), NetError> {
        if !path.exists() {
            return Err(NetError::MissingWeights(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fingerprint = hex::encode(Sha256::digest(&bytes));
        let bad = |e: safetensors::SafeTensorError| {
            NetError::WeightMismatch(format!("{}: {e}", path.display()))
        };
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(bad)?;
        let metadata: BTreeMap<String, String> = header
            .metadata()
            .clone()
            .unwrap_or_default()
            .into_iter()
            .collect();
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(bad)?;
        let mut store = ParamStore::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(NetError::WeightMismatch(format!(
                    "tensor `{name}` has dtype {:?}, expected F32",
                    view.dtype()
                )));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::from_vec(values, view.shape(), &Device::Cpu)?;
            store.insert(name, t);
        }
        Ok((store, metadata, fingerprint))
    }

    /// Verifies that `name` exists with exactly `shape`.
    pub fn expect_shape(&self, name: &str, shape: &[usize]) -> Result<(), NetError> {
        let t = self.get(name)?;
        if t.dims() != shape {
            return Err(NetError::WeightMismatch(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.dims()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::new(&[[1f32, 2.], [3., 4.]], &Device::Cpu).unwrap());
        s.insert("b", Tensor::new(&[0.5f32], &Device::Cpu).unwrap());
        let meta = BTreeMap::from([("k".to_string(), "v".to_string())]);
        s.save(&path, &meta).unwrap();
        let (back, m, fp) = ParamStore::load(&path).unwrap();
        assert_eq!(m, meta);
        assert_eq!(fp.len(), 64);
        let a: Vec<Vec<f32>> = back.get("a.weight").unwrap().to_vec2().unwrap();
        assert_eq!(a, vec![vec![1., 2.], vec![3., 4.]]);
        back.expect_shape("a.weight", &[2, 2]).unwrap();
        assert!(back.expect_shape("a.weight", &[4]).is_err());
    }

    #[test]
    fn corrupted_file_is_a_weight_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        std::fs::write(&path, b"not a tensor file at all").unwrap();
        assert!(matches!(ParamStore::load(&path), Err(NetError::WeightMismatch(_))));
        assert!(matches!(
            ParamStore::load(&dir.path().join("absent")),
            Err(NetError::MissingWeights(_))
        ));
    }

    #[test]
    fn trainable_selection_and_snapshot() {
        let mut s = ParamStore::new();
        s.insert("x.w", Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap());
        s.insert("y.w", Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap());
        s.set_trainable(|n| n.starts_with('y')).unwrap();
        assert_eq!(s.trainable().count(), 1);
        let snap = s.snapshot().unwrap();
        let (_, v) = s.trainable().next().unwrap();
        v.set(&Tensor::ones(3, DType::F32, &Device::Cpu).unwrap()).unwrap();
        s.restore(&snap).unwrap();
        let back: Vec<f32> = s.get("y.w").unwrap().to_vec1().unwrap();
        assert_eq!(back, vec![0.0; 3]);
    }
}
