//! Checkpoints, trajectories, the flat-vector view, and the TGCK v1 file
//! format.
//!
//! TGCK v1 layout (all integers little-endian):
//!
//! ```text
//! magic      b"TGCK"
//! version    u16 = 1
//! dtype      u8  (0 = f32, 1 = f64)
//! count      u32
//! count x {  name_len u16, name [u8; name_len] (UTF-8),
//!            rank u8, dims [u64; rank] }
//! payload    every tensor's elements, in header order, row-major, LE
//! ```
//!
//! The file stores parameters only. Timestamps live in the trajectory
//! manifest, a JSON document `{"step": 1, "checkpoints": [{"t": 1, "path": "..."}]}`
//! whose paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"TGCK";
pub const FORMAT_VERSION: u16 = 1;

/// A dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::LayoutMismatch(format!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); numel],
        }
    }

    /// Rank-1 tensor over `data`.
    pub fn vector(data: Vec<S>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// One model's parameters at one timestamp.
///
/// Tensor order is insertion order and is preserved through every
/// operation, including save/load.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    tensors: IndexMap<String, Tensor<S>>,
    timestamp: i64,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(timestamp: i64) -> Self {
        Checkpoint {
            tensors: IndexMap::new(),
            timestamp,
        }
    }

    pub fn from_tensors<I, N>(timestamp: i64, tensors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (N, Tensor<S>)>,
        N: Into<String>,
    {
        let mut ckpt = Checkpoint::new(timestamp);
        for (name, tensor) in tensors {
            ckpt.insert(name, tensor)?;
        }
        Ok(ckpt)
    }

    /// Appends a tensor. Names must be unique and elements finite.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::LayoutMismatch(format!("duplicate tensor name `{name}`")));
        }
        if let Some(index) = tensor.first_non_finite() {
            return Err(Error::NonFinite {
                tensor: name,
                index,
            });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// Total parameter count N.
    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn dtype(&self) -> DType {
        S::DTYPE
    }

    /// Same names, order and shapes.
    pub fn is_congruent(&self, other: &Checkpoint<S>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape == tb.shape)
    }

    pub fn ensure_congruent(&self, other: &Checkpoint<S>) -> Result<()> {
        if self.is_congruent(other) {
            return Ok(());
        }
        let mine: Vec<_> = self.tensors.iter().map(|(n, t)| (n, &t.shape)).collect();
        let theirs: Vec<_> = other.tensors.iter().map(|(n, t)| (n, &t.shape)).collect();
        Err(Error::Congruence(format!("{mine:?} vs {theirs:?}")))
    }

    pub fn zeros_like(&self) -> Self {
        Checkpoint {
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape.clone())))
                .collect(),
            timestamp: self.timestamp,
        }
    }

    pub fn flatten(&self) -> FlatView<S> {
        let mut values = Vec::with_capacity(self.num_params());
        let mut layout = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            layout.push(LayoutEntry {
                name: name.clone(),
                offset: values.len(),
                shape: t.shape.clone(),
            });
            values.extend_from_slice(&t.data);
        }
        FlatView { values, layout }
    }

    /// Flattened parameters widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter().map(|v| v.widen()))
            .collect()
    }

    /// Builds a checkpoint congruent with `self` from `f64` values, rounding
    /// to `S`. Fails on length mismatch or any non-finite result.
    pub fn from_f64_like(&self, values: &[f64]) -> Result<Self> {
        let n = self.num_params();
        if values.len() != n {
            return Err(Error::LayoutMismatch(format!(
                "expected {n} values, got {}",
                values.len()
            )));
        }
        let mut out = Checkpoint::new(self.timestamp);
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let chunk = &values[offset..offset + t.numel()];
            offset += t.numel();
            let data = chunk.iter().map(|&v| S::narrow(v)).collect();
            out.insert(
                name.clone(),
                Tensor {
                    shape: t.shape.clone(),
                    data,
                },
            )?;
        }
        Ok(out)
    }

    /// Elementwise map through `f64`; the result is checked for finiteness.
    pub fn map_f64(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let mut out = Checkpoint::new(self.timestamp);
        for (name, t) in &self.tensors {
            let data = t.data.iter().map(|&v| S::narrow(f(v.widen()))).collect();
            out.insert(
                name.clone(),
                Tensor {
                    shape: t.shape.clone(),
                    data,
                },
            )?;
        }
        Ok(out)
    }

    /// Euclidean norm of the flattened parameters, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter())
            .map(|v| {
                let x = v.widen();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<T: Scalar>(&self) -> Result<Checkpoint<T>> {
        let mut out = Checkpoint::new(self.timestamp);
        for (name, t) in &self.tensors {
            let data = t.data.iter().map(|&v| T::narrow(v.widen())).collect();
            out.insert(
                name.clone(),
                Tensor {
                    shape: t.shape.clone(),
                    data,
                },
            )?;
        }
        Ok(out)
    }

    /// Serializes to TGCK v1 bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.num_params() * S::DTYPE.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(S::DTYPE.code());
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::Format("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("tensor name too long: {} bytes", name.len())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::Format(format!("rank {} exceeds 255", t.shape.len())))?;
            out.push(rank);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for t in self.tensors.values() {
            for &v in &t.data {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Parses TGCK bytes whose dtype must match `S`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let any = AnyCheckpoint::from_bytes(bytes)?;
        Self::from_any(any)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_any(AnyCheckpoint::load(path)?)
    }

    fn from_any(any: AnyCheckpoint) -> Result<Self> {
        let found = any.dtype();
        any.downcast::<S>().ok_or(Error::DTypeMismatch {
            expected: S::DTYPE,
            found,
        })
    }
}

/// A checkpoint whose element type is only known at runtime.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn dtype(&self) -> DType {
        match self {
            AnyCheckpoint::F32(_) => DType::F32,
            AnyCheckpoint::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Result<Checkpoint<f64>> {
        match self {
            AnyCheckpoint::F32(c) => c.cast(),
            AnyCheckpoint::F64(c) => Ok(c.clone()),
        }
    }

    fn downcast<S: Scalar>(self) -> Option<Checkpoint<S>> {
        let boxed: Box<dyn std::any::Any> = match self {
            AnyCheckpoint::F32(c) => Box::new(c),
            AnyCheckpoint::F64(c) => Box::new(c),
        };
        boxed.downcast::<Checkpoint<S>>().ok().map(|b| *b)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let code = r.u8()?;
        let dtype =
            DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
        let count = r.u32()? as usize;
        let mut headers = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Format("dimension overflows usize".into()))?;
                shape.push(d);
            }
            headers.push((name, shape));
        }
        let out = match dtype {
            DType::F32 => AnyCheckpoint::F32(read_payload(&mut r, headers)?),
            DType::F64 => AnyCheckpoint::F64(read_payload(&mut r, headers)?),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.pos
            )));
        }
        Ok(out)
    }
}

fn read_payload<S: Scalar>(
    r: &mut Reader<'_>,
    headers: Vec<(String, Vec<usize>)>,
) -> Result<Checkpoint<S>> {
    let size = S::DTYPE.size();
    let mut ckpt = Checkpoint::new(0);
    for (name, shape) in headers {
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let nbytes = numel
            .checked_mul(size)
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let raw = r.take(nbytes)?;
        let data = raw.chunks_exact(size).map(S::read_le).collect();
        ckpt.insert(name, Tensor { shape, data })?;
    }
    Ok(ckpt)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

/// Parameters as one contiguous vector plus the tensor layout that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatView<S> {
    pub values: Vec<S>,
    pub layout: Vec<LayoutEntry>,
}

impl<S: Scalar> FlatView<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rebuilds a checkpoint with `template`'s names, shapes and timestamp.
    pub fn unflatten(&self, template: &Checkpoint<S>) -> Result<Checkpoint<S>> {
        if self.values.len() != template.num_params() {
            return Err(Error::LayoutMismatch(format!(
                "view holds {} values, template needs {}",
                self.values.len(),
                template.num_params()
            )));
        }
        if self.layout.len() != template.num_tensors() {
            return Err(Error::LayoutMismatch(format!(
                "view has {} tensors, template has {}",
                self.layout.len(),
                template.num_tensors()
            )));
        }
        let mut out = Checkpoint::new(template.timestamp());
        for (entry, (name, t)) in self.layout.iter().zip(template.iter()) {
            if entry.name != name || entry.shape != t.shape() {
                return Err(Error::LayoutMismatch(format!(
                    "`{}` {:?} does not match template `{}` {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    t.shape()
                )));
            }
            let end = entry.offset + t.numel();
            if end > self.values.len() {
                return Err(Error::LayoutMismatch(format!(
                    "`{}` runs past the end of the view",
                    entry.name
                )));
            }
            out.insert(
                name,
                Tensor {
                    shape: entry.shape.clone(),
                    data: self.values[entry.offset..end].to_vec(),
                },
            )?;
        }
        Ok(out)
    }
}

/// Time-ordered, structurally congruent checkpoints with a uniform step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    checkpoints: Vec<Checkpoint<S>>,
    step: u64,
}

impl<S: Scalar> Trajectory<S> {
    pub fn new(checkpoints: Vec<Checkpoint<S>>, step: u64) -> Result<Self> {
        let first = checkpoints.first().ok_or(Error::EmptyTrajectory)?;
        if step == 0 {
            return Err(Error::InvalidTrajectory("step must be positive".into()));
        }
        for pair in checkpoints.windows(2) {
            if pair[1].timestamp() <= pair[0].timestamp() {
                return Err(Error::InvalidTrajectory(format!(
                    "timestamps must strictly increase: {} then {}",
                    pair[0].timestamp(),
                    pair[1].timestamp()
                )));
            }
        }
        for c in &checkpoints[1..] {
            first.ensure_congruent(c)?;
        }
        Ok(Trajectory { checkpoints, step })
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn checkpoints(&self) -> &[Checkpoint<S>] {
        &self.checkpoints
    }

    pub fn get(&self, i: usize) -> Option<&Checkpoint<S>> {
        self.checkpoints.get(i)
    }

    pub fn first(&self) -> &Checkpoint<S> {
        &self.checkpoints[0]
    }

    pub fn last(&self) -> &Checkpoint<S> {
        &self.checkpoints[self.checkpoints.len() - 1]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Checkpoint<S>> {
        self.checkpoints.iter()
    }

    /// The first `n` checkpoints.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyTrajectory);
        }
        if n > self.len() {
            return Err(Error::InsufficientHistory {
                needed: n,
                have: self.len(),
            });
        }
        Ok(Trajectory {
            checkpoints: self.checkpoints[..n].to_vec(),
            step: self.step,
        })
    }

    pub fn into_checkpoints(self) -> Vec<Checkpoint<S>> {
        self.checkpoints
    }

    /// Writes one TGCK file per checkpoint next to a JSON manifest at
    /// `manifest_path`. File names are `ckpt_<t>.tgck`.
    pub fn save(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new(""));
        let mut entries = Vec::with_capacity(self.len());
        for c in &self.checkpoints {
            let file = format!("ckpt_{:06}.tgck", c.timestamp());
            c.save(dir.join(&file))?;
            entries.push(ManifestEntry {
                t: c.timestamp(),
                path: file,
            });
        }
        let manifest = TrajectoryManifest {
            step: self.step,
            checkpoints: entries,
        };
        manifest.save(manifest_path)
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = TrajectoryManifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new(""));
        let checkpoints = manifest
            .checkpoints
            .iter()
            .map(|e| Checkpoint::<S>::load(manifest.resolve(dir, e)).map(|c| c.with_timestamp(e.t)))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(checkpoints, manifest.step)
    }
}

impl Trajectory<f64> {
    /// Loads a trajectory of either element type, widening to `f64`.
    pub fn load_widened(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = TrajectoryManifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new(""));
        let checkpoints = manifest
            .checkpoints
            .iter()
            .map(|e| {
                AnyCheckpoint::load(manifest.resolve(dir, e))?
                    .to_f64()
                    .map(|c| c.with_timestamp(e.t))
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(checkpoints, manifest.step)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub t: i64,
    pub path: String,
}

/// JSON trajectory manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryManifest {
    #[serde(default = "default_step")]
    pub step: u64,
    pub checkpoints: Vec<ManifestEntry>,
}

fn default_step() -> u64 {
    1
}

impl TrajectoryManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, dir: &Path, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_owned()
        } else {
            dir.join(p)
        }
    }
}
