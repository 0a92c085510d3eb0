//! The `DGCW` binary weight container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "DGCW"
//! version      u32      1
//! means        3 x f64  per-channel preprocessing means
//! entry count  u32
//! entries:
//!   name length u16, name (UTF-8), ndim u8, dims u32 x ndim,
//!   dtype u8 (0 = f32), payload row-major
//! ```
//!
//! Every conv layer `<layer>` of a network has a kernel entry `<layer>.w`
//! with dims `(out_c, in_c, 3, 3)` and a bias entry `<layer>.b` with dims
//! `(out_c)`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result, WeightError};
use crate::net::{ConvWeights, Network, NetworkSpec, CONV_KERNEL};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"DGCW";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

/// Decoded container, entries kept in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub means: [f64; 3],
    pub entries: Vec<WeightEntry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WeightError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| WeightError::Truncated(what.to_string()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], WeightError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8, WeightError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64, WeightError> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
}

impl WeightFile {
    pub fn decode(bytes: &[u8]) -> Result<Self, WeightError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != MAGIC {
            return Err(WeightError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(WeightError::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let means = [r.f64("means")?, r.f64("means")?, r.f64("means")?];
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        let mut seen = HashSet::new();
        for i in 0..count {
            let header = format!("entry {i} header");
            let name_len = r.u16(&header)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &header)?)
                .map_err(|_| WeightError::InvalidName)?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(WeightError::DuplicateEntry(name));
            }
            let ndim = r.u8(&name)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32(&name)? as usize);
            }
            let code = r.u8(&name)?;
            if code != DTYPE_F32 {
                return Err(WeightError::UnsupportedDtype { entry: name, code });
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| WeightError::EntryTooLarge(name.clone()))?;
            let payload = r.take(count, &format!("payload of `{name}`"))?;
            let values = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
                .collect();
            entries.push(WeightEntry { name, dims, values });
        }
        if r.pos != bytes.len() {
            return Err(WeightError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { means, entries })
    }

    pub fn encode(&self) -> Result<Vec<u8>, WeightError> {
        let payload: usize = self.entries.iter().map(|e| e.values.len() * 4 + 64).sum();
        let mut out = Vec::with_capacity(48 + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for m in self.means {
            out.extend_from_slice(&m.to_le_bytes());
        }
        let count = u32::try_from(self.entries.len())
            .map_err(|_| WeightError::EntryTooLarge("entry count".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for e in &self.entries {
            let too_large = || WeightError::EntryTooLarge(e.name.clone());
            let name_len = u16::try_from(e.name.len()).map_err(|_| too_large())?;
            let ndim = u8::try_from(e.dims.len()).map_err(|_| too_large())?;
            if e.dims.iter().product::<usize>() != e.values.len() {
                return Err(WeightError::DimMismatch {
                    entry: e.name.clone(),
                    expected: e.dims.clone(),
                    found: vec![e.values.len()],
                });
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(ndim);
            for &d in &e.dims {
                let d = u32::try_from(d).map_err(|_| too_large())?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(DTYPE_F32);
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::decode(&bytes)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Canonical container for `net`: entries `<layer>.w`, `<layer>.b` in layer order.
    pub fn from_network(net: &Network<f32>) -> Self {
        let mut entries = Vec::with_capacity(net.weights().len() * 2);
        for ((_, name, in_c, out_c), w) in net.spec().conv_layers().into_iter().zip(net.weights()) {
            entries.push(WeightEntry {
                name: format!("{name}.w"),
                dims: vec![out_c, in_c, CONV_KERNEL, CONV_KERNEL],
                values: w.kernel.data().to_vec(),
            });
            entries.push(WeightEntry {
                name: format!("{name}.b"),
                dims: vec![out_c],
                values: w.bias.clone(),
            });
        }
        Self {
            means: net.means(),
            entries,
        }
    }

    /// Binds the entries to `spec`, checking coverage and every dimension.
    pub fn into_network(self, spec: NetworkSpec) -> Result<Network<f32>> {
        let mut by_name: HashMap<String, WeightEntry> =
            self.entries.into_iter().map(|e| (e.name.clone(), e)).collect();
        let mut weights = Vec::new();
        for (_, name, in_c, out_c) in spec.conv_layers() {
            let kernel = take_entry(&mut by_name, &format!("{name}.w"), &[out_c, in_c, CONV_KERNEL, CONV_KERNEL])?;
            let bias = take_entry(&mut by_name, &format!("{name}.b"), &[out_c])?;
            weights.push(ConvWeights {
                kernel: Tensor::from_vec(Shape::new(out_c, in_c, CONV_KERNEL, CONV_KERNEL), kernel)?,
                bias,
            });
        }
        if let Some(extra) = by_name.into_keys().min() {
            return Err(WeightError::ExtraEntry(extra).into());
        }
        Network::new(spec, weights, self.means)
    }
}

fn take_entry(
    by_name: &mut HashMap<String, WeightEntry>,
    name: &str,
    dims: &[usize],
) -> Result<Vec<f32>, WeightError> {
    let entry = by_name
        .remove(name)
        .ok_or_else(|| WeightError::MissingEntry(name.to_string()))?;
    if entry.dims != dims {
        return Err(WeightError::DimMismatch {
            entry: entry.name,
            expected: dims.to_vec(),
            found: entry.dims,
        });
    }
    Ok(entry.values)
}

/// Reads a weight file and binds it to `spec`.
pub fn load_weights(path: impl AsRef<Path>, spec: NetworkSpec) -> Result<Network<f32>> {
    WeightFile::read(path)?.into_network(spec)
}

pub fn write_weights(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    WeightFile::from_network(net).write(path)
}

/// Standard deviation rule for random kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// `sqrt(2 / (in_c * 9))`.
    FanIn,
    Fixed(f64),
}

impl ScaleRule {
    pub fn std_dev(self, in_channels: usize) -> f64 {
        match self {
            ScaleRule::FanIn => (2.0 / (in_channels * CONV_KERNEL * CONV_KERNEL) as f64).sqrt(),
            ScaleRule::Fixed(s) => s,
        }
    }
}

/// Seeded Gaussian kernels with zero biases and zero preprocessing means.
pub fn random_weights(spec: NetworkSpec, seed: u64, rule: ScaleRule) -> Network<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = spec
        .conv_layers()
        .into_iter()
        .map(|(_, _, in_c, out_c)| {
            let normal = Normal::new(0.0, rule.std_dev(in_c)).expect("finite std dev");
            let shape = Shape::new(out_c, in_c, CONV_KERNEL, CONV_KERNEL);
            let data = (0..shape.len()).map(|_| normal.sample(&mut rng) as f32).collect();
            ConvWeights {
                kernel: Tensor::from_vec(shape, data).expect("kernel shape"),
                bias: vec![0.0; out_c],
            }
        })
        .collect();
    Network::new(spec, weights, [0.0; 3]).expect("random weights match spec")
}
