//! Dataset container ("CDDS").
//!
//! Layout, integers little-endian:
//!
//! ```text
//! b"CDDS" | u32 version (1) | u64 spec_hash | u32 count | u32 height | u32 width
//! | u8 labeled | u8 label_kind | u32 target_dim | u64 teacher_hash
//! | per sample: CDT1 image, then the label blocks of `label_kind`
//! | u64 FNV-1a checksum of every preceding byte
//! ```
//!
//! Label blocks per kind: ground truth stores normals `[3,H,W]`, class map
//! `[H,W]` and valid mask `[H,W]`; pseudo-regression stores the raw teacher
//! output `[target_dim,H,W]` and the valid mask; pseudo-classes stores the
//! class map and the valid mask; unlabeled stores nothing. Ground truth for
//! an unlabeled pool lives in a quarantined sidecar at `<path>.gt`.

use std::io::Cursor;
use std::path::Path;

use super::{render_scene, DistributionSpec, Sample};
use crate::error::{format_err, Error, Result};
use crate::hash::fnv1a;
use crate::rng::Rng;
use crate::tensor::io::{read_tensor, read_u32, read_u64, read_u8, write_tensor};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CDDS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4 + 1 + 1 + 4 + 8;
pub const GT_SUFFIX: &str = ".gt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum LabelKind {
    Unlabeled = 0,
    GroundTruth = 1,
    PseudoRegression = 2,
    PseudoClasses = 3,
}

impl LabelKind {
    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Self::Unlabeled,
            1 => Self::GroundTruth,
            2 => Self::PseudoRegression,
            3 => Self::PseudoClasses,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub spec_hash: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub label_kind: LabelKind,
    /// Channels of the regression target, or class count for class maps.
    pub target_dim: usize,
    /// Hash of the model that produced pseudo-labels; 0 otherwise.
    pub teacher_hash: u64,
}

impl DatasetHeader {
    pub fn labeled(&self) -> bool {
        self.label_kind != LabelKind::Unlabeled
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub image: Tensor<f32>,
    /// Dense regression target `[target_dim, H, W]`.
    pub target: Option<Tensor<f32>>,
    /// Class ids `[H, W]` stored as floats.
    pub classes: Option<Tensor<f32>>,
    pub valid: Option<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn from_samples(spec_hash: u64, samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset needs at least one sample".into()))?;
        let (height, width) = (first.image.shape()[1], first.image.shape()[2]);
        Ok(Self {
            header: DatasetHeader {
                spec_hash,
                count: samples.len(),
                height,
                width,
                label_kind: LabelKind::GroundTruth,
                target_dim: 3,
                teacher_hash: 0,
            },
            records: samples
                .into_iter()
                .map(|s| Record {
                    image: s.image,
                    target: Some(s.normals),
                    classes: Some(s.seg),
                    valid: Some(s.valid),
                })
                .collect(),
        })
    }

    /// Same images with every label dropped.
    pub fn strip_labels(&self) -> Self {
        Self {
            header: DatasetHeader {
                label_kind: LabelKind::Unlabeled,
                target_dim: 0,
                teacher_hash: 0,
                ..self.header
            },
            records: self
                .records
                .iter()
                .map(|r| Record {
                    image: r.image.clone(),
                    target: None,
                    classes: None,
                    valid: None,
                })
                .collect(),
        }
    }

    /// Leading `n` records as a dataset of their own.
    pub fn take(&self, n: usize) -> Self {
        let records: Vec<Record> = self.records.iter().take(n).cloned().collect();
        Self {
            header: DatasetHeader {
                count: records.len(),
                ..self.header
            },
            records,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        if h.count != self.records.len() {
            return Err(Error::InvalidArgument(format!(
                "header declares {} samples but {} are present",
                h.count,
                self.records.len()
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.spec_hash.to_le_bytes());
        for v in [h.count, h.height, h.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(u8::from(h.labeled()));
        out.push(h.label_kind as u8);
        out.extend_from_slice(&(h.target_dim as u32).to_le_bytes());
        out.extend_from_slice(&h.teacher_hash.to_le_bytes());
        for (i, r) in self.records.iter().enumerate() {
            let blocks = blocks_for(h.label_kind, r)
                .ok_or_else(|| Error::InvalidArgument(format!("sample {i} lacks the labels its kind requires")))?;
            for t in blocks {
                write_tensor(&mut out, t)?;
            }
        }
        let checksum = fnv1a(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 {
            return Err(format_err(origin, "file shorter than header and checksum"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let header = parse_header(body, origin)?;
        if fnv1a(body) != stored {
            return Err(format_err(origin, "checksum mismatch"));
        }
        let mut cur = Cursor::new(&body[HEADER_LEN..]);
        let mut records = Vec::with_capacity(header.count);
        let (hh, ww) = (header.height, header.width);
        for i in 0..header.count {
            let loc = |what: &str| format!("{origin}: sample {i} {what}");
            let mut block = |what: &str, shape: &[usize]| -> Result<Tensor<f32>> {
                let t = read_tensor(&mut cur, &loc(what))?;
                if t.shape() != shape {
                    return Err(format_err(loc(what), format!("shape {:?}, expected {shape:?}", t.shape())));
                }
                Ok(t)
            };
            let image = block("image", &[3, hh, ww])?;
            let (target, classes, valid) = match header.label_kind {
                LabelKind::Unlabeled => (None, None, None),
                LabelKind::GroundTruth => (
                    Some(block("normals", &[3, hh, ww])?),
                    Some(block("classes", &[hh, ww])?),
                    Some(block("valid", &[hh, ww])?),
                ),
                LabelKind::PseudoRegression => (
                    Some(block("target", &[header.target_dim, hh, ww])?),
                    None,
                    Some(block("valid", &[hh, ww])?),
                ),
                LabelKind::PseudoClasses => (
                    None,
                    Some(block("classes", &[hh, ww])?),
                    Some(block("valid", &[hh, ww])?),
                ),
            };
            records.push(Record {
                image,
                target,
                classes,
                valid,
            });
        }
        if (cur.position() as usize) != body.len() - HEADER_LEN {
            return Err(format_err(origin, "trailing bytes after the declared samples"));
        }
        Ok(Self { header, records })
    }
}

fn blocks_for(kind: LabelKind, r: &Record) -> Option<Vec<&Tensor<f32>>> {
    Some(match kind {
        LabelKind::Unlabeled => vec![&r.image],
        LabelKind::GroundTruth => vec![&r.image, r.target.as_ref()?, r.classes.as_ref()?, r.valid.as_ref()?],
        LabelKind::PseudoRegression => vec![&r.image, r.target.as_ref()?, r.valid.as_ref()?],
        LabelKind::PseudoClasses => vec![&r.image, r.classes.as_ref()?, r.valid.as_ref()?],
    })
}

fn parse_header(bytes: &[u8], origin: &str) -> Result<DatasetHeader> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    std::io::Read::read_exact(&mut cur, &mut magic).map_err(|_| format_err(origin, "truncated magic"))?;
    if &magic != MAGIC {
        return Err(format_err(origin, format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut cur, origin, "version")?;
    if version != VERSION {
        return Err(format_err(origin, format!("unsupported version {version}")));
    }
    let spec_hash = read_u64(&mut cur, origin, "spec hash")?;
    let count = read_u32(&mut cur, origin, "count")? as usize;
    let height = read_u32(&mut cur, origin, "height")? as usize;
    let width = read_u32(&mut cur, origin, "width")? as usize;
    let labeled = read_u8(&mut cur, origin, "labeled flag")?;
    let tag = read_u8(&mut cur, origin, "label kind")?;
    let label_kind = LabelKind::from_tag(tag).ok_or_else(|| format_err(origin, format!("unknown label kind {tag}")))?;
    if (labeled != 0) != (label_kind != LabelKind::Unlabeled) || labeled > 1 {
        return Err(format_err(origin, "labeled flag disagrees with label kind"));
    }
    let target_dim = read_u32(&mut cur, origin, "target dim")? as usize;
    let teacher_hash = read_u64(&mut cur, origin, "teacher hash")?;
    Ok(DatasetHeader {
        spec_hash,
        count,
        height,
        width,
        label_kind,
        target_dim,
        teacher_hash,
    })
}

/// Per-thread log of dataset files opened for reading.
pub mod audit {
    use std::cell::RefCell;
    use std::path::{Path, PathBuf};

    thread_local! {
        static READS: RefCell<Vec<PathBuf>> = const { RefCell::new(Vec::new()) };
    }

    pub(crate) fn record(path: &Path) {
        READS.with(|r| r.borrow_mut().push(path.to_path_buf()));
    }

    pub fn clear() {
        READS.with(|r| r.borrow_mut().clear());
    }

    pub fn reads() -> Vec<PathBuf> {
        READS.with(|r| r.borrow().clone())
    }

    /// True if any recorded read touched a ground-truth sidecar.
    pub fn touched_sidecar() -> bool {
        reads()
            .iter()
            .any(|p| p.to_string_lossy().ends_with(super::GT_SUFFIX))
    }
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_bytes()?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    audit::record(path);
    let bytes = std::fs::read(path)?;
    Dataset::from_bytes(&bytes, &path.display().to_string())
}

/// Header only, without the checksum pass.
pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    audit::record(path);
    let mut buf = vec![0u8; HEADER_LEN];
    let mut f = std::fs::File::open(path)?;
    std::io::Read::read_exact(&mut f, &mut buf).map_err(|_| format_err(path.display().to_string(), "truncated header"))?;
    parse_header(&buf, &path.display().to_string())
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(GT_SUFFIX);
    s.into()
}

impl Dataset {
    /// Path of the quarantined ground truth that accompanies an unlabeled
    /// file written by [`gen_dataset`].
    pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
        sidecar(path)
    }
}

/// Renders `n` scenes (scene `i` uses child stream `i` of `seed`) and writes
/// them to `path`. Unlabeled output keeps only images; the labels go to the
/// `.gt` sidecar. Returns the dataset as written (with labels in memory).
pub fn gen_dataset(spec: &DistributionSpec, n: usize, seed: u64, labeled: bool, path: &Path) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("gen_dataset: n must be at least 1".into()));
    }
    spec.validate()?;
    let samples = (0..n)
        .map(|i| render_scene(spec, Rng::derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let full = Dataset::from_samples(spec.hash(), samples)?;
    if labeled {
        write_dataset(&full, path)?;
    } else {
        write_dataset(&full.strip_labels(), path)?;
        write_dataset(&full, &sidecar(path))?;
    }
    Ok(full)
}
