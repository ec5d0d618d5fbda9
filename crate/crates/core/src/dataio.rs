//! Signal datasets, labeled/unlabeled assignment and the on-disk format.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic      "SSCSR1"        6 bytes
//! version    u8 = 1
//! classes    u32
//! sample_len u32
//! counts     4 x u32         labeled, unlabeled, val, test
//! records    i32 label (-1 when unlabeled), then sample_len x (f32 I, f32 Q)
//! ```
//!
//! Records appear partition by partition in the order of the counts.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::IqVector;
use crate::rng::rng_from;
use crate::sigsim::{DeviceProfile, SimConfig};

pub const DATASET_MAGIC: &[u8; 6] = b"SSCSR1";
pub const DATASET_VERSION: u8 = 1;
pub const DATASET_HEADER_LEN: usize = 6 + 1 + 4 + 4 + 16;

const STREAM_CONDITION: u64 = 0xc0d1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub iq: IqVector,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDataset {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<IqVector>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub num_classes: usize,
    pub sample_len: usize,
}

impl SignalDataset {
    /// Checks lengths and label ranges of every partition.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("a dataset needs at least two classes"));
        }
        let labeled = self.labeled.iter().chain(&self.val).chain(&self.test);
        for s in labeled {
            if s.label >= self.num_classes {
                return Err(Error::config(format!(
                    "label {} out of range for {} classes",
                    s.label, self.num_classes
                )));
            }
            if s.iq.len() != self.sample_len {
                return Err(Error::shape(format!(
                    "sample of length {} in a dataset of length {}",
                    s.iq.len(),
                    self.sample_len
                )));
            }
        }
        if let Some(bad) = self.unlabeled.iter().find(|s| s.len() != self.sample_len) {
            return Err(Error::shape(format!(
                "unlabeled sample of length {} in a dataset of length {}",
                bad.len(),
                self.sample_len
            )));
        }
        Ok(())
    }

    /// Number of labeled training samples per class.
    pub fn labeled_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.labeled {
            counts[s.label] += 1;
        }
        counts
    }

    /// Fails unless every class has at least one labeled training sample.
    pub fn require_labels_per_class(&self) -> Result<()> {
        if let Some(c) = self.labeled_per_class().iter().position(|&n| n == 0) {
            return Err(Error::config(format!("class {c} has no labeled training samples")));
        }
        Ok(())
    }

    /// Same dataset with the unlabeled partition removed.
    pub fn supervised_only(&self) -> SignalDataset {
        SignalDataset {
            unlabeled: Vec::new(),
            ..self.clone()
        }
    }
}

/// "M + N": labeled and unlabeled training samples kept per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCondition {
    pub m_labeled_per_class: usize,
    pub n_unlabeled_per_class: usize,
}

impl DataCondition {
    pub fn new(m: usize, n: usize) -> Self {
        DataCondition {
            m_labeled_per_class: m,
            n_unlabeled_per_class: n,
        }
    }
}

impl std::fmt::Display for DataCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}+{}", self.m_labeled_per_class, self.n_unlabeled_per_class)
    }
}

/// Splits the labeled training pool of `dataset` into M labeled and N
/// unlabeled samples per class; the rest of the pool is dropped. Validation
/// and test partitions, and any unlabeled samples already present, pass
/// through unchanged.
pub fn assign_condition(dataset: &SignalDataset, condition: DataCondition, seed: u64) -> Result<SignalDataset> {
    if condition.m_labeled_per_class < 1 {
        return Err(Error::config(
            "a data condition needs at least one labeled sample per class",
        ));
    }
    let need = condition.m_labeled_per_class + condition.n_unlabeled_per_class;
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for class in 0..dataset.num_classes {
        let mut members: Vec<&LabeledSample> = dataset.labeled.iter().filter(|s| s.label == class).collect();
        if members.len() < need {
            return Err(Error::config(format!(
                "class {class} has {} training samples, condition {condition} needs {need}",
                members.len()
            )));
        }
        members.shuffle(&mut rng_from(seed, &[STREAM_CONDITION, class as u64]));
        labeled.extend(members[..condition.m_labeled_per_class].iter().map(|s| (*s).clone()));
        unlabeled.extend(
            members[condition.m_labeled_per_class..need]
                .iter()
                .map(|s| s.iq.clone()),
        );
    }
    unlabeled.extend(dataset.unlabeled.iter().cloned());
    Ok(SignalDataset {
        labeled,
        unlabeled,
        val: dataset.val.clone(),
        test: dataset.test.clone(),
        num_classes: dataset.num_classes,
        sample_len: dataset.sample_len,
    })
}

fn push_record(out: &mut Vec<u8>, label: i32, iq: &IqVector) {
    out.extend_from_slice(&label.to_le_bytes());
    for c in iq.samples() {
        out.extend_from_slice(&(c.re as f32).to_le_bytes());
        out.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
}

pub fn encode_dataset(dataset: &SignalDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let to_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::config(format!("{what} {n} exceeds the format limit")))
    };
    let record = 4 + 8 * dataset.sample_len;
    let total = dataset.labeled.len() + dataset.unlabeled.len() + dataset.val.len() + dataset.test.len();
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + total * record);
    out.extend_from_slice(DATASET_MAGIC);
    out.push(DATASET_VERSION);
    out.extend_from_slice(&to_u32(dataset.num_classes, "class count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dataset.sample_len, "sample length")?.to_le_bytes());
    for n in [
        dataset.labeled.len(),
        dataset.unlabeled.len(),
        dataset.val.len(),
        dataset.test.len(),
    ] {
        out.extend_from_slice(&to_u32(n, "record count")?.to_le_bytes());
    }
    for s in &dataset.labeled {
        push_record(&mut out, s.label as i32, &s.iq);
    }
    for iq in &dataset.unlabeled {
        push_record(&mut out, -1, iq);
    }
    for s in dataset.val.iter().chain(&dataset.test) {
        push_record(&mut out, s.label as i32, &s.iq);
    }
    Ok(out)
}

/// Cursor over a byte buffer that reports the offset of every failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<SignalDataset> {
    let mut r = Reader::new(bytes);
    if r.take(6, "magic")? != DATASET_MAGIC {
        return Err(Error::format(0, "bad magic, not an SSCSR1 dataset"));
    }
    let version_at = r.offset();
    let version = r.u8("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported dataset version {version}"),
        ));
    }
    let classes_at = r.offset();
    let num_classes = r.u32("class count")? as usize;
    if num_classes < 2 {
        return Err(Error::format(classes_at, format!("class count {num_classes} below 2")));
    }
    let len_at = r.offset();
    let sample_len = r.u32("sample length")? as usize;
    if sample_len == 0 {
        return Err(Error::format(len_at, "sample length is zero"));
    }
    let mut counts = [0usize; 4];
    for c in counts.iter_mut() {
        *c = r.u32("record count")? as usize;
    }

    let record_len = 4 + 8 * sample_len as u64;
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    let body = total.saturating_mul(record_len);
    let available = r.remaining() as u64;
    if body > available {
        let whole = available / record_len;
        return Err(Error::format(
            r.offset() + whole * record_len,
            format!("header announces {total} records but the body holds {whole} complete records"),
        ));
    }
    if body < available {
        return Err(Error::format(
            r.offset() + body,
            format!("{} trailing bytes after {total} records", available - body),
        ));
    }

    let read_record = |r: &mut Reader, unlabeled: bool| -> Result<(i32, IqVector)> {
        let at = r.offset();
        let label = r.i32("label")?;
        if unlabeled && label != -1 {
            return Err(Error::format(at, format!("unlabeled record carries label {label}")));
        }
        if !unlabeled && (label < 0 || label as usize >= num_classes) {
            return Err(Error::format(
                at,
                format!("label {label} out of range for {num_classes} classes"),
            ));
        }
        let data_at = r.offset();
        let mut values = Vec::with_capacity(2 * sample_len);
        for _ in 0..2 * sample_len {
            values.push(r.f32("sample")? as f64);
        }
        let iq = IqVector::from_interleaved(&values)
            .map_err(|e| Error::format(data_at, format!("invalid sample data: {e}")))?;
        Ok((label, iq))
    };

    let labeled_part = |r: &mut Reader, n: usize| -> Result<Vec<LabeledSample>> {
        (0..n)
            .map(|_| {
                read_record(r, false).map(|(label, iq)| LabeledSample {
                    iq,
                    label: label as usize,
                })
            })
            .collect()
    };
    let labeled = labeled_part(&mut r, counts[0])?;
    let unlabeled = (0..counts[1])
        .map(|_| read_record(&mut r, true).map(|(_, iq)| iq))
        .collect::<Result<Vec<_>>>()?;
    let val = labeled_part(&mut r, counts[2])?;
    let test = labeled_part(&mut r, counts[3])?;
    Ok(SignalDataset {
        labeled,
        unlabeled,
        val,
        test,
        num_classes,
        sample_len,
    })
}

pub fn write_dataset(dataset: &SignalDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<SignalDataset> {
    decode_dataset(&fs::read(path)?)
}

/// Provenance sidecar written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub sim: SimConfig,
    pub profiles: Vec<DeviceProfile>,
    pub profile_seed: u64,
    pub counts: PartitionCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionCounts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub val: usize,
    pub test: usize,
}

impl PartitionCounts {
    pub fn of(dataset: &SignalDataset) -> Self {
        PartitionCounts {
            labeled: dataset.labeled.len(),
            unlabeled: dataset.unlabeled.len(),
            val: dataset.val.len(),
            test: dataset.test.len(),
        }
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
