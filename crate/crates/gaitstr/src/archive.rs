//! On-disk formats: skeleton archives, silhouette archives and dataset
//! manifests.
//!
//! Skeleton archive (`.gsk`), little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "GSK1"
//! nlen    u32      topology name length
//! name    nlen bytes, UTF-8
//! t       u32      frame count
//! k       u32      joint count
//! data    t*k*2 f32, row-major (frame, joint, xy)
//! ```
//!
//! A JSON-lines twin (`.jsonl`) holds one header object on the first line
//! and one `[[x, y], ...]` frame per following line, for debugging.
//!
//! Silhouette archive (`.gsl`):
//!
//! ```text
//! magic   4 bytes  "GSL1"
//! t, h, w u32 each
//! frames  t blocks of ceil(h*w/8) bytes; pixels row-major, MSB first
//! ```
//!
//! The dataset manifest is JSON-lines with one record per sample.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::skeleton::{GaitSample, JointSequence, SilhouetteSequence};
use crate::synth::{generate_dataset, DatasetSpec};
use crate::topology::SkeletonTopology;

const SKELETON_MAGIC: &[u8; 4] = b"GSK1";
const SILHOUETTE_MAGIC: &[u8; 4] = b"GSL1";

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Write a joint sequence in the binary skeleton layout.
pub fn write_skeleton(path: &Path, joints: &JointSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SKELETON_MAGIC)?;
    let name = joints.topology.name.as_bytes();
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&(joints.frames() as u32).to_le_bytes())?;
    w.write_all(&(joints.num_joints() as u32).to_le_bytes())?;
    for v in joints.data.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a binary skeleton archive.
pub fn read_skeleton(path: &Path) -> Result<JointSequence> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SKELETON_MAGIC {
        return Err(GaitError::Format(format!(
            "{}: bad skeleton magic",
            path.display()
        )));
    }
    let nlen = read_u32(&mut r)? as usize;
    let mut name = vec![0u8; nlen];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| GaitError::Format(format!("{}: topology name not UTF-8", path.display())))?;
    let topology = SkeletonTopology::builtin(&name)?;
    let t = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    if k != topology.num_joints {
        return Err(GaitError::Format(format!(
            "{}: header says {k} joints but topology {name} has {}",
            path.display(),
            topology.num_joints
        )));
    }
    let mut data = Array3::zeros((t, k, 2));
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from(f32::from_le_bytes(buf));
    }
    JointSequence::new(data, topology)
}

/// Write the JSON-lines debugging twin of a skeleton archive.
pub fn write_skeleton_jsonl(path: &Path, joints: &JointSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::json!({
        "topology": joints.topology.name,
        "frames": joints.frames(),
        "joints": joints.num_joints(),
    });
    writeln!(w, "{header}")?;
    for f in 0..joints.frames() {
        let frame: Vec<[f64; 2]> = (0..joints.num_joints())
            .map(|j| [joints.data[[f, j, 0]], joints.data[[f, j, 1]]])
            .collect();
        writeln!(w, "{}", serde_json::to_string(&frame)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Read the JSON-lines skeleton format.
pub fn read_skeleton_jsonl(path: &Path) -> Result<JointSequence> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| GaitError::Format(format!("{}: empty file", path.display())))??;
    let header: serde_json::Value = serde_json::from_str(&header_line)?;
    let name = header["topology"]
        .as_str()
        .ok_or_else(|| GaitError::Format("missing topology in header".into()))?;
    let topology = SkeletonTopology::builtin(name)?;
    let t = header["frames"]
        .as_u64()
        .ok_or_else(|| GaitError::Format("missing frames in header".into()))? as usize;
    let k = topology.num_joints;
    let mut data = Array3::zeros((t, k, 2));
    for f in 0..t {
        let line = lines
            .next()
            .ok_or_else(|| GaitError::Format(format!("{}: truncated at frame {f}", path.display())))??;
        let frame: Vec<[f64; 2]> = serde_json::from_str(&line)?;
        if frame.len() != k {
            return Err(GaitError::Format(format!(
                "frame {f} has {} joints, expected {k}",
                frame.len()
            )));
        }
        for (j, xy) in frame.iter().enumerate() {
            data[[f, j, 0]] = xy[0];
            data[[f, j, 1]] = xy[1];
        }
    }
    JointSequence::new(data, topology)
}

/// Write a silhouette sequence in the bit-packed layout.
pub fn write_silhouettes(path: &Path, sil: &SilhouetteSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SILHOUETTE_MAGIC)?;
    let (t, h, wd) = {
        let s = sil.data.shape();
        (s[0], s[1], s[2])
    };
    w.write_all(&(t as u32).to_le_bytes())?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(wd as u32).to_le_bytes())?;
    let frame_bytes = (h * wd).div_ceil(8);
    let mut packed = vec![0u8; frame_bytes];
    for f in 0..t {
        packed.fill(0);
        for r in 0..h {
            for c in 0..wd {
                if sil.data[[f, r, c]] == 1 {
                    let bit = r * wd + c;
                    packed[bit / 8] |= 0x80 >> (bit % 8);
                }
            }
        }
        w.write_all(&packed)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a bit-packed silhouette archive.
pub fn read_silhouettes(path: &Path) -> Result<SilhouetteSequence> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SILHOUETTE_MAGIC {
        return Err(GaitError::Format(format!(
            "{}: bad silhouette magic",
            path.display()
        )));
    }
    let t = read_u32(&mut r)? as usize;
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let frame_bytes = (h * w).div_ceil(8);
    let mut data = Array3::zeros((t, h, w));
    let mut packed = vec![0u8; frame_bytes];
    for f in 0..t {
        r.read_exact(&mut packed)?;
        for row in 0..h {
            for c in 0..w {
                let bit = row * w + c;
                if packed[bit / 8] & (0x80 >> (bit % 8)) != 0 {
                    data[[f, row, c]] = 1;
                }
            }
        }
    }
    SilhouetteSequence::new(data)
}

/// One manifest record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub identity: u32,
    pub seq_index: usize,
    pub view: String,
    pub condition: String,
    pub frames: usize,
    pub split: String,
    pub skeleton: String,
    pub silhouette: String,
}

/// Parsed dataset manifest plus its base directory.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn manifest_path(root: &Path) -> PathBuf {
        root.join("manifest.jsonl")
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = Self::manifest_path(root);
        let r = BufReader::new(File::open(&path)?);
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn save(&self) -> Result<()> {
        let mut w = BufWriter::new(File::create(Self::manifest_path(&self.root))?);
        for e in &self.entries {
            writeln!(w, "{}", serde_json::to_string(e)?)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load one sample's paired streams.
    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<GaitSample> {
        let joints = read_skeleton(&self.root.join(&entry.skeleton))?;
        let silhouettes = read_silhouettes(&self.root.join(&entry.silhouette))?;
        let sample = GaitSample {
            identity: entry.identity,
            view: entry.view.clone(),
            condition: entry.condition.clone(),
            silhouettes,
            joints,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Load every sample in manifest order.
    pub fn load_all(&self) -> Result<Vec<GaitSample>> {
        self.entries.iter().map(|e| self.load_sample(e)).collect()
    }
}

/// Generate a dataset and write archives plus the manifest under `out`.
pub fn build_dataset(out: &Path, spec: &DatasetSpec) -> Result<DatasetManifest> {
    let ds = generate_dataset(spec)?;
    fs::create_dir_all(out.join("skeletons"))?;
    fs::create_dir_all(out.join("silhouettes"))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (i, sample) in ds.samples.iter().enumerate() {
        let seq = ds.seq_index[i];
        let stem = format!("id{:03}_seq{:02}", sample.identity, seq);
        let skeleton = format!("skeletons/{stem}.gsk");
        let silhouette = format!("silhouettes/{stem}.gsl");
        write_skeleton(&out.join(&skeleton), &sample.joints)?;
        write_silhouettes(&out.join(&silhouette), &sample.silhouettes)?;
        entries.push(ManifestEntry {
            identity: sample.identity,
            seq_index: seq,
            view: sample.view.clone(),
            condition: sample.condition.clone(),
            frames: sample.joints.frames(),
            split: if ds.is_train[i] { "train" } else { "test" }.to_string(),
            skeleton,
            silhouette,
        });
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}
