//! Dataset directories: one sub-directory of array files per episode plus a
//! `manifest.toml` with per-episode metadata and a content digest.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::array;
use crate::config::{ContainerParams, TaskId};
use crate::error::{Error, Result};
use crate::world::Episode;

pub const MANIFEST: &str = "manifest.toml";
const STREAMS: [&str; 5] = ["audio", "points", "proprio", "actions", "hidden"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeEntry {
    pub dir: String,
    /// Hex, since TOML integers are signed 64-bit.
    pub seed: String,
    pub steps: usize,
    pub sample_rate: u32,
    pub container: ContainerParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub task: TaskId,
    pub n_episodes: usize,
    pub total_steps: usize,
    /// sha256 over every stream file in manifest order.
    pub digest: String,
    pub episodes: Vec<EpisodeEntry>,
}

fn streams(ep: &Episode) -> Result<Vec<Vec<u8>>> {
    let f = |dims: &[usize], data: Vec<f32>| array::encode(dims, &data);
    Ok(vec![
        f(&[ep.waveform.nrows(), ep.waveform.ncols()], ep.waveform.iter().copied().collect())?,
        f(&[ep.pointclouds.dim().0, ep.pointclouds.dim().1, 3], ep.pointclouds.iter().copied().collect())?,
        f(&[ep.proprio.nrows(), ep.proprio.ncols()], ep.proprio.iter().copied().collect())?,
        f(&[ep.actions.nrows(), ep.actions.ncols()], ep.actions.iter().copied().collect())?,
        f(&[ep.hidden.nrows(), ep.hidden.ncols()], ep.hidden.iter().copied().collect())?,
    ])
}

/// Writes episodes under `dir` (created if needed) and returns the manifest.
pub fn write_dataset(dir: &Path, episodes: &[Episode]) -> Result<Manifest> {
    let task = episodes.first().ok_or(Error::Empty("dataset"))?.task;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut hasher = Sha256::new();
    let mut entries = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        if ep.task != task {
            return Err(Error::TaskMismatch {
                expected: task.to_string(),
                got: ep.task.to_string(),
            });
        }
        let name = format!("episode_{i:04}");
        let sub = dir.join(&name);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (stream, bytes) in STREAMS.iter().zip(streams(ep)?) {
            hasher.update(&bytes);
            let p = sub.join(format!("{stream}.mmep"));
            fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
        }
        entries.push(EpisodeEntry {
            dir: name,
            seed: format!("{:016x}", ep.seed),
            steps: ep.len(),
            sample_rate: ep.sample_rate,
            container: ep.container,
        });
    }
    let manifest = Manifest {
        format_version: 1,
        task,
        n_episodes: entries.len(),
        total_steps: entries.iter().map(|e| e.steps).sum(),
        digest: hex::encode(hasher.finalize()),
        episodes: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))?;
    let p = dir.join(MANIFEST);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    toml::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}

fn dims_to<const N: usize>(dims: &[usize], path: &Path) -> Result<[usize; N]> {
    dims.try_into()
        .map_err(|_| Error::format(path, format!("expected rank {N}, found {}", dims.len())))
}

/// Reads every episode and checks the digest.
pub fn read_dataset(dir: &Path) -> Result<Vec<Episode>> {
    let manifest = read_manifest(dir)?;
    let mut hasher = Sha256::new();
    let mut out = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let sub = dir.join(&entry.dir);
        let mut arrays = Vec::new();
        for stream in STREAMS {
            let p = sub.join(format!("{stream}.mmep"));
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            hasher.update(&bytes);
            let (dims, data) = array::decode(&bytes, &p)?;
            arrays.push((p, dims, data));
        }
        let mut it = arrays.into_iter();
        let two = |it: &mut dyn Iterator<Item = (std::path::PathBuf, Vec<usize>, Vec<f32>)>| -> Result<Array2<f32>> {
            let (p, dims, data) = it.next().expect("five streams");
            let [r, c] = dims_to::<2>(&dims, &p)?;
            Array2::from_shape_vec((r, c), data).map_err(|e| Error::format(&p, e.to_string()))
        };
        let waveform = two(&mut it)?;
        let (pp, pdims, pdata) = it.next().expect("five streams");
        let [l, k, d] = dims_to::<3>(&pdims, &pp)?;
        let pointclouds = Array3::from_shape_vec((l, k, d), pdata).map_err(|e| Error::format(&pp, e.to_string()))?;
        let proprio = two(&mut it)?;
        let actions = two(&mut it)?;
        let hidden = two(&mut it)?;
        let seed = u64::from_str_radix(&entry.seed, 16).map_err(|e| Error::format(dir.join(MANIFEST), format!("seed: {e}")))?;
        let ep = Episode {
            task: manifest.task,
            seed,
            sample_rate: entry.sample_rate,
            container: entry.container,
            waveform,
            pointclouds,
            proprio,
            actions,
            hidden,
        };
        if ep.len() != entry.steps {
            return Err(Error::format(&sub, format!("manifest lists {} steps, arrays hold {}", entry.steps, ep.len())));
        }
        out.push(ep);
    }
    let digest = hex::encode(hasher.finalize());
    if digest != manifest.digest {
        return Err(Error::format(dir.join(MANIFEST), "content digest does not match the stored arrays"));
    }
    Ok(out)
}

/// sha256 over every file below `dir` in sorted path order, skipping
/// `run.meta` (which holds timestamps).
pub fn directory_digest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "run.meta") {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().into_owned();
        h.update(rel.as_bytes());
        h.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(hex::encode(h.finalize()))
}
