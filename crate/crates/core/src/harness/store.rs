//! Episode directories and the dataset manifest.
//!
//! An episode `id` lives in `ep_<id>/` and holds `meta.json` plus one
//! `l_<step>.ppm` / `r_<step>.ppm` pair per recorded frame.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ppm::{read_ppm, write_ppm};
use crate::error::{Error, Result};
use crate::sim::{Action, Episode, JointState, MarbleState};

pub const META_VERSION: u32 = 1;

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub version: u32,
    pub id: u64,
    pub seed: u64,
    pub config_hash: String,
    pub num_frames: usize,
    pub drop_step: Option<usize>,
    /// Joint angles per frame, radians.
    pub joints: Vec<[f64; 8]>,
    /// Commands, radians; one fewer than frames.
    pub actions: Vec<[f64; 8]>,
    /// Simulator ground truth per frame.
    pub marbles: Vec<MarbleState>,
}

pub fn episode_dir(root: &Path, id: u64) -> PathBuf {
    root.join(format!("ep_{id}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_episode(ep: &Episode, root: &Path, config_hash: &str) -> Result<PathBuf> {
    let dir = episode_dir(root, ep.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let meta = EpisodeMeta {
        version: META_VERSION,
        id: ep.id,
        seed: ep.seed,
        config_hash: config_hash.to_string(),
        num_frames: ep.num_frames(),
        drop_step: ep.drop_step,
        joints: ep.joints.iter().map(|j| j.angles).collect(),
        actions: ep.actions.iter().map(|a| a.displacements).collect(),
        marbles: ep.marbles.clone(),
    };
    for t in 0..ep.num_frames() {
        write_ppm(&dir.join(format!("l_{t}.ppm")), &ep.frames_left[t])?;
        write_ppm(&dir.join(format!("r_{t}.ppm")), &ep.frames_right[t])?;
    }
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(dir)
}

pub fn load_episode(dir: &Path) -> Result<Episode> {
    let meta_path = dir.join("meta.json");
    let meta: EpisodeMeta = read_json(&meta_path)?;
    let n = meta.num_frames;
    if meta.joints.len() != n || meta.marbles.len() != n || meta.actions.len() + 1 != n {
        return Err(Error::format(&meta_path, "per-frame arrays disagree with num_frames"));
    }
    let mut ep = Episode {
        id: meta.id,
        seed: meta.seed,
        frames_left: Vec::with_capacity(n),
        frames_right: Vec::with_capacity(n),
        joints: meta.joints.into_iter().map(JointState::new).collect(),
        actions: meta.actions.into_iter().map(Action::new).collect(),
        marbles: meta.marbles,
        drop_step: meta.drop_step,
    };
    for t in 0..n {
        ep.frames_left.push(read_ppm(&dir.join(format!("l_{t}.ppm")))?);
        ep.frames_right.push(read_ppm(&dir.join(format!("r_{t}.ppm")))?);
    }
    Ok(ep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedEpisode {
    pub id: u64,
    pub error: String,
}

/// Contents of `manifest.json` at the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub episodes: usize,
    pub commands_per_episode: usize,
    pub seed: u64,
    pub config_hash: String,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub failed: Vec<FailedEpisode>,
    /// Episodes that ended in a drop.
    pub dropped: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST_FILE), self)
    }

    pub fn load(root: &Path) -> Result<Self> {
        read_json(&root.join(MANIFEST_FILE))
    }
}

/// Training and validation episodes of a collected dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::load(root)?;
    let load = |ids: &[u64]| ids.iter().map(|&id| load_episode(&episode_dir(root, id))).collect::<Result<Vec<_>>>();
    Ok(Dataset {
        train: load(&manifest.train)?,
        val: load(&manifest.val)?,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::sim::{collect_episode, SimConfig};

    #[test]
    fn round_trip_and_missing_frame() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ep = (0..)
            .map(|s| collect_episode(&SimConfig::default(), 20, &mut rng_from_seed(s)))
            .find(|e| e.drop_step.is_none())
            .unwrap();
        ep.id = 4;
        ep.seed = 99;
        let dir = save_episode(&ep, tmp.path(), "abc").unwrap();
        assert_eq!(dir, tmp.path().join("ep_4"));
        let back = load_episode(&dir).unwrap();
        assert_eq!(back, ep);
        let again = tmp.path().join("again");
        save_episode(&back, &again, "abc").unwrap();
        let meta = |d: &Path| std::fs::read(d.join("meta.json")).unwrap();
        assert_eq!(meta(&dir), meta(&again.join("ep_4")));

        std::fs::remove_file(dir.join("l_7.ppm")).unwrap();
        let err = load_episode(&dir).unwrap_err();
        assert!(err.to_string().contains("l_7.ppm"), "{err}");
    }

    #[test]
    fn corrupt_meta_names_the_file() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("meta.json"), "{ not json").unwrap();
        let err = load_episode(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("meta.json"));
    }
}
