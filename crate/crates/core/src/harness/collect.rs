use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::store::{save_episode, DatasetManifest, FailedEpisode};
use crate::config::{config_hash, kv_section, KvSection};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed, streams};
use crate::sim::{collect_episode, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CollectConfig {
    pub n_episodes: usize,
    /// Random commands per episode.
    pub n_commands: usize,
    pub val_fraction: f64,
    pub workers: usize,
    pub seed: u64,
}

kv_section!(CollectConfig {
    n_episodes,
    n_commands,
    val_fraction,
    workers,
    seed,
});

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_episodes: 300,
            n_commands: 20,
            val_fraction: 0.2,
            workers: 1,
            seed: 0,
        }
    }
}

impl CollectConfig {
    pub(crate) fn check(&self) -> Result<()> {
        if self.n_episodes == 0 || self.n_commands == 0 {
            return Err(Error::Config("collection needs n_episodes >= 1 and n_commands >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Hash of everything that determines the collected bytes. The worker count
/// is excluded because it does not change the output.
pub fn collection_hash(sim: &SimConfig, collect: &CollectConfig) -> String {
    let canonical = CollectConfig {
        workers: 1,
        ..collect.clone()
    };
    config_hash(&(sim.to_kv_string("sim.") + &canonical.to_kv_string("collect.")))
}

/// Episode-level split: a seeded shuffle, the first `round(f * n)` ids go to
/// validation. Both lists are returned sorted.
pub fn split_episodes(ids: &[u64], val_fraction: f64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut derive_rng(seed, streams::SPLIT, 0));
    let n_val = (val_fraction * ids.len() as f64).round() as usize;
    let mut val = shuffled[..n_val].to_vec();
    let mut train = shuffled[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Collects `config.n_episodes` episodes into `root` using `config.workers`
/// threads. Episode `k` draws from its own derived stream, so the bytes do not
/// depend on the worker count. Failed writes are listed in the manifest.
pub fn run_collection(sim: &SimConfig, config: &CollectConfig, root: &Path) -> Result<DatasetManifest> {
    config.check()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let hash = collection_hash(sim, config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(u64, Result<bool>)> = pool.install(|| {
        (0..config.n_episodes as u64)
            .into_par_iter()
            .map(|id| {
                let seed = derive_seed(config.seed, streams::EPISODE, id);
                let mut rng = crate::rng::rng_from_seed(seed);
                let mut ep = collect_episode(sim, config.n_commands, &mut rng);
                ep.id = id;
                ep.seed = seed;
                let dropped = ep.drop_step.is_some();
                (id, save_episode(&ep, root, &hash).map(|_| dropped))
            })
            .collect()
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    let mut dropped = 0;
    for (id, r) in results {
        match r {
            Ok(d) => {
                ok.push(id);
                dropped += d as usize;
            }
            Err(e) => failed.push(FailedEpisode { id, error: e.to_string() }),
        }
    }
    let (train, val) = split_episodes(&ok, config.val_fraction, config.seed);
    let manifest = DatasetManifest {
        version: super::store::META_VERSION,
        episodes: ok.len(),
        commands_per_episode: config.n_commands,
        seed: config.seed,
        config_hash: hash,
        train,
        val,
        failed,
        dropped,
    };
    manifest.save(root)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_300_is_240_60() {
        let ids: Vec<u64> = (0..300).collect();
        let (t, v) = split_episodes(&ids, 0.2, 5);
        assert_eq!((t.len(), v.len()), (240, 60));
        assert_eq!(split_episodes(&ids, 0.2, 5), (t, v));
    }

    #[test]
    fn hash_ignores_workers_only() {
        let sim = SimConfig::default();
        let a = CollectConfig::default();
        let b = CollectConfig { workers: 8, ..a.clone() };
        let c = CollectConfig { n_commands: 19, ..a.clone() };
        assert_eq!(collection_hash(&sim, &a), collection_hash(&sim, &b));
        assert_ne!(collection_hash(&sim, &a), collection_hash(&sim, &c));
        let sim2 = SimConfig {
            slip_noise_std: 0.06,
            ..sim.clone()
        };
        assert_ne!(collection_hash(&sim, &a), collection_hash(&sim2, &a));
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_exhaustive(n in 1usize..200, f in 0.0f64..0.9, seed in 0u64..50) {
            let ids: Vec<u64> = (0..n as u64).map(|i| i * 3).collect();
            let (t, v) = split_episodes(&ids, f, seed);
            prop_assert_eq!(t.len() + v.len(), n);
            let mut all = [t.clone(), v.clone()].concat();
            all.sort_unstable();
            prop_assert_eq!(all, ids);
            prop_assert!(t.iter().all(|x| !v.contains(x)));
        }
    }
}
