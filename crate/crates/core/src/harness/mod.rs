//! Dataset persistence, evaluation, benchmarks and the command line.

mod bench;
pub mod cli;
mod collect;
mod dataset;
mod eval;
pub mod pipeline;
mod ppm;
mod store;

pub use bench::{bench_timing, BenchConfig, BenchResult};
pub use collect::{collection_hash, run_collection, split_episodes, CollectConfig};
pub use dataset::{
    build_transition_dataset, encode_episode, encode_frames, held_states, median, pearson, quantile, tracking_report,
    TrackingReport,
};
pub use eval::{
    eval_manipulation, metrics_csv, summary_csv, trajectories_csv, write_eval, ControllerSummary, EvalResult,
    EvalSummary, TRAJECTORY_CSV_HEADER,
};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use store::{
    episode_dir, load_dataset, load_episode, save_episode, Dataset, DatasetManifest, EpisodeMeta, FailedEpisode,
    MANIFEST_FILE,
};
