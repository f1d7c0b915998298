use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{median, quantile};
use crate::control::{run_episode_mpc, run_episode_p, CemConfig, EvalConfig, PGainSet, TrialLog, METRICS_CSV_HEADER};
use crate::dynamics::DynParams;
use crate::error::{Error, Result};
use crate::nn::NetParams;
use crate::sim::SimConfig;

/// Per-step distance statistics of one controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub trials: usize,
    /// Median distance to goal per step; trials that ended early hold their
    /// last value.
    pub median_px: Vec<f64>,
    pub p68_px: Vec<f64>,
    /// Trials dropped at or before each step.
    pub cumulative_drops: Vec<usize>,
    pub dropped_trials: usize,
    pub drop_rate: f64,
    pub initial_median_px: f64,
    pub final_median_px: f64,
}

impl ControllerSummary {
    pub fn from_logs(logs: &[TrialLog], n_steps: usize) -> Self {
        let at = |t: usize| logs.iter().map(|l| l.distance_at(t)).collect::<Vec<_>>();
        let median_px: Vec<f64> = (0..=n_steps).map(|t| median(&at(t))).collect();
        let p68_px = (0..=n_steps).map(|t| quantile(&at(t), 0.68)).collect();
        let cumulative_drops = (0..=n_steps)
            .map(|t| logs.iter().filter(|l| l.drop_step.is_some_and(|d| d <= t)).count())
            .collect();
        let dropped = logs.iter().filter(|l| l.drop_step.is_some()).count();
        Self {
            trials: logs.len(),
            initial_median_px: median_px[0],
            final_median_px: median_px[n_steps],
            median_px,
            p68_px,
            cumulative_drops,
            dropped_trials: dropped,
            drop_rate: dropped as f64 / logs.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_trials: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub planner_forward_passes_per_step: u64,
    pub mpc: ControllerSummary,
    pub p: ControllerSummary,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub mpc: Vec<TrialLog>,
    pub p: Vec<TrialLog>,
    pub summary: EvalSummary,
}

/// Runs MPC and the P baseline on the same trial seeds, and therefore on the
/// same resets and goals.
pub fn eval_manipulation(
    sim: &SimConfig,
    ae: &NetParams,
    dynamics: &DynParams,
    planner: &CemConfig,
    gains: &PGainSet,
    config: &EvalConfig,
) -> Result<EvalResult> {
    config.check()?;
    let mut mpc = Vec::with_capacity(config.n_trials);
    let mut p = Vec::with_capacity(config.n_trials);
    for k in 0..config.n_trials as u64 {
        mpc.push(run_episode_mpc(sim, ae, dynamics, planner, k, config.seed, config.n_steps)?);
        p.push(run_episode_p(sim, ae, gains, k, config.seed, config.n_steps)?);
    }
    let summary = EvalSummary {
        n_trials: config.n_trials,
        n_steps: config.n_steps,
        seed: config.seed,
        planner_forward_passes_per_step: (planner.particles * planner.horizon * planner.max_iters) as u64,
        mpc: ControllerSummary::from_logs(&mpc, config.n_steps),
        p: ControllerSummary::from_logs(&p, config.n_steps),
    };
    Ok(EvalResult { mpc, p, summary })
}

pub fn metrics_csv(logs: &[TrialLog]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER}\n");
    for l in logs {
        l.csv_rows(&mut s);
    }
    s
}

pub const TRAJECTORY_CSV_HEADER: &str = "controller,trial_id,step,finger,x,y,i,true_x,true_y,goal_x,goal_y";

pub fn trajectories_csv(result: &EvalResult) -> String {
    let mut s = format!("{TRAJECTORY_CSV_HEADER}\n");
    for (name, logs) in [("mpc", &result.mpc), ("p", &result.p)] {
        for l in logs {
            for r in &l.records {
                s += &format!(
                    "{name},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                    l.trial_id,
                    r.step,
                    l.goal.finger.as_str(),
                    r.keypoint.x,
                    r.keypoint.y,
                    r.keypoint.i,
                    r.truth.x,
                    r.truth.y,
                    l.goal.target.x,
                    l.goal.target.y
                );
            }
        }
    }
    s
}

pub fn summary_csv(summary: &EvalSummary) -> String {
    let mut s = String::from("step,mpc_median_px,mpc_p68_px,mpc_drops,p_median_px,p_p68_px,p_drops\n");
    for t in 0..=summary.n_steps {
        s += &format!(
            "{t},{:?},{:?},{},{:?},{:?},{}\n",
            summary.mpc.median_px[t],
            summary.mpc.p68_px[t],
            summary.mpc.cumulative_drops[t],
            summary.p.median_px[t],
            summary.p.p68_px[t],
            summary.p.cumulative_drops[t]
        );
    }
    s
}

const PLOT_SCRIPT: &str = r#"# gnuplot -p plot.gp
set datafile separator ","
set key autotitle columnhead
set multiplot layout 2,1
set ylabel "distance to goal (px)"
plot "summary.csv" using 1:2 with lines title "MPC median", \
     "summary.csv" using 1:3 with lines dt 2 title "MPC 68th pct", \
     "summary.csv" using 1:5 with lines title "P median", \
     "summary.csv" using 1:6 with lines dt 2 title "P 68th pct"
set xlabel "step"
set ylabel "dropped trials"
plot "summary.csv" using 1:4 with steps title "MPC", \
     "summary.csv" using 1:7 with steps title "P"
unset multiplot
"#;

/// Writes `metrics_mpc.csv`, `metrics_p.csv`, `trajectories.csv`,
/// `summary.csv`, `summary.json` and `plot.gp` into `dir`.
pub fn write_eval(result: &EvalResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&result.summary).expect("serialisable") + "\n";
    let files = [
        ("metrics_mpc.csv", metrics_csv(&result.mpc)),
        ("metrics_p.csv", metrics_csv(&result.p)),
        ("trajectories.csv", trajectories_csv(result)),
        ("summary.csv", summary_csv(&result.summary)),
        ("summary.json", json),
        ("plot.gp", PLOT_SCRIPT.to_string()),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{Goal, StepRecord};
    use crate::frame::Keypoint;
    use crate::sim::Finger;

    fn log(id: u64, dists: &[f64], drop: Option<usize>) -> TrialLog {
        let k = Keypoint::new(1.0, 1.0, 0.5);
        TrialLog {
            trial_id: id,
            goal: Goal::new(Finger::Left, Keypoint::new(30.0, 30.0, 1.0)).unwrap(),
            records: dists
                .iter()
                .enumerate()
                .map(|(t, &d)| StepRecord {
                    step: t,
                    keypoint: k,
                    truth: k,
                    dist_px: d,
                    intensity: 0.5,
                    dropped: drop == Some(t),
                    action: None,
                })
                .collect(),
            drop_step: drop,
        }
    }

    #[test]
    fn summary_holds_last_value_and_counts_drops() {
        let logs = [log(0, &[20.0, 10.0, 5.0], None), log(1, &[30.0, 25.0], Some(1)), log(2, &[16.0, 8.0, 4.0], None)];
        let s = ControllerSummary::from_logs(&logs, 2);
        assert_eq!(s.median_px, vec![20.0, 10.0, 5.0]);
        assert_eq!(s.cumulative_drops, vec![0, 1, 1]);
        assert_eq!(s.dropped_trials, 1);
        assert!((s.drop_rate - 1.0 / 3.0).abs() < 1e-15);
        let csv = metrics_csv(&logs);
        let drops = csv.lines().skip(1).filter(|l| l.ends_with(",1")).count();
        assert_eq!(drops, 1);
    }
}
