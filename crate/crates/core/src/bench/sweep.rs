use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::perception::CameraId;
use crate::sim::rng::stream_seed;
use crate::sim::{make_circle_swap, ObstacleSpec, ScenarioConfig, SpeedSpec};

use super::{compute_metrics, run_episode, BenchError, EpisodeOptions, EpisodeRecord, EvalConfig, Method, MetricsReport};

const NOISE_TAG: u64 = 0xE7A1_0003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Swarm size.
    Scale,
    /// Obstacles per 100 m².
    Density,
    /// Commanded cruise speed.
    Speed,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Scale, Axis::Density, Axis::Speed];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Scale => "scale",
            Axis::Density => "density",
            Axis::Speed => "speed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Configured values of this axis in `eval`.
    pub fn values(self, eval: &EvalConfig) -> Vec<f64> {
        match self {
            Axis::Scale => eval.scale.iter().map(|&n| n as f64).collect(),
            Axis::Density => eval.density.clone(),
            Axis::Speed => eval.speed.clone(),
        }
    }
}

/// `base` with one axis set to `value`.
pub fn axis_scenario(base: &ScenarioConfig, axis: Axis, value: f64) -> Result<ScenarioConfig, BenchError> {
    let mut c = base.clone();
    match axis {
        Axis::Scale => {
            if value.fract() != 0.0 || value < 2.0 {
                return Err(BenchError::Config(format!("scale value {} is not an agent count", value)));
            }
            c.n_agents = value as usize;
        }
        Axis::Density => c.obstacles = ObstacleSpec::Density { per_100m2: value },
        Axis::Speed => c.speed = SpeedSpec::Fixed { value },
    }
    c.validate()?;
    Ok(c)
}

pub fn map_seeds(eval: &EvalConfig) -> Vec<u64> {
    (0..eval.maps as u64).map(|m| eval.seed + m).collect()
}

fn noise_seed(map_seed: u64) -> u64 {
    stream_seed(map_seed, &[NOISE_TAG])
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub axis: String,
    pub value: f64,
    /// The map seed of a per-map row; the first of the consecutive map
    /// seeds for an aggregated row.
    pub map_seed: u64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "MFCT")]
    pub mfct: f64,
    pub mean_speed: f64,
    pub duration: f64,
}

impl ResultRow {
    fn new(method: &str, axis: &str, value: f64, map_seed: u64, m: &MetricsReport) -> Self {
        Self {
            method: method.to_string(),
            axis: axis.to_string(),
            value,
            map_seed,
            sr: m.success_rate,
            cr: m.collision_rate,
            mfct: m.mfct,
            mean_speed: m.mean_speed,
            duration: m.duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHash {
    pub method: String,
    pub value: f64,
    pub map_seed: u64,
    /// SHA-256 of the scenario text the method was run on.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// One row per (method, axis value), pooled over maps.
    pub rows: Vec<ResultRow>,
    /// One row per (method, axis value, map).
    pub per_map: Vec<ResultRow>,
    pub scenario_hashes: Vec<ScenarioHash>,
}

fn in_pool<T: Send>(pool: Option<&rayon::ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

/// Evaluates every method on `maps` seeded layouts per axis value. Each
/// method regenerates its scenarios from the shared seeds; the hashes of
/// the consumed scenario text are returned for comparison.
pub fn run_sweep(
    methods: &[Method],
    axis: Axis,
    values: &[f64],
    cfg: &Config,
    pool: Option<&rayon::ThreadPool>,
) -> Result<SweepResult, BenchError> {
    for m in methods {
        m.controller.validate()?;
    }
    let seeds = map_seeds(&cfg.eval);
    let mut jobs = Vec::new();
    for &value in values {
        for &seed in &seeds {
            for (mi, _) in methods.iter().enumerate() {
                jobs.push((value, seed, mi));
            }
        }
    }
    let run = |&(value, seed, mi): &(f64, u64, usize)| -> Result<(EpisodeRecord, String), BenchError> {
        let sc_cfg = axis_scenario(&cfg.scenario, axis, value)?;
        let scenario = make_circle_swap(&sc_cfg, seed, &cfg.dynamics)?;
        let text = scenario.to_text()?;
        let hash = format!("{:x}", Sha256::digest(text.as_bytes()));
        let opts = EpisodeOptions {
            steps: cfg.eval.steps,
            noise_seed: noise_seed(seed),
            freeze_on_collision: cfg.eval.freeze_on_collision,
            failed: &[],
            interactions: true,
        };
        let m = &methods[mi];
        Ok((run_episode(m.controller, m.name, &scenario, &cfg.dynamics, &opts, None)?, hash))
    };
    let results: Vec<Result<(EpisodeRecord, String), BenchError>> = in_pool(pool, || jobs.par_iter().map(run).collect());
    let mut out = SweepResult { rows: Vec::new(), per_map: Vec::new(), scenario_hashes: Vec::new() };
    let mut records: Vec<EpisodeRecord> = Vec::with_capacity(jobs.len());
    for (job, r) in jobs.iter().zip(results) {
        let (rec, hash) = r?;
        let (value, seed, mi) = *job;
        out.per_map.push(ResultRow::new(methods[mi].name, axis.name(), value, seed, &compute_metrics(std::slice::from_ref(&rec))));
        out.scenario_hashes.push(ScenarioHash { method: methods[mi].name.to_string(), value, map_seed: seed, sha256: hash });
        records.push(rec);
    }
    for &value in values {
        for m in methods {
            let recs: Vec<EpisodeRecord> = jobs
                .iter()
                .zip(&records)
                .filter(|((v, _, mi), _)| *v == value && methods[*mi].name == m.name)
                .map(|(_, r)| r.clone())
                .collect();
            out.rows.push(ResultRow::new(m.name, axis.name(), value, seeds[0], &compute_metrics(&recs)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionCondition {
    None,
    Front,
    Left,
    Back,
    Right,
    All,
}

impl OcclusionCondition {
    /// The single-failure protocol: intact, then each camera in turn.
    pub const STANDARD: [OcclusionCondition; 5] = [
        OcclusionCondition::None,
        OcclusionCondition::Front,
        OcclusionCondition::Left,
        OcclusionCondition::Back,
        OcclusionCondition::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OcclusionCondition::None => "none",
            OcclusionCondition::Front => "front",
            OcclusionCondition::Left => "left",
            OcclusionCondition::Back => "back",
            OcclusionCondition::Right => "right",
            OcclusionCondition::All => "all",
        }
    }

    pub fn cameras(self) -> Vec<CameraId> {
        match self {
            OcclusionCondition::None => vec![],
            OcclusionCondition::Front => vec![CameraId::Front],
            OcclusionCondition::Left => vec![CameraId::Left],
            OcclusionCondition::Back => vec![CameraId::Back],
            OcclusionCondition::Right => vec![CameraId::Right],
            OcclusionCondition::All => CameraId::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRow {
    /// `multi` (agents interact) or `single` (each agent alone with the
    /// obstacles).
    pub mode: String,
    pub condition: String,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "MFCT")]
    pub mfct: f64,
    pub mean_speed: f64,
    /// SR change against the intact condition of the same mode, percentage
    /// points.
    pub delta_sr_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionTable {
    pub rows: Vec<OcclusionRow>,
    /// SR with the left camera failed minus SR with the right camera failed,
    /// percentage points, per mode.
    pub left_minus_right_pp: Vec<(String, f64)>,
}

/// Evaluates `method` under each camera-failure condition on the same maps
/// and noise seeds, with and without agent interactions.
pub fn run_occlusion_ablation(
    method: Method,
    conditions: &[OcclusionCondition],
    cfg: &Config,
    pool: Option<&rayon::ThreadPool>,
) -> Result<OcclusionTable, BenchError> {
    method.controller.validate()?;
    let seeds = map_seeds(&cfg.eval);
    let modes = [("multi", true), ("single", false)];
    let failed: Vec<Vec<CameraId>> = conditions.iter().map(|c| c.cameras()).collect();
    let mut jobs = Vec::new();
    for mode in 0..modes.len() {
        for ci in 0..conditions.len() {
            for &seed in &seeds {
                jobs.push((mode, ci, seed));
            }
        }
    }
    let run = |&(mode, ci, seed): &(usize, usize, u64)| -> Result<EpisodeRecord, BenchError> {
        let scenario = make_circle_swap(&cfg.scenario, seed, &cfg.dynamics)?;
        let opts = EpisodeOptions {
            steps: cfg.eval.steps,
            noise_seed: noise_seed(seed),
            freeze_on_collision: cfg.eval.freeze_on_collision,
            failed: &failed[ci],
            interactions: modes[mode].1,
        };
        run_episode(method.controller, method.name, &scenario, &cfg.dynamics, &opts, None)
    };
    let results: Vec<Result<EpisodeRecord, BenchError>> = in_pool(pool, || jobs.par_iter().map(run).collect());
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut left_minus_right_pp = Vec::new();
    for (mode, (mode_name, _)) in modes.iter().enumerate() {
        let mut metrics = Vec::new();
        for ci in 0..conditions.len() {
            let recs: Vec<EpisodeRecord> = jobs
                .iter()
                .zip(&records)
                .filter(|((m, c, _), _)| *m == mode && *c == ci)
                .map(|(_, r)| r.clone())
                .collect();
            metrics.push(compute_metrics(&recs));
        }
        let intact = conditions.iter().position(|&c| c == OcclusionCondition::None).map(|i| metrics[i].success_rate);
        for (ci, m) in metrics.iter().enumerate() {
            rows.push(OcclusionRow {
                mode: mode_name.to_string(),
                condition: conditions[ci].name().to_string(),
                sr: m.success_rate,
                cr: m.collision_rate,
                mfct: m.mfct,
                mean_speed: m.mean_speed,
                delta_sr_pp: intact.map_or(f64::NAN, |s| 100.0 * (m.success_rate - s)),
            });
        }
        let sr_of = |c: OcclusionCondition| conditions.iter().position(|&x| x == c).map(|i| metrics[i].success_rate);
        if let (Some(l), Some(r)) = (sr_of(OcclusionCondition::Left), sr_of(OcclusionCondition::Right)) {
            left_minus_right_pp.push((mode_name.to_string(), 100.0 * (l - r)));
        }
    }
    Ok(OcclusionTable { rows, left_minus_right_pp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineConfig;
    use crate::bench::{read_rows_csv, write_rows_csv, Controller};

    fn small() -> Config {
        let mut c = Config::smoke();
        c.eval.steps = 20;
        c.eval.maps = 3;
        c
    }

    #[test]
    fn sweep_shape_and_shared_maps() {
        let cfg = small();
        let b = BaselineConfig::default();
        let methods = [Method { name: "apf", controller: Controller::Apf(&b) }, Method { name: "dwa", controller: Controller::Dwa(&b) }];
        let res = run_sweep(&methods, Axis::Scale, &[8.0, 16.0], &cfg, None).unwrap();
        assert_eq!(res.rows.len(), 4);
        assert_eq!(res.per_map.len(), 12);
        for h in &res.scenario_hashes {
            let twin = res.scenario_hashes.iter().find(|o| o.method != h.method && o.value == h.value && o.map_seed == h.map_seed).unwrap();
            assert_eq!(h.sha256, twin.sha256);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_rows_csv(&path, &res.rows).unwrap();
        assert_eq!(read_rows_csv(&path).unwrap(), res.rows);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("method,axis,value,map_seed,SR,CR,MFCT,mean_speed,duration"));
    }

    #[test]
    fn parallel_sweep_matches_serial() {
        let cfg = small();
        let b = BaselineConfig::default();
        let methods = [Method { name: "apf", controller: Controller::Apf(&b) }];
        let serial = run_sweep(&methods, Axis::Density, &[0.5, 2.0], &cfg, None).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let par = run_sweep(&methods, Axis::Density, &[0.5, 2.0], &cfg, Some(&pool)).unwrap();
        assert_eq!(serial, par);
    }

    #[test]
    fn axis_values_apply() {
        let base = ScenarioConfig::default();
        assert_eq!(axis_scenario(&base, Axis::Scale, 16.0).unwrap().n_agents, 16);
        assert_eq!(axis_scenario(&base, Axis::Speed, 2.25).unwrap().speed, SpeedSpec::Fixed { value: 2.25 });
        assert!(axis_scenario(&base, Axis::Scale, 2.5).is_err());
    }
}
