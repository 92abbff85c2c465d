use super::*;
use crate::sim::{AgentSpec, DynamicsConfig, Vec3};

fn tiny() -> Config {
    let mut c = Config::smoke();
    c.perception.camera_width = 8;
    c.perception.camera_height = 8;
    c.train.batch_size = 8;
    c.train.horizon = 8;
    c.train.iterations = 4;
    c.train.workers = 1;
    c.train.checkpoint_every = 0;
    c
}

fn forward_loss(cfg: &Config, params: &PolicyParams, scen: &Scenario, seed: u64) -> (f64, EnvStats) {
    let perception = Perception::new(&cfg.perception).unwrap();
    let ctx = RolloutContext {
        perception: &perception,
        dynamics: &cfg.dynamics,
        loss: &cfg.loss,
        horizon: cfg.train.horizon,
        decay: cfg.train.decay(),
        loss_scale: 1.0,
    };
    env_forward(params, ctx, &EnvSpec { scenario: scen.clone(), noise_seed: seed }).unwrap()
}

fn smoke_scene(cfg: &Config, seed: u64) -> Scenario {
    make_circle_swap(&cfg.scenario, seed, &cfg.dynamics).unwrap()
}

#[test]
fn zero_horizon_is_empty() {
    let mut cfg = tiny();
    cfg.train.horizon = 0;
    let p = PolicyParams::init(0, &cfg.arch).unwrap();
    let (l, s) = forward_loss(&cfg, &p, &smoke_scene(&cfg, 1), 3);
    assert_eq!(l, 0.0);
    assert_eq!(s.term_sums, [0.0; 6]);
}

#[test]
fn rollout_is_deterministic() {
    let cfg = tiny();
    let p = PolicyParams::init(5, &cfg.arch).unwrap();
    let sc = smoke_scene(&cfg, 2);
    let (a, sa) = forward_loss(&cfg, &p, &sc, 9);
    let (b, sb) = forward_loss(&cfg, &p, &sc, 9);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(sa, sb);
    let (c, _) = forward_loss(&cfg, &p, &sc, 10);
    assert_ne!(a, c);
}

#[test]
fn null_policy_hover_drifts_and_tracks_poorly() {
    let mut cfg = tiny();
    cfg.dynamics = DynamicsConfig::default();
    let p = PolicyParams::zeros(&cfg.arch).unwrap();
    let agents = vec![
        AgentSpec { start: Vec3::new(-3.0, 0.0, 1.5), goal: Vec3::new(3.0, 0.0, 1.5), speed: 1.5, initial_velocity: Vec3::zeros() },
        AgentSpec { start: Vec3::new(3.0, 2.0, 1.5), goal: Vec3::new(-3.0, 2.0, 1.5), speed: 1.5, initial_velocity: Vec3::zeros() },
    ];
    let sc = Scenario::custom(agents, vec![]);
    let (_, s) = forward_loss(&cfg, &p, &sc, 4);
    assert!(s.term_sums[0] > 0.0);
    assert_eq!(s.term_sums[3], 0.0);
    // Zero commands: no acceleration or jerk penalty.
    assert_eq!(s.term_sums[4], 0.0);
    assert_eq!(s.term_sums[5], 0.0);
}

#[test]
fn batch_gradient_is_mean_of_env_gradients() {
    let cfg = tiny();
    let session = TrainSession::new(cfg.clone()).unwrap();
    let envs = sample_batch(&cfg, TRAIN_STREAM, 0, 8).unwrap();
    assert_eq!(envs.len(), 2);
    let (g, _, _) = session.batch_gradient(&envs).unwrap();
    let mut mean = vec![0.0; g.len()];
    for e in &envs {
        let scale = 1.0 / (e.scenario.agents.len() * cfg.train.horizon) as f64;
        let (ge, _, _) = env_gradient(&session.params, session.context(cfg.train.decay(), scale), e).unwrap();
        mean.iter_mut().zip(&ge).for_each(|(m, x)| *m += 0.5 * x);
    }
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for (a, b) in g.iter().zip(&mean) {
        assert!((a - b).abs() <= 1e-12 * scale, "{} vs {}", a, b);
    }
}

#[test]
fn replayed_rollout_passes_gradcheck() {
    let mut cfg = tiny();
    cfg.train.horizon = 6;
    let p = PolicyParams::init(11, &cfg.arch).unwrap();
    let sc = smoke_scene(&cfg, 7);
    let r = rollout_gradcheck(&cfg, &p, &sc, 3, 1e-6).unwrap();
    assert!(r.max_rel_error < 1e-5, "{} at {:?}", r.max_rel_error, r.worst);
    assert!(r.analytic.iter().any(|t| t.data().iter().any(|&x| x != 0.0)));
}

#[test]
fn split_covers_batch() {
    let mut rng = stream_rng(1, &[2]);
    for b in [2, 5, 9, 33, 1024] {
        let c = split_batch(&mut rng, b, 4, 8);
        assert_eq!(c.iter().sum::<usize>(), b);
        assert!(c.iter().all(|&k| k >= 2));
    }
}

#[test]
fn rotation_keeps_pairwise_distances() {
    let cfg = tiny();
    for e in sample_batch(&cfg, TRAIN_STREAM, 3, 8).unwrap() {
        let sc = &e.scenario;
        let base = make_circle_swap(&ScenarioConfig { n_agents: sc.agents.len(), ..cfg.scenario.clone() }, sc.seed, &cfg.dynamics).unwrap();
        let (a, b) = (sc.points(), base.points());
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert!(((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn first_lr_and_log_row() {
    let mut cfg = tiny();
    cfg.train.iterations = 1;
    cfg.train.horizon = 16;
    let dir = tempfile::tempdir().unwrap();
    let out = train(&cfg, dir.path(), false, |_| {}).unwrap();
    assert_eq!(out.first.as_ref().unwrap().lr, 1e-3);
    let text = std::fs::read_to_string(&out.log_path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("iteration,total,success,ar,loss_col,loss_v"));
    assert!(dir.path().join(POLICY_FILE).exists());
}

#[test]
fn resume_is_bit_exact() {
    let cfg = tiny();
    let full = tempfile::tempdir().unwrap();
    train(&cfg, full.path(), false, |_| {}).unwrap();
    let split = tempfile::tempdir().unwrap();
    // Same schedule: only the stopping point differs.
    let mut first = TrainSession::new(cfg.clone()).unwrap();
    first.step().unwrap();
    first.step().unwrap();
    first.save(split.path()).unwrap();
    let out = train(&cfg, split.path(), true, |_| {}).unwrap();
    assert_eq!(out.iterations, 4);
    let a = PolicyParams::load(&full.path().join(POLICY_FILE)).unwrap();
    let b = PolicyParams::load(&split.path().join(POLICY_FILE)).unwrap();
    assert!(a.flat().iter().zip(b.flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let oa = AdamW::load(&full.path().join(OPTIMIZER_FILE)).unwrap();
    let ob = AdamW::load(&split.path().join(OPTIMIZER_FILE)).unwrap();
    assert_eq!(oa, ob);
}

#[test]
fn threads_do_not_change_results() {
    let mut cfg = tiny();
    let envs = sample_batch(&cfg, TRAIN_STREAM, 1, 8).unwrap();
    let single = TrainSession::new(cfg.clone()).unwrap().batch_gradient(&envs).unwrap().0;
    cfg.train.workers = 2;
    let multi = TrainSession::new(cfg).unwrap().batch_gradient(&envs).unwrap().0;
    assert!(single.iter().zip(&multi).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn disabling_rotation_keeps_canonical_maps() {
    let mut cfg = tiny();
    cfg.train.psi_max = 0.0;
    for e in sample_batch(&cfg, TRAIN_STREAM, 0, 8).unwrap() {
        assert_eq!(e.scenario.rotation, 0.0);
    }
}
