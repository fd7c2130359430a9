//! Clip library, parallel rollouts and checkpoint files.

use std::sync::Arc;

use amp_locomotion::config::TrainConfig;
use amp_locomotion::mocap::{default_gaits, load_clip, synth_gait, ClipError, ClipLibrary, ClipSchema, MotionClip};
use amp_locomotion::model::build_default_model;
use amp_locomotion::ppo::checkpoint::Checkpoint;
use amp_locomotion::ppo::train::Trainer;
use amp_locomotion::ppo::Agent;
use amp_locomotion::sim::{rollout_env, run_parallel, EnvSettings, Episode};
use amp_locomotion::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = 5;
    cfg.train.envs = 4;
    cfg.train.steps_per_env = 16;
    cfg
}

fn settings_and_agent(cfg: &TrainConfig) -> (Arc<EnvSettings>, Agent) {
    let settings = Arc::new(cfg.env_settings(cfg.model().unwrap()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let agent = Agent::new(settings.obs_dim(), settings.act_dim(), &cfg.ppo, &mut rng).unwrap();
    (settings, agent)
}

#[test]
fn looped_clip_wraps_last_frame_to_first() {
    let model = build_default_model();
    let clip = synth_gait(&default_gaits()[0], &model, 50.0).unwrap();
    let lib = ClipLibrary::new(&model, vec![clip], vec![1.0], 50.0).unwrap();
    let n = lib.clips()[0].frames.len();
    assert_eq!(lib.total_transitions(), n);
    let wrap = lib.transition(0, n - 1);
    assert_eq!(&wrap.current, lib.features(0, n - 1));
    assert_eq!(&wrap.next, lib.features(0, 0));
}

#[test]
fn loop_pair_is_sampled_at_uniform_rate() {
    let model = build_default_model();
    let clip = synth_gait(&default_gaits()[1], &model, 50.0).unwrap();
    let lib = ClipLibrary::new(&model, vec![clip], vec![1.0], 50.0).unwrap();
    let n = lib.total_transitions();
    let draws = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hits = (0..draws).filter(|_| lib.sample_index(&mut rng).1 == n - 1).count();
    let p = 1.0 / n as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    assert!(
        (hits as f64 - draws as f64 * p).abs() < 5.0 * sigma,
        "{hits} hits, expected {}",
        draws as f64 * p
    );
}

#[test]
fn clip_file_round_trip_and_rejections() {
    let model = build_default_model();
    let schema = ClipSchema::of(&model);
    let clip = synth_gait(&default_gaits()[2], &model, 100.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("walk.clip");
    clip.save(&path).unwrap();
    assert_eq!(load_clip(&path, &schema).unwrap(), clip);

    let mut broken = clip.clone();
    let last = broken.frames.len() - 1;
    broken.frames[last].q[0] += 0.5;
    assert!(matches!(
        broken.validate(&schema, 0.1),
        Err(ClipError::LoopDiscontinuity { channel: 0, .. })
    ));

    let one = MotionClip::new(
        "one",
        &schema.name,
        100.0,
        false,
        vec![vec![0.0; schema.joints]],
        None,
        None,
    );
    assert!(matches!(one, Err(ClipError::TooFewFrames { frames: 1, .. })));

    let text = clip.to_text().replace(&schema.name, "quadruped-12");
    std::fs::write(&path, text).unwrap();
    assert!(load_clip(&path, &schema).is_err());
}

#[test]
fn parallel_rollouts_match_serial_and_stay_in_env_order() {
    let cfg = small_config();
    let (settings, agent) = settings_and_agent(&cfg);
    let make = || -> Vec<Episode> {
        (0..4)
            .map(|id| Episode::new(settings.clone(), id, cfg.seed).unwrap())
            .collect()
    };
    let mut par_envs = make();
    let par = run_parallel(&mut par_envs, &agent, 30).unwrap();
    let mut ser_envs = make();
    let ser: Vec<_> = ser_envs
        .iter_mut()
        .map(|e| rollout_env(e, &agent, 30).unwrap())
        .collect();
    assert_eq!(par.len(), 4);
    for (p, s) in par.iter().zip(&ser) {
        assert_eq!(p.last_value, s.last_value);
        for (a, b) in p.steps.iter().zip(&s.steps) {
            assert_eq!(a.observation, b.observation);
            assert_eq!(a.action, b.action);
            assert_eq!(a.report.total, b.report.total);
        }
    }
    // Each environment has its own random streams.
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(par[i].steps[0].observation, par[j].steps[0].observation);
            assert_ne!(par[i].steps[0].action, par[j].steps[0].action);
        }
    }
    assert!(run_parallel(&mut [], &agent, 1).is_err());
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let mut trainer = Trainer::new(&small_config()).unwrap();
    trainer.step().unwrap();
    let ckpt = trainer.checkpoint();
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes).unwrap();
    let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.iteration, 1);
    assert_eq!(back.config, ckpt.config);
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(bytes, again);

    let obs = vec![0.1; back.agent.obs_dim()];
    assert_eq!(
        back.agent.mean_action(&obs).unwrap(),
        ckpt.agent.mean_action(&obs).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    ckpt.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::load(&path).unwrap().iteration, 1);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let ckpt = Trainer::new(&small_config()).unwrap().checkpoint();
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes).unwrap();
    let read = |b: &[u8]| Checkpoint::read_from(&mut &b[..]);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(read(&bad_magic), Err(Error::Checkpoint(_))));

    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(matches!(read(&bad_version), Err(Error::Checkpoint(_))));

    let mut bad_dims = bytes.clone();
    bad_dims[8] ^= 1;
    assert!(read(&bad_dims).is_err());

    for cut in [0, 3, 10, 30, bytes.len() / 2, bytes.len() - 1] {
        assert!(read(&bytes[..cut]).is_err(), "truncated at {cut}");
    }

    // NaN in the last stored parameter.
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(read(&nan).is_err());
}
