use std::f64::consts::FRAC_PI_4;

use lookout_core::datagen::{random_free_pose, ViewingZone};
use lookout_core::eval::{derive_seed, sample_task, DifficultyThresholds, Tier};
use lookout_core::model::{HyperParams, Vocabulary, WorldModel};
use lookout_core::planning::*;
use lookout_core::reward::{ground_truth_reward, RewardParams, SuccessThresholds};
use lookout_core::scene::{
    Action, ActionLimits, Bounds, CameraModel, Observation, Pose, Role, Scene, SceneObject, Shape,
};
use lookout_core::{Error, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Point mass moved by (dx, dy) with reward −‖(x − goal)/lim‖².
struct Bowl {
    goal: [f64; 2],
    lim: f64,
}

impl Bowl {
    fn states(&self, x0: &[f64; 2], seq: &[Action]) -> Vec<[f64; 2]> {
        let mut x = *x0;
        seq.iter()
            .map(|a| {
                x = [x[0] + a.dx, x[1] + a.dy];
                x
            })
            .collect()
    }

    fn r(&self, x: &[f64; 2]) -> f64 {
        -(((x[0] - self.goal[0]) / self.lim).powi(2) + ((x[1] - self.goal[1]) / self.lim).powi(2))
    }
}

impl PlanningModel for Bowl {
    type State = [f64; 2];
    type Goal = ();

    fn rollout_rewards(&self, x0: &[f64; 2], _: &(), seqs: &[ActionSequence]) -> Result<Vec<Vec<f64>>> {
        Ok(seqs
            .iter()
            .map(|s| self.states(x0, s).iter().map(|x| self.r(x)).collect())
            .collect())
    }

    fn reward_gradients(
        &self,
        x0: &[f64; 2],
        _: &(),
        seqs: &[ActionSequence],
    ) -> Result<Vec<(Vec<f64>, Vec<[f64; 3]>)>> {
        Ok(seqs
            .iter()
            .map(|s| {
                let xs = self.states(x0, s);
                let rewards = xs.iter().map(|x| self.r(x)).collect();
                let grad = (0..s.len())
                    .map(|t| {
                        let mut g = [0.0; 3];
                        for x in &xs[t..] {
                            for i in 0..2 {
                                g[i] -= 2.0 * (x[i] - self.goal[i]) / (self.lim * self.lim);
                            }
                        }
                        g
                    })
                    .collect();
                (rewards, grad)
            })
            .collect())
    }
}

/// Reward −‖a − target‖² on the first action only.
struct Quadratic {
    target: [f64; 3],
}

impl PlanningModel for Quadratic {
    type State = ();
    type Goal = ();

    fn rollout_rewards(&self, _: &(), _: &(), seqs: &[ActionSequence]) -> Result<Vec<Vec<f64>>> {
        Ok(seqs
            .iter()
            .map(|s| {
                let a = s[0].to_array();
                let mut r = vec![0.0; s.len()];
                r[0] = -(0..3).map(|i| (a[i] - self.target[i]).powi(2)).sum::<f64>();
                r
            })
            .collect())
    }

    fn reward_gradients(&self, _: &(), _: &(), seqs: &[ActionSequence]) -> Result<Vec<(Vec<f64>, Vec<[f64; 3]>)>> {
        let rewards = self.rollout_rewards(&(), &(), seqs)?;
        Ok(rewards
            .into_iter()
            .zip(seqs)
            .map(|(r, s)| {
                let a = s[0].to_array();
                let mut g = vec![[0.0; 3]; s.len()];
                for i in 0..3 {
                    g[0][i] = -2.0 * (a[i] - self.target[i]);
                }
                (r, g)
            })
            .collect())
    }
}

/// Delegates to a latent model but keeps the trait's generic penalty.
struct GenericPenalty<'a>(LatentModel<'a>);

impl PlanningModel for GenericPenalty<'_> {
    type State = Vec<f64>;
    type Goal = Vec<f64>;

    fn rollout_rewards(&self, s: &Vec<f64>, g: &Vec<f64>, seqs: &[ActionSequence]) -> Result<Vec<Vec<f64>>> {
        self.0.rollout_rewards(s, g, seqs)
    }

    fn reward_gradients(
        &self,
        s: &Vec<f64>,
        g: &Vec<f64>,
        seqs: &[ActionSequence],
    ) -> Result<Vec<(Vec<f64>, Vec<[f64; 3]>)>> {
        self.0.reward_gradients(s, g, seqs)
    }
}

fn untrained(seed: u64) -> WorldModel {
    WorldModel::new(
        HyperParams::default(),
        CameraModel::default(),
        ActionLimits::default(),
        Vocabulary::shipped(),
        seed,
    )
    .unwrap()
}

fn random_seq(rng: &mut ChaCha8Rng, t: usize, limits: &ActionLimits) -> ActionSequence {
    let l = limits.as_array();
    (0..t)
        .map(|_| {
            Action::new(
                rng.gen_range(-l[0]..l[0]),
                rng.gen_range(-l[1]..l[1]),
                rng.gen_range(-l[2]..l[2]),
            )
        })
        .collect()
}

fn target_ahead(distance: f64) -> Scene {
    Scene::new(
        Bounds::new([0.0, 0.0], [4.0, 4.0]),
        0.08,
        vec![SceneObject::new(
            "banana",
            3,
            Shape::disc([1.0 + distance, 2.0], 0.1),
            Role::TargetCandidate,
        )
        .with_label("banana")],
    )
    .unwrap()
}

fn fixture(name: &str) -> Scene {
    Scene::load(format!("{}/../../scenes/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn close(a: &Action, b: &Action, tol: f64) -> bool {
    let (a, b) = (a.to_array(), b.to_array());
    (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
}

#[test]
fn primitive_options() {
    let p = primitive_set(1.0);
    assert_eq!(p.len(), 9);
    assert!(close(&p[0][0], &Action::new(0.15, 0.0, 0.0), 1e-12));
    assert!(close(&p[3][0], &Action::new(0.0, 0.0, FRAC_PI_4), 1e-12));
    assert_eq!(p[7].len(), 2);
    assert!(close(&p[7][0], &Action::new(0.106, 0.106, 0.0), 1e-3));
    assert!(close(&p[7][1], &Action::new(0.0, 0.0, -FRAC_PI_4), 1e-12));
    assert!(close(&p[8][1], &Action::new(0.0, 0.0, FRAC_PI_4), 1e-12));
    // a third of the options fits inside the default limits exactly
    let lim = ActionLimits::default();
    assert!(primitive_set(1.0 / 3.0).iter().flatten().all(|a| lim.contains(a)));
    assert_eq!(PRIMITIVE_NAMES[7], 'H');
}

#[test]
fn objective_examples() {
    let seq = vec![Action::new(0.01, 0.0, 0.1); 4];
    let rewards = [0.1, 0.2, 0.3, 0.4];
    assert!((mpc_objective(&rewards, &seq, 0.0, &Action::ZERO) - 1.0).abs() < 1e-12);
    assert!((smoothness(&seq, &seq[0]) - 0.0).abs() < 1e-12);
    assert!((smoothness(&seq, &Action::ZERO) - 0.11).abs() < 1e-12);
    let alternating: ActionSequence = (0..4)
        .map(|i| Action::new(0.01, 0.0, if i % 2 == 0 { 0.1 } else { -0.1 }))
        .collect();
    let a_prev = Action::new(0.01, 0.0, 0.1);
    assert!(mpc_objective(&rewards, &seq, 0.05, &a_prev) > mpc_objective(&rewards, &alternating, 0.05, &a_prev));
}

#[test]
fn latent_rollout_basics() {
    let m = untrained(1);
    let z0: Vec<f64> = (0..m.d_z()).map(|i| (i as f64 * 0.37).sin()).collect();
    let e = m.embed_language("banana").unwrap();
    let seq = vec![Action::new(0.02, -0.01, 0.1)];
    let (lat, rew) = rollout_latent(&m, &z0, &seq, &e, RolloutMode::Mean).unwrap();
    assert_eq!((lat.len(), rew.len()), (1, 1));
    let (mu, _) = m.predict_dynamics(&z0, &seq[0]).unwrap();
    assert_eq!(lat[0], mu);
    assert_eq!(rew[0], m.predict_reward(&mu, &e).unwrap());
    let seq4 = vec![Action::new(0.02, -0.01, 0.1); 4];
    let a = rollout_latent(&m, &z0, &seq4, &e, RolloutMode::Mean).unwrap();
    let b = rollout_latent(&m, &z0, &seq4, &e, RolloutMode::Mean).unwrap();
    assert_eq!(a, b);
    // batched graph agrees with step-by-step calls
    let lm = LatentModel { model: &m };
    let batched = lm.rollout_rewards(&z0, &e, &[seq4.clone()]).unwrap();
    for (x, y) in batched[0].iter().zip(&a.1) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(matches!(
        rollout_latent(&m, &z0[1..], &seq, &e, RolloutMode::Mean),
        Err(Error::DimMismatch { .. })
    ));
    let s1 = rollout_latent(&m, &z0, &seq4, &e, RolloutMode::Sample(5)).unwrap();
    let s2 = rollout_latent(&m, &z0, &seq4, &e, RolloutMode::Sample(5)).unwrap();
    assert_eq!(s1, s2);
    assert_ne!(s1.0, a.0);
}

#[test]
fn latent_reward_gradient_matches_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let m = untrained(seed);
        let lm = LatentModel { model: &m };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0: Vec<f64> = (0..m.d_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = m.embed_language("red apple").unwrap();
        let seq = random_seq(&mut rng, 4, &m.limits);
        let (_, grad) = lm.reward_gradients(&z0, &e, &[seq.clone()]).unwrap().remove(0);
        let total = |s: &ActionSequence| -> f64 { lm.rollout_rewards(&z0, &e, &[s.clone()]).unwrap()[0].iter().sum() };
        let h = 1e-6;
        for t in 0..4 {
            for i in 0..3 {
                let mut hi = seq.clone();
                let mut lo = seq.clone();
                let mut a = hi[t].to_array();
                a[i] += h;
                hi[t] = Action::from_array(a);
                let mut a = lo[t].to_array();
                a[i] -= h;
                lo[t] = Action::from_array(a);
                let fd = (total(&hi) - total(&lo)) / (2.0 * h);
                worst = worst.max((fd - grad[t][i]).abs() / fd.abs().max(1.0));
            }
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn single_graph_penalty_matches_generic_penalty() {
    let m = untrained(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z0: Vec<f64> = (0..m.d_z()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let e = m.embed_language("mug").unwrap();
    let seqs: Vec<ActionSequence> = (0..3).map(|_| random_seq(&mut rng, 4, &m.limits)).collect();
    let a_prev = Action::new(0.01, 0.02, -0.1);
    let fused = LatentModel { model: &m }
        .objective_grad_batch(&z0, &e, &seqs, 0.3, &a_prev)
        .unwrap();
    let generic = GenericPenalty(LatentModel { model: &m })
        .objective_grad_batch(&z0, &e, &seqs, 0.3, &a_prev)
        .unwrap();
    for ((s1, g1), (s2, g2)) in fused.iter().zip(&generic) {
        assert!((s1.objective - s2.objective).abs() < 1e-12);
        for (a, b) in g1.iter().zip(g2) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-9);
            }
        }
    }
}

fn bowl_cfg(t: usize) -> PlannerConfig {
    PlannerConfig {
        horizon: t,
        gamma: 0.0,
        grad_steps: 100,
        grad_lr: 0.2,
        ..PlannerConfig::default()
    }
}

#[test]
fn grad_plan_zero_steps_returns_init() {
    let bowl = Bowl {
        goal: [0.03, -0.02],
        lim: 0.05,
    };
    let cfg = PlannerConfig {
        grad_steps: 0,
        ..bowl_cfg(2)
    };
    let init = vec![Action::new(0.01, 0.01, 0.1), Action::ZERO];
    let r = grad_plan(&bowl, &[0.0, 0.0], &(), &init, &cfg, &Action::ZERO).unwrap();
    assert_eq!(r.sequence, init);
    let expect = bowl
        .objective_batch(&[0.0, 0.0], &(), &[init], 0.0, &Action::ZERO)
        .unwrap();
    assert_eq!(r.predicted_return, expect[0].objective);
    assert_eq!(r.per_step_rewards.len(), 2);
}

#[test]
fn grad_plan_finds_bowl_optimum() {
    let bowl = Bowl {
        goal: [0.03, -0.02],
        lim: 0.05,
    };
    let r = grad_plan(&bowl, &[0.0, 0.0], &(), &[Action::ZERO; 2], &bowl_cfg(2), &Action::ZERO).unwrap();
    assert!(close(&r.sequence[0], &Action::new(0.03, -0.02, 0.0), 1e-2));
    assert!(close(&r.sequence[1], &Action::ZERO, 1e-2));
    assert!(r.predicted_return > -1e-3);
    let adam = PlannerConfig {
        grad_method: GradMethod::Adam,
        grad_lr: 0.05,
        ..bowl_cfg(2)
    };
    let r = grad_plan(&bowl, &[0.0, 0.0], &(), &[Action::ZERO; 2], &adam, &Action::ZERO).unwrap();
    assert!(close(&r.sequence[0], &Action::new(0.03, -0.02, 0.0), 1e-2));
}

#[test]
fn refinement_never_lowers_the_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lim = ActionLimits::default();
    for method in [GradMethod::Ascent, GradMethod::Adam] {
        for _ in 0..20 {
            let bowl = Bowl {
                goal: [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
                lim: 0.05,
            };
            let cfg = PlannerConfig {
                horizon: 4,
                gamma: 0.05,
                grad_steps: rng.gen_range(0..10),
                grad_method: method,
                grad_lr: rng.gen_range(0.01..1.0),
                ..PlannerConfig::default()
            };
            let init = random_seq(&mut rng, 4, &lim);
            let before = bowl
                .objective_batch(&[0.0, 0.0], &(), &[init.clone()], 0.05, &Action::ZERO)
                .unwrap();
            let r = grad_plan(&bowl, &[0.0, 0.0], &(), &init, &cfg, &Action::ZERO).unwrap();
            assert!(r.predicted_return >= before[0].objective);
            assert!(r.sequence.iter().all(|a| lim.contains(a)));
        }
    }
}

#[test]
fn cem_single_sample() {
    let q = Quadratic {
        target: [0.1, 0.0, 0.0],
    };
    let cfg = PlannerConfig {
        horizon: 1,
        gamma: 0.0,
        cem: CemConfig {
            population: 1,
            elites: 1,
            iterations: 1,
            init_sigma: 0.5,
        },
        ..PlannerConfig::default()
    };
    let r = cem_plan(&q, &(), &(), &cfg, 4, &Action::ZERO).unwrap();
    let again = cem_plan(&q, &(), &(), &cfg, 4, &Action::ZERO).unwrap();
    assert_eq!(r, again);
    let score = q
        .objective_batch(&(), &(), &[r.sequence.clone()], 0.0, &Action::ZERO)
        .unwrap();
    assert_eq!(score[0].objective, r.predicted_return);
}

fn quadratic_cfg() -> PlannerConfig {
    PlannerConfig {
        horizon: 1,
        gamma: 0.0,
        cem: CemConfig {
            population: 64,
            elites: 8,
            iterations: 20,
            init_sigma: 0.5,
        },
        limits: ActionLimits { lin: 0.2, ang: 0.2 },
        ..PlannerConfig::default()
    }
}

#[test]
fn cem_finds_quadratic_optimum() {
    let q = Quadratic {
        target: [0.1, 0.0, 0.0],
    };
    for seed in 0..5 {
        let r = cem_plan(&q, &(), &(), &quadratic_cfg(), seed, &Action::ZERO).unwrap();
        assert!(
            close(&r.sequence[0], &Action::new(0.1, 0.0, 0.0), 1e-2),
            "{:?}",
            r.sequence
        );
    }
}

#[test]
fn cem_spread_shrinks_on_unimodal_objective() {
    let q = Quadratic {
        target: [0.1, 0.0, 0.0],
    };
    let traces: Vec<Vec<f64>> = (0..20)
        .map(|seed| {
            cem_plan_traced(&q, &(), &(), &quadratic_cfg(), seed, &Action::ZERO)
                .unwrap()
                .1
        })
        .collect();
    for it in 1..20 {
        let mut prev: Vec<f64> = traces.iter().map(|t| t[it - 1]).collect();
        let mut cur: Vec<f64> = traces.iter().map(|t| t[it]).collect();
        prev.sort_by(f64::total_cmp);
        cur.sort_by(f64::total_cmp);
        assert!(cur[10] <= prev[10], "iteration {it}");
    }
}

#[test]
fn cem_rejects_bad_config() {
    let q = Quadratic { target: [0.0; 3] };
    let mut cfg = quadratic_cfg();
    cfg.cem.elites = 65;
    assert!(matches!(
        cem_plan(&q, &(), &(), &cfg, 0, &Action::ZERO),
        Err(Error::InvalidParams(_))
    ));
}

#[test]
fn heuristic_without_refinement_is_argmax_over_primitives() {
    let scene = target_ahead(1.0);
    let cam = CameraModel::default();
    let lim = ActionLimits::default();
    let om = OracleModel::new(&scene, cam, &lim);
    let start = Pose::new(1.0, 2.0, 0.3);
    let goal = "banana".to_string();
    let cfg = PlannerConfig {
        grad_steps: 0,
        ..PlannerConfig::default()
    };
    let r = heuristic_plan(&om, &start, &goal, &cfg, &Action::ZERO).unwrap();
    let raw: Vec<ActionSequence> = primitive_set(cfg.primitive_scale)
        .iter()
        .map(|p| fit_to_horizon(p, 4, &lim))
        .collect();
    let scores = om
        .objective_batch(&start, &goal, &raw, cfg.gamma, &Action::ZERO)
        .unwrap();
    let best = scores.iter().map(|s| s.objective).fold(f64::NEG_INFINITY, f64::max);
    let first = scores.iter().position(|s| s.objective == best).unwrap();
    assert_eq!(r.sequence, raw[first]);
    assert_eq!(r.candidate_scores.len(), 9);

    let refined = heuristic_plan(
        &om,
        &start,
        &goal,
        &PlannerConfig { grad_steps: 3, ..cfg },
        &Action::ZERO,
    )
    .unwrap();
    assert!(refined.predicted_return >= best);
}

#[test]
fn forward_wins_when_target_is_straight_ahead() {
    let scene = target_ahead(1.0);
    let cam = CameraModel::default();
    let cfg = PlannerConfig {
        grad_steps: 0,
        ..PlannerConfig::default()
    };
    let om = OracleModel::new(&scene, cam, &cfg.limits);
    let r = heuristic_plan(
        &om,
        &Pose::new(1.0, 2.0, 0.0),
        &"banana".to_string(),
        &cfg,
        &Action::ZERO,
    )
    .unwrap();
    let a = &primitive_set(cfg.primitive_scale)[0];
    assert_eq!(r.sequence, fit_to_horizon(a, 4, &cfg.limits));
}

#[test]
fn womap_contracts() {
    let bowl = Bowl {
        goal: [0.04, 0.01],
        lim: 0.05,
    };
    let cfg = PlannerConfig {
        gamma: 0.05,
        grad_steps: 10,
        ..bowl_cfg(4)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let proposal = random_seq(&mut rng, 4, &cfg.limits);
    let w = womap_plan(&bowl, &[0.0, 0.0], &(), &[proposal.clone()], &cfg, &Action::ZERO).unwrap();
    let g = grad_plan(&bowl, &[0.0, 0.0], &(), &proposal, &cfg, &Action::ZERO).unwrap();
    assert_eq!(w.sequence, g.sequence);
    assert_eq!(w.predicted_return, g.predicted_return);

    let proposals: Vec<ActionSequence> = (0..3).map(|_| random_seq(&mut rng, 4, &cfg.limits)).collect();
    let raw = PlannerConfig { grad_steps: 0, ..cfg };
    let w = womap_plan(&bowl, &[0.0, 0.0], &(), &proposals, &raw, &Action::ZERO).unwrap();
    let scores = bowl
        .objective_batch(&[0.0, 0.0], &(), &proposals, cfg.gamma, &Action::ZERO)
        .unwrap();
    let i = (0..3)
        .max_by(|&a, &b| scores[a].objective.total_cmp(&scores[b].objective))
        .unwrap();
    assert_eq!(w.sequence, proposals[i]);
    assert_eq!(w.candidate_scores.len(), 3);

    assert!(matches!(
        womap_plan(&bowl, &[0.0, 0.0], &(), &[], &cfg, &Action::ZERO),
        Err(Error::NoProposals)
    ));
}

fn execute(scene: &Scene, start: &Pose, seq: &[Action], target: &str) -> f64 {
    let mut p = *start;
    for a in seq {
        let q = p.compose(a);
        if scene.is_collision_free(&q) {
            p = q;
        }
    }
    ground_truth_reward(scene, &p, &CameraModel::default(), target, &RewardParams::default()).unwrap()
}

#[test]
fn oracle_proposals_beat_random_primitives() {
    let scene = fixture("kitchen");
    let cam = CameraModel::default();
    let cfg = PlannerConfig {
        grad_steps: 5,
        ..PlannerConfig::default()
    };
    let zones = scene
        .target_ids()
        .into_iter()
        .map(|t| {
            let z = ViewingZone::compute(&scene, &cam, &t, 0.05).unwrap();
            (t, z)
        })
        .collect();
    let om = OracleModel::new(&scene, cam, &cfg.limits);
    let prims = primitive_set(cfg.primitive_scale);
    let mut wins = 0;
    for trial in 0..50u64 {
        let task = sample_task(
            &scene,
            "kitchen",
            &zones,
            &cam,
            Tier::Easy,
            derive_seed(5, &[trial]),
            &DifficultyThresholds::default(),
            40,
            0.05,
        )
        .unwrap();
        let obs = scene.render_scan(&task.start, &cam).unwrap();
        let ctx = PlanContext {
            scene: &scene,
            camera: &cam,
            pose: &task.start,
            observation: &obs,
            query: &task.query,
            target_id: &task.target_id,
            step: 0,
            a_prev: Action::ZERO,
        };
        let mut proposer = OracleProposer {
            scale: cfg.primitive_scale,
            horizon: cfg.horizon,
        };
        let proposals = proposer.propose(&ctx, cfg.k, &cfg.limits).unwrap();
        let plan = womap_plan(&om, &task.start, &task.target_id, &proposals, &cfg, &Action::ZERO).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let random = fit_to_horizon(&prims[rng.gen_range(0..prims.len())], cfg.horizon, &cfg.limits);
        wins += usize::from(
            execute(&scene, &task.start, &plan.sequence, &task.target_id)
                >= execute(&scene, &task.start, &random, &task.target_id),
        );
    }
    assert!(wins >= 45, "{wins}/50");
}

fn context<'a>(scene: &'a Scene, cam: &'a CameraModel, pose: &'a Pose, obs: &'a Observation) -> PlanContext<'a> {
    PlanContext {
        scene,
        camera: cam,
        pose,
        observation: obs,
        query: "find the banana",
        target_id: "banana",
        step: 0,
        a_prev: Action::ZERO,
    }
}

fn scan_with(hits: &[(usize, u32, f64)]) -> Observation {
    let mut obs = Observation {
        depths: vec![3.0; 32],
        classes: vec![None; 32],
    };
    for &(i, c, d) in hits {
        obs.depths[i] = d;
        obs.classes[i] = Some(c);
    }
    obs
}

#[test]
fn primitive_proposer_rules() {
    let scene = target_ahead(1.0);
    let cam = CameraModel::default();
    let pose = Pose::new(1.0, 2.0, 0.0);
    let p = PrimitiveProposer::new(Vocabulary::shipped(), 1.0 / 3.0);
    assert_eq!(p.query_class("find the banana").unwrap(), 3);
    assert_eq!(p.query_class("coffee mug").unwrap(), 4);
    let cases: [(Vec<(usize, u32, f64)>, [usize; 3]); 5] = [
        (vec![(27, 3, 1.0), (28, 3, 1.0)], [5, 0, 3]),
        (vec![(3, 3, 1.0), (4, 3, 1.0)], [6, 0, 4]),
        (vec![(15, 3, 1.0), (16, 3, 1.0)], [0, 5, 6]),
        (vec![(15, 1, 0.4), (16, 1, 0.4)], [7, 8, 3]),
        (vec![(15, 0, 0.4), (2, 4, 1.0)], [3, 4, 0]),
    ];
    for (hits, expect) in cases {
        let obs = scan_with(&hits);
        assert_eq!(
            p.choose(&context(&scene, &cam, &pose, &obs)).unwrap(),
            expect,
            "{hits:?}"
        );
    }
    let obs = scan_with(&[(27, 3, 1.0)]);
    let mut p = p;
    let lim = ActionLimits::default();
    let props = p.propose(&context(&scene, &cam, &pose, &obs), 2, &lim).unwrap();
    assert_eq!(props.len(), 2);
    assert!(props.iter().flatten().all(|a| lim.contains(a)));
}

#[test]
fn file_proposer_ranks_and_clamps() {
    let json = r#"[
        {"rank": 2, "actions": [[0.5, 0.0, 0.0]], "confidence": 0.2},
        {"rank": 1, "actions": [[0.0, 0.0, 0.1], [0.01, 0.0, 0.0]], "confidence": 0.7}
    ]"#;
    let mut f = FileProposer::from_json(json).unwrap();
    let scene = target_ahead(1.0);
    let cam = CameraModel::default();
    let pose = Pose::new(1.0, 2.0, 0.0);
    let obs = scene.render_scan(&pose, &cam).unwrap();
    let lim = ActionLimits::default();
    let props = f.propose(&context(&scene, &cam, &pose, &obs), 3, &lim).unwrap();
    assert_eq!(props.len(), 2);
    assert_eq!(props[0].len(), 2);
    assert_eq!(props[1][0], Action::new(lim.lin, 0.0, 0.0));
    assert!(matches!(FileProposer::from_json("[]"), Err(Error::NoProposals)));
    assert!(FileProposer::from_json("{").is_err());
}

#[test]
fn episode_already_successful() {
    let scene = target_ahead(0.5);
    let cam = CameraModel::default();
    let mut planner = ZeroPlanner { horizon: 4 };
    let tr = execute_episode(
        &scene,
        &cam,
        &mut planner,
        "banana",
        "banana",
        Pose::new(1.0, 2.0, 0.0),
        40,
        &SuccessThresholds::default(),
    )
    .unwrap();
    assert!(tr.success);
    assert_eq!(tr.poses.len(), 1);
    assert_eq!(tr.steps(), 0);
    assert_eq!(tr.distance, 0.0);
}

#[test]
fn episode_with_zero_actions_fails_in_place() {
    let scene = target_ahead(1.0);
    let cam = CameraModel::default();
    let start = Pose::new(1.0, 2.0, 0.0);
    let mut planner = ZeroPlanner { horizon: 4 };
    let tr = execute_episode(
        &scene,
        &cam,
        &mut planner,
        "banana",
        "banana",
        start,
        12,
        &SuccessThresholds::default(),
    )
    .unwrap();
    assert!(!tr.success);
    assert_eq!(tr.steps(), 12);
    assert!(tr.poses.iter().all(|p| *p == start));
    assert_eq!(tr.distance, 0.0);
    assert!(matches!(
        execute_episode(
            &scene,
            &cam,
            &mut planner,
            "nothing",
            "x",
            start,
            5,
            &SuccessThresholds::default()
        ),
        Err(Error::UnknownTarget(_))
    ));
}

#[test]
fn oracle_grad_episode_reaches_target_ahead() {
    let scene = target_ahead(1.0);
    let cam = CameraModel::default();
    let cfg = PlannerConfig::default();
    let mut planner = OraclePlanner::new(
        OracleModel::new(&scene, cam, &cfg.limits),
        PlannerKind::Grad,
        cfg,
        Box::new(OracleProposer {
            scale: 1.0 / 3.0,
            horizon: 4,
        }),
        0,
    );
    let tr = execute_episode(
        &scene,
        &cam,
        &mut planner,
        "banana",
        "banana",
        Pose::new(1.0, 2.0, 0.0),
        40,
        &SuccessThresholds::default(),
    )
    .unwrap();
    assert!(tr.success, "{:?}", tr.oracle_rewards);
    assert!(tr.steps() <= 40);
    let travelled: f64 = tr.actions.iter().map(Action::translation_norm).sum();
    assert!((travelled - tr.distance).abs() < 1e-12);
}

#[test]
fn moves_into_obstacles_are_truncated() {
    let scene = Scene::new(
        Bounds::new([0.0, 0.0], [2.0, 2.0]),
        0.08,
        vec![
            SceneObject::new("wall", 0, Shape::rect([1.1, 0.0], [1.2, 2.0]), Role::Wall),
            SceneObject::new("banana", 3, Shape::disc([0.5, 0.3], 0.05), Role::TargetCandidate),
        ],
    )
    .unwrap();
    let cam = CameraModel::default();
    struct Forward;
    impl EpisodePlanner for Forward {
        fn plan(&mut self, _: &PlanContext) -> Result<PlanResult> {
            Ok(PlanResult {
                sequence: vec![Action::new(1.0, 0.0, 0.0)],
                predicted_return: 0.0,
                per_step_rewards: vec![0.0],
                candidate_scores: vec![],
            })
        }
    }
    let tr = execute_episode(
        &scene,
        &cam,
        &mut Forward,
        "banana",
        "banana",
        Pose::new(0.9, 1.0, 0.0),
        5,
        &SuccessThresholds::default(),
    )
    .unwrap();
    assert!(tr.poses.iter().all(|p| scene.is_collision_free(p)));
    assert!(tr.actions.iter().all(|a| a.dx <= 0.05 + 1e-12));
    let last = tr.poses.last().unwrap();
    assert!(last.x > 1.0 && last.x <= 1.1 - 0.08 + 1e-9, "{last:?}");
}

#[test]
fn planners_are_deterministic() {
    let scene = fixture("office");
    let cam = CameraModel::default();
    let m = untrained(4);
    let cfg = PlannerConfig {
        grad_steps: 3,
        ..PlannerConfig::default()
    };
    let start = random_free_pose(&scene, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let run = |kind: PlannerKind| {
        let mut p: Box<dyn EpisodePlanner> = match kind {
            PlannerKind::Random => Box::new(RandomPlanner::new(cfg, 11)),
            _ => Box::new(LearnedPlanner::new(
                &m,
                kind,
                cfg,
                Box::new(PrimitiveProposer::new(m.vocab.clone(), cfg.primitive_scale)),
                11,
            )),
        };
        let target = scene.target_ids()[0].clone();
        execute_episode(
            &scene,
            &cam,
            p.as_mut(),
            &target,
            &target,
            start,
            4,
            &SuccessThresholds::default(),
        )
        .unwrap()
    };
    for kind in PlannerKind::ALL {
        assert_eq!(run(kind), run(kind), "{kind:?}");
    }
}

#[test]
fn smoothness_falls_as_gamma_rises() {
    let gammas = [0.0, 0.05, 0.1, 0.2, 0.4];
    let mut medians = Vec::new();
    for &gamma in &gammas {
        let mut vals: Vec<f64> = (0..20u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bowl = Bowl {
                    goal: [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)],
                    lim: 0.05,
                };
                let cfg = PlannerConfig {
                    gamma,
                    grad_steps: 60,
                    grad_lr: 0.1,
                    ..bowl_cfg(4)
                };
                let init = random_seq(&mut rng, 4, &cfg.limits);
                let r = grad_plan(&bowl, &[0.0, 0.0], &(), &init, &cfg, &Action::ZERO).unwrap();
                smoothness(&r.sequence, &Action::ZERO)
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        medians.push(0.5 * (vals[9] + vals[10]));
    }
    for w in medians.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{medians:?}");
    }
}

#[test]
fn planner_config_validation() {
    assert!(PlannerConfig::default().validate().is_ok());
    let bad = PlannerConfig {
        horizon: 0,
        ..PlannerConfig::default()
    };
    assert!(bad.validate().is_err());
    let cfg: PlannerConfig = serde_json::from_str(r#"{"gamma": 0.1, "cem": {"population": 48}}"#).unwrap();
    assert_eq!(cfg.cem.population, 48);
    assert_eq!(cfg.horizon, 4);
    assert!(serde_json::from_str::<PlannerConfig>(r#"{"gama": 0.1}"#).is_err());
    assert_eq!("womap".parse::<PlannerKind>().unwrap(), PlannerKind::Womap);
    assert!("vlm".parse::<PlannerKind>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn executed_poses_stay_free(x in 0.2f64..2.3, y in 0.2f64..2.3, th in -3.1f64..3.1, seed in 0u64..1000) {
        let scene = fixture("pantry");
        let cam = CameraModel::default();
        let start = Pose::new(x, y, th);
        prop_assume!(scene.is_collision_free(&start));
        let cfg = PlannerConfig::default();
        let mut p = RandomPlanner::new(cfg, seed);
        let target = scene.target_ids()[0].clone();
        let tr = execute_episode(&scene, &cam, &mut p, &target, &target, start, 25, &SuccessThresholds::default()).unwrap();
        prop_assert!(tr.poses.iter().all(|q| scene.is_collision_free(q)));
        prop_assert!(tr.actions.iter().all(|a| cfg.limits.contains(a)));
    }

    #[test]
    fn cem_plans_respect_limits(seed in 0u64..10_000, gx in -0.3f64..0.3) {
        let q = Quadratic { target: [gx, -gx, 2.0 * gx] };
        let cfg = PlannerConfig { horizon: 3, cem: CemConfig { iterations: 3, ..CemConfig::default() }, ..PlannerConfig::default() };
        let r = cem_plan(&q, &(), &(), &cfg, seed, &Action::ZERO).unwrap();
        prop_assert_eq!(r.sequence.len(), 3);
        prop_assert!(r.sequence.iter().all(|a| cfg.limits.contains(a)));
    }
}
