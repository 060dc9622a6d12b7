use proptest::prelude::*;

use takeover_lab::cf::{cf_accel, equilibrium_gap, CfKind, CfSpec, HdvPosterior};
use takeover_lab::intervention::{channels, EaConfig, EaParams, EaState, EaTheta};
use takeover_lab::kinematics::{Role, VehicleState};
use takeover_lab::metrics::{aggregate_expectation, amplification_ratio, DisturbanceProfile};
use takeover_lab::rl::{reward, RewardInputs, RewardParams};
use takeover_lab::rng::RngStream;

const HUMAN: [CfKind; 4] = [CfKind::Idm, CfKind::Fvdm, CfKind::Gfm, CfKind::Ovm];

fn particle(kind: usize, idx: usize) -> CfSpec {
    let post = HdvPosterior::packaged();
    let ps = post.particles(HUMAN[kind % 4]);
    ps[idx % ps.len()].clone()
}

fn accel(spec: &CfSpec, gap: f64, v: f64, dv: f64) -> f64 {
    cf_accel(spec, gap, v, dv, v + dv).unwrap()
}

fn theta(e_t: f64, d: f64) -> EaParams {
    let th = EaTheta {
        e0: 0.0,
        d,
        e_t,
        w1: 0.5,
        w2: 0.3,
        w3: 0.2,
    };
    EaParams::new(th, EaConfig { sigma: 0.0, ..EaConfig::default() }).unwrap()
}

/// Tick of the first takeover (σ = 0), if any.
fn takeover_tick(us: &[f64], p: &EaParams) -> Option<usize> {
    let av = VehicleState::new(1, Role::Av, 0.0, 20.0);
    let spec = particle(0, 0);
    let mut st = EaState::new(p.theta.e0, &av, spec);
    let mut rng = RngStream::new(0, 0);
    let mut etas = Vec::new();
    for &u in us {
        st.ea_step(u, p, &mut rng).unwrap();
        etas.push(st.eta());
    }
    etas.iter().position(|&e| e == 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn human_laws_are_rational(
        kind in 0usize..4, idx in 0usize..1000,
        gap in 3.0f64..80.0, v in 0.5f64..32.0, dv in -6.0f64..6.0,
    ) {
        prop_assume!(v + dv > 0.01);
        let spec = particle(kind, idx);
        let h = 1e-4;
        let a = accel(&spec, gap, v, dv);
        prop_assert!(accel(&spec, gap + h, v, dv) >= a - 1e-9);
        prop_assert!(accel(&spec, gap, v, dv + h) >= a - 1e-9);
        prop_assert!(accel(&spec, gap, v + h, dv - h) <= a + 1e-9);
    }

    #[test]
    fn equilibrium_gap_is_a_fixed_point(kind in 0usize..4, idx in 0usize..1000, frac in 0.1f64..0.9) {
        let spec = particle(kind, idx);
        let v = frac * spec.free_flow_speed().min(40.0);
        let gap = equilibrium_gap(&spec, v).unwrap();
        prop_assert!(accel(&spec, gap, v, 0.0).abs() < 1e-8);
    }

    #[test]
    fn dissimilarity_channels_stay_in_unit_interval(
        ya in 0.0f64..1500.0, va in 0.0f64..40.0, ys in -50.0f64..1550.0, vs in 0.0f64..40.0, t in 0.0f64..200.0,
    ) {
        let cfg = EaConfig::default();
        let av = VehicleState::new(1, Role::Av, ya, va);
        let sh = VehicleState::new(1, Role::Shadow, ys, vs);
        let lead = VehicleState::new(0, Role::Leader, ya + 30.0, va);
        let ch = channels(&av, &sh, &lead, t, &cfg);
        for c in ch {
            prop_assert!((0.0..=1.0).contains(&c));
        }
        let u = 0.5 * ch[0] + 0.3 * ch[1] + 0.2 * ch[2];
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn larger_dissimilarity_never_delays_takeover(
        us in prop::collection::vec(0.0f64..1.0, 50..300),
        bumps in prop::collection::vec(0.0f64..0.5, 300),
        e_t in 1.0f64..20.0, d in 0.05f64..1.0,
    ) {
        let p = theta(e_t, d);
        let hi: Vec<f64> = us.iter().zip(&bumps).map(|(u, b)| (u + b).min(1.0)).collect();
        match (takeover_tick(&us, &p), takeover_tick(&hi, &p)) {
            (Some(lo), Some(h)) => prop_assert!(h <= lo),
            (Some(_), None) => prop_assert!(false, "larger U censored"),
            _ => {}
        }
    }

    #[test]
    fn mode_switches_at_most_once(
        us in prop::collection::vec(0.0f64..1.0, 10..300), sigma in 0.0f64..3.0, seed in any::<u64>(),
    ) {
        let mut p = theta(5.0, 0.3);
        p.config.sigma = sigma;
        let av = VehicleState::new(1, Role::Av, 0.0, 20.0);
        let mut st = EaState::new(0.0, &av, particle(0, 0));
        let mut rng = RngStream::new(seed, 1);
        let mut prev = 1.0;
        let mut switches = 0;
        for &u in &us {
            st.ea_step(u, &p, &mut rng).unwrap();
            prop_assert!(st.e >= 0.0);
            prop_assert!(st.eta() <= prev);
            if st.eta() != prev {
                switches += 1;
                prop_assert_eq!(st.takeover_time, Some(st.steps as f64 * 0.1));
            }
            prev = st.eta();
        }
        prop_assert!(switches <= 1);
        prop_assert_eq!(st.takeover_time.is_some(), switches == 1);
    }

    #[test]
    fn ratio_is_scale_invariant(f in 1.0f64..100.0, l in 1.0f64..100.0, c in 0.01f64..100.0) {
        let r = amplification_ratio(f, l, 1e-3);
        let rc = amplification_ratio(c * c * f, c * c * l, 1e-3);
        prop_assert!((r - rc).abs() <= 1e-9 * r.max(1.0));
    }

    #[test]
    fn aggregation_ignores_rollout_order(
        norms in prop::collection::vec(prop::collection::vec(0.0f64..50.0, 3), 2..12), shift in 1usize..11,
    ) {
        let profiles: Vec<DisturbanceProfile> = norms
            .iter()
            .map(|n| DisturbanceProfile { norms: n.clone(), running: n.iter().map(|&x| vec![x / 2.0, x]).collect() })
            .collect();
        let mut rotated = profiles.clone();
        rotated.rotate_left(shift % profiles.len());
        rotated.reverse();
        let (a, b) = (aggregate_expectation(&profiles).unwrap(), aggregate_expectation(&rotated).unwrap());
        for i in 0..3 {
            prop_assert!((a.mean[i] - b.mean[i]).abs() < 1e-9);
            prop_assert!((a.sd[i] - b.sd[i]).abs() < 1e-9);
            prop_assert!((a.mean_running[i][1] - b.mean_running[i][1]).abs() < 1e-9);
        }
    }

    #[test]
    fn reward_is_bounded_below(
        u in 0.0f64..1.0, nl in 1e-3f64..100.0, na in 1e-3f64..100.0, nf in 1e-3f64..100.0,
        gap in -5.0f64..50.0, v in 0.0f64..40.0,
    ) {
        let rp = RewardParams::default();
        let r = reward(&RewardInputs { u, norm_lead: nl, norm_av: na, norm_follower: nf, gap, v }, &rp);
        prop_assert!(r >= rp.lower_bound() - 1e-12);
        prop_assert!(r <= 0.0);
    }

    #[test]
    fn collision_is_strictly_worse(
        u in 0.0f64..1.0, nl in 1e-3f64..100.0, na in 1e-3f64..100.0, nf in 1e-3f64..100.0,
        gap in 0.01f64..50.0, crash in -5.0f64..=0.0, v in 0.0f64..40.0,
    ) {
        let rp = RewardParams::default();
        let safe = RewardInputs { u, norm_lead: nl, norm_av: na, norm_follower: nf, gap, v };
        let hit = RewardInputs { gap: crash, ..safe };
        prop_assert!(reward(&hit, &rp) < reward(&safe, &rp));
    }
}
