use cyclescope::cyclestats::{CycleAnalysis, CycleLabel};
use cyclescope::maser_ref::MaserClosedForm;
use cyclescope::model::{build_maser, random_single_excitation, ChannelId, MaserParams, RandomModelSpec};
use cyclescope::structure::analyze_structure;
use cyclescope::trajectory::{parse_cycles, EventChannel, JumpEvent};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec_strategy() -> impl Strategy<Value = RandomModelSpec> {
    prop_oneof![
        Just(RandomModelSpec::default()),
        Just(RandomModelSpec {
            dim_extract: 2,
            dim_inject: 2,
            channels_per_bath: 2,
            with_work_op: true,
        }),
        Just(RandomModelSpec {
            dim_extract: 3,
            dim_inject: 1,
            channels_per_bath: 2,
            with_work_op: false,
        }),
    ]
}

fn maser_strategy() -> impl Strategy<Value = MaserParams> {
    (
        0.5f64..4.0,
        0.5f64..8.0,
        -3.0f64..3.0,
        0.01f64..2.0,
        0.005f64..0.2,
        0.005f64..0.2,
        0.2f64..5.0,
        1.0f64..40.0,
    )
        .prop_map(|(omega_c, gap, delta, epsilon, gamma_h, gamma_c, t_c, ratio)| {
            let omega_h = omega_c + gap;
            MaserParams {
                omega_h,
                omega_c,
                omega_d: (gap + delta).max(0.1),
                epsilon,
                gamma_h,
                gamma_c,
                t_h: t_c * ratio,
                t_c,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_machines_pass_the_structure_gate(seed in any::<u64>(), spec in spec_strategy()) {
        let model = random_single_excitation(&mut ChaCha8Rng::seed_from_u64(seed), spec);
        let (split, report) = analyze_structure(&model).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
        prop_assert_eq!(split.basis_inject.ncols(), spec.dim_inject);
        prop_assert_eq!(split.basis_extract.ncols(), spec.dim_extract);
    }

    #[test]
    fn random_machines_obey_cycle_identities(seed in any::<u64>(), spec in spec_strategy()) {
        let model = random_single_excitation(&mut ChaCha8Rng::seed_from_u64(seed), spec);
        let a = CycleAnalysis::new(&model).unwrap();
        let p = a.probabilities().unwrap();
        prop_assert!(p.iter().all(|&x| x >= -1e-12));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);

        let e_tau = a.mean_time().unwrap();
        let k_hc = a.bundle().activity_hc;
        prop_assert!((e_tau * k_hc / 2.0 - 1.0).abs() < 1e-8);

        let current = a.current().unwrap();
        let from_cycles = (p[0] - p[1]) / e_tau;
        let scale = k_hc.max(1e-300);
        prop_assert!((current.cold_side - current.hot_side).abs() <= 1e-10 * scale.max(1.0));
        prop_assert!((from_cycles - current.cold_side).abs() <= 1e-8 * scale);
    }

    #[test]
    fn maser_closed_forms_match_generic(p in maser_strategy()) {
        let a = CycleAnalysis::new(&build_maser(&p).unwrap()).unwrap();
        let f = MaserClosedForm::new(&p).unwrap();
        let generic = a.probabilities().unwrap();
        let closed = f.probabilities();
        for k in 0..4 {
            prop_assert!((generic[k] - closed[k]).abs() < 1e-9, "p{} {} vs {}", k + 1, generic[k], closed[k]);
        }
        for x in CycleLabel::ALL {
            if generic[x.slot()] > 1e-6 {
                let g = a.conditional_mean_time(x).unwrap();
                let c = f.conditional_mean_time(x).unwrap();
                prop_assert!((g / c - 1.0).abs() < 1e-8, "{} {} vs {}", x, g, c);
            }
        }
        let ratio = (p.n_hot() + 1.0) * p.gamma_h / ((p.n_cold() + 1.0) * p.gamma_c);
        prop_assert!((closed[2] / closed[0] / ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cycle_durations_partition_the_record(
        steps in prop::collection::vec((0.001f64..5.0, any::<bool>(), any::<bool>(), 0usize..3), 1..200)
    ) {
        let mut events = Vec::new();
        let mut t = 0.0;
        let mut inject = true;
        for (dt, hot, _, work) in &steps {
            for _ in 0..*work {
                t += dt * 0.5;
                events.push(JumpEvent { time: t, channel: EventChannel::Work(0) });
            }
            t += dt;
            let id = match (inject, hot) {
                (true, true) => ChannelId::IH,
                (true, false) => ChannelId::IC,
                (false, true) => ChannelId::EH,
                (false, false) => ChannelId::EC,
            };
            events.push(JumpEvent { time: t, channel: EventChannel::Monitored(id) });
            inject = !inject;
        }
        let parsed = parse_cycles(&events).unwrap();
        prop_assert_eq!(parsed.cycles.len(), steps.len() / 2);
        prop_assert!(parsed.cycles.iter().all(|c| c.duration > 0.0));
        prop_assert_eq!(parsed.leftover.is_some(), steps.len() % 2 == 1);
        let last = events.last().unwrap().time;
        prop_assert!((parsed.total_duration() - last).abs() <= 1e-12 * last);
    }
}
