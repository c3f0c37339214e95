use grassflow::ensembles::BetaForm;
use grassflow::verify::{CheckId, VerifyConfig};
use grassflow_cli::*;
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = ModelConfig> {
    (
        prop_oneof![Just(ModelKind::Toeplitz), Just(ModelKind::Haar), Just(ModelKind::Iid)],
        3usize..16,
        2.01f64..6.0,
        proptest::option::of(prop::collection::vec(0.01f64..10.0, 1..8)),
        proptest::option::of(1usize..4),
        0.0f64..0.015,
        1usize..4,
    )
        .prop_map(|(model, l, s, kappa, lc, lambda, q)| ModelConfig {
            model,
            l,
            s,
            kappa,
            lc,
            lambda,
            q,
            ..ModelConfig::default()
        })
}

fn run_config_strategy() -> impl Strategy<Value = RunConfig> {
    prop_oneof![
        (
            model_strategy(),
            1u64..1_000_000,
            1usize..500,
            any::<u64>(),
            proptest::option::of(0.0f64..1.0)
        )
            .prop_map(
                |(model, horizon, traj, seed, beta)| RunConfig::Simulate(SimulateConfig {
                    model,
                    horizon,
                    traj,
                    seed,
                    beta,
                    ladder_cuts: Some(vec![1, 3, 5]),
                    ..SimulateConfig::default()
                })
            ),
        (model_strategy(), 1u64..1_000_000, any::<bool>(), any::<u64>()).prop_map(
            |(model, steps, reflection, seed)| {
                RunConfig::Lyapunov(LyapunovConfig {
                    model,
                    steps,
                    reflection,
                    seed,
                    ..LyapunovConfig::default()
                })
            }
        ),
        (model_strategy(), any::<bool>()).prop_map(|(model, comp)| RunConfig::Beta(BetaConfig {
            model,
            form: if comp {
                BetaForm::Complementary
            } else {
                BetaForm::Primal
            },
            ..BetaConfig::default()
        })),
        (
            1e-16f64..1e-2,
            proptest::option::of(0.0f64..1.0),
            proptest::option::of(0.0f64..1.0)
        )
            .prop_map(|(lambda, beta, eta)| RunConfig::Check(CheckConfig {
                lambda,
                beta,
                eta,
                ..CheckConfig::default()
            })),
        (1usize..5000, any::<u64>()).prop_map(|(samples, seed)| RunConfig::Verify(VerifyRunConfig {
            suite: VerifyConfig {
                checks: vec![CheckId::Subdivision, CheckId::StepEstimate],
                samples,
                ..VerifyConfig::default()
            },
            seed,
        })),
        (3usize..12, 0.0f64..0.015, any::<u64>()).prop_map(|(l, lambda, seed)| RunConfig::Perturb(PerturbConfig {
            l,
            lambda,
            seed,
            ..PerturbConfig::default()
        })),
    ]
}

proptest! {
    #[test]
    fn parse_emit_parse_is_identity(cfg in run_config_strategy()) {
        let text = cfg.to_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn file_keys_override_flags() {
    let flags = RunConfig::Simulate(SimulateConfig::default());
    let overlay = serde_json::json!({ "seed": 11, "model": { "lambda": 0.002 } });
    let RunConfig::Simulate(c) = flags.merged_with(&overlay).unwrap() else {
        panic!("command changed")
    };
    assert_eq!(c.seed, 11);
    assert_eq!(c.model.lambda, 0.002);
    assert_eq!(c.model.l, ModelConfig::default().l);
}

#[test]
fn errors_name_the_field() {
    let err = RunConfig::from_json(r#"{"command":"simulate","model":{"L":"seven"}}"#).unwrap_err();
    assert!(err.to_string().contains("model.L"), "{err}");
    let err = RunConfig::from_json(r#"{"command":"lyapunov","steps":3}"#).unwrap_err();
    assert!(err.to_string().contains("unknown field `steps`"), "{err}");
    let err = RunConfig::Verify(VerifyRunConfig::default())
        .merged_with(&serde_json::json!({ "command": "beta" }))
        .unwrap_err();
    assert!(err.to_string().contains("beta"), "{err}");
}

#[test]
fn default_partition_and_mismatch() {
    let m = ModelConfig::default();
    assert_eq!(m.partition().unwrap(), (3, 2, 2));
    let bad = ModelConfig {
        la: Some(5),
        lb: Some(1),
        ..m
    };
    assert!(bad.partition().is_err());
}

#[test]
fn check_without_model_uses_scalar_hypotheses() {
    let cfg = RunConfig::Check(CheckConfig {
        lambda: 2e-14,
        q: 1,
        beta: Some(0.5),
        eta: Some(0.5),
        model: None,
    });
    let out = run(&cfg).unwrap();
    assert_eq!(out.json["schema_version"], SCHEMA_VERSION);
    assert!(out.json["result"]["h5_literal"].is_null());
}

#[test]
fn simulate_csv_has_header_and_flags() {
    let cfg = RunConfig::Simulate(SimulateConfig {
        model: ModelConfig {
            lambda: 1e-3,
            q: 2,
            ..ModelConfig::default()
        },
        horizon: 50,
        traj: 2,
        ladder_cuts: Some(vec![1, 3, 5, 7]),
        beta: Some(0.1),
        ..SimulateConfig::default()
    });
    let out = run(&cfg).unwrap();
    let csv = out.csv.unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_COLUMNS));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 51);
    assert!(rows
        .iter()
        .all(|r| r.split(',').nth(4).is_some_and(|f| f.starts_with(['O', '-']))));
}
