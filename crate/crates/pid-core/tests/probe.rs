// Scratch pilot probe; deleted before finalizing.
use pid_core::attacks::{AttackConfig, AttackKind};
use pid_core::datasets::DatasetKind;
use pid_core::detector::MetricId;
use pid_core::eval::{benchmark_run_full, BenchmarkConfig, DatasetSpec, ModelSpec, NamedAttack};
use pid_core::models::{Activation, Architecture, TrainingMode};

fn attack_cfg(eps: f64) -> AttackConfig {
    AttackConfig {
        epsilon: eps,
        step_size: eps / 4.0,
        iterations: 10,
        random_init: true,
        ..AttackConfig::default()
    }
}

fn reference_config(seed: u64, adversarial_primal: bool) -> BenchmarkConfig {
    let primal = if adversarial_primal {
        ModelSpec {
            arch: Architecture::mlp(8, &[64, 64], 3, Activation::Relu),
            mode: TrainingMode::Adversarial,
            epochs: 80,
            batch_size: 32,
            learning_rate: 0.3,
            weight_decay: 1e-4,
            inner_attack: Some(attack_cfg(0.1)),
        }
    } else {
        ModelSpec {
            arch: Architecture::mlp(8, &[64, 64], 3, Activation::Relu),
            mode: TrainingMode::Natural,
            epochs: 300,
            batch_size: 32,
            learning_rate: 0.3,
            weight_decay: 0.0,
            inner_attack: None,
        }
    };
    BenchmarkConfig {
        dataset: DatasetSpec {
            kind: DatasetKind::Blobs,
            k: 3,
            d: 8,
            n_per_class: 700,
            separation: 4.5,
        },
        split_fractions: (0.5, 0.25, 0.25),
        primal,
        auxiliary: ModelSpec {
            arch: Architecture::mlp(8, &[16], 3, Activation::Tanh),
            mode: TrainingMode::Natural,
            epochs: 80,
            batch_size: 32,
            learning_rate: 0.3,
            weight_decay: 1e-3,
            inner_attack: None,
        },
        attacks: vec![
            NamedAttack {
                name: "fgsm-0.1".into(),
                kind: AttackKind::Fgsm,
                config: attack_cfg(0.1),
            },
            NamedAttack {
                name: "pgd-0.1".into(),
                kind: AttackKind::Pgd,
                config: attack_cfg(0.1),
            },
            NamedAttack {
                name: "pgd-0.2".into(),
                kind: AttackKind::Pgd,
                config: attack_cfg(0.2),
            },
            NamedAttack {
                name: "square-0.1".into(),
                kind: AttackKind::RandomSearch,
                config: AttackConfig {
                    query_budget: 2000,
                    ..attack_cfg(0.1)
                },
            },
            NamedAttack {
                name: "adaptive-0.1".into(),
                kind: AttackKind::Adaptive,
                config: AttackConfig {
                    lambda: 1.0,
                    ..attack_cfg(0.1)
                },
            },
            NamedAttack {
                name: "adaptive-0.2".into(),
                kind: AttackKind::Adaptive,
                config: AttackConfig {
                    lambda: 1.0,
                    ..attack_cfg(0.2)
                },
            },
        ],
        metrics: vec![MetricId::M1, MetricId::M2, MetricId::M3, MetricId::M4],
        top_n: 3,
        target_fpr: 0.05,
        seed,
    }
}

#[test]
#[ignore]
fn probe_final_reference() {
    for adversarial_primal in [false, true] {
        let t0 = std::time::Instant::now();
        let cfg = reference_config(42, adversarial_primal);
        let out = benchmark_run_full(&cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "== adversarial_primal={adversarial_primal} pacc={:.4} aacc={:.4} ({dt:.1}s)",
            out.primal_test_accuracy, out.auxiliary_test_accuracy
        );
        print!("{}", out.report.to_table());
        let get = |attack: &str, m: MetricId| {
            out.report
                .rows
                .iter()
                .find(|r| r.attack_name == attack && r.metric_id == m)
                .map(|r| r.auc)
                .unwrap()
        };
        let pgd01 = get("pgd-0.1", MetricId::M1);
        let pgd02 = get("pgd-0.2", MetricId::M1);
        let ada02 = get("adaptive-0.2", MetricId::M1);
        println!(
            ">> crit5 pgd@0.1 M1 = {pgd01:.4} (>=0.90: {})",
            pgd01 >= 0.90
        );
        println!(
            ">> crit6 drop@0.2 = {:.4} (>=0.05: {})",
            pgd02 - ada02,
            pgd02 - ada02 >= 0.05
        );
        if adversarial_primal {
            let m1 = get("pgd-0.1", MetricId::M1);
            let m3 = get("pgd-0.1", MetricId::M3);
            let m4 = get("pgd-0.1", MetricId::M4);
            println!(">> crit7 M1={m1:.4} M3={m3:.4} M4={m4:.4} (M1>=both: {})", m1 >= m3 && m1 >= m4);
        }
        // criterion 8 material: NE counts
        let arts = &out.attacks[0];
        let n_ne = arts.records.iter().filter(|r| !r.is_adversarial).count();
        println!(">> test NE count = {n_ne}");
    }
}
