//! Release acceptance gate. One test per criterion, alphabetical order
//! matches the numbering, and each enforces a wall-clock budget. Run with
//! `cargo test --test acceptance -- --nocapture` to see per-criterion
//! timing lines; regenerate prompt goldens with `UPDATE_GOLDENS=1`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{array, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use inoc_core::agents::{format_detection, parse_detection, DetectedAttack, DetectionResult};
use inoc_core::dml::{estimate_ate, forest::ForestParams, AteProblem, NuisanceLearner};
use inoc_core::evaluation::{per_type_f1, F1Row, GoldLabel};
use inoc_core::gateway::mock::{DefaultResponder, MockRule, MockScript, MockServer};
use inoc_core::gateway::{
    CompletionRequest, Gateway, GatewaySettings, ModelRoute, RouteTable,
};
use inoc_core::notears::{acyclicity, acyclicity_gradient, fit, CausalDataset, NotearsConfig};
use inoc_core::prompt::{
    build_defender_prompt, build_detector_prompt, PromptStrategy, RenderedPrompt,
};
use inoc_core::runner::{
    assess, build_causal_dataset, load_dataset, run_experiment, write_assess_reports,
    AssessorSettings, ExperimentConfig, LearnerChoice, TreatmentAxis,
};
use inoc_core::sec::{ScorerRegistry, SecMeasure};
use inoc_core::taxonomy::Taxonomy;

fn timed(name: &str, budget: Duration, run: impl FnOnce()) {
    let start = Instant::now();
    run();
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "{name}: exceeded budget ({elapsed:?} > {budget:?})"
    );
    println!("{name}: pass in {elapsed:.2?} (budget {budget:?})");
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Pinned inputs for the prompt goldens. Changing either is a deliberate
/// contract change and requires regenerating the files.
const GOLDEN_DOCUMENT: &str = "Every honest citizen can see the council's so-called reform will doom our schools, and experts everywhere agree it spells catastrophe.";
const GOLDEN_DETECTION: &str =
    "Loaded Language - score: 8\nAppeal to Authority - score: 7\nAppeal to Fear - score: 9";

#[test]
fn c01_prompt_goldens_render_byte_identical() {
    timed("c01 prompt goldens", Duration::from_secs(1), || {
        let tax = Taxonomy::builtin();
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
        let mut cases: Vec<(String, String)> = PromptStrategy::all()
            .iter()
            .map(|&strategy| {
                let rendered = build_detector_prompt(tax, strategy, GOLDEN_DOCUMENT).unwrap();
                (format!("detector_{}.txt", strategy.code()), rendered.text)
            })
            .collect();
        cases.push((
            "defender.txt".to_string(),
            build_defender_prompt(tax, GOLDEN_DOCUMENT, GOLDEN_DETECTION)
                .unwrap()
                .text,
        ));

        if std::env::var_os("UPDATE_GOLDENS").is_some() {
            std::fs::create_dir_all(&dir).unwrap();
            for (file, rendered) in &cases {
                std::fs::write(dir.join(file), rendered).unwrap();
            }
        }

        for (file, rendered) in &cases {
            let committed = std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| {
                panic!("missing golden {file}: {e}; regenerate with UPDATE_GOLDENS=1")
            });
            assert_eq!(
                &committed, rendered,
                "{file} drifted from the committed golden"
            );
        }

        let base = std::fs::read_to_string(dir.join("detector_0.txt")).unwrap();
        assert!(base.contains("Identify any logical fallacies"));
        let scored = std::fs::read_to_string(dir.join("detector_s0.txt")).unwrap();
        assert!(scored.contains("attack - score: #"));
        let defender = std::fs::read_to_string(dir.join("defender.txt")).unwrap();
        assert!(defender.contains("Only respond with the rewritten text."));
    });
}

#[test]
fn c02_parser_round_trips_random_subsets() {
    timed("c02 parser round-trip", Duration::from_secs(5), || {
        let tax = Taxonomy::builtin();
        let types = tax.canonical_attacks();
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0002);
        for trial in 0..1000u32 {
            let scored = trial % 2 == 0;
            let strategy = if scored {
                PromptStrategy::CONFIDENCE
            } else {
                PromptStrategy::BASE
            };
            let mut subset = Vec::new();
            for t in types {
                if rng.gen_bool(0.3) {
                    subset.push(DetectedAttack {
                        attack_id: t.id.clone(),
                        display_name: t.display_name.clone(),
                        confidence: if scored { Some(rng.gen_range(1..=10)) } else { None },
                    });
                }
            }
            subset.sort_by(|a, b| a.display_name.cmp(&b.display_name));

            let text = format_detection(&subset);
            let (parsed, fragments) = parse_detection(tax, &text, strategy);
            assert_eq!(parsed, subset, "trial {trial} did not round-trip");
            assert!(fragments.is_empty(), "trial {trial} left fragments");
        }
    });
}

fn detection_of(document_id: &str, ids: &[&str]) -> DetectionResult {
    let tax = Taxonomy::builtin();
    DetectionResult {
        document_id: document_id.into(),
        model_id: "oracle-model".into(),
        strategy: PromptStrategy::BASE,
        temperature: 0.0,
        predicted: ids
            .iter()
            .map(|id| {
                let t = tax.by_id(id).unwrap();
                DetectedAttack {
                    attack_id: t.id.clone(),
                    display_name: t.display_name.clone(),
                    confidence: None,
                }
            })
            .collect(),
        unparsed_fragments: vec![],
        raw_text: String::new(),
    }
}

#[test]
fn c03_f1_matches_brute_force_oracle() {
    timed("c03 F1 oracle equivalence", Duration::from_secs(10), || {
        let tax = Taxonomy::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0003);
        for corpus in 0..200u32 {
            let mut pool: Vec<String> = tax
                .canonical_attacks()
                .iter()
                .map(|t| t.id.clone())
                .collect();
            pool.shuffle(&mut rng);
            let active = &pool[..rng.gen_range(1..=5)];

            let docs = rng.gen_range(1..=20);
            let mut detections = Vec::new();
            let mut golds = Vec::new();
            for d in 0..docs {
                let doc = format!("doc{d}");
                let predicted: Vec<&str> = active
                    .iter()
                    .filter(|_| rng.gen_bool(0.4))
                    .map(|s| s.as_str())
                    .collect();
                let mut gold_ids: Vec<&str> = active
                    .iter()
                    .filter(|_| rng.gen_bool(0.4))
                    .map(|s| s.as_str())
                    .collect();
                if gold_ids.is_empty() {
                    gold_ids.push(active[0].as_str());
                }
                detections.push(detection_of(&doc, &predicted));
                golds.push(GoldLabel {
                    document_id: doc,
                    attack_ids: gold_ids.iter().map(|s| s.to_string()).collect(),
                });
            }

            let table = per_type_f1(tax, &detections, &golds).unwrap();

            let mut oracle_rows = Vec::new();
            for attack in tax.canonical_attacks() {
                let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                for (det, gold) in detections.iter().zip(&golds) {
                    let in_pred = det.predicted.iter().any(|a| a.attack_id == attack.id);
                    let in_gold = gold.attack_ids.contains(&attack.id);
                    match (in_pred, in_gold) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                oracle_rows.push(F1Row {
                    attack_type: attack.display_name.clone(),
                    tp,
                    fp,
                    fn_,
                    precision,
                    recall,
                    f1,
                });
            }
            assert_eq!(table.rows, oracle_rows, "corpus {corpus} rows diverged");

            let supported: Vec<&F1Row> =
                oracle_rows.iter().filter(|r| r.tp + r.fp + r.fn_ > 0).collect();
            let macro_f1 = if supported.is_empty() {
                0.0
            } else {
                supported.iter().map(|r| r.f1).sum::<f64>() / supported.len() as f64
            };
            let (tp, fp, fn_) = oracle_rows
                .iter()
                .fold((0u64, 0u64, 0u64), |(a, b, c), r| (a + r.tp, b + r.fp, c + r.fn_));
            let micro_p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let micro_r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let micro_f1 = if micro_p + micro_r == 0.0 {
                0.0
            } else {
                2.0 * micro_p * micro_r / (micro_p + micro_r)
            };
            assert_eq!(table.macro_f1, macro_f1, "corpus {corpus} macro diverged");
            assert_eq!(table.micro_f1, micro_f1, "corpus {corpus} micro diverged");
        }
    });
}

/// Random weights whose support is upper-triangular under a random
/// permutation, hence acyclic by construction.
fn random_dag_matrix(rng: &mut ChaCha8Rng) -> Array2<f64> {
    let d = rng.gen_range(2..=8);
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut w = Array2::zeros((d, d));
    for i in 0..d {
        for j in (i + 1)..d {
            if rng.gen_bool(0.5) {
                w[[order[i], order[j]]] = rng.gen_range(-2.0..2.0);
            }
        }
    }
    w
}

#[test]
fn c04_acyclicity_closed_form_and_dag_zero() {
    timed("c04 acyclicity closed form", Duration::from_secs(5), || {
        let two_cycle = array![[0.0, 1.0], [1.0, 0.0]];
        let h = acyclicity(&two_cycle).unwrap();
        let expected = 2.0 * f64::cosh(1.0) - 2.0;
        assert!(
            (h - expected).abs() < 1e-10,
            "two-cycle h = {h}, expected {expected}"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0004);
        for trial in 0..100 {
            let w = random_dag_matrix(&mut rng);
            let h = acyclicity(&w).unwrap();
            assert!(h.abs() < 1e-10, "trial {trial}: acyclic support gave h = {h}");
        }
    });
}

#[test]
fn c05_gradient_matches_central_finite_differences() {
    timed("c05 gradient check", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0005);
        let step = 1e-5;
        for trial in 0..50 {
            let w = Array2::from_shape_fn((5, 5), |_| rng.gen_range(-0.9..0.9));
            let analytic = acyclicity_gradient(&w).unwrap();

            let mut fd = Array2::zeros((5, 5));
            for i in 0..5 {
                for j in 0..5 {
                    let mut plus = w.clone();
                    plus[[i, j]] += step;
                    let mut minus = w.clone();
                    minus[[i, j]] -= step;
                    fd[[i, j]] =
                        (acyclicity(&plus).unwrap() - acyclicity(&minus).unwrap()) / (2.0 * step);
                }
            }

            let diff_norm = (&analytic - &fd).iter().map(|v| v * v).sum::<f64>().sqrt();
            let fd_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let relative = diff_norm / fd_norm.max(1e-12);
            assert!(
                relative < 1e-5,
                "trial {trial}: relative gradient error {relative}"
            );
        }
    });
}

/// X1 -> X2 -> X3 with structural weights 0.9 and child noise sd 0.5.
fn chain_dataset(n: usize, seed: u64) -> CausalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Array2::zeros((n, 3));
    for mut row in raw.rows_mut() {
        let x1 = standard_normal(&mut rng);
        let x2 = 0.9 * x1 + 0.5 * standard_normal(&mut rng);
        let x3 = 0.9 * x2 + 0.5 * standard_normal(&mut rng);
        row[0] = x1;
        row[1] = x2;
        row[2] = x3;
    }
    CausalDataset::new(
        vec!["X1".into(), "X2".into(), "X3".into()],
        raw,
        vec!["X1".into()],
    )
    .unwrap()
}

#[test]
fn c06_chain_recovery_tabu_and_determinism() {
    timed("c06 structure recovery", Duration::from_secs(60), || {
        let config = NotearsConfig {
            lambda1: 0.02,
            omega: 0.3,
            ..NotearsConfig::default()
        };
        let dag = fit(&chain_dataset(1000, 0xacce_0006), &config).unwrap();
        assert!(dag.converged, "h_final = {}", dag.h_final);
        assert!(!dag.omega_raised);

        let edge_set: BTreeSet<(String, String)> = dag
            .edges
            .iter()
            .map(|e| (e.from.clone(), e.to.clone()))
            .collect();
        let expected: BTreeSet<(String, String)> = [("X1", "X2"), ("X2", "X3")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(edge_set, expected, "edges: {:?}", dag.edges);

        // On the standardized scale the chain weights shrink to
        // 0.9/sd(child), about 0.874 and 0.880 here; both sit within the
        // 0.1 tolerance of the structural 0.9.
        for edge in &dag.edges {
            assert!(
                (edge.weight - 0.9).abs() < 0.1,
                "{} -> {} recovered at {}",
                edge.from,
                edge.to,
                edge.weight
            );
        }

        // Tabu entries: nothing may point into the treatment column, and the
        // diagonal stays empty. Both must be exact zeros, not small values.
        for i in 0..3 {
            assert_eq!(dag.weights[i][0], 0.0, "edge into treatment from row {i}");
            assert_eq!(dag.weights[i][i], 0.0, "self-loop at {i}");
        }

        let again = fit(&chain_dataset(1000, 0xacce_0006), &config).unwrap();
        assert_eq!(dag.weights, again.weights, "refit changed the weights");
    });
}

#[test]
fn c07_dml_unconfounded_and_confounded() {
    timed("c07 treatment effects", Duration::from_secs(120), || {
        // Unconfounded: Y = 2T + noise, T a fair coin independent of X.
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0007);
        let n = 2000;
        let mut covariates = Array2::zeros((n, 1));
        let mut treatment = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        for i in 0..n {
            covariates[[i, 0]] = standard_normal(&mut rng);
            let t = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            treatment.push(t);
            outcome.push(2.0 * t + standard_normal(&mut rng));
        }
        let problem = AteProblem::new(
            covariates,
            treatment,
            outcome,
            5,
            NuisanceLearner::Forest(ForestParams {
                seed: 7,
                ..ForestParams::default()
            }),
            7,
        )
        .unwrap();
        let estimate = estimate_ate(&problem).unwrap();
        assert!(
            (1.85..=2.15).contains(&estimate.ate),
            "unconfounded estimate {} outside [1.85, 2.15]",
            estimate.ate
        );

        // Confounded: treatment assignment rises with X, and X also drives
        // the outcome, so difference-in-means overstates the true 1.5.
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0071);
        let n = 4000;
        let mut covariates = Array2::zeros((n, 1));
        let mut treatment = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        for i in 0..n {
            let x: f64 = rng.gen_range(0.0..1.0);
            let t = if x + 0.25 * standard_normal(&mut rng) > 1.0 { 1.0 } else { 0.0 };
            covariates[[i, 0]] = x;
            treatment.push(t);
            outcome.push(1.5 * t + 3.0 * x + standard_normal(&mut rng));
        }

        let treated_mean = outcome
            .iter()
            .zip(&treatment)
            .filter(|(_, &t)| t == 1.0)
            .map(|(y, _)| y)
            .sum::<f64>()
            / treatment.iter().filter(|&&t| t == 1.0).count() as f64;
        let control_mean = outcome
            .iter()
            .zip(&treatment)
            .filter(|(_, &t)| t == 0.0)
            .map(|(y, _)| y)
            .sum::<f64>()
            / treatment.iter().filter(|&&t| t == 0.0).count() as f64;
        let naive = treated_mean - control_mean;
        assert!(
            (naive - 1.5).abs() > 0.5,
            "confounding too weak: naive estimate {naive}"
        );

        let problem = AteProblem::new(
            covariates,
            treatment,
            outcome,
            5,
            NuisanceLearner::Forest(ForestParams {
                seed: 71,
                ..ForestParams::default()
            }),
            71,
        )
        .unwrap();
        let estimate = estimate_ate(&problem).unwrap();
        assert!(
            (estimate.ate - 1.5).abs() < 0.15,
            "confounded estimate {} strays more than 0.15 from 1.5 (naive was {naive})",
            estimate.ate
        );
    });
}

#[test]
fn c08_dml_null_coverage() {
    timed("c08 null coverage", Duration::from_secs(600), || {
        let mut covered = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0008 ^ (seed * 0x9e37));
            let n = 500;
            let mut covariates = Array2::zeros((n, 3));
            let mut treatment = Vec::with_capacity(n);
            let mut outcome = Vec::with_capacity(n);
            for i in 0..n {
                for j in 0..3 {
                    covariates[[i, j]] = standard_normal(&mut rng);
                }
                treatment.push(if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
                outcome.push(
                    1.0 * covariates[[i, 0]] - 0.5 * covariates[[i, 1]]
                        + 0.25 * covariates[[i, 2]]
                        + standard_normal(&mut rng),
                );
            }
            let problem = AteProblem::new(
                covariates,
                treatment,
                outcome,
                5,
                NuisanceLearner::Ridge { penalty: 1.0 },
                seed,
            )
            .unwrap();
            let estimate = estimate_ate(&problem).unwrap();
            if estimate.ci_low <= 0.0 && 0.0 <= estimate.ci_high {
                covered += 1;
            }
        }
        assert!(
            covered >= 90,
            "95% CI covered the true zero effect in only {covered}/100 runs"
        );
    });
}

fn example_dataset_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example_articles.jsonl")
}

fn mock_experiment_config(out_dir: &Path, base_url: &str) -> ExperimentConfig {
    let route = |model: &str| ModelRoute {
        model_id: model.into(),
        base_url: base_url.into(),
        api_key_env: String::new(),
        default_temperature: 0.0,
    };
    ExperimentConfig {
        dataset: example_dataset_path(),
        output_dir: out_dir.to_path_buf(),
        models: vec!["mock-a".into(), "mock-b".into()],
        strategies: vec!["0".into(), "d0".into(), "s0".into(), "d0s0".into()],
        temperatures: vec![0.0, 0.7],
        parallelism: 4,
        seed: 17,
        max_tokens: 512,
        routes: vec![route("mock-a"), route("mock-b")],
        gateway: GatewaySettings {
            max_retries: 1,
            initial_backoff_ms: 1,
            backoff_multiplier: 2.0,
            timeout_s: 30,
        },
        assessor: AssessorSettings {
            learner: LearnerChoice::Ridge,
            ..AssessorSettings::default()
        },
    }
}

/// Full pipeline against one mock server: grid run, causal build,
/// assessment, artifact export. Returns the output directory.
fn run_full_pipeline(out_dir: &Path, script: MockScript) -> PathBuf {
    let server = MockServer::start(script);
    let config = mock_experiment_config(out_dir, &server.base_url());
    let outcome = run_experiment(&config).unwrap();
    let articles = load_dataset(&config.dataset).unwrap();
    let build =
        build_causal_dataset(&outcome.records, &articles, TreatmentAxis::Llm).unwrap();
    let report = assess(&build.dataset, &config.assessor, config.seed).unwrap();
    write_assess_reports(&config.output_dir, &report).unwrap();
    config.output_dir
}

#[test]
fn c09_mock_experiment_reproducible_and_perfect_detector_scores_one() {
    timed("c09 end-to-end mock experiment", Duration::from_secs(60), || {
        let tmp = tempfile::tempdir().unwrap();
        let first = run_full_pipeline(&tmp.path().join("first"), MockScript::default());
        let second = run_full_pipeline(&tmp.path().join("second"), MockScript::default());
        for artifact in ["f1.csv", "sem_edges.csv", "ate_sweep.csv"] {
            let a = std::fs::read(first.join(artifact)).unwrap();
            let b = std::fs::read(second.join(artifact)).unwrap();
            assert!(!a.is_empty(), "{artifact} is empty");
            assert_eq!(a, b, "{artifact} differs between identical runs");
        }

        let articles = load_dataset(&example_dataset_path()).unwrap();
        assert_eq!(articles.len(), 5, "fixture should hold 5 articles");
        let script = MockScript::perfect_detector(
            articles
                .iter()
                .map(|a| (a.attack.clone(), a.attack_types.clone())),
        );
        let server = MockServer::start(script);
        let config =
            mock_experiment_config(&tmp.path().join("perfect"), &server.base_url());
        let outcome = run_experiment(&config).unwrap();
        assert_eq!(outcome.tables.len(), 16, "2 models x 4 strategies x 2 temps");
        for table in &outcome.tables {
            assert_eq!(
                table.macro_f1, 1.0,
                "group {} fell short of a perfect macro F1",
                table.group
            );
            assert_eq!(table.micro_f1, 1.0, "group {} micro F1", table.group);
        }
    });
}

#[test]
fn c10_gateway_retry_backoff_parallelism_and_order() {
    timed("c10 gateway contract", Duration::from_secs(30), || {
        let plain = |text: &str| RenderedPrompt {
            text: text.into(),
            strategy: None,
            taxonomy_hash: String::new(),
        };
        let route_to = |server: &MockServer| {
            RouteTable::new(vec![ModelRoute {
                model_id: "gate".into(),
                base_url: server.base_url(),
                api_key_env: String::new(),
                default_temperature: 0.0,
            }])
            .unwrap()
        };

        // Retry count and backoff monotonicity under injected failures.
        let flaky = MockServer::start(MockScript {
            fail_first: 2,
            fail_status: 503,
            default: DefaultResponder::Fixed("recovered".into()),
            ..MockScript::default()
        });
        let gateway = Gateway::new(
            route_to(&flaky),
            GatewaySettings {
                max_retries: 3,
                initial_backoff_ms: 40,
                backoff_multiplier: 2.0,
                timeout_s: 10,
            },
        );
        let request = CompletionRequest::new("gate", plain("flaky probe"), 0.0, 16, "r").unwrap();
        let result = gateway.complete(&request).unwrap();
        assert_eq!(result.raw_text, "recovered");
        assert_eq!(result.attempt_count, 3, "two failures then success");
        assert_eq!(flaky.stats().total_requests, 3);
        let offsets = flaky.arrival_offsets();
        let first_gap = offsets[1] - offsets[0];
        let second_gap = offsets[2] - offsets[1];
        assert!(
            first_gap >= Duration::from_millis(35),
            "first backoff too short: {first_gap:?}"
        );
        assert!(
            second_gap >= first_gap,
            "backoff shrank: {first_gap:?} then {second_gap:?}"
        );

        // Parallelism high-water mark and input-order delivery.
        let rules: Vec<MockRule> = (0..16)
            .map(|i| MockRule::on(vec![format!("probe {i};")], format!("resp-{i}")))
            .collect();
        let busy = MockServer::start(MockScript {
            rules,
            delay_ms: 40,
            ..MockScript::default()
        });
        let gateway = Gateway::new(route_to(&busy), GatewaySettings::default());
        let requests: Vec<CompletionRequest> = (0..16)
            .map(|i| {
                CompletionRequest::new(
                    "gate",
                    plain(&format!("probe {i};")),
                    0.0,
                    16,
                    format!("req-{i}"),
                )
                .unwrap()
            })
            .collect();
        let results = gateway.complete_batch(&requests, 4);
        assert_eq!(results.len(), 16);
        for (i, result) in results.iter().enumerate() {
            let result = result.as_ref().unwrap();
            assert_eq!(result.request_id, format!("req-{i}"));
            assert_eq!(
                result.raw_text,
                format!("resp-{i}"),
                "result {i} out of order"
            );
        }
        let stats = busy.stats();
        assert_eq!(stats.total_requests, 16);
        assert!(
            stats.max_concurrent <= 4,
            "parallelism cap exceeded: {}",
            stats.max_concurrent
        );
        assert!(stats.max_concurrent >= 2, "no concurrency observed");
    });
}

#[test]
fn c11_sec_scores_stay_in_range_and_ignore_word_order() {
    timed("c11 socio-emotional invariants", Duration::from_secs(10), || {
        const VOCABULARY: &[&str] = &[
            "hope", "hopeful", "improve", "growth", "gain", "flourish", "collapse", "crisis",
            "danger", "decline", "disaster", "doom", "fail", "clown", "coward", "disgusting",
            "dumb", "fool", "garbage", "hate", "authority", "command", "duty", "government",
            "law", "leader", "fair", "unfair", "justice", "harm", "hurt", "suffering", "loyal",
            "betray", "together", "community", "pure", "sacred", "corrupt", "sad", "grief",
            "tears", "misery", "agree", "yes", "indeed", "exactly", "feel", "understand",
            "compassion", "the", "a", "report", "table", "window", "number", "seven", "blue",
            "walk", "road", "paper", "morning", "system", "value", "note",
        ];
        let registry = ScorerRegistry::with_builtin_lexicon();
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0011);
        for i in 0..1000 {
            let len = rng.gen_range(3..=60);
            let mut words: Vec<&str> = (0..len)
                .map(|_| VOCABULARY[rng.gen_range(0..VOCABULARY.len())])
                .collect();
            let text = words.join(" ");
            let signature = registry.score_text(&format!("t{i}"), &text).unwrap();
            assert!(signature.is_complete(), "text {i} scored partially");
            assert_eq!(signature.scores.len(), SecMeasure::ALL.len());

            for &measure in SecMeasure::ALL {
                let value = signature.get(measure).unwrap();
                let (lo, hi) = measure.range_kind().bounds();
                assert!(
                    (lo..=hi).contains(&value),
                    "text {i}: {} = {value} outside [{lo}, {hi}]",
                    measure.name()
                );
            }

            let simplex = signature.get(SecMeasure::PerspectivePositive).unwrap()
                + signature.get(SecMeasure::PerspectiveNeutral).unwrap()
                + signature.get(SecMeasure::PerspectiveNegative).unwrap();
            assert!(
                (simplex - 1.0).abs() <= 1e-9,
                "text {i}: perspective trio sums to {simplex}"
            );

            words.shuffle(&mut rng);
            let permuted = registry
                .score_text(&format!("t{i}-permuted"), &words.join(" "))
                .unwrap();
            assert_eq!(
                signature.scores, permuted.scores,
                "text {i}: scores changed under word reordering"
            );
        }
    });
}
