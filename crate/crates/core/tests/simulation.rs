mod common;

use cdpa::cdpa::{estimate_cdpa, population_cdpa, CdpaConfig, DualWeightVariant, PatternDecomposition, PopulationModel, SignMode};
use cdpa::dcca::{canonical_system, common_factor_coefficients, common_factor_scores};
use cdpa::denoise::{signal_covariance, soft_threshold_denoise};
use cdpa::linalg::relative_frobenius;
use cdpa::simulate::*;
use cdpa::{PermutationPlan, RankProfile};
use common::factor_pair;
use nalgebra::{DMatrix, DVector};

fn exact_config(theta: f64, p1: usize, n: usize) -> SimulationConfig {
    SimulationConfig { n, exact_scores: true, ..SimulationConfig::setup1(theta, p1, 0.0) }
}

#[test]
fn noiseless_canonical_correlations_match_planted_values() {
    let (y1, y2, _) = generate_setup(&exact_config(45.0, 60, 200)).unwrap();
    let x1 = soft_threshold_denoise(&y1, 5).unwrap();
    let x2 = soft_threshold_denoise(&y2, 5).unwrap();
    let sys = canonical_system(&signal_covariance(&x1).unwrap(), &signal_covariance(&x2).unwrap(), &x1, &x2, 5).unwrap();
    let expected = [30.0f64, 45.0, 45.0, 60.0, 75.0].map(|d| d.to_radians().cos());
    for (got, want) in sys.correlations.iter().zip(expected) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    // row variances of the common factors: â²(2 + 2ρ)
    let c0 = common_factor_scores(&sys, &common_factor_coefficients(&sys.correlations));
    for l in 0..5 {
        let var = c0.c0.row(l).norm_squared() / 200.0;
        let a = c0.coefficients[l];
        assert!((var - a * a * (2.0 + 2.0 * sys.correlations[l])).abs() < 1e-8);
    }
}

#[test]
fn planted_correlations_at_zero_angle() {
    let r = planted_correlations(0.0);
    let expected = [1.0, 1.0, 1.0, 15f64.to_radians().cos(), 30f64.to_radians().cos()];
    for (a, b) in r.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    let s = Structure::new(&SimulationConfig::setup1(0.0, 40, 1.0)).unwrap();
    for (c, e) in s.population.correlations.iter().zip(expected) {
        assert!((c - e).abs() < 1e-12);
    }
}

#[test]
fn population_dual_weights_are_diagonal() {
    for theta in [15.0, 45.0, 75.0] {
        let s = Structure::new(&SimulationConfig::setup1(theta, 40, 1.0)).unwrap();
        let w = &s.population.weights.s;
        let r12 = s.r12;
        // tied correlations leave the principal vectors free within the block, so compare singular values
        let mut sv: Vec<f64> = w.clone().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (l, got) in sv.iter().enumerate().take(r12) {
            let expect = (FACTOR_EIGENVALUES[l] / SIGNAL_TRACE).sqrt();
            assert!((got - expect).abs() < 1e-10, "θ {theta} σ{l} = {got}");
        }
        if theta == 75.0 {
            for i in 0..r12 {
                for j in 0..r12 {
                    let expect = if i == j { (FACTOR_EIGENVALUES[i] / SIGNAL_TRACE).sqrt() } else { 0.0 };
                    assert!((w[(i, j)].abs() - expect).abs() < 1e-10, "S[{i},{j}] = {}", w[(i, j)]);
                }
            }
        }
        // the alternative reading projects both channels on dataset 1's principal vectors
        let model = PopulationModel {
            v1: s.v1.clone(),
            v2: s.v2.clone(),
            eig1: FACTOR_EIGENVALUES.to_vec(),
            eig2: FACTOR_EIGENVALUES.to_vec(),
            cross_cov: DMatrix::from_diagonal(&DVector::from_column_slice(&s.correlations)),
            r12,
            perm: None,
        };
        let alt = population_cdpa(&model, DualWeightVariant::FirstPrincipalVectors).unwrap();
        if theta == 75.0 {
            for l in 0..r12 {
                let expect = FACTOR_EIGENVALUES[l].sqrt() * (1.0 + s.correlations[l]) / (2.0 * SIGNAL_TRACE.sqrt());
                assert!((alt.weights.s[(l, l)].abs() - expect).abs() < 1e-10, "{} vs {expect}", alt.weights.s[(l, l)]);
            }
        }
    }
}

#[test]
fn alternative_dual_weight_reading_gives_lower_oracle() {
    let s = Structure::new(&SimulationConfig::setup1(0.0, 40, 1.0)).unwrap();
    let model = PopulationModel {
        v1: s.v1.clone(),
        v2: s.v2.clone(),
        eig1: FACTOR_EIGENVALUES.to_vec(),
        eig2: FACTOR_EIGENVALUES.to_vec(),
        cross_cov: DMatrix::from_diagonal(&DVector::from_column_slice(&s.correlations)),
        r12: s.r12,
        perm: None,
    };
    let alt = population_cdpa(&model, DualWeightVariant::FirstPrincipalVectors).unwrap();
    assert!((alt.explained - 0.885).abs() < 2e-3, "{}", alt.explained);
    assert!((s.population.explained - 0.890).abs() < 2e-3);
}

fn truth_as_estimate(t: &GroundTruth) -> PatternDecomposition<f64> {
    PatternDecomposition {
        c: t.c.clone(),
        c_scaled: t.c_scaled.clone(),
        h: t.h.clone(),
        delta: t.delta.clone(),
        aligned_x: t.x_aligned.clone(),
        aligned_c: [&t.c_scaled[0] + &t.h[0], &t.c_scaled[1] + &t.h[1]],
        aligned_d: [&t.x_aligned[0] - &t.c_scaled[0] - &t.h[0], &t.x_aligned[1] - &t.c_scaled[1] - &t.h[1]],
        explained: t.c.norm_squared() / t.c.ncols() as f64,
    }
}

#[test]
fn error_metrics_vanish_at_truth() {
    let (_, _, truth) = generate_setup(&SimulationConfig::setup1(30.0, 50, 1.0)).unwrap();
    let e = error_metrics(&truth_as_estimate(&truth), &PermutationPlan::identity(50), &truth);
    assert_eq!(e.scaled_sq_error_c.frobenius, 0.0);
    assert_eq!(e.scaled_sq_error_c.spectral, 0.0);
    assert_eq!(e.scaled_sq_error_delta[0].frobenius, 0.0);
    assert_eq!(e.scaled_sq_error_h[1].frobenius, 0.0);
    assert_eq!(e.matching_objective_error, 0.0);
}

#[test]
fn zero_estimate_error_equals_population_explained_variance() {
    let (_, _, truth) = generate_setup(&exact_config(15.0, 60, 100)).unwrap();
    let mut zero = truth_as_estimate(&truth);
    zero.c = DMatrix::zeros(60, 100);
    let e = error_metrics(&zero, &PermutationPlan::identity(60), &truth);
    assert!((e.scaled_sq_error_c.frobenius - truth.explained).abs() < 1e-6);
    assert!((e.scaled_sq_error_c.frobenius - 0.479).abs() < 2e-3);
}

#[test]
fn noiseless_recovery_at_large_n() {
    let cfg = SimulationConfig { n: 2000, ..SimulationConfig::setup1(15.0, 100, 0.0) };
    let (y1, y2, truth) = generate_setup(&cfg).unwrap();
    let config = CdpaConfig { ranks: Some(truth.ranks()), center: false, sign: SignMode::Plus, ..CdpaConfig::default() };
    let fit = estimate_cdpa(&y1, &y2, &config).unwrap();
    let err = relative_frobenius(&fit.decomposition.c, &truth.c);
    assert!(err < 1e-2, "relative error {err}");
}

#[test]
fn sign_choice_follows_association() {
    // dataset 2 shares dataset 1's row directions, so the association is positive
    let (y1, _) = factor_pair(40, 40, 200, 3, &[], 0.3, 8);
    let y2 = cdpa::denoise::ObservedMatrix::new(y1.values() + common::gaussian(40, 200, 9) * 2.0).unwrap();
    let config = CdpaConfig { ranks: Some(RankProfile { r1: 3, r2: 3, r12: 2 }), ..CdpaConfig::default() };
    let fit = estimate_cdpa(&y1, &y2, &config).unwrap();
    assert_eq!(fit.sign.sign, 1);
    assert!(fit.sign.trace_plus > fit.sign.trace_minus);
    let flipped = estimate_cdpa(&y1, &y2.scaled(-1.0), &config).unwrap();
    assert_eq!(flipped.sign.sign, -1);
    assert!((flipped.sign.trace_minus - fit.sign.trace_plus).abs() < 1e-10);
}

#[test]
fn identical_inputs_explain_everything() {
    let (y1, _) = factor_pair(40, 40, 200, 3, &[], 0.3, 4);
    let fit = estimate_cdpa(&y1, &y1, &CdpaConfig::default()).unwrap();
    assert!((fit.decomposition.explained - 1.0).abs() < 1e-8);
    assert_eq!(fit.ranks.r12, fit.ranks.r1);
}

#[test]
fn pure_noise_takes_zero_rank_path() {
    let total = 30;
    let zero = (0..total as u64)
        .filter(|&s| {
            let y1 = cdpa::denoise::ObservedMatrix::new(common::gaussian(60, 300, 50 + 2 * s)).unwrap();
            let y2 = cdpa::denoise::ObservedMatrix::new(common::gaussian(60, 300, 51 + 2 * s)).unwrap();
            estimate_cdpa(&y1, &y2, &CdpaConfig::default()).unwrap().r12_zero
        })
        .count();
    assert!(zero as f64 >= 0.9 * total as f64, "{zero}/{total}");
}

#[test]
fn replication_summaries() {
    let mut cfg = SimulationConfig::setup1(15.0, 60, 1.0);
    cfg.n = 120;
    let one = run_replications(&cfg, &StudyOptions::default()).unwrap();
    assert!(one.aggregates.values().all(|s| s.sd.is_none() && s.count == 1));
    cfg.replications = 4;
    let a = run_replications(&cfg, &StudyOptions { select_ranks: true, ..Default::default() }).unwrap();
    let b = run_replications(&cfg, &StudyOptions { select_ranks: true, ..Default::default() }).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.records, b.records);
    assert!(a.mean("selected_r1").is_some());
}

#[test]
fn setup_one_estimation_error_regime() {
    let cfg = SimulationConfig { replications: 100, ..SimulationConfig::setup1(15.0, 300, 1.0) };
    let s = run_replications(&cfg, &StudyOptions::default()).unwrap();
    let scaled = s.mean("scaled_sq_error_c_fro").unwrap();
    let trace = s.mean("trace_abs_error").unwrap();
    assert!(scaled < 0.1, "scaled error {scaled}");
    assert!(trace < 0.1, "trace error {trace}");
}
