use ccgen::prior::*;
use proptest::prelude::*;

fn small(prior: PriorKind) -> PriorConfig {
    PriorConfig { prior, n_samples: 64, ..PriorConfig::default() }
}

#[test]
fn counterfactual_treatments_lie_in_unit_interval() {
    for prior in [PriorKind::ThreeMlp, PriorKind::OneMlp, PriorKind::Bernstein, PriorKind::ValueBased] {
        let (_, data, _) = sample_dataset(&small(prior), 5).unwrap();
        data.validate().unwrap();
        assert!(data.t_cf.iter().all(|t| (0.0..=1.0).contains(t)), "{prior}");
    }
}

#[test]
fn factual_cepo_agrees_with_query() {
    let (dgp, data) = sample_dgp_dataset(&small(PriorKind::ThreeMlp), 8).unwrap();
    for row in 0..data.n_rows() {
        let v = dgp.query_cepo(row, data.t[row]).unwrap();
        assert!((v - dgp.cepo_factual[row]).abs() <= 1e-9 * v.abs().max(1.0));
    }
}

#[test]
fn out_of_range_queries_are_rejected() {
    let (dgp, data, _) = sample_dataset(&small(PriorKind::ThreeMlp), 2).unwrap();
    assert!(dgp.query_cepo(0, 1.5).is_err());
    assert!(dgp.query_cepo(data.n_rows(), 0.5).is_err());
}

#[test]
fn positivity_off_removes_treatment_noise() {
    let config = PriorConfig { positivity: false, ..small(PriorKind::ThreeMlp) };
    let (dgp, _) = sample_dgp_dataset(&config, 4).unwrap();
    assert!(dgp.treatment_noise_std.iter().all(|&s| s == 0.0));
}

#[test]
fn spec_files_replay_the_oracle() {
    let config = small(PriorKind::ThreeMlp);
    let (dgp, data, stats) = sample_dataset(&config, 12).unwrap();
    let spec = DgpSpec::new(&config, 12, stats, dgp.clone());
    let back = DgpSpec::from_json(&spec.to_json().unwrap()).unwrap();
    for row in [0, data.n_rows() / 2, data.n_rows() - 1] {
        for t in [0.0, 0.37, 1.0] {
            assert_eq!(back.dgp.query_cepo(row, t).unwrap(), dgp.query_cepo(row, t).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn three_mlp_structural_invariants(seed in any::<u64>()) {
        let (dgp, data) = sample_dgp_dataset(&small(PriorKind::ThreeMlp), seed).unwrap();
        let k = data.n_covariates();
        prop_assert!((2..=98).contains(&k));
        prop_assert!(dgp.split.is_partition_of(k));
        prop_assert!(dgp.check_unconfounded_wiring());
        prop_assert!(dgp.treatment_edges_kept());
        let floor = dgp.treatment_noise_floor();
        prop_assert!(dgp.treatment_noise_std.iter().all(|&s| s >= floor));
        let lo = data.t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!((lo, hi), (0.0, 1.0));
        prop_assert!(dgp.hyperparams.validate().is_ok());
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), which in 0usize..4) {
        let prior = [PriorKind::ThreeMlp, PriorKind::OneMlp, PriorKind::Bernstein, PriorKind::ValueBased][which];
        let a = sample_dataset(&small(prior), seed).unwrap();
        let b = sample_dataset(&small(prior), seed).unwrap();
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(a.2, b.2);
    }
}
