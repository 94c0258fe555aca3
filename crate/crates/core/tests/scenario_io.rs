use ccgen::eval::CurveOracle;
use ccgen::scenario::*;
use ccgen::Error;
use ndarray::Array2;
use proptest::prelude::*;

fn table(n: usize, k: usize, values: &[f64]) -> BenchmarkTable {
    let v = |i: usize| values[i % values.len()];
    BenchmarkTable {
        covariates: Array2::from_shape_fn((n, k), |(i, j)| v(i * k + j)),
        t: (0..n).map(|i| v(i + 1).abs().fract()).collect(),
        y: (0..n).map(|i| v(i + 2)).collect(),
        t_test: (0..n).map(|i| v(i + 3).abs().fract()).collect(),
        cepo_test: (0..n).map(|i| v(i + 4)).collect(),
    }
}

#[test]
fn header_follows_the_benchmark_convention() {
    assert_eq!(benchmark_header(2), vec!["x_0", "x_1", "t", "y", "t_test", "cepo_test"]);
    let r = realize_scenario(&builtin_scenario("vshape").unwrap(), 1).unwrap();
    let csv = benchmark_csv_string(&r.table);
    assert!(csv.starts_with("x_0,x_1,x_2,x_3,x_4,x_5,x_6,x_7,t,y,t_test,cepo_test\n"));
}

#[test]
fn missing_ground_truth_columns_are_explained() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.csv");
    std::fs::write(&path, "x_0,t,y\n1,0.5,2\n").unwrap();
    let err = read_benchmark_csv(&path).unwrap_err();
    assert!(matches!(err, Error::HeaderMismatch(_)));
    assert!(err.to_string().contains("cepo_test"));
}

#[test]
fn bad_cells_report_their_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "x_0,t,y,t_test,cepo_test\n1,0.5,2,0.1,3\n1,oops,2,0.1,3\n").unwrap();
    match read_benchmark_csv(&path).unwrap_err() {
        Error::Parse { row, column, .. } => assert_eq!((row, column.as_str()), (2, "t")),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn covariate_files_code_categories_and_drop_missing_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cov.csv");
    std::fs::write(&path, "age,colour,score\n30,red,1.5\n41,blue,NA\n25,red,2.0\n33,green,0.5\n").unwrap();
    let t = load_covariate_file(&path).unwrap();
    assert_eq!(t.columns, vec!["age", "colour", "score"]);
    assert_eq!(t.dropped_rows, 1);
    assert_eq!(t.values.column(1).to_vec(), vec![0.0, 0.0, 1.0]);
    assert_eq!(t.values.column(0).to_vec(), vec![30.0, 25.0, 33.0]);
}

#[test]
fn missing_covariate_file_names_the_path() {
    let err = load_covariate_file("/definitely/not/here.csv").unwrap_err();
    assert!(err.to_string().contains("/definitely/not/here.csv"));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_scenarios_are_usage_errors() {
    let err = builtin_scenario("zigzag").unwrap_err();
    assert!(matches!(err, Error::UnknownScenario(_)));
}

#[test]
fn realizations_are_consistent_with_their_oracle() {
    for id in BUILTIN_SCENARIOS {
        let r = realize_scenario(&builtin_scenario(id).unwrap(), 4).unwrap();
        assert_eq!(r, realize_scenario(&builtin_scenario(id).unwrap(), 4).unwrap());
        for i in (0..r.table.n_rows()).step_by(97) {
            assert_eq!(r.cepo(i, r.table.t_test[i]).unwrap(), r.table.cepo_test[i]);
        }
        assert!(r.table.t.iter().chain(&r.table.t_test).all(|t| (0.0..=1.0).contains(t)));
    }
}

#[test]
fn vshape_optimum_is_the_minimum() {
    let s = builtin_scenario("vshape").unwrap();
    let r = realize_scenario(&s, 2).unwrap();
    let x = r.table.covariates.row(0).to_vec();
    let star = r.fitted.optimum(&x);
    assert!((0.1..=0.9).contains(&star));
    assert!(r.fitted.dose_response(&x, star).abs() < 1e-12);
    assert!(r.fitted.dose_response(&x, (star + 0.1).min(1.0)) > 0.0);
}

#[test]
fn input_sets_share_the_leading_columns() {
    let s = InputSets::for_columns(5);
    assert_eq!(s.treatment, vec![0, 1, 2, 3]);
    assert_eq!(s.outcome, vec![0, 1, 2, 4]);
    assert_eq!(s.shared(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn benchmark_csv_round_trips(
        n in 1usize..20,
        k in 1usize..6,
        values in prop::collection::vec(prop_oneof![-1e6f64..1e6, -1e-6f64..1e-6, Just(0.0)], 1..50),
    ) {
        let t = table(n, k, &values);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_benchmark_csv(&t, &path).unwrap();
        let back = read_benchmark_csv(&path).unwrap();
        prop_assert_eq!(back, t);
    }
}
