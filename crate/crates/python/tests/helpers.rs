use strattree_py::{build_config, build_sample};

#[test]
fn sample_defaults_to_the_unit_cube() {
    let (s, space) =
        build_sample(vec![1.0, 2.0], vec![0, 1], vec![vec![0.1], vec![0.9]], None).unwrap();
    assert_eq!(s.n(), 2);
    assert_eq!(space.dim(), 1);
    let err =
        build_sample(vec![1.0, 2.0], vec![0, 1], vec![vec![1.5], vec![0.5]], None).unwrap_err();
    assert!(err.contains("outside"), "{err}");
}

#[test]
fn explicit_space_widens_bounds() {
    let space = r#"[{"kind": "continuous", "lower": 0, "upper": 10}]"#;
    let x = vec![vec![5.0], vec![9.5]];
    assert!(build_sample(vec![1.0, 2.0], vec![0, 1], x, Some(space)).is_ok());
}

#[test]
fn keyword_overrides_win() {
    let c = build_config(
        Some(r#"{"max_depth": 4, "nu": 0.2}"#),
        Some(1),
        Some(9),
        None,
    )
    .unwrap();
    assert_eq!(c.max_depth, 1);
    assert_eq!(c.ea.seed, 9);
    assert_eq!(c.nu, 0.2);
    assert!(build_config(Some(r#"{"nu": 0.7}"#), None, None, None).is_err());
}
