use hho_web::demo::{convergence_csv, smoother_picture, solve_picture};

#[test]
fn smooth_solution_is_accurate() {
    let pic = solve_picture("smooth-sine", 1, 8, "smoothed", "mean", 3).unwrap();
    let (lo, hi) = pic.range();
    assert!(lo > -0.05 && (hi - 1.0).abs() < 0.05, "{lo} {hi}");
    assert!(pic.summary.contains("128 cells"), "{}", pic.summary);
}

#[test]
fn classical_method_rejects_divergence_load() {
    let err = solve_picture("kink-aligned", 1, 4, "classical", "mean", 2).unwrap_err();
    assert!(err.contains("inapplicable"), "{err}");
}

#[test]
fn smoothed_cell_basis_is_local() {
    let pic = smoother_picture(1, 4, "mean", "cell", 5, 0, 2).unwrap();
    assert!(pic.range().1 > 0.0);
    assert!(!pic.summary.contains("supported on 32 of 32"), "{}", pic.summary);
    assert!(smoother_picture(1, 4, "mean", "face", 10_000, 0, 2).is_err());
    assert!(smoother_picture(1, 4, "mean", "edge", 0, 0, 2).is_err());
}

#[test]
fn table_has_one_row_per_level() {
    let csv = convergence_csv("smooth-sine", 0, "smoothed", "scott-zhang", 2, 3).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("level,h,e_H1"));
    assert!(convergence_csv("smooth-sine", 0, "smoothed", "mean", 16, 4).is_err());
}
