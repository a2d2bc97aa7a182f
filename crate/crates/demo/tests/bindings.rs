use ecovnet_demo::{
    augmentation_preview_impl, random_affine_impl, scaling_table_impl, schedule_curve_impl, snapshot_epochs_impl,
    PREVIEW_SIZE,
};

#[test]
fn schedule_restarts_each_cycle() {
    let lr = schedule_curve_impl(25, 5, 1e-4).unwrap();
    assert_eq!(lr.len(), 25);
    for t in [0, 5, 10, 15, 20] {
        assert_eq!(lr[t], 1e-4);
    }
    assert!((lr[4] - 9.549150281252631e-6).abs() < 1e-18);
    assert_eq!(snapshot_epochs_impl(25, 5).unwrap(), vec![5, 10, 15, 20, 25]);
}

#[test]
fn infeasible_schedule_is_an_error() {
    assert!(schedule_curve_impl(11, 5, 1e-4).is_err());
    assert!(snapshot_epochs_impl(3, 5).is_err());
}

#[test]
fn identity_preview_shows_two_equal_halves() {
    let rgba = augmentation_preview_impl(0, 3, 0.0, 0.0, 1.0, false).unwrap();
    assert_eq!(rgba.len(), 2 * PREVIEW_SIZE * PREVIEW_SIZE * 4);
    let row = 2 * PREVIEW_SIZE * 4;
    for r in 0..PREVIEW_SIZE {
        let line = &rgba[r * row..(r + 1) * row];
        assert_eq!(line[..row / 2], line[row / 2..]);
    }
}

#[test]
fn flipped_preview_mirrors_rows() {
    let rgba = augmentation_preview_impl(2, 1, 0.0, 0.0, 1.0, true).unwrap();
    let row = 2 * PREVIEW_SIZE * 4;
    let line = &rgba[10 * row..11 * row];
    for c in 0..PREVIEW_SIZE {
        assert_eq!(line[c * 4], line[(2 * PREVIEW_SIZE - 1 - c) * 4]);
    }
}

#[test]
fn preview_rejects_bad_input() {
    assert!(augmentation_preview_impl(3, 0, 0.0, 0.0, 1.0, false).is_err());
    assert!(augmentation_preview_impl(0, 0, 0.0, 0.0, 0.0, false).is_err());
    assert!(augmentation_preview_impl(0, 0, 0.0, 95.0, 1.0, false).is_err());
}

#[test]
fn random_affine_stays_in_default_ranges() {
    for seed in 0..50 {
        let p = random_affine_impl(seed);
        assert!(p[0] == 0.0 || p[0] == 1.0);
        assert!(p[1].abs() <= 10.0 && p[2].abs() <= 10.0);
        assert!((0.9..=1.1).contains(&p[3]));
    }
    assert_eq!(random_affine_impl(7), random_affine_impl(7));
}

#[test]
fn scaling_table_for_phi_one() {
    let text = scaling_table_impl(1.0, 1.2, 1.1, 1.15).unwrap();
    assert!(text.contains("depth x1.2000"));
    assert!(text.contains("= 1.9203"));
    assert!(text.contains("input 258x258"));
    assert!(text.lines().any(|l| l.starts_with("9 ")));
    assert!(scaling_table_impl(1.0, 1.5, 1.5, 1.5).unwrap().contains("more than 10% from 2"));
    assert!(scaling_table_impl(1.0, 0.5, 1.1, 1.15).is_err());
    assert!(scaling_table_impl(-1.0, 1.2, 1.1, 1.15).is_err());
}
