use volmix_web::{comparison_report, garch_report, mixture_report, parse_rows};

#[test]
fn single_gaussian_matches_closed_form() {
    let r = mixture_report(&[1.0], &[0.0], &[1.0], 0.5, 20_000, 3).unwrap();
    let exact = r.crps_exact.unwrap();
    assert!((r.crps - exact).abs() / exact < 0.01);
    assert!((r.variance - 1.0).abs() < 1e-12);
    assert_eq!(r.density.len(), 201);
}

#[test]
fn mixture_weights_are_normalised() {
    let r = mixture_report(&[2.0, 2.0], &[-1.0, 1.0], &[0.5, 0.5], 0.0, 1000, 1).unwrap();
    assert!(r.mean.abs() < 1e-12);
    assert!((r.variance - 1.25).abs() < 1e-12);
    assert!(r.crps_exact.is_none());
    assert!(mixture_report(&[0.0], &[0.0], &[1.0], 0.0, 1000, 1).is_err());
    assert!(mixture_report(&[1.0], &[0.0], &[-1.0], 0.0, 1000, 1).is_err());
}

#[test]
fn garch_demo_fits_every_variant() {
    let r = garch_report(0.05, 0.10, 0.85, 3000, 9).unwrap();
    assert_eq!(r.fits.len(), 4);
    assert_eq!(r.returns.len(), 3000);
    assert_eq!(r.fitted_volatility.len(), 3000);
    let g = &r.fits[0];
    assert_eq!(g.variant, "GARCH");
    assert!((g.alpha + g.beta - 0.95).abs() < 0.05, "{g:?}");
    assert!(garch_report(0.05, 0.5, 0.6, 3000, 9).is_err());
    assert!(garch_report(0.05, 0.1, 0.8, 10, 9).is_err());
}

#[test]
fn comparison_prefers_the_accurate_forecast() {
    let mut text = String::from("realized,a,b\n");
    for i in 0..200 {
        let real = 1.0 + 0.5 * ((i as f64) * 0.37).sin();
        text.push_str(&format!("{real},{},{}\n", real * 1.02, 1.0));
    }
    let r = comparison_report(&text, 0).unwrap();
    assert_eq!(r.n, 200);
    assert!(r.mse[0] < r.mse[1]);
    assert!(r.qlike[0] < r.qlike[1]);
    assert!(r.dm_qlike < -2.58);
    assert_eq!(r.stars_qlike, "**");
}

#[test]
fn parser_reports_bad_lines() {
    let [a, b, c] = parse_rows("# comment\n1 2 3\n4\t5\t6\n").unwrap();
    assert_eq!((a, b, c), (vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]));
    assert_eq!(parse_rows("1,2,3\n4,5\n").unwrap_err(), "line 2: expected three numbers");
    assert!(comparison_report("1,2,3\n", 0).is_err());
}
