mod common;

use common::std_normal_pdf;
use tailcorr::conddens::{
    bh_bandwidths, bh_density_values, bh_weights, hk_density_values, HK_EPSILON,
};
use tailcorr::quantreg::fit_both;
use tailcorr::sampling::{draw_bivariate_normal, BivariateSample, RngStream};
use tailcorr::Tau;

fn twenty_points() -> BivariateSample {
    let xs: Vec<f64> = (0..20).map(|i| i as f64 / 4.0 + ((i * i) % 7) as f64 / 10.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| 2.0 * x / 3.0 + ((i * 5) % 11) as f64 / 6.0 - 1.0)
        .collect();
    BivariateSample::new(xs, ys).unwrap()
}

#[test]
fn bandwidths_match_high_precision_evaluation() {
    // 40-digit evaluation of the plug-in rule on the same 20 points.
    let bw = bh_bandwidths(&twenty_points()).unwrap();
    let expect = [
        (bw.a_yx, 0.492_931_975_306_879_833_785_4),
        (bw.b_yx, 0.391_646_494_878_562_264_160_3),
        (bw.a_xy, 0.386_230_748_983_408_484_329_8),
        (bw.b_xy, 0.499_939_606_799_271_889_006_5),
    ];
    for (got, want) in expect {
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
}

#[test]
fn weights_are_normalized_kernel_ratios() {
    let s = twenty_points();
    let a = 0.7;
    for i in [0, 7, 19] {
        let w = bh_weights(s.xs(), a, i);
        let raw: Vec<f64> = s.xs().iter().map(|x| std_normal_pdf((s.xs()[i] - x) / a)).collect();
        let total: f64 = raw.iter().sum();
        for (wj, rj) in w.iter().zip(&raw) {
            assert!((wj - rj / total).abs() < 1e-14);
        }
    }
}

/// Conditional density of Y given X = x at the point q for a standard
/// normal pair with correlation ρ.
fn true_conditional(rho: f64, x: f64, q: f64) -> f64 {
    let s = (1.0 - rho * rho).sqrt();
    std_normal_pdf((q - rho * x) / s) / s
}

#[test]
fn density_values_track_truth() {
    let rho = 0.5;
    let s = draw_bivariate_normal(rho, 3000, &RngStream::new(80, 0)).unwrap();
    let bw = bh_bandwidths(&s).unwrap();
    for t in [0.1, 0.5, 0.9] {
        let tau = Tau::new(t).unwrap();
        let (yx, xy) = fit_both(&s, tau).unwrap();
        let bh = bh_density_values(&s, (&yx, &xy), &bw).unwrap();
        let hk = hk_density_values(&s, tau, HK_EPSILON).unwrap();
        for dens in [&bh, &hk] {
            // Mean absolute relative error over the central 90% of x.
            let mut errs = Vec::new();
            for i in 0..s.len() {
                let x = s.xs()[i];
                if x.abs() > 1.645 {
                    continue;
                }
                let truth = true_conditional(rho, x, yx.predict(x));
                errs.push((dens.f_yx[i] - truth).abs() / truth);
            }
            let mare = errs.iter().sum::<f64>() / errs.len() as f64;
            assert!(mare < 0.25, "tau {t} {:?}: {mare}", dens.method);
        }
    }
}

#[test]
fn bandwidth_symmetry_and_positivity() {
    let s = twenty_points();
    let a = bh_bandwidths(&s).unwrap();
    let b = bh_bandwidths(&s.swapped()).unwrap();
    assert_eq!((a.a_yx, a.b_yx, a.a_xy, a.b_xy), (b.a_xy, b.b_xy, b.a_yx, b.b_yx));
    let s = draw_bivariate_normal(0.5, 200, &RngStream::new(80, 1)).unwrap();
    let d = hk_density_values(&s, Tau::new(0.2).unwrap(), HK_EPSILON).unwrap();
    assert!(d.f_yx.iter().chain(&d.f_xy).all(|v| *v >= 0.0 && v.is_finite()));
}
