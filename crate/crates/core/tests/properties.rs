use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use edspec::dichotomy::{DichotomyAnalysis, DichotomyOptions, Verdict};
use edspec::expr::Expression;
use edspec::integrate::{solve, transition, uniform_grid, SolverOptions};
use edspec::io::{parse_system, system_to_json};
use edspec::spectrum::{check_shift_law, hausdorff, union, SpectrumOptions};
use edspec::systems::{LinearSystem, NonlinearSystem, System};

const ENV: [&str; 2] = ["t", "x1"];

/// Random expression text over `t` and `x1` that stays finite on `[-2, 2]^2`.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-3i32..=3).prop_map(|k| format!("{k}")),
        (1u32..=9).prop_map(|k| format!("0.{k}")),
        Just("t".to_string()),
        Just("x1".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), 0u32..=3).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("-{a}")),
        ]
    })
}

fn sorted_intervals() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-5.0f64..5.0, 0.0f64..1.0), 1..5).prop_map(|v| {
        let mut iv: Vec<[f64; 2]> = v.into_iter().map(|(a, w)| [a, a + w]).collect();
        iv.sort_by(|x, y| x[0].total_cmp(&y[0]));
        iv
    })
}

/// Diagonal entries in `[-2, 2]` at least 0.3 apart, ascending.
fn separated_diagonal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 1..=3).prop_filter_map("gaps below 0.3", |mut v| {
        v.sort_by(f64::total_cmp);
        v.windows(2).all(|w| w[1] - w[0] >= 0.3).then_some(v)
    })
}

fn diagonal(v: &[f64]) -> LinearSystem {
    LinearSystem::constant("diag", DMatrix::from_diagonal(&DVector::from_row_slice(v)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn display_round_trips(text in smooth_expr(), t in -2.0f64..2.0, x in -2.0f64..2.0) {
        let e = Expression::parse(&text, &ENV).unwrap();
        let again = Expression::parse(&e.to_string(), &ENV).unwrap();
        let (a, b) = (e.eval(&[t, x]).unwrap(), again.eval(&[t, x]).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}: {a} {b}", text, e);
    }

    #[test]
    fn derivative_matches_central_difference(
        text in smooth_expr(),
        t in -1.5f64..1.5,
        x in -1.5f64..1.5,
    ) {
        let e = Expression::parse(&text, &ENV).unwrap();
        let d = e.differentiate("x1").unwrap();
        let h = 1e-5;
        let fd = (e.eval(&[t, x + h]).unwrap() - e.eval(&[t, x - h]).unwrap()) / (2.0 * h);
        let exact = d.eval(&[t, x]).unwrap();
        let scale = exact.abs().max(fd.abs()).max(1.0);
        prop_assert!((exact - fd).abs() <= 1e-5 * scale, "{text}: {exact} vs {fd}");
    }

    #[test]
    fn hausdorff_is_a_metric_on_samples(
        a in sorted_intervals(),
        b in sorted_intervals(),
        c in sorted_intervals(),
    ) {
        prop_assert_eq!(hausdorff(&a, &a), 0.0);
        let ab = hausdorff(&a, &b);
        prop_assert_eq!(ab, hausdorff(&b, &a));
        prop_assert!(ab <= hausdorff(&a, &c) + hausdorff(&c, &b) + 1e-12);
    }

    #[test]
    fn union_covers_its_parts(a in sorted_intervals(), b in sorted_intervals()) {
        let u = union(&[a.clone(), b.clone()]);
        prop_assert!(u.windows(2).all(|w| w[0][1] < w[1][0]));
        for iv in a.iter().chain(&b) {
            prop_assert!(u.iter().any(|w| w[0] <= iv[0] && iv[1] <= w[1]));
        }
        prop_assert_eq!(union(std::slice::from_ref(&u)), u);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scalar_linear_solution_is_exponential(lambda in -2.0f64..1.0, x0 in -5.0f64..5.0) {
        let sys = NonlinearSystem::parse("lin", &[&format!("({lambda})*x1")]).unwrap();
        let grid = uniform_grid(0.0, 5.0, 11);
        let tr = solve(&sys, &[x0], &grid, &SolverOptions::default()).unwrap();
        for (t, x) in tr.times.iter().zip(&tr.states) {
            assert_relative_eq!(x[0], x0 * (lambda * t).exp(), max_relative = 1e-7, epsilon = 1e-10);
        }
    }

    #[test]
    fn transition_obeys_liouville(entries in prop::collection::vec(-1.0f64..1.0, 4)) {
        let a = DMatrix::from_row_slice(2, 2, &entries);
        let tr = transition(
            &LinearSystem::constant("A", a.clone()),
            &uniform_grid(0.0, 2.0, 5),
            &SolverOptions::default(),
        )
        .unwrap();
        for (t, phi) in tr.times.iter().zip(&tr.matrices) {
            assert_relative_eq!(phi.determinant(), (a.trace() * t).exp(), max_relative = 1e-7);
        }
    }

    #[test]
    fn linear_json_round_trips(entries in prop::collection::vec(-3.0f64..3.0, 9)) {
        let sys = System::Linear(LinearSystem::constant("A", DMatrix::from_row_slice(3, 3, &entries)));
        let json = system_to_json(&sys).unwrap().to_string();
        let back = parse_system(&json).unwrap();
        let (x, y) = (sys.as_linear().unwrap(), back.as_linear().unwrap());
        for t in [0.0, 1.5] {
            let diff = (x.a.eval(t).unwrap() - y.a.eval(t).unwrap()).amax();
            prop_assert!(diff <= 1e-12, "{diff}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn diagonal_dichotomy_rank_counts_stable_entries(
        diag in separated_diagonal(),
        pick in 0usize..4,
    ) {
        // a shift halfway between neighbouring entries, or beyond both ends
        let mut cuts = vec![diag[0] - 0.5];
        cuts.extend(diag.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        cuts.push(diag[diag.len() - 1] + 0.5);
        let gamma = cuts[pick % cuts.len()];
        let analysis = DichotomyAnalysis::new(&diagonal(&diag), &DichotomyOptions::default()).unwrap();
        let cert = analysis.has_dichotomy(gamma);
        prop_assert_eq!(cert.verdict, Verdict::Certified);
        prop_assert_eq!(cert.rank, diag.iter().filter(|&&d| d < gamma).count());
        prop_assert!(cert.alpha > 0.0 && cert.k >= 1.0);
    }

    #[test]
    fn shift_law_holds_for_diagonal_systems(diag in separated_diagonal(), gamma in -1.5f64..1.5) {
        let r = check_shift_law(&diagonal(&diag), gamma, &SpectrumOptions::default()).unwrap();
        prop_assert!(r.pass, "{:?} vs {:?}", r.expected, r.measured);
        for (iv, d) in r.measured.iter().zip(&diag) {
            prop_assert!((iv[0] - (d - gamma)).abs() <= 0.05 && (iv[1] - (d - gamma)).abs() <= 0.05);
        }
    }
}
