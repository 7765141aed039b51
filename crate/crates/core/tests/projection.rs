use proptest::prelude::*;
use speckle_core::compression::{squared_distance, PiecewiseConstantCode, ProjectionMode};
use speckle_core::measurement::Bounds;

/// Minimum cost over every codeword with at most `max_jumps` jumps.
fn brute_force(u: &[f64], code: &PiecewiseConstantCode) -> f64 {
    let grid = code.grid();
    let seg = |s: usize, e: usize| {
        grid.iter()
            .map(|g| u[s..e].iter().map(|v| (v - g) * (v - g)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    };
    fn rec(start: usize, left: usize, n: usize, seg: &dyn Fn(usize, usize) -> f64) -> f64 {
        let mut best = seg(start, n);
        if left > 0 {
            for d in start + 1..n {
                best = best.min(seg(start, d) + rec(d, left - 1, n, seg));
            }
        }
        best
    }
    rec(0, code.max_jumps(), u.len(), &seg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn viterbi_matches_brute_force(
        u in proptest::collection::vec(0.0f64..3.0, 2..9),
        jumps in 0usize..3,
        bits in 1u32..4,
    ) {
        let jumps = jumps.min(u.len() - 1);
        let code = PiecewiseConstantCode::new(u.len(), jumps, bits, Bounds::new(0.5, 2.0).unwrap()).unwrap();
        let p = code.project_viterbi(&u).unwrap();
        prop_assert!(code.is_codeword(p.values()));
        let gap = squared_distance(&u, p.values()) - brute_force(&u, &code);
        prop_assert!(gap.abs() <= 1e-12, "gap {}", gap);
    }

    #[test]
    fn projection_is_idempotent(u in proptest::collection::vec(0.0f64..3.0, 3..20)) {
        let code = PiecewiseConstantCode::new(u.len(), 2, 3, Bounds::new(0.5, 2.0).unwrap()).unwrap();
        for mode in [ProjectionMode::Exact, ProjectionMode::Approximate] {
            let p = code.project(&u, mode).unwrap();
            let again = code.project(p.values(), mode).unwrap();
            prop_assert_eq!(p, again);
        }
    }

    #[test]
    fn exact_never_worse_than_approximate(u in proptest::collection::vec(0.0f64..3.0, 3..30)) {
        let code = PiecewiseConstantCode::new(u.len(), 2, 4, Bounds::new(0.5, 2.0).unwrap()).unwrap();
        let exact = squared_distance(&u, code.project_viterbi(&u).unwrap().values());
        let approx = squared_distance(&u, code.project_approx(&u).unwrap().values());
        prop_assert!(exact <= approx + 1e-12);
    }
}
