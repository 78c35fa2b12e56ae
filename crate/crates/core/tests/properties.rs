use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statrs::function::gamma::digamma;

use sgdlm::engine::solve_dof;
use sgdlm::factors::{canonicalize, reference_pattern, svd_factorize};
use sgdlm::io::export::{read_rows, write_rows, RowKind, StepRecordRow};
use sgdlm::structure::{common_parental_sets, eigen_diagnostics, moral_pattern, structural_rank, GraphStructure};
use sgdlm::udlm::{conjugate_update, evolve, one_step_forecast, DiscountSpec, NGPosterior, StateLayout};

/// Random graph with a nonzero coefficient on every edge.
fn graph_and_gamma() -> impl Strategy<Value = (GraphStructure, DMatrix<f64>)> {
    (2usize..9).prop_flat_map(|q| {
        prop::collection::vec((prop::bool::weighted(0.3), 0.2f64..1.0, any::<bool>()), q * q).prop_map(move |cells| {
            let mut parents = vec![Vec::new(); q];
            let mut gamma = DMatrix::zeros(q, q);
            for j in 0..q {
                for h in 0..q {
                    let (on, v, neg) = cells[j * q + h];
                    if on && h != j {
                        parents[j].push(h);
                        gamma[(j, h)] = if neg { -v } else { v };
                    }
                }
            }
            (GraphStructure::new(q, parents).unwrap(), gamma)
        })
    })
}

fn ng(dim: usize) -> impl Strategy<Value = NGPosterior> {
    (
        prop::collection::vec(-2.0f64..2.0, dim),
        prop::collection::vec(-1.0f64..1.0, dim * dim),
        1.0f64..30.0,
        0.05f64..5.0,
    )
        .prop_map(move |(m, a, n, s)| {
            let a = DMatrix::from_vec(dim, dim, a);
            let scale = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
            NGPosterior::new(DVector::from_vec(m), scale, n, s, StateLayout::new(dim, 0)).unwrap()
        })
}

fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    m.clone().symmetric_eigenvalues().iter().all(|&v| v >= -tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn moral_pattern_is_precision_support((g, gamma) in graph_and_gamma(), lam in 0.5f64..3.0) {
        let q = g.q();
        let a = DMatrix::identity(q, q) - &gamma;
        let precisions = DVector::from_fn(q, |i, _| lam + i as f64 * 0.37);
        let omega = a.transpose() * DMatrix::from_diagonal(&precisions) * &a;
        let support = omega.map(|v| v.abs() > 1e-12);
        prop_assert_eq!(moral_pattern(&g), support);
    }

    #[test]
    fn parental_sets_partition_the_parents((g, _) in graph_and_gamma()) {
        let part = common_parental_sets(&g);
        let mut seen = vec![false; g.q()];
        for s in &part.sets {
            for &m in &s.members {
                prop_assert!(!seen[m]);
                seen[m] = true;
            }
            prop_assert_eq!(s.rank_bound, s.members.len().min(s.children.len()));
        }
        for (i, &s) in seen.iter().enumerate() {
            prop_assert_eq!(s, !g.children(i).is_empty());
        }
        for (a, sa) in part.sets.iter().enumerate() {
            for sb in &part.sets[a + 1..] {
                prop_assert!(sa.children.iter().all(|c| !sb.children.contains(c)));
            }
        }
        prop_assert_eq!(part.total, part.sets.iter().map(|s| s.rank_bound).sum::<usize>());
        prop_assert_eq!(g.childless().len() + seen.iter().filter(|&&b| b).count(), g.q());
    }

    #[test]
    fn uncovered_nodes_force_zero_eigenvalues((g, gamma) in graph_and_gamma()) {
        let d = eigen_diagnostics(&g, &gamma).unwrap();
        let r = d.disjoint_cycle_bound.unwrap();
        prop_assert!(d.zero_count >= g.q() - r);
        if r < g.q() {
            prop_assert!(gamma.determinant().abs() <= 1e-9 * gamma.norm().max(1.0).powi(g.q() as i32));
        }
        if d.acyclic {
            prop_assert_eq!(d.spectral_radius, 0.0);
        }
    }

    #[test]
    fn factors_reconstruct_and_canonical_form_is_stable((g, gamma) in graph_and_gamma()) {
        let part = common_parental_sets(&g);
        let rank = structural_rank(&part, Some(&gamma));
        let dec = svd_factorize(&gamma, &part).unwrap();
        prop_assert!((dec.reconstruct() - &gamma).amax() <= 1e-10);
        let reference = reference_pattern(&part, g.q(), None, Some(&rank.per_set));
        let once = canonicalize(&dec, &reference).unwrap();
        let twice = canonicalize(&once, &reference).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!((once.reconstruct() - &gamma).amax() <= 1e-10);
        for k in 0..once.p() {
            let set = &part.sets[once.set_assignment[k]];
            for i in 0..g.q() {
                if once.scores[(k, i)] != 0.0 {
                    prop_assert!(set.members.contains(&i));
                }
                if once.loadings[(i, k)] != 0.0 {
                    prop_assert!(set.children.contains(&i));
                }
            }
        }
    }

    #[test]
    fn conjugate_update_keeps_a_valid_summary(
        prior in (1usize..5).prop_flat_map(ng),
        seed in prop::collection::vec(-3.0f64..3.0, 5),
        y in -10.0f64..10.0,
    ) {
        let f = DVector::from_iterator(prior.dim(), seed.iter().take(prior.dim()).copied());
        let fc = one_step_forecast(&prior, &f).unwrap();
        prop_assert!(fc.scale_q > 0.0);
        let post = conjugate_update(&prior, &f, y).unwrap();
        prop_assert_eq!(post.dof, prior.dof + 1.0);
        prop_assert!(post.var_est > 0.0);
        prop_assert!((&post.scale - post.scale.transpose()).amax() <= 1e-12 * post.scale.amax());
        prop_assert!(post.scale.clone().cholesky().is_some());
        // information never decreases
        let info_prior = (&prior.scale / prior.var_est).try_inverse().unwrap();
        let info_post = (&post.scale / post.var_est).try_inverse().unwrap();
        prop_assert!(is_psd(&(info_post - info_prior), 1e-8 * prior.scale.amax().recip().max(1.0)));
    }

    #[test]
    fn evolution_only_adds_uncertainty(prior in (1usize..5).prop_flat_map(ng), delta in 0.5f64..=1.0, beta in 0.5f64..=1.0) {
        let d = prior.dim();
        let discount = DiscountSpec::new(delta, delta, beta).unwrap();
        let next = evolve(&prior, &DMatrix::identity(d, d), &discount).unwrap();
        prop_assert_eq!(&next.mean, &prior.mean);
        prop_assert_eq!(next.var_est, prior.var_est);
        prop_assert!((next.dof - beta * prior.dof).abs() <= 1e-12 * prior.dof);
        prop_assert!(is_psd(&(&next.scale - &prior.scale), 1e-10 * prior.scale.amax()));
    }

    #[test]
    fn dof_solve_inverts_the_moment_map(n in 0.01f64..1e5, init in 0.1f64..100.0) {
        let target = digamma(0.5 * n) - (0.5 * n).ln();
        let solved = solve_dof(target, init).unwrap();
        prop_assert!((solved - n).abs() <= 1e-6 * n, "{} vs {}", solved, n);
    }

    #[test]
    fn exported_rows_round_trip_bit_exact(
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
        label in "[A-Za-z][A-Za-z0-9_<-]{0,8}",
    ) {
        let rows: Vec<StepRecordRow> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| StepRecordRow::new(i, &format!("{}", 1960 + i), RowKind::Posterior, label.clone(), "mean[0]", v))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_rows(&path, &rows).unwrap();
        let back = read_rows(&path).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
            prop_assert_eq!(&a.label, &b.label);
        }
    }
}
