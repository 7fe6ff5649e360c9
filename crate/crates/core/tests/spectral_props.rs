use fairfunctor::category::{ConceptEmbedding, GroupSpec, SemanticCategory};
use fairfunctor::linalg::Matrix;
use fairfunctor::spectral::{
    fit, projection_error_bound_check, scatter, DebiasConfig, DebiasProjection, Mode,
};
use proptest::prelude::*;

fn build(vectors: &[Vec<f64>], n_d: usize, order: &[usize]) -> SemanticCategory {
    let objects: Vec<ConceptEmbedding> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| ConceptEmbedding::new(format!("t{i}"), v.clone()))
        .collect();
    let names: Vec<String> = order.iter().map(|i| format!("t{i}")).collect();
    let (d, o): (Vec<String>, Vec<String>) = (
        names
            .iter()
            .filter(|t| t[1..].parse::<usize>().unwrap() < n_d)
            .cloned()
            .collect(),
        names
            .iter()
            .filter(|t| t[1..].parse::<usize>().unwrap() >= n_d)
            .cloned()
            .collect(),
    );
    SemanticCategory::new(objects, None, GroupSpec::new(d, o)).unwrap()
}

fn vectors(dim: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), count)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scatter_ignores_token_order(vs in vectors(4, 6), seed in 0usize..720) {
        let mut order: Vec<usize> = (0..6).collect();
        // decode a permutation from the seed
        let mut k = seed;
        for i in (1..6).rev() {
            order.swap(i, k % (i + 1));
            k /= i + 1;
        }
        let a = scatter(&build(&vs, 3, &(0..6).collect::<Vec<_>>())).unwrap().0;
        let b = scatter(&build(&vs, 3, &order)).unwrap().0;
        prop_assert!(a.s_d.add_scaled(&b.s_d, -1.0).unwrap().max_abs() < 1e-9);
        prop_assert!(a.s_o.add_scaled(&b.s_o, -1.0).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn fitted_projection_is_row_orthonormal(vs in vectors(5, 6), lambda in 0.0f64..10.0, d_u in 1usize..5) {
        let cat = build(&vs, 3, &(0..6).collect::<Vec<_>>());
        let cfg = DebiasConfig { lambda_weight: lambda, d_u: Some(d_u), ..Default::default() };
        let out = fit(&cat, &cfg).unwrap();
        prop_assert!(out.projection.orthonormality_residual() < 1e-10);
        let sum: f64 = out.eigen.eigenvalues[..d_u].iter().sum();
        prop_assert!((out.objective - sum).abs() < 1e-9 * (1.0 + out.combined.max_abs()));
    }

    #[test]
    fn bound_holds_for_any_vector(
        vs in vectors(5, 6),
        lambda in 0.0f64..5.0,
        d_u in 1usize..5,
        v in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let cat = build(&vs, 3, &(0..6).collect::<Vec<_>>());
        let cfg = DebiasConfig { lambda_weight: lambda, d_u: Some(d_u), ..Default::default() };
        let out = fit(&cat, &cfg).unwrap();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(n > 1e-3);
        let v: Vec<f64> = v.iter().map(|x| x / n).collect();
        let check = projection_error_bound_check(&out.projection, &out.combined, &v).unwrap();
        prop_assert_ne!(check.holds, Some(false));
    }

    #[test]
    fn projection_text_round_trips(vs in vectors(4, 5), d_u in 1usize..4, contrastive: bool) {
        let cat = build(&vs, 2, &(0..5).collect::<Vec<_>>());
        let mode = if contrastive { Mode::Contrastive } else { Mode::AsWritten };
        let cfg = DebiasConfig { mode, d_u: Some(d_u), ..Default::default() };
        let p = fit(&cat, &cfg).unwrap().projection;
        let back = DebiasProjection::from_text(&p.to_text()).unwrap();
        prop_assert_eq!(back.p, p.p);
        prop_assert_eq!(back.eigenvalues, p.eigenvalues);
        prop_assert_eq!(back.mode, p.mode);
    }
}

#[test]
fn collapsing_two_point_group() {
    // D = {p + g, p − g}; with λ = 0 and d_u = d_c − 1 the pair must coincide
    let p = [0.3, -1.2, 0.5, 2.0];
    let g = [1.0, 0.4, -0.7, 0.1];
    let plus: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a + b).collect();
    let minus: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - b).collect();
    let cat = build(&[plus.clone(), minus.clone()], 2, &[0, 1]);
    let cfg = DebiasConfig {
        lambda_weight: 0.0,
        d_u: Some(3),
        ..Default::default()
    };
    let proj = fit(&cat, &cfg).unwrap().projection;
    let a = proj.project(&plus).unwrap();
    let b = proj.project(&minus).unwrap();
    let dist: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(dist < 1e-8, "{dist}");
}

#[test]
fn identity_projection_reconstructs_exactly() {
    let id = DebiasProjection::identity(3);
    assert_eq!(id.reconstruct(&[1.0, -2.0, 3.0]).unwrap(), [1.0, -2.0, 3.0]);
    let m = Matrix::identity(3);
    assert_eq!(id.transform_morphism(&m).unwrap(), m);
}
