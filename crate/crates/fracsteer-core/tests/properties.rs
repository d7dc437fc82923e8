//! Property tests for the structural invariants: spectral algebra,
//! kernel bounds, quadrature identities and certificate monotonicity.

use nalgebra::DMatrix;
use proptest::prelude::*;

use fracsteer_core::evolution::{
    mild_solve_with, singular_quad_weights, ControlSignal, KernelTable, NeutralMap,
    SteeringProblem,
};
use fracsteer_core::mittag_leffler::{k_kernel, s_kernel};
use fracsteer_core::spectral::{
    fractional_power_apply, make_dirichlet_laplacian, project, BasisKind, GridSpec,
    SpectralOperator, SpectralState,
};
use fracsteer_core::steering::{contraction_certificate, CertificateConstants};

proptest! {
    /// Fractional powers compose additively: A^a (A^b x) = A^{a+b} x.
    #[test]
    fn fractional_powers_compose(
        mu1 in -1.0f64..1.0,
        mu2 in -1.0f64..1.0,
        coeffs in prop::collection::vec(-10.0f64..10.0, 1..8),
    ) {
        let p = coeffs.len();
        let op = make_dirichlet_laplacian(p).unwrap();
        let x = SpectralState::from_vec(coeffs);
        let a = fractional_power_apply(&op, mu1, &x).unwrap();
        let ab = fractional_power_apply(&op, mu2, &a).unwrap();
        let direct = fractional_power_apply(&op, mu1 + mu2, &x).unwrap();
        for i in 0..p {
            let scale = 1.0 + direct.coeffs()[i].abs();
            prop_assert!((ab.coeffs()[i] - direct.coeffs()[i]).abs() < 1e-9 * scale);
        }
    }

    /// Parseval: projecting a band-limited function recovers its
    /// coefficients and never over-counts the energy.
    #[test]
    fn projection_recovers_band_limited_energy(
        c1 in -2.0f64..2.0,
        c2 in -2.0f64..2.0,
        c3 in -2.0f64..2.0,
    ) {
        let op = make_dirichlet_laplacian(4).unwrap();
        let n = 1601;
        let pi = std::f64::consts::PI;
        let f = |z: f64| {
            2.0f64.sqrt() * (c1 * (pi * z).sin() + c2 * (2.0 * pi * z).sin() + c3 * (3.0 * pi * z).sin())
        };
        let samples: Vec<f64> = (0..n).map(|i| f(i as f64 / (n - 1) as f64)).collect();
        let s = project(&samples, &op).unwrap();
        let energy = c1 * c1 + c2 * c2 + c3 * c3;
        prop_assert!((s.norm().powi(2) - energy).abs() < 1e-6 + 1e-6 * energy);
        prop_assert!(s.coeffs()[3].abs() < 1e-8);
    }

    /// The kernel multipliers respect the operator bounds everywhere:
    /// 0 < s <= 1 and 0 < k <= v / Gamma(1 + v).
    #[test]
    fn kernel_bounds_hold(
        nu in 0.3f64..0.99,
        t in 1e-3f64..3.0,
        lambda in 0.1f64..1e4,
    ) {
        let s = s_kernel(nu, t, lambda).unwrap();
        let k = k_kernel(nu, t, lambda).unwrap();
        prop_assert!(s > 0.0 && s <= 1.0, "s = {s}");
        prop_assert!(k > 0.0 && k <= nu / libm::tgamma(1.0 + nu), "k = {k}");
    }

    /// Product-integration weights integrate the singular factor exactly:
    /// their sum telescopes to t_m^v / v.
    #[test]
    fn singular_weights_telescope(
        nu in 0.05f64..1.0,
        steps in 2usize..40,
        m_frac in 0.0f64..1.0,
    ) {
        let grid = GridSpec::new(1.0, steps).unwrap();
        let m = ((steps as f64 * m_frac) as usize).min(steps);
        let w = singular_quad_weights(nu, &grid, m);
        let total: f64 = w.iter().sum();
        let expected = grid.node(m).powf(nu) / nu;
        prop_assert!((total - expected).abs() < 1e-12 * (1.0 + expected));
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    /// The certificate is monotone in every constant it should be
    /// monotone in.
    #[test]
    fn certificate_monotonicity(
        m_1 in 0.1f64..10.0,
        m_2 in 0.1f64..10.0,
        l in 0.1f64..5.0,
        h in 0.01f64..2.0,
        a in 0.01f64..2.0,
        nu in 0.1f64..0.9,
        vs in 0.1f64..0.9,
        t in 0.1f64..3.0,
        bump in 1e-3f64..1.0,
    ) {
        let base = CertificateConstants::new(1.0, m_1, m_2, l, h, a, nu, vs, t).unwrap();
        let q0 = contraction_certificate(&base).q;
        for field in 0..4 {
            let mut c = base;
            match field {
                0 => c.m_1 += bump,
                1 => c.m_2 += bump,
                2 => c.lipschitz += bump,
                _ => c.t_final += bump,
            }
            let q1 = contraction_certificate(&c).q;
            prop_assert!(q1 >= q0, "field {field}: q {q0} -> {q1}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// The control-to-trajectory map is affine for a linear neutral term:
    /// superposition holds to solver tolerance.
    #[test]
    fn mild_solution_superposition(
        seed in 0u64..1000,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        c_kernel in 0.0f64..0.02,
    ) {
        use rand::{Rng, SeedableRng};
        let op = make_dirichlet_laplacian(3).unwrap();
        let g = GridSpec::new(1.0, 24).unwrap();
        let h = if c_kernel == 0.0 {
            NeutralMap::zero(3, 0.5).unwrap()
        } else {
            NeutralMap::new(DMatrix::identity(3, 3) * c_kernel, 0.5, &op, None, None).unwrap()
        };
        let prob = SteeringProblem::new(
            0.5,
            op,
            DMatrix::identity(3, 3),
            None,
            h,
            SpectralState::from_vec(vec![1.0, -0.3, 0.2]),
            SpectralState::zero(3),
            g,
        ).unwrap();
        let table = KernelTable::build(&prob).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u1 = ControlSignal::new(DMatrix::from_fn(24, 3, |_, _| rng.gen_range(-1.0..1.0)), g).unwrap();
        let u2 = ControlSignal::new(DMatrix::from_fn(24, 3, |_, _| rng.gen_range(-1.0..1.0)), g).unwrap();
        let combo = ControlSignal::new(u1.values() * a + u2.values() * b, g).unwrap();

        let z = mild_solve_with(&prob, &table, &ControlSignal::zero(g, 3)).unwrap();
        let t1 = mild_solve_with(&prob, &table, &u1).unwrap();
        let t2 = mild_solve_with(&prob, &table, &u2).unwrap();
        let tc = mild_solve_with(&prob, &table, &combo).unwrap();
        for m in [6usize, 12, 24] {
            let lhs = tc.state_at(m) - z.state_at(m);
            let rhs = (t1.state_at(m) - z.state_at(m)) * a + (t2.state_at(m) - z.state_at(m)) * b;
            prop_assert!((lhs - rhs).norm() < 1e-8 * (1.0 + a.abs() + b.abs()));
        }
    }

    /// Kernel monotonicity: both multipliers decay in t and in lambda.
    #[test]
    fn kernel_monotone_decay(
        nu in 0.3f64..0.95,
        lambda in 0.5f64..100.0,
        t in 0.05f64..2.0,
    ) {
        let s0 = s_kernel(nu, t, lambda).unwrap();
        let s1 = s_kernel(nu, t * 1.3, lambda).unwrap();
        let s2 = s_kernel(nu, t, lambda * 1.3).unwrap();
        prop_assert!(s1 <= s0 + 1e-12);
        prop_assert!(s2 <= s0 + 1e-12);
        let k0 = k_kernel(nu, t, lambda).unwrap();
        let k1 = k_kernel(nu, t * 1.3, lambda).unwrap();
        prop_assert!(k1 <= k0 + 1e-12);
    }

    /// A generic diagonal operator accepts any strictly increasing
    /// positive spectrum and rejects anything else.
    #[test]
    fn operator_spectrum_validation(mut eigenvalues in prop::collection::vec(0.01f64..100.0, 1..6)) {
        eigenvalues.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eigenvalues.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
        let op = SpectralOperator::new(eigenvalues.clone(), BasisKind::Generic).unwrap();
        prop_assert_eq!(op.modes(), eigenvalues.len());
        let mut reversed = eigenvalues;
        reversed.reverse();
        if reversed.len() > 1 {
            prop_assert!(SpectralOperator::new(reversed, BasisKind::Generic).is_err());
        }
    }
}
