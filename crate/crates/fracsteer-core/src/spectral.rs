//! Diagonal spectral representation of the generator: eigenvalues, basis
//! projections and fractional powers.
//!
//! The generator acts mode-by-mode as multiplication by `-lambda_p`
//! (contraction semigroup `exp(-lambda_p t)`), while the fractional powers
//! `A^mu` carry the positive multipliers `lambda_p^mu`. States are coefficient
//! vectors in the orthonormal eigenbasis, so the Euclidean norm of a state is
//! the L2 norm of the function it represents.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which eigenbasis the operator's coefficients refer to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    /// `e_p(z) = sqrt(2) sin(p pi z)` on (0, 1).
    DirichletSine,
    /// Eigenvalues only; no sampled-function projection available.
    Generic,
}

/// Diagonal positive operator: strictly increasing eigenvalues plus basis tag.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralOperator {
    eigenvalues: DVector<f64>,
    basis: BasisKind,
}

impl SpectralOperator {
    pub fn new(eigenvalues: Vec<f64>, basis: BasisKind) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidArgument(
                "operator needs at least one mode".into(),
            ));
        }
        let mut prev = 0.0;
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !(l > prev) || !l.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "eigenvalues must be positive and strictly increasing; offending entry {l} at index {i}"
                )));
            }
            prev = l;
        }
        Ok(SpectralOperator {
            eigenvalues: DVector::from_vec(eigenvalues),
            basis,
        })
    }

    /// Mode count P.
    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn basis(&self) -> BasisKind {
        self.basis
    }

    /// Eigenvalue `lambda_p` for 1-based mode index p.
    pub fn eigenvalue(&self, p: usize) -> f64 {
        self.eigenvalues[p - 1]
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Eigenfunction value `e_p(z)`; defined for the Dirichlet sine basis.
    pub fn eigenfunction(&self, p: usize, z: f64) -> Result<f64> {
        match self.basis {
            BasisKind::DirichletSine => {
                Ok(std::f64::consts::SQRT_2 * (p as f64 * std::f64::consts::PI * z).sin())
            }
            BasisKind::Generic => Err(Error::InvalidArgument(
                "generic operator has no sampled eigenbasis".into(),
            )),
        }
    }

    /// Operator norm of the inverse fractional power `A^{-mu}` in the
    /// truncated model: `lambda_1^{-mu}` for mu > 0.
    pub fn negative_power_norm(&self, mu: f64) -> f64 {
        self.eigenvalues[0].powf(-mu)
    }
}

/// Dirichlet Laplacian on (0, 1): `lambda_p = p^2 pi^2`, sine eigenbasis.
pub fn make_dirichlet_laplacian(p_modes: usize) -> Result<SpectralOperator> {
    if p_modes == 0 {
        return Err(Error::InvalidArgument("mode count must be at least 1".into()));
    }
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let eigenvalues = (1..=p_modes).map(|p| (p * p) as f64 * pi2).collect();
    SpectralOperator::new(eigenvalues, BasisKind::DirichletSine)
}

/// Coefficient vector of a state in the operator's eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    coeffs: DVector<f64>,
}

impl SpectralState {
    pub fn new(coeffs: DVector<f64>) -> Self {
        SpectralState { coeffs }
    }

    pub fn from_vec(coeffs: Vec<f64>) -> Self {
        SpectralState {
            coeffs: DVector::from_vec(coeffs),
        }
    }

    pub fn zero(p_modes: usize) -> Self {
        SpectralState {
            coeffs: DVector::zeros(p_modes),
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// L2 norm of the represented function (Parseval).
    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }
}

/// Project a sampled function on a uniform inclusive grid over [0, 1] onto
/// the operator's eigenbasis by trapezoid quadrature.
///
/// Refuses sample grids with fewer than `4 P` points (aliasing guard: the
/// highest mode oscillates P times and needs several samples per period).
pub fn project(samples: &[f64], op: &SpectralOperator) -> Result<SpectralState> {
    let n = samples.len();
    let p_modes = op.modes();
    if n < 4 * p_modes {
        return Err(Error::InvalidArgument(format!(
            "sample grid too coarse: {n} points for {p_modes} modes (need at least {})",
            4 * p_modes
        )));
    }
    if op.basis() != BasisKind::DirichletSine {
        return Err(Error::InvalidArgument(
            "projection requires the Dirichlet sine basis".into(),
        ));
    }
    let dz = 1.0 / (n - 1) as f64;
    let mut coeffs = DVector::zeros(p_modes);
    for p in 1..=p_modes {
        let mut acc = 0.0;
        for (i, &f) in samples.iter().enumerate() {
            let weight = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            acc += weight * f * op.eigenfunction(p, i as f64 * dz)?;
        }
        coeffs[p - 1] = acc * dz;
    }
    Ok(SpectralState::new(coeffs))
}

/// Apply the fractional power `A^mu` spectrally: multiply each coefficient
/// by `lambda_p^mu`. Negative `mu` applies the inverse power.
pub fn fractional_power_apply(
    op: &SpectralOperator,
    mu: f64,
    state: &SpectralState,
) -> Result<SpectralState> {
    if state.len() != op.modes() {
        return Err(Error::InvalidArgument(format!(
            "state dimension {} does not match operator modes {}",
            state.len(),
            op.modes()
        )));
    }
    let coeffs = DVector::from_iterator(
        op.modes(),
        state
            .coeffs()
            .iter()
            .zip(op.eigenvalues().iter())
            .map(|(&c, &l)| l.powf(mu) * c),
    );
    Ok(SpectralState::new(coeffs))
}

/// Uniform time grid on [0, T] with M steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    t_final: f64,
    steps: usize,
}

impl GridSpec {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 time steps, got {steps}"
            )));
        }
        Ok(GridSpec { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Number of steps M; the grid has M + 1 nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// Node `t_j = j T / M` for j = 0..=M.
    pub fn node(&self, j: usize) -> f64 {
        self.t_final * j as f64 / self.steps as f64
    }

    /// Midpoint of subinterval j (0-based), `(j + 1/2) dt`.
    pub fn midpoint(&self, j: usize) -> f64 {
        self.t_final * (j as f64 + 0.5) / self.steps as f64
    }

    /// Same horizon with twice the steps.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            t_final: self.t_final,
            steps: self.steps * 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn dirichlet_eigenvalues() {
        let op = make_dirichlet_laplacian(1).unwrap();
        assert!((op.eigenvalue(1) - PI * PI).abs() < 1e-12);
        assert!((op.eigenvalue(1) - 9.8696044).abs() < 1e-6);

        let op = make_dirichlet_laplacian(3).unwrap();
        for p in 1..=3 {
            assert!((op.eigenvalue(p) - (p * p) as f64 * PI * PI).abs() < 1e-10);
        }

        assert!(make_dirichlet_laplacian(0).is_err());
    }

    #[test]
    fn rejects_bad_eigenvalue_sequences() {
        assert!(SpectralOperator::new(vec![], BasisKind::Generic).is_err());
        assert!(SpectralOperator::new(vec![1.0, 1.0], BasisKind::Generic).is_err());
        assert!(SpectralOperator::new(vec![-1.0, 2.0], BasisKind::Generic).is_err());
        assert!(SpectralOperator::new(vec![2.0, 1.0], BasisKind::Generic).is_err());
    }

    fn sampled<F: Fn(f64) -> f64>(f: F, n: usize) -> Vec<f64> {
        (0..n).map(|i| f(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn projection_of_first_eigenfunction() {
        let op = make_dirichlet_laplacian(4).unwrap();
        let s = project(&sampled(|z| 2.0f64.sqrt() * (PI * z).sin(), 2001), &op).unwrap();
        assert!((s.coeffs()[0] - 1.0).abs() < 1e-7);
        for p in 1..4 {
            assert!(s.coeffs()[p].abs() < 1e-9);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.7071 is a four-digit anchor, not a constant
    fn projection_of_plain_sine() {
        // f = sin(pi z): coefficient 1/sqrt(2) on mode 1 only
        let op = make_dirichlet_laplacian(3).unwrap();
        let s = project(&sampled(|z| (PI * z).sin(), 4001), &op).unwrap();
        assert!((s.coeffs()[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-8);
        assert!((s.coeffs()[0] - 0.7071).abs() < 1e-4);
        assert!(s.coeffs()[1].abs() < 1e-9);
    }

    #[test]
    fn projection_of_zero_function() {
        let op = make_dirichlet_laplacian(2).unwrap();
        let s = project(&vec![0.0; 64], &op).unwrap();
        assert!(s.norm() == 0.0);
    }

    #[test]
    fn projection_refuses_coarse_grids() {
        let op = make_dirichlet_laplacian(8).unwrap();
        assert!(project(&vec![0.0; 31], &op).is_err());
        assert!(project(&vec![0.0; 32], &op).is_ok());
    }

    #[test]
    fn parseval_inequality() {
        // projected energy never exceeds the function's L2 norm (plus
        // quadrature slack), and approaches it for band-limited data
        let op = make_dirichlet_laplacian(3).unwrap();
        let f = |z: f64| {
            1.3 * 2.0f64.sqrt() * (PI * z).sin() - 0.4 * 2.0f64.sqrt() * (3.0 * PI * z).sin()
        };
        let n = 4001;
        let samples = sampled(f, n);
        let s = project(&samples, &op).unwrap();
        let dz = 1.0 / (n - 1) as f64;
        let l2sq: f64 = samples
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * v * v * dz
            })
            .sum();
        let proj = s.norm().powi(2);
        assert!(proj <= l2sq + 1e-8);
        assert!((proj - (1.3f64.powi(2) + 0.4f64.powi(2))).abs() < 1e-6);
        assert!((proj - l2sq).abs() < 1e-6);
    }

    #[test]
    fn fractional_power_identity_and_inverse() {
        let op = make_dirichlet_laplacian(5).unwrap();
        let x = SpectralState::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0]);
        let same = fractional_power_apply(&op, 0.0, &x).unwrap();
        assert_eq!(same.coeffs(), x.coeffs());

        let up = fractional_power_apply(&op, 1.0, &x).unwrap();
        let back = fractional_power_apply(&op, -1.0, &up).unwrap();
        for i in 0..5 {
            assert!((back.coeffs()[i] - x.coeffs()[i]).abs() < 1e-12 * (1.0 + x.coeffs()[i].abs()));
        }
    }

    #[test]
    fn inverse_square_root_scales_first_mode_by_inv_pi() {
        let op = make_dirichlet_laplacian(2).unwrap();
        let e1 = SpectralState::from_vec(vec![1.0, 0.0]);
        let y = fractional_power_apply(&op, -0.5, &e1).unwrap();
        // lambda_1^{-1/2} = 1/pi (the 1/p rule without pi holds only up to
        // the pi factor; the eigenvalue definition wins)
        assert!((y.coeffs()[0] - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn power_composition() {
        let op = make_dirichlet_laplacian(4).unwrap();
        let x = SpectralState::from_vec(vec![0.3, 1.0, -0.2, 2.0]);
        let a = fractional_power_apply(&op, 0.7, &x).unwrap();
        let b = fractional_power_apply(&op, -0.2, &a).unwrap();
        let direct = fractional_power_apply(&op, 0.5, &x).unwrap();
        for i in 0..4 {
            assert!((b.coeffs()[i] - direct.coeffs()[i]).abs() < 1e-10 * (1.0 + direct.coeffs()[i].abs()));
        }
    }

    #[test]
    fn negative_power_norm_is_first_eigenvalue_rule() {
        let op = make_dirichlet_laplacian(6).unwrap();
        assert!((op.negative_power_norm(0.5) - 1.0 / PI).abs() < 1e-14);
        assert!((op.negative_power_norm(1.0) - 1.0 / (PI * PI)).abs() < 1e-14);
    }

    #[test]
    fn grid_nodes() {
        let g = GridSpec::new(2.0, 4).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(4), 2.0);
        assert!((g.midpoint(0) - 0.25).abs() < 1e-15);
        assert!(GridSpec::new(0.0, 4).is_err());
        assert!(GridSpec::new(1.0, 1).is_err());
    }
}
