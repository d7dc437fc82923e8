//! The built-in heat scenario family and the scenario configuration format
//! consumed by every CLI subcommand.
//!
//! A scenario fixes the truncated heat problem on (0, 1): Dirichlet
//! Laplacian spectrum, mode-wise control injection `B = diag(lambda_1, ...,
//! lambda_N)` on the first N modes (so `|B| <= M_1 = N lambda_N`), a neutral
//! kernel `F(x, z)` projected onto the eigenbasis, and the initial/target
//! states as coefficient lists.
//!
//! Configuration files are TOML with four sections:
//!
//! ```text
//! id = "my_scenario"            # optional, defaults to the file stem
//! [problem]                     # nu, T, P, M, N, varsigma
//! [kernel]                      # kind = zero | separable | gaussian | matrix
//! [states]                      # x0, xd: coefficient lists or "zero"/"e<k>"
//! [constants]                   # optional overrides: m_t, m_1, h, h_1
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{NeutralMap, SteeringProblem};
use crate::spectral::{make_dirichlet_laplacian, GridSpec, SpectralState};

/// Neutral kernel `F(x, z)` specification.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// No neutral term.
    #[default]
    Zero,
    /// `F = amplitude sin(a pi x) sin(b pi z)`; projects to a single
    /// spectral entry `amplitude / 2` at `(a, b)`.
    Separable {
        amplitude: f64,
        #[serde(default = "default_mode")]
        x_mode: usize,
        #[serde(default = "default_mode")]
        z_mode: usize,
    },
    /// `F = amplitude 4x(1-x) 4z(1-z) exp(-(x-z)^2 / (2 width^2))`;
    /// the polynomial factors enforce the vanishing-boundary condition.
    Gaussian { amplitude: f64, width: f64 },
    /// Samples of `F` on a uniform inclusive lattice read from a
    /// whitespace-separated text file (rows = x grid, columns = z grid).
    Matrix { file: String },
}

fn default_mode() -> usize {
    1
}

/// Initial/target state: an explicit coefficient list (padded with zeros up
/// to P) or a named profile (`"zero"`, `"e3"` for the third eigenmode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Named(String),
    Coefficients(Vec<f64>),
}

impl StateSpec {
    pub fn resolve(&self, p_modes: usize) -> Result<Vec<f64>> {
        match self {
            StateSpec::Coefficients(c) => {
                if c.len() > p_modes {
                    return Err(Error::InvalidArgument(format!(
                        "state has {} coefficients but only {p_modes} modes",
                        c.len()
                    )));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "state coefficients must be finite".into(),
                    ));
                }
                let mut out = c.clone();
                out.resize(p_modes, 0.0);
                Ok(out)
            }
            StateSpec::Named(name) => {
                if name == "zero" {
                    return Ok(vec![0.0; p_modes]);
                }
                if let Some(k) = name.strip_prefix('e').and_then(|s| s.parse::<usize>().ok()) {
                    if k >= 1 && k <= p_modes {
                        let mut out = vec![0.0; p_modes];
                        out[k - 1] = 1.0;
                        return Ok(out);
                    }
                }
                Err(Error::InvalidArgument(format!(
                    "unknown state profile '{name}' (expected \"zero\" or \"e<k>\" with k <= {p_modes})"
                )))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSection {
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(rename = "T", default = "default_t")]
    pub t_final: f64,
    #[serde(rename = "P")]
    pub p_modes: usize,
    #[serde(rename = "M")]
    pub time_steps: usize,
    #[serde(rename = "N")]
    pub control_modes: usize,
    #[serde(default = "default_varsigma")]
    pub varsigma: f64,
}

fn default_nu() -> f64 {
    0.5
}
fn default_t() -> f64 {
    1.0
}
fn default_varsigma() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatesSection {
    pub x0: StateSpec,
    pub xd: StateSpec,
}

/// Optional overrides for constants that are otherwise computed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantsSection {
    /// Semigroup bound; the heat semigroup is a contraction, so 1.
    pub m_t: Option<f64>,
    /// Control-operator bound; defaults to `N lambda_N`.
    pub m_1: Option<f64>,
    /// Lipschitz constant of `A^varsigma h`; defaults to the computed norm.
    pub h: Option<f64>,
    /// Growth constant; defaults to the Lipschitz constant.
    pub h_1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub id: Option<String>,
    pub problem: ProblemSection,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub states: StatesSection,
    #[serde(default)]
    pub constants: Option<ConstantsSection>,
}

impl ScenarioConfig {
    pub fn id(&self) -> &str {
        self.id.as_deref().unwrap_or("unnamed")
    }
}

/// Parse a scenario from TOML text; `fallback_id` fills a missing id.
pub fn parse_scenario(text: &str, fallback_id: &str) -> Result<ScenarioConfig> {
    let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::ScenarioParse {
        path: fallback_id.to_string(),
        message: e.to_string(),
    })?;
    if cfg.id.is_none() {
        cfg.id = Some(fallback_id.to_string());
    }
    Ok(cfg)
}

/// Load a scenario file from disk.
pub fn load_scenario(path: &std::path::Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    parse_scenario(&text, stem)
}

/// Serialize a configuration back to TOML.
pub fn save_scenario(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::InvalidArgument(format!(
        "scenario serialization failed: {e}"
    )))
}

/// Sample the kernel on an inclusive uniform lattice fine enough for the
/// projection quadrature at P modes.
fn kernel_samples(spec: &KernelSpec, p_modes: usize) -> Result<DMatrix<f64>> {
    let n = 4 * p_modes + 1;
    let grid = |i: usize| i as f64 / (n - 1) as f64;
    match spec {
        KernelSpec::Zero => Ok(DMatrix::zeros(n, n)),
        KernelSpec::Separable {
            amplitude,
            x_mode,
            z_mode,
        } => {
            let pi = std::f64::consts::PI;
            Ok(DMatrix::from_fn(n, n, |i, j| {
                amplitude
                    * (*x_mode as f64 * pi * grid(i)).sin()
                    * (*z_mode as f64 * pi * grid(j)).sin()
            }))
        }
        KernelSpec::Gaussian { amplitude, width } => {
            if !(width.is_finite() && *width > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "gaussian kernel width must be positive, got {width}"
                )));
            }
            let bump = |t: f64| 4.0 * t * (1.0 - t);
            Ok(DMatrix::from_fn(n, n, |i, j| {
                let (x, z) = (grid(i), grid(j));
                amplitude * bump(x) * bump(z) * (-(x - z) * (x - z) / (2.0 * width * width)).exp()
            }))
        }
        KernelSpec::Matrix { file } => {
            let text = std::fs::read_to_string(file)?;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let row: std::result::Result<Vec<f64>, _> =
                    line.split_whitespace().map(str::parse::<f64>).collect();
                let row = row.map_err(|e| Error::ScenarioParse {
                    path: file.clone(),
                    message: format!("line {}: {e}", lineno + 1),
                })?;
                rows.push(row);
            }
            let nr = rows.len();
            if nr < n {
                return Err(Error::InvalidArgument(format!(
                    "kernel sample file has {nr} rows; need at least {n} for {p_modes} modes"
                )));
            }
            let nc = rows[0].len();
            if nc < n || rows.iter().any(|r| r.len() != nc) {
                return Err(Error::InvalidArgument(format!(
                    "kernel sample file must be rectangular with at least {n} columns"
                )));
            }
            Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
        }
    }
}

/// Project sampled kernel values onto the sine eigenbasis by 2-D trapezoid
/// quadrature: `F_pq = int int e_p(x) F(x, z) e_q(z) dx dz`.
fn project_kernel(samples: &DMatrix<f64>, p_modes: usize) -> DMatrix<f64> {
    let (nr, nc) = samples.shape();
    let dx = 1.0 / (nr - 1) as f64;
    let dz = 1.0 / (nc - 1) as f64;
    let pi = std::f64::consts::PI;
    let sqrt2 = std::f64::consts::SQRT_2;
    let wx: Vec<f64> = (0..nr)
        .map(|i| if i == 0 || i == nr - 1 { 0.5 * dx } else { dx })
        .collect();
    let wz: Vec<f64> = (0..nc)
        .map(|j| if j == 0 || j == nc - 1 { 0.5 * dz } else { dz })
        .collect();
    let mut out = DMatrix::zeros(p_modes, p_modes);
    // contract the z axis first
    let mut partial = DMatrix::zeros(nr, p_modes);
    for q in 0..p_modes {
        for i in 0..nr {
            let mut acc = 0.0;
            for j in 0..nc {
                let z = j as f64 * dz;
                acc += wz[j] * samples[(i, j)] * sqrt2 * ((q + 1) as f64 * pi * z).sin();
            }
            partial[(i, q)] = acc;
        }
    }
    for p in 0..p_modes {
        for q in 0..p_modes {
            let mut acc = 0.0;
            for i in 0..nr {
                let x = i as f64 * dx;
                acc += wx[i] * partial[(i, q)] * sqrt2 * ((p + 1) as f64 * pi * x).sin();
            }
            out[(p, q)] = acc;
        }
    }
    out
}

/// Validate every scenario invariant; returns one diagnostic per violation
/// (empty means valid). Numeric kernel conditions are checked on the
/// sampled lattice: (a) square-integrability / finiteness, (b) vanishing
/// values on the x boundaries.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Vec<String> {
    let mut diags = Vec::new();
    let pr = &cfg.problem;
    if !(pr.nu > 0.0 && pr.nu < 1.0) {
        diags.push(format!("nu must lie in (0, 1), got {}", pr.nu));
    }
    if !(pr.t_final > 0.0) {
        diags.push(format!("T must be positive, got {}", pr.t_final));
    }
    if pr.p_modes == 0 {
        diags.push("P must be at least 1".into());
    }
    if pr.time_steps < 2 {
        diags.push(format!("M must be at least 2, got {}", pr.time_steps));
    }
    if pr.control_modes == 0 || pr.control_modes > pr.p_modes {
        diags.push(format!(
            "N must lie in 1..=P: N = {}, P = {}",
            pr.control_modes, pr.p_modes
        ));
    }
    if !(pr.varsigma > 0.0 && pr.varsigma < 1.0) {
        diags.push(format!("varsigma must lie in (0, 1), got {}", pr.varsigma));
    }
    if pr.p_modes == 0 {
        return diags; // kernel/state checks need a mode count
    }
    match kernel_samples(&cfg.kernel, pr.p_modes) {
        Ok(samples) => {
            let max_abs = samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if samples.iter().any(|v| !v.is_finite()) {
                diags.push(
                    "kernel condition (a) violated: non-finite samples break square-integrability"
                        .into(),
                );
            } else {
                let scale = max_abs.max(1e-30);
                let nr = samples.nrows();
                let boundary = samples
                    .row(0)
                    .iter()
                    .chain(samples.row(nr - 1).iter())
                    .fold(0.0f64, |a, &v| a.max(v.abs()));
                if boundary > 1e-9 * scale {
                    diags.push(format!(
                        "kernel condition (b) violated: max |F| on the x boundaries is {boundary:.3e} (kernel scale {max_abs:.3e})"
                    ));
                }
            }
        }
        Err(e) => diags.push(format!("kernel samples unavailable: {e}")),
    }
    for (name, spec) in [("x0", &cfg.states.x0), ("xd", &cfg.states.xd)] {
        if let Err(e) = spec.resolve(pr.p_modes) {
            diags.push(format!("{name}: {e}"));
        }
    }
    if let Some(c) = &cfg.constants {
        for (name, v) in [("m_t", c.m_t), ("m_1", c.m_1), ("h", c.h), ("h_1", c.h_1)] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    diags.push(format!("constant {name} must be finite and nonnegative, got {v}"));
                }
            }
        }
    }
    diags
}

/// Build the heat steering problem of the application scenario: Dirichlet
/// Laplacian spectrum, `B = diag(lambda_1..lambda_N)` into the first N
/// modes with `M_1 = N lambda_N`, and the neutral kernel projected onto the
/// eigenbasis.
pub fn build_section5(cfg: &ScenarioConfig) -> Result<SteeringProblem> {
    let violations = validate_scenario(cfg);
    if !violations.is_empty() {
        return Err(Error::InvalidScenario { violations });
    }
    let pr = &cfg.problem;
    let p = pr.p_modes;
    let n = pr.control_modes;
    let op = make_dirichlet_laplacian(p)?;

    let mut b = DMatrix::zeros(p, n);
    for k in 0..n {
        b[(k, k)] = op.eigenvalue(k + 1);
    }
    let constants = cfg.constants.clone().unwrap_or_default();
    let m1 = constants.m_1.unwrap_or(n as f64 * op.eigenvalue(n));

    // exact projection for the separable kernel, quadrature otherwise
    let f_hat = match &cfg.kernel {
        KernelSpec::Zero => DMatrix::zeros(p, p),
        KernelSpec::Separable {
            amplitude,
            x_mode,
            z_mode,
        } => {
            let mut f = DMatrix::zeros(p, p);
            if *x_mode >= 1 && *x_mode <= p && *z_mode >= 1 && *z_mode <= p {
                f[(*x_mode - 1, *z_mode - 1)] = amplitude / 2.0;
            }
            f
        }
        other => project_kernel(&kernel_samples(other, p)?, p),
    };
    let h = if f_hat.iter().all(|&v| v == 0.0) {
        NeutralMap::zero(p, pr.varsigma)?
    } else {
        NeutralMap::new(f_hat, pr.varsigma, &op, constants.h, constants.h_1)?
    };

    let x0 = SpectralState::from_vec(cfg.states.x0.resolve(p)?);
    let xd = SpectralState::from_vec(cfg.states.xd.resolve(p)?);
    let grid = GridSpec::new(pr.t_final, pr.time_steps)?;
    SteeringProblem::new(pr.nu, op, b, Some(m1), h, x0, xd, grid)
}

/// Shipped reference scenarios, embedded so bare names work anywhere.
pub const BUILTIN_SCENARIOS: [&str; 3] =
    ["section5_linear", "section5_neutral", "section5_stress"];

/// TOML source of a built-in scenario.
pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    match name {
        "section5_linear" => Some(include_str!("../scenarios/section5_linear.toml")),
        "section5_neutral" => Some(include_str!("../scenarios/section5_neutral.toml")),
        "section5_stress" => Some(include_str!("../scenarios/section5_stress.toml")),
        _ => None,
    }
}

/// Resolve a scenario argument: an existing path wins, otherwise a
/// built-in name.
pub fn resolve_scenario(arg: &str) -> Result<ScenarioConfig> {
    let path = std::path::Path::new(arg);
    if path.exists() {
        return load_scenario(path);
    }
    if let Some(text) = builtin_scenario(arg) {
        return parse_scenario(text, arg);
    }
    Err(Error::InvalidArgument(format!(
        "scenario '{arg}' is neither a file nor a built-in ({})",
        BUILTIN_SCENARIOS.join(", ")
    )))
}
