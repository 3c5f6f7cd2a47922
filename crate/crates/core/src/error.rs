use thiserror::Error;

/// Errors shared by the solver, extraction and fitting modules.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("quadrature did not converge: requested {requested:e}, achieved {achieved:e} over [{a}, {b}]")]
    QuadratureNoConvergence {
        a: f64,
        b: f64,
        requested: f64,
        achieved: f64,
    },

    #[error("no anchor radius up to 2^16 satisfies the smallness condition (pathological profile)")]
    NoAnchorRadius,

    #[error("degenerate expansion parameters: |2 - zeta*k - n*(j-k)| = {gap:e} below resonance tolerance at (j={j}, k={k}) without exact resonance")]
    DegenerateResonance { j: u32, k: u32, gap: f64 },

    #[error("operation outside its domain: {0}")]
    Domain(String),

    #[error("evaluator returned a non-finite value at radius {r}")]
    EvaluatorFailure { r: f64 },

    #[error("source envelope violated at r = {r}: |g| sphere norm {norm:e} exceeds bound {bound:e}")]
    EnvelopeViolation { r: f64, norm: f64, bound: f64 },

    #[error("decay exponent k1 must be positive, got {0}")]
    NonPositiveDecay(f64),

    #[error("samples span {octaves:.2} octaves, need at least {needed}")]
    InsufficientSpan { octaves: f64, needed: u32 },

    #[error("all samples vanished after filtering; nothing to fit")]
    EmptyFit,

    #[error("sample radius {r} outside the interpolation hull [{lo}, {hi}]")]
    OutsideHull { r: f64, lo: f64, hi: f64 },

    #[error("input points are affinely dependent; enclosing ellipsoid is degenerate")]
    DegeneratePoints,

    #[error("ellipsoid shape matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("level-set shapes did not stabilize: relative drift {drift:e} exceeds {tol:e}")]
    CauchyDrift { drift: f64, tol: f64 },

    #[error("no linear term resolvable: {reason} (cross-radius drift {drift:e})")]
    LinearTermUnresolvable { reason: String, drift: f64 },

    #[error("ray {ray} exits the evaluator domain (radius {domain_radius}) before crossing level {level}")]
    RayEscaped {
        ray: usize,
        level: f64,
        domain_radius: f64,
    },

    #[error("unsupported dimension {0}; only 2 and 3 are implemented")]
    UnsupportedDimension(u32),

    #[error("unknown catalog entry '{0}'")]
    UnknownCatalogEntry(String),

    #[error("convexity check failed: midpoint defect {defect:e} at sampled triple")]
    NotConvex { defect: f64 },

    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
