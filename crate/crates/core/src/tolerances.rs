//! Default tolerances, in one place. Overridable through the CLI config.

pub const ACOSH_CLAMP: f64 = 1e-14;
pub const QUAD_AREA: f64 = 1e-10;
pub const IDENTITY: f64 = 1e-12;
pub const OVERLAP_MISMATCH: f64 = 1e-3;
pub const FRAME_GRAM: f64 = 1e-8;
pub const KERNEL_GAP_FACTOR: f64 = 100.0;
pub const KERNEL_RECONSTRUCT: f64 = 1e-6;
pub const SELF_ADJOINT: f64 = 1e-8;
pub const SPLIT_CONSISTENCY: f64 = 1e-6;
pub const EIG_RESIDUAL: f64 = 1e-7;
pub const FREDHOLM_RESIDUAL: f64 = 1e-8;
pub const CONSTRAINT: f64 = 1e-10;
pub const DEDUP_DIST: f64 = 1e-6;
pub const OBSTRUCTION_SIGN: f64 = 1e-10;
pub const HESSIAN_SIGN: f64 = 1e-6;
pub const NEWTON_RESIDUAL: f64 = 1e-11;
pub const FULL_RESIDUAL: f64 = 1e-8;
pub const NATURAL_CONSTRAINT: f64 = 1e-8;
pub const CONFORMALITY: f64 = 1e-6;
pub const BRANCH_POINT: f64 = 1e-8;
pub const SIDE1: f64 = 1e-7;
pub const INVARIANCE: f64 = 1e-7;

/// Named table, used for config echo and overrides.
pub fn table() -> Vec<(&'static str, f64)> {
    vec![
        ("acosh_clamp", ACOSH_CLAMP),
        ("quad_area", QUAD_AREA),
        ("identity", IDENTITY),
        ("overlap_mismatch", OVERLAP_MISMATCH),
        ("frame_gram", FRAME_GRAM),
        ("kernel_gap_factor", KERNEL_GAP_FACTOR),
        ("kernel_reconstruct", KERNEL_RECONSTRUCT),
        ("self_adjoint", SELF_ADJOINT),
        ("split_consistency", SPLIT_CONSISTENCY),
        ("eig_residual", EIG_RESIDUAL),
        ("fredholm_residual", FREDHOLM_RESIDUAL),
        ("constraint", CONSTRAINT),
        ("dedup_dist", DEDUP_DIST),
        ("obstruction_sign", OBSTRUCTION_SIGN),
        ("hessian_sign", HESSIAN_SIGN),
        ("newton_residual", NEWTON_RESIDUAL),
        ("full_residual", FULL_RESIDUAL),
        ("natural_constraint", NATURAL_CONSTRAINT),
        ("conformality", CONFORMALITY),
        ("branch_point", BRANCH_POINT),
        ("side1", SIDE1),
        ("invariance", INVARIANCE),
    ]
}
