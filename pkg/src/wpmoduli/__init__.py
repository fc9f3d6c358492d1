"""Weil-Petersson metrics on the quintic family by Monte Carlo and by balanced embeddings."""
from .balanced import BalancedResult, CloudSections, balanced_metric, bergman_density, orthonormal_frame, tmap
from .deformation import (
    DeformationData,
    ModuliTangent,
    dnu_components,
    hessian_fit,
    log_volume,
    theta,
    wp_direct,
)
from .errors import (
    AllGradientsTiny,
    CorruptCheckpoint,
    DegenerateLine,
    DenominatorUnderflow,
    DivisionNearZero,
    EmptyCloud,
    EpsilonOutOfRange,
    FactorizationFailed,
    GradientNormTiny,
    MaxIterExceeded,
    NonHermitianResult,
    NonPositiveDrift,
    NonPositiveH,
    NonPositiveInput,
    RootPolishFailed,
    SingularDesign,
    SingularPullback,
    VersionMismatch,
    WPModuliError,
)
from .hermitian import HermitianForm
from .projective import (
    Chart,
    HomogeneousPolynomial,
    SectionBasis,
    SurfacePoint,
    choose_chart,
    deformation_poly,
    eval_and_grad,
    fs_pullback,
    nu_density,
    quintic_at,
    section_basis,
    weierstrass_cubic,
)
from .quantized import (
    LinearizedSolution,
    QuantizedResult,
    bergman_project,
    covariant_derivative,
    dsections,
    omega_k,
    solve_linearized,
)
from .sampler import (
    FSMetricSet,
    MCEstimate,
    PointCloud,
    extend_ips,
    ips_mass,
    line_variety_intersect,
    mass,
    mass_one_metric,
    mc_integrate,
    random_section,
    sample_cloud,
    sample_quintic,
)

__version__ = "0.1.0"

__all__ = [
    "AllGradientsTiny",
    "BalancedResult",
    "Chart",
    "CloudSections",
    "CorruptCheckpoint",
    "DeformationData",
    "DegenerateLine",
    "DenominatorUnderflow",
    "DivisionNearZero",
    "EmptyCloud",
    "EpsilonOutOfRange",
    "FSMetricSet",
    "FactorizationFailed",
    "GradientNormTiny",
    "HermitianForm",
    "HomogeneousPolynomial",
    "LinearizedSolution",
    "MCEstimate",
    "MaxIterExceeded",
    "ModuliTangent",
    "NonHermitianResult",
    "NonPositiveDrift",
    "NonPositiveH",
    "NonPositiveInput",
    "PointCloud",
    "QuantizedResult",
    "RootPolishFailed",
    "SectionBasis",
    "SingularDesign",
    "SingularPullback",
    "SurfacePoint",
    "VersionMismatch",
    "WPModuliError",
    "balanced_metric",
    "bergman_density",
    "bergman_project",
    "choose_chart",
    "covariant_derivative",
    "deformation_poly",
    "dnu_components",
    "dsections",
    "eval_and_grad",
    "extend_ips",
    "fs_pullback",
    "hessian_fit",
    "ips_mass",
    "line_variety_intersect",
    "log_volume",
    "mass",
    "mass_one_metric",
    "mc_integrate",
    "nu_density",
    "omega_k",
    "orthonormal_frame",
    "quintic_at",
    "random_section",
    "sample_cloud",
    "sample_quintic",
    "section_basis",
    "solve_linearized",
    "theta",
    "tmap",
    "weierstrass_cubic",
    "wp_direct",
]
