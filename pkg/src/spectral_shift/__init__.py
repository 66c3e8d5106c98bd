"""Eigenvalue stability of atlas domains under boundary perturbation.

Modules
-------
geometry
    Atlases, boundary profiles, membership, boundary clouds and epsilon sets.
metrics
    Atlas distance and Hausdorff-Pompeiu deviations.
perturbation
    Partition of unity, the inward map ``T_eps``, rho-patches and diffeomorphisms.
discretize
    Lattice rasterization, form assembly, generalized eigensolver, closed-form oracles.
experiments
    Perturbation sweeps, stability fits, monotonicity checks and fixtures.
domains
    Ready-made domains and families.
cli
    Command line interface.
"""
from .discretize import (
    EllipticityError,
    GridDomain,
    NumericalError,
    OperatorSpec,
    ResolutionError,
    Spectrum,
    assemble,
    rasterize,
    rayleigh_quotient,
    solve_lowest,
    spectrum,
)
from .geometry import (
    Atlas,
    AtlasDomain,
    BoundaryCloud,
    BoundaryProfile,
    Cuboid,
    GeometryError,
    ModulusSpec,
    Rotation,
    boundary_cloud,
    classify,
    directional_distance,
    eps_interior,
    eps_neighborhood,
    membership,
    modulus_check,
    validate_domain,
)
from .metrics import atlas_distance, chain_check, hp_distance, hp_lower_deviation, modulus_bound_check
from .perturbation import (
    Diffeomorphism,
    PartitionOfUnity,
    TransformTEps,
    build_partition,
    diffeo_transport,
    inclusion_check,
    patches_for_difference,
    t_eps_apply,
    t_eps_certify,
    vicinity_L,
)

__version__ = "0.1.0"

__all__ = [
    "Atlas", "AtlasDomain", "BoundaryCloud", "BoundaryProfile", "Cuboid", "Diffeomorphism",
    "EllipticityError", "GeometryError", "GridDomain", "ModulusSpec", "NumericalError", "OperatorSpec",
    "PartitionOfUnity", "ResolutionError", "Rotation", "Spectrum", "TransformTEps", "assemble",
    "atlas_distance", "boundary_cloud", "build_partition", "chain_check", "classify", "diffeo_transport",
    "directional_distance", "eps_interior", "eps_neighborhood", "hp_distance", "hp_lower_deviation",
    "inclusion_check", "membership", "modulus_bound_check", "modulus_check", "patches_for_difference",
    "rasterize", "rayleigh_quotient", "solve_lowest", "spectrum", "t_eps_apply", "t_eps_certify",
    "validate_domain", "vicinity_L",
]
