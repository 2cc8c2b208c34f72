"""Root finding and persistence of Jordan centrality in random attachment trees."""
from .attach_model import (AttachmentFunction, DomainError, affine, canonical, constant,
                           custom_table, sublinear, uniform, validate)
from .centrality import JordanState, TopKTracker, psi_all, psi_bruteforce, top_k
from .malthusian import degree_pmf, rho_hat, solve_malthusian
from .streams import make_rng, replica_rng
from .treegen import GrowingTree, grow

__all__ = [
    "AttachmentFunction", "DomainError", "affine", "canonical", "constant", "custom_table",
    "sublinear", "uniform", "validate", "JordanState", "TopKTracker", "psi_all",
    "psi_bruteforce", "top_k", "degree_pmf", "rho_hat", "solve_malthusian", "make_rng",
    "replica_rng", "GrowingTree", "grow",
]
