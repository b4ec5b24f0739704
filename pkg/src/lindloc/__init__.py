"""Local Lindblad dynamics on spin lattices and numerical checks of their localization bounds."""

from .errors import LindlocError
from .lattice import Lattice, ReproducingFunction, build_lattice, c_mu, f_norm, generator_mu_norm
from .lindblad import Generator, GraphSpec, LindbladTerm, build_generator, build_graph_lindblad
from .operators import OperatorSum, PauliString, SuperOp, cb_norm, l1_coefficient_norm, op_norm, pauli_mul

__version__ = "0.1.0"

__all__ = [
    "Generator", "GraphSpec", "Lattice", "LindbladTerm", "LindlocError", "OperatorSum", "PauliString",
    "ReproducingFunction", "SuperOp", "build_generator", "build_graph_lindblad", "build_lattice", "c_mu",
    "cb_norm", "f_norm", "generator_mu_norm", "l1_coefficient_norm", "op_norm", "pauli_mul",
]
