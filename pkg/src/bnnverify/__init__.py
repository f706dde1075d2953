"""QUBO-based non-robustness certification for binary neural networks."""

from .encode import PerturbationSpec, build_verification_qubo, propagate_assignment
from .ir import (Constraint, ConstraintSystem, GateKind, IsingInstance,
                 QuadPoly, QuboInstance, VarRole, assemble_qubo, gate_penalty,
                 linear_eq_penalty, qubo_to_ising, read_qubo_coo, signb_penalty,
                 slack_encode_leq, write_ising_coo, write_qubo_coo)
from .model import (BnnModel, Dataset, InputGeometry, apply_mask, binarize_image,
                    bool_to_spin, dedup_dataset, forward, forward_batch,
                    load_idx_dataset, load_model, pad_input, padded_length,
                    save_model, sgn_spin, spin_to_bool)
from .solvers import (BruteForceCapError, FEMParams, SAParams, SolverResult,
                      brute_force, fem_solve, hyperparameter_search,
                      simulated_annealing)
from .verify import (VerificationReport, decode_solution, reverse_check,
                     select_perturbable_pixels, verify)

__version__ = "0.1.0"
