"""genfinder: does a snapshot of dynamics admit a time-independent generator?

Quantum snapshots are transfer matrices of channels (row-major vectorization,
row = output pair); classical snapshots are column-stochastic matrices.
"""
__version__ = "0.1.0"

from .errors import (BalancingFailed, DegenerateSpectrum, DimensionMismatch, GenfinderError,
                     InconsistentSeries, InvalidClause, InvalidSnapshot, LogUndefined,
                     NonDiagonalizable, NotHermitian, NotLindblad, NotSquareOfSquare, Overflow,
                     ParseError, TooLarge)
from .matkernel import (EigenSystem, eig_decompose, flip_op, gamma_reshuffle, mat_exp,
                        mat_log_principal, psd_check)
from .channel import (SnapshotSeries, StochasticMatrix, TransferMatrix, apply_map,
                      lift_stochastic, validate_cpt, validate_stochastic)
from .branch import (BranchFamily, GeneratorReport, LindbladConditions, LindbladDecomposition,
                     Verdict, build_branch_family, check_conditions, decide_markovian,
                     decompose_lindblad, fit_generator_series, lindblad_generator,
                     sample_lindblad)
from .embed import ClassicalGeneratorConditions, check_classical_generator, decide_embeddable
from .reduction import (ReductionBundle, SatInstance, build_reduction, default_tolerance,
                        extract_encoding_inequalities, parse_sat, sat_brute_force,
                        verify_classical_reduction, verify_reduction)
