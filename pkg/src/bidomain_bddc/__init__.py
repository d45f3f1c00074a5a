"""Bidomain cardiac simulation with BDDC-preconditioned GMRES inside a Newton loop."""
from .assembly import Discretization, State, assemble_jacobian, assemble_residual, split_symmetric_skew
from .bddc import BddcPreconditioner, make_preconditioner
from .exceptions import AssemblyError, ConvergenceError, InvalidConfigError, SingularSystemError
from .geometry import Conductivities, EllipsoidParams, build_conductivity, build_ellipsoid, build_fibers, build_slab
from .harness import RunConfig, export_csv, export_vtk, load_config, preset, run_experiment
from .ionic import DEFAULT as DEFAULT_IONIC
from .ionic import IonicParams
from .partition import PrimalConfig, build_dof_partition, classify_interface, decompose
from .schur import SchurOperator
from .solvers import GmresConfig, LinearConfig, LinearStack, NewtonConfig, StimulusProtocol, gmres, run_time_loop
from .theory import compute_constants, envelope_diagnostic

__version__ = "0.1.0"
