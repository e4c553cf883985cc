"""Accelerated probabilistic power flow for distribution networks.

Modules
-------
netmodel   Y-bus assembly, substation reduction, file formats
sparla     sparse LDL^T factorization and triangular solves
pfcore     injections, Jacobians and the Hessian operator
npfs       Newton power flow with Neumann-series inner solves
rom        quadratic reduced-order model and basis expansion
appf       accelerated and traditional PPF drivers
sampling   load-profile sampling
uq         statistics of solution sets
"""
__version__ = "0.1.0"

from .netmodel import BusId, LineRecord, LoadProfile, NetworkModel, build_ybus, load_network, \
    reduce_network, save_network
from .npfs import NpfsConfig, npfs_solve
from .pfcore import VoltageState
from .rom import ReducedModel, RomConfig
from .sampling import SamplingSpec, generate_samples
from .appf import PpfConfig, PpfResult, RunRecord, appf_run, compare, traditional_ppf_run

__all__ = [
    "BusId", "LineRecord", "LoadProfile", "NetworkModel", "build_ybus", "load_network",
    "reduce_network", "save_network", "NpfsConfig", "npfs_solve", "VoltageState", "ReducedModel",
    "RomConfig", "SamplingSpec", "generate_samples", "PpfConfig", "PpfResult", "RunRecord",
    "appf_run", "compare", "traditional_ppf_run",
]
