"""Private information retrieval from product-matrix regenerating-code storage."""

from .galois import Field, make_prime_field, vandermonde
from .pm_codes import (
    Family,
    MbrParams,
    MsrParams,
    encode,
    encode_files,
    reconstruct_data,
    repair_node,
    validate_params,
)
from .pir_mbr import rate_mbr
from .pir_msr import msr_plan, rate_msr
from .storage_sim import Cluster, cluster_load, run_repair, run_retrieval

__all__ = [
    "Cluster",
    "Family",
    "Field",
    "MbrParams",
    "MsrParams",
    "cluster_load",
    "encode",
    "encode_files",
    "make_prime_field",
    "msr_plan",
    "rate_mbr",
    "rate_msr",
    "reconstruct_data",
    "repair_node",
    "run_repair",
    "run_retrieval",
    "validate_params",
    "vandermonde",
]
__version__ = "0.1.0"
