"""Scalable Byzantine agreement protocol stack, simulated.

Iterated secret sharing, sampler-built tournament trees, lightest-bin
elections, coin-driven agreement and everywhere amplification, all inside
a deterministic synchronous-network simulator with adversary plug-ins and
bit accounting.
"""

from .params import ProtocolParams, derive_paper_params, desk_params
from .sampler import Sampler, build_random_sampler, verify_exhaustive
from .sharing import Share, SharingSpec, reconstruct, reshare, share
from .topology import TreeTopology, build_topology

__all__ = [
    "ProtocolParams", "desk_params", "derive_paper_params",
    "Sampler", "build_random_sampler", "verify_exhaustive",
    "Share", "SharingSpec", "share", "reshare", "reconstruct",
    "TreeTopology", "build_topology",
]
