"""Bayesian meta-analysis of differential expression across studies.

Per-study Z-statistics are modelled with a null component and two Dirichlet
process mixtures (up and down); the posterior DE indicators drive gene
declaration in three decision spaces and the clustering of genes into
meta-pattern modules.
"""
from __future__ import annotations

from . import api
from .const import VERSION
from .exceptions import (
    MetaPatConfigError,
    MetaPatDomainError,
    MetaPatError,
    MetaPatFormatError,
    MetaPatInputError,
    MetaPatSamplerError,
    MetaPatUnsupportedError,
)

__version__ = VERSION

__all__ = [
    "api",
    "MetaPatConfigError",
    "MetaPatDomainError",
    "MetaPatError",
    "MetaPatFormatError",
    "MetaPatInputError",
    "MetaPatSamplerError",
    "MetaPatUnsupportedError",
    "__version__",
]
