"""Exceptions raised by the metapat package."""
from __future__ import annotations


class MetaPatError(Exception):
    """Base class for all metapat errors."""


class MetaPatInputError(MetaPatError):
    """A cell of an input matrix could not be used."""

    def __init__(self, message: str, gene: str | None = None, study: str | None = None):
        """Initialize the error with an optional matrix location."""
        if gene is not None or study is not None:
            message = f"{message} (gene={gene!r}, study={study!r})"
        super().__init__(message)
        self.gene = gene
        self.study = study


class MetaPatFormatError(MetaPatError):
    """An input file is not laid out as expected."""


class MetaPatDomainError(MetaPatError):
    """An argument lies outside the domain of an operation."""


class MetaPatConfigError(MetaPatError):
    """A configuration value failed validation."""


class MetaPatSamplerError(MetaPatError):
    """The sampler reached an inconsistent internal state."""


class MetaPatUnsupportedError(MetaPatError):
    """The requested problem size is not supported."""
