"""Input parsing, p-value to Z transforms and on-disk formats."""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .const import DOMAIN, P_EPSILON, VERSION
from .exceptions import MetaPatDomainError, MetaPatFormatError, MetaPatInputError

_LOGGER = logging.getLogger(__name__)

KIND_PVALUE = "pvalue"
KIND_ZSTAT = "zstat"

FLOAT_FORMAT = "%.10g"


@dataclass(frozen=True)
class LabeledMatrix:
    """G x S matrix with gene and study labels."""

    values: np.ndarray
    gene_ids: tuple[str, ...]
    study_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        """Check that the labels match the matrix shape."""
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise MetaPatDomainError("Matrix must be two-dimensional and non-empty")
        if values.shape != (len(self.gene_ids), len(self.study_ids)):
            raise MetaPatFormatError(
                f"Matrix shape {values.shape} does not match "
                f"{len(self.gene_ids)} genes x {len(self.study_ids)} studies"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gene_ids", tuple(str(g) for g in self.gene_ids))
        object.__setattr__(self, "study_ids", tuple(str(s) for s in self.study_ids))

    @property
    def n_genes(self) -> int:
        """Return the number of genes G."""
        return self.values.shape[0]

    @property
    def n_studies(self) -> int:
        """Return the number of studies S."""
        return self.values.shape[1]

    def subset(self, gene_ids: Sequence[str]) -> LabeledMatrix:
        """Return the rows of the given genes, in the given order."""
        index = {g: i for i, g in enumerate(self.gene_ids)}
        try:
            rows = [index[g] for g in gene_ids]
        except KeyError as exc:
            raise MetaPatInputError("Unknown gene", gene=exc.args[0]) from exc
        return type(self)(self.values[rows], tuple(gene_ids), self.study_ids)


@dataclass(frozen=True)
class PValueMatrix(LabeledMatrix):
    """One-sided p-values in (0, 1)."""

    def __post_init__(self) -> None:
        """Validate the p-value range."""
        super().__post_init__()
        _check_cells(self, lambda v: (v > 0.0) & (v < 1.0), "p-value outside (0, 1)")


@dataclass(frozen=True)
class ZMatrix(LabeledMatrix):
    """Z-statistics, all finite."""

    def __post_init__(self) -> None:
        """Validate that all Z-statistics are finite."""
        super().__post_init__()
        _check_cells(self, np.isfinite, "Non-finite Z-statistic")


def _check_cells(matrix: LabeledMatrix, predicate, message: str) -> None:
    bad = np.argwhere(~predicate(matrix.values))
    if len(bad):
        g, s = bad[0]
        raise MetaPatInputError(message, matrix.gene_ids[g], matrix.study_ids[s])


def clamp_pvalues(values: np.ndarray, eps: float = P_EPSILON) -> np.ndarray:
    """Clamp p-values to [eps, 1 - eps], warning when anything moved."""
    values = np.asarray(values, dtype=float)
    clamped = np.clip(values, eps, 1.0 - eps)
    n_moved = int(np.count_nonzero(clamped != values))
    if n_moved:
        _LOGGER.warning("Clamped %d p-values to [%g, 1 - %g]", n_moved, eps, eps)
    return clamped


def _read_frame(path: Path) -> tuple[list[str], pd.DataFrame]:
    """Read a labeled TSV into its header fields and a string body frame."""
    try:
        with path.open(encoding="utf-8") as handle:
            lines = [line for line in handle if line.strip() and not line.startswith("#")]
    except OSError as exc:
        raise MetaPatFormatError(f"Cannot read {path}: {exc}") from exc
    if len(lines) < 2:
        raise MetaPatDomainError(f"Empty matrix in {path}")

    header = lines[0].rstrip("\r\n").split("\t")
    width = len(lines[1].rstrip("\r\n").split("\t"))
    for line in lines[2:]:
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != width:
            raise MetaPatFormatError(
                f"Ragged row for gene {fields[0]!r} in {path}: "
                f"expected {width} fields, got {len(fields)}"
            )

    try:
        frame = pd.read_csv(
            io.StringIO("".join(lines[1:])),
            sep="\t",
            header=None,
            names=list(range(width)),
            dtype=str,
            keep_default_na=False,
        )
    except pd.errors.ParserError as exc:
        raise MetaPatFormatError(f"Ragged rows in {path}: {exc}") from exc

    if len(header) == width:
        header = header[1:]
    elif len(header) != width - 1:
        raise MetaPatFormatError(
            f"Header of {path} has {len(header)} fields, body has {width}"
        )
    if not header:
        raise MetaPatDomainError(f"No study columns in {path}")

    return header, frame


def parse_matrix(path: str | Path, kind: str = KIND_PVALUE) -> PValueMatrix | ZMatrix:
    """Parse a gene x study TSV of p-values or Z-statistics.

    The header row holds the study IDs (optionally preceded by a label for the
    gene column), the first column holds gene IDs. Lines starting with '#' are
    provenance comments and are skipped.
    """
    if kind not in (KIND_PVALUE, KIND_ZSTAT):
        raise MetaPatDomainError(f"Unknown matrix kind {kind!r}")

    path = Path(path)
    study_ids, frame = _read_frame(path)
    gene_ids = frame.iloc[:, 0].tolist()
    body = frame.iloc[:, 1:]

    values = body.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.argwhere(np.isnan(values))
    if len(bad):
        g, s = bad[0]
        raise MetaPatInputError(
            f"Non-numeric cell {body.iat[g, s]!r} in {path}", gene_ids[g], study_ids[s]
        )

    if kind == KIND_ZSTAT:
        return ZMatrix(values, tuple(gene_ids), tuple(study_ids))

    outside = np.argwhere((values < 0.0) | (values > 1.0))
    if len(outside):
        g, s = outside[0]
        raise MetaPatInputError(
            f"p-value {values[g, s]} outside [0, 1] in {path}",
            gene_ids[g],
            study_ids[s],
        )
    return PValueMatrix(clamp_pvalues(values), tuple(gene_ids), tuple(study_ids))


def p_to_z(p: PValueMatrix) -> ZMatrix:
    """Map one-sided p-values to Z-statistics through the normal quantile.

    Small p (down-regulation evidence) maps to large negative Z.
    """
    return ZMatrix(ndtri(p.values), p.gene_ids, p.study_ids)


def two_sided_to_one_sided(
    p2: np.ndarray,
    sign: np.ndarray,
    gene_ids: Sequence[str] | None = None,
    study_ids: Sequence[str] | None = None,
) -> PValueMatrix:
    """Fold two-sided p-values into one-sided ones using the effect direction."""
    p2 = np.asarray(p2, dtype=float)
    sign = np.asarray(sign)
    if p2.shape != sign.shape:
        raise MetaPatDomainError(
            f"p-value shape {p2.shape} does not match sign shape {sign.shape}"
        )
    if not np.isin(sign, (-1, 1)).all():
        bad = np.argwhere(~np.isin(sign, (-1, 1)))[0]
        raise MetaPatDomainError(
            f"Sign entry {sign[tuple(bad)]} at {tuple(bad)} not in {{-1, +1}}"
        )
    if not ((p2 > 0.0) & (p2 <= 1.0)).all():
        bad = np.argwhere(~((p2 > 0.0) & (p2 <= 1.0)))[0]
        raise MetaPatDomainError(
            f"Two-sided p-value {p2[tuple(bad)]} at {tuple(bad)} outside (0, 1]"
        )

    p1 = np.where(sign > 0, 1.0 - p2 / 2.0, p2 / 2.0)
    if gene_ids is None:
        gene_ids = [f"g{i + 1}" for i in range(p2.shape[0])]
    if study_ids is None:
        study_ids = [f"s{j + 1}" for j in range(p2.shape[1])]
    return PValueMatrix(clamp_pvalues(p1), tuple(gene_ids), tuple(study_ids))


def one_sided_to_two_sided(p1: np.ndarray) -> np.ndarray:
    """Rebuild two-sided p-values from one-sided ones."""
    p1 = np.asarray(p1, dtype=float)
    return np.minimum(2.0 * np.minimum(p1, 1.0 - p1), 1.0)


def config_hash(config: Mapping[str, Any]) -> str:
    """Return a short stable hash of a configuration mapping."""
    payload = json.dumps(dict(config), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def provenance(seed: int | None, config: Mapping[str, Any]) -> str:
    """Return the comment line written at the top of every output file."""
    return f"# {DOMAIN} {VERSION} seed={seed} config={config_hash(config)}"


def write_table(
    path: str | Path,
    frame: pd.DataFrame,
    header: str | None = None,
    float_format: str = FLOAT_FORMAT,
) -> None:
    """Write a frame as UTF-8, LF-terminated TSV behind an optional comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        if header is not None:
            handle.write(header.rstrip("\n") + "\n")
        frame.to_csv(
            handle, sep="\t", index=False, float_format=float_format, lineterminator="\n"
        )


def write_matrix(
    path: str | Path,
    values: np.ndarray,
    gene_ids: Sequence[str],
    study_ids: Sequence[str],
    header: str | None = None,
    float_format: str = FLOAT_FORMAT,
) -> None:
    """Write a gene x study matrix in the input TSV layout."""
    frame = pd.DataFrame(np.asarray(values), columns=list(study_ids))
    frame.insert(0, "gene_id", list(gene_ids))
    write_table(path, frame, header, float_format)


def read_table(path: str | Path) -> pd.DataFrame:
    """Read a TSV written by ``write_table``."""
    try:
        return pd.read_csv(path, sep="\t", comment="#", keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise MetaPatFormatError(f"Cannot read {path}: {exc}") from exc


def write_json(path: str | Path, payload: Mapping[str, Any]) -> None:
    """Write a JSON document with sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)
