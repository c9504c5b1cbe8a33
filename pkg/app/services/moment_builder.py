"""
Moment Builder Service

Evaluates the treatment and covariate bases and assembles the centered,
variance-scaled balancing-constraint matrix.
"""

from itertools import combinations
from typing import List, Tuple

import numpy as np

from ..core.exceptions import EmptySystemError, InputError, ParameterError
from ..core.logging import get_logger
from ..models.dataset import (
    BasisSpec,
    CovariateBasis,
    Dataset,
    DatasetIssue,
    DiagnosticsReport,
    IssueKind,
    OutcomeSummary,
)
from ..models.moments import MomentSystem

logger = get_logger(__name__)

DEGENERATE_SIGMA = 1e-12


def treatment_basis_matrix(dataset: Dataset, spec: BasisSpec) -> Tuple[np.ndarray, List[str]]:
    """
    u(T) = (1, vec(T)) with column-major vec, one row per observation.

    Returns the n x (pq + 1) matrix and its column names.
    """
    n, p, q = dataset.treatments.shape
    vec = dataset.treatments.transpose(0, 2, 1).reshape(n, p * q)
    names = ["1"] + [f"t_{a + 1}_{b + 1}" for b in range(q) for a in range(p)]
    return np.column_stack([np.ones(n), vec]), names


def covariate_basis_matrix(dataset: Dataset, spec: BasisSpec) -> Tuple[np.ndarray, List[str]]:
    """v(X) with a leading intercept column, per the covariate basis choice."""
    covariates = dataset.covariates
    n, n_covariates = covariates.shape

    if spec.covariate_subset is not None:
        indices = list(spec.covariate_subset)
        if any(j < 0 or j >= n_covariates for j in indices):
            raise ParameterError(f"covariate subset {indices} out of range for {n_covariates} covariates")
    else:
        indices = list(range(n_covariates))

    columns = [np.ones(n)]
    names = ["1"]

    if spec.covariate_basis == CovariateBasis.CUSTOM_COLUMNS:
        # custom monomials index the original covariates
        for term in spec.custom_columns:
            if any(j < 0 or j >= n_covariates for j in term):
                raise ParameterError(f"custom column {term} out of range for {n_covariates} covariates")
            columns.append(np.prod(covariates[:, term], axis=1))
            names.append("*".join(f"x_{j + 1}" for j in term))
        return np.column_stack(columns), names

    for j in indices:
        columns.append(covariates[:, j])
        names.append(f"x_{j + 1}")

    if spec.covariate_basis == CovariateBasis.LINEAR_PLUS_SQUARES:
        for j in indices:
            columns.append(covariates[:, j] ** 2)
            names.append(f"x_{j + 1}^2")
    elif spec.covariate_basis == CovariateBasis.LINEAR_PLUS_INTERACTIONS:
        for j, k in combinations(indices, 2):
            columns.append(covariates[:, j] * covariates[:, k])
            names.append(f"x_{j + 1}*x_{k + 1}")

    return np.column_stack(columns), names


def _check_basis_finite(values: np.ndarray, names: List[str], label: str) -> None:
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, column = bad[0]
        raise InputError(
            f"non-finite {label} basis value at observation {row}, column {names[column]}"
        )


def build_moment_system(dataset: Dataset, spec: BasisSpec) -> MomentSystem:
    """
    Build M~ from the products u_l(T) v_l~(X).

    Raw column k = l~ * K1 + l is centered at mean(u_l) * mean(v_l~) and
    scaled by 1 / sd (ddof=1). Columns with sd <= 1e-12 are dropped.
    """
    dataset.check_finite()
    u, u_names = treatment_basis_matrix(dataset, spec)
    v, v_names = covariate_basis_matrix(dataset, spec)
    _check_basis_finite(u, u_names, "treatment")
    _check_basis_finite(v, v_names, "covariate")

    n, k1 = u.shape
    k2 = v.shape[1]
    raw = (v[:, :, None] * u[:, None, :]).reshape(n, k2 * k1)
    means = np.outer(v.mean(axis=0), u.mean(axis=0)).ravel()
    sigmas = raw.std(axis=0, ddof=1)

    kept = np.flatnonzero(sigmas > DEGENERATE_SIGMA)
    if kept.size == 0:
        raise EmptySystemError(dropped=raw.shape[1])

    lam = 1.0 / sigmas[kept]
    matrix = (raw[:, kept] - means[kept]) * lam

    pairs = [(int(k % k1), int(k // k1)) for k in kept]
    names = [_product_name(u_names[l], v_names[lt]) for l, lt in pairs]

    logger.debug(
        "moment_system_built",
        n=n,
        k1=k1,
        k2=k2,
        raw_columns=raw.shape[1],
        kept=int(kept.size),
    )

    return MomentSystem(
        matrix=matrix,
        lam=lam,
        means=means,
        sigmas=sigmas,
        kept_columns=[int(k) for k in kept],
        column_pairs=pairs,
        column_names=names,
        n_raw_columns=raw.shape[1],
        k1=k1,
        k2=k2,
    )


def _product_name(u_name: str, v_name: str) -> str:
    if u_name == "1":
        return v_name
    if v_name == "1":
        return u_name
    return f"{u_name}:{v_name}"


def validate_dataset(dataset: Dataset) -> DiagnosticsReport:
    """Report non-finite entries, constant columns and an outcome summary."""
    n = dataset.n
    named_columns = [("y", dataset.outcomes)]
    flat_treatments = dataset.treatments.reshape(n, -1)
    named_columns += list(zip(dataset.treatment_names(), flat_treatments.T))
    named_columns += list(zip(dataset.covariate_names(), dataset.covariates.T))

    issues: List[DatasetIssue] = []
    constant: List[str] = []
    for name, values in named_columns:
        finite = np.isfinite(values)
        if not finite.all():
            rows = np.flatnonzero(~finite).tolist()
            issues.append(DatasetIssue(
                kind=IssueKind.NON_FINITE,
                column=name,
                rows=rows,
                detail=f"{len(rows)} non-finite value(s)",
            ))
        clean = values[finite]
        if clean.size and np.ptp(clean) == 0.0:
            constant.append(name)
            issues.append(DatasetIssue(
                kind=IssueKind.CONSTANT_COLUMN,
                column=name,
                detail=f"constant value {clean[0]:g}; degenerate for variance scaling",
            ))

    outcomes = dataset.outcomes[np.isfinite(dataset.outcomes)]
    summary = OutcomeSummary(finite_count=int(outcomes.size))
    if outcomes.size:
        summary = OutcomeSummary(
            mean=float(outcomes.mean()),
            std=float(outcomes.std(ddof=1)) if outcomes.size > 1 else None,
            minimum=float(outcomes.min()),
            maximum=float(outcomes.max()),
            finite_count=int(outcomes.size),
        )

    return DiagnosticsReport(
        n=n,
        p=dataset.p,
        q=dataset.q,
        n_covariates=dataset.n_covariates,
        issues=issues,
        constant_columns=constant,
        outcome_summary=summary,
    )
