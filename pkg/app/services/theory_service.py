"""Checks of the permutation results and the EDM identities.

Each check yields one row (name, value, expected, passed). Rows are gathered
in a pandas DataFrame and rendered as ``key=value`` report lines.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional

import numpy as np
import pandas as pd
import torch

from app.core.config import EDMConfig
from app.core.errors import InvalidInputError
from app.services.diffusion import edm_target, edm_weighted_loss, loss_weight, precondition_coeffs
from app.services.gmm_oracle import GMMSpec, gmm_optimal_denoiser, gmm_score
from app.services.graphs import Graph, all_permutations
from app.services.invariance_lab import (
    best_uniform_invariant_support,
    check_closest_invariant,
    check_permuted_sampler,
    counterexample_cases,
    l_permuted_distribution,
    random_base_distribution,
)

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["check", "value", "expected", "passed"]
RANDOM_BASES = 50
EDM_SIGMAS = 1_000
TARGET_SAMPLES = 100_000


@dataclass(frozen=True)
class CheckRow:
    check: str
    value: object
    expected: object
    passed: bool


def _exact(name: str, value, expected) -> CheckRow:
    return CheckRow(name, value, expected, value == expected)


def _below(name: str, value: float, bound: float) -> CheckRow:
    return CheckRow(name, value, f"<={bound:g}", bool(value <= bound))


# ------------------------------------------------------------------
# Counterexamples
# ------------------------------------------------------------------
def counterexample_checks() -> list[CheckRow]:
    expected = {
        "case1": {
            "tv_star": Fraction(29, 16),
            "tv_alternative": Fraction(7, 4),
            "slack": Fraction(7, 48),
            "rho_threshold": Fraction(7, 192),
        },
        "case2": {"tv_star": Fraction(15, 8), "slack": Fraction(5, 24), "rho_threshold": Fraction(5, 144)},
        "case3": {"tv_star": Fraction(29, 16), "tv_alternative": Fraction(5, 3)},
        "case4": {"tv_star": Fraction(15, 8), "tv_alternative": Fraction(5, 3)},
    }
    rows = []
    for case in counterexample_cases():
        for field_name, value in expected[case.name].items():
            rows.append(_exact(f"{case.name}_{field_name}", getattr(case, field_name), value))
        rows.append(_exact(f"{case.name}_beats_closest", case.beats_closest, True))
    return rows


def closest_invariant_checks() -> list[CheckRow]:
    path = Graph.from_edges(3, [(0, 1), (1, 2)])
    star = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    cycle = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])

    rows = []
    check = check_closest_invariant([path])
    rows.append(_exact("closest_path_tv", check.tv, Fraction(4, 3)))
    rows.append(_exact("closest_path_formula", check.passed, True))
    rows.append(_exact("closest_empty_tv", check_closest_invariant([Graph.empty(3)]).tv, 0))

    pair = check_closest_invariant([star, cycle])
    _, best_tv = best_uniform_invariant_support([star, cycle])
    rows.append(_exact("closest_is_uniform_minimizer", best_tv, pair.tv))

    permuted = l_permuted_distribution([path], list(all_permutations(3)))
    rows.append(_exact("l_permuted_path_atoms", len(permuted), 3))
    rows.append(_exact("l_permuted_path_weights", set(permuted.probs.values()), {Fraction(1, 3)}))
    return rows


def permuted_sampler_checks(seed: int = 0, bases: int = RANDOM_BASES) -> list[CheckRow]:
    """Invariance, closed form and idempotence over random rational base laws at n = 3 and 4."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in (3, 4):
        failures = {"invariant": 0, "closed_form": 0, "idempotent": 0}
        for _ in range(bases):
            result = check_permuted_sampler(random_base_distribution(n, int(rng.integers(1, 6)), rng))
            for key, ok in result.items():
                failures[key] += not ok
        for key, count in failures.items():
            rows.append(_exact(f"permuted_sampler_n{n}_{key}_failures", count, 0))
    return rows


# ------------------------------------------------------------------
# EDM identities
# ------------------------------------------------------------------
def edm_checks(cfg: Optional[EDMConfig] = None, seed: int = 0) -> list[CheckRow]:
    cfg = cfg or EDMConfig()
    generator = torch.Generator().manual_seed(seed)
    sigma = torch.exp(torch.randn(EDM_SIGMAS, generator=generator, dtype=torch.float64) * 3.0)
    _, c_out, c_in, _ = precondition_coeffs(sigma, cfg)
    rows = [
        _below("edm_input_scale_error", float((c_in**2 * (sigma**2 + cfg.sigma_d**2) - 1).abs().max()), 1e-12),
        _below("edm_loss_weight_error", float((loss_weight(sigma, cfg) * c_out**2 - 1).abs().max()), 1e-12),
    ]

    clean = torch.randn(64, 1, 6, 6, generator=generator, dtype=torch.float64)
    noise = torch.randn(clean.shape, generator=generator, dtype=torch.float64)
    raw = torch.randn(clean.shape, generator=generator, dtype=torch.float64)
    batch_sigma = sigma[:64]
    noisy = clean + batch_sigma[:, None, None, None] * noise
    weighted = edm_weighted_loss(clean, noisy, raw, batch_sigma, cfg)
    direct = (raw - edm_target(clean, noisy, batch_sigma, cfg)).pow(2).flatten(1).sum(dim=1)
    rows.append(_below("edm_loss_form_error", float(((weighted - direct).abs() / direct).max()), 1e-9))

    # data with variance sigma_d^2
    data = torch.randn(TARGET_SAMPLES, generator=generator, dtype=torch.float64) * cfg.sigma_d
    train_sigma = torch.exp(cfg.p_mean + cfg.p_std * torch.randn(TARGET_SAMPLES, generator=generator, dtype=torch.float64))
    noisy = data + train_sigma * torch.randn(TARGET_SAMPLES, generator=generator, dtype=torch.float64)
    target = edm_target(data, noisy, train_sigma, cfg)
    rows.append(_below("edm_target_variance_error", abs(float(target.var()) - 1.0), 0.05))
    return rows


def gmm_checks(seed: int = 0) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    centers = rng.integers(0, 2, size=(2, 4, 4)).astype(np.float64)
    spec = GMMSpec(centers, 0.7)
    x = rng.normal(size=(16, 4, 4))
    denoised = gmm_optimal_denoiser(x, spec)
    tweedie = x + spec.sigma**2 * gmm_score(x, spec)
    midpoint = gmm_optimal_denoiser(centers.mean(axis=0), spec)
    return [
        _below("gmm_tweedie_error", float(np.abs(denoised - tweedie).max()), 1e-12),
        _below("gmm_midpoint_error", float(np.abs(midpoint - centers.mean(axis=0)).max()), 1e-12),
    ]


SUITE: dict[str, Callable[[], Iterable[CheckRow]]] = {
    "counterexamples": counterexample_checks,
    "closest_invariant": closest_invariant_checks,
    "permuted_sampler": permuted_sampler_checks,
    "edm": edm_checks,
    "gmm": gmm_checks,
}


def run_theory_suite(groups: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """Run the selected check groups (all by default) and return one row per check."""
    selected = list(SUITE) if groups is None else list(groups)
    unknown = [name for name in selected if name not in SUITE]
    if unknown:
        raise InvalidInputError(f"unknown theory groups {unknown}; known: {sorted(SUITE)}")
    rows: list[CheckRow] = []
    for name in selected:
        start = time.perf_counter()
        group_rows = list(SUITE[name]())
        logger.info("theory group %s: %d checks in %.2fs", name, len(group_rows), time.perf_counter() - start)
        rows.extend(group_rows)
    frame = pd.DataFrame([vars(row) for row in rows], columns=REPORT_COLUMNS)
    failed = frame.loc[~frame["passed"], "check"].tolist()
    if failed:
        logger.warning("theory checks failed: %s", ", ".join(failed))
    return frame


def format_report(frame: pd.DataFrame) -> list[str]:
    """``check=<name> value=<v> expected=<e> status=pass|fail`` per row."""
    return [
        f"check={row.check} value={row.value} expected={row.expected} status={'pass' if row.passed else 'fail'}"
        for row in frame.itertuples(index=False)
    ]


def report_dict(frame: pd.DataFrame) -> list[dict]:
    return [
        {"check": row.check, "value": str(row.value), "expected": str(row.expected), "passed": bool(row.passed)}
        for row in frame.itertuples(index=False)
    ]

