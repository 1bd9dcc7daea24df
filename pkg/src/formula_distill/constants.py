"""Placeholder-constant fitting.

Skeletons carry ``C`` placeholders; this module fits their values by
minimizing MSE with BFGS under a multi-restart policy: restart 0 starts
from all ones, later restarts from N(0, init_scale^2) draws.  Each
restart's init derives from its own (seed, index) RNG stream, so
enabling more restarts never changes the earlier ones, and the best
result can only improve as restarts are added.  Restarts whose
trajectory touches a domain fault are discarded outright; when every
restart is discarded the result carries the failure sentinel, which
quantizes to reward level 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DomainViolation
from .expressions import ExprTree, const_count, evaluate
from .reward import DOMAIN_VIOLATION_R2, r_squared
from .seeding import rng_from

_FAIL = 1e12  # objective value reported inside a violated region


@dataclass
class FitConfig:
    restarts: int = 4
    max_iters: int = 100
    tol: float = 1e-8
    init_scale: float = 2.0


@dataclass
class FitResult:
    constants: np.ndarray
    r2: float
    iterations: int
    converged: bool


def mse_gradient(tree: ExprTree, X, y, c, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the MSE objective at c.

    This exact function is handed to the optimizer as its jacobian, so
    the gradient the search runs on is by construction a central
    difference of the objective.
    """
    y = np.asarray(y, dtype=float)
    c = np.asarray(c, dtype=float)

    def obj(v):
        try:
            d = evaluate(tree, X, v) - y
        except DomainViolation:
            return _FAIL
        return float(np.mean(d * d))

    grad = np.zeros_like(c)
    for i in range(len(c)):
        step = h * max(1.0, abs(c[i]))
        up, dn = c.copy(), c.copy()
        up[i] += step
        dn[i] -= step
        grad[i] = (obj(up) - obj(dn)) / (2 * step)
    return grad


def fit_constants(tree: ExprTree, X, y, cfg: FitConfig | None = None, seed: int = 0) -> FitResult:
    """Best-of-restarts BFGS fit of the tree's constants to (X, y).

    Ties between restarts resolve to the lowest restart index.  A tree
    without placeholders just evaluates; a domain fault there (or in
    every restart) yields the DOMAIN_VIOLATION_R2 sentinel.
    """
    cfg = cfg or FitConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    k = const_count(tree)
    if k == 0:
        try:
            r2 = r_squared(y, evaluate(tree, X))
        except DomainViolation:
            return FitResult(np.zeros(0), DOMAIN_VIOLATION_R2, 0, False)
        return FitResult(np.zeros(0), r2, 0, True)

    best = None
    for i in range(cfg.restarts):
        if i == 0:
            c0 = np.ones(k)
        else:
            c0 = rng_from(seed, "restart", i).normal(0.0, cfg.init_scale, k)
        violated = False

        def obj(c):
            nonlocal violated
            try:
                d = evaluate(tree, X, c) - y
            except DomainViolation:
                violated = True
                return _FAIL
            return float(np.mean(d * d))

        with np.errstate(all="ignore"):
            res = minimize(
                obj,
                c0,
                method="BFGS",
                jac=lambda c: mse_gradient(tree, X, y, c),
                options={"maxiter": cfg.max_iters, "gtol": cfg.tol},
            )
        if violated:
            continue
        try:
            y_hat = evaluate(tree, X, res.x)
        except DomainViolation:
            continue
        r2 = r_squared(y, y_hat)
        # strict > keeps the lowest restart index on ties
        if best is None or r2 > best.r2:
            best = FitResult(np.asarray(res.x, dtype=float), r2, int(res.nit), bool(res.success))
    if best is None:
        return FitResult(np.ones(k), DOMAIN_VIOLATION_R2, 0, False)
    return best
