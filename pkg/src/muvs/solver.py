"""Powell's dogleg trust-region method for sums of squared residuals.

The objective minimized is F(x) = |r(x)|^2 (no 1/2 factor, so reported values
equal the energies they encode). Each iteration builds the Gauss-Newton model
F + 2 g.p + p.H.p with g = J^T r and H = J^T J.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from . import autodiff
from .errors import InvalidStart

log = logging.getLogger(__name__)

GRADIENT = "gradient-tolerance"
STEP = "step-tolerance"
MAX_ITER = "max-iterations"


@dataclass
class Objective:
    """Least-squares objective.

    Provide ``residuals`` and optionally one of: ``jacobian`` (analytic),
    ``linearize`` (residuals and Jacobian together) or ``normal`` (returns
    cost, J^T r and J^T J directly, for structured problems). ``cost`` may be
    given when evaluating F alone is cheaper than building residuals.
    """

    residuals: Callable[[np.ndarray], np.ndarray]
    dim: int
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    linearize: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    normal: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]] | None = None
    cost: Callable[[np.ndarray], float] | None = None

    def value(self, x: np.ndarray) -> float:
        if self.cost is not None:
            return float(self.cost(x))
        r = np.asarray(self.residuals(x), dtype=float)
        return float(r @ r)

    def normal_equations(self, x: np.ndarray):
        if self.normal is not None:
            return self.normal(x)
        if self.linearize is not None:
            r, J = self.linearize(x)
        else:
            r = np.asarray(self.residuals(x), dtype=float)
            J = jacobian(self, x)
        return float(r @ r), J.T @ r, J.T @ J


@dataclass
class SolverOptions:
    max_iterations: int = 100
    gtol: float = 1e-8
    xtol: float = 1e-10
    initial_radius: float | None = None
    max_radius: float = 1e3
    eta: float = 1e-4
    mask: np.ndarray | None = None  # True where the variable is free


@dataclass
class SolveReport:
    x: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    accepted_steps: int
    reason: str
    trace: list = field(default_factory=list)
    radii: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "accepted_steps": self.accepted_steps,
            "reason": self.reason,
        }


def jacobian(obj: Objective, x: np.ndarray) -> np.ndarray:
    """Analytic Jacobian when available, else forward-mode dual numbers."""
    x = np.asarray(x, dtype=float)
    if obj.jacobian is not None:
        return np.asarray(obj.jacobian(x), dtype=float)
    if obj.linearize is not None:
        return obj.linearize(x)[1]
    _, J = autodiff.jacobian(obj.residuals, x)
    return J


def finite_difference_jacobian(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def gauss_newton_step(g: np.ndarray, H: np.ndarray) -> np.ndarray:
    try:
        c = scipy.linalg.cho_factor(H, check_finite=False)
        p = -scipy.linalg.cho_solve(c, g, check_finite=False)
        if np.all(np.isfinite(p)):
            return p
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    return -np.linalg.lstsq(H, g, rcond=None)[0]


def dogleg_step(g: np.ndarray, H: np.ndarray, radius: float, p_gn: np.ndarray | None = None) -> np.ndarray:
    """Dogleg step for the model 2 g.p + p.H.p within |p| <= radius."""
    if p_gn is None:
        p_gn = gauss_newton_step(g, H)
    if np.linalg.norm(p_gn) <= radius:
        return p_gn
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        return p_gn * (radius / np.linalg.norm(p_gn))
    curv = g @ H @ g
    if curv <= 0:
        return -radius * g / gnorm
    p_sd = -(g @ g) / curv * g
    sd_norm = np.linalg.norm(p_sd)
    if sd_norm >= radius:
        return -radius * g / gnorm
    d = p_gn - p_sd
    a = d @ d
    b = 2 * p_sd @ d
    c = sd_norm**2 - radius**2
    tau = (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)
    return p_sd + tau * d


def minimize(obj: Objective, x0: np.ndarray, opts: SolverOptions | None = None) -> SolveReport:
    opts = opts or SolverOptions()
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidStart("x0 has non-finite entries")
    cost = obj.value(x)
    if not np.isfinite(cost):
        raise InvalidStart("objective is not finite at x0")
    free = np.ones(x.size, dtype=bool) if opts.mask is None else np.asarray(opts.mask, dtype=bool)
    report = SolveReport(x, cost, cost, 0, 0, MAX_ITER, trace=[cost])
    radius = opts.initial_radius
    iterations = 0
    reason = MAX_ITER
    while iterations < opts.max_iterations:
        iterations += 1
        cost, g, H = obj.normal_equations(x)
        g = g[free]
        H = H[np.ix_(free, free)]
        if np.max(np.abs(2 * g), initial=0.0) < opts.gtol or cost == 0.0:
            reason = GRADIENT
            break
        p_gn = gauss_newton_step(g, H)
        if radius is None:
            radius = min(max(np.linalg.norm(p_gn), opts.xtol), opts.max_radius)
        accepted = False
        while True:
            p = dogleg_step(g, H, radius, p_gn)
            predicted = -(2 * g @ p + p @ H @ p)
            x_new = x.copy()
            x_new[free] += p
            new_cost = obj.value(x_new)
            if predicted > 0 and np.isfinite(new_cost):
                ratio = (cost - new_cost) / predicted
            else:
                ratio = -np.inf
            step_norm = np.linalg.norm(p)
            if ratio > 0.75:
                radius = min(2 * radius, opts.max_radius)
            elif ratio < 0.25:
                radius *= 0.25
            report.radii.append(radius)
            if ratio > opts.eta and new_cost <= cost:
                accepted = True
                break
            if step_norm <= opts.xtol * (np.linalg.norm(x) + opts.xtol) or radius <= opts.xtol * (
                np.linalg.norm(x) + opts.xtol
            ):
                break
        if not accepted:
            reason = STEP
            break
        x = x_new
        report.accepted_steps += 1
        report.trace.append(new_cost)
        cost = new_cost
        if step_norm <= opts.xtol * (np.linalg.norm(x) + opts.xtol):
            reason = STEP
            break
    report.x = x
    report.final_cost = obj.value(x)
    report.iterations = iterations
    report.reason = reason
    return report


def write_trace(report: SolveReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "objective"])
        for i, v in enumerate(report.trace):
            w.writerow([i, repr(float(v))])
