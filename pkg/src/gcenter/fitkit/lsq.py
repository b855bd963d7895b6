"""Damped Gauss-Newton (Levenberg-Marquardt) engine with numeric Jacobians."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import MaxIterations, SingularNormalEquations


@dataclass
class FitResult:
    """Fitted parameters with 1-sigma errors from the linearized covariance.

    ``residual`` is the reduced chi-square (weighted sum of squared residuals
    divided by the degrees of freedom).
    """
    model: str
    params: dict[str, float]
    sigmas: dict[str, float]
    residual: float
    converged: bool
    iterations: int
    covariance: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def to_dict(self) -> dict:
        extras = {k: v for k, v in self.extras.items() if isinstance(v, (int, float, str, bool))}
        return {
            "model": self.model,
            "params": {k: {"value": v, "sigma": self.sigmas[k]} for k, v in self.params.items()},
            "residual": self.residual,
            "converged": self.converged,
            "iterations": self.iterations,
            **({"extras": extras} if extras else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        d = json.loads(text)
        return cls(
            model=d["model"],
            params={k: v["value"] for k, v in d["params"].items()},
            sigmas={k: v["sigma"] for k, v in d["params"].items()},
            residual=d["residual"],
            converged=d["converged"],
            iterations=d["iterations"],
            extras=d.get("extras", {}),
        )


@dataclass
class LSQOptions:
    max_iter: int = 500
    ftol: float = 1e-10
    gtol: float = 1e-10
    xtol: float = 1e-14
    lambda0: float = 1e-3
    lambda_max: float = 1e16
    absolute_sigma: bool = False


def numeric_jacobian(fun: Callable[[np.ndarray], np.ndarray], p: np.ndarray,
                     f0: np.ndarray | None = None) -> np.ndarray:
    """Forward differences with step max(1e-6, 1e-6*|p|)."""
    if f0 is None:
        f0 = fun(p)
    jac = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = max(1e-6, 1e-6 * abs(p[j]))
        pj = p.copy()
        pj[j] += h
        jac[:, j] = (fun(pj) - f0) / (pj[j] - p[j])
    return jac


class FitFailed(MaxIterations):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def least_squares(model: Callable, x, y, p0: Sequence[float], sigma=None,
                  names: Sequence[str] | None = None, options: LSQOptions | None = None,
                  model_name: str = "custom") -> FitResult:
    """Minimize sum(((model(x, p) - y) / sigma)**2) from ``p0``.

    ``model(x, p)`` receives the parameter vector as a float array.  Accepted
    steps never increase the cost; rejected steps raise the damping.
    """
    opts = options or LSQOptions()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.array(p0, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("initial parameters must be finite")
    if names is None:
        names = [f"p{i}" for i in range(p.size)]
    if y.size < p.size:
        raise ValueError(f"{y.size} points cannot constrain {p.size} parameters")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)

    def resid(pp):
        return (np.asarray(model(x, pp), dtype=float) - y) * w

    r = resid(p)
    cost = 0.5 * float(r @ r)
    if not math.isfinite(cost):
        raise ValueError("model is not finite at the initial parameters")
    jac = numeric_jacobian(resid, p, r)
    lam = opts.lambda0
    iterations = 0
    converged = False
    reason = ""
    cost_history = [cost]

    for _ in range(opts.max_iter):
        grad = jac.T @ r
        if np.max(np.abs(grad)) < opts.gtol:
            converged, reason = True, "gtol"
            break
        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = max(1e-12 * diag.max(initial=0.0), 1e-30)
        accepted = False
        while lam <= opts.lambda_max:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam = max(lam * 10, opts.lambda0)
                continue
            if not np.all(np.isfinite(step)):
                lam = max(lam * 10, opts.lambda0)
                continue
            p_new = p + step
            # trial points may overflow; a non-finite cost simply rejects the step
            with np.errstate(over="ignore", invalid="ignore"):
                r_new = resid(p_new)
                cost_new = 0.5 * float(r_new @ r_new)
            if math.isfinite(cost_new) and cost_new <= cost:
                predicted = -(grad @ step) - 0.5 * step @ jtj @ step
                actual = cost - cost_new
                accepted = True
                break
            if np.linalg.norm(step) <= opts.xtol * (np.linalg.norm(p) + opts.xtol):
                break
            lam = max(lam * 10, opts.lambda0)
        if not accepted:
            if lam > opts.lambda_max and np.linalg.cond(jtj) > 1e15:
                raise SingularNormalEquations("normal equations stay singular after damping escalation")
            # no downhill step exists at working precision
            converged, reason = True, "xtol"
            break
        iterations += 1
        p, r = p_new, r_new
        small = (actual <= opts.ftol * cost and abs(predicted) <= opts.ftol * cost)
        cost = cost_new
        cost_history.append(cost)
        # gain ratio near one: the quadratic model is exact enough for a plain Gauss-Newton step
        rho = actual / predicted if predicted > 0 else 0.0
        lam = 0.0 if abs(rho - 1.0) < 1e-3 else max(lam / 10, 1e-12)
        jac = numeric_jacobian(resid, p, r)
        if small:
            converged, reason = True, "ftol"
            break
        if cost <= 1e-24 * cost_history[0]:
            converged, reason = True, "exact"
            break
    else:
        result = _finish(model_name, names, p, r, jac, y.size, opts, False, iterations, "max_iter", cost_history)
        raise FitFailed(f"no convergence after {opts.max_iter} iterations", result)

    return _finish(model_name, names, p, r, jac, y.size, opts, converged, iterations, reason, cost_history)


def _finish(model_name, names, p, r, jac, n, opts, converged, iterations, reason, cost_history):
    dof = n - p.size
    chi2 = float(r @ r)
    red = chi2 / dof if dof > 0 else float("nan")
    try:
        cov = np.linalg.inv(jac.T @ jac)
        if not opts.absolute_sigma and dof > 0:
            cov = cov * red
        sig = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        cov = None
        sig = np.full(p.size, np.inf)
    return FitResult(
        model=model_name,
        params={k: float(v) for k, v in zip(names, p)},
        sigmas={k: float(s) for k, s in zip(names, sig)},
        residual=red,
        converged=converged,
        iterations=iterations,
        covariance=cov,
        extras={"reason": reason, "grad_inf": float(np.max(np.abs(jac.T @ r))),
                "cost_history": cost_history},
    )
