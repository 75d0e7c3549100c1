"""Penalized sampled partial likelihood: fitting, smoothing selection and AIC.

With ``m = 2`` the sampled partial likelihood is a no-intercept logistic
likelihood with every response equal to one, evaluated on covariate
differences.  For general ``m`` each (case, control) row carries weight
``1 / (m - 1)``.  The penalized log-likelihood

    l_p(gamma) = sum_k w_k log sigmoid(x_k' gamma) - 1/2 sum_j lam_j gamma' S_j gamma

is maximized by Newton/IRLS with step halving; smoothing parameters
maximize a Laplace approximation to the restricted marginal likelihood.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit, log_expit

from .basis import DesignAssembly, TermSpec, assemble_design

log = logging.getLogger(__name__)

RHO_BOUNDS = (-np.log(1e12), np.log(1e12))
SEPARATION_THRESHOLD = 12.0


class ConvergenceError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class DesignError(ValueError):
    pass


def log_likelihood(eta, w) -> float:
    return float(np.sum(w * log_expit(eta)))


def penalized_loglik(design: DesignAssembly, lam, gamma) -> tuple[float, np.ndarray]:
    """Penalized log-likelihood and its analytic gradient at ``gamma``."""
    X, w = design.X, design.weights
    S = design.penalty_matrix(np.asarray(lam, dtype=float))
    eta = X @ gamma
    value = log_likelihood(eta, w) - 0.5 * gamma @ S @ gamma
    grad = X.T @ (w * (1.0 - expit(eta))) - S @ gamma
    return float(value), grad


@dataclass
class IRLSResult:
    gamma: np.ndarray
    cov: np.ndarray
    log_pl: float
    penalized_ll: float
    edf: float
    F: np.ndarray
    H: np.ndarray
    iterations: int
    grad_norm: float
    trace: list
    logdet_A: float


def _factor(A):
    """Cholesky of the penalized Hessian; pseudo-inverse fallback when singular."""
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=False)
        return c, None
    except linalg.LinAlgError:
        return None, linalg.pinvh(A)


def _solve(fac, pinv, b):
    if fac is not None:
        return linalg.cho_solve(fac, b, check_finite=False)
    return pinv @ b


def penalized_irls(design: DesignAssembly, lam, gamma0=None, max_iter: int = 200,
                   tol_rel: float = 1e-9, tol_grad: float = 1e-8) -> IRLSResult:
    """Maximize the penalized log-likelihood for fixed smoothing parameters.

    Stops when the relative change of the objective falls below ``tol_rel``
    (followed by one polishing Newton step) or the gradient max-norm falls
    below ``tol_grad``.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.size != len(design.penalty_blocks):
        raise ValueError(f"expected {len(design.penalty_blocks)} smoothing parameters")
    if np.any(lam <= 0):
        raise ValueError("smoothing parameters must be positive")
    X, w = design.X, design.weights
    S = design.penalty_matrix(lam)
    d = X.shape[1]
    gamma = np.zeros(d) if gamma0 is None else np.array(gamma0, dtype=float)

    def objective(g):
        eta = X @ g
        return log_likelihood(eta, w) - 0.5 * g @ S @ g

    obj = objective(gamma)
    trace = []
    polish = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ gamma
        mu = expit(eta)
        grad = X.T @ (w * (1.0 - mu)) - S @ gamma
        gnorm = float(np.max(np.abs(grad))) if d else 0.0
        trace.append((obj, gnorm))
        if gnorm < tol_grad:
            converged = True
            break
        H = X.T @ ((w * mu * (1.0 - mu))[:, None] * X)
        A = H + S
        fac, pinv = _factor(A)
        step = _solve(fac, pinv, grad)
        if not np.all(np.isfinite(step)):
            raise np.linalg.LinAlgError("non-finite Newton step: penalized Hessian is indefinite")
        alpha = 1.0
        for _ in range(40):
            cand = gamma + alpha * step
            new_obj = objective(cand)
            if np.isfinite(new_obj) and new_obj >= obj - 1e-12 * abs(obj):
                break
            alpha *= 0.5
        else:
            cand, new_obj = gamma, obj
        change = abs(new_obj - obj) / max(abs(obj), 1e-300)
        gamma, obj = cand, new_obj
        if polish:
            converged = True
            break
        if change < tol_rel:
            polish = True
    if not converged:
        raise ConvergenceError(f"penalized IRLS did not converge in {max_iter} iterations", trace)

    eta = X @ gamma
    mu = expit(eta)
    H = X.T @ ((w * mu * (1.0 - mu))[:, None] * X)
    A = H + S
    fac, pinv = _factor(A)
    if fac is not None:
        cov = linalg.cho_solve(fac, np.eye(d), check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(fac[0]))))
    else:
        cov = pinv
        ev = np.linalg.eigvalsh(A)
        logdet = float(np.sum(np.log(ev[ev > 1e-12 * max(ev.max(), 1e-300)])))
    cov = 0.5 * (cov + cov.T)
    F = cov @ H
    grad = X.T @ (w * (1.0 - mu)) - S @ gamma
    return IRLSResult(
        gamma=gamma,
        cov=cov,
        log_pl=log_likelihood(eta, w),
        penalized_ll=obj,
        edf=float(np.trace(F)),
        F=F,
        H=H,
        iterations=it,
        grad_norm=float(np.max(np.abs(grad))) if d else 0.0,
        trace=trace,
        logdet_A=logdet,
    )


# ---------------------------------------------------------------------------
# smoothing parameter selection
# ---------------------------------------------------------------------------


def laml(design: DesignAssembly, rho, gamma0=None):
    """Laplace-approximate restricted log marginal likelihood and its gradient in log lambda.

    Constants that do not depend on lambda are dropped.
    """
    rho = np.asarray(rho, dtype=float)
    lam = np.exp(rho)
    res = penalized_irls(design, lam, gamma0)
    ranks = np.array([pb.rank for pb in design.penalty_blocks], dtype=float)
    value = res.penalized_ll + 0.5 * float(ranks @ rho) - 0.5 * res.logdet_A

    X, w, gamma, cov = design.X, design.weights, res.gamma, res.cov
    mu = expit(X @ gamma)
    w3 = w * mu * (1.0 - mu) * (1.0 - 2.0 * mu)
    lev = np.einsum("ij,jk,ik->i", X, cov, X)
    grad = np.empty(rho.size)
    for j, pb in enumerate(design.penalty_blocks):
        Sg = np.zeros_like(gamma)
        Sg[pb.cols] = lam[j] * (pb.S @ gamma[pb.cols])
        dgamma = -cov @ Sg
        quad = float(gamma @ Sg)
        tr_S = lam[j] * float(np.sum(cov[pb.cols, pb.cols] * pb.S))
        tr_H = float(np.sum(w3 * (X @ dgamma) * lev))
        grad[j] = -0.5 * quad + 0.5 * ranks[j] - 0.5 * (tr_S + tr_H)
    return value, grad, res


def gcv_score(design: DesignAssembly, rho, gamma0=None):
    res = penalized_irls(design, np.exp(rho), gamma0)
    n = float(design.weights.sum())
    deviance = -2.0 * res.log_pl
    return n * deviance / max(n - res.edf, 1e-8) ** 2, res


@dataclass
class SmoothingResult:
    rho: np.ndarray
    criterion: str
    score: float
    iterations: int
    converged: bool
    at_boundary: np.ndarray
    irls: IRLSResult
    message: str = ""

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.rho)


def optimize_smoothing(design: DesignAssembly, criterion: str = "reml", rho0=None,
                       max_iter: int = 50, tol: float = 1e-4) -> SmoothingResult:
    """Choose log smoothing parameters by Laplace REML (default) or GCV."""
    n_b = len(design.penalty_blocks)
    if n_b == 0:
        raise ValueError("no penalty blocks to optimize")
    rho0 = np.zeros(n_b) if rho0 is None else np.asarray(rho0, dtype=float)
    lo, hi = RHO_BOUNDS
    state = {"gamma": None, "res": None, "n": 0}

    if criterion == "reml":
        def fun(rho):
            v, g, res = laml(design, rho, state["gamma"])
            state.update(gamma=res.gamma, res=res)
            state["n"] += 1
            return -v, -g

        prev = [rho0.copy()]
        small_steps = [0]

        def callback(xk):
            if np.all(np.abs(xk - prev[0]) < tol):
                small_steps[0] += 1
            prev[0] = xk.copy()

        out = optimize.minimize(fun, rho0, jac=True, method="L-BFGS-B",
                                bounds=[(lo, hi)] * n_b, callback=callback,
                                options={"maxiter": max_iter, "gtol": 1e-7, "ftol": 1e-13})
        rho = np.clip(out.x, lo, hi)
        score = -float(out.fun)
        converged = bool(out.success) or small_steps[0] > 0
        message = str(out.message)
        iterations = int(out.nit)
    elif criterion == "gcv":
        def fun(rho):
            s, res = gcv_score(design, np.clip(rho, lo, hi), state["gamma"])
            state.update(gamma=res.gamma, res=res)
            return s

        out = optimize.minimize(fun, rho0, method="Nelder-Mead",
                                options={"maxiter": 200 * n_b, "xatol": tol, "fatol": 1e-10})
        rho = np.clip(out.x, lo, hi)
        score = float(out.fun)
        converged = bool(out.success)
        message = str(out.message)
        iterations = int(out.nit)
    else:
        raise ValueError(f"unknown smoothing criterion {criterion!r}")

    res = penalized_irls(design, np.exp(rho), state["gamma"])
    block_edf = np.array([np.trace(res.F[pb.cols, pb.cols]) for pb in design.penalty_blocks])
    ranks = np.array([max(pb.rank, 1) for pb in design.penalty_blocks])
    at_boundary = (rho >= hi - 1e-3) | (rho <= lo + 1e-3) | (block_edf < 1e-3 * ranks)
    return SmoothingResult(rho, criterion, score, iterations, converged, at_boundary, res, message)


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------


@dataclass
class SmoothCurve:
    grid_years: np.ndarray
    value: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    warnings: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("year,estimate,se,lo,hi\n")
            for row in zip(self.grid_years, self.value, self.se, self.ci_low, self.ci_high):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class FitResult:
    gamma_hat: np.ndarray
    lam: np.ndarray
    penalty_labels: list
    posterior_cov: np.ndarray
    edf_total: float
    edf_terms: dict
    edf_corrected: float
    log_pl: float
    aic_corrected: float
    re_sd: dict
    convergence: dict
    design: DesignAssembly
    term_specs: list
    covariate_names: list
    separated: list = field(default_factory=list)
    at_boundary: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.gamma_hat.size

    def term_coef(self, name: str) -> np.ndarray:
        return self.gamma_hat[self.design.terms[name]]

    def block(self, name: str):
        return next(b for b in self.design.blocks if b.name == name)

    def linear_predictor(self, x, labels, years) -> np.ndarray:
        """gamma' v for single dyads given absolute covariates and labels."""
        rows = self.design.rows_for_dyads(x, labels, years, self.covariate_names)
        return rows @ self.gamma_hat

    def to_dict(self) -> dict:
        terms = {}
        for b in self.design.blocks:
            coef = self.gamma_hat[self.design.terms[b.name]]
            entry = {"kind": b.kind, "edf": self.edf_terms[b.name]}
            if b.kind == "random_effect":
                entry["coef"] = {str(lv): float(c) for lv, c in zip(b.levels, coef)}
            else:
                entry["coef"] = [float(c) for c in coef]
                se = np.sqrt(np.diag(self.posterior_cov)[self.design.terms[b.name]])
                entry["se"] = [float(s) for s in se]
            terms[b.name] = entry
        return {
            "terms": terms,
            "lambda": {lbl: float(l) for lbl, l in zip(self.penalty_labels, self.lam)},
            "re_sd": {k: float(v) for k, v in self.re_sd.items()},
            "edf_total": float(self.edf_total),
            "edf_corrected": float(self.edf_corrected),
            "log_pl": float(self.log_pl),
            "aic_corrected": float(self.aic_corrected),
            "d": int(self.d),
            "separated": list(self.separated),
            "at_boundary": list(self.at_boundary),
            "warnings": list(self.warnings),
            "convergence": self.convergence,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _corrected_edf(design: DesignAssembly, rho, res: IRLSResult, h: float = 1e-4):
    """EDF corrected for smoothing-parameter uncertainty.

    Covariance of gamma is inflated by J V_rho J', J = d gamma / d rho and
    V_rho the inverse negative Hessian of the REML criterion (central
    differences of its analytic gradient).  The result is capped at
    tr(2F - F^2).
    """
    n_b = rho.size
    hess = np.empty((n_b, n_b))
    for j in range(n_b):
        e = np.zeros(n_b)
        e[j] = h
        _, gp, _ = laml(design, rho + e, res.gamma)
        _, gm, _ = laml(design, rho - e, res.gamma)
        hess[:, j] = (gp - gm) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    vals, vecs = np.linalg.eigh(-hess)
    keep = vals > 1e-8 * max(vals.max(initial=0.0), 1e-300)
    V_rho = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    lam = np.exp(rho)
    J = np.empty((res.gamma.size, n_b))
    for j, pb in enumerate(design.penalty_blocks):
        Sg = np.zeros_like(res.gamma)
        Sg[pb.cols] = lam[j] * (pb.S @ res.gamma[pb.cols])
        J[:, j] = -res.cov @ Sg
    Vc = res.cov + J @ V_rho @ J.T
    edf2 = float(np.sum(Vc * res.H.T))
    edf1 = float(np.trace(2 * res.F - res.F @ res.F))
    if not np.isfinite(edf2):
        raise np.linalg.LinAlgError("corrected EDF is not finite")
    return min(edf2, edf1)


def fit_smooth_rem(dataset, term_specs, criterion: str = "reml",
                   design: DesignAssembly | None = None) -> FitResult:
    """Assemble, select smoothing parameters, and fit."""
    if dataset.n_rows == 0:
        raise DesignError("empty case-control dataset")
    term_specs = [t if isinstance(t, TermSpec) else TermSpec.from_dict(t) for t in term_specs]
    if design is None:
        design = assemble_design(dataset, term_specs)
    if design.d > design.n_events:
        raise DesignError(
            f"model has d={design.d} coefficients but only {design.n_events} events; "
            "reduce random-effect levels (e.g. rare-level pooling) or basis sizes"
        )
    warn = []
    n_b = len(design.penalty_blocks)
    if n_b:
        sm = optimize_smoothing(design, criterion)
        res, rho = sm.irls, sm.rho
        conv = {"outer_iterations": sm.iterations, "outer_converged": sm.converged,
                "criterion": criterion, "score": sm.score, "message": sm.message}
        at_boundary = [pb.label for pb, b in zip(design.penalty_blocks, sm.at_boundary) if b]
    else:
        res, rho = penalized_irls(design, np.empty(0)), np.empty(0)
        conv = {"outer_iterations": 0, "outer_converged": True, "criterion": "none"}
        at_boundary = []
    conv.update(iterations=res.iterations, grad_norm=res.grad_norm)

    edf_corr = res.edf
    if n_b and criterion == "reml":
        try:
            edf_corr = _corrected_edf(design, rho, res)
        except (np.linalg.LinAlgError, ConvergenceError, ValueError) as exc:
            warnings.warn(f"smoothing-uncertainty correction failed ({exc}); using plain EDF")
            warn.append("edf_correction_failed")
    elif n_b:
        warn.append("edf_correction_requires_reml")

    unpen = design.unpenalized_columns()
    # separation needs a row fitted as numerically certain plus an unpenalized
    # column that alone pushes the linear predictor that far
    separated = []
    if design.X.size and np.max(design.X @ res.gamma) > SEPARATION_THRESHOLD:
        reach = np.abs(res.gamma) * np.abs(design.X).max(axis=0)
        separated = [design.column_names[c] for c in np.flatnonzero(unpen)
                     if reach[c] > SEPARATION_THRESHOLD]
    if separated:
        warn.append("separation")
        log.warning("possible complete separation in columns %s", separated)

    lam = np.exp(rho)
    edf_terms = {name: float(np.trace(res.F[sl, sl])) for name, sl in design.terms.items()}
    re_sd = {pb.label: float(l ** -0.5) for pb, l in zip(design.penalty_blocks, lam)
             if pb.is_random_effect}
    covariate_names = list(getattr(dataset, "covariate_names", []))
    return FitResult(
        gamma_hat=res.gamma,
        lam=lam,
        penalty_labels=[pb.label for pb in design.penalty_blocks],
        posterior_cov=res.cov,
        edf_total=res.edf,
        edf_terms=edf_terms,
        edf_corrected=edf_corr,
        log_pl=res.log_pl,
        aic_corrected=-2.0 * res.log_pl + 2.0 * edf_corr,
        re_sd=re_sd,
        convergence=conv,
        design=design,
        term_specs=term_specs,
        covariate_names=covariate_names,
        separated=separated,
        at_boundary=at_boundary,
        warnings=warn,
    )


def corrected_aic(fit: FitResult) -> float:
    return -2.0 * fit.log_pl + 2.0 * fit.edf_corrected


def evaluate_tv_effect(fit: FitResult, term: str, grid) -> SmoothCurve:
    """Fitted time-varying coefficient with pointwise 95% intervals."""
    block = fit.block(term)
    if block.kind != "time_varying":
        raise ValueError(f"term {term!r} is not time-varying")
    grid = np.asarray(grid, dtype=float)
    B = block.basis(grid)
    sl = fit.design.terms[term]
    coef = fit.gamma_hat[sl]
    V = fit.posterior_cov[sl, sl]
    value = B @ coef
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", B, V, B), 0.0))
    notes = []
    if not np.all(block.basis.in_window(grid)):
        lo, hi = block.basis.window
        notes.append(f"extrapolation: grid extends outside the observation window [{lo:g}, {hi:g}]")
        warnings.warn(notes[-1])
    return SmoothCurve(grid, value, se, value - 1.96 * se, value + 1.96 * se, notes)
