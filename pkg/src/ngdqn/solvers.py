"""Matrix-free Krylov solvers for the damped natural-gradient system.

Both solvers work with a callable ``apply(v)`` implementing the symmetric
operator G + d*I and start from x0 = 0.  Convergence is judged on the
recomputed relative residual |Ax - b| / |b|, never the solver's internal
estimate.  The MINRES-QLP implementation follows Choi, Paige & Saunders
(SIAM J. Sci. Comput., 2011): Lanczos tridiagonalization with a QLP
decomposition, returning minimum-length solutions for singular consistent
systems.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .fisher import gauss_jordan_inverse


class SolverError(RuntimeError):
    pass


class SolverDivergence(SolverError):
    """A non-finite iterate appeared during the solve."""


class OperatorNotSpd(SolverError):
    """CG observed p^T A p <= 0; the operator is not positive definite."""


class SolverKind(enum.Enum):
    LINEAR_CG = "lincg"
    MINRES_QLP = "minres_qlp"
    EXPLICIT_INVERSE = "explicit"


@dataclass(frozen=True)
class SolveConfig:
    kind: SolverKind = SolverKind.MINRES_QLP
    tol: float = 1e-6
    max_iter: int = 250

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be > 0 and max_iter >= 1")


@dataclass
class SolveReport:
    x: np.ndarray
    residual_norm: float  # |Ax - b|, recomputed post-hoc
    iterations: int
    converged: bool
    wall_time: float
    residual_history: list = field(default_factory=list, repr=False)


def _zero_report(b: np.ndarray, t0: float) -> SolveReport:
    return SolveReport(
        x=np.zeros_like(b),
        residual_norm=float(np.linalg.norm(b)),
        iterations=0,
        converged=True,
        wall_time=time.perf_counter() - t0,
    )


def lincg_solve(apply, b: np.ndarray, cfg: SolveConfig) -> SolveReport:
    """Conjugate gradients on an SPD operator, x0 = 0."""
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm < 1e-15:
        return _zero_report(b, t0)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    history = [bnorm]
    iters = 0
    for _ in range(cfg.max_iter):
        ap = apply(p)
        pap = float(p @ ap)
        if not np.isfinite(pap):
            raise SolverDivergence("non-finite curvature p^T A p in CG")
        if pap <= 0.0:
            raise OperatorNotSpd(f"p^T A p = {pap:.3e} <= 0; operator not SPD")
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise SolverDivergence("non-finite residual in CG")
        iters += 1
        history.append(np.sqrt(rs_new))
        if np.sqrt(rs_new) <= cfg.tol * bnorm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    residual = float(np.linalg.norm(apply(x) - b))
    return SolveReport(
        x=x,
        residual_norm=residual,
        iterations=iters,
        converged=residual <= cfg.tol * bnorm,
        wall_time=time.perf_counter() - t0,
        residual_history=history,
    )


def _sym_givens(a: float, b: float):
    """Stable symmetric Givens rotation: returns c, s, r with r = sqrt(a^2+b^2)."""
    if b == 0.0:
        c = 1.0 if a == 0.0 else np.sign(a)
        return float(c), 0.0, abs(a)
    if a == 0.0:
        return 0.0, float(np.sign(b)), abs(b)
    if abs(b) > abs(a):
        t = a / b
        s = np.sign(b) / np.sqrt(1.0 + t * t)
        c = s * t
        return float(c), float(s), float(b / s)
    t = b / a
    c = np.sign(a) / np.sqrt(1.0 + t * t)
    s = c * t
    return float(c), float(s), float(a / c)


def minres_qlp_solve(
    apply,
    b: np.ndarray,
    cfg: SolveConfig,
    maxxnorm: float = 1e7,
    acondlim: float = 1e15,
    trancond: float = 1e7,
) -> SolveReport:
    """MINRES-QLP for symmetric, possibly singular systems, x0 = 0.

    For singular consistent systems the returned iterate is the
    minimum-length solution (no null-space component).
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    beta1 = float(np.linalg.norm(b))
    if beta1 < 1e-15:
        return _zero_report(b, t0)

    flag0 = -2
    flag = flag0
    iters = 0
    qlp_iter = 0
    beta = 0.0
    tau = taul = 0.0
    phi = beta1
    betan = beta1
    gmin = gminl = 0.0
    cs, sn = -1.0, 0.0
    cr1, sr1 = -1.0, 0.0
    cr2, sr2 = -1.0, 0.0
    dltan = eplnn = 0.0
    gama = gamal = gamal2 = 0.0
    eta = etal = etal2 = 0.0
    vepln = veplnl = veplnl2 = 0.0
    ul3 = ul2 = ul = u = 0.0
    rnorm = betan
    xnorm = xl2norm = 0.0
    axnorm = 0.0
    anorm = 0.0
    acond = 1.0
    relres = rnorm / (beta1 + 1e-50)
    gamal_qlp = vepln_qlp = gama_qlp = ul_qlp = u_qlp = 0.0

    r1 = np.zeros(n)
    r2 = b.copy()
    r3 = b.copy()
    x = np.zeros(n)
    xl2 = np.zeros(n)
    w = np.zeros(n)
    wl = np.zeros(n)
    wl2 = np.zeros(n)

    while flag == flag0 and iters < cfg.max_iter:
        iters += 1
        betal = beta
        beta = betan
        v = r3 / beta
        r3 = apply(v)
        if iters > 1:
            r3 = r3 - r1 * (beta / betal)
        alfa = float(r3 @ v)
        r3 = r3 - r2 * (alfa / beta)
        r1 = r2
        r2 = r3
        betan = float(np.linalg.norm(r3))
        if not np.isfinite(betan) or not np.isfinite(alfa):
            raise SolverDivergence("non-finite Lanczos quantity in MINRES-QLP")
        if iters == 1 and betan == 0.0:
            if alfa == 0.0:
                flag = 0
                break
            flag = -1
            x = b / alfa
            break
        pnorm = np.sqrt(betal**2 + alfa**2 + betan**2)

        # previous left rotation
        dbar = dltan
        dlta = cs * dbar + sn * alfa
        epln = eplnn
        gbar = sn * dbar - cs * alfa
        eplnn = sn * betan
        dltan = -cs * betan
        dlta_qlp = dlta
        # current left rotation
        gamal3 = gamal2
        gamal2 = gamal
        gamal = gama
        cs, sn, gama = _sym_givens(gbar, betan)
        gama_tmp = gama
        taul2 = taul
        taul = tau
        tau = cs * phi
        axnorm = np.sqrt(axnorm**2 + tau**2)
        phi = sn * phi
        # previous right rotation P_{k-2,k}
        if iters > 2:
            veplnl2 = veplnl
            etal2 = etal
            etal = eta
            dlta_tmp = sr2 * vepln - cr2 * dlta
            veplnl = cr2 * vepln + sr2 * dlta
            dlta = dlta_tmp
            eta = sr2 * gama
            gama = -cr2 * gama
        # current right rotation P_{k-1,k}
        if iters > 1:
            cr1, sr1, gamal = _sym_givens(gamal, dlta)
            vepln = sr1 * gama
            gama = -cr1 * gama

        # solution-norm recurrences
        xnorml = xnorm
        ul4 = ul3
        ul3 = ul2
        if iters > 2:
            ul2 = (taul2 - etal2 * ul4 - veplnl2 * ul3) / gamal2
        if iters > 1:
            ul = (taul - etal * ul3 - veplnl * ul2) / gamal
        xnorm_tmp = np.sqrt(xl2norm**2 + ul2**2 + ul**2)
        if abs(gama) > np.finfo(float).tiny and xnorm_tmp < maxxnorm:
            u = (tau - eta * ul2 - vepln * ul) / gama
            if np.sqrt(xnorm_tmp**2 + u**2) > maxxnorm:
                u = 0.0
                flag = 6
        else:
            u = 0.0
            flag = 9
        xl2norm = np.sqrt(xl2norm**2 + ul2**2)
        xnorm = np.sqrt(xl2norm**2 + ul**2 + u**2)

        if acond < trancond and flag == flag0 and qlp_iter == 0:
            # conventional MINRES update
            wl2 = wl
            wl = w
            w = (v - epln * wl2 - dlta_qlp * wl) / gama_tmp
            if xnorm < maxxnorm:
                x = x + tau * w
            else:
                flag = 6
        else:
            # MINRES-QLP update
            qlp_iter += 1
            if qlp_iter == 1:
                xl2 = np.zeros(n)
                if iters > 1:
                    if iters > 3:
                        wl2 = gamal3 * wl2 + veplnl2 * wl + etal * w
                    if iters > 2:
                        wl = gamal_qlp * wl + vepln_qlp * w
                    w = gama_qlp * w
                    xl2 = x - wl * ul_qlp - w * u_qlp
            if iters == 1:
                wl2 = wl
                wl = v * sr1
                w = -v * cr1
            elif iters == 2:
                wl2 = wl
                wl = w * cr1 + v * sr1
                w = w * sr1 - v * cr1
            else:
                wl2 = wl
                wl = w
                w = wl2 * sr2 - v * cr2
                wl2 = wl2 * cr2 + v * sr2
                v = wl * cr1 + w * sr1
                w = wl * sr1 - w * cr1
                wl = v
            xl2 = xl2 + wl2 * ul2
            x = xl2 + wl * ul + w * u

        # next right rotation P_{k-1,k+1}
        gamal_tmp = gamal
        cr2, sr2, gamal = _sym_givens(gamal, eplnn)
        # MINRES -> MINRES-QLP transfer quantities
        gamal_qlp = gamal_tmp
        vepln_qlp = vepln
        gama_qlp = gama
        ul_qlp = ul
        u_qlp = u

        # norm and condition estimates
        abs_gama = abs(gama)
        anorm = max(anorm, pnorm, gamal, abs_gama)
        if iters == 1:
            gmin = gama
            gminl = gmin
        else:
            gminl2 = gminl
            gminl = gmin
            gmin = min(gminl2, gamal, abs_gama)
        acondl = acond
        acond = anorm / gmin if gmin > 0 else np.inf
        rnorml = rnorm
        relresl = relres
        if flag != 9:
            rnorm = phi
        relres = rnorm / (anorm * xnorm + beta1)
        rootl = np.sqrt(gbar**2 + dltan**2)
        arnorml = rnorml * rootl
        rel_ares_l = rootl / anorm if anorm > 0 else 0.0

        # stopping tests
        epsx = anorm * xnorm * np.finfo(float).eps
        if flag in (flag0, 9):
            t1 = 1.0 + relres
            t2 = 1.0 + rel_ares_l
            if iters >= cfg.max_iter:
                flag = 8
            if acond >= acondlim:
                flag = 7
            if xnorm >= maxxnorm:
                flag = 6
            if epsx >= beta1:
                flag = 5
            if t2 <= 1.0:
                flag = 4
            if t1 <= 1.0:
                flag = 3
            if rel_ares_l <= cfg.tol:
                flag = 2
            if relres <= cfg.tol:
                flag = 1
        if flag in (2, 4, 6, 7):
            # least-squares / limit exit: the last step is not trustworthy
            iters -= 1
            acond = acondl
            rnorm = rnorml
            relres = relresl

    if not np.all(np.isfinite(x)):
        raise SolverDivergence("non-finite iterate in MINRES-QLP")
    residual = float(np.linalg.norm(apply(x) - b))
    return SolveReport(
        x=x,
        residual_norm=residual,
        iterations=iters,
        converged=residual <= cfg.tol * beta1,
        wall_time=time.perf_counter() - t0,
    )


def solve(apply, b: np.ndarray, cfg: SolveConfig, dense: np.ndarray | None = None) -> SolveReport:
    """Dispatch on cfg.kind.  ExplicitInverse needs the dense damped matrix."""
    if cfg.kind is SolverKind.LINEAR_CG:
        return lincg_solve(apply, b, cfg)
    if cfg.kind is SolverKind.MINRES_QLP:
        return minres_qlp_solve(apply, b, cfg)
    if dense is None:
        raise ValueError("explicit-inverse solves need the dense damped matrix")
    t0 = time.perf_counter()
    x = gauss_jordan_inverse(dense) @ b
    residual = float(np.linalg.norm(dense @ x - b))
    return SolveReport(
        x=x,
        residual_norm=residual,
        iterations=0,
        converged=residual <= cfg.tol * max(float(np.linalg.norm(b)), 1e-300),
        wall_time=time.perf_counter() - t0,
    )
