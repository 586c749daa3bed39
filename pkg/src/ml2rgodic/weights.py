"""Bias-cancellation weight systems: closed forms, series, and a Vandermonde oracle.

The depth-R estimator needs weights W_1..W_R with W_1 = 1 and, for each
l = 2..R,

    W_1 q_1^{-a(l-1)} + (M^{1-l} - 1) sum_{r=2..R} W_r M^{-(r-2)(l-1)} q_r^{-a(l-1)} = 0.

Three independent routes are provided: the uniform-resizer closed product,
the general series, and a direct solve of the equivalent well-scaled
Vandermonde system.  The derived coefficients Wt1/Wt2 extend the system's
left-hand side to rows l = R+1 and R+2; they control the residual bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import mpmath
import numpy as np

SERIES_TOL = 1e-14
SERIES_CAP = 200
ADMISSIBILITY_GAP = 1e-9
# the series terms and the Vandermonde elimination both suffer heavy sign
# cancellation away from uniform resizers (individual terms reach ~1e6 while
# the weights stay moderate), so the general solvers run at extended
# precision and round once at the end
WORK_DPS = 30


@dataclass(frozen=True)
class WeightSet:
    R: int
    M: int
    a: float
    q: np.ndarray
    W: np.ndarray
    wt1: float
    wt2: float
    w_small: Optional[np.ndarray] = None


def _check_args(R: int, M: int, a: float):
    if R < 2:
        raise ValueError("depth R must be >= 2")
    if M < 2:
        raise ValueError("root M must be >= 2")
    if not 0 < a < 1:
        raise ValueError("step exponent a must be in (0,1)")


def check_admissible(R: int, M: int, a: float, q: Sequence[float]):
    """Reject q whose transformed Vandermonde nodes nearly coincide.

    The solvability condition is that the quantities q_r / M^(r/a) are
    pairwise distinct; the comparison runs in log space so that a relative
    gap below ADMISSIBILITY_GAP is rejected regardless of magnitude.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (R,):
        raise ValueError(f"q must have length R={R}")
    if np.any(q <= 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("resizers must be positive and sum to 1")
    u = np.log(q) - np.arange(1, R + 1) / a * math.log(M)
    u = np.sort(u)
    if np.min(np.diff(u)) < ADMISSIBILITY_GAP:
        raise ValueError("inadmissible resizers: q_r/M^(r/a) nearly coincide")
    return q


def wtilde(R: int, M: int, a: float, q: Sequence[float], W: Sequence[float], i: int) -> float:
    """Row l = R+i of the system's left-hand side evaluated at the weights.

    This is the defining expression for the residual-bias coefficients
    Wt_{R+1} (i=1) and Wt_{R+2} (i=2).
    """
    q = np.asarray(q, dtype=float)
    W = np.asarray(W, dtype=float)
    l = R + i
    terms = [W[0] * q[0] ** (-a * (l - 1))]
    for r in range(2, R + 1):
        terms.append((float(M) ** (1 - l) - 1.0) * W[r - 1]
                     * float(M) ** (-(r - 2) * (l - 1)) * q[r - 1] ** (-a * (l - 1)))
    return math.fsum(terms)


def solve_uniform(R: int, M: int, a: float) -> WeightSet:
    """Closed-form weights for q_r = 1/R; they depend on M only.

    w_r = prod_{s != r} 1/(1 - M^(s-r)) and W_r = w_r + ... + w_R.  The
    residual-bias coefficients specialize to
    Wt1 = (-1)^(R-1) R^(aR) M^(-R(R-1)/2) and
    Wt2 = (-1)^(R+1) R^(a(R+1)) M^(-R(R-1)/2) (1-M^-R)/(1-M^-1),
    which matches the defining rows of the system (the published closed form
    for Wt2 carries a stray -M^R factor; see the tests against wtilde()).
    """
    _check_args(R, M, a)
    Mf = float(M)
    w = np.array([
        math.prod(1.0 / (1.0 - Mf ** (s - r)) for s in range(1, R + 1) if s != r)
        for r in range(1, R + 1)
    ])
    W = np.cumsum(w[::-1])[::-1]
    q = np.full(R, 1.0 / R)
    pref = float(R) ** (a * R) * Mf ** (-R * (R - 1) / 2.0)
    wt1 = (-1.0) ** (R - 1) * pref
    wt2 = (-1.0) ** (R + 1) * pref * float(R) ** a * (1.0 - Mf ** (-R)) / (1.0 - 1.0 / Mf)
    return WeightSet(R=R, M=M, a=a, q=q, W=W, wt1=wt1, wt2=wt2, w_small=w)


def _series_sum(term_fn, tol, cap: int, min_k: int, context: str):
    # individual terms can vanish exactly for k < R (factors hitting M^0),
    # so geometric decay only sets in after min_k; require two consecutive
    # small terms before trusting convergence
    partial = mpmath.mpf(0)
    small = 0
    for k in range(cap):
        t = term_fn(k)
        partial += t
        small = small + 1 if abs(t) < tol * max(abs(partial), mpmath.mpf("1e-300")) else 0
        if k >= min_k and small >= 2:
            return partial
    raise ValueError(f"{context}: series did not converge within {cap} terms")


def _mp_pows(q, a):
    qm = [mpmath.mpf(v) for v in q]
    return qm, [mpmath.power(v, a) for v in qm]


def solve_general(R: int, M: int, a: float, q: Sequence[float], tol: float = SERIES_TOL) -> WeightSet:
    """Series solution for general admissible resizers.

    Each weight is a geometrically convergent series in M^-k; truncation
    stops when the term drops below tol * |partial sum| (hard cap 200).
    """
    _check_args(R, M, a)
    q = check_admissible(R, M, a, q)
    if tol <= 0:
        raise ValueError("tol must be positive")
    with mpmath.workdps(WORK_DPS):
        Mf = mpmath.mpf(M)
        qm, qa = _mp_pows(q, a)
        ratio_a = [qa[r] / qa[0] for r in range(R)]   # (q_r/q_1)^a at index r-1
        inv_a = [qa[0] / qa[r] for r in range(R)]     # (q_1/q_r)^a at index r-1
        mtol = mpmath.mpf(tol) ** 2                   # extended precision, square the cut

        W = np.empty(R)
        W[0] = 1.0
        for r in range(2, R + 1):
            denom = mpmath.mpf(1)
            for s in range(2, R + 1):
                if s != r:
                    denom *= 1 - Mf ** (s - r) * (qa[s - 1] / qa[r - 1])

            def term(k, r=r, denom=denom):
                num = mpmath.mpf(1)
                for s in range(2, R + 1):
                    if s != r:
                        num *= 1 - Mf ** (s - 2 - k) * ratio_a[s - 1]
                return Mf ** (-k) * num / denom

            W[r - 1] = float(Mf ** (r - 2) * ratio_a[r - 1]
                             * _series_sum(term, mtol, SERIES_CAP, R, f"W_{r}"))

        def wt1_term(k):
            prod = mpmath.mpf(1)
            for r in range(R - 1):
                prod *= 1 - Mf ** (k - r) * inv_a[r + 1]
            return Mf ** (-k * R) * prod

        wt1 = float((1 - Mf ** (-R)) * qa[0] ** (-R)
                    * _series_sum(wt1_term, mtol, SERIES_CAP, R, "Wt1"))

        def wt2_term(k):
            prod = mpmath.mpf(1)
            s = mpmath.mpf(1)
            for r in range(R - 1):
                f = Mf ** (k - r) * inv_a[r + 1]
                prod *= 1 - f
                s += f
            return Mf ** (-k * (R + 1)) * s * prod

        wt2 = float((1 - Mf ** (-(R + 1))) * qa[0] ** (-(R + 1))
                    * _series_sum(wt2_term, mtol, SERIES_CAP, R, "Wt2"))
    return WeightSet(R=R, M=M, a=a, q=q, W=W, wt1=wt1, wt2=wt2)


def solve_oracle(R: int, M: int, a: float, q: Sequence[float]) -> WeightSet:
    """Direct dense solve of the transformed (well-scaled) Vandermonde system.

    In the variables Wbar_s = W_{s+1} x_s with nodes
    x_s = M^-(s-1) (q_1/q_{s+1})^a the system reads
    sum_s Wbar_s x_s^(l-1) = 1/(1 - M^-l) for l = 1..R-1; the elimination
    uses partial pivoting at extended precision.  Wt1/Wt2 come straight
    from the defining rows l = R+1, R+2.
    """
    _check_args(R, M, a)
    q = check_admissible(R, M, a, q)
    with mpmath.workdps(WORK_DPS):
        Mf = mpmath.mpf(M)
        qm, qa = _mp_pows(q, a)
        x = [Mf ** (-(s - 1)) * qa[0] / qa[s] for s in range(1, R)]
        V = mpmath.matrix(R - 1, R - 1)
        rhs = mpmath.matrix(R - 1, 1)
        for l in range(1, R):
            for s in range(R - 1):
                V[l - 1, s] = x[s] ** (l - 1)
            rhs[l - 1] = 1 / (1 - Mf ** (-l))
        try:
            wbar = mpmath.lu_solve(V, rhs)
        except ZeroDivisionError as e:
            raise ValueError("singular weight system (inadmissible resizers)") from e
        Wm = [mpmath.mpf(1)] + [wbar[s] / x[s] for s in range(R - 1)]
        W = np.array([float(w) for w in Wm])

        def row(l):
            acc = Wm[0] * qa[0] ** (-(l - 1))
            for r in range(2, R + 1):
                acc += (Mf ** (1 - l) - 1) * Wm[r - 1] * Mf ** (-(r - 2) * (l - 1)) * qa[r - 1] ** (-(l - 1))
            return float(acc)

        wt1, wt2 = row(R + 1), row(R + 2)
    return WeightSet(R=R, M=M, a=a, q=q, W=W, wt1=wt1, wt2=wt2)


def system_residual(ws: WeightSet) -> float:
    """max_{l=2..R} |l-th system row at W| plus |W_1 - 1|."""
    R, M, a, q, W = ws.R, ws.M, ws.a, ws.q, ws.W
    Mf = float(M)
    worst = 0.0
    for l in range(2, R + 1):
        terms = [W[0] * q[0] ** (-a * (l - 1))]
        for r in range(2, R + 1):
            terms.append((Mf ** (1 - l) - 1.0) * W[r - 1]
                         * Mf ** (-(r - 2) * (l - 1)) * q[r - 1] ** (-a * (l - 1)))
        worst = max(worst, abs(math.fsum(terms)))
    return worst + abs(W[0] - 1.0)


def psi(ws: WeightSet) -> float:
    """Second-order variance multiplier (4R^2/(4R^2-1)) sum_{r>=2} W_r^2 (uniform resizers)."""
    R = ws.R
    return 4.0 * R * R / (4.0 * R * R - 1.0) * math.fsum(float(w) ** 2 for w in ws.W[1:])


def psi_rm(R: int, M: int) -> float:
    """psi for the uniform-resizer weights (they do not depend on a)."""
    return psi(solve_uniform(R, M, 0.5))


def psi_bold(M: int, r_cap: int = 40) -> float:
    """sup over R of psi(R, M)/R.

    The sequence rises to its max at small R and then decays monotonically
    toward its large-R limit, so the sup is trustworthy as long as the argmax
    sits well inside the scanned range.
    """
    if M < 2:
        raise ValueError("root M must be >= 2")
    vals = np.array([psi_rm(R, M) / R for R in range(2, r_cap + 1)])
    arg = int(np.argmax(vals))
    if arg >= vals.size - 10:
        raise ValueError("psi(R,M)/R still rising near r_cap; increase r_cap")
    return float(vals[arg])


def bias1_coefficients(ws: WeightSet, l: int) -> float:
    """Coefficient multiplying the common step-sum bracket in the leading level-mismatch bias.

    Returns W_1 + sum_{r=2..R} W_r m_{r,l} with m_{r,l} = (M^(1-l)-1) M^(-(r-2)(l-1)).
    Uniform resizers zero it for every l = 2..R (it is then the system row itself).
    """
    if not 2 <= l <= ws.R:
        raise ValueError(f"l must be in 2..R={ws.R}")
    Mf = float(ws.M)
    terms = [float(ws.W[0])]
    for r in range(2, ws.R + 1):
        m_rl = (Mf ** (1 - l) - 1.0) * Mf ** (-(r - 2) * (l - 1))
        terms.append(float(ws.W[r - 1]) * m_rl)
    return math.fsum(terms)
