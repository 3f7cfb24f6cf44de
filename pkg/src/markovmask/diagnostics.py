"""Conditioning and backward-stability bounds for computed expectations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import errors
from .chain import StochasticChain, classify_states, make_distribution
from .engine import SetupCache, expect, setup
from .masks import Mask

EXACT_NORM_MAX_T = 64
DEFAULT_C = 12

UNIT_ROUNDOFF = {
    "double": 2.0 ** -53,
    "single": 2.0 ** -24,
    "half": 2.0 ** -11,
}


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and math.isinf(v):
            out[k] = "inf" if v > 0 else "-inf"
        elif isinstance(v, float) and math.isnan(v):
            out[k] = "nan"
        else:
            out[k] = v
    return out


def inverse_norm_2(cache: SetupCache, method: str = "auto", rtol: float = 1e-6,
                   maxiter: int = 200) -> float:
    """Largest singular value of ``(I - A_T)^{-1}``.

    Power iteration on ``x -> S^{-1} S^{-T} x`` with triangular solves from
    the cached factorization. ``method="auto"`` switches to a full SVD when
    ``t <= 64``.
    """
    fact = cache.factorization
    t = fact.t
    if t == 0:
        raise errors.NoTransientStates()
    if method == "svd" or (method == "auto" and t <= EXACT_NORM_MAX_T):
        return float(np.linalg.norm(fact.inverse(), 2))
    if method not in ("auto", "power"):
        raise ValueError("method must be 'auto', 'power' or 'svd'")
    x = np.full(t, 1.0 / math.sqrt(t))
    lam = 0.0
    for _ in range(maxiter):
        y = fact.gram_inverse_apply(x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    return math.sqrt(lam)


@dataclass(frozen=True)
class ConditionReport:
    kappa: float
    kappa_M_bound: float
    kappa_T_bound: float
    kappa_mu_bound: float
    inv_norm_2: float
    frob_M: float
    frob_T: float
    cos_theta: float
    expectation: float
    zero_expectation: bool
    solver: str

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def frobenius_T(chain: StochasticChain) -> float:
    return float(np.linalg.norm(chain.structure[2]))


def condition_bounds(chain: StochasticChain, mask: Mask, cache: SetupCache,
                     expectation: float | None = None) -> ConditionReport:
    """Relative condition numbers of ``tr(M D T^*)`` in ``M``, ``T``, ``mu``.

    A zero expectation gives ``kappa = inf`` and sets ``zero_expectation``.
    """
    if cache.chain_token != chain.token:
        raise errors.ChainMismatch("setup belongs to another chain")
    psi = expect(cache, mask).value if expectation is None else float(expectation)
    fM = mask.frobenius(chain)
    fT = frobenius_T(chain)
    inv = inverse_norm_2(cache)
    zero = psi == 0.0
    kappa = math.inf if zero else fM * fT * inv / abs(psi)
    kappa_T = math.inf if zero else kappa * (1.0 + fT * inv)
    td = float(np.linalg.norm(cache.R_vals))
    cos = psi / (td * fM) if td * fM > 0 else 0.0
    return ConditionReport(kappa, kappa, kappa_T, kappa, inv, fM, fT, cos, psi,
                           zero, cache.solver)


@dataclass(frozen=True)
class StabilityReport:
    n: int
    t: int | None
    u: float
    c: float
    gamma_n2: float
    gamma_tilde_n2: float
    deltaT_bound: float
    deltaM_bound: float
    applicable: bool
    solver: str = "householder"

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _gamma(k: float, u: float) -> float:
    ku = k * u
    return ku / (1.0 - ku) if ku < 1.0 else math.inf


def stability_bounds(n: int, t: int | None = None, c: float = DEFAULT_C,
                     precision: str | float = "double",
                     solver: str = "householder") -> StabilityReport:
    """Column-wise relative backward-error bounds for the Householder path.

    ``gamma_k = k u / (1 - k u)`` and ``gamma~_k = c k u / (1 - c k u)``;
    ``Delta T`` is bounded by ``2 sqrt(n) gamma~_{n^2}`` and ``Delta M`` by
    ``(1 + 2 sqrt(n)) gamma~_{n^2} / sqrt(1 - 4 sqrt(n) gamma~_{n^2})``,
    valid only while ``1 - 4 sqrt(n) gamma~_{n^2} > 0``.
    """
    if n < 1:
        raise errors.ValidationError("n must be at least 1")
    if c < 1:
        raise errors.ValidationError("c must be at least 1")
    u = UNIT_ROUNDOFF[precision] if isinstance(precision, str) else float(precision)
    if u < 0:
        raise errors.ValidationError("unit roundoff must be nonnegative")
    k = float(n) ** 2
    g = _gamma(k, u)
    gt = _gamma(c * k, u)
    rn = math.sqrt(n)
    margin = 1.0 - 4.0 * rn * gt if math.isfinite(gt) else -math.inf
    applicable = margin > 0
    dT = 2.0 * rn * gt
    dM = (1.0 + 2.0 * rn) * gt / math.sqrt(margin) if applicable else math.inf
    return StabilityReport(n, t, u, c, g, gt, dT, dM, applicable, solver)


# ---------------------------------------------------------------------------
# empirical check of the conditioning bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationReport:
    delta: float
    samples: int
    expectation: float
    ratio_M: float
    ratio_T: float
    ratio_mu: float
    ratio_M_aligned: float
    bound_M: float
    bound_T: float
    bound_mu: float

    @property
    def within_bounds(self) -> bool:
        return (self.ratio_M <= 1.1 * self.bound_M
                and self.ratio_T <= 1.1 * self.bound_T
                and self.ratio_mu <= 1.1 * self.bound_mu)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["within_bounds"] = self.within_bounds
        return _jsonable(d)


def _effective_mask(mask: Mask, chain: StochasticChain) -> np.ndarray:
    if mask.is_explicit:
        return mask.dense()
    rows, cols, _ = chain.structure
    M = np.zeros((chain.n, chain.n))
    M[rows, cols] = mask.on(chain)
    return M


def _trace_formula(T, M, mu, trans):
    """Dense ``sum_{j transient} nu_j M_j . T_j`` for raw arrays."""
    A = T[np.ix_(trans, trans)]
    nu_t = np.linalg.solve(np.eye(len(trans)) - A, mu[trans])
    return float(np.sum(nu_t * np.sum(M[:, trans] * T[:, trans], axis=0)))


def empirical_perturbation_check(chain: StochasticChain, mask: Mask, mu,
                                 delta: float = 1e-8, samples: int = 32,
                                 seed: int = 0) -> PerturbationReport:
    """Measure relative sensitivity of the expectation to random
    perturbations of size ``delta`` and compare with the condition bounds.

    ``T`` perturbations stay on the structural nonzeros with zero column
    sums; ``M`` and ``mu`` perturbations are unconstrained. Dense arithmetic,
    so keep ``n`` small.
    """
    if delta > 1e-6:
        raise errors.ValidationError("delta must be at most 1e-6")
    cl = classify_states(chain)
    mu = make_distribution(mu, chain.n).mu
    cache = setup(chain, cl, mu)
    T = chain.dense()
    M = _effective_mask(mask, chain)
    trans = cl.transient_states
    psi = _trace_formula(T, M, mu, trans)
    if psi == 0.0:
        raise errors.ValidationError("expectation is zero; relative "
                                     "perturbations are undefined")
    report = condition_bounds(chain, mask, cache, psi)
    rng = np.random.default_rng(seed)
    nM, nT, nmu = np.linalg.norm(M), np.linalg.norm(T), np.linalg.norm(mu)
    rows, cols, _ = chain.structure

    def rel(new):
        return abs(new - psi) / abs(psi)

    rM = rT = rmu = 0.0
    aligned = 0.0
    if delta > 0:
        for _ in range(samples):
            E = rng.standard_normal(M.shape)
            E *= delta / np.linalg.norm(E)
            rM = max(rM, rel(_trace_formula(T, M + E, mu, trans)) / (delta / nM))

            e = rng.standard_normal(len(rows))
            e -= (np.bincount(cols, e, chain.n) / np.bincount(cols, None, chain.n))[cols]
            norm = np.linalg.norm(e)
            if norm > 0:
                dT = np.zeros_like(T)
                dT[rows, cols] = e * (delta / norm)
                rT = max(rT, rel(_trace_formula(T + dT, M, mu, trans)) / (delta / nT))

            d = rng.standard_normal(chain.n)
            d *= delta / np.linalg.norm(d)
            rmu = max(rmu, rel(_trace_formula(T, M, mu + d, trans)) / (delta / nmu))
        E = M * (delta / nM)
        aligned = rel(_trace_formula(T, M + E, mu, trans)) / (delta / nM)
    return PerturbationReport(delta, samples, psi, float(rM), float(rT),
                              float(rmu), float(aligned),
                              report.kappa_M_bound, report.kappa_T_bound,
                              report.kappa_mu_bound)
