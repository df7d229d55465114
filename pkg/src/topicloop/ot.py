"""Discrete optimal transport between word distributions.

Cost matrices come from cosine distances between word embeddings; the
solver is log-domain Sinkhorn for the entropically regularized problem

    min_P  <C, P> + epsilon * sum_ij P_ij (log P_ij - 1)
    s.t.   P 1 = a,  P^T 1 = b,  P >= 0.

The optimal plan factors as P = diag(u) K diag(v) with K = exp(-C/epsilon),
and the dual potentials f = epsilon*log(u), g = epsilon*log(v) satisfy the
envelope identity: the gradient of the regularized optimum with respect to
the source marginal a is f (up to the usual constant shift, fixed here by
centering f to mean zero).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import rel_entr

from .errors import LengthMismatch, MissingEmbedding, NumericalOverflow, ZeroVector

DEFAULT_EPSILON = 0.05
DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6

MARGINAL_FLOOR = 1e-9


@dataclass(frozen=True)
class CostMatrix:
    """Ground cost between two word lists; entries in [0, 2]."""

    values: np.ndarray

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class OtResult:
    """Solution of one entropic transport problem.

    `cost` is the transport part <C, P> of the objective evaluated at the
    entropic plan. `dual_f` is centered to mean zero (the shift is absorbed
    into `dual_g`), making it the canonical source-marginal gradient.
    """

    cost: float
    plan: np.ndarray
    dual_f: np.ndarray
    dual_g: np.ndarray
    iterations: int
    converged: bool
    epsilon: float


class DivergenceKind(str, Enum):
    OT = "OT"
    KL = "KL"
    JSD = "JSD"
    HD = "HD"
    TVD = "TVD"


def cost_matrix(src_words, dst_words, emb) -> CostMatrix:
    """Pairwise cosine distances between embeddings of two word lists.

    C_ij = 1 - <e_i, e_j> / (||e_i|| ||e_j||), clamped to [0, 2]. Identical
    embeddings give exactly 0.
    """
    for w in list(src_words) + list(dst_words):
        if w not in emb:
            raise MissingEmbedding(f"no embedding for {w!r}")
    src = emb.matrix(src_words)
    dst = emb.matrix(dst_words)
    src_norm = np.linalg.norm(src, axis=1)
    dst_norm = np.linalg.norm(dst, axis=1)
    if np.any(src_norm < 1e-12) or np.any(dst_norm < 1e-12):
        bad = [w for w, n in zip(list(src_words) + list(dst_words),
                                 np.concatenate([src_norm, dst_norm])) if n < 1e-12]
        raise ZeroVector(f"zero-norm embedding(s): {bad}")
    sims = (src @ dst.T) / np.outer(src_norm, dst_norm)
    values = np.clip(1.0 - sims, 0.0, 2.0)
    return CostMatrix(values=values)


def _floor_marginal(p: np.ndarray) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=float), MARGINAL_FLOOR)
    return p / p.sum()


def _lse(m: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp; leaner than scipy's on tiny matrices."""
    mx = m.max(axis=axis, keepdims=True)
    return np.squeeze(mx, axis=axis) + np.log(np.exp(m - mx).sum(axis=axis))


def sinkhorn(a, b, c: CostMatrix, epsilon: float = DEFAULT_EPSILON,
             max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> OtResult:
    """Solve entropic OT between marginals `a` (length N) and `b` (length M).

    Log-domain alternating updates on the dual potentials:

        f_i <- epsilon*log(a_i) - epsilon*LSE_j[(g_j - C_ij)/epsilon]
        g_j <- epsilon*log(b_j) - epsilon*LSE_i[(f_i - C_ij)/epsilon]

    until the worst marginal violation of P = exp((f + g - C)/epsilon)
    drops below `tol` or `max_iter` is reached (NotConverged is a flag on
    the result, not an error). Marginals are floored at 1e-9 and
    renormalized so the logs stay finite.

    Raises NumericalOverflow if any potential becomes non-finite.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    a = _floor_marginal(a)
    b = _floor_marginal(b)
    cm = np.asarray(c.values, dtype=float)
    if cm.shape != (a.size, b.size):
        raise LengthMismatch(
            f"cost matrix {cm.shape} does not match marginals ({a.size}, {b.size})")

    log_a = np.log(a)
    log_b = np.log(b)
    inv_eps = 1.0 / epsilon
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    converged = False
    it = 0
    check_every = 10
    for it in range(1, max_iter + 1):
        f = epsilon * (log_a - _lse((g[None, :] - cm) * inv_eps, axis=1))
        g = epsilon * (log_b - _lse((f[:, None] - cm) * inv_eps, axis=0))
        if it % check_every == 0 or it == max_iter:
            if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
                raise NumericalOverflow(
                    f"non-finite dual potential at iteration {it} "
                    f"(epsilon={epsilon})")
            plan = np.exp((f[:, None] + g[None, :] - cm) * inv_eps)
            err = max(np.abs(plan.sum(axis=1) - a).max(),
                      np.abs(plan.sum(axis=0) - b).max())
            if err < tol:
                converged = True
                break
    plan = np.exp((f[:, None] + g[None, :] - cm) * inv_eps)
    if not np.all(np.isfinite(plan)):
        raise NumericalOverflow(f"non-finite transport plan (epsilon={epsilon})")
    cost = float(np.sum(cm * plan))
    cost = max(cost, 0.0)
    shift = f.mean()
    return OtResult(cost=cost, plan=plan, dual_f=f - shift, dual_g=g + shift,
                    iterations=it, converged=converged, epsilon=epsilon)


def entropic_value(result: OtResult, c: CostMatrix) -> float:
    """Regularized objective <C,P> + epsilon*sum P(log P - 1) at the plan.

    This is the value whose gradient with respect to the source marginal
    equals the centered dual potential; the finite-difference tests probe
    this quantity, not the bare transport cost.
    """
    p = result.plan
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - 1.0), 0.0)
    return float(np.sum(np.asarray(c.values) * p) + result.epsilon * plogp.sum())


def ot_grad_source(result: OtResult) -> np.ndarray:
    """Gradient of the entropic OT value with respect to the source marginal.

    Returns the centered dual potential f: perturbing `a` along any zero-sum
    direction d changes the regularized optimum by approximately f.d.
    """
    if not result.converged:
        warnings.warn("sinkhorn did not converge; marginal gradient is approximate",
                      stacklevel=2)
    return result.dual_f


def divergence(p, q, kind: DivergenceKind, smoothing: float = 1e-6) -> float:
    """Divergence between two same-length probability vectors.

    KL smooths and renormalizes both arguments (additive `smoothing`);
    JSD/HD/TVD use the raw vectors with the 0*log(0)=0 convention.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise LengthMismatch(f"{p.shape} vs {q.shape}")
    kind = DivergenceKind(kind)
    if kind is DivergenceKind.KL:
        ps = (p + smoothing) / (p + smoothing).sum()
        qs = (q + smoothing) / (q + smoothing).sum()
        return float(rel_entr(ps, qs).sum())
    if kind is DivergenceKind.JSD:
        m = 0.5 * (p + q)
        return float(0.5 * rel_entr(p, m).sum() + 0.5 * rel_entr(q, m).sum())
    if kind is DivergenceKind.HD:
        return float(np.linalg.norm(np.sqrt(p) - np.sqrt(q)) / np.sqrt(2.0))
    if kind is DivergenceKind.TVD:
        return float(0.5 * np.abs(p - q).sum())
    raise ValueError(f"divergence() does not handle {kind}")


def divergence_grad_source(p, q, kind: DivergenceKind, smoothing: float = 1e-6) -> np.ndarray:
    """Gradient of `divergence(p, q, kind)` with respect to p.

    All kinds apply the KL-style smoothing internally so the gradient stays
    finite on union supports where p has exact zeros; TVD uses the sign
    subgradient.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise LengthMismatch(f"{p.shape} vs {q.shape}")
    kind = DivergenceKind(kind)
    n = p.size
    if kind is DivergenceKind.KL:
        ps = (p + smoothing) / (p + smoothing).sum()
        qs = (q + smoothing) / (q + smoothing).sum()
        inner = np.log(ps / qs) + 1.0
        total = (p + smoothing).sum()
        # d ps_i / d p_j = (delta_ij - ps_i) / total
        return (inner - inner @ ps) / total
    if kind is DivergenceKind.JSD:
        ps = np.maximum(p, smoothing)
        m = 0.5 * (ps + np.maximum(q, smoothing))
        return 0.5 * np.log(ps / m)
    if kind is DivergenceKind.HD:
        ps = np.maximum(p, smoothing)
        hd = divergence(ps / ps.sum(), q, DivergenceKind.HD)
        if hd < 1e-12:
            return np.zeros(n)
        return (np.sqrt(ps) - np.sqrt(q)) / (2.0 * np.sqrt(2.0) * hd * np.sqrt(ps))
    if kind is DivergenceKind.TVD:
        return 0.5 * np.sign(p - q)
    raise ValueError(f"divergence_grad_source() does not handle {kind}")


def union_support(src_words, src_weights, dst_words):
    """Embed two word distributions over the union of their supports.

    Source mass sits at its own words, the target is uniform over
    `dst_words`, and both are zero elsewhere. Returns (union_words, p, q)
    plus the positions of the source words inside the union so gradients
    can be scattered back.
    """
    union = list(src_words)
    seen = set(src_words)
    for w in dst_words:
        if w not in seen:
            union.append(w)
            seen.add(w)
    p = np.zeros(len(union))
    for w, t in zip(src_words, src_weights):
        p[union.index(w)] = t
    q = np.zeros(len(union))
    u = 1.0 / len(dst_words)
    for w in dst_words:
        q[union.index(w)] += u
    src_positions = [union.index(w) for w in src_words]
    return union, p, q, src_positions
