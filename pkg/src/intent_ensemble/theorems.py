"""Numerical checks of the error-ambiguity decompositions for item-level weights.

Each ``verify_*`` function evaluates both sides of one decomposition on a
concrete instance. The pair-wise and list-wise checks expand every basic
model's loss around the ensemble point with a Lagrange remainder and locate
the interpolation point by a one-dimensional search over ``theta in [0, 1]``,
so the ambiguity entering the bound is the exact second-order remainder
(not the ``theta -> 0`` shortcut used in training).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import PreconditionViolated, ValidationError
from .types import derive_pi_order, is_simplex_rows

log = logging.getLogger(__name__)

IDENTITY_TOL = 1e-9
INEQUALITY_TOL = 1e-7
_SIMPLEX_TOL = 1e-9


@dataclass
class VerifierInstance:
    scores: np.ndarray  # (N, K), basic model scores
    weights: np.ndarray  # (N, K), rows on the simplex
    levels: np.ndarray  # (N,)
    seed: int = 0
    delta: float = field(init=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if self.scores.shape != self.weights.shape or self.scores.shape[0] != self.levels.size:
            raise ValidationError("scores, weights and levels disagree in shape")
        self.delta = weight_spread(self.weights)

    @property
    def n_items(self) -> int:
        return self.scores.shape[0]

    @property
    def n_models(self) -> int:
        return self.scores.shape[1]

    @property
    def pi_order(self) -> np.ndarray:
        return derive_pi_order(self.levels, [f"{n:06d}" for n in range(self.n_items)])

    @property
    def ensemble(self) -> np.ndarray:
        return (self.weights * self.scores).sum(1)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "delta": self.delta,
            "scores": self.scores.tolist(),
            "weights": self.weights.tolist(),
            "levels": self.levels.tolist(),
        }


@dataclass
class VerificationResult:
    lhs: float
    rhs: float
    slack: float
    holds: bool
    weighted_basic_loss: float
    correction: float
    weighted_ambiguity: float
    residual: float = 0.0


def weight_spread(w: np.ndarray) -> float:
    w = np.asarray(w)
    return float(np.max(w.max(axis=0) - w.min(axis=0)))


def random_instance(seed: int, K: int, N: int, delta_cap: float = 1.0, n_levels: int = 3) -> VerifierInstance:
    """Uniform scores, Dirichlet weight rows shrunk toward their mean until the spread is within ``delta_cap``."""
    if K < 1 or N < 2:
        raise ValidationError("need K >= 1 and N >= 2")
    if not 0 <= delta_cap <= 1:
        raise ValidationError("delta_cap must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    scores = rng.uniform(0.0, 1.0, size=(N, K))
    w = rng.dirichlet(np.ones(K), size=N)
    if K == 1:
        w = np.ones((N, 1))  # avoid the draw's rounding away from exactly 1
    mean = w.mean(axis=0)
    spread = weight_spread(w)
    if spread > delta_cap:
        t = delta_cap / spread
        shrunk = mean + t * (w - mean)
        while weight_spread(shrunk) > delta_cap:  # rounding
            t *= 1 - 1e-9
            shrunk = mean + t * (w - mean)
        w = shrunk
    levels = rng.integers(0, n_levels, size=N)
    return VerifierInstance(scores, w, levels, seed)


def _check_pre(inst: VerifierInstance, nonneg: bool):
    if not is_simplex_rows(inst.weights, _SIMPLEX_TOL):
        raise PreconditionViolated("weight rows are not on the simplex")
    if nonneg and np.any(inst.scores < 0):
        raise PreconditionViolated("scores must be non-negative")


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def find_interpolation_theta(
    curvature: Callable[[np.ndarray], np.ndarray], target: np.ndarray, n_grid: int = 65, iters: int = 50
) -> np.ndarray:
    """Solve ``curvature(theta) = target`` for theta in [0, 1], elementwise.

    ``curvature`` maps an array of thetas with shape ``(G, *target.shape)`` to
    values of the same shape. A grid scan finds the first sign change, which
    bisection then refines. Where rounding leaves no sign change, the grid
    point closest to the target is returned.
    """
    target = np.asarray(target, dtype=np.float64)
    grid = np.linspace(0.0, 1.0, n_grid).reshape((-1,) + (1,) * target.ndim)
    thetas = np.broadcast_to(grid, (n_grid,) + target.shape)
    f = curvature(thetas) - target
    sign_change = np.signbit(f[:-1]) != np.signbit(f[1:])
    exact = f == 0
    has = sign_change.any(axis=0)
    first = np.argmax(sign_change, axis=0)
    lo = np.take_along_axis(thetas, first[None], 0)[0].copy()
    hi = lo + 1.0 / (n_grid - 1)
    f_lo = np.take_along_axis(f, first[None], 0)[0]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f_mid = curvature(mid[None])[0] - target
        same = np.signbit(f_mid) == np.signbit(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    closest = np.take_along_axis(thetas, np.argmin(np.abs(f), axis=0)[None], 0)[0]
    hit = np.take_along_axis(thetas, np.argmax(exact, axis=0)[None], 0)[0]
    theta = np.where(has, 0.5 * (lo + hi), closest)
    return np.where(exact.any(axis=0) & ~has, hit, theta)


def verify_pointwise(inst: VerifierInstance) -> VerificationResult:
    """Exact MSE identity per item: l(ens) = sum_k w l(k) - sum_k w (S^k - S^ens)^2."""
    _check_pre(inst, nonneg=False)
    S, w = inst.scores, inst.weights
    target = inst.levels.astype(np.float64)
    ens = (w * S).sum(1)
    lhs = (ens - target) ** 2
    basic = (w * (S - target[:, None]) ** 2).sum(1)
    amb = (w * (S - ens[:, None]) ** 2).sum(1)
    rhs = basic - amb
    residual = float(np.max(np.abs(lhs - rhs)))
    N = inst.n_items
    return VerificationResult(
        lhs=float(lhs.sum() / N),
        rhs=float(rhs.sum() / N),
        slack=float((rhs - lhs).sum() / N),
        holds=residual <= IDENTITY_TOL,
        weighted_basic_loss=float(basic.sum() / N),
        correction=0.0,
        weighted_ambiguity=float(amb.sum() / N),
        residual=residual,
    )


def bpr_remainder_ambiguity(z_ens: np.ndarray, z_k: np.ndarray) -> np.ndarray:
    """``0.5 * l_b''(z~) * (z^k - z^ens)^2`` at the interpolation point making the expansion exact."""
    d = z_k - z_ens
    remainder = _softplus(-z_k) - _softplus(-z_ens) - (_sigmoid(z_ens) - 1.0) * d

    def curvature(theta):
        s = _sigmoid(z_ens + theta * d)
        return 0.5 * s * (1 - s) * d**2

    theta = find_interpolation_theta(curvature, remainder)
    return curvature(theta[None])[0]


def verify_pairwise(inst: VerifierInstance, pairs: Sequence[tuple[int, int]] | None = None) -> VerificationResult:
    """BPR bound for every ordered pair (n, m), n != m, unless ``pairs`` is given.

    l_b(z^ens) <= sum_k w_n^k l_b(z^k) + delta * sum_k S_m^k - sum_k w_n^k A_nm^k.
    Reports the smallest slack over pairs.
    """
    _check_pre(inst, nonneg=True)
    S, w = inst.scores, inst.weights
    ens = (w * S).sum(1)
    if pairs is None:
        n_idx, m_idx = np.nonzero(~np.eye(inst.n_items, dtype=bool))
    else:
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        n_idx, m_idx = arr[:, 0], arr[:, 1]
    z_ens = ens[n_idx] - ens[m_idx]
    z_k = S[n_idx] - S[m_idx]
    w_n = w[n_idx]
    amb = bpr_remainder_ambiguity(z_ens[:, None], z_k)
    lhs = _softplus(-z_ens)
    basic = (w_n * _softplus(-z_k)).sum(1)
    corr = inst.delta * S[m_idx].sum(1)
    wamb = (w_n * amb).sum(1)
    rhs = basic + corr - wamb
    slack = rhs - lhs
    i = int(np.argmin(slack))
    return VerificationResult(
        lhs=float(lhs[i]),
        rhs=float(rhs[i]),
        slack=float(slack[i]),
        holds=bool(slack[i] >= -INEQUALITY_TOL),
        weighted_basic_loss=float(basic[i]),
        correction=float(corr[i]),
        weighted_ambiguity=float(wamb[i]),
    )


def _g(z, tail):
    """log(1 + sum over the tail of exp(-z)); z and tail are (..., N, N)."""
    x = np.where(tail, -z, -np.inf)
    return np.logaddexp(0.0, np.logaddexp.reduce(x, axis=-1))


def _tail_probs(z, tail):
    x = np.where(tail, -z, -np.inf)
    lse = np.logaddexp(0.0, np.logaddexp.reduce(x, axis=-1, keepdims=True))
    return np.where(tail, np.exp(x - lse), 0.0)


def pl_remainder_ambiguity(z_ens: np.ndarray, z_k: np.ndarray, tail: np.ndarray) -> np.ndarray:
    """Exact second-order remainder of g_n along z^k - z^ens, per position n and model k.

    ``z_ens`` is (N, N); ``z_k`` is (K, N, N); returns (K, N).
    """
    d = np.where(tail, z_k - z_ens, 0.0)
    p0 = _tail_probs(z_ens, tail)
    remainder = _g(z_k, tail) - _g(z_ens, tail) + (p0 * d).sum(-1)

    def curvature(theta):
        p = _tail_probs(z_ens + theta[..., None] * d, tail)
        lin = (p * d).sum(-1)
        return 0.5 * ((p * d**2).sum(-1) - lin**2)

    theta = find_interpolation_theta(curvature, remainder)
    return curvature(theta[None])[0]


def verify_listwise(inst: VerifierInstance) -> VerificationResult:
    """Plackett-Luce bound along the ground-truth order.

    l_pl(S^ens) <= sum_k max_n(w_n^k) l_pl(S^k) + delta * N * max_m sum_k S_m^k
                   - sum_k sum_n w_n^k A_n^k.
    """
    _check_pre(inst, nonneg=True)
    order = inst.pi_order
    S, w = inst.scores[order], inst.weights[order]
    N, K = S.shape
    ens = (w * S).sum(1)
    tail = np.triu(np.ones((N, N), dtype=bool), k=1)
    z_ens = ens[:, None] - ens[None, :]
    z_k = np.stack([S[:, k, None] - S[None, :, k] for k in range(K)])
    amb = pl_remainder_ambiguity(z_ens, z_k, tail)  # (K, N)

    lhs = float(_g(z_ens, tail).sum())
    basic_losses = _g(z_k, tail).sum(-1)  # (K,)
    basic = float((w.max(axis=0) * basic_losses).sum())
    corr = inst.delta * N * float(S.sum(1).max())
    wamb = float((w.T * amb).sum())
    rhs = basic + corr - wamb
    return VerificationResult(
        lhs=lhs,
        rhs=rhs,
        slack=rhs - lhs,
        holds=rhs - lhs >= -INEQUALITY_TOL,
        weighted_basic_loss=basic,
        correction=corr,
        weighted_ambiguity=wamb,
    )


def _parse_choices(spec) -> list[int]:
    """``"2,3,5"`` -> [2, 3, 5]; ``"2-50"`` or ``"2..50"`` -> [2, ..., 50]; ints pass through."""
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        return [int(x) for x in spec]
    out = []
    for part in str(spec).split(","):
        part = part.strip()
        for sep in ("..", "-"):
            if sep in part:
                a, b = part.split(sep)
                out.extend(range(int(a), int(b) + 1))
                break
        else:
            out.append(int(part))
    return out


VERIFIERS = {"pointwise": verify_pointwise, "pairwise": verify_pairwise, "listwise": verify_listwise}


def run_trials(
    trials: int,
    k_choices="2,3,5",
    n_choices="2-20",
    delta: float = 0.3,
    seed: int = 0,
    theorems: Sequence[str] = ("pointwise", "pairwise", "listwise"),
    counterexample_dir=None,
) -> dict:
    """Verify the selected decompositions on ``trials`` random instances.

    Returns a JSON-ready report; failing instances are written to
    ``counterexample_dir`` when given.
    """
    ks, ns = _parse_choices(k_choices), _parse_choices(n_choices)
    master = np.random.default_rng(seed)
    per_trial = []
    failures: list[str] = []
    for t in range(trials):
        K = int(master.choice(ks))
        N = int(master.choice(ns))
        inst_seed = int(master.integers(2**31))
        inst = random_instance(inst_seed, K, N, delta)
        row = {"trial": t, "seed": inst_seed, "K": K, "N": N, "delta": inst.delta}
        for name in theorems:
            res = VERIFIERS[name](inst)
            row[name] = {"slack": res.slack, "residual": res.residual, "holds": res.holds}
            if not res.holds and counterexample_dir is not None:
                path = Path(counterexample_dir) / f"{name}_trial{t}_seed{inst_seed}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps({"theorem": name, "result": asdict(res), "instance": inst.to_json()}))
                failures.append(str(path))
                log.warning("%s decomposition failed on trial %d (seed %d)", name, t, inst_seed)
        per_trial.append(row)

    summary = {}
    for name in theorems:
        slacks = np.array([r[name]["slack"] for r in per_trial])
        entry = {
            "trials": trials,
            "passes": int(sum(r[name]["holds"] for r in per_trial)),
            "min_slack": float(slacks.min()) if trials else None,
            "mean_slack": float(slacks.mean()) if trials else None,
        }
        if name == "pointwise":
            entry["max_residual"] = float(max((r[name]["residual"] for r in per_trial), default=0.0))
        summary[name] = entry
    return {
        "config": {"trials": trials, "k": ks, "n": ns, "delta": delta, "seed": seed},
        "summary": summary,
        "trials": per_trial,
        "counterexamples": failures,
    }
