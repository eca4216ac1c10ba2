"""Constrained soft-DTW between a binary label sequence and a score series.

Warping paths run from cell (1, 1) to (L, T) using only the right and
diagonal moves, so every time point is assigned to exactly one label and
every label owns a contiguous, nonempty run of points.  Because no move
stays in the same column, each column of the DP tables depends only on the
previous column; the recursions below are vectorized over labels.
"""

from dataclasses import dataclass

import numpy as np

# Finite stand-in for +inf in the DP borders; exp(-(BIG - x) / gamma)
# underflows cleanly to 0 and never produces inf - inf.
BIG = 1e30


@dataclass
class DtwWorkspace:
    """Padded (L+2) x (T+2) forward table R and soft alignment E."""

    R: np.ndarray
    E: np.ndarray | None
    gamma: float

    @property
    def value(self) -> float:
        L, T = self.R.shape[0] - 2, self.R.shape[1] - 2
        return float(self.R[L, T])


def _check_shape(costs: np.ndarray) -> np.ndarray:
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[0] < 1:
        raise ValueError(f"cost matrix must be 2-D with L >= 1, got shape {costs.shape}")
    L, T = costs.shape
    if L > T:
        raise ValueError(f"no feasible alignment: label length L={L} exceeds T={T}")
    return costs


def build_cost_matrix(label, scores, clamp_eps: float = 1e-7) -> np.ndarray:
    """Negative log-likelihood of each label bit under each local score.

    ``costs[l, t] = -(z_l log s_t + (1 - z_l) log(1 - s_t))`` with ``s``
    clipped to ``[clamp_eps, 1 - clamp_eps]``.
    """
    z = np.asarray(label, dtype=np.float64).ravel()
    s = np.clip(np.asarray(scores, dtype=np.float64).ravel(), clamp_eps, 1.0 - clamp_eps)
    if z.size < 1:
        raise ValueError("label must have length >= 1")
    if z.size > s.size:
        raise ValueError(f"no feasible alignment: label length L={z.size} exceeds T={s.size}")
    return -(np.outer(z, np.log(s)) + np.outer(1.0 - z, np.log1p(-s)))


def cost_grad_wrt_scores(label, scores, clamp_eps: float = 1e-7) -> np.ndarray:
    """d costs[l, t] / d s_t, as an L x T matrix."""
    z = np.asarray(label, dtype=np.float64).ravel()
    s = np.clip(np.asarray(scores, dtype=np.float64).ravel(), clamp_eps, 1.0 - clamp_eps)
    return (s[None, :] - z[:, None]) / (s * (1.0 - s))[None, :]


def soft_min(values, gamma: float) -> float:
    """Smoothed minimum ``-gamma log sum exp(-a_i / gamma)``; exact min at gamma=0."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("soft_min of an empty list")
    m = a.min()
    if gamma == 0 or m >= BIG:
        return float(m)
    return float(m - gamma * np.log(np.sum(np.exp(-(a - m) / gamma))))


def _soft_min2(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    m = np.minimum(a, b)
    if gamma == 0:
        return m
    # log1p of the smaller term keeps precision when one operand dominates
    return m - gamma * np.log1p(np.exp(-np.abs(a - b) / gamma))


def sdtw_forward(costs, gamma: float) -> tuple[float, DtwWorkspace]:
    """Fill the forward table and return ``(R[L, T], workspace)``.

    ``R[l, t] = costs[l, t] + min_gamma(R[l-1, t-1], R[l, t-1])``; runs in
    O(LT) time.
    """
    costs = _check_shape(costs)
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    L, T = costs.shape
    R = np.full((L + 2, T + 2), BIG)
    R[0, 0] = 0.0
    for t in range(1, T + 1):
        prev = R[:, t - 1]
        sm = _soft_min2(prev[0:L], prev[1 : L + 1], gamma)
        R[1 : L + 1, t] = np.minimum(costs[:, t - 1] + sm, BIG)
    ws = DtwWorkspace(R=R, E=None, gamma=gamma)
    return ws.value, ws


def sdtw_backward(costs, workspace: DtwWorkspace) -> np.ndarray:
    """Gradient of the soft-DTW value with respect to ``costs`` (L x T).

    Equals the interior of the soft alignment matrix E: entries lie in
    [0, 1] and each column sums to one.
    """
    costs = _check_shape(costs)
    gamma = workspace.gamma
    if gamma <= 0:
        raise ValueError("sdtw_backward needs gamma > 0; use decode_path for the hard alignment")
    L, T = costs.shape
    if workspace.R.shape != (L + 2, T + 2):
        raise ValueError(
            f"workspace shape {workspace.R.shape} does not match costs {costs.shape}"
        )
    D = np.zeros((L + 2, T + 2))
    D[1 : L + 1, 1 : T + 1] = costs
    R = workspace.R.copy()
    R[:, T + 1] = -np.inf
    R[L + 1, :] = -np.inf
    R[L + 1, T + 1] = R[L, T]
    E = np.zeros((L + 2, T + 2))
    E[L + 1, T + 1] = 1.0
    rows = slice(1, L + 1)
    below = slice(2, L + 2)
    for t in range(T, 0, -1):
        r = R[rows, t]
        a = np.exp((R[rows, t + 1] - r - D[rows, t + 1]) / gamma)
        b = np.exp((R[below, t + 1] - r - D[below, t + 1]) / gamma)
        E[rows, t] = a * E[rows, t + 1] + b * E[below, t + 1]
    workspace.E = E
    return E[1 : L + 1, 1 : T + 1].copy()


def decode_path(costs) -> np.ndarray:
    """Minimum-cost boundaries ``[t_0=0, t_1, ..., t_L=T]`` of the hard alignment.

    Label ``l`` (1-based) covers points ``t_{l-1}+1 .. t_l``.  Among equal-cost
    paths, each transition to the next label is taken as early as possible.
    """
    costs = _check_shape(costs)
    L, T = costs.shape
    _, ws = sdtw_forward(costs, 0.0)
    R = ws.R
    bounds = np.zeros(L + 1, dtype=np.int64)
    bounds[L] = T
    l, t = L, T
    while t > 1:
        # predecessor of (l, t): stay on label l from (l, t-1) or step from (l-1, t-1)
        if l == 1:
            break
        stay, step = R[l, t - 1], R[l - 1, t - 1]
        if stay <= step and l <= t - 1:
            t -= 1
        else:
            bounds[l - 1] = t - 1
            l -= 1
            t -= 1
    return bounds


def path_indicator(boundaries, T: int) -> np.ndarray:
    """Binary L x T alignment matrix for a boundary vector."""
    b = np.asarray(boundaries)
    L = b.size - 1
    A = np.zeros((L, T))
    for l in range(L):
        A[l, b[l] : b[l + 1]] = 1.0
    return A


def path_cost(costs, boundaries) -> float:
    """Total cost of a path, summed in time order like the forward table."""
    costs = np.asarray(costs, dtype=np.float64)
    b = np.asarray(boundaries)
    total = 0.0
    for l in range(b.size - 1):
        for t in range(b[l], b[l + 1]):
            total = costs[l, t] + total
    return total


def alignment_gradient(costs, gamma: float) -> tuple[float, np.ndarray]:
    """Value and d value / d costs; the hard path indicator when gamma is 0."""
    costs = _check_shape(costs)
    if gamma == 0:
        b = decode_path(costs)
        return path_cost(costs, b), path_indicator(b, costs.shape[1])
    value, ws = sdtw_forward(costs, gamma)
    return value, sdtw_backward(costs, ws)
