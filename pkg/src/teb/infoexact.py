"""Exact information theory over small finite systems.

Everything here works on explicit joint probability tables with named axes
and computes information quantities by direct summation in double precision.
These are the independent oracles the learned models are checked against:
conditional mutual information, the closed-form transfer entropy of the
class-switching process, and constructions of joints that satisfy the two
conditional-independence structures of the bottleneck model (from which the
data-processing-style inequalities and the context-replacement identity are
verified numerically).

All logs are natural; 0 * log 0 is taken to be 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class JointTable:
    """Explicit joint distribution over named finite variables.

    ``axes`` names each axis of ``probs`` in order. Entries must be
    nonnegative and sum to 1 within 1e-12.
    """

    axes: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "axes", tuple(self.axes))
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != len(self.axes):
            raise ValueError(
                f"{len(self.axes)} axis names for a {probs.ndim}-dim table"
            )
        if len(set(self.axes)) != len(self.axes):
            raise ValueError(f"duplicate axis names in {self.axes}")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        total = probs.sum()
        if abs(total - 1.0) > _NORM_TOL:
            raise ValueError(f"table sums to {total!r}, expected 1 within {_NORM_TOL}")

    def axis_index(self, name: str) -> int:
        try:
            return self.axes.index(name)
        except ValueError:
            raise KeyError(f"no axis named {name!r}; have {self.axes}") from None

    def marginal(self, keep: tuple[str, ...]) -> np.ndarray:
        """Marginal over ``keep`` (in the order given)."""
        drop = tuple(i for i, a in enumerate(self.axes) if a not in keep)
        out = self.probs.sum(axis=drop) if drop else self.probs
        kept_order = [a for a in self.axes if a in keep]
        perm = [kept_order.index(a) for a in keep]
        return np.transpose(out, perm) if perm != list(range(len(perm))) else out


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def entropy(j: JointTable, names: tuple[str, ...]) -> float:
    """Shannon entropy H(names) in nats."""
    return float(-_xlogx(j.marginal(names)).sum())


def cond_mutual_info(
    j: JointTable,
    a: tuple[str, ...] | str,
    b: tuple[str, ...] | str,
    c: tuple[str, ...] | str = (),
) -> float:
    """Exact I(A;B|C) in nats by direct summation.

    ``a``, ``b``, ``c`` are disjoint groups of axis names; ``c`` may be empty,
    in which case this is the plain mutual information I(A;B).
    """
    a = (a,) if isinstance(a, str) else tuple(a)
    b = (b,) if isinstance(b, str) else tuple(b)
    c = (c,) if isinstance(c, str) else tuple(c)
    groups = a + b + c
    if len(set(groups)) != len(groups):
        raise ValueError(f"variable groups overlap: a={a}, b={b}, c={c}")
    for name in groups:
        j.axis_index(name)
    # I(A;B|C) = H(A,C) + H(B,C) - H(A,B,C) - H(C)
    h_ac = entropy(j, a + c)
    h_bc = entropy(j, b + c)
    h_abc = entropy(j, a + b + c)
    h_c = entropy(j, c) if c else 0.0
    return h_ac + h_bc - h_abc - h_c


def switching_te(num_classes: int, switch_prob: float) -> float:
    """Closed-form transfer entropy of the class-switching process, in nats.

    A class-labelled stream keeps its class with probability ``1 - s`` and is
    resampled uniformly over ``num_classes`` classes with probability ``s``
    at the prediction step; the source stream announces the next class
    exactly. The transferred information is the entropy of the next class
    given the current one:

        -sum_k p(y'=k | y) ln p(y'=k | y)
        with p(same) = (1 - s) + s/K and p(other) = s/K.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if not 0.0 <= switch_prob <= 1.0:
        raise ValueError(f"switch_prob must be in [0, 1], got {switch_prob}")
    k = num_classes
    p_same = (1.0 - switch_prob) + switch_prob / k
    p_other = switch_prob / k
    total = 0.0
    if p_same > 0:
        total -= p_same * math.log(p_same)
    if p_other > 0:
        total -= (k - 1) * p_other * math.log(p_other)
    return total


def switching_joint(num_classes: int, switch_prob: float) -> JointTable:
    """Explicit joint p(y', x, y) of the switching process (x = y' exactly).

    Used to cross-validate :func:`switching_te` against
    :func:`cond_mutual_info` without sharing any arithmetic.
    """
    k = num_classes
    p_y = np.full(k, 1.0 / k)
    p_next = np.full((k, k), switch_prob / k)
    p_next[np.diag_indices(k)] += 1.0 - switch_prob
    # p(y', x, y) = p(y) p(y'|y) [x == y']
    probs = np.zeros((k, k, k))
    for y in range(k):
        for yp in range(k):
            probs[yp, yp, y] = p_y[y] * p_next[y, yp]
    return JointTable(("y_next", "x", "y"), probs)


def _check_stochastic(name: str, channel: np.ndarray, row_axes: int) -> np.ndarray:
    channel = np.asarray(channel, dtype=np.float64)
    if np.any(channel < 0):
        raise ValueError(f"{name} has negative entries")
    rows = channel.sum(axis=tuple(range(row_axes, channel.ndim)))
    if not np.allclose(rows, 1.0, atol=1e-9):
        raise ValueError(f"{name} rows do not sum to 1")
    return channel


def build_joint_graph_a(
    p_xy: np.ndarray, p_yprime_given_xy: np.ndarray, q_z_given_xy: np.ndarray
) -> JointTable:
    """Joint p(y',z,x,y) = p(x,y) p(y'|x,y) q(z|x,y).

    By construction Y' and Z are conditionally independent given (X, Y): the
    latent is computed from the two histories and the next value is emitted
    by the data process, not the latent.

    Shapes: ``p_xy`` is (X, Y); ``p_yprime_given_xy`` is (X, Y, Y');
    ``q_z_given_xy`` is (X, Y, Z).
    """
    p_xy = np.asarray(p_xy, dtype=np.float64)
    if abs(p_xy.sum() - 1.0) > 1e-9:
        raise ValueError("p_xy must sum to 1")
    p_yp = _check_stochastic("p_yprime_given_xy", p_yprime_given_xy, 2)
    q_z = _check_stochastic("q_z_given_xy", q_z_given_xy, 2)
    probs = np.einsum("xy,xyp,xyz->pzxy", p_xy, p_yp, q_z)
    return JointTable(("y_next", "z", "x", "y"), probs)


def build_joint_graph_b(
    p_xy: np.ndarray, q_z_given_xy: np.ndarray, d_yprime_given_zy: np.ndarray
) -> JointTable:
    """Joint p(y',z,x,y) = p(x,y) q(z|x,y) d(y'|z,y).

    By construction X and Y' are conditionally independent given (Z, Y): this
    is the feed-forward factorization in which the next value is produced by
    a decoder reading only the latent and the target history.

    Shapes: ``p_xy`` is (X, Y); ``q_z_given_xy`` is (X, Y, Z);
    ``d_yprime_given_zy`` is (Z, Y, Y').
    """
    p_xy = np.asarray(p_xy, dtype=np.float64)
    if abs(p_xy.sum() - 1.0) > 1e-9:
        raise ValueError("p_xy must sum to 1")
    q_z = _check_stochastic("q_z_given_xy", q_z_given_xy, 2)
    d_yp = _check_stochastic("d_yprime_given_zy", d_yprime_given_zy, 2)
    probs = np.einsum("xy,xyz,zyp->pzxy", p_xy, q_z, d_yp)
    return JointTable(("y_next", "z", "x", "y"), probs)


def random_joint_graph_a(
    rng: np.random.Generator, card: tuple[int, int, int, int]
) -> JointTable:
    """Random admissible graph-a joint; Dirichlet(1) rows for every channel."""
    nx, ny, nyp, nz = card
    p_xy = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    p_yp = rng.dirichlet(np.ones(nyp), size=(nx, ny))
    q_z = rng.dirichlet(np.ones(nz), size=(nx, ny))
    return build_joint_graph_a(p_xy, p_yp, q_z)


def random_joint_graph_b(
    rng: np.random.Generator, card: tuple[int, int, int, int]
) -> JointTable:
    """Random admissible graph-b joint; Dirichlet(1) rows for every channel."""
    nx, ny, nyp, nz = card
    p_xy = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    q_z = rng.dirichlet(np.ones(nz), size=(nx, ny))
    d_yp = rng.dirichlet(np.ones(nyp), size=(nz, ny))
    return build_joint_graph_b(p_xy, q_z, d_yp)


@dataclass(frozen=True)
class ContextReplacementReport:
    lhs: float  # I(X;Y'|C)
    rhs: float  # I(X;Y'|Y)
    equal: bool
    context_info_gap: float  # I(Y;Y') - I(C;Y'), >= 0; ~0 when premises hold


def context_replacement_check(
    j: JointTable, tol: float = 1e-9
) -> ContextReplacementReport:
    """Check that conditioning on a context C derived from Y replaces Y.

    For a table over (y_next, x, y, c) where C is generated from Y, a context
    that retains all of Y's information about the next value (so that
    I(C;Y') = I(Y;Y') and the relevant conditional independencies hold) gives
    I(X;Y'|C) = I(X;Y'|Y). Degenerate contexts that lose information violate
    the premises; the report then carries ``equal=False`` and a positive
    ``context_info_gap`` rather than raising.
    """
    for name in ("y_next", "x", "y", "c"):
        j.axis_index(name)
    lhs = cond_mutual_info(j, "x", "y_next", "c")
    rhs = cond_mutual_info(j, "x", "y_next", "y")
    gap = cond_mutual_info(j, "y", "y_next") - cond_mutual_info(j, "c", "y_next")
    return ContextReplacementReport(
        lhs=lhs, rhs=rhs, equal=bool(abs(lhs - rhs) <= tol), context_info_gap=gap
    )


def partitioned_context_joint(
    rng: np.random.Generator,
    y_card: int,
    num_blocks: int,
    x_card: int = 3,
    yp_card: int = 3,
) -> JointTable:
    """Random joint over (y_next, x, y, c) with C a partition of Y.

    Each y belongs to one of ``num_blocks`` blocks and the conditional
    p(y', x | y) depends on y only through its block, so C = block(Y) keeps
    everything Y says about (X, Y'). Such tables satisfy the premises of the
    context-replacement identity exactly.
    """
    if not 1 <= num_blocks <= y_card:
        raise ValueError("need 1 <= num_blocks <= y_card")
    blocks = rng.integers(0, num_blocks, size=y_card)
    blocks[rng.permutation(y_card)[:num_blocks]] = np.arange(num_blocks)
    p_y = rng.dirichlet(np.ones(y_card))
    block_cond = rng.dirichlet(np.ones(x_card * yp_card), size=num_blocks)
    probs = np.zeros((yp_card, x_card, y_card, num_blocks))
    for y in range(y_card):
        cond = block_cond[blocks[y]].reshape(x_card, yp_card)
        probs[:, :, y, blocks[y]] = p_y[y] * cond.T
    return JointTable(("y_next", "x", "y", "c"), probs)
