"""Proximal operators for the nonsmooth terms attached to blocks.

The proximal operator of a closed convex function ``h`` with step ``t > 0``
is

    prox_{t h}(v) = argmin_u  t * h(u) + (1/2) * ||u - v||^2 .

Every term here is simple enough that its prox is available either in
closed form or via a one-dimensional root-find, so block subproblem
solvers can rely on exact prox evaluations.

Supported terms
---------------
Zero            h(x) = 0
L1              h(x) = lam * ||x||_1
GroupL2         h(x) = sum_J w_J * ||x_J||_2 over disjoint index groups
SparseGroup     h(x) = lam * ||x||_1 + sum_J w_J * ||x_J||_2
BoxIndicator    h(x) = 0 if lo <= x <= hi else +inf
NonnegIndicator h(x) = 0 if x >= 0 else +inf
Linear          h(x) = <b, x>
Sum             an admitted combination of the above (see class docstring)
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ProxTerm",
    "Zero",
    "L1",
    "GroupL2",
    "SparseGroup",
    "BoxIndicator",
    "NonnegIndicator",
    "Linear",
    "Sum",
    "prox",
    "prox_sparse_group",
    "moreau_value",
    "soft_threshold",
    "group_shrink",
    "term_to_doc",
    "term_from_doc",
    "merge_box",
]


def soft_threshold(v, t):
    """Elementwise soft-thresholding, the prox of t * ||.||_1.

    Returns sign(v) * max(|v| - t, 0).
    """
    v = np.asarray(v, dtype=float)
    return np.maximum(0.0, v - t) + np.minimum(0.0, v + t)


def group_shrink(v, t):
    """Block soft-thresholding, the prox of t * ||.||_2 on a whole vector.

    Returns max(0, 1 - t / ||v||) * v, with the convention 0 when v = 0.
    """
    v = np.asarray(v, dtype=float)
    nrm = float(np.linalg.norm(v))
    if nrm <= t:
        return np.zeros_like(v)
    return (1.0 - t / nrm) * v


def _check_groups(groups, weights):
    """Normalize groups to index arrays and check disjointness."""
    if len(groups) != len(weights):
        raise ValueError(
            "need one weight per group, got %d groups and %d weights"
            % (len(groups), len(weights))
        )
    norm_groups = []
    seen = set()
    for J in groups:
        idx = np.asarray(J, dtype=int)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("each group must be a nonempty 1-d index list")
        for i in idx:
            if int(i) in seen:
                raise ValueError("groups must be disjoint; index %d repeated" % i)
            seen.add(int(i))
        norm_groups.append(idx)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("group weights must be nonnegative")
    return norm_groups, w


def _prox_ball_box_small(v, wt, lo, hi):
    """Scalar-arithmetic version of :func:`_prox_ball_box` for short
    vectors, where the array-op overhead of the bisection dominates."""
    n = len(v)
    if wt == 0.0:
        return np.array([min(max(v[i], lo[i]), hi[i]) for i in range(n)])
    if all(lo[i] <= 0.0 <= hi[i] for i in range(n)):
        acc = 0.0
        for i in range(n):
            if lo[i] == 0.0 and hi[i] == 0.0:
                r = 0.0
            elif lo[i] == 0.0:
                r = max(v[i], 0.0)
            elif hi[i] == 0.0:
                r = max(-v[i], 0.0)
            else:
                r = v[i]
            acc += r * r
        if acc <= wt * wt:
            return np.zeros(n)
    s_max_sq = 0.0
    for i in range(n):
        c = max(abs(lo[i]), abs(hi[i]))
        s_max_sq += c * c
    if s_max_sq == 0.0:
        return np.array([min(max(v[i], lo[i]), hi[i]) for i in range(n)])
    s_lo, s_hi = 0.0, math.sqrt(s_max_sq)
    # Safeguarded Newton on phi(s) = ||clip(v*s/(s+wt))|| - s inside the
    # bracket; fall back to the midpoint whenever the Newton candidate
    # leaves the bracket.  phi has a single sign change on (0, s_max].
    s = s_hi
    for _ in range(200):
        f = s / (s + wt)
        df = wt / ((s + wt) * (s + wt))
        acc = 0.0
        dacc = 0.0
        for i in range(n):
            u = v[i] * f
            if u < lo[i]:
                u = lo[i]
            elif u > hi[i]:
                u = hi[i]
            else:
                dacc += u * v[i]
            acc += u * u
        norm_u = math.sqrt(acc)
        phi = norm_u - s
        if phi > 0.0:
            s_lo = s
        else:
            s_hi = s
        if s_hi - s_lo <= 1e-16 * (1.0 + s_hi):
            s = 0.5 * (s_lo + s_hi)
            break
        dphi = (dacc * df / norm_u if norm_u > 0.0 else 0.0) - 1.0
        s_new = s - phi / dphi if dphi != 0.0 else -1.0
        if abs(s_new - s) <= 5e-16 * (1.0 + s) and s_lo <= s_new <= s_hi:
            s = s_new
            break
        if not (s_lo < s_new < s_hi):
            s_new = 0.5 * (s_lo + s_hi)
        s = s_new
    f = s / (s + wt)
    return np.array([min(max(v[i] * f, lo[i]), hi[i]) for i in range(n)])


def _prox_ball_box(v, wt, lo, hi):
    """Exact prox of wt * ||u||_2 + indicator of the box [lo, hi] at v.

    Solves  min_u  wt * ||u|| + (1/2) * ||u - v||^2  s.t.  lo <= u <= hi.

    For u != 0 the optimality condition rearranges to the fixed point
    u = clip(v * s / (s + wt)) with s = ||u||, so it suffices to find the
    positive root of phi(s) = ||clip(v * s / (s + wt))|| - s, which has a
    single sign change on (0, s_max] with s_max the norm of the farthest
    box corner.  u = 0 is optimal iff 0 lies in the box and the distance
    from v to the normal cone of the box at 0 is at most wt.
    """
    v = np.asarray(v, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if v.size <= 32:
        return _prox_ball_box_small(v.tolist(), wt, lo.tolist(), hi.tolist())
    if wt == 0.0:
        return np.clip(v, lo, hi)
    if np.all(lo <= 0.0) and np.all(hi >= 0.0):
        # Distance from v to the normal cone of the box at 0, coordinatewise:
        # free coordinate -> |v_i|; at a lower face -> max(v_i, 0);
        # at an upper face -> max(-v_i, 0); pinned (lo=hi=0) -> 0.
        at_lo = lo == 0.0
        at_hi = hi == 0.0
        resid = np.abs(v)
        resid = np.where(at_lo & ~at_hi, np.maximum(v, 0.0), resid)
        resid = np.where(at_hi & ~at_lo, np.maximum(-v, 0.0), resid)
        resid = np.where(at_lo & at_hi, 0.0, resid)
        if float(np.dot(resid, resid)) <= wt * wt:
            return np.zeros_like(v)
    s_max = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
    if s_max == 0.0:
        return np.clip(v, lo, hi)
    s_lo, s_hi = 0.0, s_max
    # Invariant: phi(s_lo) >= 0 and phi(s_hi) <= 0.
    for _ in range(200):
        mid = 0.5 * (s_lo + s_hi)
        u = np.clip(v * (mid / (mid + wt)), lo, hi)
        if float(np.linalg.norm(u)) > mid:
            s_lo = mid
        else:
            s_hi = mid
        if s_hi - s_lo <= 1e-16 * (1.0 + s_hi):
            break
    s = 0.5 * (s_lo + s_hi)
    return np.clip(v * (s / (s + wt)), lo, hi)


class ProxTerm:
    """Base class for nonsmooth terms; subclasses define value and prox."""

    kind = "abstract"

    def value(self, x):
        raise NotImplementedError

    def prox(self, v, t):
        raise NotImplementedError

    def project_domain(self, v):
        """Project v onto the effective domain of the term (identity for
        real-valued terms)."""
        return np.asarray(v, dtype=float).copy()

    def validate_dim(self, n):
        """Raise ValueError if the term is inconsistent with dimension n."""

    def to_doc(self):
        raise NotImplementedError


class Zero(ProxTerm):
    """The identically-zero term; its prox is the identity."""

    kind = "zero"

    def value(self, x):
        return 0.0

    def prox(self, v, t):
        return np.asarray(v, dtype=float).copy()

    def to_doc(self):
        return {"type": "zero"}


class L1(ProxTerm):
    """h(x) = lam * ||x||_1 with prox the soft threshold at t * lam."""

    kind = "l1"

    def __init__(self, lam):
        lam = float(lam)
        if lam < 0:
            raise ValueError("l1 weight must be nonnegative, got %g" % lam)
        self.lam = lam

    def value(self, x):
        return self.lam * float(np.sum(np.abs(x)))

    def prox(self, v, t):
        return soft_threshold(v, t * self.lam)

    def to_doc(self):
        return {"type": "l1", "lam": self.lam}


class GroupL2(ProxTerm):
    """h(x) = sum_J w_J * ||x_J||_2 over disjoint groups.

    Coordinates not covered by any group are unpenalized. The prox acts
    groupwise by block soft-thresholding; groups with ||v_J|| <= t * w_J
    map to exactly zero.
    """

    kind = "group_l2"

    def __init__(self, groups, weights):
        self.groups, self.weights = _check_groups(groups, weights)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(
            sum(
                w * np.linalg.norm(x[J])
                for J, w in zip(self.groups, self.weights)
            )
        )

    def prox(self, v, t):
        out = np.asarray(v, dtype=float).copy()
        for J, w in zip(self.groups, self.weights):
            out[J] = group_shrink(out[J], t * w)
        return out

    def validate_dim(self, n):
        for J in self.groups:
            if np.any(J < 0) or np.any(J >= n):
                raise ValueError(
                    "group index out of range for dimension %d" % n
                )

    def to_doc(self):
        return {
            "type": "group_l2",
            "groups": [[int(i) for i in J] for J in self.groups],
            "weights": [float(w) for w in self.weights],
        }


class SparseGroup(ProxTerm):
    """h(x) = lam * ||x||_1 + sum_J w_J * ||x_J||_2.

    The prox composes the two shrinkages: soft-threshold every coordinate
    at t * lam, then block soft-threshold each group at t * w_J. For
    disjoint groups this composition is the exact proximal map.
    """

    kind = "sparse_group"

    def __init__(self, lam, groups, weights):
        lam = float(lam)
        if lam < 0:
            raise ValueError("l1 weight must be nonnegative, got %g" % lam)
        self.lam = lam
        self.groups, self.weights = _check_groups(groups, weights)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        val = self.lam * float(np.sum(np.abs(x)))
        for J, w in zip(self.groups, self.weights):
            val += w * float(np.linalg.norm(x[J]))
        return val

    def prox(self, v, t):
        out = soft_threshold(v, t * self.lam)
        for J, w in zip(self.groups, self.weights):
            out[J] = group_shrink(out[J], t * w)
        return out

    def validate_dim(self, n):
        for J in self.groups:
            if np.any(J < 0) or np.any(J >= n):
                raise ValueError(
                    "group index out of range for dimension %d" % n
                )

    def to_doc(self):
        return {
            "type": "sparse_group",
            "lam": self.lam,
            "groups": [[int(i) for i in J] for J in self.groups],
            "weights": [float(w) for w in self.weights],
        }


class BoxIndicator(ProxTerm):
    """Indicator of the box {x : lo <= x <= hi}; prox is the clamp."""

    kind = "box"

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(lo > hi):
            raise ValueError("empty box: some lo exceeds hi")
        self.lo = lo
        self.hi = hi

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if np.all(x >= self.lo) and np.all(x <= self.hi):
            return 0.0
        return float("inf")

    def prox(self, v, t):
        return np.clip(np.asarray(v, dtype=float), self.lo, self.hi)

    def project_domain(self, v):
        return self.prox(v, 1.0)

    def validate_dim(self, n):
        if self.lo.size != n:
            raise ValueError(
                "box bounds have length %d, block has dimension %d"
                % (self.lo.size, n)
            )

    def to_doc(self):
        return {
            "type": "box",
            "lo": [float(a) for a in self.lo],
            "hi": [float(b) for b in self.hi],
        }


class NonnegIndicator(ProxTerm):
    """Indicator of the nonnegative orthant; prox is max(v, 0)."""

    kind = "nonneg"

    def value(self, x):
        if np.all(np.asarray(x, dtype=float) >= 0.0):
            return 0.0
        return float("inf")

    def prox(self, v, t):
        return np.maximum(np.asarray(v, dtype=float), 0.0)

    def project_domain(self, v):
        return self.prox(v, 1.0)

    def to_doc(self):
        return {"type": "nonneg"}


class Linear(ProxTerm):
    """h(x) = <b, x>, with prox_{t h}(v) = v - t * b."""

    kind = "linear"

    def __init__(self, b):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))

    def value(self, x):
        return float(np.dot(self.b, np.asarray(x, dtype=float)))

    def prox(self, v, t):
        return np.asarray(v, dtype=float) - t * self.b

    def validate_dim(self, n):
        if self.b.size != n:
            raise ValueError(
                "linear term has length %d, block has dimension %d"
                % (self.b.size, n)
            )

    def to_doc(self):
        return {"type": "linear", "b": [float(a) for a in self.b]}


# Combinations of terms whose sum still has an exactly computable prox.
# Key: frozenset of the two kinds involved.
_SUM_RULES = {
    frozenset(("box", "l1")),
    frozenset(("box", "group_l2")),
}


class Sum(ProxTerm):
    """Sum of two terms whose joint prox is still exact.

    Admitted combinations:

    * ``Linear`` plus any single non-sum term: the linear part shifts the
      argument, prox_{t(h + <b,.>)}(v) = prox_{t h}(v - t b).
    * ``BoxIndicator`` plus ``L1``: clamp the soft threshold. Each
      coordinate problem is one-dimensional and convex, so clamping the
      unconstrained minimizer into the interval is exact.
    * ``BoxIndicator`` plus ``GroupL2``: exact groupwise prox via a
      one-dimensional root-find on the shrinkage scale (see
      ``_prox_ball_box``).

    Any other combination is rejected at construction.
    """

    kind = "sum"

    def __init__(self, terms):
        terms = list(terms)
        if len(terms) != 2:
            raise ValueError("Sum supports exactly two terms")
        kinds = [t.kind for t in terms]
        if "sum" in kinds:
            raise ValueError("nested sums of terms are not supported")
        if "linear" in kinds:
            terms.sort(key=lambda t: t.kind != "linear")
            if terms[1].kind == "linear":
                raise ValueError("sum of two linear terms; merge them instead")
        elif frozenset(kinds) in _SUM_RULES:
            terms.sort(key=lambda t: t.kind != "box")
        else:
            raise ValueError(
                "no exact prox for the combination %s + %s"
                % (kinds[0], kinds[1])
            )
        self.terms = terms
        self._group_index = None
        if terms[0].kind == "box" and terms[1].kind == "group_l2":
            # Contiguous groups index as slices (cheap views); a single
            # group spanning every coordinate skips the box-only pass.
            self._group_index = [
                slice(J[0], J[-1] + 1)
                if list(J) == list(range(J[0], J[-1] + 1)) else list(J)
                for J in terms[1].groups
            ]
            n_box = terms[0].lo.size
            self._one_full_group = (
                len(self._group_index) == 1
                and self._group_index[0] == slice(0, n_box)
            )

    def value(self, x):
        return sum(t.value(x) for t in self.terms)

    def prox(self, v, t):
        first, second = self.terms
        v = np.asarray(v, dtype=float)
        if first.kind == "linear":
            return second.prox(v - t * first.b, t)
        # first is the box
        box = first
        if second.kind == "l1":
            return np.clip(second.prox(v, t), box.lo, box.hi)
        # group_l2: exact prox per group; uncovered coordinates are a
        # pure box projection.
        if self._one_full_group:
            return _prox_ball_box(v, t * second.weights[0], box.lo, box.hi)
        out = np.clip(v, box.lo, box.hi)
        for J, w in zip(self._group_index, second.weights):
            out[J] = _prox_ball_box(v[J], t * w, box.lo[J], box.hi[J])
        return out

    def project_domain(self, v):
        out = np.asarray(v, dtype=float).copy()
        for t in self.terms:
            out = t.project_domain(out)
        return out

    def validate_dim(self, n):
        for t in self.terms:
            t.validate_dim(n)

    def to_doc(self):
        raise ValueError(
            "sum terms are built from a declared term plus box bounds and "
            "are not serialized directly"
        )


def prox(term, v, t):
    """Evaluate prox_{t * term}(v).

    Parameters
    ----------
    term : ProxTerm
    v : array_like
    t : float, must be positive.
    """
    if t <= 0:
        raise ValueError("prox step must be positive, got %g" % t)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    term.validate_dim(v.size)
    return term.prox(v, t)


def prox_sparse_group(v, lam, groups, weights, t):
    """Prox of t * (lam * ||.||_1 + sum_J w_J ||._J||_2) at v."""
    return prox(SparseGroup(lam, groups, weights), v, t)


def moreau_value(term, v, t):
    """Moreau envelope value: t * h(p) + (1/2) * ||v - p||^2 at p = prox."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    p = prox(term, v, t)
    return t * term.value(p) + 0.5 * float(np.dot(v - p, v - p))


def merge_box(term, lo, hi):
    """Fold box bounds into a nonsmooth term, returning an exact-prox term.

    Used when building problems: declared box constraints become part of
    the block's nonsmooth term. Combinations without an exact joint prox
    are rejected.
    """
    box = BoxIndicator(lo, hi)
    kind = term.kind
    if kind == "zero":
        return box
    if kind == "box":
        new_lo = np.maximum(box.lo, term.lo)
        new_hi = np.minimum(box.hi, term.hi)
        return BoxIndicator(new_lo, new_hi)
    if kind == "nonneg":
        new_lo = np.maximum(box.lo, 0.0)
        return BoxIndicator(new_lo, box.hi)
    if kind in ("l1", "group_l2"):
        return Sum([box, term])
    if kind == "linear":
        return Sum([term, box])
    raise ValueError(
        "cannot combine box bounds with a %r term and keep an exact prox"
        % kind
    )


_TERM_TYPES = {
    "zero": Zero,
    "l1": L1,
    "group_l2": GroupL2,
    "sparse_group": SparseGroup,
    "box": BoxIndicator,
    "nonneg": NonnegIndicator,
    "linear": Linear,
}


def term_to_doc(term):
    """JSON-ready dict for a term (sums are not serializable)."""
    return term.to_doc()


def term_from_doc(doc):
    """Rebuild a term from its JSON dict form."""
    kind = doc.get("type")
    if kind not in _TERM_TYPES:
        raise ValueError("unknown nonsmooth term type %r" % kind)
    if kind == "zero":
        return Zero()
    if kind == "l1":
        return L1(doc["lam"])
    if kind == "group_l2":
        return GroupL2(doc["groups"], doc["weights"])
    if kind == "sparse_group":
        return SparseGroup(doc["lam"], doc["groups"], doc["weights"])
    if kind == "box":
        return BoxIndicator(doc["lo"], doc["hi"])
    if kind == "nonneg":
        return NonnegIndicator()
    return Linear(doc["b"])
