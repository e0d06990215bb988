"""Numeric verification of two entropy inequalities on finite distributions.

Distributions carry exact rational probabilities (integer weights over a
common denominator), so every inequality reduces to deciding the sign of

    const + sum_i coeff_i * log2(n_i)

with rational constants and positive integer log arguments.  The sign is
decided rigorously: a fast float evaluation with a conservative accumulated
error bound, escalating to high-precision decimal arithmetic when the value
is too close to zero to call.  Exact ties count as "inequality holds" (the
bounds are attained at degenerate inputs such as conditioning on the full
universe).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

_FLOAT_MARGIN_SCALE = 1e-12  # per-term float log error is ~1ulp; stay generous
_DECIMAL_PRECS = (60, 140)


@lru_cache(maxsize=200_000)
def _log2_dec(n: int, prec: int) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = prec
        return Decimal(n).ln() / Decimal(2).ln()


class LogExpression:
    """const + sum coeff * log2(n) with Fraction coeffs and integer n >= 1."""

    def __init__(self):
        self.const = Fraction(0)
        self.terms: dict[int, Fraction] = {}

    def add_const(self, c) -> "LogExpression":
        self.const += Fraction(c)
        return self

    def add_log(self, coeff, n: int) -> "LogExpression":
        if n < 1:
            raise ValueError("log argument must be a positive integer")
        if n > 1:
            self.terms[n] = self.terms.get(n, Fraction(0)) + Fraction(coeff)
        return self

    def copy(self) -> "LogExpression":
        out = LogExpression()
        out.const = self.const
        out.terms = dict(self.terms)
        return out

    def add_entropy(self, weights, total: int, scale=1) -> "LogExpression":
        """Add scale * H(weights/total) for positive integer weights."""
        scale = Fraction(scale)
        self.add_log(scale, total)
        for w in weights:
            if w:
                self.add_log(-scale * Fraction(w, total), int(w))
        return self

    def _float_value(self) -> tuple[float, float]:
        val = float(self.const)
        err = abs(val) * _FLOAT_MARGIN_SCALE
        for n, c in self.terms.items():
            t = float(c) * math.log2(n)
            val += t
            err += (abs(t) + 1.0) * _FLOAT_MARGIN_SCALE
        return val, err

    def sign(self) -> int:
        """-1, 0 (tie within the finest precision), or +1, rigorously."""
        val, err = self._float_value()
        if abs(val) > err:
            return 1 if val > 0 else -1
        for prec in _DECIMAL_PRECS:
            with localcontext() as ctx:
                ctx.prec = prec
                total = Decimal(self.const.numerator) / Decimal(
                    self.const.denominator
                )
                for n, c in self.terms.items():
                    total += (
                        Decimal(c.numerator)
                        / Decimal(c.denominator)
                        * _log2_dec(n, prec)
                    )
            bound = Decimal(10) ** (-(prec - 10 - len(self.terms).bit_length()))
            if abs(total) > bound:
                return 1 if total > 0 else -1
        return 0


@dataclass(frozen=True)
class FiniteDistribution:
    """Probability vector with exact rational entries over 2**s points."""

    s: int
    weights: tuple  # integer weights; probability i is weights[i]/total

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("s must be nonnegative")
        if len(self.weights) != 1 << self.s:
            raise ValueError("weight vector must have 2**s entries")
        if any(w < 0 for w in self.weights):
            raise ValueError("negative weight")
        if self.total <= 0:
            raise ValueError("distribution must have positive mass")

    @cached_property
    def total(self) -> int:
        return sum(self.weights)

    def prob(self, i: int) -> Fraction:
        return Fraction(self.weights[i], self.total)

    @cached_property
    def support(self) -> tuple:
        return tuple(i for i, w in enumerate(self.weights) if w)

    def entropy_float(self) -> float:
        t = self.total
        return sum(
            -(w / t) * math.log2(w / t) for w in self.weights if w
        )

    def entropy_expression(self, scale=1) -> LogExpression:
        return LogExpression().add_entropy(self.weights, self.total, scale)

    def conditioned(self, event) -> "FiniteDistribution":
        """p restricted to the event and renormalized (exact)."""
        keep = set(event)
        w = tuple(
            self.weights[i] if i in keep else 0 for i in range(len(self.weights))
        )
        return FiniteDistribution(self.s, w)

    def mass(self, event) -> Fraction:
        return Fraction(sum(self.weights[i] for i in set(event)), self.total)


def _entropy_float(weights) -> tuple[float, float]:
    """(H, conservative absolute error bound) via vectorized float logs."""
    w = np.asarray(weights, dtype=np.float64)
    t = float(w.sum())
    nz = w > 0
    h = math.log2(t) - float((w[nz] * np.log2(w[nz])).sum()) / t
    err = (int(nz.sum()) + 2) * _FLOAT_MARGIN_SCALE * max(1.0, abs(h))
    return h, err


def binary_entropy_expression(alpha: Fraction, scale=1) -> LogExpression:
    """scale * H(alpha) for the two-point distribution (alpha, 1-alpha)."""
    a, b = alpha.numerator, alpha.denominator
    return LogExpression().add_entropy((a, b - a), b, scale)


def check_entropy_support_lemma(
    p: FiniteDistribution, event, alpha: Fraction
) -> bool:
    """Conditioning a high-entropy source on an event of mass >= alpha keeps
    the entropy above s - g/alpha - H(alpha)/alpha, where g = s - H(p).

    Returns True when the bound holds (ties included); asserts the
    admissibility preconditions before testing the conclusion.
    """
    alpha = Fraction(alpha)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if p.mass(event) < alpha:
        raise ValueError("event mass below alpha")
    # g in [0, s): the source must not be a point mass
    if len(p.support) < 2 and p.s > 0:
        raise ValueError("p must have entropy > 0")
    q = p.conditioned(event)
    # q(x) = p(x)/mass <= p(x)/alpha on the event: admissible by construction
    s = p.s
    # bound times alpha:  alpha*H(q) - alpha*s + s - H(p) + H(alpha) >= 0
    af = float(alpha)
    hq, eq_ = _entropy_float(q.weights)
    hp, ep = _entropy_float(p.weights)
    if alpha != 1:
        a, b = alpha.numerator, alpha.denominator
        ha, ea = _entropy_float((a, b - a))
    else:
        ha, ea = 0.0, 0.0
    val = af * hq + s * (1 - af) - hp + ha
    err = eq_ + ep + ea + (s + 4) * _FLOAT_MARGIN_SCALE
    if abs(val) > err:
        return val > 0
    expr = q.entropy_expression(scale=alpha)
    expr.add_const(Fraction(s) * (1 - alpha))
    expr.add_entropy(p.weights, p.total, scale=-1)
    if alpha != 1:
        expr.add_entropy((alpha.numerator, alpha.denominator - alpha.numerator),
                         alpha.denominator, scale=1)
    return expr.sign() >= 0


def minimal_floor_exponent(p: FiniteDistribution, support) -> int:
    """Smallest integer g2 >= 0 with p(x) >= 2**-(s+g2) on the support."""
    g2 = 0
    total = p.total
    for i in support:
        w = p.weights[i]
        if w == 0:
            raise ValueError("q's support leaves p's support")
        # need w * 2**(s+g2) >= total
        while w << (p.s + g2) < total:
            g2 += 1
    return g2


def check_kl_markov_lemma(
    p: FiniteDistribution,
    q: FiniteDistribution,
    alpha: Fraction,
    g2: int | None = None,
) -> bool:
    """Tail bound on the log-likelihood ratio log2(q(x)/p(x)) under x ~ q.

    With H(q) >= s - g1 and p(x) >= 2**-(s+g2) on supp(q), the mass of
    points where q(x)/p(x) exceeds
    2**(g1/alpha + g2 - (1-alpha)*log2(1-alpha)/alpha) is at most alpha.
    Returns True when the bound holds; asserts admissibility first.
    """
    alpha = Fraction(alpha)
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if p.s != q.s:
        raise ValueError("distributions live on different universes")
    s = p.s
    if g2 is None:
        g2 = minimal_floor_exponent(p, q.support)
    else:
        for i in q.support:
            if p.weights[i] << (s + g2) < p.total:
                raise ValueError("floor precondition violated")
    if len(q.support) < 2 and s > 0:
        raise ValueError("q must have entropy > 0 (g1 < s)")
    a, b = alpha.numerator, alpha.denominator

    # shared part of log2(q(x)/p(x)) - threshold exponent, where threshold =
    # g1/alpha + g2 - (1-alpha)log2(1-alpha)/alpha and g1 = s - H(q)
    af = float(alpha)
    cf = (1.0 - af) / af
    hq, ehq = _entropy_float(q.weights)
    bval = (
        -s / af
        - g2
        + hq / af
        + cf * (math.log2(b - a) - math.log2(b))
        - math.log2(q.total)
        + math.log2(p.total)
    )
    berr = ehq / af + (abs(cf) + s + g2 + 8.0) * _FLOAT_MARGIN_SCALE

    support = list(q.support)
    qi = np.array([q.weights[i] for i in support], dtype=np.float64)
    pi = np.array([p.weights[i] for i in support], dtype=np.float64)
    lt = np.log2(qi) - np.log2(pi)
    vals = bval + lt
    errs = berr + (np.abs(lt) + 2.0) * _FLOAT_MARGIN_SCALE

    above = vals > errs  # strictly above the threshold
    tail_num = int(qi[above].sum())
    borderline = np.nonzero(~above & (vals >= -errs))[0]
    if borderline.size:
        exact_base = LogExpression()
        exact_base.add_const(-Fraction(s, 1) / alpha - g2)
        exact_base.add_entropy(q.weights, q.total, scale=Fraction(1) / alpha)
        coeff = (1 - alpha) / alpha
        exact_base.add_log(coeff, b - a).add_log(-coeff, b)
        exact_base.add_log(-1, q.total).add_log(1, p.total)
        for idx in borderline:
            i = support[idx]
            e = exact_base.copy()
            e.add_log(1, q.weights[i]).add_log(-1, p.weights[i])
            if e.sign() > 0:
                tail_num += q.weights[i]
    return Fraction(tail_num, q.total) <= alpha


# ---------------------------------------------------------------------------
# randomized admissible-input generators


def _random_weights(rng: np.random.Generator, size: int, spread: float) -> tuple:
    """Dirichlet-like integer weights: quantized normalized exponentials."""
    raw = rng.exponential(scale=1.0, size=size) ** spread
    w = np.maximum(1, np.round(raw * 4096 / raw.mean()).astype(np.int64))
    return tuple(int(x) for x in w)


def _random_alpha(rng: np.random.Generator, at_most: Fraction) -> Fraction:
    b = int(rng.integers(8, 4096))
    a = int(rng.integers(1, b))
    alpha = Fraction(a, b)
    if alpha >= at_most:
        alpha = at_most * Fraction(int(rng.integers(1, 64)), 64)
    return alpha if alpha > 0 else Fraction(1, 4096)


def run_support_lemma_trials(trials: int, seed: int, max_s: int = 12) -> int:
    """Random (p, event, alpha) triples; returns the violation count."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    violations = 0
    for _ in range(trials):
        s = int(rng.integers(1, max_s + 1))
        n = 1 << s
        p = FiniteDistribution(s, _random_weights(rng, n, rng.uniform(0.5, 2.0)))
        size = int(rng.integers(1, n)) + 1
        event = tuple(int(i) for i in rng.choice(n, size=size, replace=False))
        alpha = _random_alpha(rng, p.mass(event))
        if not check_entropy_support_lemma(p, event, alpha):
            violations += 1
    return violations


def run_kl_lemma_trials(trials: int, seed: int, max_s: int = 12) -> int:
    """Random constrained (p, q, alpha) pairs; returns the violation count."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    violations = 0
    for _ in range(trials):
        s = int(rng.integers(1, max_s + 1))
        n = 1 << s
        p = FiniteDistribution(s, _random_weights(rng, n, rng.uniform(0.5, 1.5)))
        # q: near-uniform on a large random sub-support (keeps g1 small)
        keep = rng.random(n) < rng.uniform(0.5, 1.0)
        if keep.sum() < 2:
            keep[:2] = True
        qw = np.where(keep, rng.integers(2048, 4096, size=n), 0)
        q = FiniteDistribution(s, tuple(int(x) for x in qw))
        alpha = _random_alpha(rng, Fraction(1))
        if alpha >= 1:
            alpha = Fraction(63, 64)
        if not check_kl_markov_lemma(p, q, alpha):
            violations += 1
    return violations
