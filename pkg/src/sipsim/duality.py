"""Duality polynomials for SIP(m) and transforms of measures under them.

The single-site factor is

    d(k, l) = l!/(l-k)! * Gamma(m/2) / Gamma(m/2 + k)   for k <= l,
    d(k, l) = 0                                          for k > l,

so d(0, .) = 1, and the full polynomial D(xi, eta) is the product of the
factors over the sites xi occupies. The transform of a measure mu is the
collection of its duality moments hat(mu)(xi) = integral of D(xi, .) d mu;
closed forms exist for the product laws in `measures`, and any sampler can
be transformed empirically with a batch-means error bar.

Temperedness asks the per-size suprema c_n = sup_{|xi|=n} hat(mu)(xi) to be
finite and to satisfy the Carleman condition sum_n c_n^(-1/n) = infinity.
Deciding Carleman from finitely many moments is impossible, so it is
documented here per closed form and never evaluated at runtime. All closed
forms below have c_n = rho^n for their natural density rho, which passes
Carleman since (rho^n)^(-1/n) = 1/rho is constant.
"""

from __future__ import annotations

import math

from .core import RandomStream, occupation_of
from .measures import Deterministic, InitialLaw, NuLambda, NuMixture, PoissonProduct
from .stats import batched


class DualityEvaluator:
    """Caches the log-Gamma ladder log(Gamma(m/2+k)/Gamma(m/2)) for k = 0..K.

    The ladder grows on demand and is append-only, so concurrent readers
    always observe a consistent prefix. Note the plain ratio
    Gamma(m/2+1)/Gamma(m/2) = m/2 dips below 1 when m < 2; strict growth of
    the ladder only holds from k = 1 on.
    """

    def __init__(self, m: float):
        if not m > 0:
            raise ValueError(f"m must be positive, got {m!r}")
        self.m = m
        self._ladder = [0.0]

    def _log_gamma_ratio(self, k: int) -> float:
        ladder = self._ladder
        while len(ladder) <= k:
            j = len(ladder) - 1
            ladder.append(ladder[j] + math.log(0.5 * self.m + j))
        return ladder[k]

    def single(self, k: int, l: int) -> float:
        """d(k, l), computed in log space and exponentiated."""
        if k < 0 or l < 0:
            raise ValueError("occupation numbers must be nonnegative")
        if k > l:
            return 0.0
        if k == 0:
            return 1.0
        return math.exp(
            math.lgamma(l + 1) - math.lgamma(l - k + 1) - self._log_gamma_ratio(k)
        )

    def value(self, xi, eta_counts) -> float:
        """D(xi, eta): product over xi's support, short-circuiting at 0."""
        out = 1.0
        for site, k in occupation_of(xi).items():
            l = eta_counts.get(site, 0)
            if k > l:
                return 0.0
            out *= self.single(k, l)
        return out

    def closed_transform(self, law: InitialLaw, xi) -> float:
        """Exact duality moment of a closed-form law at the configuration xi."""
        if isinstance(law, NuLambda):
            self._check_m(law.m)
            return law.rho ** len(xi)
        if isinstance(law, NuMixture):
            self._check_m(law.m)
            n = len(xi)
            return sum(w * (lam / (1.0 - lam)) ** n for lam, w in law.atoms)
        if isinstance(law, PoissonProduct):
            out = 1.0
            for _, k in occupation_of(xi).items():
                out *= law.theta**k * math.exp(-self._log_gamma_ratio(k))
            return out
        if isinstance(law, Deterministic):
            return self.value(xi, law.occupation())
        raise TypeError(f"no closed-form transform for {type(law).__name__}")

    def empirical_transform(self, xi, sampler, reps: int, stream: RandomStream):
        """Sample mean and batch-means stderr of D(xi, .) over sampled fields."""
        if reps < 2:
            raise ValueError(f"need at least 2 replicas, got {reps}")
        values = [self.value(xi, sampler(stream)) for _ in range(reps)]
        return batched(values)

    def temperedness_bound(self, law: InitialLaw, n: int) -> float:
        """c_n = sup over |xi| = n of the closed-form transform.

        For the product laws the supremum over placements reduces to a
        maximum over integer partitions of n of a product of per-site
        factors (solved by a small DP); for NuLambda and mixtures the
        transform is placement-free. Carleman itself is documented in the
        module docstring, not verified here.
        """
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        if n == 0:
            return 1.0
        if isinstance(law, NuLambda):
            self._check_m(law.m)
            return law.rho**n
        if isinstance(law, NuMixture):
            self._check_m(law.m)
            return sum(w * (lam / (1.0 - lam)) ** n for lam, w in law.atoms)
        if isinstance(law, PoissonProduct):
            # site with k particles contributes theta^k / (Gamma ratio);
            # singletons dominate, so the DP lands on (2 theta / m)^n
            site_factor = [1.0] + [
                law.theta**k * math.exp(-self._log_gamma_ratio(k)) for k in range(1, n + 1)
            ]
            best = [1.0] + [0.0] * n
            for total in range(1, n + 1):
                best[total] = max(site_factor[k] * best[total - k] for k in range(1, total + 1))
            return best[n]
        if isinstance(law, Deterministic):
            return self._point_mass_bound(law.occupation(), n)
        raise TypeError(
            f"temperedness bound needs a closed-form law, got {type(law).__name__}"
        )

    def _point_mass_bound(self, eta_counts: dict, n: int) -> float:
        # allocate n dual particles over eta's support, maximizing the product
        capacities = sorted(eta_counts.items())
        best = [1.0] + [0.0] * n
        for _, l in capacities:
            nxt = best[:]
            for total in range(1, n + 1):
                for k in range(1, min(l, total) + 1):
                    cand = best[total - k] * self.single(k, l)
                    if cand > nxt[total]:
                        nxt[total] = cand
            best = nxt
        return best[n]

    def _check_m(self, law_m: float):
        if law_m != self.m:
            raise ValueError(
                f"law has m={law_m} but the evaluator uses m={self.m}; "
                "the duality moment identity needs matching parameters"
            )


def single_site_duality(k: int, l: int, m: float) -> float:
    return DualityEvaluator(m).single(k, l)


def duality_value(xi, eta_counts, m: float) -> float:
    return DualityEvaluator(m).value(xi, eta_counts)


def closed_form_transform(law: InitialLaw, xi, m: float) -> float:
    return DualityEvaluator(m).closed_transform(law, xi)


def empirical_transform(xi, sampler, reps: int, stream: RandomStream, m: float):
    return DualityEvaluator(m).empirical_transform(xi, sampler, reps, stream)


def temperedness_bound(law: InitialLaw, n: int, m: float) -> float:
    return DualityEvaluator(m).temperedness_bound(law, n)


def ah_density(law: InitialLaw, m: float) -> float:
    """The constant rho the smeared single-site moments converge to.

    NuLambda: lam/(1-lam). PoissonProduct: 2*theta/m (the single-site moment
    is already position-free). NuMixture: the weighted density average; note
    a mixture keeps its full transform E[rho^n] in time (it is invariant),
    so this constant alone does not describe its n >= 2 moments.
    """
    if isinstance(law, NuLambda):
        return law.rho
    if isinstance(law, PoissonProduct):
        return 2.0 * law.theta / m
    if isinstance(law, NuMixture):
        return sum(w * lam / (1.0 - lam) for lam, w in law.atoms)
    raise TypeError(f"no homogeneous density for {type(law).__name__}")
