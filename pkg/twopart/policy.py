"""Hypothetical interventions d(t, x, eps) on the treatment.

Each policy maps the natural treatment (and covariates, and for randomized
policies a uniform randomizer) to a shifted treatment value. Policies on a
binary treatment whose post-intervention density is a closed-form function of
the propensity score also expose that density ratio.
"""

import logging
import re
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ConfigError, DataError, PositivityError
from .utils import as_matrix, as_vector

logger = logging.getLogger("twopart")


def _require_binary(t: NDArray, policy: str) -> None:
    if not np.all(np.isin(t, (0.0, 1.0))):
        raise DataError(f"Policy '{policy}' requires a binary (0/1) treatment.")


def _natural_density(t: NDArray, g1: NDArray) -> NDArray:
    return np.where(t == 1, g1, 1.0 - g1)


@dataclass(frozen=True)
class Policy(ABC):
    """Base class of all interventions; `seed` drives the randomizer stream."""

    seed: int = 0
    is_smooth_invertible: bool = False

    randomized = False
    supports_analytic_ratio = True

    @abstractmethod
    def _shift(self, t: NDArray, x: NDArray, eps: NDArray | None) -> NDArray: ...

    @abstractmethod
    def describe(self) -> str: ...

    def randomizer(self, n: int, rng: np.random.Generator | None = None) -> NDArray:
        """Per-observation eps ~ U(0, 1), reproducible from the policy seed."""
        rng = rng or np.random.Generator(np.random.PCG64(self.seed))
        return rng.uniform(size=n)

    def apply(
        self, t: ArrayLike, x: ArrayLike, rng: np.random.Generator | None = None
    ) -> NDArray[np.float64]:
        t = as_vector(t, "t")
        x = as_matrix(x, "x")
        if x.shape[0] != len(t):
            raise ValueError("Covariate rows do not match the treatment length.")
        eps = self.randomizer(len(t), rng) if self.randomized else None
        return self._shift(t, x, eps)

    def transitions(
        self, t: ArrayLike, x: ArrayLike
    ) -> list[tuple[NDArray[np.float64], float]]:
        """Shifted treatment values with their probability over the randomizer."""
        t = as_vector(t, "t")
        return [(self._shift(t, as_matrix(x, "x"), None), 1.0)]

    def post_intervention_density(
        self, t: NDArray, g1: NDArray, x: NDArray | None
    ) -> NDArray:
        raise ConfigError(f"Policy '{self.describe()}' has no analytic density ratio.")


@dataclass(frozen=True)
class Identity(Policy):
    def _shift(self, t, x, eps):
        return t.copy()

    def post_intervention_density(self, t, g1, x):
        return _natural_density(t, g1)

    def describe(self) -> str:
        return "identity"


@dataclass(frozen=True)
class Static(Policy):
    value: float = 1.0

    def _shift(self, t, x, eps):
        return np.full_like(t, self.value, dtype=float)

    def post_intervention_density(self, t, g1, x):
        return (t == self.value).astype(float)

    def describe(self) -> str:
        return f"static:{self.value:g}"


@dataclass(frozen=True)
class DynamicThreshold(Policy):
    covariate_index: int = 0
    threshold: float = 0.0
    hi_value: float = 1.0
    lo_value: float = 0.0
    covariate_name: str | None = None

    def _rule(self, x: NDArray) -> NDArray:
        if not 0 <= self.covariate_index < x.shape[1]:
            raise ConfigError(
                f"Covariate index {self.covariate_index} out of range for "
                f"{x.shape[1]} covariates."
            )
        return np.where(
            x[:, self.covariate_index] > self.threshold, self.hi_value, self.lo_value
        )

    def _shift(self, t, x, eps):
        return self._rule(x).astype(float)

    def post_intervention_density(self, t, g1, x):
        if x is None:
            raise ValueError("Dynamic policies need covariates to compute the ratio.")
        return (t == self._rule(as_matrix(x, "x"))).astype(float)

    def describe(self) -> str:
        name = self.covariate_name or f"x{self.covariate_index + 1}"
        return f"dynamic:{name}>{self.threshold:g}?{self.hi_value:g}:{self.lo_value:g}"


@dataclass(frozen=True, eq=False)
class AdditiveShift(Policy):
    """t + delta where it stays below the bound u(x); the natural value otherwise."""

    delta: float = 0.0
    upper: float | NDArray | None = None
    upper_label: str | None = None

    supports_analytic_ratio = False

    def _shift(self, t, x, eps):
        shifted = t + self.delta
        if self.upper is None:
            return shifted
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), t.shape)
        return np.where(shifted <= upper, shifted, t)

    def describe(self) -> str:
        text = f"shift:{self.delta:+g}"
        if self.upper_label is not None:
            text += f",cap={self.upper_label}"
        elif self.upper is not None and np.ndim(self.upper) == 0:
            text += f",cap={float(self.upper):g}"
        return text


@dataclass(frozen=True)
class _Incremental(Policy):
    delta: float = 1.0

    randomized = True
    direction = ""
    target = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError(
                f"IPSI risk ratio must lie in (0, 1]; got {self.delta}."
            )

    def apply(self, t, x, rng=None):
        t = as_vector(t, "t")
        _require_binary(t, self.describe())
        return super().apply(t, x, rng)

    def _shift(self, t, x, eps):
        return np.where(eps < self.delta, t, self.target)

    def transitions(self, t, x):
        t = as_vector(t, "t")
        _require_binary(t, self.describe())
        outcomes = [(t.copy(), self.delta)]
        if self.delta < 1.0:
            outcomes.append((np.full_like(t, self.target), 1.0 - self.delta))
        return outcomes

    def describe(self) -> str:
        return f"ipsi-{self.direction}:{self.delta:g}"


@dataclass(frozen=True)
class IpsiDown(_Incremental):
    """Keeps the natural treatment with probability delta, otherwise untreated."""

    direction = "down"

    def post_intervention_density(self, t, g1, x):
        return t * self.delta * g1 + (1 - t) * (1 - self.delta * g1)


@dataclass(frozen=True)
class IpsiUp(_Incremental):
    """Keeps the natural treatment with probability delta, otherwise treated."""

    direction = "up"
    target = 1.0

    def post_intervention_density(self, t, g1, x):
        g0 = 1.0 - g1
        return t * (1 - self.delta * g0) + (1 - t) * self.delta * g0


def apply(
    policy: Policy, t: ArrayLike, x: ArrayLike, rng: np.random.Generator | None = None
) -> NDArray[np.float64]:
    """Shifted treatment values T^d = d(T, X, eps)."""
    return policy.apply(t, x, rng)


def analytic_ratio(
    policy: Policy, t: ArrayLike, g_hat: ArrayLike, x: ArrayLike | None = None
) -> NDArray[np.float64]:
    """
    Closed-form density ratio g^d(T, X) / g(T, X) for a binary treatment.

    Args:
    - policy (Policy): Any policy except an additive shift.
    - t (ArrayLike): Natural binary treatment values.
    - g_hat (ArrayLike): Propensity values P(T = 1 | X), strictly inside (0, 1).
    - x (ArrayLike | None): Covariates, needed by dynamic policies only.
    """
    t = as_vector(t, "t")
    g1 = as_vector(g_hat, "g_hat")
    if len(t) != len(g1):
        raise ValueError("Treatment and propensity lengths differ.")
    if not policy.supports_analytic_ratio:
        raise ConfigError(f"Policy '{policy.describe()}' has no analytic density ratio.")
    _require_binary(t, policy.describe())
    if np.any(g1 <= 0) or np.any(g1 >= 1):
        raise PositivityError()
    return policy.post_intervention_density(t, g1, x) / _natural_density(t, g1)


_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_DYNAMIC = re.compile(rf"^(?P<name>[^<>?:]+)>(?P<thr>{_NUMBER})\?(?P<hi>{_NUMBER}):(?P<lo>{_NUMBER})$")


def _number(text: str, policy: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"Invalid number '{text}' in policy '{policy}'.")


def parse_policy(
    text: str,
    covariate_names: Sequence[str] = (),
    columns: Mapping[str, NDArray] | None = None,
    seed: int = 0,
) -> Policy:
    """
    Parses the policy mini-language.

    Accepted forms: `identity`, `static:1`, `shift:+2`, `shift:+2,cap=5`,
    `shift:+2,cap=col:u`, `ipsi-down:0.5`, `ipsi-up:0.5`, `dynamic:x3>0.2?1:0`.
    Column caps are looked up in `columns`.
    """
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("Empty policy string.")
    text = text.strip()
    kind, _, body = text.partition(":")
    kind = kind.lower()

    if kind == "identity" and not body:
        return Identity(seed=seed)
    if kind == "static":
        return Static(seed=seed, value=_number(body, text))
    if kind in ("ipsi-down", "ipsi-up"):
        cls = IpsiDown if kind == "ipsi-down" else IpsiUp
        return cls(seed=seed, delta=_number(body, text))
    if kind == "shift":
        amount, _, cap = body.partition(",")
        delta = _number(amount, text)
        if not cap:
            return AdditiveShift(seed=seed, delta=delta, is_smooth_invertible=True)
        key, _, value = cap.partition("=")
        if key.strip() != "cap" or not value:
            raise ConfigError(f"Invalid cap in policy '{text}'. Expected 'cap=<value>'.")
        if value.startswith("col:"):
            column = value[len("col:"):]
            if not columns or column not in columns:
                raise ConfigError(f"Cap column '{column}' is not available.")
            return AdditiveShift(
                seed=seed,
                delta=delta,
                upper=np.asarray(columns[column], dtype=float),
                upper_label=value,
                is_smooth_invertible=True,
            )
        return AdditiveShift(
            seed=seed, delta=delta, upper=_number(value, text), is_smooth_invertible=True
        )
    if kind == "dynamic":
        match = _DYNAMIC.match(body.replace(" ", ""))
        if not match:
            raise ConfigError(
                f"Invalid dynamic policy '{text}'. Expected 'dynamic:<covariate>>"
                "<threshold>?<hi>:<lo>'."
            )
        name = match["name"]
        if name not in covariate_names:
            raise ConfigError(
                f"Unknown covariate '{name}' in policy '{text}'. "
                f"Available covariates: {list(covariate_names)}."
            )
        return DynamicThreshold(
            seed=seed,
            covariate_index=list(covariate_names).index(name),
            threshold=float(match["thr"]),
            hi_value=float(match["hi"]),
            lo_value=float(match["lo"]),
            covariate_name=name,
        )
    raise ConfigError(
        f"Unknown policy '{text}'. Available kinds: identity, static, shift, "
        "ipsi-down, ipsi-up, dynamic."
    )
