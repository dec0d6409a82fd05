"""Small argument checks shared by the config dataclasses and estimators."""

from __future__ import annotations

from numbers import Real

from .exceptions import ConfigError, NotFittedError


def check_count(name: str, value, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_positive(name: str, value) -> float:
    if not isinstance(value, Real) or not value > 0:
        raise ConfigError(f"{name} must be > 0, got {value!r}")
    return value


def check_nonnegative(name: str, value) -> float:
    if not isinstance(value, Real) or value < 0:
        raise ConfigError(f"{name} must be >= 0, got {value!r}")
    return value


def check_probability(name: str, value) -> float:
    if not isinstance(value, Real) or not 0 <= value <= 1:
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def check_distribution(name: str, weights: dict, tol: float = 1e-9) -> dict:
    """Weights must be non-negative and sum to one."""
    if not weights:
        raise ConfigError(f"{name} is empty")
    for key, w in weights.items():
        if w < 0:
            raise ConfigError(f"{name}[{key!r}] is negative ({w})")
    total = sum(weights.values())
    if abs(total - 1) > tol:
        raise ConfigError(f"{name} sums to {total}, expected 1")
    return weights


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
