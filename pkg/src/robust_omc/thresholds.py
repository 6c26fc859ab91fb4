"""Acceptance thresholds derived from optimisation end distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True)
class QuantileConfig:
    """Quantiles of the end distances that set the three thresholds.

    Attributes
    ----------
    accept : float
        Quantile for the acceptance threshold.
    proposal : float
        Quantile for the proposal (ellipse) threshold.
    loose : float
        Quantile for the loose bounding box.
    """

    accept: float = 0.9
    proposal: float = 0.95
    loose: float = 0.975

    def __post_init__(self):
        for q in (self.accept, self.proposal, self.loose):
            if not 0.0 < q <= 1.0:
                raise ConfigurationError("quantiles must lie in (0, 1]")
        if not self.accept <= self.proposal <= self.loose:
            raise ConfigurationError("quantiles must be ordered accept <= proposal <= loose")

    @classmethod
    def parse(cls, text: str) -> "QuantileConfig":
        """Parse ``"0.9,0.95,0.975"``; a single value sets all three."""
        try:
            parts = [float(p) for p in str(text).split(",") if p.strip()]
        except ValueError as exc:
            raise ConfigurationError(f"quantiles must be numbers: {text!r}") from exc
        if len(parts) == 1:
            parts *= 3
        if len(parts) != 3:
            raise ConfigurationError("expected one or three comma-separated quantiles")
        return cls(*parts)

    def as_list(self) -> list[float]:
        return [self.accept, self.proposal, self.loose]


def select_epsilon(d_star, quantile: float) -> float:
    """Empirical quantile of end distances with linear interpolation.

    Non-finite distances (failed optimisations) count as larger than every
    finite one.

    Raises
    ------
    ConfigurationError
        On an empty list or a quantile outside ``(0, 1]``.
    """
    d = np.asarray(d_star, dtype=float).ravel()
    if d.size == 0:
        raise ConfigurationError("cannot select a threshold from no distances")
    if not 0.0 < quantile <= 1.0:
        raise ConfigurationError("quantile must lie in (0, 1]")
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise ConfigurationError("distances must be nonnegative")
    d = np.sort(d)
    pos = quantile * (len(d) - 1)
    lo, hi = int(np.floor(pos)), int(np.ceil(pos))
    if d[lo] == d[hi]:
        return float(d[lo])
    # Same interpolation as numpy's "linear" method, but inf stays inf.
    return float(d[lo] + (pos - lo) * (d[hi] - d[lo]))
