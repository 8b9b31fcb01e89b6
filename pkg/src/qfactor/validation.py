"""Input coercion helpers so estimators accept panels or plain arrays."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError
from .panel import PanelData

__all__ = ["as_panel", "panel_values"]


def as_panel(X) -> PanelData:
    """Coerce an input to PanelData (validates shape and finiteness)."""
    if isinstance(X, PanelData):
        return X
    return PanelData(values=np.asarray(X, dtype=float))


def panel_values(X) -> np.ndarray:
    """Return the T x N value matrix of a panel-like input."""
    if isinstance(X, PanelData):
        return X.values
    values = np.asarray(X, dtype=float)
    if values.ndim != 2:
        raise DimensionError(f"expected a 2-D panel, got ndim={values.ndim}")
    return values
