"""Input checks shared by the estimators and functional API."""

import numpy as np
from sklearn.utils.validation import check_array


def check_image(X, name="image"):
    """Return ``X`` as a finite float64 2D array."""
    try:
        return check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                           input_name=name)
    except ValueError as exc:
        raise ValueError(f"invalid {name}: {exc}") from exc


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ValueError(f"{label} must share dimensions, got {shapes}")
