"""Central finite differences, independent of the autodiff engine."""
import numpy as np


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """d f() / d arr by central differences; ``arr`` is perturbed in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    idx = range(flat.size) if index is None else index
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float | None = None) -> float:
    """Largest elementwise relative error; entries far below the tensor's scale
    are measured against ``floor`` (default 1e-3 of the largest magnitude)."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if floor is None:
        floor = max(1e-3 * float(np.max(np.abs(b), initial=0.0)), 1e-12)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0
