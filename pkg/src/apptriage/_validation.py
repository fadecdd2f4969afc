from __future__ import annotations

import hashlib

import numpy as np
from sklearn.utils import check_array


def check_embeddings(X, *, min_samples: int = 1) -> np.ndarray:
    """2-D finite float64 array; ragged input surfaces as a dimension mismatch."""
    if isinstance(X, (list, tuple)) and X:
        dims = {len(np.ravel(row)) for row in X}
        if len(dims) > 1:
            raise ValueError(f"dimension mismatch across embeddings: {sorted(dims)}")
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples, ensure_all_finite=True)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
