import numpy as np
from scipy import linalg

from . import _config


def jitchol(A, max_jitter=None):
    """Lower Cholesky factor, adding escalating relative jitter on failure.

    Jitter starts at ``1e-9`` times the mean diagonal and grows tenfold up to
    ``max_jitter`` (default ``1e-4``) relative.
    """
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    max_jitter = _config.MAX_JITTER if max_jitter is None else max_jitter
    scale = np.mean(np.diag(A))
    if not np.isfinite(scale) or scale <= 0:
        raise np.linalg.LinAlgError("not positive definite: non-positive diagonal")
    jitter = _config.JITTER
    while jitter <= max_jitter * (1 + 1e-12):
        try:
            return linalg.cholesky(A + jitter * scale * np.eye(A.shape[0]), lower=True)
        except linalg.LinAlgError:
            jitter *= 10
    raise np.linalg.LinAlgError("ill-conditioned inducing matrix")
