"""Shared test helpers: independent dense comparators and random inputs."""

import numpy as np

from fixedrank import canonicalize


def dense_projection(Z, A_L, B_R):
    """Tangent-space projector in the alternative dense form.

    This is the comparator for every projection-flavored test; it never
    touches the factored code paths it checks.
    """
    m, n = Z.shape
    left = np.eye(m) - A_L @ A_L.T
    right = np.eye(n) - B_R @ B_R.T
    return Z - left @ Z @ right


def random_point(rng, m, n, r):
    """A generic manifold point with its right orthonormal frame."""
    return canonicalize(rng.standard_normal((m, r)), rng.standard_normal((n, r)))


def frob(M):
    return float(np.linalg.norm(M))
