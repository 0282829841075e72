"""Fixed (non-learnable) sparse matrices usable inside the autodiff graph."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class CsrMatrix:
    """CSR matrix with its transpose precomputed for backward passes."""

    def __init__(self, mat):
        self._m = sp.csr_matrix(mat)
        self._mt = self._m.T.tocsr()

    @property
    def shape(self):
        return self._m.shape

    def dot(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._m.dot(x))

    def t_dot(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._mt.dot(x))

    def toarray(self) -> np.ndarray:
        return self._m.toarray()
