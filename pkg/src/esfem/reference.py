"""Lagrange reference elements on the unit segment and unit triangle.

The same shape functions drive both the isoparametric geometry maps and the
finite element bases (the discretization is isoparametric by construction).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


class ReferenceElement:
    """Nodal Lagrange element of degree ``degree`` on the reference cell.

    dim 1: segment [0,1], nodes at i/degree (endpoints first and last).
    dim 2: unit triangle, vertex nodes then edge nodes (degree <= 2).
    """

    def __init__(self, dim, degree):
        if dim == 1:
            if degree < 1:
                raise ValueError("degree must be >= 1")
            self.nodes = (np.arange(degree + 1) / degree).reshape(-1, 1)
            self.vertex_ids = (0, degree)
            # monomial coefficients of each basis function via Vandermonde
            v = np.vander(self.nodes[:, 0], degree + 1, increasing=True)
            self._coeffs = np.linalg.inv(v)
        elif dim == 2:
            if degree == 1:
                self.nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
            elif degree == 2:
                self.nodes = np.array(
                    [
                        [0.0, 0.0],
                        [1.0, 0.0],
                        [0.0, 1.0],
                        [0.5, 0.0],
                        [0.5, 0.5],
                        [0.0, 0.5],
                    ]
                )
            else:
                raise ValueError("triangle elements support degree 1 and 2 only")
            self.vertex_ids = (0, 1, 2)
        else:
            raise ValueError("reference dimension must be 1 or 2")
        self.dim = dim
        self.degree = degree
        self.n_nodes = len(self.nodes)

    def shape_values(self, points):
        """Basis values, shape (npts, n_nodes)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            powers = np.vander(pts[:, 0], self.degree + 1, increasing=True)
            return powers @ self._coeffs
        l0 = 1.0 - pts[:, 0] - pts[:, 1]
        l1 = pts[:, 0]
        l2 = pts[:, 1]
        if self.degree == 1:
            return np.stack([l0, l1, l2], axis=-1)
        return np.stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l0 * l1,
                4 * l1 * l2,
                4 * l2 * l0,
            ],
            axis=-1,
        )

    def shape_gradients(self, points):
        """Reference gradients, shape (npts, n_nodes, dim)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.dim == 1:
            k = self.degree
            dpow = np.zeros((pts.shape[0], k + 1))
            for j in range(1, k + 1):
                dpow[:, j] = j * pts[:, 0] ** (j - 1)
            return (dpow @ self._coeffs)[:, :, None]
        npts = pts.shape[0]
        dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        if self.degree == 1:
            return np.broadcast_to(dl, (npts, 3, 2)).copy()
        l = np.stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=-1)
        grads = np.zeros((npts, 6, 2))
        for i in range(3):
            grads[:, i, :] = (4 * l[:, i, None] - 1) * dl[i]
        pairs = [(0, 1), (1, 2), (2, 0)]
        for e, (i, j) in enumerate(pairs):
            grads[:, 3 + e, :] = 4 * (l[:, i, None] * dl[j] + l[:, j, None] * dl[i])
        return grads


@lru_cache(maxsize=None)
def reference_element(dim, degree):
    return ReferenceElement(dim, degree)
