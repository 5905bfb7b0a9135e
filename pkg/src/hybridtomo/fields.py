"""Discrete fields: a coefficient vector tied to a function space, plus a
provenance tag used to enforce the two-mesh data protocol."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    """Where a field lives and where its values were generated.

    `sources` holds the fingerprints of every mesh whose solves contributed
    to the values.  Data whose sources include the reconstruction mesh are
    rejected by the inverse assembler unless explicitly allowed.
    """

    mesh_fingerprint: str
    sources: frozenset = frozenset()
    note: str = ""

    def __post_init__(self):
        if not self.sources:
            object.__setattr__(self, "sources",
                               frozenset({self.mesh_fingerprint}))


@dataclass
class FemField:
    space: "SpaceDescriptor"
    coefficients: np.ndarray
    provenance: Provenance = None

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float).ravel()
        if len(coeffs) != self.space.dof_count:
            raise FieldError("coefficient vector has length %d, space has %d dofs"
                             % (len(coeffs), self.space.dof_count))
        if not np.all(np.isfinite(coeffs)):
            raise FieldError("non-finite coefficient in field")
        self.coefficients = coeffs
        if self.provenance is None:
            self.provenance = Provenance(self.space.mesh.fingerprint)

    @property
    def mesh(self):
        return self.space.mesh

    def copy_with(self, coefficients, note=None, sources=None):
        prov = Provenance(self.provenance.mesh_fingerprint,
                          sources if sources is not None else self.provenance.sources,
                          note if note is not None else self.provenance.note)
        return FemField(self.space, coefficients, prov)


def field_sub(a, b):
    """a - b on the same space, provenance sources merged."""
    if a.space is not b.space and (a.space.kind != b.space.kind
                                   or a.space.mesh is not b.space.mesh):
        raise FieldError("field_sub requires fields on the same space")
    prov = Provenance(a.provenance.mesh_fingerprint,
                      a.provenance.sources | b.provenance.sources,
                      "difference")
    return FemField(a.space, a.coefficients - b.coefficients, prov)
