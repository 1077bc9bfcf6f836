"""Volumes of unit vector fields: quadrature, Crofton estimates, pole analysis, surgery and descent."""
from .geometry import DomainError, PoleError, Manifold, sphere, torus
from .fields import (UnitField, GridField, LocalGraph, constant_field, hopf_field, pedersen_field,
                     longitude_field, twist_field, local_graph)
from .volume import VolumeReport, Ball

__version__ = "0.1.0"

__all__ = [
    "DomainError", "PoleError", "Manifold", "sphere", "torus", "UnitField", "GridField",
    "LocalGraph", "constant_field", "hopf_field", "pedersen_field", "longitude_field",
    "twist_field", "local_graph", "VolumeReport", "Ball",
]
