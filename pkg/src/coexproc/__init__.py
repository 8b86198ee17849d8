"""Bayes linear reconstruction of a primary field and a dependent field from
multi-model ensembles and sparse observations."""

__version__ = "0.1.0"

from .bayes_linear import BeliefStructure, JointBeliefs, adjust
from .coex_field import (CoexFieldSpec, FieldEnsemble, FieldReconstruction, ObservationSet,
                         first_update_field, second_update_field)
from .coex_process import (ExtentObservations, ProcessReconstruction, RealityProcessSpec,
                           first_update_process, sample_plausible, second_update_process)
from .hier_process import adjust_hierarchy, adjust_hierarchy_dense
from .linalg import KroneckerOp

__all__ = [
    "BeliefStructure", "JointBeliefs", "adjust",
    "CoexFieldSpec", "FieldEnsemble", "FieldReconstruction", "ObservationSet",
    "first_update_field", "second_update_field",
    "ExtentObservations", "ProcessReconstruction", "RealityProcessSpec",
    "first_update_process", "sample_plausible", "second_update_process",
    "adjust_hierarchy", "adjust_hierarchy_dense", "KroneckerOp",
]
