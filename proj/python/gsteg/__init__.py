"""Gated spatio-temporal energy graph: mean-field CRF inference, learning and evaluation."""

import json

from ._core import (
    GstegError,
    Model,
    average_precision,
    recognition_accuracy,
    run_cli,
    verify,
    viou,
)
from ._core import generate_dataset as _generate_dataset

__all__ = [
    "GstegError",
    "Model",
    "average_precision",
    "generate_dataset",
    "instance_json",
    "recognition_accuracy",
    "run_cli",
    "verify",
    "viou",
]


def generate_dataset(*args, **kwargs):
    """Planted synthetic instances as dictionaries."""
    return [json.loads(s) for s in _generate_dataset(*args, **kwargs)]


def instance_json(instance):
    """Serializes an instance dictionary for the Model methods."""
    return instance if isinstance(instance, str) else json.dumps(instance)
