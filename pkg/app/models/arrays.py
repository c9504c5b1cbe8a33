"""
Array Field Types

Annotated numpy types for pydantic models. Arrays are copied to float64 and
frozen on validation, and serialize as nested lists.
"""

from typing import Annotated

import numpy as np
from pydantic import BeforeValidator, PlainSerializer


def _frozen_float_array(value) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_frozen_float_array),
    PlainSerializer(lambda array: array.tolist(), return_type=list),
]
