"""Shared fixtures-by-function for the heavier test modules."""

import numpy as np

from dilatevit.autograd import Parameter
from dilatevit.msda import MsdaBlockSpec, block_param_shapes


def make_block_params_f32(spec: MsdaBlockSpec, prefix: str, rng) -> dict[str, Parameter]:
    params = {}
    for name, shape in block_param_shapes(spec, prefix).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            value = np.ones(shape, dtype=np.float32)
        elif leaf in ("bias", "beta"):
            value = np.zeros(shape, dtype=np.float32)
        else:
            value = (0.3 * rng.standard_normal(shape)).astype(np.float32)
        params[name] = Parameter(name, value)
    return params
