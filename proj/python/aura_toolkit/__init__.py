"""Expert-neuron interventions on a character-level toy transformer."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import AuraError, PipelineConfig, __version__


def config_from_dict(d):
    """PipelineConfig from a plain dict (same keys as the JSON config file)."""
    return PipelineConfig.from_json(_json.dumps(d))
