"""demogen: synthesize robot manipulation demonstrations from scene prompts.

The package turns an asset manifest into a physically consistent scene,
grounds synthetic 2D tracks and depth into rigid object motion, converts
that motion into grasp-conditioned joint trajectories, and emits episode
datasets ready for imitation-learning tooling. All generative model calls
sit behind pluggable providers with deterministic stubs.
"""

__version__ = "0.1.0"

from .errors import DemogenError

__all__ = ["DemogenError", "__version__"]
