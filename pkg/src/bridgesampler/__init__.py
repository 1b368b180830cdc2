"""Diffusion-bridge sampling with exact gradient verification tools."""

import os as _os

# Cap BLAS/OpenMP worker threads before numpy is first imported anywhere in
# the package; override with BRIDGESAMPLER_THREADS.
_threads = _os.environ.get("BRIDGESAMPLER_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from . import autodiff, dpi, metrics, verify  # noqa: E402
from .bridge import Bridge, TrajectoryBatch  # noqa: E402
from .discrete import TwoStateChain  # noqa: E402
from .harness import (RunConfig, RunManifest, load_checkpoint,  # noqa: E402
                      parse_config, save_checkpoint, train)
from .losses import (GradReport, grad_fkl_nis, grad_lv,  # noqa: E402
                     grad_rkl_ld, grad_rkl_r, lv_loss_value)
from .targets import REGISTRY, get_target  # noqa: E402

__all__ = [
    "Bridge", "TrajectoryBatch", "TwoStateChain", "GradReport",
    "RunConfig", "RunManifest", "REGISTRY", "get_target",
    "grad_rkl_ld", "grad_lv", "grad_rkl_r", "grad_fkl_nis", "lv_loss_value",
    "train", "parse_config", "save_checkpoint", "load_checkpoint",
    "autodiff", "dpi", "metrics", "verify", "__version__",
]
