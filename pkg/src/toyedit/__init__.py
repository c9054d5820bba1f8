"""toyedit: a tiny diffusion model aligned into an instruction editor on a
procedurally generated image world, with exact oracle metrics."""

from toyedit.kernels import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
