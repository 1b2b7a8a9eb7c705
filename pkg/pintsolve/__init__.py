"""pintsolve - parallel-in-time Crank-Nicolson solver with block alpha-circulant preconditioning."""

__version__ = "0.1.0"
__author__ = "pintsolve developers"
__description__ = "All-at-once Crank-Nicolson systems solved by preconditioned GMRES"

from .main import app

__all__ = ["app"]
