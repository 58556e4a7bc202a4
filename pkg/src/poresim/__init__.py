"""Pore-density model hierarchy: full model, nonlocal parabolic problem, transport limit."""
from __future__ import annotations

from .params import ModelParams, SelfSimilarProfile, derive_profile, eval_Fs, fs_residual
from .grids import DensityField, RadialGrid, first_moment, from_selfsim, to_selfsim

__version__ = "0.1.0"
