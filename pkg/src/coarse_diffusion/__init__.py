"""Diffusion-model machinery on synthetic manifolds: exact geometry, smoothed
mixtures, score training, hybrid SDE/ODE sampling and coverage diagnostics."""

from . import diagnostics, geometry, kernels, measures, nn, potential, sampler, score
from .errors import CoarseDiffusionError
from .geometry import (
    Circle,
    CliffordTorus,
    Sphere,
    SpecialOrthogonal,
    SurfaceDensity,
    manifold_from_config,
)
from .measures import SmoothedMixture
from .nn import ScoreNet
from .sampler import NoiseSchedule, SamplerConfig, hybrid_sample
from .score import Learned, OracleMixture, Perturbed, ProjectionClass

__version__ = "0.1.0"
