"""Adversarial attacks beyond the image space on a desk-scale render-and-classify pipeline."""

from ._core import (
    SCENE_DIMS,
    SHAPES,
    AttackConfig,
    BlackBoxScene,
    Classifier,
    PhysicalScene,
    cli,
    fgsm_image,
    fgsm_physical,
    perceptibility,
    random_scene,
    reconstruction_curve,
    rerender_defense,
    sample_scene,
    zoo_scene,
)

__all__ = [
    "SCENE_DIMS",
    "SHAPES",
    "AttackConfig",
    "BlackBoxScene",
    "Classifier",
    "PhysicalScene",
    "cli",
    "fgsm_image",
    "fgsm_physical",
    "perceptibility",
    "random_scene",
    "reconstruction_curve",
    "rerender_defense",
    "sample_scene",
    "zoo_scene",
]
