"""Desk-scale testbed for adversarial illusions and consensus-based generative mitigation."""

__version__ = "1.0.0"
__description__ = (
    "Adversarial illusions on a shared embedding space and their consensus-based "
    "generative mitigation, at desk scale"
)
