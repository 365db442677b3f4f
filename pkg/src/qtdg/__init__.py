"""qtdg: quasi-Trefftz discontinuous Galerkin toolkit.

Polynomial quasi-Trefftz spaces for second-order diffusion-advection-reaction
operators with smooth coefficients, plus an interior-penalty / upwind DG
solver on 2D meshes and a small experiment CLI (`qtdg`).
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
