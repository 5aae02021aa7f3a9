"""Two-stage volumetric MRI prognosis pipeline on a from-scratch autodiff engine."""

__version__ = "0.1.0"
