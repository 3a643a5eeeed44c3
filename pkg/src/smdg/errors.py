"""Exception types raised across the package."""


class SMDGError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SMDGError, ValueError):
    """Invalid mesh, flux, or experiment parameters."""


class StructureError(SMDGError, ValueError):
    """Fields that should share a mesh and degree do not."""


class WellPosednessError(SMDGError, ValueError):
    """A projection system is singular for the requested parameters."""


class UnsupportedSchemeError(SMDGError, NotImplementedError):
    """The requested time integrator cannot handle the given diffusion."""


class DivergenceError(SMDGError, RuntimeError):
    """A non-finite value appeared during time integration."""

    def __init__(self, message, step=None, sample_index=None, seed=None):
        super().__init__(message)
        self.step = step
        self.sample_index = sample_index
        self.seed = seed
