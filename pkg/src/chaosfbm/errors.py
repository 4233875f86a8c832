"""Exception types shared across the package."""


class ChaosError(Exception):
    """Base class for all package errors."""


class InputError(ChaosError, ValueError):
    """Malformed or non-finite input arrays."""


class DomainError(ChaosError, ValueError):
    """A parameter lies outside the domain where the operation is defined."""


class UnsupportedParameterError(DomainError):
    """Parameter is mathematically meaningful but not implemented (e.g. H >= 2)."""


class NumericalError(ChaosError, ArithmeticError):
    """Factorization or quadrature failed even after the bounded jitter policy."""


class ResolutionError(ChaosError, ValueError):
    """Sampled field is too coarse for the requested heat-semigroup scale."""


class StepSizeError(ChaosError, ValueError):
    """Euler step too large for the kernel's Lipschitz constant."""


class ConfigError(ChaosError, ValueError):
    """Invalid configuration; carries the offending key and, if known, its line."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where += f" [key '{key}'"
            where += f", line {line}]" if line is not None else "]"
        super().__init__(message + where)


class DivergenceError(ChaosError, RuntimeError):
    """A trajectory left the finite range; names the replica and step."""

    def __init__(self, replica: int, step: int, value: float):
        self.replica = replica
        self.step = step
        self.value = value
        super().__init__(f"divergence in replica {replica} at step {step} (|X| = {value:.3g})")
