"""
Errors Module
Exception hierarchy shared by the sampler, the protein model, the table loaders
and the experiment drivers.
"""


class SmcError(Exception):
    """Base class for every error raised by this package."""


# ==================== RUN ERRORS ====================

class AllParticlesDead(SmcError):
    """No candidate had a positive weight at some step."""

    def __init__(self, step, diagnostics=None):
        self.step = step
        self.diagnostics = diagnostics
        super().__init__(f"all particles died at step {step}")


class BudgetExhausted(SmcError):
    """Importance sampling hit max_draws before collecting n_target samples."""

    def __init__(self, partial, acceptance_rate):
        self.partial = partial
        self.acceptance_rate = acceptance_rate
        super().__init__(
            f"draw budget exhausted with {partial.n_accepted} of the requested samples "
            f"(acceptance rate {acceptance_rate:.4g})"
        )


class NoMass(SmcError):
    """Every weight is zero."""


class TooLarge(SmcError):
    """Exact enumeration requested over a path space above the bound."""


class TooFewPositive(SmcError):
    """Fewer positive weights than survivors requested; route to multinomial downsampling."""


# ==================== GEOMETRY / ENERGY ====================

class DegenerateFrame(SmcError):
    """The three reference atoms are collinear."""


class UnknownAminoAcid(SmcError):
    pass


class MissingAtomType(SmcError):
    pass


class RangeTableMiss(SmcError):
    pass


class MissingAtom(SmcError):
    pass


# ==================== TABLES ====================

class TableError(SmcError):
    """Malformed input file."""


class ParseError(TableError):
    def __init__(self, message, line_number=None, path=None):
        self.line_number = line_number
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line_number is not None:
            where += f":{line_number}"
        super().__init__(f"{where}: {message}" if where else message)


class AsymmetryError(TableError):
    pass


class DimensionError(TableError):
    pass


class NormalizationError(TableError):
    pass


class NonMonotoneRange(TableError):
    pass


class EmptyStructure(TableError):
    pass


# ==================== DRIVERS ====================

class ConfigError(SmcError):
    pass


class OracleUnavailable(SmcError):
    pass
