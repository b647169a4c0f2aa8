"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, range, validity)."""


class FingerprintError(ValueError):
    """A fingerprint file is malformed or holds an invalid permutation."""

    def __init__(self, message, line=None, sample=None):
        self.line = line
        self.sample = sample
        where = []
        if line is not None:
            where.append(f"line {line}")
        if sample is not None:
            where.append(f"sample {sample}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class CheckpointError(ValueError):
    """A checkpoint cannot be read back (bad header, version, or blob)."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss term."""

    def __init__(self, term, epoch, step):
        self.term = term
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite value in loss term '{term}' at epoch {epoch}, step {step}")


class DataFormatError(ValueError):
    """A data file (CSV) could not be parsed."""
