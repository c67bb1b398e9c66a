"""Exception hierarchy shared by all seqkernel modules."""


class SeqKernelError(Exception):
    """Base class for every error raised by seqkernel."""


class InvalidInput(SeqKernelError, ValueError):
    """Input contains non-finite values or violates a documented precondition."""


class ShapeError(SeqKernelError, ValueError):
    """Array shapes are inconsistent with each other."""


class NumericalFailure(SeqKernelError, ArithmeticError):
    """A numerical routine failed to converge."""


class CapacityError(SeqKernelError):
    """Request exceeds the desk-scale memory guard."""


class OrderError(SeqKernelError, ValueError):
    """Jacobian positions were requested with j > i."""


class InsufficientHeads(SeqKernelError):
    """Head budget is smaller than the interaction rank of the target."""

    def __init__(self, heads, required):
        self.heads = heads
        self.required = required
        super().__init__(
            f"{heads} head(s) cannot span an interaction rank of {required}; "
            f"at least {required} heads are required")


class DefectiveTransition(SeqKernelError):
    """Transition matrix is not (numerically) diagonalizable: bounded Jordan degree J=1 fails."""


class SingularTransition(SeqKernelError):
    """Transition matrix has a zero eigenvalue: invertibility assumption fails."""


class ConditioningError(SeqKernelError):
    """An eigenvalue magnitude lies outside the modal-feature guard band."""


class DegenerateProjection(SeqKernelError):
    """No probe vector u gives a nonzero W_K^T W_Q u."""


class RankMismatch(SeqKernelError):
    """A constructed teacher does not have the requested interaction rank."""


class Diverged(SeqKernelError):
    """Training loss exceeded the divergence threshold."""

    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss!r})")


class EmptyPlot(SeqKernelError, ValueError):
    """No data series were passed to the plot emitter."""
