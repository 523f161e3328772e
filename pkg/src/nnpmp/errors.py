"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class SingularCostateError(RuntimeError):
    """Forward costate propagation hit a (near) zero state sensitivity."""

    def __init__(self, step):
        super().__init__(f"|dF/dx| < 1e-12 at step {step}; costate cannot be propagated forward")
        self.step = step


class DegenerateSecantError(ZeroDivisionError):
    """The two secant points have (numerically) equal terminal states."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    The best iterate found so far is kept on ``trajectory``.
    """

    def __init__(self, message, trajectory=None, iterations=0):
        super().__init__(message)
        self.trajectory = trajectory
        self.iterations = iterations
