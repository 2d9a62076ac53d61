"""Exception hierarchy shared by the library and the CLI."""


class ContractError(ValueError):
    """A precondition of an operation was violated by the caller."""


class UnsupportedOperation(NotImplementedError):
    """The chain instance does not provide the requested group operation."""


class SolverError(RuntimeError):
    """Base class for failures inside the Picard solver.

    ``piece`` is filled in by :func:`ilb_evolve.solver.evolve` when the error
    comes from one subdivision piece.
    """

    piece = None

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self), "piece": self.piece}


class NonContraction(SolverError):
    """The control carries too much L1 mass for the certified contraction."""


class NoConvergence(SolverError):
    """Picard iteration hit the iteration cap before reaching the tolerance."""


class TrustBallExit(SolverError):
    """An iterate left the closed trust ball around the start point."""
