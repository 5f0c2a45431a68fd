"""
Exceptions raised across the package. Everything derives from a builtin so callers that only care about
ValueError or FloatingPointError keep working.
"""


class ContractError(ValueError):
    """Shapes or preconditions of an operation were not met."""
    pass


class DomainError(ValueError):
    """A value lies outside the domain of the function it was given to."""
    pass


class NonFiniteError(FloatingPointError):
    """
    An operation produced NaN or Inf.

    Parameters
    ----------
    name: str
        The operation or parameter that went non-finite.
    index: tuple or None
        Index of the first offending element, if known.
    """

    def __init__(self, name, index=None):
        self.name = name
        self.index = index
        msg = '{} produced a non-finite value'.format(name)
        if index is not None:
            msg += ' at index {}'.format(tuple(int(i) for i in index))
        super(NonFiniteError, self).__init__(msg)


class TrainingDivergedError(RuntimeError):
    """
    Raised when the training loss goes non-finite. Holds the iteration and the last weights that produced a
    finite loss so they can be checkpointed.
    """

    def __init__(self, iteration, last_good=None, checkpoint_file=None):
        self.iteration = iteration
        self.last_good = last_good
        self.checkpoint_file = checkpoint_file
        msg = 'loss became non-finite at iteration {}'.format(iteration)
        if checkpoint_file is not None:
            msg += '; last good weights written to {}'.format(checkpoint_file)
        super(TrainingDivergedError, self).__init__(msg)


class ConfigError(ValueError):
    """Unknown key or malformed value in a run configuration."""
    pass
