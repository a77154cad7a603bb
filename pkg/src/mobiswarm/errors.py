class ConfigError(ValueError):
    """Invalid scenario or module configuration; carries every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ProtocolError(RuntimeError):
    pass


class UnknownPeerError(KeyError):
    pass


class SimulationError(RuntimeError):
    """An internal invariant of the event loop was violated."""
