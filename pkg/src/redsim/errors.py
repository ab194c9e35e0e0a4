"""Exception hierarchy shared by all simulator layers."""


class SimError(Exception):
    """Base class for every error raised by the simulator."""


class SchemaViolation(SimError):
    """An asset is missing identifying attributes or carries bad values."""


class ParameterError(SimError):
    """An action was invoked with unbound or malformed parameters."""


class DeadAgentError(SimError):
    """The requested agent is unknown or no longer alive."""


class DeadMachineError(SimError):
    """The target machine is crashed, rebooting, or unknown."""


class ChannelError(SimError):
    """An agent control channel could not be established."""


class ChainBrokenError(SimError):
    """A proxy chain contains a dead hop.

    `agent_id` names the first dead agent along the chain.
    """

    def __init__(self, agent_id: str, message: str = ""):
        super().__init__(message or f"chain broken at dead agent {agent_id!r}")
        self.agent_id = agent_id


class AddressingError(SimError):
    """An address does not belong to any known machine or segment."""


class BadDescriptorError(SimError):
    """A syscall referenced a descriptor that is not in the table."""


class PeerResetError(SimError):
    """The remote end of a connection went away (machine crash or reset)."""


class FileError(SimError):
    """A filesystem path failed to resolve (missing, deleted, bad parent)."""


class PortBindError(SimError):
    """A local port is already claimed by an application or socket."""


class VulnParseError(SimError):
    """The vulnerability database could not be parsed.

    `location` points at the offending entry or element.
    """

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{message} (at {location})" if location else message)
        self.location = location


class ValidationError(SimError):
    """A scenario document failed structural validation.

    `location` is a dotted path into the document.
    """

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{message} (at {location})" if location else message)
        self.location = location


class BusyError(SimError):
    """The operation needs a quiescent world but work is in flight."""


class UnknownActionError(SimError):
    """No action with that name is registered."""


class UnknownVulnerabilityError(SimError):
    """No vulnerability entry with that id is loaded."""


class CommandError(SimError):
    """An agent shell or console command could not be interpreted."""


class ApiError(SimError):
    """A control-surface request failed; `code` is a short machine tag."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
