"""Exception taxonomy shared across the package."""


class FlowbridgeError(Exception):
    """Base class for every error raised by this package."""


class ProtocolError(FlowbridgeError):
    """Malformed or unexpected bytes on the wire."""


class SchemaError(FlowbridgeError):
    """Invalid coupling schema document or violated schema invariant."""


class StateError(FlowbridgeError):
    """Operation called in a session/environment state that forbids it."""


class CouplingError(FlowbridgeError):
    """Runtime coupling failure: timeout, disconnect, peer mismatch."""


class PeerFinalized(CouplingError):
    """Peer ended the coupled run; not a fault, used for clean shutdown."""


class DivergenceError(FlowbridgeError):
    """A surrogate solver state left its guarded range."""


class ConfigError(FlowbridgeError):
    """Invalid environment options or scenario configuration."""


class EnvError(FlowbridgeError):
    """Environment-level failure (child process, hook contract, ...)."""
