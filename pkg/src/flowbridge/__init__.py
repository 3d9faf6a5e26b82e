"""flowbridge: couple a controller process to external solver participants.

The package keeps its import footprint deliberately small: solver
participants are respawned once per episode, so anything they pull in
(``flowbridge.wire``, ``flowbridge.net``, ``flowbridge.schema``,
``flowbridge.session``, ``flowbridge.solvers``) is standard library only.
numpy is imported only by the controller-side training code.
"""

__version__ = "0.1.0"

ENDPOINT_ENV_VAR = "FLOWBRIDGE_ENDPOINT"
