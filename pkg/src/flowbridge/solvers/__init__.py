"""Desk-scale surrogate solver participants.

Each module doubles as a library (pure state-update functions, reused by
oracles in the test suite) and as a participant executable:

    python3 -m flowbridge.solvers.wake    --endpoint <ep> --schema <path> --params <json>
    python3 -m flowbridge.solvers.channel --endpoint <ep> --schema <path> --params <json>
    python3 -m flowbridge.solvers.flap    --endpoint <ep> --schema <path> --params <json>

``--endpoint`` may be omitted when FLOWBRIDGE_ENDPOINT is set.  Exit code 0
on a clean run (including an early FINALIZE from the peer), 1 on protocol
errors, divergence, or timeout.  Solvers import only the standard library
so an episode restart costs little more than interpreter startup.
"""
