"""The three shipped control scenarios.

Each scenario module knows its geometry, coupling schema, solver
parameters, and environment hooks, and can write a ready-to-run asset
directory (config JSON, schema, params, per-solver run/reset scripts).
The copies shipped under ``assets/`` are generated by exactly that code;
a test keeps them in sync.
"""

from . import cylinder, perpendicular_flap

_REGISTRY = {
    "jet-cylinder": cylinder.jet_scenario,
    "rotating-cylinder": cylinder.rotating_scenario,
    "perpendicular-flap": perpendicular_flap.scenario,
}


def names() -> list[str]:
    return list(_REGISTRY)


def get(name: str):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; expected one of {', '.join(_REGISTRY)}") from None
