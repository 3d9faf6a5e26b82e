"""Scenario bundles: everything needed to materialize a runnable case
directory (config JSON, coupling schema, solver params, run/reset scripts).

A written asset directory looks like the paper-style case layout::

    <dir>/gymprecice-config.json
    <dir>/schema.json
    <dir>/params.json
    <dir>/<solver>/run.sh        # exec python3 -m <solver module> ...
    <dir>/<solver>/reset.sh
    <dir>/<solver>/schema.json   # copies, so instances are self-contained
    <dir>/<solver>/params.json

The packaged copies under ``flowbridge/scenarios/assets/<name>/`` were
produced by ``write_assets`` and are verified against regeneration by the
test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

from ..adapter import CONTROLLER, EnvHooks, EnvOptions, load_options
from ..schema import CouplingSchema

RUN_SH = """#!/usr/bin/env bash
# Launched by the harness with FLOWBRIDGE_ENDPOINT set and CWD set to this
# directory.  Swapping in a different participant implementation means
# editing the exec line below and nothing else.
exec python3 -m {module} --schema schema.json --params params.json
"""

RESET_SH = """#!/usr/bin/env bash
# Per-episode state reset.  The surrogate solvers keep no on-disk state
# between episodes, so there is nothing to clean.
exit 0
"""


@dataclass(frozen=True)
class ScenarioBundle:
    name: str
    config: object
    schema_builder: Callable[[], CouplingSchema] = None
    hooks_factory: Callable[[CouplingSchema], EnvHooks] = None
    params_builder: Callable[[], dict] = None
    solvers: dict = None  # solver directory name -> python module for run.sh

    def schema(self) -> CouplingSchema:
        return self.schema_builder()

    def params_doc(self) -> dict:
        return self.params_builder()

    def make_hooks(self, schema: CouplingSchema | None = None) -> EnvHooks:
        return self.hooks_factory(schema if schema is not None else self.schema())

    def env_options_doc(self, instance_root: str = "runs") -> dict:
        schema = self.schema()
        write_to = {}
        read_from = {}
        for spec in schema.fields.values():
            if spec.writer == CONTROLLER:
                write_to[spec.mesh] = spec.name
            elif schema.reader_of(spec) == CONTROLLER:
                read_from[spec.name] = spec.mesh
        return {
            "environment": {"name": self.name},
            "physics_simulation_engine": {
                "solvers": sorted(self.solvers),
                "reset_script": "reset.sh",
                "run_script": "run.sh",
            },
            "controller": {"read_from": read_from, "write_to": write_to},
            "schema_path": "schema.json",
            "instance_root": instance_root,
        }

    def write_assets(self, dest) -> Path:
        dest = Path(dest)
        dest.mkdir(parents=True, exist_ok=True)
        schema_text = json.dumps(json.loads(self.schema().canonical_json()), indent=2) + "\n"
        params_text = json.dumps(self.params_doc(), indent=2, sort_keys=True) + "\n"
        (dest / "schema.json").write_text(schema_text)
        (dest / "params.json").write_text(params_text)
        (dest / "gymprecice-config.json").write_text(
            json.dumps(self.env_options_doc(), indent=2) + "\n"
        )
        for solver, module in self.solvers.items():
            sdir = dest / solver
            sdir.mkdir(exist_ok=True)
            run = sdir / "run.sh"
            run.write_text(RUN_SH.format(module=module))
            run.chmod(0o755)
            rst = sdir / "reset.sh"
            rst.write_text(RESET_SH)
            rst.chmod(0o755)
            (sdir / "schema.json").write_text(schema_text)
            (sdir / "params.json").write_text(params_text)
        return dest

    def load_env_options(self, asset_dir) -> EnvOptions:
        return load_options(Path(asset_dir) / "gymprecice-config.json")


def packaged_asset_dir(name: str) -> Path:
    root = resources.files("flowbridge.scenarios") / "assets" / name
    return Path(str(root))
