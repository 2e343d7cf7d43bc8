"""Field dump format: text header, then raw little-endian float64 payload.

The header starts with the magic ``CHKIN1`` and carries the grid
signature (dims, spacings, the velocity nodes with their weights), the
time stamp, the adaptation time scale and the scenario hash.  Floats are
written with ``repr`` so they round-trip bit-exactly; the payload is the
density array in row-major order, x outermost and m innermost.  Restart
reads the same format.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadConfig
from .model import PhaseGrid

MAGIC = "CHKIN1"
_END = "END_HEADER"


@dataclass
class Dump:
    dim: int
    x_nodes: int
    x_extent: float
    x_topology: str
    velocities: np.ndarray
    weights: np.ndarray
    m_nodes: int
    m_max: float
    t: float
    eps: float
    scenario: str
    values: np.ndarray

    @property
    def field_shape(self) -> tuple[int, ...]:
        return (self.x_nodes,) * self.dim + (len(self.weights), self.m_nodes)


def _floats_csv(arr: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(arr).ravel())


def write_dump(path: str | Path, values: np.ndarray, t: float, grid: PhaseGrid,
               eps: float, scenario_hash: str) -> None:
    header = [
        MAGIC,
        f"dim={grid.dim}",
        f"x_nodes={grid.x_nodes}",
        f"x_extent={grid.x_extent!r}",
        f"x_topology={grid.x_topology}",
        f"dx={grid.dx!r}",
        f"v_count={grid.n_v}",
        f"v={_floats_csv(grid.velocities)}",
        f"w={_floats_csv(grid.weights)}",
        f"m_nodes={grid.m_nodes}",
        f"m_max={grid.m_max!r}",
        f"dm={grid.dm!r}",
        f"t={float(t)!r}",
        f"eps={eps!r}",
        f"scenario={scenario_hash}",
        _END,
    ]
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(payload)


def read_dump(path: str | Path) -> Dump:
    raw = Path(path).read_bytes()
    end_marker = (_END + "\n").encode("ascii")
    cut = raw.find(end_marker)
    if cut < 0 or not raw.startswith((MAGIC + "\n").encode("ascii")):
        raise BadConfig(f"{path}: not a CHKIN1 dump")
    fields: dict[str, str] = {}
    for line in raw[:cut].decode("ascii").splitlines()[1:]:
        key, _, val = line.partition("=")
        fields[key] = val

    try:
        dim = int(fields["dim"])
        x_nodes = int(fields["x_nodes"])
        v_count = int(fields["v_count"])
        m_nodes = int(fields["m_nodes"])
        vels = np.array([float(v) for v in fields["v"].split(",")]).reshape(v_count, dim)
        dump = Dump(
            dim=dim,
            x_nodes=x_nodes,
            x_extent=float(fields["x_extent"]),
            x_topology=fields["x_topology"],
            velocities=vels,
            weights=np.array([float(v) for v in fields["w"].split(",")]),
            m_nodes=m_nodes,
            m_max=float(fields["m_max"]),
            t=float(fields["t"]),
            eps=float(fields["eps"]),
            scenario=fields["scenario"],
            values=np.empty(0),
        )
    except (KeyError, ValueError) as exc:
        raise BadConfig(f"{path}: malformed dump header ({exc})") from exc

    payload = raw[cut + len(end_marker):]
    data = np.frombuffer(payload, dtype="<f8")
    expected = int(np.prod(dump.field_shape))
    if data.size != expected:
        raise BadConfig(
            f"{path}: payload holds {data.size} values, header promises {expected}")
    dump.values = data.reshape(dump.field_shape).astype(float)
    return dump


def check_compatible(dump: Dump, grid: PhaseGrid, scenario_hash: str) -> None:
    """Reject restarts whose dump does not match the configured scenario."""
    if dump.scenario != scenario_hash:
        raise BadConfig(
            f"dump scenario hash {dump.scenario} != configured scenario {scenario_hash}")
    same = (
        dump.dim == grid.dim and dump.x_nodes == grid.x_nodes
        and dump.x_topology == grid.x_topology and dump.m_nodes == grid.m_nodes
        and dump.x_extent == grid.x_extent and dump.m_max == grid.m_max
        and np.array_equal(dump.velocities, grid.velocities)
        and np.array_equal(dump.weights, grid.weights)
    )
    if not same:
        raise BadConfig("dump grid signature differs from the configured grid")
