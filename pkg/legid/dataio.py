"""
Trajectory logs, datasets and train/validation splits.

A log is a CSV table preceded by a metadata block of `# key: value` lines:

    # legid trajectory log
    # model_hash: 3f1c...
    # rate_hz: 100
    # motion: walk
    # quaternion_order: x,y,z,w
    t,q[0],...,q[nq-1],v[0],...,a[0],...,tau[0],...,contact[FL_foot],...

Acceleration columns are optional (derived from velocity when absent). Floats are written with 17
significant digits so a load/write cycle is exact. Files ending in .gz, .bz2 or .xz are compressed.
"""

from __future__ import annotations

import csv
import logging
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np
from jaxtyping import Bool, Float
from xopen import xopen

from legid.config import FilterConfig, SplitConfig
from legid.contact import ContactSet
from legid.errors import DataError
from legid.model import RobotModel, model_hash
from legid.signal import TimeSeries, condition, differentiate, ensure_uniform
from legid.spatialdyn import State

logger = logging.getLogger(__name__)

LOG_BANNER = "# legid trajectory log"
_COLUMN = re.compile(r"^(t|q|v|a|tau|contact)(?:\[(.+)\])?$")


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    t: float
    q: Float[np.ndarray, "nq"]
    v: Float[np.ndarray, "nv"]
    a: Float[np.ndarray, "nv"]
    tau: Float[np.ndarray, "n"]
    contacts: ContactSet
    motion: str = ""

    @property
    def state(self) -> State:
        return State(self.q, self.v, self.a)


@dataclass(frozen=True)
class DatasetMeta:
    source: str = ""
    model_hash: str = ""
    rate_hz: float = 0.0
    motion: str = ""
    filter: dict | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    t: Float[np.ndarray, "ns"]
    q: Float[np.ndarray, "ns nq"]
    v: Float[np.ndarray, "ns nv"]
    a: Float[np.ndarray, "ns nv"]
    tau: Float[np.ndarray, "ns n"]
    contact_frames: tuple[str, ...]
    contact_flags: Bool[np.ndarray, "ns frames"]
    motions: np.ndarray
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __post_init__(self):
        ns = self.t.shape[0]
        for name in ("q", "v", "a", "tau", "contact_flags", "motions"):
            if getattr(self, name).shape[0] != ns:
                raise DataError(f"dataset field {name} has {getattr(self, name).shape[0]} rows, expected {ns}")

    def __len__(self) -> int:
        return self.t.shape[0]

    def contacts_at(self, k: int) -> ContactSet:
        return ContactSet(tuple(name for name, on in zip(self.contact_frames, self.contact_flags[k]) if on))

    def sample(self, k: int) -> TrajectorySample:
        return TrajectorySample(
            t=float(self.t[k]),
            q=self.q[k],
            v=self.v[k],
            a=self.a[k],
            tau=self.tau[k],
            contacts=self.contacts_at(k),
            motion=str(self.motions[k]),
        )

    @property
    def samples(self) -> list[TrajectorySample]:
        return [self.sample(k) for k in range(len(self))]

    @property
    def motion_tags(self) -> list[str]:
        return sorted(set(self.motions.tolist()))

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=int)
        return replace(
            self,
            t=self.t[idx],
            q=self.q[idx],
            v=self.v[idx],
            a=self.a[idx],
            tau=self.tau[idx],
            contact_flags=self.contact_flags[idx],
            motions=self.motions[idx],
        )


def check_dataset(ds: Dataset, model: RobotModel) -> Dataset:
    if len(ds) == 0:
        raise DataError(f"{ds.meta.source or 'dataset'}: no samples")
    expected = {"q": model.nq, "v": model.nv, "a": model.nv, "tau": model.n}
    for name, width in expected.items():
        if getattr(ds, name).shape[1] != width:
            raise DataError(
                f"{ds.meta.source or 'dataset'}: {getattr(ds, name).shape[1]} {name} columns, model expects {width}"
            )
    unknown = set(ds.contact_frames) - set(model.contact_names)
    if unknown:
        raise DataError(f"{ds.meta.source or 'dataset'}: unknown contact frames {sorted(unknown)}")
    return ds


def concat(datasets: list[Dataset]) -> Dataset:
    if not datasets:
        raise DataError("no datasets to concatenate")
    frames = datasets[0].contact_frames
    for ds in datasets[1:]:
        if ds.contact_frames != frames:
            raise DataError(f"contact columns differ: {frames} vs {ds.contact_frames}")
    if len(datasets) == 1:
        return datasets[0]
    first = datasets[0]
    return Dataset(
        t=np.concatenate([ds.t for ds in datasets]),
        q=np.concatenate([ds.q for ds in datasets]),
        v=np.concatenate([ds.v for ds in datasets]),
        a=np.concatenate([ds.a for ds in datasets]),
        tau=np.concatenate([ds.tau for ds in datasets]),
        contact_frames=frames,
        contact_flags=np.concatenate([ds.contact_flags for ds in datasets]),
        motions=np.concatenate([ds.motions for ds in datasets]),
        meta=replace(first.meta, source="+".join(ds.meta.source for ds in datasets), motion=""),
    )


def _header(model: RobotModel, contact_frames, with_acceleration: bool = True) -> list[str]:
    cols = ["t"]
    cols += [f"q[{i}]" for i in range(model.nq)]
    cols += [f"v[{i}]" for i in range(model.nv)]
    if with_acceleration:
        cols += [f"a[{i}]" for i in range(model.nv)]
    cols += [f"tau[{i}]" for i in range(model.n)]
    cols += [f"contact[{name}]" for name in contact_frames]
    return cols


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_log(path: str | os.PathLike, ds: Dataset, model: RobotModel) -> None:
    tags = ds.motion_tags
    if len(tags) > 1:
        raise DataError(f"a log holds one motion, dataset has {tags}")
    motion = tags[0] if tags else ds.meta.motion
    rate = ds.meta.rate_hz or (TimeSeries(ds.t, ds.t).rate if len(ds) > 1 else 0.0)
    with xopen(os.fspath(path), "w") as f:
        f.write(f"{LOG_BANNER}\n")
        f.write(f"# model_hash: {ds.meta.model_hash or model_hash(model)}\n")
        f.write(f"# rate_hz: {_fmt(rate)}\n")
        f.write(f"# motion: {motion}\n")
        f.write("# quaternion_order: x,y,z,w\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_header(model, ds.contact_frames))
        for k in range(len(ds)):
            row = [_fmt(ds.t[k])]
            row += [_fmt(x) for x in ds.q[k]]
            row += [_fmt(x) for x in ds.v[k]]
            row += [_fmt(x) for x in ds.a[k]]
            row += [_fmt(x) for x in ds.tau[k]]
            row += ["1" if on else "0" for on in ds.contact_flags[k]]
            writer.writerow(row)


def _parse_columns(header: list[str], source: str) -> dict[str, list[tuple[int, str | None]]]:
    roles: dict[str, list[tuple[int, str | None]]] = {"t": [], "q": [], "v": [], "a": [], "tau": [], "contact": []}
    for position, name in enumerate(header):
        match = _COLUMN.match(name.strip())
        if match is None:
            raise DataError(f"{source}: unknown column {name!r}")
        roles[match.group(1)].append((position, match.group(2)))
    if len(roles["t"]) != 1:
        raise DataError(f"{source}: expected exactly one 't' column")
    for role in ("q", "v", "a", "tau"):
        indices = [int(i) if i is not None and i.isdigit() else -1 for _, i in roles[role]]
        if indices != list(range(len(indices))):
            raise DataError(f"{source}: {role} columns must be numbered 0..{len(indices) - 1} in order")
    return roles


def load_log(
    path: str | os.PathLike,
    model: RobotModel,
    conditioning: FilterConfig | None = None,
) -> Dataset:
    """Read one trajectory log, validate it against the model and optionally condition it."""
    source = os.fspath(path)
    if not os.path.exists(source):
        raise DataError(f"log file not found: {source}")
    meta: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    header = None
    with xopen(source, "r") as f:
        line_number = 0
        for line_number, line in enumerate(f, start=1):
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            if not line.strip():
                continue
            fields = next(csv.reader([line]))
            if header is None:
                header = fields
                roles = _parse_columns(header, source)
                continue
            if len(fields) != len(header):
                raise DataError(f"{source}: line {line_number}: {len(fields)} fields, header has {len(header)}")
            rows.append((line_number, fields))
    if header is None or not rows:
        raise DataError(f"{source}: no samples")

    def column_block(role: str) -> np.ndarray:
        positions = [p for p, _ in roles[role]]
        out = np.empty((len(rows), len(positions)))
        for r, (line_number, fields) in enumerate(rows):
            for c, p in enumerate(positions):
                try:
                    out[r, c] = float(fields[p])
                except ValueError as exc:
                    raise DataError(
                        f"{source}: line {line_number}: column {header[p]!r}: not a number: {fields[p]!r}"
                    ) from exc
        return out

    t = column_block("t")[:, 0]
    q, v, tau = column_block("q"), column_block("v"), column_block("tau")
    a = column_block("a") if roles["a"] else None
    frames = tuple(name for _, name in roles["contact"])
    flags = column_block("contact") != 0.0 if frames else np.zeros((len(rows), 0), dtype=bool)

    for name, block, width in (("q", q, model.nq), ("v", v, model.nv), ("tau", tau, model.n)):
        if block.shape[1] != width:
            raise DataError(f"{source}: {block.shape[1]} {name} columns, model expects {width}")
    if a is not None and a.shape[1] != model.nv:
        raise DataError(f"{source}: {a.shape[1]} a columns, model expects {model.nv}")
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise DataError(f"{source}: timestamps must be strictly increasing")

    expected_hash = model_hash(model)
    if meta.get("model_hash") and meta["model_hash"] != expected_hash:
        logger.warning(f"{source}: model hash {meta['model_hash']} differs from the loaded model {expected_hash}")

    motion = meta.get("motion") or os.path.basename(source).split(".")[0]
    rate = float(meta["rate_hz"]) if meta.get("rate_hz") else (TimeSeries(t, t).rate if len(t) > 1 else 0.0)
    ds = Dataset(
        t=t,
        q=q,
        v=v,
        a=a if a is not None else np.full_like(v, np.nan),
        tau=tau,
        contact_frames=frames,
        contact_flags=flags,
        motions=np.array([motion] * len(t), dtype=object),
        meta=DatasetMeta(source=source, model_hash=meta.get("model_hash", ""), rate_hz=rate, motion=motion),
    )
    check_dataset(ds, model)
    if conditioning is not None and conditioning.enabled:
        ds = condition_dataset(ds, conditioning)
    elif a is None:
        logger.info(f"{source}: no acceleration columns, deriving them from velocity")
        ds = replace(ds, a=differentiate(TimeSeries(ds.t, ds.v)).values)
    logger.info(f"Loaded {len(ds)} samples of motion {motion!r} from {source}")
    return ds


def resample_uniform(ds: Dataset) -> Dataset:
    """Linearly resample a jittery log onto a uniform grid; quaternions are renormalized, flags held."""
    clock = TimeSeries(ds.t, np.arange(len(ds), dtype=float))
    if clock.is_uniform:
        return ds
    nq, nv = ds.q.shape[1], ds.v.shape[1]
    stacked = ensure_uniform(TimeSeries(ds.t, np.hstack([ds.q, ds.v, ds.a, ds.tau])))
    t, values = stacked.t, stacked.values
    q = values[:, :nq]
    q[:, 3:7] /= np.linalg.norm(q[:, 3:7], axis=1, keepdims=True)
    held = np.clip(np.searchsorted(ds.t, t, side="right") - 1, 0, len(ds) - 1)
    return Dataset(
        t=t,
        q=q,
        v=values[:, nq : nq + nv],
        a=values[:, nq + nv : nq + 2 * nv],
        tau=values[:, nq + 2 * nv :],
        contact_frames=ds.contact_frames,
        contact_flags=ds.contact_flags[held],
        motions=ds.motions[held],
        meta=replace(ds.meta, rate_hz=clock.rate),
    )


def condition_dataset(ds: Dataset, settings: FilterConfig) -> Dataset:
    """Filter velocities and torques and derive accelerations; configurations are not touched."""
    ds = resample_uniform(ds)
    a = None if np.isnan(ds.a).any() else ds.a
    v, a, tau = condition(ds.t, ds.v, ds.tau, a, settings)
    settings_dict = {
        "order": settings.order,
        "cutoff_hz": settings.cutoff_hz,
        "filter_velocity": settings.filter_velocity,
        "filter_torque": settings.filter_torque,
        "derive_acceleration": settings.derive_acceleration,
    }
    return replace(ds, v=v, a=a, tau=tau, meta=replace(ds.meta, filter=settings_dict))


def split(ds: Dataset, policy: SplitConfig) -> tuple[Dataset, Dataset]:
    """Partition into (train, validation) by held-out motion tags, or by a seeded random ratio."""
    ns = len(ds)
    if policy.holdout:
        held = np.isin(ds.motions, list(policy.holdout))
        train_idx, val_idx = np.flatnonzero(~held), np.flatnonzero(held)
    elif policy.ratio is not None:
        if not 0.0 <= policy.ratio <= 1.0:
            raise DataError(f"split ratio must lie in [0, 1], got {policy.ratio}")
        order = np.random.default_rng(policy.seed).permutation(ns)
        cut = int(round(policy.ratio * ns))
        train_idx, val_idx = np.sort(order[:cut]), np.sort(order[cut:])
    else:
        raise DataError("split policy needs either holdout tags or a ratio")
    logger.info(f"Split {ns} samples into {train_idx.size} train / {val_idx.size} validation")
    return ds.subset(train_idx), ds.subset(val_idx)


def write_predictions(path: str | os.PathLike, t: np.ndarray, predicted: np.ndarray, measured: np.ndarray,
                      names: tuple[str, ...]) -> None:
    """Per-sample projected torque predictions next to the projected measurements."""
    with xopen(os.fspath(path), "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t"] + [f"pred[{n}]" for n in names] + [f"meas[{n}]" for n in names])
        for k in range(len(t)):
            writer.writerow([_fmt(t[k])] + [_fmt(x) for x in predicted[k]] + [_fmt(x) for x in measured[k]])
