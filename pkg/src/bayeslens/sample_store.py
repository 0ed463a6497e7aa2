"""Posterior-draw data model: ingestion, validation, chains, grouping.

The store is sampler-agnostic. Log-likelihood draws arrive as a decimal CSV
whose header row names the observations and whose subsequent rows each hold
one posterior draw; chain structure arrives in a companion JSON file.
Predictive-distribution draws use the same row order with columns named
``<obs_id>.<param>``. All containers are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChainMismatch,
    DegenerateSample,
    DuplicateObsId,
    FamilyMismatch,
    InvalidParameter,
    MalformedCsv,
    NonFiniteValue,
    UncoveredObsId,
    UnknownObsId,
)
from .io_utils import format_float

# Parameter columns per predictive family, in CSV order.
FAMILY_PARAMS: dict[str, tuple[str, ...]] = {
    "normal_known_var": ("mean", "var"),
    "normal": ("mean", "var"),
    "poisson": ("rate",),
    "binomial": ("prob",),
    "gamma": ("shape", "rate"),
}


def _first_appearance(labels) -> list:
    seen: dict = {}
    for label in labels:
        if label not in seen:
            seen[label] = None
    return list(seen)


def _validate_chain(draw_chain: np.ndarray, n_draws: int) -> None:
    # Single-draw chains are accepted here; operations that need two draws
    # per chain (stream pairing, replicate standard errors) enforce it.
    if draw_chain.shape != (n_draws,):
        raise ChainMismatch(
            f"chain metadata has {draw_chain.shape[0] if draw_chain.ndim == 1 else '?'} "
            f"entries but there are {n_draws} draws"
        )
    if np.any(draw_chain < 0):
        raise ChainMismatch("chain labels must be non-negative integers")


def _validate_obs_ids(obs_ids) -> tuple[str, ...]:
    ids = tuple(str(i) for i in obs_ids)
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateObsId(f"duplicate observation ids: {dupes}")
    return ids


@dataclass(frozen=True)
class LogLikSamples:
    """S x n matrix of per-draw, per-observation log-likelihood values (nats)."""

    values: np.ndarray
    draw_chain: np.ndarray
    obs_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d (draws x observations) array")
        n_draws, n_obs = values.shape
        if n_draws < 2:
            raise DegenerateSample(f"need at least 2 draws, got {n_draws}")
        if n_obs < 1:
            raise DegenerateSample("need at least 1 observation")
        if not np.all(np.isfinite(values)):
            row, col = np.argwhere(~np.isfinite(values))[0]
            ids = _validate_obs_ids(self.obs_ids)
            raise NonFiniteValue(
                f"non-finite value at draw row {row + 1}, column '{ids[col]}'"
            )
        obs_ids = _validate_obs_ids(self.obs_ids)
        if len(obs_ids) != n_obs:
            raise ValueError(f"got {len(obs_ids)} obs ids for {n_obs} columns")
        draw_chain = np.array(self.draw_chain, dtype=int)
        _validate_chain(draw_chain, n_draws)
        values.setflags(write=False)
        draw_chain.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "draw_chain", draw_chain)
        object.__setattr__(self, "obs_ids", obs_ids)

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_obs(self) -> int:
        return self.values.shape[1]

    @property
    def chain_labels(self) -> list[int]:
        """Chain labels in order of first appearance."""
        return _first_appearance(self.draw_chain.tolist())


def replicate_groups(draw_chain: np.ndarray) -> list[np.ndarray]:
    """Row-index groups used for replicate-based Monte Carlo standard errors.

    One group per chain when there are two or more chains; otherwise the
    draws are split in half.
    """
    draw_chain = np.asarray(draw_chain)
    labels = _first_appearance(draw_chain.tolist())
    if len(labels) >= 2:
        return [np.flatnonzero(draw_chain == label) for label in labels]
    half = draw_chain.shape[0] // 2
    rows = np.arange(draw_chain.shape[0])
    return [rows[:half], rows[half:]]


@dataclass(frozen=True)
class PredictiveDraws:
    """Per-draw, per-observation predictive-distribution parameters.

    ``params`` has shape (S, n, k) with the parameter order of
    ``FAMILY_PARAMS[family]``. Binomial trial counts are fixed per
    observation and stored separately in ``trials``.
    """

    family: str
    params: np.ndarray
    draw_chain: np.ndarray
    obs_ids: tuple[str, ...]
    trials: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILY_PARAMS:
            raise FamilyMismatch(
                f"unsupported family '{self.family}'; "
                f"expected one of {sorted(FAMILY_PARAMS)}"
            )
        params = np.array(self.params, dtype=float)
        if params.ndim != 3 or params.shape[2] != len(FAMILY_PARAMS[self.family]):
            raise InvalidParameter(
                f"params must have shape (draws, observations, "
                f"{len(FAMILY_PARAMS[self.family])}) for family '{self.family}'"
            )
        n_draws, n_obs, _ = params.shape
        if n_draws < 2:
            raise DegenerateSample(f"need at least 2 draws, got {n_draws}")
        if not np.all(np.isfinite(params)):
            raise NonFiniteValue("predictive parameters contain non-finite values")
        obs_ids = _validate_obs_ids(self.obs_ids)
        if len(obs_ids) != n_obs:
            raise ValueError(f"got {len(obs_ids)} obs ids for {n_obs} columns")
        draw_chain = np.array(self.draw_chain, dtype=int)
        _validate_chain(draw_chain, n_draws)
        self._validate_params(params)
        trials = None
        if self.family == "binomial":
            if self.trials is None:
                raise InvalidParameter("binomial draws need per-observation trial counts")
            trials = np.array(self.trials, dtype=int)
            if trials.shape != (n_obs,):
                raise InvalidParameter("trials must hold one count per observation")
            if np.any(trials < 1):
                raise InvalidParameter("binomial trial counts must be >= 1")
        elif self.trials is not None:
            raise InvalidParameter(f"family '{self.family}' takes no trial counts")
        params.setflags(write=False)
        draw_chain.setflags(write=False)
        if trials is not None:
            trials.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "draw_chain", draw_chain)
        object.__setattr__(self, "obs_ids", obs_ids)
        object.__setattr__(self, "trials", trials)

    def _validate_params(self, params: np.ndarray) -> None:
        names = FAMILY_PARAMS[self.family]
        for j, name in enumerate(names):
            block = params[:, :, j]
            if name in ("var", "rate", "shape") and not np.all(block > 0):
                raise InvalidParameter(f"{self.family} '{name}' must be positive everywhere")
            if name == "prob" and not (np.all(block > 0) and np.all(block < 1)):
                raise InvalidParameter("binomial 'prob' must lie in (0, 1) everywhere")

    @property
    def n_draws(self) -> int:
        return self.params.shape[0]

    @property
    def n_obs(self) -> int:
        return self.params.shape[1]


def check_aligned(samples: LogLikSamples, pred: PredictiveDraws) -> None:
    """Require a predictive-draw set to line up with its companion samples."""
    if pred.obs_ids != samples.obs_ids:
        raise UnknownObsId(
            "predictive observation ids do not match the log-likelihood samples"
        )
    if pred.n_draws != samples.n_draws or not np.array_equal(
        pred.draw_chain, samples.draw_chain
    ):
        raise ChainMismatch(
            "predictive draws and log-likelihood samples have different "
            "draw counts or chain labels"
        )


@dataclass(frozen=True)
class GroupMap:
    """Partition of observations into named groups (e.g. days, hospitals)."""

    assignment: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.assignment:
            raise UncoveredObsId("group map is empty")
        object.__setattr__(
            self, "assignment", {str(k): str(v) for k, v in self.assignment.items()}
        )

    @property
    def labels(self) -> list[str]:
        """Group labels in first-appearance order of the assignment."""
        return _first_appearance(self.assignment.values())

    @classmethod
    def identity(cls, obs_ids) -> "GroupMap":
        return cls({str(i): str(i) for i in obs_ids})

    @classmethod
    def single_group(cls, obs_ids, label: str = "all") -> "GroupMap":
        return cls({str(i): label for i in obs_ids})


def group_members(samples: LogLikSamples, groups: GroupMap) -> dict[str, list[int]]:
    """Column indices per group, groups ordered by first appearance in the data.

    Raises UnknownObsId for map entries that are not in the samples and
    UncoveredObsId for sample columns the map misses.
    """
    known = set(samples.obs_ids)
    unknown = sorted(set(groups.assignment) - known)
    if unknown:
        raise UnknownObsId(f"group map references unknown observations: {unknown}")
    uncovered = sorted(known - set(groups.assignment))
    if uncovered:
        raise UncoveredObsId(f"group map does not cover observations: {uncovered}")
    members: dict[str, list[int]] = {}
    for col, obs in enumerate(samples.obs_ids):
        members.setdefault(groups.assignment[obs], []).append(col)
    return members


def aggregate(samples: LogLikSamples, groups: GroupMap) -> LogLikSamples:
    """Sum log-likelihood columns within each group.

    Group labels become the new observation ids; chain labels are preserved.
    """
    members = group_members(samples, groups)
    columns = [
        samples.values[:, idx].sum(axis=1) for idx in members.values()
    ]
    return LogLikSamples(
        values=np.column_stack(columns),
        draw_chain=samples.draw_chain,
        obs_ids=tuple(members),
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _read_csv_table(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    """Read a draws CSV: header row of column names, float data rows."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsv(f"{path}: file is empty") from None
        header = [cell.strip() for cell in header]
        if any(not cell for cell in header):
            raise MalformedCsv(f"{path}: header contains an empty column name")
        n_cols = len(header)
        rows: list[list[float]] = []
        for row_num, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if len(cells) != n_cols:
                raise MalformedCsv(
                    f"{path}: data row {row_num} has {len(cells)} cells, expected {n_cols}"
                )
            parsed = []
            for col, cell in enumerate(cells):
                try:
                    value = float(cell)
                except ValueError:
                    raise MalformedCsv(
                        f"{path}: non-numeric cell at data row {row_num}, "
                        f"column '{header[col]}': {cell.strip()!r}"
                    ) from None
                if not math.isfinite(value):
                    raise NonFiniteValue(
                        f"{path}: non-finite value at data row {row_num}, "
                        f"column '{header[col]}': {cell.strip()!r}"
                    )
                parsed.append(value)
            rows.append(parsed)
    if not rows:
        raise MalformedCsv(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def _read_metadata(path: str | os.PathLike, n_rows: int) -> dict:
    if not os.path.exists(path):
        raise ChainMismatch(f"metadata file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            meta = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ChainMismatch(f"{path}: invalid metadata JSON ({exc})") from None
    if not isinstance(meta, dict) or "chains" not in meta:
        raise ChainMismatch(f"{path}: metadata must be an object with a 'chains' list")
    chains = meta["chains"]
    if not isinstance(chains, list) or len(chains) != n_rows:
        raise ChainMismatch(
            f"{path}: metadata lists {len(chains) if isinstance(chains, list) else '?'} "
            f"chain labels but the CSV has {n_rows} draws"
        )
    return meta


def load_samples(loglik_file: str | os.PathLike, metadata_file: str | os.PathLike) -> LogLikSamples:
    """Load log-likelihood draws from a CSV plus its chain-metadata JSON.

    The CSV header row gives observation ids; each subsequent row is one
    posterior draw. The metadata JSON must contain ``{"chains": [...]}``
    with one label per draw.
    """
    obs_ids, values = _read_csv_table(loglik_file)
    meta = _read_metadata(metadata_file, values.shape[0])
    return LogLikSamples(values=values, draw_chain=meta["chains"], obs_ids=tuple(obs_ids))


def _resolve_family(meta: dict, family: str | None) -> str:
    if family is not None:
        return family
    tag = meta.get("families")
    if tag is None:
        raise FamilyMismatch("no predictive family given and none in metadata")
    if isinstance(tag, str):
        return tag
    if isinstance(tag, dict):
        distinct = sorted(set(tag.values()))
        if len(distinct) != 1:
            raise FamilyMismatch(f"mixed per-observation families: {distinct}")
        return distinct[0]
    raise FamilyMismatch("metadata 'families' must be a string or an object")


def load_predictive(
    pred_file: str | os.PathLike,
    metadata_file: str | os.PathLike,
    family: str | None = None,
) -> PredictiveDraws:
    """Load predictive-parameter draws from a ``<obs_id>.<param>`` CSV.

    The family comes from the ``family`` argument or from the metadata
    ``families`` entry; binomial trial counts come from the metadata
    ``trials`` object.
    """
    header, table = _read_csv_table(pred_file)
    meta = _read_metadata(metadata_file, table.shape[0])
    family = _resolve_family(meta, family)
    if family not in FAMILY_PARAMS:
        raise FamilyMismatch(
            f"unsupported family '{family}'; expected one of {sorted(FAMILY_PARAMS)}"
        )
    param_names = FAMILY_PARAMS[family]

    columns: dict[str, dict[str, int]] = {}
    order: list[str] = []
    for idx, name in enumerate(header):
        obs, sep, param = name.rpartition(".")
        if not sep or param not in param_names or not obs:
            raise MalformedCsv(
                f"{pred_file}: column '{name}' is not of the form "
                f"<obs_id>.<param> with param in {param_names}"
            )
        if obs not in columns:
            columns[obs] = {}
            order.append(obs)
        if param in columns[obs]:
            raise DuplicateObsId(f"{pred_file}: repeated column '{name}'")
        columns[obs][param] = idx
    for obs in order:
        missing = [p for p in param_names if p not in columns[obs]]
        if missing:
            raise MalformedCsv(
                f"{pred_file}: observation '{obs}' is missing columns {missing}"
            )

    n_draws = table.shape[0]
    params = np.empty((n_draws, len(order), len(param_names)))
    for j, obs in enumerate(order):
        for k, param in enumerate(param_names):
            params[:, j, k] = table[:, columns[obs][param]]

    trials = None
    if family == "binomial":
        raw = meta.get("trials")
        if not isinstance(raw, dict):
            raise InvalidParameter(
                "binomial predictive draws need a metadata 'trials' object"
            )
        missing = [obs for obs in order if obs not in raw]
        if missing:
            raise InvalidParameter(f"metadata 'trials' misses observations: {missing}")
        trials = np.array([int(raw[obs]) for obs in order])

    return PredictiveDraws(
        family=family,
        params=params,
        draw_chain=meta["chains"],
        obs_ids=tuple(order),
        trials=trials,
    )


def write_loglik_csv(samples: LogLikSamples, path: str | os.PathLike) -> None:
    """Emit draws as decimal CSV with full round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(samples.obs_ids) + "\n")
        for row in samples.values:
            handle.write(",".join(format_float(v) for v in row) + "\n")


def write_metadata_json(
    samples: LogLikSamples | PredictiveDraws,
    path: str | os.PathLike,
    family: str | None = None,
) -> None:
    meta: dict = {"chains": samples.draw_chain.tolist()}
    if isinstance(samples, PredictiveDraws):
        meta["families"] = samples.family
        if samples.trials is not None:
            meta["trials"] = {
                obs: int(m) for obs, m in zip(samples.obs_ids, samples.trials)
            }
    elif family is not None:
        meta["families"] = family
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")


def write_predictive_csv(pred: PredictiveDraws, path: str | os.PathLike) -> None:
    names = FAMILY_PARAMS[pred.family]
    header = [f"{obs}.{param}" for obs in pred.obs_ids for param in names]
    flat = pred.params.reshape(pred.n_draws, -1)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(header) + "\n")
        for row in flat:
            handle.write(",".join(format_float(v) for v in row) + "\n")


def load_group_map(path: str | os.PathLike) -> GroupMap:
    """Load a group map from a JSON object of ``{obs_id: group_label}``."""
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    if not isinstance(raw, dict):
        raise UncoveredObsId(f"{path}: group map must be a JSON object")
    return GroupMap(raw)
