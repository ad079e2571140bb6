"""Episode JSON schema and atomic file writes.

Episode file layout (``schema = "v2b-episode/1"``)::

    {
      "schema": "v2b-episode/1",
      "tariff": {theta_e_offpeak, theta_e_peak, peak_window, theta_d, delta,
                 demand_includes_delta, demand_peak_hours_only},
      "chargers": [{"id", "p_min", "p_max"}, ...],
      "building_load": [kW per slot],
      "sessions": [{"id", "arrival_slot", "departure_slot", "soc_init", "soc_req",
                    "capacity_kwh", "soc_min", "soc_max"}, ...],
      "estimated_peak_kw": float,
      "day_of_week": [0..6 per day],
      "history_peaks": [kW],
      "provenance": {free-form: seed, parent file, day index}
    }

Floats are written with ``repr`` precision so files round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict

import numpy as np

from .core import ChargerSpec, ConfigError, Episode, EvSession, Tariff

EPISODE_SCHEMA = "v2b-episode/1"


def _tariff_from_dict(data: dict) -> Tariff:
    data = dict(data)
    if "peak_window" in data:
        data["peak_window"] = tuple(data["peak_window"])
    return Tariff(**data)


def episode_to_dict(episode: Episode, chargers=(), provenance=None) -> dict:
    tariff = asdict(episode.tariff)
    tariff["peak_window"] = list(tariff["peak_window"])
    return {
        "schema": EPISODE_SCHEMA,
        "tariff": tariff,
        "chargers": [asdict(c) for c in chargers],
        "building_load": [float(x) for x in episode.building_load],
        "sessions": [asdict(s) for s in episode.sessions],
        "estimated_peak_kw": float(episode.estimated_peak_kw),
        "day_of_week": list(episode.day_of_week),
        "history_peaks": [float(x) for x in episode.history_peaks],
        "provenance": dict(provenance or {}),
    }


def episode_from_dict(data: dict):
    """Return ``(episode, chargers, provenance)``."""
    if data.get("schema") != EPISODE_SCHEMA:
        raise ConfigError(f"unsupported episode schema {data.get('schema')!r}")
    try:
        episode = Episode(
            building_load=np.array(data["building_load"], dtype=float),
            sessions=tuple(EvSession(**s) for s in data["sessions"]),
            tariff=_tariff_from_dict(data["tariff"]),
            estimated_peak_kw=float(data.get("estimated_peak_kw", 0.0)),
            day_of_week=tuple(data.get("day_of_week", (0,))),
            history_peaks=tuple(data.get("history_peaks", ())),
        )
        chargers = [ChargerSpec(**c) for c in data.get("chargers", [])]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed episode file: {exc}") from exc
    return episode, chargers, data.get("provenance", {})


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_text_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    write_text_atomic(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_episode(path, episode: Episode, chargers=(), provenance=None) -> None:
    write_json(path, episode_to_dict(episode, chargers, provenance))


def load_episode(path):
    try:
        return episode_from_dict(read_json(path))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def write_csv(path, rows, columns) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: ("" if row.get(c) is None else row.get(c)) for c in columns})
    write_text_atomic(path, buf.getvalue())
