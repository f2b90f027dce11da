"""Run output: one-column CSV files per series, or a single HDF5 container.

CSV layout of a run directory::

    <series>.csv   header row with the series name, one value per line
    config.xml     the input configuration, verbatim
    meta.json      seed record (master seed, run index, run seed)
    timing.json    wall time of the step loop

Values are written with 17 significant digits, which round-trips every
64-bit float exactly.  Series files, config.xml and meta.json are
byte-identical across reruns with the same seed; timing.json is not.

Container layout: ``/series/<name>``, ``/meta/config`` (verbatim XML),
``/meta/seed`` (run seed), ``/meta/wall_time``; the master seed and run index
are attributes of ``/meta``.
"""
from __future__ import annotations

import json
import os

import h5py
import numpy as np

FORMATS = ("csv", "container")
CONTAINER_NAME = "results.h5"


def _check_name(name: str) -> str:
    if not name or "/" in name or os.sep in name or name in (".", ".."):
        raise ValueError(f"series name {name!r} cannot be used as a file name")
    return name


def write_csv(output, directory) -> list:
    """Write every series of ``output`` into ``directory``; returns the paths written."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for name, values in output.series().items():
        path = os.path.join(directory, f"{_check_name(name)}.csv")
        with open(path, "w", newline="\n") as fh:
            fh.write(name + "\n")
            fh.writelines(format(float(v), ".17g") + "\n" for v in np.asarray(values))
        written.append(path)
    config_path = os.path.join(directory, "config.xml")
    with open(config_path, "w", newline="") as fh:
        fh.write(output.embedded_config)
    meta_path = os.path.join(directory, "meta.json")
    with open(meta_path, "w") as fh:
        json.dump(output.seed_record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    timing_path = os.path.join(directory, "timing.json")
    with open(timing_path, "w") as fh:
        json.dump({"wall_time": output.wall_time}, fh)
        fh.write("\n")
    return written + [config_path, meta_path, timing_path]


def read_series_csv(path) -> tuple[str, np.ndarray]:
    with open(path) as fh:
        name = fh.readline().rstrip("\n")
        values = np.array([float(line) for line in fh if line.strip()])
    return name, values


def read_csv(directory) -> dict:
    """Series by name from a CSV run directory, plus ``config`` and ``meta`` entries."""
    series = {}
    for entry in sorted(os.listdir(directory)):
        if entry.endswith(".csv"):
            name, values = read_series_csv(os.path.join(directory, entry))
            series[name] = values
    with open(os.path.join(directory, "config.xml")) as fh:
        config = fh.read()
    meta = {}
    for fname in ("meta.json", "timing.json"):
        path = os.path.join(directory, fname)
        if os.path.exists(path):
            with open(path) as fh:
                meta.update(json.load(fh))
    return {"series": series, "config": config, "meta": meta}


def write_container(output, path) -> str:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"directory {parent} does not exist")
    with h5py.File(path, "w") as fh:
        grp = fh.create_group("series")
        for name, values in output.series().items():
            grp.create_dataset(_check_name(name), data=np.asarray(values, dtype=np.float64))
        meta = fh.create_group("meta")
        meta.create_dataset("config", data=output.embedded_config,
                            dtype=h5py.string_dtype(encoding="utf-8"))
        record = output.seed_record
        meta.create_dataset("seed", data=np.uint64(record.get("run_seed", 0)))
        meta.create_dataset("wall_time", data=float(output.wall_time))
        for key in ("master_seed", "run_index"):
            if key in record:
                meta.attrs[key] = np.uint64(record[key])
    return path


def read_container(path) -> dict:
    with h5py.File(path, "r") as fh:
        series = {name: fh["series"][name][()] for name in fh["series"]}
        config = fh["meta/config"][()]
        if isinstance(config, bytes):
            config = config.decode("utf-8")
        meta = {"run_seed": int(fh["meta/seed"][()]),
                "wall_time": float(fh["meta/wall_time"][()])}
        for key, value in fh["meta"].attrs.items():
            meta[key] = int(value)
    return {"series": series, "config": config, "meta": meta}


def run_directory(base, run_index: int, repetitions: int) -> str:
    """``base`` for a single run, ``base/run_###`` when a plan has several."""
    if repetitions <= 1:
        return str(base)
    return os.path.join(str(base), f"run_{run_index:03d}")


def write_run(output, directory, fmt: str = "csv") -> str:
    """Write one run in the chosen format below ``directory``; returns the location."""
    if fmt not in FORMATS:
        raise ValueError(f"output format must be one of {FORMATS}")
    if fmt == "csv":
        write_csv(output, directory)
        return str(directory)
    os.makedirs(directory, exist_ok=True)
    return write_container(output, os.path.join(directory, CONTAINER_NAME))


def load_run(location) -> dict:
    """Read a run written by :func:`write_run` (CSV directory or container)."""
    location = str(location)
    if os.path.isdir(location):
        container = os.path.join(location, CONTAINER_NAME)
        if os.path.exists(container):
            return read_container(container)
        return read_csv(location)
    return read_container(location)
