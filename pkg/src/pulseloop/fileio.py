"""File formats and atomic persistence.

CSV carries sampled data (envelopes as ``t_s,i,q``, detector traces as
``t_s,v``, tables per command); JSON carries structured configuration
and results. All writes go through a temp-file-plus-rename so readers
never observe partial files, and numeric formatting is fixed so equal
data produces byte-equal files.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .envelope import ComplexEnvelope, InvalidSpecError, TimeGrid
from .demod import BeatTrace
from .sysid import VolterraModel
from .channel import AcoustoOpticParams, ChannelConfig
from .optics import ABCDElement, OpticalTrain

FLOAT_FMT = "%.17g"   # shortest run of digits that round-trips float64


def atomic_write_text(path: str, text: str) -> None:
    """Write text to ``path`` via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _fmt(value: float) -> str:
    return FLOAT_FMT % value


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header: str, columns) -> str:
    rows = [",".join(_fmt(c[i]) for c in columns)
            for i in range(len(columns[0]))]
    return header + "\n" + "\n".join(rows) + ("\n" if rows else "")


def _read_csv(path: str, expected_header: str) -> np.ndarray:
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != expected_header:
            raise InvalidSpecError(
                f"{path}: expected header {expected_header!r}, "
                f"got {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(expected_header.split(",")):
        raise InvalidSpecError(f"{path}: wrong column count")
    return data


def _grid_from_times(t: np.ndarray, path: str) -> TimeGrid:
    if len(t) < 2:
        raise InvalidSpecError(f"{path}: need at least two samples")
    dt = float(t[1] - t[0])
    if dt <= 0 or not np.allclose(np.diff(t), dt, rtol=1e-6, atol=dt * 1e-6):
        raise InvalidSpecError(f"{path}: time column is not uniform")
    return TimeGrid(t0=float(t[0]), dt=dt, n=len(t))


# ---------------------------------------------------------------- envelopes

def write_envelope_csv(path: str, env: ComplexEnvelope) -> None:
    t = env.grid.times()
    atomic_write_text(path, _csv_text(
        "t_s,i,q", (t, env.samples.real, env.samples.imag)))


def read_envelope_csv(path: str) -> ComplexEnvelope:
    data = _read_csv(path, "t_s,i,q")
    grid = _grid_from_times(data[:, 0], path)
    return ComplexEnvelope(grid, data[:, 1] + 1j * data[:, 2])


def write_envelope_json(path: str, env: ComplexEnvelope) -> None:
    atomic_write_text(path, _json_text({
        "t0": env.grid.t0,
        "dt": env.grid.dt,
        "i": env.samples.real.tolist(),
        "q": env.samples.imag.tolist()}))


def read_envelope_json(path: str) -> ComplexEnvelope:
    with open(path, "r") as fh:
        obj = json.load(fh)
    i = np.asarray(obj["i"], dtype=float)
    q = np.asarray(obj["q"], dtype=float)
    grid = TimeGrid(t0=float(obj["t0"]), dt=float(obj["dt"]), n=len(i))
    return ComplexEnvelope(grid, i + 1j * q)


def read_envelope(path: str) -> ComplexEnvelope:
    """Dispatch on extension: .json or CSV."""
    if path.endswith(".json"):
        return read_envelope_json(path)
    return read_envelope_csv(path)


def write_envelope(path: str, env: ComplexEnvelope) -> None:
    if path.endswith(".json"):
        write_envelope_json(path, env)
    else:
        write_envelope_csv(path, env)


# ------------------------------------------------------------------- traces

def write_trace_csv(path: str, trace: BeatTrace) -> None:
    atomic_write_text(path, _csv_text(
        "t_s,v", (trace.grid.times(), trace.samples)))


def read_trace_csv(path: str) -> BeatTrace:
    data = _read_csv(path, "t_s,v")
    grid = _grid_from_times(data[:, 0], path)
    return BeatTrace(grid, data[:, 1])


# ------------------------------------------------------------------- models

def model_to_dict(model: VolterraModel) -> dict:
    return {"h0_re": model.h0.real, "h0_im": model.h0.imag,
            "h1_re": model.h1.real.tolist(),
            "h1_im": model.h1.imag.tolist()}


def model_from_dict(obj: dict) -> VolterraModel:
    h1 = (np.asarray(obj["h1_re"], dtype=float)
          + 1j * np.asarray(obj["h1_im"], dtype=float))
    return VolterraModel(h0=complex(obj["h0_re"], obj["h0_im"]), h1=h1)


def write_model_json(path: str, model: VolterraModel) -> None:
    atomic_write_text(path, _json_text(model_to_dict(model)))


def read_model_json(path: str) -> VolterraModel:
    with open(path, "r") as fh:
        return model_from_dict(json.load(fh))


def write_scores_csv(path: str, scores: np.ndarray) -> None:
    scores = np.asarray(scores, dtype=float)
    atomic_write_text(path, _csv_text(
        "lambda,validation_mse", (scores[:, 0], scores[:, 1])))


# ----------------------------------------------------------- channel config

def channel_to_dict(config: ChannelConfig) -> dict:
    aom = config.aom
    return {
        "delay": config.delay,
        "volterra": model_to_dict(config.volterra),
        "aom": {"v": aom.v, "f_acoustic": aom.f_acoustic,
                "wavelength": aom.wavelength, "w0": aom.w0, "n0": aom.n0,
                "eta": aom.eta, "theta0": aom.theta0,
                "L1": aom.L1, "L2": aom.L2, "phi": aom.phi},
        "aom_enabled": config.aom_enabled,
        "mismatch_kappa": config.mismatch_kappa,
        "noise_sigma": config.noise_sigma,
        "seed": config.seed,
    }


def channel_from_dict(obj: dict) -> ChannelConfig:
    aom = AcoustoOpticParams(**obj.get("aom", {}))
    cfg = {k: obj[k] for k in ("delay", "aom_enabled", "mismatch_kappa",
                               "noise_sigma", "seed") if k in obj}
    volterra = (model_from_dict(obj["volterra"]) if "volterra" in obj
                else None)
    if volterra is None:
        return ChannelConfig(aom=aom, **cfg)
    return ChannelConfig(volterra=volterra, aom=aom, **cfg)


def write_channel_json(path: str, config: ChannelConfig) -> None:
    atomic_write_text(path, _json_text(channel_to_dict(config)))


def read_channel_json(path: str) -> ChannelConfig:
    with open(path, "r") as fh:
        return channel_from_dict(json.load(fh))


# ------------------------------------------------------------ optics trains

def train_to_dict(train: OpticalTrain) -> dict:
    return {"elements": [{"kind": e.kind, "parameter": e.parameter}
                         for e in train.elements],
            "markers": dict(train.markers),
            "k": train.k}


def train_from_dict(obj: dict) -> OpticalTrain:
    elements = tuple(ABCDElement(e["kind"], float(e["parameter"]))
                     for e in obj["elements"])
    return OpticalTrain(elements=elements,
                        markers={str(k): int(v)
                                 for k, v in obj.get("markers", {}).items()},
                        k=obj.get("k"))


def write_train_json(path: str, train: OpticalTrain) -> None:
    atomic_write_text(path, _json_text(train_to_dict(train)))


def read_train_json(path: str) -> OpticalTrain:
    with open(path, "r") as fh:
        return train_from_dict(json.load(fh))


# ------------------------------------------------------------- loop reports

def report_to_dict(report) -> dict:
    return {
        "converged": report.converged,
        "final_model": (model_to_dict(report.final_model)
                        if report.final_model is not None else None),
        "records": [{"index": r.index, "mase": r.mase, "mse": r.mse,
                     "model_error": (None if np.isnan(r.model_error)
                                     else r.model_error)}
                    for r in report.records],
    }


def write_report_json(path: str, report) -> None:
    atomic_write_text(path, _json_text(report_to_dict(report)))


def write_convergence_csv(path: str, report) -> None:
    idx = np.array([float(r.index) for r in report.records])
    m = np.array([r.mase for r in report.records])
    atomic_write_text(path, _csv_text("iteration,mase", (idx, m)))
