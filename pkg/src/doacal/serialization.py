"""On-disk formats: bit-exact JSON serialization and CSV export.

Floating-point payloads are stored as ``float.hex`` strings inside a
JSON document with a small self-describing header, which round-trips
float64 values exactly and keeps every artifact byte-reproducible under
a fixed seed.  Complex arrays interleave real/imag hex strings in
column-major order.  Spectra and reports export as plain CSV.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .simulate import (ArrayGeometry, CfrSet, DirectionGrid,
                       ImpairmentProfile, WaveformConfig)

FORMAT_VERSION = 1


def _floats_to_hex(values: np.ndarray) -> list:
    return [float(v).hex() for v in np.asarray(values, dtype=np.float64).ravel(order="F")]


def _hex_to_floats(hexes: list, shape: tuple) -> np.ndarray:
    flat = np.array([float.fromhex(h) for h in hexes], dtype=np.float64)
    return flat.reshape(shape, order="F")


def encode_real_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "hex": _floats_to_hex(a)}


def decode_real_array(d: dict) -> np.ndarray:
    return _hex_to_floats(d["hex"], tuple(d["shape"]))


def encode_complex_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.complex128)
    return {"shape": list(a.shape),
            "real_hex": _floats_to_hex(a.real),
            "imag_hex": _floats_to_hex(a.imag)}


def decode_complex_array(d: dict) -> np.ndarray:
    shape = tuple(d["shape"])
    return _hex_to_floats(d["real_hex"], shape) + 1j * _hex_to_floats(d["imag_hex"], shape)


def dumps_canonical(doc: dict) -> str:
    """Canonical JSON text: sorted keys, fixed separators, newline-terminated."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def write_json(path, doc: dict) -> None:
    Path(path).write_text(dumps_canonical(doc))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# Domain objects
# ---------------------------------------------------------------------------

def geometry_to_dict(geom: ArrayGeometry) -> dict:
    return {"num_elements": geom.num_elements, "spacing": geom.spacing,
            "carrier": geom.carrier}


def geometry_from_dict(d: dict) -> ArrayGeometry:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ArrayGeometry(int(d["num_elements"]), float(d["spacing"]),
                             float(d["carrier"]))


def waveform_to_dict(wave: WaveformConfig) -> dict:
    return {"num_subcarriers": wave.num_subcarriers,
            "subcarrier_spacing": wave.subcarrier_spacing,
            "snapshots": wave.snapshots}


def waveform_from_dict(d: dict) -> WaveformConfig:
    return WaveformConfig(int(d["num_subcarriers"]), float(d["subcarrier_spacing"]),
                          int(d.get("snapshots", 1)))


def cfr_to_dict(cfr: CfrSet) -> dict:
    return {"format": "doacal.cfr", "version": FORMAT_VERSION,
            "geometry": geometry_to_dict(cfr.geometry),
            "waveform": waveform_to_dict(cfr.waveform),
            "seed": cfr.seed,
            "h": encode_complex_array(cfr.h)}


def cfr_from_dict(d: dict) -> CfrSet:
    if d.get("format") != "doacal.cfr":
        raise ValueError("not a CFR document")
    return CfrSet(decode_complex_array(d["h"]), geometry_from_dict(d["geometry"]),
                  waveform_from_dict(d["waveform"]), int(d["seed"]))


def profile_to_dict(profile: ImpairmentProfile) -> dict:
    return {"format": "doacal.profile", "version": FORMAT_VERSION,
            "grid_angles": encode_real_array(profile.grid.angles),
            "description": profile.description,
            "allow_amplitude_errors": profile.allow_amplitude_errors,
            "gains": encode_complex_array(profile.gains)}


def profile_from_dict(d: dict) -> ImpairmentProfile:
    if d.get("format") != "doacal.profile":
        raise ValueError("not a profile document")
    grid = DirectionGrid(decode_real_array(d["grid_angles"]))
    return ImpairmentProfile(decode_complex_array(d["gains"]), grid,
                             description=d.get("description", ""),
                             allow_amplitude_errors=bool(d["allow_amplitude_errors"]))


def checkpoint_to_dict(weights: dict, header: dict | None = None) -> dict:
    """Model checkpoint: versioned header plus named flat weight arrays."""
    doc = {"format": "doacal.checkpoint", "version": FORMAT_VERSION,
           "header": header or {},
           "weights": {k: encode_real_array(v) for k, v in sorted(weights.items())}}
    return doc


def checkpoint_from_dict(d: dict) -> tuple:
    if d.get("format") != "doacal.checkpoint":
        raise ValueError("not a checkpoint document")
    weights = {k: decode_real_array(v) for k, v in d["weights"].items()}
    return weights, d.get("header", {})


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def format_float(x: float) -> str:
    """Shortest exact decimal round-trip representation."""
    return repr(float(x))


def write_csv(path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) if isinstance(v, float) else str(v)
                              for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def spectrum_to_csv(path, spectrum) -> None:
    """Two-column export (angle_deg, value)."""
    rows = [(float(a), float(v))
            for a, v in zip(spectrum.grid.angles, spectrum.values)]
    write_csv(path, ["angle_deg", "value"], rows)


def matrix_to_csv(path, matrix: np.ndarray) -> None:
    """Plain numeric matrix dump, one row per line (for P and manifolds)."""
    m = np.asarray(matrix)
    if np.iscomplexobj(m):
        rows = [[format_float(v.real) + ("+" if v.imag >= 0 else "-")
                 + format_float(abs(v.imag)) + "j" for v in row] for row in m]
        lines = [",".join(row) for row in rows]
    else:
        lines = [",".join(format_float(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")
