"""Experiment runner: dataset generation, training, and evaluation.

Reproduces the desk-scale studies end to end from a single JSON config:
seeded dataset generation with a manifest, per-impairment-level training
of the gating autoencoder and the per-subregion calibrators, and CSV
reports (RMSE versus SNR and impairment degree, error CDFs, per-region
boxplot summaries, spectra dumps).  Every stage is a pure function of
(config, seed, inputs), so reruns produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import serialization as ser
from .beamformer import (AutoencoderParams, AutoencoderTrainConfig,
                         SubregionPartition, beamform, route,
                         train_autoencoder)
from .coarray import (ProjectionMatrix, coarray_dbf, coarray_manifold, hpbw,
                      projection, vectorize_covariance)
from .estimators import (SpatialSpectrum, dbf_spectrum, music_spectrum,
                         pick_aoa, sample_covariance)
from .reconstruction import (CalibratorParams, CalibratorTrainConfig,
                             SsrConfig, one_hot_label, reconstruct, scg_solve,
                             train_calibrator)
from .simulate import (ArrayGeometry, CfrSet, DirectionGrid,
                       ImpairmentProfile, ProfileSynthParams, SourceScene,
                       WaveformConfig, generate_cfr, scale_profile,
                       synth_profile)

KNOWN_ESTIMATORS = ("dbf", "music", "coarray_dbf", "scg", "calibrated_scg")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Declarative description of one desk-scale experiment."""

    scenario: str
    geometry: ArrayGeometry
    grid: DirectionGrid
    waveform: WaveformConfig
    profile_params: ProfileSynthParams
    rho_values: tuple = (0.0, 0.5, 1.0)
    snr_train: float = 10.0
    snr_eval: tuple = (0.0, 20.0)
    train_slots: int = 40
    val_slots: int = 10
    num_subregions: int = 4
    estimators: tuple = KNOWN_ESTIMATORS
    ssr: SsrConfig = field(default_factory=lambda: SsrConfig(
        sparsity_step=0.0, outer_iterations=1, max_cg_iterations=40))
    scg_only: SsrConfig = field(default_factory=SsrConfig)
    autoencoder_epochs: int = 30
    calibrator: CalibratorTrainConfig = field(default_factory=CalibratorTrainConfig)
    spectrum_scene_angle: float = -15.0
    seed: int = 0

    def __post_init__(self):
        for est in self.estimators:
            if est not in KNOWN_ESTIMATORS:
                raise ConfigError(f"unknown estimator '{est}'")
        if self.train_slots < 1 or self.val_slots < 1:
            raise ConfigError("need at least one training and one validation slot")
        if self.train_slots + self.val_slots != self.waveform.snapshots:
            raise ConfigError("train_slots + val_slots must equal waveform.snapshots")

    @property
    def partition(self) -> SubregionPartition:
        return SubregionPartition(self.grid, self.num_subregions)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "geometry": ser.geometry_to_dict(self.geometry),
            "grid": {"start": float(self.grid.angles[0]),
                     "stop": float(self.grid.angles[-1]),
                     "step": self.grid.spacing},
            "waveform": ser.waveform_to_dict(self.waveform),
            "impairment": {
                "max_inner_error_deg": self.profile_params.max_inner_error_deg,
                "outer_slope": self.profile_params.outer_slope,
                "inner_bounds": list(self.profile_params.inner_bounds),
                "smoothness": self.profile_params.smoothness,
                "num_harmonics": self.profile_params.num_harmonics,
                "seed": self.profile_params.seed,
            },
            "rho_values": list(self.rho_values),
            "snr_train": self.snr_train,
            "snr_eval": list(self.snr_eval),
            "train_slots": self.train_slots,
            "val_slots": self.val_slots,
            "num_subregions": self.num_subregions,
            "estimators": list(self.estimators),
            "ssr": self.ssr.to_dict(),
            "scg_only": self.scg_only.to_dict(),
            "autoencoder_epochs": self.autoencoder_epochs,
            "calibrator": {
                "lr": self.calibrator.lr,
                "batch_size": self.calibrator.batch_size,
                "epochs": self.calibrator.epochs,
                "lr_halve_every": self.calibrator.lr_halve_every,
                "seed": self.calibrator.seed,
                "solver_grad": self.calibrator.solver_grad,
                "attractor_grad": self.calibrator.attractor_grad,
                "pretrain_epochs": self.calibrator.pretrain_epochs,
            },
            "spectrum_scene_angle": self.spectrum_scene_angle,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            grid = DirectionGrid.from_spacing(d["grid"]["start"], d["grid"]["stop"],
                                              d["grid"]["step"])
            imp = d.get("impairment", {})
            cal = d.get("calibrator", {})
            return cls(
                scenario=d.get("scenario", "experiment"),
                geometry=ser.geometry_from_dict(d["geometry"]),
                grid=grid,
                waveform=ser.waveform_from_dict(d["waveform"]),
                profile_params=ProfileSynthParams(
                    max_inner_error_deg=imp.get("max_inner_error_deg", 20.0),
                    outer_slope=imp.get("outer_slope", 1.0),
                    inner_bounds=tuple(imp.get("inner_bounds", (-30.0, 30.0))),
                    smoothness=imp.get("smoothness", 0.9),
                    num_harmonics=imp.get("num_harmonics", 2),
                    seed=imp.get("seed", 0)),
                rho_values=tuple(d.get("rho_values", (0.0, 0.5, 1.0))),
                snr_train=d.get("snr_train", 10.0),
                snr_eval=tuple(d.get("snr_eval", (0.0, 20.0))),
                train_slots=d.get("train_slots", 40),
                val_slots=d.get("val_slots", 10),
                num_subregions=d.get("num_subregions", 4),
                estimators=tuple(d.get("estimators", KNOWN_ESTIMATORS)),
                ssr=SsrConfig(**d["ssr"]) if "ssr" in d else SsrConfig(
                    sparsity_step=0.0, outer_iterations=1, max_cg_iterations=40),
                scg_only=SsrConfig(**d["scg_only"]) if "scg_only" in d else SsrConfig(),
                autoencoder_epochs=d.get("autoencoder_epochs", 30),
                calibrator=CalibratorTrainConfig(**cal),
                spectrum_scene_angle=d.get("spectrum_scene_angle", -15.0),
                seed=d.get("seed", 0),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


def default_config(scenario: str = "desk", seed: int = 0,
                   step: float = 1.0, slots: int = 50,
                   spacing_wavelengths: float = 0.5) -> ExperimentConfig:
    """Desk-scale defaults: 121-point 1-degree grid, 16 subcarriers,
    50 slots per angle (40 train / 10 validation), 4 subregions."""
    carrier = 4.85e9
    geom = ArrayGeometry(4, spacing_wavelengths * 299792458.0 / carrier, carrier)
    train_slots = int(round(slots * 0.8))
    return ExperimentConfig(
        scenario=scenario,
        geometry=geom,
        grid=DirectionGrid.from_spacing(-60.0, 60.0, step),
        waveform=WaveformConfig(16, 30e3, snapshots=slots),
        profile_params=ProfileSynthParams(seed=7),
        train_slots=train_slots,
        val_slots=slots - train_slots,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Seed bookkeeping
# ---------------------------------------------------------------------------

def sample_seed(root_seed: int, rho_index: int, snr_index: int,
                angle_index: int, slot: int) -> int:
    """Deterministic per-sample seed via seed-sequence spawning."""
    ss = np.random.SeedSequence(entropy=root_seed,
                                spawn_key=(rho_index, snr_index, angle_index, slot))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def _generate_split(config: ExperimentConfig, profile: ImpairmentProfile,
                    rho_index: int, snr: float, snr_index: int,
                    slot_range: range):
    """CFR stack for all (angle, slot) pairs of one split."""
    m = config.geometry.num_elements
    k = config.waveform.num_subcarriers
    n = len(config.grid) * len(slot_range)
    h = np.empty((n, m, k), dtype=np.complex128)
    angles = np.empty(n)
    slots = np.empty(n, dtype=int)
    seeds = np.empty(n, dtype=np.uint64)
    i = 0
    for li, ang in enumerate(config.grid.angles):
        scene = SourceScene.single(float(ang), snr_db=snr)
        for slot in slot_range:
            seed = sample_seed(config.seed, rho_index, snr_index, li, slot)
            cfr = generate_cfr(scene, config.geometry, config.waveform,
                               profile=profile, seed=seed)
            h[i] = cfr.h
            angles[i] = ang
            slots[i] = slot
            seeds[i] = seed
            i += 1
    return {"h": h, "angles": angles, "slots": slots, "seeds": seeds}


def _split_to_dict(split: dict) -> dict:
    return {"h": ser.encode_complex_array(split["h"]),
            "angles": ser.encode_real_array(split["angles"]),
            "slots": [int(s) for s in split["slots"]],
            "seeds": [int(s) for s in split["seeds"]]}


def _split_from_dict(d: dict) -> dict:
    return {"h": ser.decode_complex_array(d["h"]),
            "angles": ser.decode_real_array(d["angles"]),
            "slots": np.array(d["slots"], dtype=int),
            "seeds": np.array(d["seeds"], dtype=np.uint64)}


def _dataset_paths(out_dir: Path, rho: float, snr: float, split: str) -> Path:
    return out_dir / "dataset" / f"{split}_rho{rho:g}_snr{snr:g}.json"


def cmd_generate(config: ExperimentConfig, out_dir) -> dict:
    """Write all dataset files plus a manifest with content hashes.

    Training splits are generated at the training SNR for every rho in
    the sweep; validation splits additionally cover the evaluation SNRs
    at the largest rho (the SNR study).  Returns the manifest.
    """
    out_dir = Path(out_dir)
    (out_dir / "dataset").mkdir(parents=True, exist_ok=True)
    base_profile = synth_profile(config.geometry, config.grid, config.waveform,
                                 config.profile_params)

    entries = []
    combos = []
    for ri, rho in enumerate(config.rho_values):
        combos.append((ri, rho, config.snr_train, 0, "train",
                       range(0, config.train_slots)))
        combos.append((ri, rho, config.snr_train, 0, "val",
                       range(config.train_slots,
                             config.train_slots + config.val_slots)))
    ri_last = len(config.rho_values) - 1
    rho_last = config.rho_values[-1]
    for si, snr in enumerate(config.snr_eval, start=1):
        combos.append((ri_last, rho_last, snr, si, "val",
                       range(config.train_slots,
                             config.train_slots + config.val_slots)))

    for ri, rho, snr, si, split_name, slot_range in combos:
        profile = scale_profile(base_profile, rho)
        split = _generate_split(config, profile, ri, snr, si, slot_range)
        doc = {"format": "doacal.dataset", "version": ser.FORMAT_VERSION,
               "scenario": config.scenario, "rho": rho, "snr": snr,
               "split": split_name,
               "geometry": ser.geometry_to_dict(config.geometry),
               "waveform": ser.waveform_to_dict(config.waveform),
               "grid": {"start": float(config.grid.angles[0]),
                        "stop": float(config.grid.angles[-1]),
                        "step": config.grid.spacing},
               "data": _split_to_dict(split)}
        path = _dataset_paths(out_dir, rho, snr, split_name)
        text = ser.dumps_canonical(doc)
        path.write_text(text)
        entries.append({"file": path.name, "rho": rho, "snr": snr,
                        "split": split_name,
                        "num_samples": int(split["h"].shape[0]),
                        "samples_per_angle": len(slot_range),
                        "sha256": hashlib.sha256(text.encode()).hexdigest()})

    manifest = {"format": "doacal.manifest", "version": ser.FORMAT_VERSION,
                "config": config.to_dict(), "files": entries}
    ser.write_json(out_dir / "dataset" / "manifest.json", manifest)
    return manifest


def load_split(config: ExperimentConfig, out_dir, rho: float, snr: float,
               split: str) -> dict:
    path = _dataset_paths(Path(out_dir), rho, snr, split)
    if not path.exists():
        raise ConfigError(f"dataset file missing: {path}")
    doc = ser.read_json(path)
    if doc.get("format") != "doacal.dataset":
        raise ConfigError(f"not a dataset file: {path}")
    return _split_from_dict(doc["data"])


def _split_as_cfr_list(config: ExperimentConfig, split: dict) -> list:
    out = []
    for h, ang, seed in zip(split["h"], split["angles"], split["seeds"]):
        out.append((CfrSet(h, config.geometry, config.waveform, int(seed)),
                    float(ang)))
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _grid_fingerprint(grid: DirectionGrid) -> str:
    return hashlib.sha256(grid.angles.tobytes()).hexdigest()[:16]


def subregion_training_arrays(config: ExperimentConfig,
                              ae_params: AutoencoderParams,
                              split: dict, p: int):
    """Per-subregion calibrator inputs/labels from gated CFR data.

    Routes every sample whose true angle belongs to subregion ``p``
    through that subregion's decoder, forms the coarray spectrum of the
    reconstruction on the subregion grid, and scales it to unit max.
    """
    part = config.partition
    subgrid = part.subgrid(p)
    at = coarray_manifold(subgrid, config.geometry)
    eta0s, labels = [], []
    for h, ang in zip(split["h"], split["angles"]):
        if part.assign(float(ang)) != p:
            continue
        cfr = CfrSet(h, config.geometry, config.waveform, 0)
        recon = beamform(cfr, ae_params)[p]
        cov = sample_covariance(CfrSet(recon, config.geometry, config.waveform, 0))
        spec = coarray_dbf(vectorize_covariance(cov), at, subgrid).normalized()
        eta0s.append(spec.values)
        labels.append(one_hot_label(subgrid, float(ang)))
    return np.array(eta0s), np.array(labels), subgrid


def train_models(config: ExperimentConfig, out_dir, rho: float):
    """Train the autoencoder and all subregion calibrators for one rho.

    Returns (ae_params, {subregion: calibrator}, loss curves dict).
    """
    split = load_split(config, out_dir, rho, config.snr_train, "train")
    dataset = _split_as_cfr_list(config, split)
    part = config.partition

    ae_cfg = AutoencoderTrainConfig(epochs=config.autoencoder_epochs,
                                    seed=config.seed)
    ae_params, ae_curve = train_autoencoder(dataset, part, ae_cfg)

    curves = {"autoencoder": ae_curve}
    calibrators = {}
    for p in range(part.num_subregions):
        eta0s, labels, subgrid = subregion_training_arrays(config, ae_params,
                                                           split, p)
        proj = projection(coarray_manifold(subgrid, config.geometry))
        cal_cfg = CalibratorTrainConfig(
            lr=config.calibrator.lr, batch_size=config.calibrator.batch_size,
            epochs=config.calibrator.epochs,
            lr_halve_every=config.calibrator.lr_halve_every,
            seed=config.calibrator.seed + p,
            solver_grad=config.calibrator.solver_grad,
            attractor_grad=config.calibrator.attractor_grad,
            pretrain_epochs=config.calibrator.pretrain_epochs)
        cal_params, curve = train_calibrator(eta0s, labels, proj, config.ssr,
                                             cal_cfg)
        calibrators[p] = cal_params
        curves[f"subregion_{p}"] = curve
    return ae_params, calibrators, curves


def _ae_checkpoint(config: ExperimentConfig, rho: float,
                   ae: AutoencoderParams) -> dict:
    header = {"kind": "autoencoder", "rho": rho,
              "grid": _grid_fingerprint(config.grid),
              "num_subregions": ae.num_subregions,
              "hidden_activation": ae.hidden_activation,
              "output_activation": ae.output_activation,
              "geometry": ser.geometry_to_dict(config.geometry)}
    weights = {"enc_w": ae.enc_w, "enc_b": ae.enc_b,
               "dec_w": ae.dec_w, "dec_b": ae.dec_b}
    return ser.checkpoint_to_dict(weights, header)


def _ae_from_checkpoint(doc: dict) -> tuple:
    weights, header = ser.checkpoint_from_dict(doc)
    ae = AutoencoderParams(enc_w=weights["enc_w"], enc_b=weights["enc_b"],
                           dec_w=weights["dec_w"], dec_b=weights["dec_b"],
                           hidden_activation=header["hidden_activation"],
                           output_activation=header["output_activation"])
    return ae, header


def _cal_checkpoint(config: ExperimentConfig, rho: float, p: int,
                    cal: CalibratorParams) -> dict:
    header = {"kind": "calibrator", "rho": rho, "subregion": p,
              "grid": _grid_fingerprint(config.partition.subgrid(p)),
              "kernel_counts": list(cal.kernel_counts),
              "kernel_width": cal.kernel_width,
              "grid_len": cal.grid_len, "residual": cal.residual,
              "ssr": config.ssr.to_dict()}
    return ser.checkpoint_to_dict(cal.weights, header)


def _cal_from_checkpoint(doc: dict) -> tuple:
    weights, header = ser.checkpoint_from_dict(doc)
    cal = CalibratorParams(weights, tuple(header["kernel_counts"]),
                           header["kernel_width"], header["grid_len"],
                           header["residual"])
    return cal, header


def cmd_train(config: ExperimentConfig, out_dir) -> dict:
    """Train per-rho models; write checkpoints and loss-curve CSVs."""
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    report_dir = out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)

    loss_rows = []
    sd_rows = []
    for rho in config.rho_values:
        ae, calibrators, curves = train_models(config, out_dir, rho)
        ser.write_json(ckpt_dir / f"autoencoder_rho{rho:g}.json",
                       _ae_checkpoint(config, rho, ae))
        for p, cal in calibrators.items():
            ser.write_json(ckpt_dir / f"calibrator_rho{rho:g}_sub{p}.json",
                           _cal_checkpoint(config, rho, p, cal))
        for name, curve in curves.items():
            conv = curve[-1]
            for epoch, loss in enumerate(curve):
                loss_rows.append((float(rho), name, epoch, float(loss)))
                sd_rows.append((float(rho), name, epoch,
                                float(abs(loss - conv))))
    ser.write_csv(report_dir / "loss_curves.csv",
                  ["rho", "model", "epoch", "loss"], loss_rows)
    # Spread of the loss around its converged (final-epoch) value.
    ser.write_csv(report_dir / "sd_of_loss.csv",
                  ["rho", "model", "epoch", "sd"], sd_rows)
    return {"checkpoints": sorted(p.name for p in ckpt_dir.glob("*.json"))}


def load_models(config: ExperimentConfig, out_dir, rho: float):
    """Load and validate the checkpoints for one rho."""
    ckpt_dir = Path(out_dir) / "checkpoints"
    path = ckpt_dir / f"autoencoder_rho{rho:g}.json"
    if not path.exists():
        raise ConfigError(f"missing checkpoint {path}")
    ae, header = _ae_from_checkpoint(ser.read_json(path))
    if header["grid"] != _grid_fingerprint(config.grid):
        raise ConfigError("autoencoder checkpoint grid does not match config")
    if header["num_subregions"] != config.num_subregions:
        raise ConfigError("autoencoder checkpoint subregion count mismatch")

    calibrators = {}
    for p in range(config.num_subregions):
        path = ckpt_dir / f"calibrator_rho{rho:g}_sub{p}.json"
        if not path.exists():
            raise ConfigError(f"missing checkpoint {path}")
        cal, header = _cal_from_checkpoint(ser.read_json(path))
        subgrid = config.partition.subgrid(p)
        if header["grid"] != _grid_fingerprint(subgrid):
            raise ConfigError(f"calibrator checkpoint grid mismatch (subregion {p})")
        if header["ssr"] != config.ssr.to_dict():
            raise ConfigError(f"calibrator checkpoint solver config mismatch "
                              f"(subregion {p})")
        calibrators[p] = cal
    return ae, calibrators


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

class EstimatorBank:
    """All estimators for one experiment, sharing cached manifolds."""

    def __init__(self, config: ExperimentConfig,
                 ae: AutoencoderParams | None = None,
                 calibrators: dict | None = None):
        self.config = config
        self.ae = ae
        self.calibrators = calibrators
        self.part = config.partition
        self.manifold_full = coarray_manifold(config.grid, config.geometry)
        self.proj_full = projection(self.manifold_full)
        self.sub = {}
        for p in range(self.part.num_subregions):
            subgrid = self.part.subgrid(p)
            at = coarray_manifold(subgrid, config.geometry)
            self.sub[p] = (subgrid, at, projection(at))

    def spectrum(self, name: str, cfr: CfrSet) -> SpatialSpectrum:
        """Full-grid spectrum for one estimator (subregion methods are
        embedded into the full grid with zeros elsewhere)."""
        cfg = self.config
        if name == "dbf":
            return dbf_spectrum(sample_covariance(cfr), cfg.grid, cfg.geometry)
        if name == "music":
            return music_spectrum(sample_covariance(cfr), 1, cfg.grid,
                                  cfg.geometry)
        if name == "coarray_dbf":
            y = vectorize_covariance(sample_covariance(cfr))
            return coarray_dbf(y, self.manifold_full, cfg.grid)
        if name == "scg":
            y = vectorize_covariance(sample_covariance(cfr))
            spec = coarray_dbf(y, self.manifold_full, cfg.grid)
            return scg_solve(spec, spec, self.proj_full, cfg.scg_only).spectrum
        if name == "calibrated_scg":
            final, p, _ = self.calibrated_pipeline(cfr)
            lo, hi = self.part.index_range(p)
            values = np.zeros(len(cfg.grid))
            values[lo:hi] = final.values
            return SpatialSpectrum(values, cfg.grid)
        raise ConfigError(f"unknown estimator '{name}'")

    def calibrated_pipeline(self, cfr: CfrSet):
        """Route, reconstruct, and return (spectrum, subregion, trace)."""
        if self.ae is None or self.calibrators is None:
            raise ConfigError("calibrated_scg requires trained checkpoints")
        p, recon = route(cfr, self.ae)
        subgrid, at, proj = self.sub[p]
        cov = sample_covariance(CfrSet(recon, self.config.geometry,
                                       self.config.waveform, 0))
        spec = coarray_dbf(vectorize_covariance(cov), at, subgrid).normalized()
        final, trace = reconstruct(spec, proj, self.calibrators[p],
                                   self.config.ssr)
        return final, p, trace

    def estimate(self, name: str, cfr: CfrSet) -> float:
        if name == "calibrated_scg":
            final, _, _ = self.calibrated_pipeline(cfr)
            return pick_aoa(final)
        return pick_aoa(self.spectrum(name, cfr))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def rmse(errors: np.ndarray) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    return float(np.sqrt(np.mean(errors ** 2)))


def quartiles(values: np.ndarray) -> tuple:
    """(q1, median, q3) with linear interpolation."""
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0],
                                method="linear")
    return float(q1), float(med), float(q3)


def five_number_summary(values: np.ndarray) -> dict:
    """Boxplot summary; whiskers at the extreme samples within 1.5 IQR."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = quartiles(values)
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    return {"q1": q1, "median": med, "q3": q3,
            "whisker_lo": float(inside[0]), "whisker_hi": float(inside[-1])}


def evaluate_errors(config: ExperimentConfig, bank: EstimatorBank,
                    split: dict, estimators) -> dict:
    """Per-estimator signed errors over one validation split."""
    errors = {name: [] for name in estimators}
    for h, ang in zip(split["h"], split["angles"]):
        cfr = CfrSet(h, config.geometry, config.waveform, 0)
        for name in estimators:
            errors[name].append(bank.estimate(name, cfr) - float(ang))
    return {name: np.array(err) for name, err in errors.items()}


def cmd_evaluate(config: ExperimentConfig, out_dir,
                 estimators=None) -> dict:
    """Run every study and write the report CSVs.

    Studies: RMSE versus rho (matched-training models at the training
    SNR), RMSE versus SNR (largest-rho model), error CDFs and
    per-subregion boxplot summaries at the training SNR and largest rho,
    plus a per-sample error dump.  Returns the headline numbers.
    """
    out_dir = Path(out_dir)
    estimators = tuple(estimators or config.estimators)
    for est in estimators:
        if est not in KNOWN_ESTIMATORS:
            raise ConfigError(f"unknown estimator '{est}'")
    report_dir = out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)

    needs_model = "calibrated_scg" in estimators

    # Study 1: RMSE versus impairment degree at the training SNR.
    rho_rows = []
    error_rows = []
    headline = {}
    banks = {}
    for rho in config.rho_values:
        ae, cal = (None, None)
        if needs_model:
            ae, cal = load_models(config, out_dir, rho)
        bank = EstimatorBank(config, ae, cal)
        banks[rho] = bank
        split = load_split(config, out_dir, rho, config.snr_train, "val")
        errs = evaluate_errors(config, bank, split, estimators)
        for name in estimators:
            rho_rows.append((float(rho), name, rmse(errs[name])))
            for ang, err in zip(split["angles"], errs[name]):
                error_rows.append((float(rho), name, float(ang), float(err)))
        headline[f"rho={rho:g}"] = {name: rmse(errs[name]) for name in estimators}
    ser.write_csv(report_dir / "rmse_vs_rho.csv",
                  ["rho", "estimator", "rmse"], rho_rows)
    ser.write_csv(report_dir / "errors.csv",
                  ["rho", "estimator", "angle", "error"], error_rows)

    # Study 2: RMSE versus SNR at the largest rho.
    rho_last = config.rho_values[-1]
    bank = banks[rho_last]
    snr_rows = []
    cdf_errors = None
    for snr in list(config.snr_eval) + [config.snr_train]:
        split = load_split(config, out_dir, rho_last, snr, "val")
        errs = evaluate_errors(config, bank, split, estimators)
        for name in estimators:
            snr_rows.append((float(snr), name, rmse(errs[name])))
        if snr == config.snr_train:
            cdf_errors = errs
            cdf_split = split
        headline[f"snr={snr:g}"] = {name: rmse(errs[name]) for name in estimators}
    snr_rows.sort(key=lambda r: (r[0], r[1]))
    ser.write_csv(report_dir / "rmse_vs_snr.csv",
                  ["snr", "estimator", "rmse"], snr_rows)

    # Study 3: CDF of absolute errors at (largest rho, training SNR).
    cdf_rows = []
    percentiles = np.arange(1, 100)
    for name in estimators:
        abs_err = np.abs(cdf_errors[name])
        for pct, val in zip(percentiles,
                            np.percentile(abs_err, percentiles, method="linear")):
            cdf_rows.append((name, int(pct), float(val)))
    ser.write_csv(report_dir / "cdf.csv",
                  ["estimator", "percentile", "abs_error"], cdf_rows)

    # Study 4: per-subregion boxplot summaries of absolute errors.
    part = config.partition
    box_rows = []
    for p in range(part.num_subregions):
        mask = np.array([part.assign(float(a)) == p
                         for a in cdf_split["angles"]])
        for name in estimators:
            s = five_number_summary(np.abs(cdf_errors[name][mask]))
            box_rows.append((p, name, s["q1"], s["median"], s["q3"],
                             s["whisker_lo"], s["whisker_hi"]))
    ser.write_csv(report_dir / "boxplots.csv",
                  ["subregion", "estimator", "q1", "median", "q3",
                   "whisker_lo", "whisker_hi"], box_rows)
    return headline


def cmd_spectrum(config: ExperimentConfig, out_dir, angle: float | None = None,
                 estimators=None) -> Path:
    """Dump aligned unit-max spectra for one scene to CSV."""
    out_dir = Path(out_dir)
    estimators = tuple(estimators or config.estimators)
    angle = config.spectrum_scene_angle if angle is None else angle
    # Scene directions snap to the grid (profiles are indexed by grid angle).
    angle = float(config.grid.angles[config.grid.nearest_index(angle)])
    rho_last = config.rho_values[-1]
    needs_model = "calibrated_scg" in estimators
    ae, cal = (None, None)
    if needs_model:
        ae, cal = load_models(config, out_dir, rho_last)
    bank = EstimatorBank(config, ae, cal)

    profile = scale_profile(synth_profile(config.geometry, config.grid,
                                          config.waveform,
                                          config.profile_params), rho_last)
    scene = SourceScene.single(angle, snr_db=config.snr_train)
    cfr = generate_cfr(scene, config.geometry, config.waveform,
                       profile=profile, seed=config.seed)

    report_dir = out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in estimators:
        spec = bank.spectrum(name, cfr).normalized()
        for a, v in zip(config.grid.angles, spec.values):
            rows.append((name, float(a), float(v)))
    path = report_dir / "spectra.csv"
    ser.write_csv(path, ["estimator", "angle", "value"], rows)
    return path
