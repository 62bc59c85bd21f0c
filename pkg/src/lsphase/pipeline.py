"""Experiment orchestration: the two-step dual-band training protocol and
the three-network inference path.

Step 1 trains the low-band network (unfiltered targets) and the high-band
network (power-law-filtered targets) on the same per-image inputs; step 2
trains the synthesizer on the trained step-1 outputs over the training set,
with unfiltered targets. Inference fans the input out to both band networks
and hands their outputs to the synthesizer; the three stages are never
collapsed into one network because their training targets differ.

Every stage writes its artifacts into the experiment directory and the
manifest records the full configuration, all seeds, the kernel backend and
the state-file hashes, which is enough to reproduce the experiment
bit for bit.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    SplitSpec,
    gen_powerlaw_phase,
    load_dataset,
    load_field,
    read_manifest,
    save_dataset,
    save_field,
    split,
)
from .errors import ConfigError, DimensionError
from .fieldcore import Grid2D, RealField
from .kernels import BACKEND
from .metrics import MetricReport, report, resolve_affine
from .neural import (
    NetworkSpec,
    NetworkState,
    TrainConfig,
    init_state,
    load_network,
    parameter_count,
    predict,
    save_network,
    train,
    write_history_csv,
)
from .noise import Measurement, NoiseModel, RngStream, measure
from .optics import OpticalConfig
from .retrieval import approximant
from .spectral import PowerLawFilter, apply_filter, psd2d, psd_diagonal

SCHEMES = ("approximant", "end-to-end")

# Baseline capacity must sit within 10% of the three-network total.
CAPACITY_TOLERANCE = 0.10


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale defaults: 64x64 grid whose 9.2 mm aperture matches the
    reference bench, single-photon flux, q = 0.5."""

    grid_size: int = 64
    pixel_pitch: float = 144e-6
    wavelength: float = 632.8e-9
    defocus: float = 0.4
    photons: float = 1.0
    read_sigma: float = 0.0
    noise_seed: int = 11
    dataset_exponent: float = 2.0
    dataset_fmax: float = math.pi
    dataset_seed: int = 7
    train_count: int = 512
    val_count: int = 64
    test_count: int = 64
    split_seed: int = 5
    scheme: str = "approximant"
    q: float = 0.5
    widths: tuple = (4, 8)
    l3_widths: tuple = (7, 14)
    kernel_size: int = 3
    leaky_slope: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    loss: str = "npcc"
    train_seed: int = 123

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "l3_widths", tuple(int(w) for w in self.l3_widths))
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.q < 0:
            raise ConfigError("q must be >= 0")

    def grid(self) -> Grid2D:
        return Grid2D.square(self.grid_size, self.pixel_pitch)

    def optical(self) -> OpticalConfig:
        return OpticalConfig(self.wavelength, self.defocus, self.grid())

    def noise(self) -> NoiseModel:
        return NoiseModel(photons=self.photons, sigma=self.read_sigma,
                          seed=self.noise_seed)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_count, self.val_count, self.test_count)

    def network_spec(self, role: str) -> NetworkSpec:
        widths = self.l3_widths if role == "L3" else self.widths
        return NetworkSpec.for_role(role, widths, kernel_size=self.kernel_size,
                                    leaky_slope=self.leaky_slope)

    def train_config(self, role: str) -> TrainConfig:
        offsets = {"L": 0, "H": 1, "S": 2, "L3": 3}
        return TrainConfig(learning_rate=self.learning_rate, beta1=self.beta1,
                           beta2=self.beta2, epsilon=self.epsilon,
                           batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.train_seed + offsets[role], loss=self.loss)


_FLOAT_KEYS = {"pixel_pitch", "wavelength", "defocus", "photons", "read_sigma",
               "dataset_exponent", "dataset_fmax", "q", "leaky_slope",
               "learning_rate", "beta1", "beta2", "epsilon"}
_INT_KEYS = {"grid_size", "noise_seed", "dataset_seed", "train_count",
             "val_count", "test_count", "split_seed", "kernel_size", "epochs",
             "batch_size", "train_seed"}
_TUPLE_KEYS = {"widths", "l3_widths"}
_STR_KEYS = {"scheme", "loss"}
CONFIG_KEYS = _FLOAT_KEYS | _INT_KEYS | _TUPLE_KEYS | _STR_KEYS
# Provenance keys appear in manifests and are accepted (ignored) on re-parse.
_PROVENANCE_PREFIXES = ("state_hash_",)
_PROVENANCE_KEYS = {"software_version", "kernel_backend"}


def config_to_text(config: ExperimentConfig) -> str:
    lines = []
    for f in dc_fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}={value}\n")
    return "".join(lines)


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse key=value lines; blank lines and #-comments allowed. Unknown
    keys are rejected, except the fixed provenance set written by manifests.
    `overrides` (e.g. CLI flags) win over file values."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in _PROVENANCE_KEYS or key.startswith(_PROVENANCE_PREFIXES):
            continue
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = raw
    if overrides:
        for key, raw in overrides.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = raw
    kwargs = {}
    for key, raw in values.items():
        try:
            if key in _FLOAT_KEYS:
                kwargs[key] = float(raw)
            elif key in _INT_KEYS:
                kwargs[key] = int(raw)
            elif key in _TUPLE_KEYS:
                kwargs[key] = tuple(int(v) for v in str(raw).split(","))
            else:
                kwargs[key] = str(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except DimensionError as exc:
        raise ConfigError(str(exc)) from exc


def _q_tag(q: float) -> str:
    return f"q{q:g}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class ExperimentLock:
    """One writer per experiment directory, guarded by a lock file."""

    def __init__(self, root: Path):
        self.path = Path(root) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"experiment directory is locked by {self.path}; remove the "
                "lock file if no other run is active") from None
        os.close(fd)
        return self

    def __exit__(self, *exc_info):
        self.path.unlink(missing_ok=True)


class LsExperiment:
    """Stage-by-stage experiment runner rooted at one directory.

    Completed stages are detected by their on-disk artifacts and skipped, so
    partially finished experiments resume rather than recompute.
    """

    def __init__(self, config: ExperimentConfig, root):
        self.config = config
        self.root = Path(root)
        self.dataset_dir = self.root / "dataset"
        self.measure_dir = self.root / "measurements"
        self.inputs_dir = self.root / "inputs"
        self.states_dir = self.root / "states"
        self.reports_dir = self.root / "reports"
        self._split_cache = None

    # -- dataset -------------------------------------------------------------

    def generate_dataset(self) -> None:
        if (self.dataset_dir / "manifest.tsv").exists():
            return
        cfg = self.config
        full = gen_powerlaw_phase(cfg.grid(), cfg.dataset_exponent,
                                  cfg.split_spec().total, cfg.dataset_seed,
                                  cfg.dataset_fmax)
        parts = split(full, cfg.split_spec(), cfg.split_seed)
        roles = {}
        for part, role in zip(parts, ("train", "validation", "test")):
            for item_id, _ in part.items:
                roles[item_id] = role
        save_dataset(full, self.dataset_dir, roles=roles)

    def splits(self) -> dict:
        """(id, RealField) lists per role, in stored dataset order."""
        if self._split_cache is None:
            roles = {item_id: role for item_id, _, role
                     in read_manifest(self.dataset_dir)}
            ds = load_dataset(self.dataset_dir, f_max=self.config.dataset_fmax)
            out = {"train": [], "validation": [], "test": []}
            for item_id, field in ds.items:
                role = roles[item_id]
                if role in out:
                    out[role].append((item_id, field))
            self._split_cache = out
        return self._split_cache

    # -- measurements and inputs ----------------------------------------------

    def _image_index(self, item_id: str) -> int:
        """Stable per-image RNG stream index: the item's position in the
        dataset manifest."""
        if not hasattr(self, "_index_map"):
            self._index_map = {entry[0]: i for i, entry
                               in enumerate(read_manifest(self.dataset_dir))}
        return self._index_map[item_id]

    def simulate_measurements(self) -> None:
        if (self.measure_dir / "manifest.tsv").exists():
            return
        self.measure_dir.mkdir(parents=True, exist_ok=True)
        cfg = self.config
        optical = cfg.optical()
        noise = cfg.noise()
        lines = []
        for role in ("train", "validation", "test"):
            for item_id, phase in self.splits()[role]:
                stream = RngStream(noise.seed, self._image_index(item_id))
                m = measure(phase, optical, noise, stream)
                g_name = f"g_{item_id}.lspr"
                g0_name = f"g0_{item_id}.lspr"
                save_field(m.g, self.measure_dir / g_name, precision="f64")
                save_field(m.g0, self.measure_dir / g0_name, precision="f64")
                lines.append(f"{item_id}\t{g_name}\tg\n")
                lines.append(f"{item_id}\t{g0_name}\tg0\n")
        (self.measure_dir / "manifest.tsv").write_text("".join(lines))

    def load_measurement(self, item_id: str) -> Measurement:
        g = load_field(self.measure_dir / f"g_{item_id}.lspr")
        g0 = load_field(self.measure_dir / f"g0_{item_id}.lspr")
        return Measurement(g=g, g0=g0)

    def prepare_inputs(self) -> None:
        """Cache the per-image network input: the measurement itself in the
        end-to-end scheme, its one-iteration retrieval in the approximant
        scheme. The approximant is never evaluated in end-to-end mode."""
        self.simulate_measurements()
        if (self.inputs_dir / "manifest.tsv").exists():
            return
        self.inputs_dir.mkdir(parents=True, exist_ok=True)
        cfg = self.config
        optical = cfg.optical()
        lines = []
        for role in ("train", "validation", "test"):
            for item_id, _ in self.splits()[role]:
                m = self.load_measurement(item_id)
                if cfg.scheme == "approximant":
                    xi = approximant(m, optical)
                else:
                    xi = m.g
                name = f"xi_{item_id}.lspr"
                save_field(xi, self.inputs_dir / name, precision="f64")
                lines.append(f"{item_id}\t{name}\txi\n")
        (self.inputs_dir / "manifest.tsv").write_text("".join(lines))

    def _batch(self, role: str, kind: str) -> np.ndarray:
        """(N, 1, H, W) stack of cached inputs or references for a split."""
        items = self.splits()[role]
        arrays = []
        for item_id, phase in items:
            if kind == "xi":
                arrays.append(load_field(self.inputs_dir / f"xi_{item_id}.lspr").values)
            else:
                arrays.append(phase.values)
        return np.asarray(arrays)[:, None]

    # -- training -------------------------------------------------------------

    def state_path(self, role: str, q: float | None = None) -> Path:
        if role in ("H", "S"):
            q = self.config.q if q is None else q
            return self.states_dir / f"dnn_{role.lower()}_{_q_tag(q)}.lsnn"
        return self.states_dir / f"dnn_{role.lower()}.lsnn"

    def _filtered_targets(self, targets: np.ndarray, q: float) -> np.ndarray:
        filt = PowerLawFilter(q=q, grid=self.config.grid())
        out = np.empty_like(targets)
        for i in range(targets.shape[0]):
            out[i, 0] = apply_filter(RealField(self.config.grid(),
                                               targets[i, 0]), filt).values
        return out

    def _train_role(self, role: str, inputs, targets, aux=None,
                    val=None, q: float | None = None) -> Path:
        cfg = self.config
        path = self.state_path(role, q)
        if path.exists():
            return path
        self.states_dir.mkdir(parents=True, exist_ok=True)
        spec = cfg.network_spec(role)
        state = init_state(spec, seed=cfg.train_config(role).seed)
        val_inputs = val_targets = val_aux = None
        if val is not None:
            val_inputs, val_targets, val_aux = val
        state, history = train(spec, state, inputs, targets,
                               cfg.train_config(role), aux=aux,
                               val_inputs=val_inputs, val_targets=val_targets,
                               val_aux=val_aux)
        save_network(state, path)
        suffix = f"_{_q_tag(q)}" if role in ("H", "S") and q is not None else ""
        write_history_csv(history, self.states_dir / f"loss_dnn_{role.lower()}{suffix}.csv")
        return path

    def train_role(self, role: str, q: float | None = None) -> Path:
        """Train one network. Training the synthesizer requires the band
        networks' states to exist already: its inputs are their outputs."""
        q = self.config.q if q is None else q
        self.prepare_inputs()
        if role == "L3":
            return self.train_baseline_l3()
        xi_train = self._batch("train", "xi")
        f_train = self._batch("train", "phase")
        xi_val = self._batch("validation", "xi")
        f_val = self._batch("validation", "phase")
        if role == "L":
            return self._train_role("L", xi_train, f_train,
                                    val=(xi_val, f_val, None))
        if role == "H":
            fp_train = self._filtered_targets(f_train, q)
            fp_val = self._filtered_targets(f_val, q)
            return self._train_role("H", xi_train, fp_train,
                                    val=(xi_val, fp_val, None), q=q)
        if role != "S":
            raise ConfigError(f"unknown role {role!r}")
        l_path = self.state_path("L")
        h_path = self.state_path("H", q)
        if not (l_path.exists() and h_path.exists()):
            raise ConfigError(
                "synthesizer training needs the trained band networks; "
                f"missing {l_path.name if not l_path.exists() else h_path.name}")
        s_path = self.state_path("S", q)
        if not s_path.exists():
            state_l = load_network(l_path)
            state_h = load_network(h_path)
            lf_train = _predict_batches(state_l, xi_train)
            hf_train = _predict_batches(state_h, xi_train)
            lf_val = _predict_batches(state_l, xi_val)
            hf_val = _predict_batches(state_h, xi_val)
            self._train_role("S", lf_train, f_train, aux=hf_train,
                             val=(lf_val, f_val, hf_val), q=q)
        return s_path

    def train_ls(self, q: float | None = None) -> dict:
        """Two-step protocol for one filter exponent; returns state paths.

        Step 1 trains the band networks in either order; step 2 trains the
        synthesizer on their outputs over the training set (reloaded from the
        serialized states, so its training data is exactly what inference
        will see), with unfiltered targets.
        """
        q = self.config.q if q is None else q
        return {
            "L": self.train_role("L"),
            "H": self.train_role("H", q=q),
            "S": self.train_role("S", q=q),
        }

    def train_baseline_l3(self) -> Path:
        """Capacity-matched single network on unfiltered targets."""
        cfg = self.config
        total = sum(parameter_count(cfg.network_spec(r)) for r in ("L", "H", "S"))
        l3 = parameter_count(cfg.network_spec("L3"))
        if abs(l3 - total) > CAPACITY_TOLERANCE * total:
            raise ConfigError(
                f"baseline capacity {l3} is outside +-10% of the three-network "
                f"total {total}; adjust l3_widths")
        self.prepare_inputs()
        return self._train_role("L3", self._batch("train", "xi"),
                                self._batch("train", "phase"),
                                val=(self._batch("validation", "xi"),
                                     self._batch("validation", "phase"), None))

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, q: float | None = None, include_l3: bool = False) -> dict:
        """Test-split metric reports per method, plus the spectral diagnostic
        table, all written under reports/."""
        q = self.config.q if q is None else q
        cfg = self.config
        self.reports_dir.mkdir(parents=True, exist_ok=True)
        ids = [item_id for item_id, _ in self.splits()["test"]]
        xi = self._batch("test", "xi")
        refs = self._batch("test", "phase")
        states = {
            "L": load_network(self.state_path("L")),
            "H": load_network(self.state_path("H", q)),
            "S": load_network(self.state_path("S", q)),
        }
        lf, hf, fhat = infer_ls(states, xi)
        grid = cfg.grid()
        methods = {"dnn_l": lf, "dnn_s": fhat}
        if cfg.scheme == "approximant":
            methods["approximant"] = xi
        if include_l3:
            state_l3 = load_network(self.state_path("L3"))
            methods["dnn_l3"] = _predict_batches(state_l3, xi)

        tag = _q_tag(q)
        reports = {}
        resolved = {}
        for method, outputs in methods.items():
            recons = [RealField(grid, outputs[i, 0]) for i in range(len(ids))]
            references = [RealField(grid, refs[i, 0]) for i in range(len(ids))]
            rep = report(recons, references, peak=cfg.dataset_fmax, ids=ids)
            name = f"metrics_{method}.csv" if method in ("approximant", "dnn_l", "dnn_l3") \
                else f"metrics_{method}_{tag}.csv"
            rep.to_csv(self.reports_dir / name)
            reports[method] = rep
            resolved[method] = [resolve_affine(r, f) for r, f in
                                zip(recons, references)]

        self._write_summary(reports, tag)
        self._write_psd_diagonals(resolved, refs, grid, tag)
        return reports

    def _write_summary(self, reports: dict, tag: str) -> None:
        lines = ["method," + ",".join(
            f"{c}_mean,{c}_std" for c in MetricReport.COLUMNS) + "\n"]
        for method in sorted(reports):
            agg = reports[method].aggregate()
            cells = []
            for c in MetricReport.COLUMNS:
                cells.append(f"{agg[c][0]:.17g},{agg[c][1]:.17g}")
            lines.append(f"{method}," + ",".join(cells) + "\n")
        (self.reports_dir / f"summary_{tag}.csv").write_text("".join(lines))

    def _write_psd_diagonals(self, resolved: dict, refs, grid, tag: str) -> None:
        columns = {}
        for method, fields in resolved.items():
            columns[method] = psd_diagonal(psd2d(fields))
        columns["reference"] = psd_diagonal(psd2d(
            [RealField(grid, refs[i, 0]) for i in range(refs.shape[0])]))
        names = sorted(columns)
        n = len(next(iter(columns.values())))
        lines = ["bin," + ",".join(names) + "\n"]
        for k in range(n):
            lines.append(f"{k}," + ",".join(f"{columns[m][k]:.17g}" for m in names) + "\n")
        (self.reports_dir / f"psd_diagonal_{tag}.csv").write_text("".join(lines))

    def q_sweep(self, q_values) -> dict:
        """Retrain the band-dependent networks per q (the low-band network is
        reused, its training does not involve q) and evaluate each."""
        out = {}
        for q in q_values:
            if q < 0:
                raise ConfigError("q must be >= 0")
            self.train_ls(q=q)
            out[q] = self.evaluate(q=q)
        return out

    # -- manifest ---------------------------------------------------------------

    def write_manifest(self) -> Path:
        lines = [config_to_text(self.config),
                 f"software_version={__version__}\n",
                 f"kernel_backend={BACKEND}\n"]
        if self.states_dir.exists():
            for path in sorted(self.states_dir.glob("*.lsnn")):
                lines.append(f"state_hash_{path.stem}={_sha256(path)}\n")
        path = self.root / "manifest.txt"
        path.write_text("".join(lines))
        return path

    def run(self, with_l3: bool = False) -> dict:
        """Full protocol: data, measurements, inputs, two-step training,
        evaluation, manifest."""
        with ExperimentLock(self.root):
            self.generate_dataset()
            self.prepare_inputs()
            self.train_ls()
            if with_l3:
                self.train_baseline_l3()
            reports = self.evaluate(include_l3=with_l3)
            self.write_manifest()
        return reports


def _predict_batches(state: NetworkState, inputs: np.ndarray,
                     aux: np.ndarray | None = None, batch: int = 16) -> np.ndarray:
    out = np.empty_like(inputs)
    for start in range(0, inputs.shape[0], batch):
        stop = min(start + batch, inputs.shape[0])
        out[start:stop] = predict(state, inputs[start:stop],
                                  aux[start:stop] if aux is not None else None)
    return out


def infer_ls(states: dict, xi: np.ndarray):
    """Run the full inference path on a batch of inputs.

    Returns (low-band, high-band, synthesized) output batches. The
    synthesizer consumes the band networks' outputs, never the raw input.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim == 2:
        xi = xi[None, None]
    lf = _predict_batches(states["L"], xi)
    hf = _predict_batches(states["H"], xi)
    fhat = _predict_batches(states["S"], lf, aux=hf)
    return lf, hf, fhat
