"""Dataset generation, two-stage training and the experiment matrix.

Stage 1 trains the reconstruction network with the transmit matrix fixed.
Stage 2 starts from a pre-convergence stage-1 checkpoint and updates the
network (Adam) and the transmit matrix (momentum with decaying rate)
together, alongside a control arm that continues stage 1 with the transmit
matrix frozen.

Training frames are drawn by a pure function of ``(seed, iteration)``, so a
resumed run, a continued run and an uninterrupted run see the same frames.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from echobeam import fileio, metrics, txmodel
from echobeam.autodiff import tensor as T
from echobeam.autodiff.net import Architecture, ReconNetwork
from echobeam.autodiff.optim import OptimizerState, adam_step, momentum_decay_step
from echobeam.checkpoint import TrainState, config_hash, decode, encode, save_checkpoint
from echobeam.errors import ConfigurationError, EchobeamError, NumericalError
from echobeam.phantom import (ChannelData, make_cardiac_like_phantom, make_cyst_phantom,
                              simulate_channel_data, simulation_setup)
from echobeam.rxpipeline import ApodizationWindow, envelope, focus_arrays, scan_convert

log = logging.getLogger("echobeam.training")

RX_ONLY = "RX_ONLY"
JOINT = "JOINT"
CARDIAC = "cardiac"
CYST = "cyst"
FIXED_DAS = "Fixed Tx DAS"
LEARNED_TX_DAS = "Learned Tx DAS"
LEARNED_RX = "Learned Rx"
LEARNED_TXRX = "Learned Tx-Rx"
SETTINGS = (FIXED_DAS, LEARNED_TX_DAS, LEARNED_RX, LEARNED_TXRX)
MATRIX_CELLS = (("MLA", 7), ("MLA", 10), ("MLA", 20), ("MLT", 10), ("RANDOM", 10))

# seed offsets per split; splits stay disjoint while each holds < 10000 frames
_SPLIT_OFFSET = {"train": 0, "val": 10_000, "test": 20_000, "cyst": 30_000}
_SPLIT_STRIDE = 100_000


# Configuration ------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    simulation: dict = field(default_factory=lambda: {"preset": "small"})
    n_train: int = 48
    n_val: int = 8
    n_test: int = 16
    n_cyst: int = 16
    seed: int = 0
    apodization: str = "HANN"
    cyst_radius: float = 2.0e-3

    def __post_init__(self):
        for name in ("n_train", "n_val", "n_test", "n_cyst"):
            n = getattr(self, name)
            if not 0 <= n < 10_000:
                raise ConfigurationError(f"{name}={n} outside [0, 10000)")
        if self.n_train < 1:
            raise ConfigurationError("need at least one training frame")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    def setup(self):
        return simulation_setup(self.simulation)

    def frame_seeds(self, split: str) -> list:
        n = {"train": self.n_train, "val": self.n_val, "test": self.n_test,
             "cyst": self.n_cyst}[split]
        base = self.seed * _SPLIT_STRIDE + _SPLIT_OFFSET[split]
        return [base + k for k in range(n)]


@dataclass(frozen=True)
class TrainConfig:
    stage: str = RX_ONLY
    decimation: int = 10
    init_kind: str = "MLA"
    net_lr: float = 0.005
    tx_lr: float = 0.005
    stage1_iterations: int = 2000
    stage2_iterations: int = 2000
    batch_size: int = 1
    seed: int = 0
    validation_interval: int = 50
    preconvergence_iteration: int | None = None
    tx_momentum: float = 0.9
    tx_decay_iterations: float = 1000.0
    architecture: dict = field(default_factory=lambda: asdict(Architecture()))

    def __post_init__(self):
        if self.stage not in (RX_ONLY, JOINT):
            raise ConfigurationError(f"stage must be {RX_ONLY} or {JOINT}")
        if not self.net_lr > 0:
            raise ConfigurationError("net learning rate must be positive")
        if not self.tx_lr >= 0:
            raise ConfigurationError("tx learning rate must be non-negative")
        if self.batch_size != 1:
            raise ConfigurationError("batch size is fixed at 1")
        if self.stage1_iterations < 0 or self.stage2_iterations < 0:
            raise ConfigurationError("iteration budgets must be non-negative")
        if self.validation_interval < 1:
            raise ConfigurationError("validation interval must be >= 1")
        if not 0 <= self.preconvergence <= self.stage1_iterations:
            raise ConfigurationError(
                f"pre-convergence iteration {self.preconvergence} outside the stage-1 budget")

    @property
    def preconvergence(self) -> int:
        if self.preconvergence_iteration is not None:
            return self.preconvergence_iteration
        return int(round(0.4 * self.stage1_iterations))

    @property
    def arch(self) -> Architecture:
        return Architecture(**self.architecture)


@dataclass(frozen=True)
class CellConfig:
    """One experiment cell: dataset recipe plus training settings."""

    name: str
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {"name": self.name, "dataset": asdict(self.dataset), "train": asdict(self.train)}

    @classmethod
    def from_dict(cls, d: dict) -> "CellConfig":
        try:
            return cls(d.get("name") or _cell_name(d.get("train", {})),
                       DatasetConfig(**d.get("dataset", {})), TrainConfig(**d.get("train", {})))
        except TypeError as exc:
            raise ConfigurationError(f"bad cell config: {exc}") from None

    @classmethod
    def load(cls, path) -> "CellConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"{path}: {exc.strerror}") from None

    def hash(self) -> str:
        """Hash of everything that changes the trajectory; budgets and stage excluded."""
        t = asdict(self.train)
        for key in ("stage", "stage1_iterations", "stage2_iterations"):
            t.pop(key)
        t["preconvergence"] = self.train.preconvergence
        return config_hash({"dataset": asdict(self.dataset), "train": t})

    def with_cell(self, kind: str, decimation: int) -> "CellConfig":
        t = replace(self.train, init_kind=kind.upper(), decimation=decimation)
        return replace(self, name=_cell_name(asdict(t)), train=t)


def _cell_name(t: dict) -> str:
    return f"{t.get('decimation', 10)}-{str(t.get('init_kind', 'MLA')).upper()}"


# Dataset -------------------------------------------------------------------

@dataclass
class Frame:
    frame_id: str
    family: str
    seed: int
    data: ChannelData          # float32 SLA channel data, normalised
    reference: np.ndarray      # float64 SLA DAS envelope [L, T]
    rois: dict | None = None

    @property
    def stacked(self) -> np.ndarray:
        return np.stack([self.data.i, self.data.q]).astype(np.float64)


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    cyst: list = field(default_factory=list)

    @property
    def labels(self) -> dict:
        return {"train": CARDIAC, "val": CARDIAC, "test": CARDIAC, "cyst": CYST}

    def seeds(self, split: str) -> set:
        return {f.seed for f in getattr(self, split)}


def reference_envelope(data: ChannelData, window: ApodizationWindow) -> np.ndarray:
    """SLA delay-and-sum envelope, computed in float64."""
    fi, fq = focus_arrays(data.i, data.q, np.arange(data.transmit_count), data.geometry,
                          data.grid, window.weights)
    return envelope(fi, fq).values


def _cyst_layout(seed, geom, grid, speckle, radius):
    """Cyst centre and the two index-space ROIs for one cyst-family frame."""
    rng = np.random.default_rng([seed, 0xC457])
    lo, hi = speckle.depth_window
    r0 = rng.uniform(lo + 0.65 * (hi - lo), lo + 0.8 * (hi - lo))
    n_lines = grid.line_count
    sample_step = geom.speed_of_sound / (2.0 * geom.sample_rate)
    cyst_lines = radius / (r0 * grid.sector_step)
    roi_r = 0.6 * min(cyst_lines, radius / sample_step)
    line_c = max(roi_r + 1.0, 0.25 * (n_lines - 1))
    line_b = (n_lines - 1) - line_c
    if rng.random() < 0.5:
        line_c, line_b = line_b, line_c
    theta0 = grid.first_angle + line_c * grid.sector_step
    sample = 2.0 * r0 / geom.speed_of_sound * geom.sample_rate
    rois = {metrics.TARGET: metrics.RoiCircle(line_c, sample, roi_r, metrics.TARGET),
            metrics.BACKGROUND: metrics.RoiCircle(line_b, sample, roi_r, metrics.BACKGROUND)}
    return (r0, theta0), rois


def _setup_key(cfg: DatasetConfig, setup) -> str:
    geom, grid, pulse, speckle = setup
    return config_hash({"geometry": geom.to_dict(), "grid": grid.to_dict(),
                        "pulse": pulse.to_dict(), "speckle": speckle.to_dict(),
                        "cyst_radius": cfg.cyst_radius, "apodization": cfg.apodization})[:10]


def _simulate_frame(cfg: DatasetConfig, family, seed, setup, window, cache_dir):
    geom, grid, pulse, speckle = setup
    rois = None
    if family == CYST:
        centre, rois = _cyst_layout(seed, geom, grid, speckle, cfg.cyst_radius)
    path = Path(cache_dir) / f"{family}-{seed}-{_setup_key(cfg, setup)}.usiq" if cache_dir else None
    data = None
    if path is not None and path.exists():
        data = fileio.read_dataset(path)
        if (data.geometry.to_dict() != geom.to_dict() or data.grid.to_dict() != grid.to_dict()):
            log.warning("%s: cached frame has a different geometry, regenerating", path)
            data = None
    if data is None:
        if family == CYST:
            fld = make_cyst_phantom(speckle, centre, cfg.cyst_radius, seed=seed)
        else:
            fld = make_cardiac_like_phantom(speckle, seed)
        raw = simulate_channel_data(fld, geom, grid, pulse)
        env = reference_envelope(raw, window)
        rms = float(np.sqrt(np.mean(env * env)))
        if rms <= 0:
            raise NumericalError(f"{family} frame {seed} has an all-zero envelope")
        data = raw.scaled(1.0 / rms).astype(np.float32)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            fileio.write_dataset(data, path)
    data = ChannelData(data.i, data.q, geom, grid, "sla")
    return Frame(f"{family}-{seed}", family, seed, data, reference_envelope(data, window), rois)


def build_dataset(cfg: DatasetConfig, cache_dir=None) -> DatasetSplit:
    """Simulate (or load from ``cache_dir``) every frame of every split.

    Channel data are scaled per frame so the SLA reference envelope has unit
    RMS, then stored as float32; the reference is recomputed from the stored
    samples.
    """
    setup = cfg.setup()
    window = ApodizationWindow.make(cfg.apodization, setup[0].element_count)
    out = {}
    for split in ("train", "val", "test", "cyst"):
        family = CYST if split == "cyst" else CARDIAC
        out[split] = [_simulate_frame(cfg, family, s, setup, window, cache_dir)
                      for s in cfg.frame_seeds(split)]
    return DatasetSplit(**out)


def frame_schedule(seed: int, iteration: int, n_frames: int) -> int:
    """Index of the training frame used at ``iteration``."""
    return int(np.random.default_rng([seed, iteration]).integers(n_frames))


# Reconstruction pipeline ------------------------------------------------------

class ReconPipeline:
    """Emulate -> focus -> network -> envelope, with line padding for the network."""

    def __init__(self, geom, grid, window: ApodizationWindow, arch: Architecture,
                 dtype=np.float32):
        self.geom, self.grid, self.window = geom, grid, window
        self.dtype = np.dtype(dtype)
        self.pad = (-grid.line_count) % (2 ** arch.depth)

    def focus_graph(self, psi: T.Tensor, assignment, frame: Frame, dtype=None) -> T.Tensor:
        y = T.emulate(psi, T.const(frame.stacked))
        return T.focus(y, assignment, self.geom, self.grid, self.window.weights,
                       dtype or self.dtype)

    def focused(self, psi, assignment, frame: Frame, dtype=None) -> np.ndarray:
        return self.focus_graph(T.const(psi), assignment, frame, dtype).data

    def predict(self, net: ReconNetwork, x: T.Tensor):
        n = self.grid.line_count
        i, q = T.select(x, 0), T.select(x, 1)
        if self.pad:
            i, q = T.pad_axis(i, 0, self.pad), T.pad_axis(q, 0, self.pad)
        i, q = net(i, q)
        return T.crop_axis(i, 0, n), T.crop_axis(q, 0, n)

    def loss(self, net: ReconNetwork, x: T.Tensor, ref: np.ndarray) -> T.Tensor:
        i, q = self.predict(net, x)
        return T.l1_loss(T.envelope(i, q), ref)

    def predict_envelope(self, net: ReconNetwork, x: np.ndarray) -> np.ndarray:
        i, q = self.predict(net, T.const(x.astype(self.dtype, copy=False)))
        return T.envelope(i, q).data.astype(np.float64)


# Curves ------------------------------------------------------------------------

ARMS = ("stage1", "joint", "control")


@dataclass
class Curve:
    """Per-iteration training loss and periodic validation loss of one arm."""

    train: dict = field(default_factory=dict)
    val: dict = field(default_factory=dict)

    def segment(self, lo: int, hi: int) -> "Curve":
        return Curve({k: v for k, v in self.train.items() if lo <= k < hi},
                     {k: v for k, v in self.val.items() if lo <= k <= hi})

    def merged(self, other: "Curve") -> "Curve":
        return Curve({**self.train, **other.train}, {**self.val, **other.val})

    @property
    def final_val(self):
        return self.val[max(self.val)] if self.val else None


def write_curves(path, curves: dict) -> None:
    its = sorted(set().union(*[set(c.train) | set(c.val) for c in curves.values()]))
    names = ["iteration"]
    for arm in curves:
        names += [f"{arm}_train_L1", f"{arm}_val_L1"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for n in its:
            row = [n]
            for c in curves.values():
                row += [repr(c.train[n]) if n in c.train else "",
                        repr(c.val[n]) if n in c.val else ""]
            w.writerow(row)


def read_curves(path) -> dict:
    curves = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    arms = [n[:-len("_train_L1")] for n in names[1::2]]
    for arm in arms:
        curves[arm] = Curve()
    for row in rows[1:]:
        n = int(row[0])
        for k, arm in enumerate(arms):
            tr, va = row[1 + 2 * k], row[2 + 2 * k]
            if tr:
                curves[arm].train[n] = float(tr)
            if va:
                curves[arm].val[n] = float(va)
    return curves


# Trainer ---------------------------------------------------------------------------

@dataclass
class Best:
    iteration: int = -1
    value: float = math.inf
    blob: bytes = b""

    def offer(self, n, value, state):
        if value < self.value:
            self.iteration, self.value, self.blob = n, value, encode(state)

    @property
    def state(self) -> TrainState:
        return decode(self.blob)


@dataclass
class StageResult:
    state: TrainState
    curve: Curve
    best: Best
    snapshots: dict = field(default_factory=dict)   # save-point name -> encoded state


def clone(state: TrainState) -> TrainState:
    return decode(encode(state))


class Trainer:
    def __init__(self, cell: CellConfig, split: DatasetSplit):
        self.cell = cell
        self.cfg = cell.train
        self.split = split
        self.geom, self.grid, self.pulse, _ = cell.dataset.setup()
        self.window = ApodizationWindow.make(cell.dataset.apodization, self.geom.element_count)
        self.arch = self.cfg.arch
        self.pipe = ReconPipeline(self.geom, self.grid, self.window, self.arch)
        self.initial_scheme = txmodel.make_scheme(self.cfg.init_kind, self.grid.line_count,
                                                  self.cfg.decimation, self.cfg.seed)
        self.hash = cell.hash()
        self._focus_cache = {}

    # -- state -------------------------------------------------------------------------
    def initial_state(self) -> TrainState:
        net = ReconNetwork.create(self.arch, self.cfg.seed, self.pipe.dtype)
        opt = OptimizerState.adam([p.data for p in net.parameters()], lr=self.cfg.net_lr)
        return TrainState(net, self.initial_scheme.copy(), opt, None, 0, RX_ONLY)

    def joint_state(self, start: TrainState) -> TrainState:
        st = clone(start)
        st.stage = JOINT
        st.scheme.trainable = True
        st.opt_tx = OptimizerState.momentum_decay([st.scheme.psi], lr=self.cfg.tx_lr,
                                                  momentum=self.cfg.tx_momentum,
                                                  n_half=self.cfg.tx_decay_iterations)
        return st

    # -- data ---------------------------------------------------------------------------
    def focused(self, psi, frame: Frame) -> np.ndarray:
        key = (hashlib.sha1(np.ascontiguousarray(psi).tobytes()).hexdigest(), frame.frame_id)
        hit = self._focus_cache.get(key)
        if hit is None:
            hit = self.pipe.focused(psi, self.initial_scheme.assignment, frame)
            self._focus_cache[key] = hit
        return hit

    def _ref(self, frame):
        return frame.reference.astype(self.pipe.dtype)

    def validate(self, state: TrainState) -> float:
        if not self.split.val:
            return float("nan")
        vals = []
        for fr in self.split.val:
            x = T.const(self.focused(state.scheme.psi, fr))
            vals.append(float(self.pipe.loss(state.net, x, self._ref(fr)).data))
        return float(np.mean(vals))

    # -- one update --------------------------------------------------------------------
    def _fail(self, n, what):
        raise NumericalError(f"{what} at iteration {n}; config: "
                             f"{json.dumps(self.cell.to_dict(), sort_keys=True)}")

    def step(self, state: TrainState, n: int, joint: bool, tx_start: int = 0) -> float:
        frame = self.split.train[frame_schedule(self.cfg.seed, n, len(self.split.train))]
        params = state.net.parameters()
        for p in params:
            p.zero_grad()
        if joint:
            psi = T.param(state.scheme.psi, "psi")
            x = self.pipe.focus_graph(psi, state.scheme.assignment, frame)
        else:
            x = T.const(self.focused(state.scheme.psi, frame))
        loss = self.pipe.loss(state.net, x, self._ref(frame))
        value = float(loss.data)
        if not math.isfinite(value):
            self._fail(n, "non-finite loss")
        loss.backward()
        try:
            adam_step(state.opt_net, [p.data for p in params], [p.grad for p in params], n)
            if joint:
                momentum_decay_step(state.opt_tx, [state.scheme.psi], [psi.grad], n - tx_start)
        except NumericalError:
            self._fail(n, "non-finite gradient")
        state.iteration = n + 1
        return value

    def run(self, state: TrainState, stop: int, joint: bool = False, tx_start: int = 0,
            save_at=None, ckpt_dir=None, best_from: int | None = None) -> StageResult:
        """Advance ``state`` to iteration ``stop``, validating every interval.

        ``save_at`` maps iterations to checkpoint names; the states are kept
        encoded in the result and also written to ``ckpt_dir`` when given.
        The best-validation state is tracked over validation points at or
        after ``best_from`` (default: the starting iteration).
        """
        save_at = save_at or {}
        curve, best, snaps = Curve(), Best(), {}
        start = n = state.iteration
        best_from = start if best_from is None else best_from
        vi = self.cfg.validation_interval
        while True:
            if n % vi == 0 or n == stop or n == start:
                v = self.validate(state)
                curve.val[n] = v
                if n >= best_from:
                    best.offer(n, v, state)
                log.info("%s %s it %d val L1 %.6f", self.cell.name,
                         "joint" if joint else "rx", n, v)
            if n in save_at:
                snaps[save_at[n]] = encode(state)
                if ckpt_dir is not None:
                    save_checkpoint(Path(ckpt_dir) / f"{save_at[n]}.ckpt", state, self.hash)
            if n >= stop:
                break
            curve.train[n] = self.step(state, n, joint, tx_start)
            n += 1
        return StageResult(state, curve, best, snaps)

    # -- stages ------------------------------------------------------------------------
    def train_stage1(self, ckpt_dir=None, state: TrainState | None = None) -> StageResult:
        cfg = self.cfg
        state = state or self.initial_state()
        save = {cfg.preconvergence: "stage1_pre", cfg.stage1_iterations: "stage1_final"}
        res = self.run(state, cfg.stage1_iterations, save_at=save, ckpt_dir=ckpt_dir,
                       best_from=0)
        if ckpt_dir is not None and res.best.blob:
            save_checkpoint(Path(ckpt_dir) / "stage1_best.ckpt", res.best.state, self.hash)
        return res

    def train_stage2_joint(self, start: TrainState, stage1: StageResult | None = None,
                           ckpt_dir=None):
        """Joint arm and frozen control arm from the pre-convergence checkpoint.

        When a stage-1 result is passed, the control arm reuses its trajectory
        after the pre-convergence point (it is the same computation) and only
        continues it past the end of stage 1.
        """
        p0 = start.iteration
        stop = p0 + self.cfg.stage2_iterations
        joint = self.run(self.joint_state(start), stop, joint=True, tx_start=p0,
                         save_at={stop: "joint_final"}, ckpt_dir=ckpt_dir)
        if ckpt_dir is not None and joint.best.blob:
            save_checkpoint(Path(ckpt_dir) / "joint_best.ckpt", joint.best.state, self.hash)
        if stage1 is not None and stage1.state.iteration <= stop and p0 in stage1.curve.val:
            head = stage1.curve.segment(p0, stage1.state.iteration)
            tail = self.run(clone(stage1.state), stop, save_at={stop: "control_final"},
                            ckpt_dir=ckpt_dir)
            control = StageResult(tail.state, head.merged(tail.curve), tail.best, tail.snapshots)
        else:
            control = self.run(clone(start), stop, save_at={stop: "control_final"},
                               ckpt_dir=ckpt_dir)
        return joint, control

    # -- evaluation ----------------------------------------------------------------------
    def evaluate(self, frames, models: dict, family: str) -> list:
        """``models`` maps setting name -> ``(network or None, psi)``."""
        reports = []
        for setting, (net, psi) in models.items():
            rep = metrics.MetricsReport(setting)
            for fr in frames:
                if net is None:
                    x = self.pipe.focused(psi, self.initial_scheme.assignment, fr, np.float64)
                    env = envelope(x[0], x[1]).values
                else:
                    env = self.pipe.predict_envelope(net, self.focused(psi, fr))
                rep.add(metrics.frame_metrics(fr.frame_id, env, fr.reference, fr.rois))
            if frames and frames[0].rois:
                rep.roi = {k: v.to_dict() for k, v in frames[0].rois.items()}
                rep.roi["per_frame"] = {fr.frame_id: {k: v.to_dict() for k, v in fr.rois.items()}
                                        for fr in frames}
            rep_d = rep.to_dict()
            rep_d["family"] = family
            reports.append(rep_d)
        return reports

    def envelopes(self, frame: Frame, models: dict) -> dict:
        out = {}
        for setting, (net, psi) in models.items():
            if net is None:
                x = self.pipe.focused(psi, self.initial_scheme.assignment, frame, np.float64)
                out[setting] = envelope(x[0], x[1]).values
            else:
                out[setting] = self.pipe.predict_envelope(net, self.focused(psi, frame))
        return out


# Experiment cells ----------------------------------------------------------------------

@dataclass
class CellResult:
    name: str
    curves: dict
    reports: list
    models: dict
    psi_change: float | None = None
    status: str = "ok"
    error: str | None = None

    def mean(self, setting: str, family: str = CARDIAC, key: str = "psnr"):
        for r in self.reports:
            if r["setting"] == setting and r["family"] == family:
                return r["mean"][key]
        return None


def _slug(setting: str) -> str:
    return setting.lower().replace(" ", "_").replace("-", "_")


def write_images(out_dir, trainer: Trainer, frame: Frame, models: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geom, grid = trainer.geom, trainer.grid
    height = 256
    half = max(abs(grid.line_angles[0]), abs(grid.line_angles[-1]))
    width = max(32, int(round(height * 2.0 * math.sin(half))))
    ref_disp = metrics.display_image(frame.reference).astype(np.float64)

    def emit(name, polar):
        fileio.write_pgm(scan_convert(polar, grid, geom, (width, height)), out_dir / f"{name}.pgm")

    emit("reference", ref_disp)
    for setting, env in trainer.envelopes(frame, models).items():
        disp = metrics.display_image(env).astype(np.float64)
        emit(_slug(setting), disp)
        emit("diff_" + _slug(setting), metrics.difference_image(disp, ref_disp))


def run_cell(cell: CellConfig, split: DatasetSplit, out_dir=None) -> CellResult:
    """Stage 1, stage 2 (joint + control) and evaluation of one cell.

    Settings whose training budget is zero are left out of the tables, so a
    zero-iteration cell reports the DAS baseline only.
    """
    tr = Trainer(cell, split)
    cfg = tr.cfg
    out = Path(out_dir) if out_dir is not None else None
    ckpt = out / "checkpoints" if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cell.to_dict(), indent=2, sort_keys=True))
    psi0 = tr.initial_scheme.psi
    models = {FIXED_DAS: (None, psi0)}
    curves = {}
    psi_change = None
    if cfg.stage1_iterations > 0:
        s1 = tr.train_stage1(ckpt)
        curves["stage1"] = s1.curve
        rx = s1.best.state
        models[LEARNED_RX] = (rx.net, psi0)
        if cfg.stage2_iterations > 0:
            pre = decode(s1.snapshots["stage1_pre"])
            joint, control = tr.train_stage2_joint(pre, s1, ckpt)
            curves["joint"], curves["control"] = joint.curve, control.curve
            jb = joint.best.state
            models[LEARNED_TX_DAS] = (None, jb.scheme.psi)
            models[LEARNED_TXRX] = (jb.net, jb.scheme.psi)
            psi_change = float(np.linalg.norm(joint.state.scheme.psi - psi0))
    order = [s for s in SETTINGS if s in models]
    models = {s: models[s] for s in order}
    reports = tr.evaluate(split.test, models, CARDIAC) + tr.evaluate(split.cyst, models, CYST)
    result = CellResult(cell.name, curves, reports, models, psi_change)
    if out is not None:
        write_cell_outputs(out, tr, result, split)
    return result


def write_cell_outputs(out: Path, tr: Trainer, result: CellResult, split: DatasetSplit) -> None:
    if result.curves:
        write_curves(out / "curves.csv", result.curves)
    doc = {"cell": result.name, "psi_change": result.psi_change, "reports": result.reports}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    theta = np.linspace(tr.grid.line_angles[0] - 3 * tr.pulse.tx_beam_sigma,
                        tr.grid.line_angles[-1] + 3 * tr.pulse.tx_beam_sigma, 256)
    profiles = {"initial": txmodel.effective_beam_profile(tr.initial_scheme, tr.pulse, tr.grid,
                                                          theta)}
    if LEARNED_TXRX in result.models:
        learned = tr.initial_scheme.copy(result.models[LEARNED_TXRX][1])
        profiles["learned"] = txmodel.effective_beam_profile(learned, tr.pulse, tr.grid, theta)
    txmodel.write_beam_profiles(out / "beam_profiles.csv", theta, profiles)
    for family, frames in ((CARDIAC, split.test), (CYST, split.cyst)):
        if frames:
            write_images(out / "images" / family, tr, frames[0], result.models)


def run_experiment_matrix(base: CellConfig, out_root=None, cells=MATRIX_CELLS,
                          split: DatasetSplit | None = None, cache_dir=None) -> dict:
    """Run every ``(init kind, decimation)`` cell on one shared dataset.

    A failing cell is recorded (and written to ``<cell>/error.txt``) and the
    matrix continues.
    """
    split = split or build_dataset(base.dataset, cache_dir)
    results = {}
    for kind, dec in cells:
        cell = base.with_cell(kind, dec)
        out = Path(out_root) / cell.name if out_root is not None else None
        try:
            results[cell.name] = run_cell(cell, split, out)
        except EchobeamError as exc:
            log.error("cell %s failed: %s", cell.name, exc)
            results[cell.name] = CellResult(cell.name, {}, [], {}, status="failed",
                                            error=str(exc))
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                (out / "error.txt").write_text(str(exc) + "\n")
    return results
