"""Synthetic two-subsystem plant with four injectable fault scenarios.

Two hidden square-wave steering signals drive the plant: ``a`` toggles between
a low and a high level with uniformly distributed dwell times, and ``b`` is
``a`` delayed by a fixed lag. Subsystem ``a`` observes ``a`` directly (a1),
through an underdamped second-order lag (a2) and a first-order lag (a3).
Subsystem ``b`` observes ``b`` with additive noise (b1), low-passed (b2) and
high-passed (b3).

Each window is simulated from its own counter-derived random stream, so the
dataset depends only on the config and never on generation order.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .dataset import DEFAULT_MAP, Dataset, SubsystemSignalsMap, WindowBatch

SIGNALS = DEFAULT_MAP.signals
_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}


class FaultKind(str, enum.Enum):
    HEALTHY = "healthy"
    STUCK_AT = "fault1_stuck_at"
    OFFSET = "fault2_offset"
    SHIFT = "fault3_shift"
    FREQUENCY = "fault4_frequency"

    @property
    def code(self) -> int:
        return list(FaultKind).index(self)

    @property
    def labels(self) -> dict[str, int]:
        """Ground-truth (label_a, label_b, label_all) for this scenario."""
        return dict(zip(("label_a", "label_b", "label_all"), _LABELS[self]))


_LABELS = {
    FaultKind.HEALTHY: (0, 0, 0),
    FaultKind.STUCK_AT: (1, 0, 1),
    FaultKind.OFFSET: (0, 1, 1),
    FaultKind.SHIFT: (0, 0, 1),
    FaultKind.FREQUENCY: (1, 1, 1),
}
FAULTS = (FaultKind.STUCK_AT, FaultKind.OFFSET, FaultKind.SHIFT, FaultKind.FREQUENCY)


@dataclass(frozen=True)
class CausalSignalSpec:
    low_value: float = -1.0
    high_value: float = 1.0
    min_duration: int = 500
    max_duration: int = 1000
    b_delay: int = 50

    def __post_init__(self) -> None:
        if not 0 < self.min_duration <= self.max_duration:
            raise ValueError(f"need 0 < min_duration <= max_duration, got {self.min_duration}, {self.max_duration}")
        if not 0 <= self.b_delay < self.min_duration:
            raise ValueError(f"b_delay must lie in [0, min_duration), got {self.b_delay}")


@dataclass(frozen=True)
class DerivedSignalParams:
    second_order_damping: float = 0.3
    second_order_natural_freq: float = 4.0 / (0.3 * 100.0)  # 2 % settling in ~100 steps
    first_order_tau: int = 20
    noise_sigma: float = 0.1
    lowpass_alpha: float = 0.02
    highpass_alpha: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 < self.second_order_damping < 1.0:
            raise ValueError("second_order_damping must be in (0, 1)")
        if self.second_order_natural_freq <= 0:
            raise ValueError("second_order_natural_freq must be positive")
        if self.first_order_tau < 1:
            raise ValueError("first_order_tau must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        for name in ("lowpass_alpha", "highpass_alpha"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    window_len: int = 500
    n_train_windows: int = 1000
    n_val_windows: int = 200
    n_test_per_fault: int = 100
    causal: CausalSignalSpec = field(default_factory=CausalSignalSpec)
    derived: DerivedSignalParams = field(default_factory=DerivedSignalParams)
    fault3_shift: int = 100
    stuck_value: float = -1.0
    offset_value: float = 1.0
    # "decimate": simulate 2x the window and keep every other sample (dwell
    # times and plant dynamics both run at double speed);
    # "halve_durations": only the steering dwell times are halved.
    fault4_mode: str = "decimate"

    def __post_init__(self) -> None:
        if isinstance(self.causal, dict):
            object.__setattr__(self, "causal", CausalSignalSpec(**self.causal))
        if isinstance(self.derived, dict):
            object.__setattr__(self, "derived", DerivedSignalParams(**self.derived))
        if self.window_len < 4 or self.window_len % 4:
            raise ValueError(f"window_len must be a positive multiple of 4, got {self.window_len}")
        for name in ("n_train_windows", "n_val_windows", "n_test_per_fault"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.fault3_shift < 0:
            raise ValueError("fault3_shift must be >= 0")
        if self.fault4_mode not in ("decimate", "halve_durations"):
            raise ValueError(f"unknown fault4_mode {self.fault4_mode!r}")

    @property
    def n_test_healthy(self) -> int:
        return 4 * self.n_test_per_fault

    def to_json(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ signals


def _square_wave(rng: np.random.Generator, spec: CausalSignalSpec, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Square wave and the list of its dwell durations (first/last truncated)."""
    levels = (spec.low_value, spec.high_value)
    state = int(rng.integers(2))
    out = np.empty(n_steps)
    durations = []
    pos = 0
    while pos < n_steps:
        d = int(rng.integers(spec.min_duration, spec.max_duration + 1))
        durations.append(d)
        out[pos : pos + d] = levels[state]
        pos += d
        state ^= 1
    return out, np.asarray(durations)


def delay(x: np.ndarray, lag: int) -> np.ndarray:
    """``y[t] = x[t - lag]``, left-padded with ``x[0]``."""
    if lag == 0:
        return x.copy()
    return np.concatenate([np.full(lag, x[0]), x[:-lag]])


def generate_causal(
    cfg: SimConfig, n_steps: int, rng: np.random.Generator | None = None, spec: CausalSignalSpec | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Steering signals ``(a, b)`` with ``b`` lagging ``a`` by ``b_delay`` steps."""
    if n_steps <= 0:
        raise ValueError(f"n_steps must be positive, got {n_steps}")
    spec = spec or cfg.causal
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    a, _ = _square_wave(rng, spec, n_steps)
    return a, delay(a, spec.b_delay)


def _lti(num, den, u: np.ndarray) -> np.ndarray:
    # start at the steady state of the first input sample
    zi = sps.lfilter_zi(num, den) * u[0]
    y, _ = sps.lfilter(num, den, u, zi=zi)
    return y


def second_order_response(u: np.ndarray, zeta: float, wn: float) -> np.ndarray:
    """Unit-gain underdamped second-order lag, zero-order-hold discretised (dt=1)."""
    numd, dend, _ = sps.cont2discrete(([wn**2], [1.0, 2 * zeta * wn, wn**2]), dt=1.0, method="zoh")
    return _lti(np.ravel(numd), dend, u)


def first_order_response(u: np.ndarray, tau: float) -> np.ndarray:
    p = np.exp(-1.0 / tau)
    return _lti([0.0, 1.0 - p], [1.0, -p], u)


def lowpass(x: np.ndarray, alpha: float) -> np.ndarray:
    """Single-pole smoother ``y[t] = y[t-1] + alpha * (x[t] - y[t-1])``."""
    return _lti([alpha], [1.0, alpha - 1.0], x)


def derive_signals(
    a: np.ndarray, b: np.ndarray, params: DerivedSignalParams, rng: np.random.Generator | None = None
) -> dict[str, np.ndarray]:
    """The six observed signals derived from the steering signals."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"a and b must have equal length, got {a.shape} and {b.shape}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return {
        "a1": a.copy(),
        "a2": second_order_response(a, params.second_order_damping, params.second_order_natural_freq),
        "a3": first_order_response(a, params.first_order_tau),
        "b1": b + rng.normal(0.0, params.noise_sigma, size=b.shape),
        "b2": lowpass(b, params.lowpass_alpha),
        "b3": b - lowpass(b, params.highpass_alpha),
    }


# ------------------------------------------------------------------ windows


def _simulate_window(rng: np.random.Generator, cfg: SimConfig, kind: FaultKind) -> np.ndarray:
    """One raw (unstandardised) window of shape ``(window_len, 6)``."""
    spec = cfg.causal
    speed = 1
    if kind is FaultKind.FREQUENCY:
        if cfg.fault4_mode == "decimate":
            speed = 2
        else:
            spec = replace(spec, min_duration=max(1, spec.min_duration // 2), max_duration=spec.max_duration // 2,
                           b_delay=min(spec.b_delay, max(1, spec.min_duration // 2) - 1))
    shift = cfg.fault3_shift if kind is FaultKind.SHIFT else 0
    span = cfg.window_len * speed
    # burn-in covers a full dwell time plus lags, so the window phase is random
    burn = spec.max_duration + spec.b_delay + shift + 4 * spec.max_duration // 5
    burn += int(rng.integers(spec.max_duration))
    n = burn + span
    a, b = generate_causal(cfg, n, rng=rng, spec=spec)
    sig = derive_signals(a, b, cfg.derived, rng=rng)
    start = n - span
    cols = []
    for name in SIGNALS:
        lo = start - shift if name.startswith("b") else start
        cols.append(sig[name][lo : lo + span : speed])
    return np.stack(cols, axis=1)


def _window_rng(cfg: SimConfig, split: str, kind: FaultKind, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _SPLIT_CODE[split], kind.code, index])


def simulate_windows(cfg: SimConfig, n: int, kind: FaultKind = FaultKind.HEALTHY, split: str = "train",
                     start: int = 0) -> np.ndarray:
    """``n`` raw windows, stacked ``(n, window_len, 6)``."""
    if kind is FaultKind.STUCK_AT or kind is FaultKind.OFFSET:
        base = simulate_windows(cfg, n, FaultKind.HEALTHY, split, start)
        return _post_process(base, kind, cfg)
    return np.stack([_simulate_window(_window_rng(cfg, split, kind, start + i), cfg, kind) for i in range(n)])


def _post_process(values: np.ndarray, kind: FaultKind, cfg: SimConfig) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    if kind is FaultKind.STUCK_AT:
        out[:, :, SIGNALS.index("a1")] = cfg.stuck_value
    elif kind is FaultKind.OFFSET:
        out[:, :, SIGNALS.index("b3")] += cfg.offset_value
    return out


def inject_fault(window: WindowBatch, kind: FaultKind | str, cfg: SimConfig,
                 rng: np.random.Generator | None = None) -> WindowBatch:
    """Apply a fault scenario to healthy raw windows.

    Faults 1 and 2 edit the given windows in place of a copy. Faults 3 and 4
    change the plant's timing, so their windows are re-simulated from ``rng``
    (one window per input window); the input then only fixes the count.
    """
    try:
        kind = FaultKind(kind)
    except ValueError:
        raise ValueError(f"unknown fault kind {kind!r}") from None
    if window.signals != SIGNALS:
        raise ValueError(f"expected signal order {SIGNALS}, got {window.signals}")
    if kind is FaultKind.HEALTHY:
        return window
    if kind in (FaultKind.STUCK_AT, FaultKind.OFFSET):
        return WindowBatch(_post_process(window.values, kind, cfg), window.signals, window.window_ids)
    if rng is None:
        raise ValueError(f"{kind.value} re-simulates the plant and needs an rng")
    cfg = replace(cfg, window_len=window.window_len)
    values = np.stack([_simulate_window(rng, cfg, kind) for _ in range(len(window))])
    return WindowBatch(values, window.signals, window.window_ids)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> Scaler:
        flat = values.reshape(-1, values.shape[-1])
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def build_dataset(cfg: SimConfig) -> Dataset:
    """Healthy train/val splits and a labelled, label-balanced test split.

    All splits are standardised with per-signal statistics of the raw train
    split.
    """
    train = simulate_windows(cfg, cfg.n_train_windows, split="train")
    val = simulate_windows(cfg, cfg.n_val_windows, split="val")
    blocks = [simulate_windows(cfg, cfg.n_test_healthy, FaultKind.HEALTHY, split="test")]
    kinds = [FaultKind.HEALTHY] * cfg.n_test_healthy
    for kind in FAULTS:
        blocks.append(simulate_windows(cfg, cfg.n_test_per_fault, kind, split="test"))
        kinds += [kind] * cfg.n_test_per_fault
    test = np.concatenate(blocks)

    scaler = Scaler.fit(train)
    labels = {i: {"fault_kind": k.value, **k.labels} for i, k in enumerate(kinds)}
    meta = {"sim_config": cfg.to_json(), "scaler": scaler.to_json()}
    return Dataset(
        train=WindowBatch(scaler.transform(train), SIGNALS),
        val=WindowBatch(scaler.transform(val), SIGNALS),
        test=WindowBatch(scaler.transform(test), SIGNALS),
        labels=labels,
        smap=DEFAULT_MAP,
        meta=meta,
    )


def subsystem_map() -> SubsystemSignalsMap:
    return DEFAULT_MAP
