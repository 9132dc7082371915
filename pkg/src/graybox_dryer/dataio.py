"""Process data: schema, cleaning, unit conversion, chronological splits and
the synthetic truth plant used in place of historian data.

A :class:`Dataset` is an ordered list of batches; each batch is a
``pandas.DataFrame`` with the canonical boundary-unit columns in
:data:`COLUMNS`. Timestamps ``t`` are absolute seconds and increase across
batches, so chronological order is list order followed by row order.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import pbm
from .errors import ConfigError, DomainError, SchemaError
from .props import MaterialParams, T_ZERO_C, _p_sat

log = logging.getLogger(__name__)

U_COLS = ("T_hot_C", "feed_kgph")
D_COLS = ("Xin_wb_pct", "Tair_C", "RH", "w", "flow_kgph")
Y_COLS = ("y_moist_wb_pct", "y_temp_C")
COLUMNS = ("t",) + U_COLS + D_COLS + Y_COLS

MIN_MOIST_WB_PCT = 11.0
MIN_TEMP_C = 50.0
MIN_FLOW_KGPH = 5800.0


@dataclass
class Dataset:
    """Ordered batches of boundary-unit samples plus bookkeeping.

    ``batch_ids`` label where each segment came from (a batch cut by the
    train/test boundary appears in both halves under the same id).
    """

    batches: list
    batch_ids: list = None
    rejected: dict = field(default_factory=dict)
    calib_index: np.ndarray | None = None

    def __post_init__(self):
        if self.batch_ids is None:
            self.batch_ids = list(range(len(self.batches)))
        for b in self.batches:
            check_schema(b)

    def __len__(self):
        return int(sum(len(b) for b in self.batches))

    def concat(self) -> pd.DataFrame:
        if not self.batches:
            return pd.DataFrame({c: pd.Series(dtype=float) for c in COLUMNS})
        return pd.concat(self.batches, ignore_index=True)

    def segment_lengths(self) -> list:
        return [len(b) for b in self.batches]

    def columns(self, cols) -> np.ndarray:
        return self.concat()[list(cols)].to_numpy(dtype=float)


def check_schema(df: pd.DataFrame):
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns: {missing}")


# --------------------------------------------------------------------------
# Cleaning / conversion / splitting

def _clean_masks(df: pd.DataFrame) -> dict:
    return {
        "moisture_below_11pct": df["y_moist_wb_pct"].to_numpy() < MIN_MOIST_WB_PCT,
        "temperature_below_50C": df["y_temp_C"].to_numpy() < MIN_TEMP_C,
        "flow_below_5800kgph": df["flow_kgph"].to_numpy() < MIN_FLOW_KGPH,
    }


def clean(raw: Dataset) -> Dataset:
    """Keep samples with outlet moisture >= 11 %wb, outlet temperature >= 50 C
    and upstream flow >= 5800 kg/h (all bounds inclusive).

    ``rejected`` counts failures per rule (a sample can fail several) and the
    total number of dropped rows.
    """
    counts = {"moisture_below_11pct": 0, "temperature_below_50C": 0,
              "flow_below_5800kgph": 0, "total": 0}
    out, ids = [], []
    for bid, df in zip(raw.batch_ids, raw.batches):
        check_schema(df)
        masks = _clean_masks(df)
        bad = np.zeros(len(df), dtype=bool)
        for rule, m in masks.items():
            counts[rule] += int(m.sum())
            bad |= m
        counts["total"] += int(bad.sum())
        kept = df.loc[~bad].reset_index(drop=True)
        if len(kept):
            out.append(kept)
            ids.append(bid)
    log.info("clean: kept %d of %d samples (%s)", sum(map(len, out)), len(raw), counts)
    return Dataset(out, ids, rejected=counts)


def wb_to_db(x_wb):
    """Wet-basis fraction -> dry-basis ratio."""
    x_wb = np.asarray(x_wb, dtype=float)
    if np.any(x_wb >= 1) or np.any(x_wb < 0):
        raise DomainError("wet-basis moisture fraction must lie in [0, 1)")
    return x_wb / (1.0 - x_wb)


def db_to_wb(x_db):
    x_db = np.asarray(x_db, dtype=float)
    return x_db / (1.0 + x_db)


INTERNAL_COLS = ("t", "T_hot_K", "feed_kgps", "Xin_db", "Tair_K", "RH", "w", "flow_kgps",
                 "y_X_db", "y_T_K")


_TO_INTERNAL = {
    "t": ("t", lambda v: v),
    "T_hot_C": ("T_hot_K", lambda v: v + T_ZERO_C),
    "feed_kgph": ("feed_kgps", lambda v: v / 3600.0),
    "Xin_wb_pct": ("Xin_db", lambda v: wb_to_db(v / 100.0)),
    "Tair_C": ("Tair_K", lambda v: v + T_ZERO_C),
    "RH": ("RH", lambda v: v),
    "w": ("w", lambda v: v),
    "flow_kgph": ("flow_kgps", lambda v: v / 3600.0),
    "y_moist_wb_pct": ("y_X_db", lambda v: wb_to_db(v / 100.0)),
    "y_temp_C": ("y_T_K", lambda v: v + T_ZERO_C),
}

_TO_BOUNDARY = {
    "t": ("t", lambda v: v),
    "T_hot_K": ("T_hot_C", lambda v: v - T_ZERO_C),
    "feed_kgps": ("feed_kgph", lambda v: v * 3600.0),
    "Xin_db": ("Xin_wb_pct", lambda v: 100.0 * db_to_wb(v)),
    "Tair_K": ("Tair_C", lambda v: v - T_ZERO_C),
    "RH": ("RH", lambda v: v),
    "w": ("w", lambda v: v),
    "flow_kgps": ("flow_kgph", lambda v: v * 3600.0),
    "y_X_db": ("y_moist_wb_pct", lambda v: 100.0 * db_to_wb(v)),
    "y_T_K": ("y_temp_C", lambda v: v - T_ZERO_C),
}


def _map_columns(s, table):
    keys = [k for k in table if k in s]
    out = {table[k][0]: table[k][1](np.asarray(s[k], dtype=float)) for k in keys}
    if isinstance(s, pd.DataFrame):
        return pd.DataFrame(out, index=s.index)
    if isinstance(s, pd.Series):
        return pd.Series({k: float(v) for k, v in out.items()})
    return {k: (float(v) if np.ndim(v) == 0 else v) for k, v in out.items()}


def convert_units(s):
    """Boundary units -> model units.

    kg/h -> kg/s, C -> K, wet-basis percent -> dry-basis ratio. Accepts a
    DataFrame, a ``pandas.Series`` or a mapping keyed by canonical column
    names and returns the same kind of object keyed by :data:`INTERNAL_COLS`.
    Only the columns present are converted.
    """
    return _map_columns(s, _TO_INTERNAL)


def to_boundary_units(s):
    """Inverse of :func:`convert_units`."""
    return _map_columns(s, _TO_BOUNDARY)


def split(ds: Dataset, train_frac: float = 0.7):
    """Chronological split: the first ``train_frac`` of samples go to train.

    A batch cut by the boundary contributes its head to train and its tail to
    test. Nothing is shuffled.
    """
    if len(ds) == 0:
        raise DomainError("split: empty dataset")
    if not 0.0 < train_frac <= 1.0:
        raise DomainError("split: train_frac must lie in (0, 1]")
    n_train = int(np.floor(train_frac * len(ds) + 1e-9))
    train, test, tr_ids, te_ids = [], [], [], []
    seen = 0
    for bid, df in zip(ds.batch_ids, ds.batches):
        k = min(max(n_train - seen, 0), len(df))
        if k > 0:
            train.append(df.iloc[:k].reset_index(drop=True))
            tr_ids.append(bid)
        if k < len(df):
            test.append(df.iloc[k:].reset_index(drop=True))
            te_ids.append(bid)
        seen += len(df)
    if not test:
        warnings.warn("split: test set is empty", stacklevel=2)
    return Dataset(train, tr_ids), Dataset(test, te_ids)


def calibration_subset(train: Dataset, stride: int = 10, max_points: int = 300) -> Dataset:
    """Every ``stride``-th training sample, truncated to the first ``max_points``.

    The selected global indices are stored in ``calib_index``.
    """
    if len(train) == 0:
        raise DomainError("calibration_subset: empty training set")
    idx = np.arange(0, len(train), stride)[:max_points]
    df = train.concat().iloc[idx].reset_index(drop=True)
    return Dataset([df], [0], calib_index=idx)


# --------------------------------------------------------------------------
# CSV interchange

def write_batch_csv(df: pd.DataFrame, path):
    check_schema(df)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    df.loc[:, list(COLUMNS)].to_csv(tmp, index=False, float_format="%.17g", encoding="utf-8")
    tmp.replace(path)


def read_batch_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    check_schema(df)
    return df.loc[:, list(COLUMNS)].astype(float)


def save_dataset(ds: Dataset, directory, prefix: str = "batch") -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for bid, df in zip(ds.batch_ids, ds.batches):
        p = directory / f"{prefix}_{int(bid):03d}.csv"
        write_batch_csv(df, p)
        paths.append(p)
    return paths


def load_dataset(directory, prefix: str = "batch") -> Dataset:
    paths = sorted(Path(directory).glob(f"{prefix}_*.csv"))
    if not paths:
        raise SchemaError(f"no {prefix}_*.csv files in {directory}")
    ids = [int(p.stem.split("_")[-1]) for p in paths]
    return Dataset([read_batch_csv(p) for p in paths], ids)


# --------------------------------------------------------------------------
# Synthetic truth plant

@dataclass(frozen=True)
class ScenarioSpec:
    """Operating envelope and plant-model mismatch for synthetic data.

    Ranges are in boundary units. ``h_factor``, ``k_factor`` and
    ``xe1_factor`` scale the true plant's ``h_HDT``, ``k_HDT`` and
    ``theta_xe1`` relative to the model priors.
    """

    n_batches: int = 10
    samples_per_batch: int = 6300
    sample_time: float = 1.0
    batch_gap: float = 3600.0
    T_hot_range: tuple = (120.0, 180.0)
    T_hot_center: float = 160.0
    feed_range: tuple = (6000.0, 7200.0)
    Xin_range: tuple = (18.0, 24.0)
    Tair_range: tuple = (26.0, 34.0)
    RH_range: tuple = (0.25, 0.55)
    w_recirc_range: tuple = (0.004, 0.012)
    flow_ratio_range: tuple = (1.0, 1.06)
    walk_tau: float = 600.0
    step_rate: float = 1.0 / 900.0
    h_factor: float = 1.15
    k_factor: float = 0.88
    xe1_factor: float = 1.3
    fouling: bool = True
    fouling_max: float = 0.25
    fouling_tau: float = 2500.0
    actuator_tau: float = 6.0
    noise_phi: float = 0.9
    noise_std_moist: float = 0.02
    noise_std_temp: float = 0.05

    def __post_init__(self):
        if self.n_batches < 1 or self.samples_per_batch < 2:
            raise ConfigError("scenario needs >= 1 batch of >= 2 samples")
        for name in ("T_hot_range", "feed_range", "Xin_range", "Tair_range", "RH_range",
                     "w_recirc_range", "flow_ratio_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"scenario.{name}: lower bound exceeds upper bound")
        if not 0 <= self.RH_range[0] and self.RH_range[1] < 1:
            raise ConfigError("scenario.RH_range must lie in [0, 1)")
        if not self.Xin_range[1] < 100:
            raise ConfigError("scenario.Xin_range must be below 100 %")
        if not -1 < self.noise_phi < 1:
            raise ConfigError("scenario.noise_phi must lie in (-1, 1)")
        if self.sample_time <= 0 or self.walk_tau <= 0 or self.fouling_tau <= 0:
            raise ConfigError("scenario time constants must be > 0")
        if self.actuator_tau < 0 or self.noise_std_moist < 0 or self.noise_std_temp < 0:
            raise ConfigError("scenario actuator_tau and noise levels must be >= 0")

    def ideal(self) -> "ScenarioSpec":
        """Same inputs, but a plant identical to the model (no noise, lag,
        fouling or parameter mismatch)."""
        return replace(self, h_factor=1.0, k_factor=1.0, xe1_factor=1.0, fouling=False,
                       actuator_tau=0.0, noise_std_moist=0.0, noise_std_temp=0.0)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


@dataclass(frozen=True)
class TruthParams:
    """Hidden plant description; kept apart from the model-facing dataset."""

    h_HDT: float
    k_HDT: float
    theta_xe1: float
    fouling_depth: tuple
    fouling_tau: float
    actuator_tau: float
    noise_phi: float
    noise_std: tuple
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fouling_depth"] = list(self.fouling_depth)
        d["noise_std"] = list(self.noise_std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TruthParams":
        kw = dict(d)
        kw["fouling_depth"] = tuple(kw["fouling_depth"])
        kw["noise_std"] = tuple(kw["noise_std"])
        return cls(**kw)


def _walk(rng, n, lo, hi, center, tau, step_rate, dt):
    """Band-limited mean-reverting walk plus occasional level steps, kept in [lo, hi]."""
    span = hi - lo
    if span == 0:
        return np.full(n, float(lo))
    a = np.exp(-dt / tau)
    sigma = 0.18 * span * np.sqrt(1 - a * a)
    eps = rng.standard_normal(n)
    steps = rng.random(n) < step_rate * dt
    jumps = rng.uniform(-0.25, 0.25, n) * span
    x = np.empty(n)
    level = center
    v = center + rng.uniform(-0.15, 0.15) * span
    for i in range(n):
        if steps[i]:
            level = np.clip(level + jumps[i], lo + 0.1 * span, hi - 0.1 * span)
        v = level + a * (v - level) + sigma * eps[i]
        v = min(max(v, lo), hi)
        x[i] = v
    # second-order smoothing keeps the spectrum band-limited
    y = np.empty(n)
    acc = x[0]
    b = np.exp(-dt / 5.0)
    for i in range(n):
        acc = b * acc + (1 - b) * x[i]
        y[i] = acc
    return y


def first_order_lag(u, tau, dt, y0=None):
    """Discrete first-order lag (exact for piecewise-constant input)."""
    u = np.asarray(u, dtype=float)
    if tau <= 0:
        return u.copy()
    a = np.exp(-dt / tau)
    y = np.empty_like(u)
    prev = u[0] if y0 is None else y0
    for i in range(len(u)):
        prev = a * prev + (1 - a) * u[i]
        y[i] = prev
    return y


def fouling_factor(t_since_start, depth, tau):
    """Multiplicative loss of HDT heat transfer, first order in time."""
    return 1.0 - depth * (-np.expm1(-np.asarray(t_since_start, dtype=float) / tau))


def ar1(rng, n, phi, std):
    """Stationary AR(1) with marginal standard deviation ``std``."""
    if std == 0:
        return np.zeros(n)
    e = rng.standard_normal(n) * std * np.sqrt(1 - phi * phi)
    x = np.empty(n)
    prev = rng.standard_normal() * std
    for i in range(n):
        prev = phi * prev + e[i]
        x[i] = prev
    return x


def humidity_ratio(T_air_C, RH, P=pbm.P_ATM):
    pv = RH * _p_sat(np.asarray(T_air_C, dtype=float) + T_ZERO_C)
    return 0.622 * pv / (P - pv)


def truth_parameters(scn: ScenarioSpec, cfg: pbm.SectionConfig, p: MaterialParams, seed: int,
                     depths=None) -> TruthParams:
    if depths is None:
        depths = tuple([0.0] * scn.n_batches)
    return TruthParams(
        h_HDT=float(cfg.hdt.h_HDT * scn.h_factor),
        k_HDT=float(cfg.hdt.k_HDT * scn.k_factor),
        theta_xe1=float(p.theta_xe1 * scn.xe1_factor),
        fouling_depth=tuple(float(d) for d in depths),
        fouling_tau=scn.fouling_tau,
        actuator_tau=scn.actuator_tau,
        noise_phi=scn.noise_phi,
        noise_std=(scn.noise_std_moist, scn.noise_std_temp),
        seed=int(seed),
    )


def truth_outputs(frame: pd.DataFrame, T_hot_actual_C, h_multiplier, truth: TruthParams,
                  cfg: pbm.SectionConfig, p: MaterialParams) -> np.ndarray:
    """Noise-free plant outputs ``[moist %wb, temp C]`` for boundary-unit inputs.

    ``T_hot_actual_C`` replaces the commanded hot-air temperature and
    ``h_multiplier`` scales ``h_HDT`` per sample (fouling).
    """
    tcfg = cfg.with_hdt(h_HDT=truth.h_HDT * np.asarray(h_multiplier, dtype=float),
                        k_HDT=truth.k_HDT)
    tp = replace(p, theta_xe1=truth.theta_xe1)
    f = frame.copy()
    f["T_hot_C"] = T_hot_actual_C
    x = convert_units(f)
    res = pbm.simulate_inputs(x["T_hot_K"].to_numpy(), x["feed_kgps"].to_numpy(),
                              x["Xin_db"].to_numpy(), x["Tair_K"].to_numpy(),
                              x["RH"].to_numpy(), x["w"].to_numpy(), tcfg, tp)
    return res.outputs


def gen_inputs(scn: ScenarioSpec, rng) -> list:
    """Exogenous input/disturbance frames (boundary units, no outputs yet)."""
    n, dt = scn.samples_per_batch, scn.sample_time
    frames = []
    for b in range(scn.n_batches):
        t0 = b * (n * dt + scn.batch_gap)
        walk = lambda rng_, rng_pair, center=None: _walk(
            rng_, n, rng_pair[0], rng_pair[1],
            0.5 * (rng_pair[0] + rng_pair[1]) if center is None else center,
            scn.walk_tau, scn.step_rate, dt)
        T_hot = walk(rng, scn.T_hot_range, scn.T_hot_center)
        feed = walk(rng, scn.feed_range)
        Xin = walk(rng, scn.Xin_range)
        Tair = walk(rng, scn.Tair_range)
        RH = walk(rng, scn.RH_range)
        w_rec = walk(rng, scn.w_recirc_range)
        ratio = walk(rng, scn.flow_ratio_range)
        frames.append(pd.DataFrame({
            "t": t0 + dt * np.arange(n),
            "T_hot_C": T_hot,
            "feed_kgph": feed,
            "Xin_wb_pct": Xin,
            "Tair_C": Tair,
            "RH": RH,
            "w": humidity_ratio(Tair, RH) + w_rec,
            "flow_kgph": feed * ratio,
        }))
    return frames


def gen_synthetic(scenario: ScenarioSpec = ScenarioSpec(), seed: int = 0,
                  cfg: pbm.SectionConfig = pbm.SectionConfig(),
                  p: MaterialParams = MaterialParams()):
    """Generate a synthetic dataset from the truth plant.

    Returns ``(dataset, truth)``; ``truth`` holds the hidden plant parameters
    and must not be fed to the model side.
    """
    rng = np.random.default_rng(seed)
    frames = gen_inputs(scenario, rng)
    depths = tuple(scenario.fouling_max * rng.uniform(0.6, 1.0, scenario.n_batches)
                   if scenario.fouling else np.zeros(scenario.n_batches))
    truth = truth_parameters(scenario, cfg, p, seed, depths)
    n, dt = scenario.samples_per_batch, scenario.sample_time
    lagged = [first_order_lag(f["T_hot_C"].to_numpy(), scenario.actuator_tau, dt) for f in frames]
    mult = [fouling_factor(dt * np.arange(n), d, scenario.fouling_tau) for d in depths]
    big = pd.concat(frames, ignore_index=True)
    y = truth_outputs(big, np.concatenate(lagged), np.concatenate(mult), truth, cfg, p)
    batches = []
    for b, f in enumerate(frames):
        yb = y[b * n:(b + 1) * n]
        f = f.copy()
        f["y_moist_wb_pct"] = yb[:, 0] + ar1(rng, n, scenario.noise_phi, scenario.noise_std_moist)
        f["y_temp_C"] = yb[:, 1] + ar1(rng, n, scenario.noise_phi, scenario.noise_std_temp)
        batches.append(f.loc[:, list(COLUMNS)])
    return Dataset(batches), truth


class TruthPlant:
    """Step-by-step version of the synthetic plant for closed-loop runs.

    The plant applies actuator lag to the commanded hot-air temperature,
    fouling to ``h_HDT`` and AR(1) noise to the measured outputs. Chain
    evaluations are exposed as a request/observe pair so a caller can batch
    several plant and model evaluations into one vectorised simulation.
    """

    def __init__(self, truth: TruthParams, cfg: pbm.SectionConfig = pbm.SectionConfig(),
                 p: MaterialParams = MaterialParams(), sample_time: float = 1.0,
                 fouling_depth: float = 0.0, t_start: float = 0.0, seed: int = 0,
                 T_hot0: float | None = None):
        self.truth = truth
        self.cfg = cfg
        self.p = p
        self.dt = sample_time
        self.depth = fouling_depth
        self.t = t_start
        self.rng = np.random.default_rng(seed)
        self.T_hot_act = T_hot0
        std = truth.noise_std
        self.noise = np.array([self.rng.standard_normal() * s for s in std])
        self._pending = None

    def request(self, u, d) -> dict:
        """Advance actuator/fouling states for command ``u`` under true
        disturbances ``d``; return the chain inputs to evaluate.

        ``u = (T_hot_C, feed_kgph)``; ``d = (Xin_wb_pct, Tair_C, RH, w, flow_kgph)``.
        """
        T_cmd = float(u[0])
        if self.T_hot_act is None:
            self.T_hot_act = T_cmd
        tau = self.truth.actuator_tau
        a = np.exp(-self.dt / tau) if tau > 0 else 0.0
        self.T_hot_act = a * self.T_hot_act + (1 - a) * T_cmd
        mult = float(fouling_factor(self.t, self.depth, self.truth.fouling_tau))
        self.t += self.dt
        row = {"t": self.t, "T_hot_C": self.T_hot_act, "feed_kgph": float(u[1])}
        row.update(dict(zip(D_COLS, map(float, d))))
        x = convert_units(row)
        req = {
            "T_hot_K": x["T_hot_K"], "feed_kgps": x["feed_kgps"], "Xin_db": x["Xin_db"],
            "Tair_K": x["Tair_K"], "RH": x["RH"], "w": x["w"],
            "h_HDT": self.truth.h_HDT * mult, "k_HDT": self.truth.k_HDT,
            "theta_xe1": self.truth.theta_xe1,
        }
        self._pending = True
        return req

    def observe(self, y_clean) -> np.ndarray:
        """Add sensor noise to the noise-free outputs of the pending request."""
        if not self._pending:
            raise RuntimeError("observe() called without a pending request()")
        self._pending = False
        phi = self.truth.noise_phi
        std = np.asarray(self.truth.noise_std)
        self.noise = phi * self.noise + std * np.sqrt(1 - phi * phi) * self.rng.standard_normal(2)
        return np.asarray(y_clean, dtype=float) + self.noise

    def step(self, u, d) -> np.ndarray:
        req = self.request(u, d)
        y = evaluate_requests([req], self.cfg, self.p)[0]
        return self.observe(y)


def evaluate_requests(reqs: list, cfg: pbm.SectionConfig, p: MaterialParams) -> np.ndarray:
    """Evaluate heterogeneous chain requests in one vectorised simulation.

    Each request maps the keys of :meth:`TruthPlant.request` to scalars;
    ``h_HDT``, ``k_HDT`` and ``theta_xe1`` may differ between requests.
    Returns outputs ``[moist %wb, temp C]`` with shape ``(len(reqs), 2)``.
    """
    return evaluate_requests_full(reqs, cfg, p).outputs


def evaluate_requests_full(reqs: list, cfg: pbm.SectionConfig, p: MaterialParams) -> pbm.ChainResult:
    col = lambda k: np.array([float(r[k]) for r in reqs])
    tcfg = cfg.with_hdt(h_HDT=col("h_HDT"), k_HDT=col("k_HDT"))
    tp = replace(p, theta_xe1=col("theta_xe1"))
    return pbm.simulate_inputs(col("T_hot_K"), col("feed_kgps"), col("Xin_db"), col("Tair_K"),
                               col("RH"), col("w"), tcfg, tp)


def save_truth(truth: TruthParams, path):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(truth.to_dict(), indent=2, sort_keys=True))
    tmp.replace(path)
