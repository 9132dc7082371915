"""Training, evaluation and ablation workflows built from the library modules.

Training order: calibrate (optional) -> mechanistic simulation -> residuals
-> augmented state -> snapshots -> dictionary lifting -> weights ->
orthogonal projection and static corrector -> constrained lifted dynamics ->
output map.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import calib, dataio, diag, edmdcs, lift, pbm
from .errors import ConfigError, DryerError
from .props import MaterialParams

log = logging.getLogger(__name__)

TOGGLES = ("no_aw_clamp", "no_Lv_correction", "no_CpX",
           "no_orthogonalization", "no_cc_weights", "no_stability")
PHYSICS_TOGGLES = TOGGLES[:3]
DATA_TOGGLES = TOGGLES[3:]


class StageError(DryerError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class Toggles:
    no_aw_clamp: bool = False
    no_Lv_correction: bool = False
    no_CpX: bool = False
    no_orthogonalization: bool = False
    no_cc_weights: bool = False
    no_stability: bool = False

    @classmethod
    def only(cls, name: str | None) -> "Toggles":
        if name is None or name == "full":
            return cls()
        if name not in TOGGLES:
            raise ConfigError(f"unknown toggle {name!r}; choose from {TOGGLES}")
        return cls(**{name: True})

    @classmethod
    def from_names(cls, names) -> "Toggles":
        bad = [n for n in names if n not in TOGGLES]
        if bad:
            raise ConfigError(f"unknown toggles {bad}; choose from {TOGGLES}")
        return cls(**{n: True for n in names})

    def physics(self, base: pbm.PhysicsOptions) -> pbm.PhysicsOptions:
        return replace(base, aw_clamp=base.aw_clamp and not self.no_aw_clamp,
                       lv_correction=base.lv_correction and not self.no_Lv_correction,
                       cp_moisture=base.cp_moisture and not self.no_CpX)

    def active(self) -> list:
        return [n for n in TOGGLES if getattr(self, n)]


@dataclass(frozen=True)
class LearnConfig:
    """Residual-learning settings shared by the hybrid and ext-input models."""

    ridge_static: float = 1e3
    select_ridge: bool = False
    ridge_grid: tuple = (1e-6, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
    lambdas: edmdcs.Lambdas = field(default_factory=edmdcs.Lambdas)
    alpha: float = edmdcs.ALPHA_DEFAULT
    kappa1: float = 0.5
    kappa2: float = 2.0
    delta: float = 0.5
    band: float = 2.0
    extra_base: tuple = ()

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.ridge_static < 0:
            raise ConfigError("ridge_static must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "LearnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown learn keys: {sorted(unknown)}")
        kw = dict(d)
        if "lambdas" in kw:
            lk = {f.name for f in fields(edmdcs.Lambdas)}
            if set(kw["lambdas"]) - lk:
                raise ConfigError(f"unknown lambdas keys: {sorted(set(kw['lambdas']) - lk)}")
            kw["lambdas"] = edmdcs.Lambdas(**kw["lambdas"])
        for k in ("ridge_grid", "extra_base"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ridge_grid"] = list(self.ridge_grid)
        d["extra_base"] = list(self.extra_base)
        return d


@dataclass
class Prepared:
    """Mechanistic simulation of a dataset plus everything residual learning needs."""

    y_obs: np.ndarray
    y_mech: np.ndarray
    proxies: np.ndarray
    u: np.ndarray
    d: np.ndarray
    t: np.ndarray
    lengths: list

    @property
    def e(self) -> np.ndarray:
        return lift.residuals(self.y_obs, self.y_mech)

    def z_raw(self, inputs: str = "full") -> np.ndarray:
        if inputs == "full":
            return lift.assemble_z(self.proxies, self.u, self.d)
        if inputs == "ext":
            return lift.assemble_z(np.zeros((len(self.u), 0)), self.u, self.d)
        raise ConfigError(f"unknown input set {inputs!r}")


def z_names(inputs: str = "full") -> tuple:
    names = dataio.U_COLS + dataio.D_COLS
    return (lift.PROXY_NAMES + names) if inputs == "full" else names


def prepare(ds: dataio.Dataset, cfg: pbm.SectionConfig, p: MaterialParams) -> Prepared:
    df = ds.concat()
    res = calib.pbm_outputs(ds, cfg, p)
    return Prepared(df[list(dataio.Y_COLS)].to_numpy(dtype=float), res.outputs, res.proxies,
                    df[list(dataio.U_COLS)].to_numpy(dtype=float),
                    df[list(dataio.D_COLS)].to_numpy(dtype=float),
                    df["t"].to_numpy(dtype=float), ds.segment_lengths())


@dataclass
class TrainedResidual:
    predictor: edmdcs.HybridPredictor
    weight_spec: edmdcs.WeightSpec
    inputs: str
    n_snapshots: int
    ridge_static: float

    def to_dict(self) -> dict:
        return {"predictor": self.predictor.to_dict(), "weight_spec": self.weight_spec.to_dict(),
                "inputs": self.inputs, "n_snapshots": self.n_snapshots,
                "ridge_static": self.ridge_static}

    @classmethod
    def from_dict(cls, d) -> "TrainedResidual":
        ws = d["weight_spec"]
        spec = edmdcs.WeightSpec(*(np.asarray(ws[k], dtype=float) for k in
                                   ("setpoint", "lower", "upper", "scale")),
                                 ws["kappa1"], ws["kappa2"], ws["delta"])
        return cls(edmdcs.HybridPredictor.from_dict(d["predictor"]), spec, d["inputs"],
                   int(d["n_snapshots"]), float(d["ridge_static"]))


def _stage(name):
    def wrap(fn):
        def inner(*a, **k):
            try:
                return fn(*a, **k)
            except StageError:
                raise
            except DryerError as exc:
                exc.stage = name
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
                raise StageError(name, exc) from exc
        return inner
    return wrap


def train_residual(prep: Prepared, learn: LearnConfig = LearnConfig(), toggles: Toggles = Toggles(),
                   inputs: str = "full") -> TrainedResidual:
    """Fit the static corrector, lifted dynamics and output map on training rows."""
    names = z_names(inputs)
    Z_raw = _stage("assemble_z")(prep.z_raw)(inputs)
    scaler = lift.Standardizer.fit(Z_raw, names)
    Zs = scaler.transform(Z_raw)
    e = _stage("residuals")(lambda: prep.e)()
    n_p = len(names) - len(dataio.U_COLS) - len(dataio.D_COLS)
    u_idx = tuple(range(n_p, n_p + len(dataio.U_COLS)))
    d_idx = tuple(range(n_p + len(dataio.U_COLS), len(names)))
    log.info("train_residual[%s]: %d rows, n_z=%d, %d segments", inputs, len(Zs), len(names),
             len(prep.lengths))

    ss = _stage("snapshots")(edmdcs.build_snapshots)(Zs, Zs[:, u_idx], Zs[:, d_idx], e,
                                                     prep.lengths, prep.t)
    spec = edmdcs.WeightSpec.from_outputs(prep.y_obs, learn.kappa1, learn.kappa2, learn.delta,
                                          learn.band)
    if toggles.no_cc_weights:
        w_rows = np.ones(len(Zs))
    else:
        w_rows = edmdcs.weights(prep.y_obs, spec)
    w_snap = w_rows[ss.origin]

    dictionary = lift.Dictionary(names, learn.extra_base)
    lam = learn.ridge_static
    if learn.select_ridge:
        Phi = dictionary.lift(Zs)
        Phi_perp, e_perp, _ = lift.orthogonalize(Phi, e, w_rows, dictionary.base, dictionary.feature_names)
        X = Phi_perp if not toggles.no_orthogonalization else Phi[:, ~dictionary.base]
        y = e_perp if not toggles.no_orthogonalization else e
        lam, _ = lift.select_ridge(X, y, w_rows, learn.ridge_grid)
    static = _stage("static_corrector")(lift.train_static_corrector)(
        Zs, e, dictionary, w_rows, lam, orthogonal=not toggles.no_orthogonalization)

    model = _stage("lifted_fit")(edmdcs.fit)(ss, w_snap, learn.lambdas, learn.alpha,
                                             enforce_stability=not toggles.no_stability)
    C = _stage("output_fit")(edmdcs.fit_output)(ss, learn.lambdas.C)
    model = replace(model.with_output(C), kappa=(learn.kappa1, learn.kappa2, learn.delta))
    pred = edmdcs.HybridPredictor(scaler, model, static, u_idx, d_idx)
    return TrainedResidual(pred, spec, inputs, len(ss), float(lam))


@dataclass
class Trained:
    """Everything produced by a training run."""

    cfg: pbm.SectionConfig
    material: MaterialParams
    calibration: calib.CalibResult | None
    hybrid: TrainedResidual
    ext: TrainedResidual
    toggles: Toggles
    counts: dict

    def to_dict(self) -> dict:
        return {
            "pbm": self.cfg.to_dict(), "material": self.material.to_dict(),
            "calibration": None if self.calibration is None else self.calibration.to_dict(),
            "hybrid": self.hybrid.to_dict(), "ext": self.ext.to_dict(),
            "toggles": self.toggles.active(), "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, d) -> "Trained":
        return cls(pbm.SectionConfig.from_dict(d["pbm"]), MaterialParams.from_dict(d["material"]),
                   None, TrainedResidual.from_dict(d["hybrid"]), TrainedResidual.from_dict(d["ext"]),
                   Toggles.from_names(d["toggles"]), d["counts"])


def run_training(train_ds: dataio.Dataset, cfg: pbm.SectionConfig = pbm.SectionConfig(),
                 p: MaterialParams = MaterialParams(), learn: LearnConfig = LearnConfig(),
                 toggles: Toggles = Toggles(), calibrate: bool = True,
                 problem: calib.CalibProblem = calib.CalibProblem(), seed: int = 0,
                 calibration: calib.CalibResult | None = None, prep: Prepared | None = None) -> Trained:
    """Full training run on a cleaned training split.

    A precomputed ``calibration`` (or ``prep``) may be passed to skip those
    stages; physics toggles are applied to the model configuration first.
    """
    cfg = replace(cfg, physics=toggles.physics(cfg.physics))
    if calibration is None and calibrate:
        sub = dataio.calibration_subset(train_ds)
        calibration = _stage("calibrate")(calib.calibrate)(problem, sub, cfg, p, seed)
    if calibration is not None:
        cfg = calibration.apply(cfg)
    if prep is None:
        prep = _stage("pbm_simulation")(prepare)(train_ds, cfg, p)
    hybrid = train_residual(prep, learn, toggles, "full")
    ext = train_residual(prep, learn, toggles, "ext")
    counts = {"train_rows": int(len(train_ds)), "segments": len(prep.lengths),
              "snapshots": hybrid.n_snapshots}
    return Trained(cfg, p, calibration, hybrid, ext, toggles, counts)


@dataclass
class Evaluation:
    """Predictions and diagnostics on a held-out split."""

    y_obs: np.ndarray
    predictions: dict
    diagnostics: dict
    lengths: list

    def table(self) -> list:
        rows = []
        for name, dg in self.diagnostics.items():
            for col, d in zip(dataio.Y_COLS, dg):
                rows.append({"model": name, "output": col, **d.summary()})
        return rows


def evaluate(trained: Trained, test_ds: dataio.Dataset, horizon: int = 20,
             diag_kw: dict | None = None, prep: Prepared | None = None) -> Evaluation:
    """One-step and multi-step predictions for PBM, ext-input and hybrid models."""
    diag_kw = diag_kw or {}
    if prep is None:
        prep = prepare(test_ds, trained.cfg, trained.material)
    e = prep.e
    preds = {"pbm": prep.y_mech}
    # PBM plus the last measured residual: the observer alone, nothing learned
    persist = replace(trained.hybrid.predictor, use_dynamic=False, use_static=False)
    Zh = persist.standardize(prep.z_raw("full"))
    preds["pbm_persistence"] = edmdcs.hybrid_predict(prep.y_mech, persist.one_step(Zh, e, prep.lengths))
    for label, tr in (("ext_input", trained.ext), ("hybrid", trained.hybrid)):
        P = tr.predictor
        Zs = P.standardize(prep.z_raw(tr.inputs))
        preds[label] = edmdcs.hybrid_predict(prep.y_mech, P.one_step(Zs, e, prep.lengths))
        preds[label + "_multistep"] = edmdcs.hybrid_predict(
            prep.y_mech, P.multi_step(Zs, e, prep.lengths, horizon))
        if label == "hybrid":
            for tag, kw in (("static_only", {"use_dynamic": False}),
                            ("dynamic_only", {"use_static": False})):
                Pv = replace(P, **kw)
                preds[f"hybrid_{tag}"] = edmdcs.hybrid_predict(prep.y_mech, Pv.one_step(Zs, e, prep.lengths))
    diags = {k: diag.diagnose(prep.y_obs, v, **diag_kw) for k, v in preds.items()}
    return Evaluation(prep.y_obs, preds, diags, prep.lengths)


def split_clean(ds: dataio.Dataset, train_frac: float = 0.7):
    cleaned = dataio.clean(ds)
    train, test = dataio.split(cleaned, train_frac)
    return cleaned, train, test


ABLATION_ROWS = ("full",) + TOGGLES


def ablate(train_ds, test_ds, cfg=pbm.SectionConfig(), p=MaterialParams(),
           learn=LearnConfig(), calibrate=True, problem=calib.CalibProblem(), seed=0,
           horizon: int = 20, diag_kw=None) -> list:
    """Train and evaluate the full model and each single-toggle variant.

    Calibration runs once with full physics and is shared by all variants;
    mechanistic simulations are shared between variants with equal physics.
    """
    base = None
    if calibrate:
        base = calib.calibrate(problem, dataio.calibration_subset(train_ds), cfg, p, seed)
    cache = {}
    rows = []
    for name in ABLATION_ROWS:
        tg = Toggles.only(name)
        phys = tg.physics(cfg.physics)
        mcfg = replace(cfg, physics=phys)
        if base is not None:
            mcfg = base.apply(mcfg)
        key = (phys.aw_clamp, phys.lv_correction, phys.cp_moisture)
        if key not in cache:
            cache[key] = (prepare(train_ds, mcfg, p), prepare(test_ds, mcfg, p))
        tr_prep, te_prep = cache[key]
        trained = run_training(train_ds, cfg, p, learn, tg, calibrate=False, calibration=base,
                               prep=tr_prep)
        ev = evaluate(trained, test_ds, horizon, diag_kw, prep=te_prep)
        hy = ev.diagnostics["hybrid"]
        rows.append({
            "variant": name,
            "mae_moist": hy[0].mae, "mae_temp": hy[1].mae,
            "r2_moist": hy[0].r2, "r2_temp": hy[1].r2,
            "lb_p_moist": hy[0].lb_p, "lb_p_temp": hy[1].lb_p,
            "mae_moist_multistep": ev.diagnostics["hybrid_multistep"][0].mae,
            "mae_temp_multistep": ev.diagnostics["hybrid_multistep"][1].mae,
            "rho_A": trained.hybrid.predictor.model.rho,
        })
        log.info("ablation %s: %s", name, rows[-1])
    return rows
