"""End-to-end orchestration: environment, pre-training, constellation fit,
fine-tuning, SNR sweeps and the reconstruction-objective baseline.

A run directory looks like::

    <out>/config.resolved.json
    <out>/dataset.bin   <out>/agent.ckpt           shared by both modes
    <out>/<mode>/pretrain.ckpt  constellation.json  constellation.csv
    <out>/<mode>/finetune.ckpt  metrics.csv  evaluation.csv  channel_log.csv

where ``<mode>`` is ``atroc`` or ``reconstruction``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import AnalogPath, ChannelConfig, ModulatedPath
from .config import ExperimentConfig
from .constellation import Constellation, build_qam, fit_constellation, quantization_loss
from .errors import ConfigError, NumericalAbort
from .neural import MLP, Adam, GaussianEncoder, NetworkSpec, mlp_spec, to_real
from .objectives import Stack, gauss_distance, neg_log_gauss, vib_loss
from .storage import CsvLog, load_container, save_container
from .task_env import Dataset, DatasetSpec, generate_dataset, pretrain_agent

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "phase", "task", "rate", "alignment", "quant", "total", "snr_db", "seed"]
EVAL_COLUMNS = ["mode", "checkpoint", "channel", "snr_db", "task_loss", "task_nll", "agent_mse",
                "quant_loss", "ser", "psnr", "seed"]
CHANNEL_LOG_COLUMNS = ["checkpoint", "channel", "snr_db", "block", "h_re", "h_im", "seed"]
FIT_COLUMNS = ["step", "r", "loss", "r_init", "seed"]

MODE_OBJECTIVE = {"atroc": "task", "reconstruction": "reconstruction"}

# purpose tags for derived random streams
_BATCH, _LATENT, _CHANNEL, _FIT, _EVAL = 11, 12, 13, 14, 15
_PHASE_TAG = {"pretrain": 1, "finetune": 2}


def bits_per_service(k: int, u: int) -> int:
    """Payload bits per inference request: k symbols of log2(u) bits each."""
    if u not in (4, 16, 64, 256):
        raise ValueError(f"u must be a supported power of 4, got {u}")
    if k < 1:
        raise ValueError("k must be positive")
    return k * int(math.log2(u))


def psnr(x, y, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); ``math.inf`` when y equals x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# -- persistence of networks -------------------------------------------------

def _net_arrays(prefix: str, net: MLP):
    return [(f"{prefix}{i}", p) for i, p in enumerate(net.params)]


def _net_from(prefix: str, spec: NetworkSpec, arrays: dict) -> MLP:
    params = [arrays[f"{prefix}{i}"].copy() for i in range(2 * (len(spec.dims) - 1))]
    return MLP(spec, params)


def save_dataset(path, data: Dataset) -> None:
    save_container(path, "dataset", {"spec": data.spec.to_dict()}, [
        ("x_train", data.x_train), ("a_train", data.a_train),
        ("x_test", data.x_test), ("a_test", data.a_test),
        ("mixing", data.mixing), ("readout", data.readout)])


def load_dataset(path) -> Dataset:
    _, meta, arr = load_container(path, "dataset")
    return Dataset(DatasetSpec(**meta["spec"]), arr["x_train"], arr["a_train"],
                   arr["x_test"], arr["a_test"], arr["mixing"], arr["readout"])


def save_agent(path, agent: MLP) -> None:
    save_container(path, "agent", {"spec": agent.spec.to_dict()}, _net_arrays("p", agent))


def load_agent(path) -> MLP:
    _, meta, arr = load_container(path, "agent")
    net = _net_from("p", NetworkSpec.from_dict(meta["spec"]), arr)
    net.frozen = True
    return net


@dataclass
class Checkpoint:
    """Encoder + reshaper state after a phase, with optimizer and stream state."""

    encoder: GaussianEncoder
    reshaper: MLP
    phase: str
    step: int = 0
    mode: str = "atroc"
    optimizer: Adam | None = None
    rng_states: dict = field(default_factory=dict)
    constellation: Constellation | None = None

    def save(self, path) -> None:
        meta = {
            "phase": self.phase, "step": self.step, "mode": self.mode,
            "encoder": self.encoder.net.spec.to_dict(),
            "reshaper": self.reshaper.spec.to_dict(),
            "rng_states": self.rng_states,
            "constellation": self.constellation.to_dict() if self.constellation else None,
        }
        arrays = _net_arrays("enc", self.encoder.net) + _net_arrays("resh", self.reshaper)
        if self.optimizer is not None and self.optimizer.m is not None:
            o = self.optimizer
            meta["adam"] = {"t": o.t, "lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps,
                            "n": len(o.m)}
            arrays += [(f"m{i}", m) for i, m in enumerate(o.m)]
            arrays += [(f"v{i}", v) for i, v in enumerate(o.v)]
        save_container(path, "checkpoint", meta, arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        _, meta, arr = load_container(path, "checkpoint")
        enc = GaussianEncoder(_net_from("enc", NetworkSpec.from_dict(meta["encoder"]), arr))
        resh = _net_from("resh", NetworkSpec.from_dict(meta["reshaper"]), arr)
        opt = None
        if "adam" in meta:
            a = meta["adam"]
            opt = Adam(a["lr"], a["beta1"], a["beta2"], a["eps"])
            opt.load_state(a["t"], [arr[f"m{i}"] for i in range(a["n"])],
                           [arr[f"v{i}"] for i in range(a["n"])])
        c = Constellation.from_dict(meta["constellation"]) if meta["constellation"] else None
        return cls(enc, resh, meta["phase"], meta["step"], meta["mode"], opt,
                   meta["rng_states"], c)


# -- run directory -----------------------------------------------------------

class Workspace:
    def __init__(self, cfg: ExperimentConfig, mode: str | None = None):
        self.cfg = cfg
        self.mode = mode or cfg.mode
        self.root = cfg.output_dir()
        self.dir = self.root / self.mode

    def path(self, name: str) -> Path:
        return self.dir / name

    @property
    def dataset_path(self) -> Path:
        return self.root / "dataset.bin"

    @property
    def agent_path(self) -> Path:
        return self.root / "agent.ckpt"

    def write_config(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "config.resolved.json").write_text(self.cfg.to_json())

    def metrics(self, fresh: bool) -> CsvLog:
        return CsvLog(self.path("metrics.csv"), METRIC_COLUMNS, fresh=fresh)


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def prepare_environment(cfg: ExperimentConfig, ws: Workspace | None = None):
    """Dataset and frozen agent, generated once per run directory and cached."""
    ws = ws or Workspace(cfg)
    spec = cfg.dataset_spec()
    if ws.dataset_path.exists():
        data = load_dataset(ws.dataset_path)
        if data.spec != spec:
            raise ConfigError(f"{ws.dataset_path} was generated from a different dataset spec")
    else:
        data = generate_dataset(spec)
        save_dataset(ws.dataset_path, data)
    if ws.agent_path.exists():
        agent = load_agent(ws.agent_path)
    else:
        agent = pretrain_agent(data, cfg.agent_schedule())
        save_agent(ws.agent_path, agent)
    return data, agent


def init_checkpoint(cfg: ExperimentConfig, mode: str | None = None) -> Checkpoint:
    l, _, k = cfg["dims"]["l"], cfg["dims"]["d"], cfg["dims"]["k"]
    net = cfg["networks"]
    seed = cfg.seeds[1]
    enc = GaussianEncoder.build(l, k, net["encoder_hidden"], seed=seed * 1000 + 1)
    resh = MLP(mlp_spec(2 * k, net["reshaper_hidden"], l, seed=seed * 1000 + 2))
    return Checkpoint(enc, resh, "init", 0, mode or cfg.mode)


# -- training ----------------------------------------------------------------

class _EarlyStop:
    """Stop when the smoothed loss has not improved by ``tol`` (relative)
    within the last ``window`` steps."""

    def __init__(self, window: int, tol: float):
        self.window, self.tol = window, tol
        self.ema = None
        self.best = math.inf
        self.best_step = 0

    def update(self, step: int, loss: float) -> bool:
        if not self.window:
            return False
        self.ema = loss if self.ema is None else 0.98 * self.ema + 0.02 * loss
        if self.ema < self.best - self.tol * abs(self.best if math.isfinite(self.best) else self.ema):
            self.best, self.best_step = self.ema, step
        return step - self.best_step >= self.window


def _train(cfg: ExperimentConfig, ws: Workspace, ckpt: Checkpoint, data: Dataset, agent: MLP,
           phase: str, path, steps: int, lr: float, constellation: Constellation | None,
           metrics: CsvLog) -> Checkpoint:
    sched = cfg["schedule"]
    weights = cfg.weights()
    if constellation is None:
        weights = type(weights)(weights.beta1_hat, weights.beta2_hat, 0.0, weights.classic_ib)
    mc = cfg.mc()
    objective = MODE_OBJECTIVE[ws.mode]
    stack = Stack(ckpt.encoder, ckpt.reshaper, agent, cfg["sigma_c"])
    opt = Adam(lr)
    s_data, s_init, s_chan = cfg.seeds
    tag = _PHASE_TAG[phase]
    batch_rng = _rng(s_data, _BATCH, tag)
    latent_rng = _rng(s_init, _LATENT, tag)
    channel_rng = _rng(s_chan, _CHANNEL, tag)
    snr = cfg.train_channel().snr_db
    # fine-tuning has its own window (0 = run the full budget) so models tuned
    # at different grid scales are compared after equal step counts
    window = sched["early_stop_window" if phase == "pretrain" else "finetune_early_stop_window"]
    stopper = _EarlyStop(window, sched["early_stop_tol"])
    n = data.x_train.shape[0]
    rows = []
    step = 0
    for step in range(1, steps + 1):
        idx = batch_rng.integers(0, n, mc.omega)
        params_before = [p.copy() for p in stack.trainable()]
        bd, grads = vib_loss(data.a_train[idx], data.x_train[idx], stack, path, weights, mc,
                             latent_rng, channel_rng, grad=True, constellation=constellation,
                             objective=objective)
        try:
            if not math.isfinite(bd.total):
                raise NumericalAbort(f"non-finite {phase} loss at step {step}")
            opt.step(stack.trainable(), grads)
        except NumericalAbort:
            for p, q in zip(stack.trainable(), params_before):
                p[...] = q
            Checkpoint(ckpt.encoder, ckpt.reshaper, phase, step - 1, ws.mode, opt,
                       constellation=constellation).save(ws.path(f"{phase}.lastgood.ckpt"))
            metrics.write(rows)
            raise
        if step % sched["log_every"] == 0 or step == 1:
            rows.append({"step": step, "phase": phase, **bd.row(), "snr_db": snr,
                         "seed": cfg.seed_tag})
        if stopper.update(step, bd.total):
            log.info("%s: early stop at step %d", phase, step)
            break
    metrics.write(rows)
    states = {"batch": batch_rng.bit_generator.state, "latent": latent_rng.bit_generator.state,
              "channel": channel_rng.bit_generator.state}
    return Checkpoint(ckpt.encoder, ckpt.reshaper, phase, step if steps else 0, ws.mode, opt,
                      _jsonable(states), constellation)


def _jsonable(obj):
    return json.loads(json.dumps(obj))


def run_pretrain(cfg: ExperimentConfig, mode: str | None = None) -> Path:
    """Phase one: train encoder and reshaper over the unquantized channel."""
    ws = Workspace(cfg, mode)
    ws.write_config()
    data, agent = prepare_environment(cfg, ws)
    ckpt = init_checkpoint(cfg, ws.mode)
    metrics = ws.metrics(fresh=True)
    path = AnalogPath(cfg.train_channel())
    s = cfg["schedule"]
    out = _train(cfg, ws, ckpt, data, agent, "pretrain", path, s["pretrain_steps"], s["lr"],
                 None, metrics)
    dest = ws.path("pretrain.ckpt")
    out.save(dest)
    return dest


def encoder_symbols(encoder: GaussianEncoder, x, rng: np.random.Generator) -> np.ndarray:
    """One reparameterized symbol block per input row, shape ``(n, k)``."""
    lat, _ = encoder.encode(x)
    eps = rng.standard_normal(lat.mu.shape)
    v = lat.mu + lat.sigma * eps
    return v[:, 0::2] + 1j * v[:, 1::2]


def symbol_batches(z: np.ndarray, batch: int, rng: np.random.Generator):
    """Endless mini-batches over a fixed symbol set, reshuffled every epoch."""
    n = z.shape[0]
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch + 1, batch):
            yield z[order[i:i + batch]]


def fit_on_encoder(cfg: ExperimentConfig, encoder: GaussianEncoder, x, r_init: float):
    """Grid-scale fit over encoder outputs; the encoder is fixed so its symbols
    for the training set are drawn once and then mini-batched."""
    c = cfg["constellation"]
    s_data, _, s_chan = cfg.seeds
    z = encoder_symbols(encoder, x, _rng(s_chan, _FIT, 0))
    return fit_constellation(symbol_batches(z, c["batch"], _rng(s_data, _FIT, 1)),
                             c["u"], r_init, cfg.fit_schedule())


def run_fit_constellation(cfg: ExperimentConfig, checkpoint=None, mode: str | None = None,
                          r_init: float | None = None) -> float:
    ws = Workspace(cfg, mode)
    ckpt = Checkpoint.load(checkpoint or ws.path("pretrain.ckpt"))
    data = load_dataset(ws.dataset_path)
    r0 = cfg["constellation"]["r_init"] if r_init is None else r_init
    res = fit_on_encoder(cfg, ckpt.encoder, data.x_train, r0)
    log_ = CsvLog(ws.path("constellation.csv"), FIT_COLUMNS)
    log_.write({"step": i, "r": r, "loss": (res.loss_history[i] if i < len(res.loss_history) else None),
                "r_init": r0, "seed": cfg.seed_tag} for i, r in enumerate(res.r_history))
    ws.path("constellation.json").write_text(json.dumps({
        "u": cfg["constellation"]["u"], "r_star": res.r_star, "r_init": r0,
        "steps": res.steps, "converged": res.converged,
        "bits_per_service": bits_per_service(cfg["dims"]["k"], cfg["constellation"]["u"]),
        # per block the receiver also needs h (complex) and the pre-normalization
        # power; both are side information outside the payload count
        "side_info_reals_per_block": 3}, indent=2, sort_keys=True) + "\n")
    return res.r_star


def run_finetune(cfg: ExperimentConfig, checkpoint=None, r_star: float | None = None,
                 mode: str | None = None, dest: str | None = None,
                 metrics_name: str | None = None) -> Path:
    """Phase two: joint update through the quantized channel.

    Rows are appended to the mode's ``metrics.csv`` unless ``metrics_name``
    names a separate (fresh) log.
    """
    ws = Workspace(cfg, mode)
    ckpt = Checkpoint.load(checkpoint or ws.path("pretrain.ckpt"))
    if r_star is None:
        r_star = json.loads(ws.path("constellation.json").read_text())["r_star"]
    data = load_dataset(ws.dataset_path)
    agent = load_agent(ws.agent_path)
    c = build_qam(cfg["constellation"]["u"], r_star)
    path = ModulatedPath(cfg.train_channel(), c, quantize=not cfg["debug"]["no_quantize"],
                         clip=not cfg["debug"]["plain_ste"])
    s = cfg["schedule"]
    out = _train(cfg, ws, ckpt, data, agent, "finetune", path, s["finetune_steps"],
                 s["finetune_lr"], c,
                 ws.metrics(fresh=False) if metrics_name is None
                 else CsvLog(ws.path(metrics_name), METRIC_COLUMNS))
    target = ws.path(dest or "finetune.ckpt")
    out.save(target)
    return target


# -- evaluation --------------------------------------------------------------

def evaluate_checkpoint(cfg: ExperimentConfig, ckpt: Checkpoint, data: Dataset, agent: MLP,
                        kind: str, snr_db: float):
    """Test-set metrics at one channel setting, plus the realized h per block.

    Every SNR point reuses the same latent and channel streams (common random
    numbers), so differences between points come from the SNR alone.
    """
    ch = ChannelConfig(kind, snr_db, cfg["channel"]["p_target"])
    c = ckpt.constellation
    path = AnalogPath(ch) if c is None else ModulatedPath(ch, c)
    kind_tag = 0 if kind == "awgn" else 1
    s_chan = cfg.seeds[2]
    z = encoder_symbols(ckpt.encoder, data.x_test, _rng(s_chan, _EVAL, kind_tag, 0))
    z_hat, ctx = path.forward(z, _rng(s_chan, _EVAL, kind_tag, 1))
    y = ckpt.reshaper(to_real(z_hat))
    a_hat = agent(y)
    sc = cfg["sigma_c"]
    row = {
        "channel": kind, "snr_db": snr_db,
        "task_loss": float(np.mean(gauss_distance(data.a_test, a_hat, sc))),
        "task_nll": float(np.mean(neg_log_gauss(data.a_test, a_hat, sc))),
        "agent_mse": float(np.mean((a_hat - data.a_test) ** 2)),
        "quant_loss": quantization_loss(z, c) if c is not None else None,
        "ser": float(np.mean(z_hat != ctx[0])) if c is not None else None,
        "psnr": psnr(data.x_test, y, cfg["psnr_peak"]),
        "seed": cfg.seed_tag,
    }
    h = ctx[2].h
    return row, h


def evaluate_over_snr(cfg: ExperimentConfig, checkpoint=None, snrs=None, kinds=None,
                      mode: str | None = None, fresh: bool = True) -> list[dict]:
    ws = Workspace(cfg, mode)
    name = Path(checkpoint).name if checkpoint else None
    if checkpoint is None:
        for cand in ("finetune.ckpt", "pretrain.ckpt"):
            if ws.path(cand).exists():
                checkpoint, name = ws.path(cand), cand
                break
        else:
            raise FileNotFoundError(f"no checkpoint in {ws.dir}")
    ckpt = Checkpoint.load(checkpoint)
    data = load_dataset(ws.dataset_path)
    agent = load_agent(ws.agent_path)
    snrs = cfg.eval_snrs() if snrs is None else list(snrs)
    kinds = cfg["channel"]["eval_kinds"] if kinds is None else list(kinds)
    rows, hrows = [], []
    for kind in kinds:
        for snr in snrs:
            row, h = evaluate_checkpoint(cfg, ckpt, data, agent, kind, snr)
            rows.append({"mode": ws.mode, "checkpoint": name, **row})
            hrows.extend({"checkpoint": name, "channel": kind, "snr_db": snr, "block": i,
                          "h_re": float(v.real), "h_im": float(v.imag), "seed": cfg.seed_tag}
                         for i, v in enumerate(h))
    CsvLog(ws.path("evaluation.csv"), EVAL_COLUMNS, fresh=fresh).write(rows)
    CsvLog(ws.path("channel_log.csv"), CHANNEL_LOG_COLUMNS, fresh=fresh).write(hrows)
    return rows


def run_pipeline(cfg: ExperimentConfig, mode: str | None = None) -> list[dict]:
    """pretrain -> fit constellation -> finetune -> evaluate for one mode."""
    run_pretrain(cfg, mode)
    r_star = run_fit_constellation(cfg, mode=mode)
    run_finetune(cfg, r_star=r_star, mode=mode)
    return evaluate_over_snr(cfg, mode=mode)


def run_baseline_reconstruction(cfg: ExperimentConfig) -> list[dict]:
    """Same pipeline, data and agent, but y is trained to reproduce x."""
    return run_pipeline(cfg, mode="reconstruction")


def run_all(cfg: ExperimentConfig) -> dict[str, list[dict]]:
    return {"atroc": run_pipeline(cfg, "atroc"),
            "reconstruction": run_baseline_reconstruction(cfg)}


def run_sweep(cfg: ExperimentConfig, snrs=None, kinds=None) -> list[dict]:
    """Evaluate every mode that has a checkpoint; merged rows go to ``sweep.csv``."""
    rows = []
    for mode in MODE_OBJECTIVE:
        ws = Workspace(cfg, mode)
        if ws.path("finetune.ckpt").exists() or ws.path("pretrain.ckpt").exists():
            rows += evaluate_over_snr(cfg, snrs=snrs, kinds=kinds, mode=mode)
    if not rows:
        raise FileNotFoundError(f"no checkpoints under {cfg.output_dir()}")
    CsvLog(cfg.output_dir() / "sweep.csv", EVAL_COLUMNS).write(rows)
    return rows


R_SENS_COLUMNS = ["factor", "r", "channel", "snr_db", "task_loss", "quant_loss", "ser", "psnr", "seed"]


def run_r_sensitivity(cfg: ExperimentConfig, factors=(1.0, 0.3, 3.0), snrs=(0.0,),
                      mode: str = "atroc") -> list[dict]:
    """Fine-tune from the same pretrained checkpoint at ``factor * r*`` for each
    factor and report test metrics on the training channel kind."""
    ws = Workspace(cfg, mode)
    data = load_dataset(ws.dataset_path)
    agent = load_agent(ws.agent_path)
    r_star = json.loads(ws.path("constellation.json").read_text())["r_star"]
    kind = cfg.train_channel().kind
    rows = []
    for f in factors:
        tag = repr(float(f))
        ck = run_finetune(cfg, r_star=f * r_star, mode=mode, dest=f"finetune_r{tag}.ckpt",
                          metrics_name=f"metrics_r{tag}.csv")
        ckpt = Checkpoint.load(ck)
        for snr in snrs:
            row, _ = evaluate_checkpoint(cfg, ckpt, data, agent, kind, float(snr))
            rows.append({"factor": float(f), "r": f * r_star, **row})
    CsvLog(ws.path("r_sensitivity.csv"), R_SENS_COLUMNS).write(rows)
    return rows
