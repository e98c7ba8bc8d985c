"""Variational ODE network: LSTM inference network + alternating E/M training.

The inference network maps the (interpolated) observation sequence to a state
sequence x*: per-step MLP encoder 3 -> 7 -> 9, two bidirectional LSTM layers of
width 9, per-step MLP decoder 18 -> 7 -> 3. Inputs are standardised with fixed
per-component statistics of the interpolated observations and outputs mapped
back with the same affine transform.

LSTM gate order is (input, forget, cell, output); bidirectional outputs are
[forward, backward] along the feature axis.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, InvalidInputError, ShapeError
from .observation import linear_interpolate
from .optim import RMSprop
from .surrogate import FlowConfig, Preconditioner, SurrogateParams, fit_m_step, forecast_tape

log = logging.getLogger(__name__)

HIDDEN = 9
CODER_HIDDEN = 7
ENCODED = 9
N_LAYERS = 2
DIRECTIONS = ("f", "b")


@dataclass(frozen=True)
class VodenConfig:
    lam: float = 0.1
    n_e: int = 100
    n_m: int = 100
    epochs: int = 100
    lr: float = 3e-4
    lr_m: float = None  # M-step learning rate; defaults to lr
    seed: int = 0
    precondition: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError("lambda must be >= 0")
        if self.n_e < 1 or self.n_m < 1 or self.epochs < 1:
            raise InvalidInputError("n_e, n_m and epochs must all be >= 1")

    @property
    def m_lr(self):
        return self.lr if self.lr_m is None else self.lr_m


@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, y):
        y = np.asarray(y, dtype=np.float64)
        scale = y.std(axis=0)
        return cls(y.mean(axis=0), np.where(scale > 0, scale, 1.0))

    @classmethod
    def identity(cls, d=3):
        return cls(np.zeros(d), np.ones(d))


@dataclass
class LstmLayerParams:
    """Weights of one bidirectional layer, ``W_ih`` (4h x in), ``W_hh`` (4h x h), ``b`` (4h)."""

    W_ih: dict
    W_hh: dict
    b: dict

    @classmethod
    def from_phi(cls, phi, layer):
        p = f"lstm{layer}"
        return cls(
            {d: phi[f"{p}{d}_Wih"] for d in DIRECTIONS},
            {d: phi[f"{p}{d}_Whh"] for d in DIRECTIONS},
            {d: phi[f"{p}{d}_b"] for d in DIRECTIONS},
        )


def phi_shapes(hidden=HIDDEN):
    shapes = {
        "enc_W1": (CODER_HIDDEN, 3),
        "enc_b1": (CODER_HIDDEN,),
        "enc_W2": (ENCODED, CODER_HIDDEN),
        "enc_b2": (ENCODED,),
    }
    n_in = ENCODED
    for layer in range(1, N_LAYERS + 1):
        for d in DIRECTIONS:
            shapes[f"lstm{layer}{d}_Wih"] = (4 * hidden, n_in)
            shapes[f"lstm{layer}{d}_Whh"] = (4 * hidden, hidden)
            shapes[f"lstm{layer}{d}_b"] = (4 * hidden,)
        n_in = 2 * hidden
    shapes.update({
        "dec_W1": (CODER_HIDDEN, 2 * hidden),
        "dec_b1": (CODER_HIDDEN,),
        "dec_W2": (3, CODER_HIDDEN),
        "dec_b2": (3,),
    })
    return shapes


def init_phi(rng, hidden=HIDDEN):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gates at +1."""
    phi = {}
    for name, shape in phi_shapes(hidden).items():
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[1])
            phi[name] = rng.uniform(-bound, bound, size=shape)
        else:
            phi[name] = np.zeros(shape)
            if name.startswith("lstm"):
                phi[name][hidden:2 * hidden] = 1.0
    return phi


# -- numpy forward (no tape) -------------------------------------------------

def _lstm_direction(seq, W_ih, W_hh, b, reverse):
    from .kernels import lstm_recurrence_forward

    H, _, _ = lstm_recurrence_forward(seq @ W_ih.T + b, W_hh, reverse)
    return H


def lstm_forward(layer, seq):
    """Bidirectional layer output, shape (T, 2h): forward states then backward states."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != layer.W_ih["f"].shape[1]:
        raise ShapeError("lstm", f"sequence {seq.shape} does not match input weights {layer.W_ih['f'].shape}")
    outs = [_lstm_direction(seq, layer.W_ih[d], layer.W_hh[d], layer.b[d], d == "b") for d in DIRECTIONS]
    return np.concatenate(outs, axis=1)


def inference_forward(phi, y_interp, norm=None):
    """x*_{1:T} from a fully filled observation sequence (T, 3)."""
    y = np.asarray(y_interp, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 3 or not np.all(np.isfinite(y)):
        raise InvalidInputError("inference input must be a finite (T, 3) array")
    norm = norm or Normalizer.identity()
    z = (y - norm.mean) / norm.scale
    e = np.tanh(z @ phi["enc_W1"].T + phi["enc_b1"]) @ phi["enc_W2"].T + phi["enc_b2"]
    for layer in range(1, N_LAYERS + 1):
        e = lstm_forward(LstmLayerParams.from_phi(phi, layer), e)
    out = np.tanh(e @ phi["dec_W1"].T + phi["dec_b1"]) @ phi["dec_W2"].T + phi["dec_b2"]
    x = out * norm.scale + norm.mean
    if not np.all(np.isfinite(x)):
        raise DivergenceError("inference network produced non-finite states")
    return x


# -- tape forward ------------------------------------------------------------

def lstm_layer_tape(Pl, X, layer):
    """Bidirectional LSTM layer on the tape; ``Pl`` maps the phi names to tensors."""
    outs = []
    for d in DIRECTIONS:
        p = f"lstm{layer}{d}"
        gx = X @ Pl[f"{p}_Wih"].T + Pl[f"{p}_b"]
        outs.append(ad.lstm_recurrence(gx, Pl[f"{p}_Whh"], reverse=(d == "b")))
    return ad.concat(outs, axis=1)


def inference_tape(P, y_interp, norm):
    tape = P["enc_W1"].tape
    z = tape.constant((y_interp - norm.mean) / norm.scale)
    e = ad.tanh(z @ P["enc_W1"].T + P["enc_b1"]) @ P["enc_W2"].T + P["enc_b2"]
    for layer in range(1, N_LAYERS + 1):
        e = lstm_layer_tape(P, e, layer)
    out = ad.tanh(e @ P["dec_W1"].T + P["dec_b1"]) @ P["dec_W2"].T + P["dec_b2"]
    return out * tape.constant(norm.scale) + tape.constant(norm.mean)


def _loss_e_terms(X, Ptheta, flow_cfg, obs, lam):
    tape = X.tape
    pred = forecast_tape(Ptheta, flow_cfg, X[:-1])
    dyn = ad.sqnorm(pred - X[1:])
    if lam == 0:
        return dyn
    # innovation: forecast vs the observation valid at the same time, masked entries dropped
    m = obs.mask[1:].astype(np.float64)
    innov = ad.sqnorm((pred - tape.constant(obs.filled()[1:])) * tape.constant(m))
    return innov * lam + dyn


def loss_e_from_states(theta, states, obs, flow_cfg=FlowConfig(), lam=0.1):
    """loss_e with x* given directly instead of produced by the inference network."""
    states = np.asarray(states, dtype=np.float64)
    if len(obs) < 2 or states.shape != obs.values.shape:
        raise InvalidInputError("states must match the observation series and span >= 2 steps")
    tape = ad.Tape()
    Ptheta = {k: tape.constant(v) for k, v in theta.as_dict().items()}
    return float(_loss_e_terms(tape.constant(states), Ptheta, flow_cfg, obs, lam).value)


def loss_e_and_grad(theta, phi, obs, flow_cfg, lam, norm=None, y_interp=None, wrt=("phi",)):
    """loss_e and its gradients with respect to the blocks named in ``wrt``.

    loss_e = sum_t lam ||mask_{t+1} * (f(x*_t) - y_{t+1})||^2 + ||f(x*_t) - x*_{t+1}||^2
    with x* = inference_forward(phi, interpolated observations).
    """
    if len(obs) < 2:
        raise InvalidInputError("loss_e needs at least two time steps")
    if y_interp is None:
        y_interp = linear_interpolate(obs)
    norm = norm or Normalizer.identity()
    tape = ad.Tape()
    make_phi = tape.param if "phi" in wrt else (lambda k, v: tape.constant(v))
    make_theta = tape.param if "theta" in wrt else (lambda k, v: tape.constant(v))
    P = {k: make_phi(k, v) for k, v in phi.items()}
    Ptheta = {k: make_theta(k, v) for k, v in theta.as_dict().items()}
    X = inference_tape(P, y_interp, norm)
    loss = _loss_e_terms(X, Ptheta, flow_cfg, obs, lam)
    return float(loss.value), ad.backward(tape, loss)


def loss_e(theta, phi, obs, flow_cfg=FlowConfig(), lam=0.1, norm=None):
    value, _ = loss_e_and_grad(theta, phi, obs, flow_cfg, lam, norm=norm, wrt=())
    return value


@dataclass
class VodenResult:
    theta: SurrogateParams
    phi: dict
    norm: Normalizer
    history: list = field(default_factory=list)
    loss_e_initial: float = float("nan")
    loss_e_final: float = float("nan")


def voden_train(obs, theta_init, phi_init, cfg, flow_cfg=FlowConfig(), norm=None, callback=None):
    """Alternate ``n_e`` RMSprop steps on loss_e (phi) with ``n_m`` steps on loss_m (theta).

    The history has one row per epoch: loss_e at the last E-step evaluation,
    loss_m after the M-step and the number of gradient steps actually taken.
    """
    y_interp = linear_interpolate(obs)
    norm = norm or Normalizer.fit(y_interp)
    # whiten against the observations: early x* can be nearly degenerate
    pre = Preconditioner.from_states(y_interp, flow_cfg.delta) if cfg.precondition else False
    theta, phi = theta_init, dict(phi_init)
    opt_e = RMSprop(lr=cfg.lr)
    opt_m = RMSprop(lr=cfg.m_lr)
    initial = loss_e(theta, phi, obs, flow_cfg, cfg.lam, norm)
    history = []
    for epoch in range(cfg.epochs):
        e_steps = 0
        value = float("nan")
        for k in range(cfg.n_e):
            value, grads = loss_e_and_grad(theta, phi, obs, flow_cfg, cfg.lam, norm, y_interp)
            if not np.isfinite(value):
                raise DivergenceError("loss_e is not finite", step=k, index=epoch)
            phi = opt_e.step(phi, grads)
            e_steps += 1
        x_star = inference_forward(phi, y_interp, norm)
        try:
            theta, losses = fit_m_step(theta, flow_cfg, x_star, cfg.n_m, opt_m, precondition=pre)
        except DivergenceError as exc:
            raise DivergenceError("M-step diverged", step=exc.step, index=epoch) from exc
        row = {"epoch": epoch, "loss_e": value, "loss_m": losses[-1], "e_steps": e_steps, "m_steps": len(losses)}
        history.append(row)
        log.info("VODEN epoch %d: loss_e %.6g loss_m %.6g", epoch, value, losses[-1])
        if callback is not None:
            callback(row, theta, phi)
    final = loss_e(theta, phi, obs, flow_cfg, cfg.lam, norm)
    return VodenResult(theta, phi, norm, history, initial, final)


def checkpoint_dict(theta, phi, norm, flow_cfg, cfg):
    from .surrogate import checkpoint_dict as theta_dict

    return {
        "theta": theta_dict(theta, flow_cfg),
        "phi": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(phi.items())},
        "norm": {"mean": norm.mean.tolist(), "scale": norm.scale.tolist()},
        "config": {
            "lam": cfg.lam, "n_e": cfg.n_e, "n_m": cfg.n_m, "epochs": cfg.epochs,
            "lr": cfg.lr, "lr_m": cfg.lr_m, "seed": cfg.seed, "precondition": cfg.precondition,
            "gate_order": "ifgo", "bidirectional_concat": "forward,backward",
        },
    }


def from_checkpoint_dict(d):
    from .surrogate import from_checkpoint_dict as theta_from

    theta, flow_cfg = theta_from(d["theta"])
    phi = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["phi"].items()}
    norm = Normalizer(np.array(d["norm"]["mean"]), np.array(d["norm"]["scale"]))
    return theta, phi, norm, flow_cfg
