"""Round orchestration: local steps, upload/broadcast pipelines, metrics, bounds.

One simulated round, in order: realize fading -> schedule uploads (policy) ->
configure coefficients -> selected clients take one FL gradient step from
their last received global and push it through clip/perturb/quantize/transmit
-> server averages what it received -> the quantized new global is broadcast
through each client's downlink -> every client takes one personalized-model
step toward its freshly received global -> metrics and bound terms are
recorded. All randomness comes from streams keyed on (seed, round, client,
purpose), so channel realizations are identical across policies under the
same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import coeffs, scheduler
from .channel import ChannelRealization, RadioConfig, realize_round, transmit
from .coeffs import BoundConstants
from .dpq import (PrivacySpec, QuantizerSpec, clip_model, dequantize,
                  perturb, quantize)
from .errors import ConfigError
from .models import pl_grad
from .rng import substream

POLICIES = ("proposed", "round_robin", "random", "non_adjustment")
DP_MODES = ("quantization_assisted", "plain_gaussian", "none")


@dataclass
class ClientState:
    fl_local: np.ndarray
    pl_model: np.ndarray
    last_received_global: np.ndarray
    data: object  # ClientDataset


@dataclass
class ServerState:
    global_model: np.ndarray
    round: int = 0


@dataclass
class RoundRecord:
    """Everything measured in one round; append-only and serializable."""

    round: int
    policy: str
    seed: int
    selected: tuple
    mean_acc: float
    max_test_loss: float
    jain: float
    theta_l: float
    phi_max: float
    eta_f: float
    eps_p_target: float
    gamma_max: float
    eps_p_max_running: float
    phi_max_running: float
    bound_decay: float
    bound_tail: float
    channel_digest: str
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    eta_p: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    rho_up: list = field(default_factory=list)
    rho_down: list = field(default_factory=list)
    phi: list = field(default_factory=list)

    CSV_FIELDS = ("round", "policy", "seed", "mean_acc", "max_test_loss", "jain",
                  "theta_l", "phi_max", "selected_count", "eta_f", "eps_p_target",
                  "gamma_max", "eps_p_max_running", "phi_max_running",
                  "bound_decay", "bound_tail", "channel_digest")

    def csv_row(self):
        vals = dict(
            round=self.round, policy=self.policy, seed=self.seed,
            mean_acc=self.mean_acc, max_test_loss=self.max_test_loss,
            jain=self.jain, theta_l=self.theta_l, phi_max=self.phi_max,
            selected_count=len(self.selected), eta_f=self.eta_f,
            eps_p_target=self.eps_p_target, gamma_max=self.gamma_max,
            eps_p_max_running=self.eps_p_max_running,
            phi_max_running=self.phi_max_running,
            bound_decay=self.bound_decay, bound_tail=self.bound_tail,
            channel_digest=self.channel_digest,
        )
        return [vals[k] for k in self.CSV_FIELDS]


@dataclass
class ExperimentContext:
    """Static inputs of one simulated run."""

    seed: int
    policy: str
    model: object
    clients: list              # list[ClientDataset]
    distances_m: np.ndarray
    radio: RadioConfig
    privacy: PrivacySpec       # sigma resolved
    local_q: QuantizerSpec
    global_q: QuantizerSpec
    consts: BoundConstants
    r_min_bps: float
    eps_p_target: float
    eta_f_default: float = 0.01
    eta_p_default: float = 0.01
    lambda_default: float = 0.5
    max_rounds: int = 200


@dataclass
class EngineState:
    server: ServerState
    clients: list              # list[ClientState]
    ledger: scheduler.ParticipationLedger
    rr_cursor: int = 0
    participated: np.ndarray = None
    eps_p_max_running: float = 0.0
    phi_max_running: float = 0.0


def init_state(ctx: ExperimentContext) -> EngineState:
    init_rng = substream(ctx.seed, "init")
    w0 = ctx.model.init_params(init_rng)
    clients = [ClientState(fl_local=w0.copy(), pl_model=w0.copy(),
                           last_received_global=w0.copy(), data=d)
               for d in ctx.clients]
    return EngineState(
        server=ServerState(global_model=w0.copy()),
        clients=clients,
        ledger=scheduler.ParticipationLedger.fresh(len(clients)),
        participated=np.zeros(len(clients), dtype=bool),
    )


def fl_local_step(received_global: np.ndarray, eta_f: float, grad: np.ndarray) -> np.ndarray:
    """One gradient step from the received global (not from the previous local)."""
    return received_global - eta_f * grad


def pl_step(pl_model: np.ndarray, received_global: np.ndarray, eta_p: float,
            lam: float, model, batch_x, batch_y) -> np.ndarray:
    g = pl_grad(model, pl_model, received_global, lam, batch_x, batch_y)
    return pl_model - eta_p * g


def upload_pipeline(u: np.ndarray, privacy: PrivacySpec, local_q: QuantizerSpec,
                    ber_up: float, noise_rng, tx_rng) -> np.ndarray:
    """clip -> perturb -> quantize -> transmit -> dequantize."""
    clipped = clip_model(u, privacy.clip_c)
    noisy = perturb(clipped, privacy.resolved_sigma, noise_rng)
    qv = quantize(noisy, local_q)
    qv = transmit(qv, ber_up, tx_rng)
    return dequantize(qv)


def aggregate(received: list) -> np.ndarray:
    """Arithmetic mean of the received local models."""
    if not received:
        raise ValueError("aggregate needs at least one received model")
    first = received[0]
    for r in received[1:]:
        if r.shape != first.shape:
            raise ValueError("received models have mismatched lengths")
    return np.mean(received, axis=0)


def broadcast_pipeline(global_model: np.ndarray, global_q: QuantizerSpec,
                       ber_down: np.ndarray, tx_rngs: list) -> list:
    """Quantize the global once, then push through each client's downlink."""
    qv = quantize(global_model, global_q)
    return [dequantize(transmit(qv, float(ber_down[n]), tx_rngs[n]))
            for n in range(len(tx_rngs))]


def jain_index(values) -> float:
    """Fairness index (sum x)^2 / (n sum x^2); 1 when all equal."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("jain_index needs a non-empty vector")
    if np.any(values < 0):
        raise ValueError("jain_index expects non-negative values")
    denom = values.size * float(np.sum(values ** 2))
    if denom == 0.0:
        return 1.0
    return float(np.sum(values)) ** 2 / denom


def max_test_loss(test_losses, participated_mask) -> float:
    """Worst test loss among clients that uploaded at least once."""
    test_losses = np.asarray(test_losses, dtype=float)
    mask = np.asarray(participated_mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(test_losses[mask].max())


def _draw_batch(dataset, q_sample: float, rng) -> tuple:
    size = max(1, math.ceil(q_sample * dataset.n_train))
    idx = rng.permutation(dataset.n_train)[:size]
    return dataset.train_x[idx], dataset.train_y[idx]


def _schedule(ctx: ExperimentContext, state: EngineState, chan: ChannelRealization,
              t: int) -> scheduler.ScheduleDecision:
    if ctx.policy in ("proposed", "non_adjustment"):
        return scheduler.schedule_round(chan, state.ledger, ctx.radio,
                                        ctx.privacy.t0, ctx.r_min_bps)
    if ctx.policy == "round_robin":
        decision, state.rr_cursor = scheduler.round_robin_schedule(
            chan, state.ledger, ctx.radio, ctx.privacy.t0, ctx.r_min_bps,
            state.rr_cursor)
        return decision
    if ctx.policy == "random":
        return scheduler.random_schedule(chan, state.ledger, ctx.radio,
                                         ctx.privacy.t0, ctx.r_min_bps,
                                         substream(ctx.seed, t, "sched"))
    raise ConfigError(f"unknown policy {ctx.policy!r}")


def _configure(ctx: ExperimentContext, chan: ChannelRealization,
               decision: scheduler.ScheduleDecision, theta_min: float):
    """Per-round coefficients plus the per-client bias values Phi."""
    n = len(ctx.clients)
    consts = ctx.consts
    gammas = coeffs.gamma_constants(consts, theta_min, rho_down=0.0)
    if ctx.policy == "proposed":
        eta_f = coeffs.optimal_eta_f(consts)
        sum_ef = decision.n_selected * coeffs.eps_f(eta_f, consts)
        eta_p = np.empty(n)
        lam = np.empty(n)
        phi = np.empty(n)
        for i in range(n):
            eta_p[i], lam[i], phi[i] = coeffs.minimize_phi(
                consts, gammas, float(chan.downlink_elem_err[i]), sum_ef,
                decision.n_selected, ctx.eps_p_target)
    else:
        eta_f = ctx.eta_f_default
        sum_ef = decision.n_selected * coeffs.eps_f(eta_f, consts, check=False)
        eta_p = np.full(n, ctx.eta_p_default)
        lam = np.full(n, ctx.lambda_default)
        if ctx.lambda_default > 0.0:
            phi = np.array([
                coeffs.phi_terms(float(eta_p[i]), float(lam[i]), consts, gammas,
                                 float(chan.downlink_elem_err[i]), sum_ef,
                                 decision.n_selected)[2]
                for i in range(n)
            ])
        else:
            # the bias formula is singular at lambda = 0; fixed coefficients
            # outside its domain are allowed for baselines, bounds undefined
            phi = np.full(n, float("nan"))
    return coeffs.RoundCoefficients(eta_f=eta_f, eta_p=eta_p, lam=lam,
                                    eps_p=ctx.eps_p_target), phi, sum_ef


def run_round(ctx: ExperimentContext, state: EngineState, t: int) -> RoundRecord:
    model = ctx.model
    n = len(state.clients)
    chan = realize_round(ctx.radio, ctx.distances_m, ctx.privacy.r_bits,
                         substream(ctx.seed, t, "chan"))
    decision = _schedule(ctx, state, chan, t)
    rho_up = np.zeros(n)
    for c in decision.selected:
        rho_up[c] = chan.uplink_elem_err[c, decision.assignment[c]]
    theta_min = coeffs.theta_l(rho_up[list(decision.selected)], ctx.consts)
    rc, phi, sum_ef = _configure(ctx, chan, decision, theta_min)

    received = []
    for c in decision.selected:
        client = state.clients[c]
        bx, by = _draw_batch(client.data, ctx.privacy.q_sample,
                             substream(ctx.seed, t, c, "batch"))
        u = fl_local_step(client.last_received_global, rc.eta_f,
                          model.grad(client.last_received_global, bx, by))
        client.fl_local = u
        ber = float(chan.uplink_ber[c, decision.assignment[c]])
        received.append(upload_pipeline(u, ctx.privacy, ctx.local_q, ber,
                                        substream(ctx.seed, t, c, "dp"),
                                        substream(ctx.seed, t, c, "uptx")))
    if received:
        state.server.global_model = aggregate(received)

    tx_rngs = [substream(ctx.seed, t, c, "downtx") for c in range(n)]
    received_globals = broadcast_pipeline(state.server.global_model, ctx.global_q,
                                          chan.downlink_ber, tx_rngs)
    for c in range(n):
        state.clients[c].last_received_global = received_globals[c]

    for c in range(n):
        client = state.clients[c]
        bx, by = _draw_batch(client.data, ctx.privacy.q_sample,
                             substream(ctx.seed, t, c, "batch"))
        client.pl_model = pl_step(client.pl_model, client.last_received_global,
                                  float(rc.eta_p[c]), float(rc.lam[c]), model, bx, by)

    state.participated[list(decision.selected)] = True
    train_loss = [model.loss(state.clients[c].pl_model,
                             state.clients[c].data.train_x,
                             state.clients[c].data.train_y) for c in range(n)]
    test_loss = [model.loss(state.clients[c].pl_model,
                            state.clients[c].data.test_x,
                            state.clients[c].data.test_y) for c in range(n)]
    accuracy = [model.accuracy(state.clients[c].pl_model,
                               state.clients[c].data.test_x,
                               state.clients[c].data.test_y) for c in range(n)]

    gammas = coeffs.gamma_constants(ctx.consts, theta_min, 0.0)
    gamma_per_client = [
        coeffs.gamma_constants(ctx.consts, theta_min, float(chan.downlink_elem_err[c])).h1
        * theta_min + gammas.gamma0 * float(chan.downlink_elem_err[c]) + gammas.gamma1
        for c in range(n)
    ]
    eps_p_actual = max(coeffs.eps_p_of(float(rc.eta_p[c]), float(rc.lam[c]), ctx.consts.mu)
                       for c in range(n))
    state.eps_p_max_running = max(state.eps_p_max_running, eps_p_actual)
    phi_max = float(np.max(phi))
    if not math.isnan(phi_max):
        state.phi_max_running = max(state.phi_max_running, phi_max)
    if state.eps_p_max_running < 1.0:
        decay = state.eps_p_max_running ** (t + 1)
        tail = (1.0 - decay) / (1.0 - state.eps_p_max_running) * state.phi_max_running
    else:
        decay, tail = float("nan"), float("nan")

    state.server.round = t + 1
    return RoundRecord(
        round=t, policy=ctx.policy, seed=ctx.seed, selected=decision.selected,
        mean_acc=float(np.mean(accuracy)),
        max_test_loss=max_test_loss(test_loss, state.participated),
        jain=jain_index(train_loss),
        theta_l=theta_min, phi_max=phi_max, eta_f=rc.eta_f,
        eps_p_target=ctx.eps_p_target, gamma_max=float(np.max(gamma_per_client)),
        eps_p_max_running=state.eps_p_max_running,
        phi_max_running=state.phi_max_running,
        bound_decay=decay, bound_tail=tail,
        channel_digest=chan.digest(),
        train_loss=list(map(float, train_loss)),
        test_loss=list(map(float, test_loss)),
        accuracy=list(map(float, accuracy)),
        eta_p=list(map(float, rc.eta_p)), lam=list(map(float, rc.lam)),
        rho_up=list(map(float, rho_up)),
        rho_down=list(map(float, chan.downlink_elem_err)),
        phi=list(map(float, phi)),
    )


def run_experiment(ctx: ExperimentContext):
    """Run rounds until every client exhausts its upload budget (or the cap)."""
    state = init_state(ctx)
    records = []
    t = 0
    while (len(scheduler.eligible_clients(state.ledger, ctx.privacy.t0)) > 0
           and t < ctx.max_rounds):
        records.append(run_round(ctx, state, t))
        t += 1
    return records, state
