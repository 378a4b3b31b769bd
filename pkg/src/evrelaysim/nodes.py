"""Event-loop nodes: vehicle controller, supply controller, and the world
container that owns one simulation run.

The pure state machines live in session.py; nodes translate wire frames
and timers into machine inputs, run the distance-bounding roles, manage
the secure channel, and drive metering/billing on the supply side.
"""

from __future__ import annotations

from dataclasses import replace

from . import guard as guard_mod
from .guard import (
    DBConfig,
    DBVerdict,
    VERDICT_ACCEPT,
    VERDICT_INTEGRITY,
    VERDICT_TIMEOUT,
    VERDICT_TIMING,
    check_thresholds,
    compute_stats,
    generate_challenge,
    interleave,
    verify_transcript,
)
from .messages import (
    TAG_SECURE_REQ,
    TAG_SECURE_RES,
    TAG_DB_CHALLENGE,
    TAG_DB_RESPONSE,
    DbTranscript,
    DecodeError,
    MeteringReceiptReq,
    SdpRequest,
    SecureEnvelope,
    SecureReq,
    SecureRes,
    SessionSetupReq,
    SessionSetupRes,
    AuthorizationReq,
    PowerDeliveryReq,
    ACTION_STOP,
    decode_frame,
    encode_frame,
    is_fast_frame,
    pack_fast,
    unpack_fast,
)
from .power import Battery, ControlCenter, EvsePower, tick_power
from .session import (
    AuthDecision,
    Certificate,
    ChannelEstablished,
    ContractCredential,
    GuardStart,
    GuardVerdict,
    InvalidCertificate,
    Phase,
    PlugIn,
    ProtocolViolation,
    SessionAbort,
    SessionState,
    SetupWithId,
    StopRequested,
    TamperDetected,
    authorize,
    establish_secure_channel,
    evcc_step,
    secc_step,
)

_UNWRAPPED_TAGS = (TAG_SECURE_REQ, TAG_SECURE_RES)


class _SessionNode:
    """Shared plumbing for both controllers."""

    def __init__(self, node_id: str, world: "World"):
        self.id = node_id
        self.world = world
        self.link = None
        self.channel = None
        self.state: SessionState = SessionState()
        self.violations = 0
        # Opaque payloads that arrived ahead of the channel handshake
        # acknowledgement (per-frame delays can reorder a burst); they are
        # replayed once the channel exists, like a transport reassembling.
        self._early_envelopes: list[bytes] = []

    # Concrete classes set self._step to evcc_step or secc_step.

    def _machine(self, inp) -> None:
        net = self.world.net
        old_phase = self.state.phase
        try:
            self.state, outgoing = self._step(self.state, inp, net.clock.now)
        except ProtocolViolation:
            self.violations += 1
            return
        if self.state.phase != old_phase:
            self.world.notify_phase(self.id, self.state.phase)
        for msg in outgoing:
            self._send_msg(msg)
        if self.state.phase != old_phase:
            self._phase_hook(old_phase, self.state.phase)

    def _phase_hook(self, old: Phase, new: Phase) -> None:
        pass

    def _send_msg(self, msg) -> None:
        if self.link is None:
            return
        self.world.log_msg(self.id, "out", msg, self.state.session_id)
        data = encode_frame(msg, self.state.session_id)
        if self.channel is not None and msg.TAG not in _UNWRAPPED_TAGS:
            data = encode_frame(SecureEnvelope(body=self.channel.wrap(data)),
                                self.state.session_id)
        self.world.net.schedule_send(self.link, self.id, data)

    def _abort(self, reason: str) -> None:
        self._machine(SessionAbort(reason=reason))

    def _dispatch_frame(self, payload: bytes) -> None:
        try:
            msg, sid = decode_frame(payload)
        except DecodeError:
            return
        if isinstance(msg, SecureEnvelope):
            if self.channel is None:
                self._early_envelopes.append(msg.body)
                return
            try:
                inner = self.channel.unwrap(msg.body)
            except TamperDetected:
                self._abort("tampered payload")
                return
            self._dispatch_frame(inner)
            return
        self.world.log_msg(self.id, "in", msg, sid)
        self._handle_msg(msg, sid)

    def _drain_early_envelopes(self) -> None:
        while self._early_envelopes and self.channel is not None:
            body = self._early_envelopes.pop(0)
            try:
                inner = self.channel.unwrap(body)
            except TamperDetected:
                self._abort("tampered payload")
                return
            self._dispatch_frame(inner)


class _GuardRun:
    """Verifier-side bookkeeping for one distance-bounding execution."""

    __slots__ = ("cfg", "alpha", "idx", "sent_at", "awaiting", "beta_seen",
                 "rtts", "finished_exchanges", "timed_out", "mu", "sigma",
                 "started_at")

    def __init__(self, cfg: DBConfig, alpha: bytes, started_at: float):
        self.cfg = cfg
        self.alpha = alpha
        self.idx = 0
        self.sent_at = 0.0
        self.awaiting = False
        self.beta_seen = bytearray()
        self.rtts: list[float] = []
        self.finished_exchanges = False
        self.timed_out = False
        self.mu = None
        self.sigma = None
        self.started_at = started_at


class EvNode(_SessionNode):
    """Vehicle-side controller plus the distance-bounding verifier."""

    def __init__(self, node_id: str, world: "World", cred: ContractCredential,
                 battery: Battery, desired_schedule, guard_cfg: DBConfig | None,
                 stop_after_s: float | None = None,
                 sdp_retry_interval_s: float | None = None,
                 sdp_max_retries: int = 0,
                 auto_session: bool = True):
        super().__init__(node_id, world)
        self.cred = cred
        self.battery = battery
        self.guard_cfg = guard_cfg
        self.guard: _GuardRun | None = None
        self.verdict: DBVerdict | None = None
        self.verdict_at: float | None = None
        self.stop_after_s = stop_after_s
        self.sdp_retry_interval_s = sdp_retry_interval_s
        self.sdp_max_retries = sdp_max_retries
        self._sdp_attempts = 0
        self.auto_session = auto_session
        self._step = evcc_step
        self.state = SessionState(evcc_id=node_id,
                                  contract_id=cred.contract_id,
                                  desired_schedule=desired_schedule)

    # -- lifecycle ---------------------------------------------------------

    def plug(self) -> None:
        if not self.auto_session:
            # Car is connected but its controller stays dormant; the column
            # still pairs (handled by the world) and can serve relayed peers.
            return
        self._machine(PlugIn())
        if self.sdp_retry_interval_s:
            net = self.world.net
            net.schedule_timer(net.clock.now + self.sdp_retry_interval_s,
                               self.id, "sdp_retry")

    def request_stop(self) -> None:
        self._machine(StopRequested())

    def set_desired_schedule(self, schedule) -> None:
        self.state = replace(self.state, desired_schedule=schedule)

    @property
    def guard_duration_s(self) -> float | None:
        if self.guard is None or self.verdict_at is None:
            return None
        return self.verdict_at - self.guard.started_at

    # -- event handling ----------------------------------------------------

    def on_frame(self, net, frame) -> None:
        payload = frame.payload
        if is_fast_frame(payload):
            tag, idx, sym = unpack_fast(payload)
            if tag == TAG_DB_RESPONSE:
                self._guard_on_response(idx, sym)
            return
        self._dispatch_frame(payload)

    def on_timer(self, net, timer) -> None:
        if timer.tag == "sdp_retry":
            self._sdp_retry()
        elif timer.tag == "db_timeout":
            self._guard_on_timeout(timer.data)
        elif timer.tag == "auto_stop":
            if self.state.phase == Phase.CHARGING:
                self.request_stop()

    def _sdp_retry(self) -> None:
        if self.state.phase != Phase.PAIRED:
            return
        if self._sdp_attempts >= self.sdp_max_retries:
            return
        self._sdp_attempts += 1
        if self.link is not None:
            self.world.net.schedule_send(
                self.link, self.id, encode_frame(SdpRequest(), 0))
        net = self.world.net
        net.schedule_timer(net.clock.now + self.sdp_retry_interval_s,
                           self.id, "sdp_retry")

    def _handle_msg(self, msg, sid: int) -> None:
        if isinstance(msg, SecureRes):
            self._on_secure_res(msg)
            return
        if isinstance(msg, DbTranscript):
            self._guard_on_transcript(msg.symbols)
            return
        if isinstance(msg, SessionSetupRes) and self.state.session_id == 0:
            self.state = replace(self.state, session_id=sid)
        self._machine(msg)

    def _phase_hook(self, old: Phase, new: Phase) -> None:
        net = self.world.net
        if new == Phase.DISCOVERED:
            if self.guard_cfg is not None:
                self._machine(GuardStart())
            else:
                self._initiate_channel()
        elif new == Phase.DISTANCE_BOUNDING:
            self._guard_start()
        elif new == Phase.CHARGING and self.stop_after_s is not None:
            net.schedule_timer(net.clock.now + self.stop_after_s,
                               self.id, "auto_stop")

    # -- secure channel ----------------------------------------------------

    def _initiate_channel(self) -> None:
        self._send_msg(SecureReq(cert_id=self.cred.certificate_id,
                                 valid=self.cred.valid))

    def _on_secure_res(self, msg: SecureRes) -> None:
        try:
            self.channel = establish_secure_channel(
                self.cred, Certificate(msg.cert_id, msg.valid))
        except InvalidCertificate:
            self._abort("invalid station certificate")
            return
        if self.guard is not None and self.verdict is None:
            # Wait for the prover transcript; it may already be buffered.
            self._drain_early_envelopes()
            return
        self._machine(ChannelEstablished())
        self._drain_early_envelopes()

    # -- distance bounding (verifier) ---------------------------------------

    def _guard_start(self) -> None:
        cfg = self.guard_cfg
        net = self.world.net
        alpha = generate_challenge(net.rng, cfg.exchanges, cfg.alphabet)
        self.guard = _GuardRun(cfg, alpha, net.clock.now)
        self._guard_send_next()

    def _guard_send_next(self) -> None:
        g = self.guard
        net = self.world.net
        frame = pack_fast(TAG_DB_CHALLENGE, g.idx, g.alpha[g.idx])
        net.schedule_send(self.link, self.id, frame)
        g.sent_at = net.clock.now
        g.awaiting = True
        net.schedule_timer(net.clock.now + g.cfg.exchange_timeout_s,
                           self.id, "db_timeout", g.idx)

    def _guard_on_response(self, idx: int, symbol: int) -> None:
        g = self.guard
        if g is None or g.finished_exchanges or not g.awaiting or idx != g.idx:
            return
        now = self.world.net.clock.now
        g.rtts.append(now - g.sent_at)
        g.beta_seen.append(symbol)
        g.awaiting = False
        g.idx += 1
        if g.idx >= g.cfg.exchanges:
            g.finished_exchanges = True
            self._guard_timing_check()
        else:
            self._guard_send_next()

    def _guard_on_timeout(self, idx) -> None:
        g = self.guard
        if g is None or g.finished_exchanges or not g.awaiting or idx != g.idx:
            return
        g.timed_out = True
        g.finished_exchanges = True
        self._conclude(VERDICT_TIMEOUT, None, None)

    def _guard_timing_check(self) -> None:
        g = self.guard
        g.mu, g.sigma = compute_stats(g.rtts)
        if not check_thresholds(g.mu, g.sigma, g.cfg):
            self._conclude(VERDICT_TIMING, g.mu, g.sigma)
            return
        self._initiate_channel()

    def _guard_on_transcript(self, s_se: bytes) -> None:
        g = self.guard
        if g is None or self.verdict is not None or not g.finished_exchanges:
            return
        s_ev = interleave(bytes(g.alpha), bytes(g.beta_seen))
        if verify_transcript(s_ev, s_se):
            self._conclude(VERDICT_ACCEPT, g.mu, g.sigma)
        else:
            self._conclude(VERDICT_INTEGRITY, g.mu, g.sigma)

    def _conclude(self, outcome: str, mu, sigma) -> None:
        self.verdict = DBVerdict(outcome=outcome, mu_s=mu, sigma_s=sigma)
        self.verdict_at = self.world.net.clock.now
        self._machine(GuardVerdict(outcome=outcome))


class SeNode(_SessionNode):
    """Supply-side controller: serves the session, answers the fast
    exchange as prover, energizes the column, meters, and bills."""

    def __init__(self, node_id: str, world: "World", cert: Certificate,
                 evse: EvsePower, cc: ControlCenter,
                 guard_cfg: DBConfig | None,
                 metering_interval_s: float = 1.0):
        super().__init__(node_id, world)
        self.cert = cert
        self.evse = evse
        self.cc = cc
        self.guard_cfg = guard_cfg
        self.metering_interval_s = metering_interval_s
        self.prover_beta: bytes | None = None
        self.prover_alpha_seen = bytearray()
        self.mute_prover = False
        self._step = secc_step
        self.state = SessionState(station_address=node_id,
                                  station_max_power_w=evse.max_power_w,
                                  bidirectional=evse.bidirectional)

    def plug(self) -> None:
        self._machine(PlugIn())

    def on_frame(self, net, frame) -> None:
        payload = frame.payload
        if is_fast_frame(payload):
            tag, idx, sym = unpack_fast(payload)
            if tag == TAG_DB_CHALLENGE:
                self._prover_respond(idx, sym)
            return
        self._dispatch_frame(payload)

    def on_timer(self, net, timer) -> None:
        if timer.tag == "meter":
            self._meter_tick()

    def _handle_msg(self, msg, sid: int) -> None:
        if isinstance(msg, SecureReq):
            self._on_secure_req(msg)
            return
        if isinstance(msg, SessionSetupReq):
            self._machine(SetupWithId(request=msg,
                                      session_id=self.world.next_session_id()))
            return
        if isinstance(msg, AuthorizationReq):
            try:
                res = authorize(self.channel, self.cc,
                                self.state.session_id, msg)
            except Exception:
                self._abort("authorization failure")
                return
            self._machine(AuthDecision(request=msg, accepted=res.accepted))
            return
        if isinstance(msg, PowerDeliveryReq) and msg.action == ACTION_STOP \
                and self.state.phase == Phase.CHARGING:
            self._final_meter_tick()
        self._machine(msg)

    def _phase_hook(self, old: Phase, new: Phase) -> None:
        net = self.world.net
        if new == Phase.DISCOVERED and self.guard_cfg is not None:
            self._machine(GuardStart())
        elif new == Phase.DISTANCE_BOUNDING:
            # Prover material is generated ahead of the first challenge.
            cfg = self.guard_cfg
            self.prover_beta = generate_challenge(net.rng, cfg.exchanges,
                                                  cfg.alphabet)
        elif new == Phase.CHARGING:
            self.evse.begin_delivery(self.state.schedule, net.clock.now)
            net.schedule_timer(net.clock.now + self.metering_interval_s,
                               self.id, "meter")
        elif old == Phase.CHARGING and new == Phase.STOPPED:
            self.evse.end_delivery()

    # -- secure channel ----------------------------------------------------

    def _on_secure_req(self, msg: SecureReq) -> None:
        if self.state.phase not in (Phase.DISCOVERED, Phase.DISTANCE_BOUNDING):
            return
        peer = ContractCredential(contract_id="", certificate_id=msg.cert_id,
                                  valid=msg.valid)
        try:
            channel = establish_secure_channel(peer, self.cert)
        except InvalidCertificate:
            self._abort("invalid peer certificate")
            return
        # The acknowledgement must leave in the clear; the peer derives the
        # channel only once it arrives.
        self._send_msg(SecureRes(cert_id=self.cert.certificate_id,
                                 valid=self.cert.valid))
        self.channel = channel
        self._machine(ChannelEstablished())
        if self.prover_alpha_seen:
            s_se = interleave(bytes(self.prover_alpha_seen), self.prover_beta)
            self._send_msg(DbTranscript(symbols=s_se))

    # -- distance bounding (prover) -----------------------------------------

    def _prover_respond(self, idx: int, symbol: int) -> None:
        if self.state.phase != Phase.DISTANCE_BOUNDING or self.mute_prover:
            return
        if self.prover_beta is None or idx >= len(self.prover_beta):
            return
        if idx == len(self.prover_alpha_seen):
            self.prover_alpha_seen.append(symbol)
        self.world.net.schedule_send(
            self.link, self.id,
            pack_fast(TAG_DB_RESPONSE, idx, self.prover_beta[idx]))

    # -- metering -----------------------------------------------------------

    def _meter_tick(self) -> None:
        if not self.evse.energized:
            return
        net = self.world.net
        now = net.clock.now
        dt = now - self.evse.last_metered_at
        if dt <= 0:
            return
        reading = tick_power(self.evse, self.evse.attached, dt, now)
        if reading.energy_ws != 0:
            self.cc.record(self.state.session_id, reading)
            self._send_msg(MeteringReceiptReq(
                evse_id=self.evse.evse_id, energy_ws=reading.energy_ws,
                interval_s=dt, timestamp=now))
        net.schedule_timer(now + self.metering_interval_s, self.id, "meter")

    def _final_meter_tick(self) -> None:
        """Meter the partial interval between the last tick and a stop."""
        if not self.evse.energized:
            return
        now = self.world.net.clock.now
        dt = now - self.evse.last_metered_at
        if dt <= 0:
            return
        reading = tick_power(self.evse, self.evse.attached, dt, now)
        if reading.energy_ws != 0:
            self.cc.record(self.state.session_id, reading)


class World:
    """Container for one simulation run: the network, both kinds of nodes,
    relay devices, the control center, and run-wide bookkeeping."""

    def __init__(self, net, cc: ControlCenter):
        self.net = net
        self.cc = cc
        self.evs: dict[str, EvNode] = {}
        self.ses: dict[str, SeNode] = {}
        self.devs: dict = {}
        self.columns: dict[str, str] = {}  # ev id -> column (se id)
        self.msg_log: list = []
        self.phase_log: list = []
        self.phase_hooks: list = []
        self._plug_times: dict[str, float] = {}
        self._started = False
        net.add_node("WORLD", self)

    # -- construction -------------------------------------------------------

    def add_ev(self, node: EvNode) -> EvNode:
        self.evs[node.id] = node
        self.net.add_node(node.id, node)
        return node

    def add_se(self, node: SeNode) -> SeNode:
        self.ses[node.id] = node
        self.net.add_node(node.id, node)
        return node

    def add_dev(self, dev) -> None:
        self.devs[dev.id] = dev
        self.net.add_node(dev.id, dev)

    def attach(self, ev_id: str, se_id: str) -> None:
        """Record which column an EV physically plugs into."""
        self.columns[ev_id] = se_id

    def schedule_plug(self, ev_id: str, at: float) -> None:
        self._plug_times[ev_id] = at

    def schedule_stop(self, ev_id: str, at: float) -> None:
        self.net.schedule_timer(at, "WORLD", "stop", ev_id)

    def schedule_unplug(self, ev_id: str, at: float) -> None:
        self.net.schedule_timer(at, "WORLD", "unplug", ev_id)

    def ensure_started(self) -> None:
        if self._started:
            return
        self._started = True
        for ev_id, at in sorted(self._plug_times.items(),
                                key=lambda kv: (kv[1], kv[0])):
            self.net.schedule_timer(at, "WORLD", "plug", ev_id)

    # -- physical actions ----------------------------------------------------

    def plug(self, ev_id: str) -> None:
        ev = self.evs[ev_id]
        se = self.ses[self.columns[ev_id]]
        se.evse.attached = ev.battery
        se.plug()
        ev.plug()

    def unplug(self, ev_id: str) -> None:
        ev = self.evs[ev_id]
        se = self.ses[self.columns[ev_id]]
        if se.evse.energized:
            se._final_meter_tick()
            se.evse.end_delivery()
        se.evse.attached = None
        if ev.state.phase != Phase.STOPPED:
            ev._abort("unplugged")
        if se.state.phase != Phase.STOPPED:
            se._abort("unplugged")

    # -- run-wide services ----------------------------------------------------

    def next_session_id(self) -> int:
        return self.net.rng.getrandbits(64)

    def notify_phase(self, node_id: str, phase: Phase) -> None:
        self.phase_log.append((self.net.clock.now, node_id, phase))
        for hook in list(self.phase_hooks):
            hook(node_id, phase)

    def log_msg(self, node_id: str, direction: str, msg, session_id: int) -> None:
        self.msg_log.append((self.net.clock.now, node_id, direction, msg,
                             session_id))

    # -- timers addressed to the world itself ---------------------------------

    def on_timer(self, net, timer) -> None:
        kind, ev_id = timer.tag, timer.data
        if kind == "plug":
            self.plug(ev_id)
        elif kind == "stop":
            self.evs[ev_id].request_stop()
        elif kind == "unplug":
            self.unplug(ev_id)

    def on_frame(self, net, frame) -> None:
        pass

    # -- execution -------------------------------------------------------------

    def run(self, until: float | None = None,
            max_events: int | None = None) -> int:
        self.ensure_started()
        return self.net.run(until=until, max_events=max_events)
