"""The relay adversary: two in-line devices, forwarding modes, evasion,
and the attack choreography that swaps two charging sessions.

A device sits inside a column's signal path with a port toward the EV and
a port toward the supply equipment, plus a private link to its twin at the
other column. In bridge mode it forwards between its own two ports; in
cross-relay mode every frame crosses the private link and re-enters the
signal path at the other column, so each car's data session lands on the
other car's column while energy keeps flowing over the physical cable.
Devices never read or alter opaque payloads; they only look at the leading
tag byte to spot plaintext fast-exchange datagrams for the early-guess
evasion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .messages import (
    TAG_DB_CHALLENGE,
    TAG_DB_RESPONSE,
    is_fast_frame,
    pack_fast,
    unpack_fast,
)
from .netsim import LatencyModel
from .session import Phase

MODE_OFF = "off"
MODE_BRIDGE = "bridge"
MODE_CROSS = "cross_relay"

EVASION_NONE = "none"
EVASION_EARLY_GUESS = "early_guess"

# Per-traversal processing delay of one device, seconds. Calibrated so a
# pair of bridging devices stays comfortably below the timing ceilings.
PROC_DELAY_S = 0.05e-3

# One-way latency models for the device-to-device link. The wired option is
# a tunnel over a cable (encapsulation plus two host network stacks), the
# router options cross two WiFi hops, ad-hoc crosses one.
PEER_LINK_PRESETS = {
    "wired": LatencyModel.jittered(0.85e-3, 0.06e-3),
    "wifi_router_5cm": LatencyModel.jittered(1.00e-3, 0.31e-3),
    "wifi_router_2m": LatencyModel.jittered(1.01e-3, 0.31e-3),
    "wifi_adhoc": LatencyModel.jittered(0.90e-3, 0.22e-3),
}

# Tunnel direction markers prepended on the peer link and stripped on exit.
_DIR_TO_SE = 0x01
_DIR_TO_EV = 0x02


class ChoreographyViolation(RuntimeError):
    """An attack action ran while its precondition did not hold."""


class RelayDevice:
    """In-line forwarding device with two local ports and a peer link."""

    def __init__(self, dev_id: str, mode: str = MODE_OFF,
                 evasion: str = EVASION_NONE, evasion_alphabet: int = 128,
                 proc_delay_s: float = PROC_DELAY_S):
        self.id = dev_id
        self.mode = mode
        self.evasion = evasion
        self.evasion_alphabet = evasion_alphabet
        self.proc_delay_s = proc_delay_s
        self.ev_link = None      # toward the EV of this column
        self.se_link = None      # toward the supply equipment of this column
        self.peer_link = None    # toward the twin device
        self.ev_neighbor = ""
        self.se_neighbor = ""
        self.peer_neighbor = ""
        self.forwarded = 0

    def wire(self, ev_link, se_link, peer_link=None) -> None:
        self.ev_link = ev_link
        self.se_link = se_link
        self.peer_link = peer_link
        self.ev_neighbor = ev_link.other(self.id)
        self.se_neighbor = se_link.other(self.id)
        if peer_link is not None:
            self.peer_neighbor = peer_link.other(self.id)

    # -- event handling -----------------------------------------------------

    def on_timer(self, net, timer) -> None:
        pass

    def on_frame(self, net, frame) -> None:
        src = frame.src
        if src == self.peer_neighbor and self.mode == MODE_CROSS:
            self._from_peer(net, frame.payload)
        elif src == self.ev_neighbor:
            self._from_port(net, frame.payload, from_ev_side=True)
        elif src == self.se_neighbor:
            self._from_port(net, frame.payload, from_ev_side=False)

    def _from_port(self, net, payload: bytes, from_ev_side: bool) -> None:
        if self.evasion == EVASION_EARLY_GUESS and from_ev_side \
                and is_fast_frame(payload) and payload[0] == TAG_DB_CHALLENGE:
            self._fabricate_response(net, payload)
            # The real challenge still travels on so the far side keeps
            # playing along; its responses get dropped on the way back.
        if self.mode == MODE_CROSS:
            direction = _DIR_TO_SE if from_ev_side else _DIR_TO_EV
            net.schedule_send(self.peer_link, self.id,
                              bytes([direction]) + payload,
                              extra_delay=self.proc_delay_s)
            self.forwarded += 1
            return
        if self.mode == MODE_BRIDGE:
            out = self.se_link if from_ev_side else self.ev_link
            if self._should_drop_response(payload, toward_ev=not from_ev_side):
                return
            net.schedule_send(out, self.id, payload,
                              extra_delay=self.proc_delay_s)
            self.forwarded += 1
            return
        # MODE_OFF: passive pass-through, no processing delay.
        out = self.se_link if from_ev_side else self.ev_link
        net.schedule_send(out, self.id, payload)
        self.forwarded += 1

    def _from_peer(self, net, payload: bytes) -> None:
        direction, inner = payload[0], payload[1:]
        toward_ev = direction == _DIR_TO_EV
        if self._should_drop_response(inner, toward_ev=toward_ev):
            return
        out = self.ev_link if toward_ev else self.se_link
        net.schedule_send(out, self.id, inner, extra_delay=self.proc_delay_s)
        self.forwarded += 1

    def _should_drop_response(self, payload: bytes, toward_ev: bool) -> bool:
        """Under early-guess evasion the genuine prover responses must not
        reach the verifier, which already got the fabricated ones."""
        return (self.evasion == EVASION_EARLY_GUESS and toward_ev
                and is_fast_frame(payload) and payload[0] == TAG_DB_RESPONSE)

    def _fabricate_response(self, net, challenge: bytes) -> None:
        _, idx, sym = unpack_fast(challenge)
        guess = early_guess_respond(self, sym, net.rng)
        net.schedule_send(self.ev_link, self.id,
                          pack_fast(TAG_DB_RESPONSE, idx, guess),
                          extra_delay=self.proc_delay_s)


def early_guess_respond(dev: RelayDevice, observed_symbol: int, rng) -> int:
    """Pick the immediate reply to an observed challenge: a uniform draw
    from the device's configured alphabet. The observed symbol carries no
    information about the prover's string, so it is ignored."""
    return rng.randrange(dev.evasion_alphabet)


def relay_forward(dev: RelayDevice, frame, net):
    """Forward one frame through a device (module-level convenience over
    the node handler)."""
    dev.on_frame(net, frame)


# -- attack choreography -----------------------------------------------------

ACT_PLUG_ATTACKER_EV = "plug_attacker_ev"
ACT_WAIT_FOR_VICTIM_SESSION = "wait_for_victim_session"
ACT_SEND_STOP_TO_VICTIM_EVSE = "send_stop_to_victim_evse"
ACT_SET_DISCHARGE_SCHEDULE = "set_discharge_schedule"
ACT_UNPLUG = "unplug"


@dataclass(frozen=True)
class AttackAction:
    kind: str
    at_s: float | None = None   # absolute time; None for condition-driven acts
    schedule: object = None     # ChargeSchedule for set_discharge_schedule

    @staticmethod
    def timed(kind: str, at_s: float) -> "AttackAction":
        return AttackAction(kind=kind, at_s=at_s)


@dataclass(frozen=True)
class AttackScript:
    """Ordered attacker actions. Timed actions fire at max(their time,
    completion of the previous action); wait actions block on a condition."""

    actions: tuple

    @classmethod
    def default(cls, plug_at_s: float = 5.0, stop_at_s: float = 60.0,
                unplug_at_s: float = 3650.0,
                discharge_schedule=None) -> "AttackScript":
        acts = []
        if discharge_schedule is not None:
            acts.append(AttackAction(kind=ACT_SET_DISCHARGE_SCHEDULE,
                                     at_s=max(0.0, plug_at_s - 1.0),
                                     schedule=discharge_schedule))
        acts.append(AttackAction.timed(ACT_PLUG_ATTACKER_EV, plug_at_s))
        acts.append(AttackAction(kind=ACT_WAIT_FOR_VICTIM_SESSION))
        acts.append(AttackAction.timed(ACT_SEND_STOP_TO_VICTIM_EVSE, stop_at_s))
        acts.append(AttackAction.timed(ACT_UNPLUG, unplug_at_s))
        return cls(actions=tuple(acts))


class AttackExecutor:
    """Runs an attack script inside a world. Registered as an event-loop
    node for its timed actions; wait steps use phase-change hooks so the
    queue can drain when the attack stalls (for example when the guard
    killed the sessions)."""

    NODE_ID = "ATTACKER-CTL"

    def __init__(self, world, script: AttackScript, attacker_ev_id: str,
                 victim_ev_id: str):
        self.world = world
        self.script = script
        self.attacker_ev_id = attacker_ev_id
        self.victim_ev_id = victim_ev_id
        self.idx = 0
        self.done = False
        self._waiting = False
        world.net.add_node(self.NODE_ID, self)
        world.phase_hooks.append(self._on_phase)

    def start(self) -> None:
        for dev in self.world.devs.values():
            if dev.mode != MODE_CROSS:
                raise ChoreographyViolation(
                    f"device {dev.id} not in cross-relay mode")
        if len(self.world.devs) < 2:
            raise ChoreographyViolation("attack needs two relay devices")
        self._advance()

    def _advance(self) -> None:
        while self.idx < len(self.script.actions):
            action = self.script.actions[self.idx]
            if action.kind == ACT_WAIT_FOR_VICTIM_SESSION:
                victim = self.world.evs[self.victim_ev_id]
                if victim.state.phase == Phase.CHARGING:
                    self.idx += 1
                    continue
                self._waiting = True
                return
            if action.at_s is not None:
                now = self.world.net.clock.now
                at = max(action.at_s, now)
                self.world.net.schedule_timer(at, self.NODE_ID, "action",
                                              self.idx)
                return
            self._execute(action)
            self.idx += 1
        self.done = True

    def _on_phase(self, node_id: str, phase: Phase) -> None:
        if self._waiting and node_id == self.victim_ev_id \
                and phase == Phase.CHARGING:
            self._waiting = False
            self.idx += 1
            self._advance()

    def on_timer(self, net, timer) -> None:
        if timer.tag != "action" or timer.data != self.idx:
            return
        self._execute(self.script.actions[self.idx])
        self.idx += 1
        self._advance()

    def on_frame(self, net, frame) -> None:
        pass

    def _execute(self, action: AttackAction) -> None:
        world = self.world
        if action.kind == ACT_PLUG_ATTACKER_EV:
            world.plug(self.attacker_ev_id)
        elif action.kind == ACT_SET_DISCHARGE_SCHEDULE:
            world.evs[self.attacker_ev_id].set_desired_schedule(action.schedule)
        elif action.kind == ACT_SEND_STOP_TO_VICTIM_EVSE:
            victim = world.evs[self.victim_ev_id]
            if victim.state.phase != Phase.CHARGING:
                raise ChoreographyViolation(
                    "stop requested before the victim session was charging")
            attacker = world.evs[self.attacker_ev_id]
            if attacker.state.phase != Phase.CHARGING:
                raise ChoreographyViolation(
                    "attacker session is not charging; nothing to stop with")
            attacker.request_stop()
        elif action.kind == ACT_UNPLUG:
            world.unplug(self.attacker_ev_id)
        else:
            raise ChoreographyViolation(f"unknown action {action.kind!r}")


def run_attack(script: AttackScript, world, attacker_ev_id: str = "EV-B",
               victim_ev_id: str = "EV-A", horizon_s: float = 7200.0):
    """Execute a scripted relay attack in a prepared cross-relay world and
    return the event trace (requires the world's network to have tracing
    enabled for a non-empty result)."""
    executor = AttackExecutor(world, script, attacker_ev_id, victim_ev_id)
    executor.start()
    world.run(until=horizon_s)
    return world.net.trace if world.net.trace is not None else []
