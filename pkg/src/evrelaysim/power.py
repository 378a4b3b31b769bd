"""Energy flow, metering, battery state, and control-center billing.

Energy is accounted in integer watt-seconds end to end, so the meter total
always equals the battery delta exactly and conservation checks can demand
zero tolerance. Energy moves over the physical cable of a column only; a
relayed data session never redirects where power goes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

WS_PER_KWH = 3_600_000


class NotEnergized(RuntimeError):
    """Power tick on a column with no active delivery or no attached EV."""


class UnboundSession(RuntimeError):
    """Metering reading for a session that never authorized a contract."""


@dataclass
class Battery:
    """Traction battery. State of charge stays within [0, 1]; commanding
    energy beyond a bound raises an abuse flag instead of violating it."""

    capacity_ws: int
    charge_ws: int
    abuse_flags: set = field(default_factory=set)

    @classmethod
    def from_kwh(cls, capacity_kwh: float, soc: float) -> "Battery":
        cap = int(round(capacity_kwh * WS_PER_KWH))
        return cls(capacity_ws=cap, charge_ws=int(round(cap * soc)))

    @property
    def soc(self) -> float:
        return self.charge_ws / self.capacity_ws

    @property
    def headroom_ws(self) -> int:
        return self.capacity_ws - self.charge_ws


@dataclass(frozen=True)
class MeterReading:
    """One metering interval. Positive energy flowed into the vehicle,
    negative was drawn from it."""

    evse_id: str
    energy_ws: int
    interval_s: float
    timestamp: float

    @property
    def energy_kwh(self) -> float:
        return self.energy_ws / WS_PER_KWH


@dataclass
class EvsePower:
    """Physical side of one charging column."""

    evse_id: str
    max_power_w: int
    bidirectional: bool = False
    attached: Battery | None = None
    energized: bool = False
    schedule = None  # ChargeSchedule while delivering
    delivered_ws: int = 0
    last_metered_at: float = 0.0

    def begin_delivery(self, schedule, now: float) -> None:
        self.schedule = schedule
        self.energized = True
        self.delivered_ws = 0
        self.last_metered_at = now

    def end_delivery(self) -> None:
        self.energized = False
        self.schedule = None


def tick_power(evse: EvsePower, attached_ev: Battery | None, dt_s: float,
               now: float = 0.0) -> MeterReading:
    """Transfer up to one interval of energy between the column and the
    physically attached battery, then meter what actually moved.

    The transfer honors, in order: the granted schedule's power (capped at
    station power), the remaining schedule target, and the battery bounds.
    Hitting a battery bound while the schedule still commands flow raises
    the matching abuse flag.
    """
    if not evse.energized or evse.schedule is None:
        raise NotEnergized(f"{evse.evse_id} has no active delivery")
    if attached_ev is None:
        raise NotEnergized(f"{evse.evse_id} has no attached vehicle")

    sched = evse.schedule
    power_w = min(sched.max_power_w, evse.max_power_w)
    step_ws = int(round(power_w * dt_s))
    remaining = sched.target_energy_ws - evse.delivered_ws

    if remaining > 0:  # charging
        commanded = min(step_ws, remaining)
        applied = min(commanded, attached_ev.headroom_ws)
        if commanded > 0 and attached_ev.headroom_ws == 0:
            attached_ev.abuse_flags.add("overcharge_commanded")
    elif remaining < 0:  # discharging to the grid
        commanded = min(step_ws, -remaining)
        applied = -min(commanded, attached_ev.charge_ws)
        if commanded > 0 and attached_ev.charge_ws == 0:
            attached_ev.abuse_flags.add("deep_discharge_commanded")
    else:
        applied = 0

    attached_ev.charge_ws += applied
    evse.delivered_ws += applied
    evse.last_metered_at = now
    return MeterReading(evse_id=evse.evse_id, energy_ws=applied,
                        interval_s=dt_s, timestamp=now)


@dataclass(frozen=True)
class LedgerEntry:
    session_id: int
    contract_id: str
    reading: MeterReading


@dataclass
class BillingLedger:
    """Per-contract signed energy account kept by the control center."""

    totals_ws: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)

    def total_kwh(self, contract_id: str) -> float:
        return self.totals_ws.get(contract_id, 0) / WS_PER_KWH

    def total_ws(self, contract_id: str) -> int:
        return self.totals_ws.get(contract_id, 0)

    def to_csv(self) -> str:
        lines = ["session_id,contract_id,timestamp,energy_kwh"]
        for e in self.entries:
            lines.append(f"{e.session_id:016x},{e.contract_id},"
                         f"{e.reading.timestamp:.3f},"
                         f"{e.reading.energy_kwh:.6f}")
        return "\n".join(lines) + "\n"


def bill(ledger: BillingLedger, contract_id: str, session_id: int,
         reading: MeterReading) -> BillingLedger:
    """Account one reading to the contract the session authorized with."""
    ledger.totals_ws[contract_id] = (ledger.totals_ws.get(contract_id, 0)
                                     + reading.energy_ws)
    ledger.entries.append(LedgerEntry(session_id=session_id,
                                      contract_id=contract_id,
                                      reading=reading))
    return ledger


class ControlCenter:
    """Back-end shared by both columns: contract registry, session to
    contract bindings, and the billing ledger."""

    def __init__(self):
        self.contracts: dict[str, bool] = {}
        self.bindings: dict[int, str] = {}
        self.ledger = BillingLedger()

    def register(self, contract_id: str, valid: bool = True) -> None:
        self.contracts[contract_id] = valid

    def validate(self, contract_id: str) -> bool:
        return self.contracts.get(contract_id, False)

    def bind(self, session_id: int, contract_id: str) -> None:
        self.bindings[session_id] = contract_id

    def record(self, session_id: int, reading: MeterReading) -> None:
        contract = self.bindings.get(session_id)
        if contract is None:
            raise UnboundSession(f"session {session_id:x} has no contract")
        bill(self.ledger, contract, session_id, reading)
