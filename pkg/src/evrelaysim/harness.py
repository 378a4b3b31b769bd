"""Batch execution and reporting.

build_world wires one simulation run from a Scenario; run_scenario executes
`runs` independent seeded runs (seed, seed+1, ...) and aggregates verdicts,
RTT statistics, billing, and abuse flags. emit_report writes the per-run
and aggregate CSVs plus the billing ledger; with the text format it adds a
human-readable summary. Outputs are deterministic byte for byte for a given
(scenario, seed).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .attacker import (
    EVASION_NONE,
    MODE_BRIDGE,
    MODE_CROSS,
    AttackExecutor,
    RelayDevice,
)
from .guard import VERDICT_ACCEPT
from .messages import ChargeSchedule
from .netsim import Network, make_rng
from .nodes import EvNode, SeNode, World
from .power import Battery, ControlCenter, EvsePower
from .scenario import (
    ConfigError,
    Scenario,
    TOPO_BRIDGING,
    TOPO_CROSS,
    TOPO_DIRECT,
)
from .session import Certificate, ContractCredential

VICTIM_EV = "EV-A"
ATTACKER_EV = "EV-B"
VICTIM_SE = "SE-A"
ATTACKER_SE = "SE-B"
DEV_1 = "DEV-1"
DEV_2 = "DEV-2"


def build_world(sc: Scenario, run_seed: int) -> World:
    """Instantiate nodes, links, and devices for one run of a scenario."""
    sc.validate()
    net = Network(make_rng(run_seed), trace=sc.trace)
    cc = ControlCenter()
    world = World(net, cc)

    guard_cfg = sc.guard if sc.guard_enabled else None
    cal = sc.links

    def make_ev(node_id: str, spec, stop_after) -> EvNode:
        cred = ContractCredential(contract_id=spec.contract_id,
                                  certificate_id=spec.cert_id,
                                  valid=spec.cert_valid)
        cc.register(spec.contract_id, spec.cert_valid)
        node = EvNode(
            node_id, world, cred,
            battery=Battery.from_kwh(spec.battery_kwh, spec.soc),
            desired_schedule=ChargeSchedule.from_kwh(
                spec.target_kwh, spec.max_power_kw, spec.departure_s),
            guard_cfg=guard_cfg,
            stop_after_s=stop_after,
            sdp_retry_interval_s=spec.sdp_retry_interval_s,
            sdp_max_retries=spec.sdp_max_retries,
            auto_session=spec.auto_session,
        )
        return world.add_ev(node)

    def make_se(node_id: str, spec) -> SeNode:
        evse = EvsePower(evse_id=spec.evse_id,
                         max_power_w=int(round(spec.max_power_kw * 1000)),
                         bidirectional=spec.bidirectional)
        node = SeNode(node_id, world, Certificate(spec.cert_id, spec.cert_valid),
                      evse, cc, guard_cfg,
                      metering_interval_s=sc.metering_interval_s)
        return world.add_se(node)

    victim_stop = None if sc.victim_returns_at_s is not None \
        else sc.session_duration_s
    ev_a = make_ev(VICTIM_EV, sc.victim, victim_stop)
    se_a = make_se(VICTIM_SE, sc.evse_a)
    world.attach(VICTIM_EV, VICTIM_SE)

    if sc.topology == TOPO_DIRECT:
        link = net.add_link(VICTIM_EV, VICTIM_SE, cal.cable)
        ev_a.link = link
        se_a.link = link

    elif sc.topology == TOPO_BRIDGING:
        dev = RelayDevice(DEV_1, mode=MODE_BRIDGE, evasion=sc.evasion,
                          evasion_alphabet=sc.evasion_alphabet
                          or sc.guard.alphabet,
                          proc_delay_s=cal.proc_delay_s)
        world.add_dev(dev)
        ev_seg = net.add_link(VICTIM_EV, DEV_1, cal.cable_segment)
        se_seg = net.add_link(DEV_1, VICTIM_SE, cal.cable_segment)
        dev.wire(ev_seg, se_seg)
        ev_a.link = ev_seg
        se_a.link = se_seg

    else:  # TOPO_CROSS
        attacker_stop = None if sc.attack_script is not None \
            else sc.session_duration_s
        ev_b = make_ev(ATTACKER_EV, sc.attacker, attacker_stop)
        se_b = make_se(ATTACKER_SE, sc.evse_b)
        world.attach(ATTACKER_EV, ATTACKER_SE)
        alphabet = sc.evasion_alphabet or sc.guard.alphabet
        dev1 = RelayDevice(DEV_1, mode=MODE_CROSS, evasion=sc.evasion,
                           evasion_alphabet=alphabet,
                           proc_delay_s=cal.proc_delay_s)
        dev2 = RelayDevice(DEV_2, mode=MODE_CROSS, evasion=sc.evasion,
                           evasion_alphabet=alphabet,
                           proc_delay_s=cal.proc_delay_s)
        world.add_dev(dev1)
        world.add_dev(dev2)
        ev_a_seg = net.add_link(VICTIM_EV, DEV_1, cal.cable_segment)
        se_a_seg = net.add_link(DEV_1, VICTIM_SE, cal.cable_segment)
        ev_b_seg = net.add_link(ATTACKER_EV, DEV_2, cal.cable_segment)
        se_b_seg = net.add_link(DEV_2, ATTACKER_SE, cal.cable_segment)
        peer = net.add_link(DEV_1, DEV_2, sc.peer_model())
        dev1.wire(ev_a_seg, se_a_seg, peer)
        dev2.wire(ev_b_seg, se_b_seg, peer)
        ev_a.link = ev_a_seg
        se_a.link = se_a_seg
        ev_b.link = ev_b_seg
        se_b.link = se_b_seg

    world.schedule_plug(VICTIM_EV, sc.victim_plug_at_s)
    if sc.victim_returns_at_s is not None:
        world.schedule_stop(VICTIM_EV, sc.victim_returns_at_s)
    if sc.topology == TOPO_CROSS and sc.attack_script is None:
        world.schedule_plug(ATTACKER_EV, sc.attacker_plug_at_s)
    return world


@dataclass
class RunResult:
    """Everything recorded from a single seeded run."""

    run_id: int
    seed: int
    verdict: str | None
    mu_s: float | None
    sigma_s: float | None
    guard_duration_s: float | None
    billed_ws: dict
    battery_delta_ws: dict
    meter_ws: dict
    abuse_flags: dict
    ledger_entries: list
    sim_end_s: float
    events: int

    @property
    def detected(self) -> bool:
        return self.verdict is not None and self.verdict != VERDICT_ACCEPT


def run_one(sc: Scenario, run_index: int = 0) -> RunResult:
    """Execute one seeded run and collect its result."""
    seed = sc.seed + run_index
    world = build_world(sc, seed)
    initial = {ev_id: ev.battery.charge_ws for ev_id, ev in world.evs.items()}

    if sc.attack_script is not None:
        executor = AttackExecutor(world, sc.attack_script,
                                  attacker_ev_id=ATTACKER_EV,
                                  victim_ev_id=VICTIM_EV)
        executor.start()
    world.run(until=sc.horizon_s)

    victim = world.evs[VICTIM_EV]
    meter_ws: dict[str, int] = {}
    for entry in world.cc.ledger.entries:
        meter_ws[entry.reading.evse_id] = (
            meter_ws.get(entry.reading.evse_id, 0) + entry.reading.energy_ws)
    return RunResult(
        run_id=run_index,
        seed=seed,
        verdict=victim.verdict.outcome if victim.verdict else None,
        mu_s=victim.verdict.mu_s if victim.verdict else None,
        sigma_s=victim.verdict.sigma_s if victim.verdict else None,
        guard_duration_s=victim.guard_duration_s,
        billed_ws=dict(world.cc.ledger.totals_ws),
        battery_delta_ws={ev_id: ev.battery.charge_ws - initial[ev_id]
                          for ev_id, ev in world.evs.items()},
        meter_ws=meter_ws,
        abuse_flags={ev_id: sorted(ev.battery.abuse_flags)
                     for ev_id, ev in world.evs.items()
                     if ev.battery.abuse_flags},
        ledger_entries=list(world.cc.ledger.entries),
        sim_end_s=world.net.clock.now,
        events=world.net.events_processed,
    )


def percentile_nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th smallest value."""
    if not len(values):
        raise ValueError("empty sample")
    ordered = sorted(values)
    rank = math.ceil(p * len(ordered))
    return ordered[max(rank, 1) - 1]


@dataclass
class ScenarioReport:
    """Per-run records plus the aggregate bands and rates."""

    scenario: Scenario
    results: list = field(default_factory=list)

    def _values(self, attr: str) -> list:
        return [getattr(r, attr) for r in self.results
                if getattr(r, attr) is not None]

    @property
    def mean_mu_s(self) -> float | None:
        v = self._values("mu_s")
        return float(np.mean(v)) if v else None

    @property
    def p99_mu_s(self) -> float | None:
        v = self._values("mu_s")
        return percentile_nearest_rank(v, 0.99) if v else None

    @property
    def mean_sigma_s(self) -> float | None:
        v = self._values("sigma_s")
        return float(np.mean(v)) if v else None

    @property
    def p99_sigma_s(self) -> float | None:
        v = self._values("sigma_s")
        return percentile_nearest_rank(v, 0.99) if v else None

    @property
    def verdict_counts(self) -> dict:
        counts: dict[str, int] = {}
        for r in self.results:
            if r.verdict is not None:
                counts[r.verdict] = counts.get(r.verdict, 0) + 1
        return counts

    @property
    def detection_rate(self) -> float | None:
        if not self.scenario.is_attack:
            return None
        verdicts = [r for r in self.results if r.verdict is not None]
        if not verdicts:
            return None
        return sum(r.detected for r in verdicts) / len(verdicts)

    @property
    def false_positive_rate(self) -> float | None:
        if self.scenario.is_attack:
            return None
        verdicts = [r for r in self.results if r.verdict is not None]
        if not verdicts:
            return None
        return sum(r.detected for r in verdicts) / len(verdicts)

    @property
    def billed_totals_ws(self) -> dict:
        totals: dict[str, int] = {}
        for r in self.results:
            for contract, ws in r.billed_ws.items():
                totals[contract] = totals.get(contract, 0) + ws
        return totals

    @property
    def abuse_flag_counts(self) -> dict:
        counts: dict[str, int] = {}
        for r in self.results:
            for flags in r.abuse_flags.values():
                for f in flags:
                    counts[f] = counts.get(f, 0) + 1
        return counts

    def summary_text(self) -> str:
        sc = self.scenario
        lines = [
            f"scenario: {sc.name}",
            f"topology: {sc.topology}",
            f"guard: {'on' if sc.guard_enabled else 'off'}",
            f"runs: {len(self.results)}",
            f"seed: {sc.seed}",
        ]
        if self.mean_mu_s is not None:
            lines += [
                f"mean_mu_s: {self.mean_mu_s:.9f}",
                f"p99_mu_s: {self.p99_mu_s:.9f}",
                f"mean_sigma_s: {self.mean_sigma_s:.9f}",
                f"p99_sigma_s: {self.p99_sigma_s:.9f}",
            ]
        for verdict, n in sorted(self.verdict_counts.items()):
            lines.append(f"verdict_{verdict}: {n}")
        if self.detection_rate is not None:
            lines.append(f"detection_rate: {self.detection_rate:.6f}")
        if self.false_positive_rate is not None:
            lines.append(f"fp_rate: {self.false_positive_rate:.6f}")
        for contract, ws in sorted(self.billed_totals_ws.items()):
            lines.append(f"billed_kwh[{contract}]: {ws / 3_600_000:.6f}")
        for flag, n in sorted(self.abuse_flag_counts.items()):
            lines.append(f"abuse_{flag}: {n}")
        return "\n".join(lines) + "\n"


def run_scenario(sc: Scenario) -> ScenarioReport:
    """Execute every seeded run of the scenario and aggregate."""
    sc.validate()
    report = ScenarioReport(scenario=sc)
    for i in range(sc.runs):
        report.results.append(run_one(sc, i))
    return report


def _fmt(value, spec: str = ".9f") -> str:
    return "" if value is None else format(value, spec)


def emit_report(report: ScenarioReport, out_dir: str,
                fmt: str = "csv") -> list[str]:
    """Write per_run.csv, aggregate.csv, and ledger.csv under out_dir;
    the text format adds summary.txt. Returns the written paths."""
    if fmt not in ("csv", "text"):
        raise ConfigError(f"format: unknown value {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    per_run = os.path.join(out_dir, "per_run.csv")
    with open(per_run, "w") as fh:
        fh.write("run_id,mu_s,sigma_s,verdict\n")
        for r in report.results:
            fh.write(f"{r.run_id},{_fmt(r.mu_s)},{_fmt(r.sigma_s)},"
                     f"{r.verdict or ''}\n")
    paths.append(per_run)

    aggregate = os.path.join(out_dir, "aggregate.csv")
    with open(aggregate, "w") as fh:
        fh.write("scenario,mean_mu,p99_mu,mean_sigma,p99_sigma,"
                 "detection_rate,fp_rate\n")
        fh.write(",".join([
            report.scenario.name,
            _fmt(report.mean_mu_s), _fmt(report.p99_mu_s),
            _fmt(report.mean_sigma_s), _fmt(report.p99_sigma_s),
            _fmt(report.detection_rate, ".6f"),
            _fmt(report.false_positive_rate, ".6f"),
        ]) + "\n")
    paths.append(aggregate)

    ledger = os.path.join(out_dir, "ledger.csv")
    with open(ledger, "w") as fh:
        fh.write("session_id,contract_id,timestamp,energy_kwh\n")
        for r in report.results:
            for e in r.ledger_entries:
                fh.write(f"{e.session_id:016x},{e.contract_id},"
                         f"{e.reading.timestamp:.3f},"
                         f"{e.reading.energy_kwh:.6f}\n")
    paths.append(ledger)

    if fmt == "text":
        summary = os.path.join(out_dir, "summary.txt")
        with open(summary, "w") as fh:
            fh.write(report.summary_text())
        paths.append(summary)
    return paths
