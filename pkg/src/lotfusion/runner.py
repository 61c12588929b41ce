"""Actor system driving the counting protocol over a transport.

Every camera node and the sink are sequential actors: each processes one
inbound message at a time and shares no state with anyone else. Two
schedulers are provided:

* a deterministic single-threaded loop (round-robin over actors sorted by
  id) used with the simulated transport, and
* a thread-per-actor loop used with the TCP transport.

Both produce the same report values: message ordering cannot change any
count because the sink only finalizes complete rounds and every mu is a
function of one (node, neighbor, round) triple.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from .detection import Detector, Observation, SyntheticDetector
from .errors import IncompleteRound, ReceiveTimeout
from .geometry import Homography, ImageBounds, MaskPolygon
from .messages import (
    ComputeSignal,
    EtaReport,
    ImageShare,
    InitSignal,
    MaskShare,
    MessageKind,
    MuReport,
    ProtocolMessage,
)
from .protocol import (
    DEFAULT_INSIDE_THRESHOLD,
    DEFAULT_IOU_THRESHOLD,
    CountReport,
    NodeState,
    PairRecord,
    Phase,
    compute_mu,
    node_initialize,
    sink_aggregate,
    sink_global_count,
)
from .registration import RegistrationConfig
from .scenario import ParkingWorld, SequenceSpec, render_observation, true_global_count
from .transport import Endpoint, SimTransport, TcpTransport

log = logging.getLogger(__name__)

SINK_ID = "sink"

INIT_ROUND = 0
DEFAULT_STEP_BUDGET = 100_000
DEFAULT_WALL_TIMEOUT = 60.0


class CameraNodeActor:
    """State machine for one smart camera."""

    def __init__(
        self,
        node_id: str,
        neighbors: tuple[str, ...],
        observer: Callable[[int], Observation],
        detector: Detector,
        endpoint: Endpoint,
        registration: RegistrationConfig,
        tau: float = DEFAULT_IOU_THRESHOLD,
        inside_threshold: float = DEFAULT_INSIDE_THRESHOLD,
        manual_homographies: Mapping[str, Homography] | None = None,
    ) -> None:
        self.node_id = node_id
        self.observer = observer
        self.detector = detector
        self.endpoint = endpoint
        self.registration = registration
        self.tau = tau
        self.inside_threshold = inside_threshold
        self.manual_homographies = dict(manual_homographies or {})

        first = observer(INIT_ROUND)
        self.state = NodeState(node_id=node_id, neighbors=neighbors, bounds=first.bounds)
        self._init_signaled = False
        self._own_features = None
        self._image_shares: dict[str, ImageShare] = {}
        self.current_round: int | None = None
        self.masks: tuple[MaskPolygon, ...] = ()
        self._buffered_masks: dict[tuple[str, int], tuple[MaskPolygon, ...]] = {}

    # -- message handling ------------------------------------------------

    def on_message(self, msg: ProtocolMessage) -> None:
        if msg.kind is MessageKind.INIT_SIGNAL:
            self._on_init_signal(msg)
        elif msg.kind is MessageKind.IMAGE_SHARE:
            self._image_shares[msg.src] = msg.payload
            self._maybe_finish_init(msg.round)
        elif msg.kind is MessageKind.COMPUTE_SIGNAL:
            self._on_compute_signal(msg.round)
        elif msg.kind is MessageKind.MASK_SHARE:
            self._on_mask_share(msg.src, msg.round, msg.payload.masks)
        else:
            log.warning("%s: ignoring unexpected %s", self.node_id, msg.kind.value)

    def _on_init_signal(self, msg: ProtocolMessage) -> None:
        if self._init_signaled:
            return
        self._init_signaled = True
        obs = self.observer(INIT_ROUND)
        self._own_features = obs.landmark_features
        share = ImageShare(bounds=obs.bounds, features=obs.landmark_features)
        for j in self.state.neighbors:
            self.endpoint.send(j, ProtocolMessage.wrap(share, self.node_id, j, msg.round))
        self._maybe_finish_init(msg.round)

    def _maybe_finish_init(self, round_index: int) -> None:
        if (
            not self._init_signaled
            or self.state.phase is not Phase.IDLE
            or set(self.state.neighbors) - set(self._image_shares)
        ):
            return
        self.state = node_initialize(
            self.state,
            self._own_features,
            self._image_shares,
            self.registration,
            manual=self.manual_homographies,
        )
        ack = InitSignal(ack=True, failed=self.state.failed)
        self.endpoint.send(
            SINK_ID, ProtocolMessage.wrap(ack, self.node_id, SINK_ID, round_index)
        )

    def _on_compute_signal(self, round_index: int) -> None:
        if self.state.phase is Phase.IDLE:
            log.error("%s: compute signal before initialization; ignoring", self.node_id)
            return
        self.current_round = round_index
        obs = self.observer(round_index)
        self.masks = self.detector(obs, round_index)
        eta = EtaReport(eta=len(self.masks))
        self.endpoint.send(
            SINK_ID, ProtocolMessage.wrap(eta, self.node_id, SINK_ID, round_index)
        )
        share = MaskShare(masks=self.masks)
        for j in self.state.neighbors:
            self.endpoint.send(j, ProtocolMessage.wrap(share, self.node_id, j, round_index))
        for (src, rnd) in sorted(self._buffered_masks):
            if rnd == round_index:
                self._handle_masks(src, self._buffered_masks.pop((src, rnd)))
            elif rnd < round_index:
                del self._buffered_masks[(src, rnd)]  # stale, never needed again

    def _on_mask_share(self, src: str, round_index: int, masks: tuple[MaskPolygon, ...]) -> None:
        if self.current_round is None or round_index > self.current_round:
            # Neighbor got its compute signal first; hold until ours lands.
            self._buffered_masks[(src, round_index)] = masks
            return
        if round_index < self.current_round:
            log.debug("%s: dropping stale round-%d masks from %s", self.node_id, round_index, src)
            return
        self._handle_masks(src, masks)

    def _handle_masks(self, src: str, masks: tuple[MaskPolygon, ...]) -> None:
        h = self.state.homographies.get(src)
        if h is None:
            return  # pair flagged failed at init; sink knows
        mu = compute_mu(
            self.masks, masks, h, self.tau, self.state.bounds, self.inside_threshold
        )
        report = MuReport(j=src, i=self.node_id, mu=mu)
        assert self.current_round is not None
        self.endpoint.send(
            SINK_ID, ProtocolMessage.wrap(report, self.node_id, SINK_ID, self.current_round)
        )


@dataclass
class _RoundBook:
    etas: dict[str, int] = field(default_factory=dict)
    mus: dict[tuple[str, str], int] = field(default_factory=dict)  # (j, i) -> mu


class SinkActor:
    """Collects per-round reports and finalizes the global count."""

    def __init__(
        self,
        node_ids: tuple[str, ...],
        expected_pairs: tuple[tuple[str, str], ...],
        endpoint: Endpoint,
        aggregation: str = "mean",
    ) -> None:
        self.node_ids = tuple(sorted(node_ids))
        self.expected_pairs = tuple(sorted(tuple(sorted(p)) for p in expected_pairs))
        self.endpoint = endpoint
        self.aggregation = aggregation
        self.acked: set[str] = set()
        self.failed_directions: set[tuple[str, str]] = set()  # (j, i): i couldn't register j
        self.round: int | None = None
        self.book = _RoundBook()

    # -- message handling ------------------------------------------------

    def on_message(self, msg: ProtocolMessage) -> None:
        if msg.kind is MessageKind.INIT_SIGNAL and msg.payload.ack:
            self.acked.add(msg.src)
            for j in msg.payload.failed:
                self.failed_directions.add((j, msg.src))
        elif msg.kind is MessageKind.ETA_REPORT:
            if msg.round == self.round:
                self.book.etas[msg.src] = msg.payload.eta
            else:
                log.debug("sink: dropping stale eta for round %d", msg.round)
        elif msg.kind is MessageKind.MU_REPORT:
            if msg.round == self.round:
                self.book.mus[(msg.payload.j, msg.payload.i)] = msg.payload.mu
            else:
                log.debug("sink: dropping stale mu for round %d", msg.round)
        else:
            log.warning("sink: ignoring unexpected %s", msg.kind.value)

    # -- orchestration hooks ----------------------------------------------

    def broadcast_init(self) -> None:
        for node in self.node_ids:
            self.endpoint.send(
                node, ProtocolMessage.wrap(InitSignal(), SINK_ID, node, INIT_ROUND)
            )

    def initialization_complete(self) -> bool:
        return self.acked == set(self.node_ids)

    def failed_pairs(self) -> tuple[tuple[str, str], ...]:
        """Unordered pairs where neither direction registered."""
        out = []
        for a, b in self.expected_pairs:
            if (a, b) in self.failed_directions and (b, a) in self.failed_directions:
                out.append((a, b))
        return tuple(out)

    def start_round(self, round_index: int) -> None:
        self.round = round_index
        self.book = _RoundBook()
        for node in self.node_ids:
            self.endpoint.send(
                node, ProtocolMessage.wrap(ComputeSignal(), SINK_ID, node, round_index)
            )

    def _expected_directions(self) -> set[tuple[str, str]]:
        expected = set()
        for a, b in self.expected_pairs:
            for j, i in ((a, b), (b, a)):
                if (j, i) not in self.failed_directions:
                    expected.add((j, i))
        return expected

    def round_complete(self) -> bool:
        if set(self.book.etas) != set(self.node_ids):
            return False
        return self._expected_directions() <= set(self.book.mus)

    def build_report(self, ground_truth: int | None = None) -> CountReport:
        """Finalize the current round, flagging whatever is missing."""
        assert self.round is not None
        complete = self.round_complete()
        pairs = []
        mu_bars = []
        for a, b in self.expected_pairs:
            mu_ab = self.book.mus.get((a, b))
            mu_ba = self.book.mus.get((b, a))
            flags: list[str] = []
            if (a, b) in self.failed_pairs():
                mu_bar = 0.0
                flags.append("registration_failed")
            elif mu_ab is None and mu_ba is None:
                mu_bar = 0.0
                flags.append("missing")
            else:
                if mu_ab is None or mu_ba is None:
                    flags.append("one_sided")
                mu_bar = sink_aggregate(mu_ab, mu_ba, self.aggregation)
            pairs.append(
                PairRecord(a=a, b=b, mu_ab=mu_ab, mu_ba=mu_ba, mu_bar=mu_bar, flags=tuple(flags))
            )
            mu_bars.append(mu_bar)
        # Nodes that never reported contribute 0 and the report is marked
        # incomplete; a fully silent round still yields a (useless) report
        # rather than an exception, so timeouts degrade gracefully.
        etas = {node: self.book.etas.get(node, 0) for node in self.node_ids}
        value, rounded = sink_global_count(etas, mu_bars)
        return CountReport(
            round=self.round,
            etas=etas,
            pairs=tuple(pairs),
            aggregation=self.aggregation,
            global_count=value,
            rounded_count=rounded,
            ground_truth=ground_truth,
            complete=complete,
            failed_pairs=self.failed_pairs(),
        )


@dataclass(frozen=True)
class RoundTrace:
    """Per-round internals the evaluation baselines need."""

    round: int
    masks: dict[str, tuple[MaskPolygon, ...]]
    homographies: dict[str, dict[str, Homography]]  # node -> neighbor -> H(neighbor->node)
    bounds: dict[str, ImageBounds]
    ground_truth: int | None


class ProtocolRunner:
    """Builds the actor system for a sequence and drives initialization
    plus counting rounds over either transport."""

    def __init__(
        self,
        spec: SequenceSpec,
        seed: int = 0,
        aggregation: str = "mean",
        tau: float = DEFAULT_IOU_THRESHOLD,
        inside_threshold: float = DEFAULT_INSIDE_THRESHOLD,
        transport: str = "sim",
        registration: RegistrationConfig | None = None,
        detector_factory: Callable[[str], Detector] | None = None,
        step_budget: int = DEFAULT_STEP_BUDGET,
        wall_timeout: float = DEFAULT_WALL_TIMEOUT,
        sim_latency: int = 2,
        world: ParkingWorld | None = None,
        manual_homographies: Mapping[tuple[str, str], Homography] | None = None,
    ) -> None:
        self.spec = spec
        self.seed = seed
        self.step_budget = step_budget
        self.wall_timeout = wall_timeout
        self.world = spec.build_world() if world is None else world
        self._round_worlds: dict[int, ParkingWorld] = {}

        if transport == "sim":
            self.transport: SimTransport | TcpTransport = SimTransport(
                seed=seed, max_latency=sim_latency
            )
            self._threaded = False
        elif transport == "tcp":
            self.transport = TcpTransport()
            self._threaded = True
        else:
            raise ValueError(f"unknown transport {transport!r}")

        registration = registration or RegistrationConfig()
        noise = replace(spec.noise, rng_seed=seed)
        default_factory: Callable[[str], Detector] = lambda _node: SyntheticDetector(noise)
        make_detector = detector_factory or default_factory

        sink_endpoint = self.transport.register(SINK_ID)
        self.sink = SinkActor(
            node_ids=self.world.camera_ids(),
            expected_pairs=self.world.neighbor_pairs(),
            endpoint=sink_endpoint,
            aggregation=aggregation,
        )
        self._sink_endpoint = sink_endpoint

        manual = manual_homographies or {}
        self.nodes: dict[str, CameraNodeActor] = {}
        self._endpoints: dict[str, Endpoint] = {SINK_ID: sink_endpoint}
        for cam in self.world.cameras:
            endpoint = self.transport.register(cam.camera_id)
            observer = self._make_observer(cam.camera_id)
            # (node, neighbor) entries substitute for failed automatic
            # registration: the map they carry takes neighbor-plane
            # coordinates into the node's plane.
            node_manual = {
                neighbor: h
                for (node, neighbor), h in manual.items()
                if node == cam.camera_id
            }
            self.nodes[cam.camera_id] = CameraNodeActor(
                node_id=cam.camera_id,
                neighbors=cam.neighbors,
                observer=observer,
                detector=make_detector(cam.camera_id),
                endpoint=endpoint,
                registration=registration,
                tau=tau,
                inside_threshold=inside_threshold,
                manual_homographies=node_manual,
            )
            self._endpoints[cam.camera_id] = endpoint

        self._actors: dict[str, CameraNodeActor | SinkActor] = {SINK_ID: self.sink}
        self._actors.update(self.nodes)
        self._order = sorted(self._actors)
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._wake = threading.Event()
        if self._threaded:
            self._start_threads()

    # -- world plumbing -----------------------------------------------------

    def _world_for_round(self, round_index: int) -> ParkingWorld:
        if round_index not in self._round_worlds:
            self._round_worlds[round_index] = self.world.with_round_occupancy(
                round_index, self.spec.occupancy_rule
            )
        return self._round_worlds[round_index]

    def _make_observer(self, camera_id: str) -> Callable[[int], Observation]:
        def observe(round_index: int) -> Observation:
            return render_observation(self._world_for_round(round_index), camera_id, round_index)

        return observe

    def ground_truth(self, round_index: int) -> int:
        return true_global_count(self._world_for_round(round_index))

    # -- schedulers ----------------------------------------------------------

    def _pump_sim(self, done: Callable[[], bool]) -> bool:
        steps = 0
        while not done():
            if steps >= self.step_budget:
                return False
            for actor_id in self._order:
                msg = self._endpoints[actor_id].try_receive()
                if msg is not None:
                    self._actors[actor_id].on_message(msg)
            assert isinstance(self.transport, SimTransport)
            self.transport.advance(1)
            steps += 1
        return True

    def _actor_loop(self, actor_id: str) -> None:
        endpoint = self._endpoints[actor_id]
        actor = self._actors[actor_id]
        while not self._stop.is_set():
            try:
                msg = endpoint.receive(budget=0.05)
            except ReceiveTimeout:
                continue
            try:
                actor.on_message(msg)
            except Exception:
                log.exception("%s: handler crashed", actor_id)
            self._wake.set()

    def _start_threads(self) -> None:
        for actor_id in self._order:
            thread = threading.Thread(
                target=self._actor_loop, args=(actor_id,), name=f"actor-{actor_id}", daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def _pump_threads(self, done: Callable[[], bool]) -> bool:
        deadline = time.monotonic() + self.wall_timeout
        while not done():
            if time.monotonic() > deadline:
                return False
            self._wake.wait(timeout=0.05)
            self._wake.clear()
        return True

    def _pump(self, done: Callable[[], bool]) -> bool:
        if self._threaded:
            return self._pump_threads(done)
        return self._pump_sim(done)

    # -- public API ------------------------------------------------------------

    def initialize(self) -> None:
        """Run the one-time registration phase (broadcast + acks)."""
        self.sink.broadcast_init()
        if not self._pump(self.sink.initialization_complete):
            raise IncompleteRound("initialization did not complete within budget")
        if self.sink.failed_pairs():
            log.warning("failed pairs after initialization: %s", self.sink.failed_pairs())

    def run_round(self, round_index: int) -> tuple[CountReport, RoundTrace]:
        """One sink-triggered counting round; flags the report on timeout."""
        self.sink.start_round(round_index)
        finished = self._pump(self.sink.round_complete)
        if not finished:
            log.error("round %d timed out; emitting partial report", round_index)
        report = self.sink.build_report(ground_truth=self.ground_truth(round_index))
        trace = RoundTrace(
            round=round_index,
            masks={nid: node.masks for nid, node in self.nodes.items()},
            homographies={
                nid: dict(node.state.homographies) for nid, node in self.nodes.items()
            },
            bounds={nid: node.state.bounds for nid, node in self.nodes.items()},
            ground_truth=report.ground_truth,
        )
        return report, trace

    def run(self, rounds: int | None = None) -> list[tuple[CountReport, RoundTrace]]:
        """Initialization followed by the requested number of rounds."""
        rounds = self.spec.rounds if rounds is None else rounds
        self.initialize()
        return [self.run_round(r) for r in range(rounds)]

    def close(self) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=2.0)
        if isinstance(self.transport, TcpTransport):
            self.transport.close()

    def __enter__(self) -> ProtocolRunner:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
