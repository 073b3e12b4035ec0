"""
Three-party MDI-QKD session: Alice and Bob send pulses, Charlie announces
Bell-state measurement results, and the two parties reconcile bases over an
authenticated channel, sift and post-process their keys.

The authenticated channel is an in-process message queue. It models the
round structure (send, announce, reconcile) and does not authenticate
anything cryptographically.
"""
import hashlib
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .config import (
    BASES, INTENSITY_ORDER, Basis, ChannelParams, CoincidenceClass, DetectorParams, Party,
    ProtocolConfig, XPsiPlusPolicy,
)
from .core import validate_all
from .exceptions import DomainError, SessionMismatchError
from .models import TALLY_SHAPE, TallyMatrix
from .optics import (
    PSI_MINUS_CODE, PSI_PLUS_CODE, PartyChoices, batch_sizes, batch_streams, charlie_outcomes,
    draw_party_choices, tally_batch,
)
from .tally import merge

logger = logging.getLogger(__name__)


class Round(Enum):
    SEND = "send"
    ANNOUNCE = "announce"
    RECONCILE = "reconcile"


ROUND_ORDER = (Round.SEND, Round.ANNOUNCE, Round.RECONCILE)


@dataclass(frozen=True)
class SessionConfig:
    protocol: ProtocolConfig
    channel: ChannelParams
    detector: DetectorParams
    seed: int
    n_slots: int
    x_psi_plus_policy: XPsiPlusPolicy = XPsiPlusPolicy.KEEP

    def __post_init__(self):
        if self.n_slots < 1:
            raise DomainError(f"n_slots must be at least 1, got {self.n_slots}")

    @property
    def session_id(self) -> str:
        """Stable identifier derived from every setting of the session"""
        payload = json.dumps(asdict(self), sort_keys=True, default=_json_default)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _json_default(value):
    if isinstance(value, Enum):
        return value.value
    raise TypeError(f"Not serializable: {type(value).__name__}")


@dataclass(frozen=True)
class Announcement:
    """Charlie's public report for one slot"""
    slot_index: int
    outcome: CoincidenceClass

    def __post_init__(self):
        if self.outcome is CoincidenceClass.NONE:
            raise DomainError("Only successful projections are announced")


@dataclass
class Message:
    round: Round
    sender: str
    recipient: str
    payload: Dict[str, Any]


class AuthenticatedChannel:
    """In-process message queue delivering messages round by round"""

    def __init__(self):
        self._queues: Dict[Round, Deque[Message]] = {r: deque() for r in ROUND_ORDER}
        self._current = 0
        self.log: List[Message] = []

    def send(self, message: Message) -> None:
        if ROUND_ORDER.index(message.round) < self._current:
            raise DomainError(f"Round {message.round.value} is already closed")
        self._queues[message.round].append(message)
        self.log.append(message)

    def deliver(self, round_: Round, recipient: str) -> List[Message]:
        index = ROUND_ORDER.index(round_)
        if index < self._current:
            raise DomainError(f"Round {round_.value} is already closed")
        self._current = index
        queue = self._queues[round_]
        mine = [m for m in queue if m.recipient == recipient]
        self._queues[round_] = deque(m for m in queue if m.recipient != recipient)
        return mine


@dataclass
class PartyView:
    """What one party knows at the end of a session"""
    party: Party
    session_id: str
    intensity: np.ndarray
    basis: np.ndarray
    bit: np.ndarray
    announced_slots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    announced_outcomes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    peer_basis: Optional[np.ndarray] = None
    peer_intensity: Optional[np.ndarray] = None
    x_psi_plus_policy: XPsiPlusPolicy = XPsiPlusPolicy.KEEP

    @property
    def n_slots(self) -> int:
        return len(self.basis)

    @property
    def announcements(self) -> List[Announcement]:
        return [
            Announcement(int(s), CoincidenceClass.from_code(int(o)))
            for s, o in zip(self.announced_slots, self.announced_outcomes)
        ]

    def receive_announcements(self, payload: Dict[str, Any]) -> None:
        self.announced_slots = np.asarray(payload["slots"], dtype=np.int64)
        self.announced_outcomes = np.asarray(payload["outcomes"], dtype=np.int8)

    def reconciliation_payload(self) -> Dict[str, Any]:
        """Bases and intensities of the announced slots"""
        slots = self.announced_slots
        return {"slots": slots, "basis": self.basis[slots], "intensity": self.intensity[slots]}

    def receive_reconciliation(self, payload: Dict[str, Any]) -> None:
        if not np.array_equal(payload["slots"], self.announced_slots):
            raise SessionMismatchError("Reconciliation covers different slots than the announcements")
        self.peer_basis = np.asarray(payload["basis"])
        self.peer_intensity = np.asarray(payload["intensity"])


@dataclass
class SiftedKey:
    """Retained slots of one party with their bookkeeping"""
    party: Party
    session_id: str
    slots: np.ndarray
    bits: np.ndarray
    basis: np.ndarray
    intensity_a: np.ndarray
    intensity_b: np.ndarray
    outcomes: np.ndarray

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def key_material_mask(self) -> np.ndarray:
        """Z-basis slots where both sent the signal intensity"""
        return (self.basis == Basis.Z.index) & (self.intensity_a == 0) & (self.intensity_b == 0)

    @property
    def estimation_mask(self) -> np.ndarray:
        return ~self.key_material_mask

    def subset(self, mask: np.ndarray) -> "SiftedKey":
        return SiftedKey(
            party=self.party, session_id=self.session_id, slots=self.slots[mask], bits=self.bits[mask],
            basis=self.basis[mask], intensity_a=self.intensity_a[mask], intensity_b=self.intensity_b[mask],
            outcomes=self.outcomes[mask],
        )

    def key_material(self) -> "SiftedKey":
        return self.subset(self.key_material_mask)


def run_session(cfg: SessionConfig,
                party_order: Tuple[Party, Party] = (Party.ALICE, Party.BOB)) -> Tuple[PartyView, PartyView, TallyMatrix]:
    """
    Run all slots of a session and return Alice's view, Bob's view and the
    session tallies.

    Random streams follow the Monte Carlo engine's layout, so the tallies are
    identical to ``run_monte_carlo(cfg.protocol, cfg.channel, cfg.detector,
    cfg.n_slots, cfg.seed)``. ``party_order`` sets which party processes its
    messages first in each round; the outcome does not depend on it.
    """
    validate_all(cfg.protocol, cfg.channel, cfg.detector).raise_if_invalid()
    session_id = cfg.session_id
    logger.info(f"Session {session_id}: {cfg.n_slots} slots, seed={cfg.seed}")

    alice_parts: List[PartyChoices] = []
    bob_parts: List[PartyChoices] = []
    code_parts: List[np.ndarray] = []
    tallies = TallyMatrix.empty()

    # send round: pulses travel to Charlie, who measures
    for b, n in enumerate(batch_sizes(cfg.n_slots)):
        rng_a, rng_b, rng_c = batch_streams(cfg.seed, b)
        alice = draw_party_choices(rng_a, cfg.protocol, Party.ALICE, n)
        bob = draw_party_choices(rng_b, cfg.protocol, Party.BOB, n)
        codes, errors = charlie_outcomes(alice, bob, cfg.protocol, cfg.channel, cfg.detector, rng_c)
        tallies = merge(tallies, tally_batch(alice, bob, codes, errors))
        alice_parts.append(alice)
        bob_parts.append(bob)
        code_parts.append(codes)

    views = {
        Party.ALICE: _make_view(Party.ALICE, session_id, alice_parts, cfg.x_psi_plus_policy),
        Party.BOB: _make_view(Party.BOB, session_id, bob_parts, cfg.x_psi_plus_policy),
    }
    codes = np.concatenate(code_parts)

    channel = AuthenticatedChannel()
    announced = np.flatnonzero(codes)
    for party in Party:
        channel.send(Message(Round.ANNOUNCE, "charlie", party.value,
                             {"slots": announced, "outcomes": codes[announced]}))
    for party in party_order:
        for message in channel.deliver(Round.ANNOUNCE, party.value):
            views[party].receive_announcements(message.payload)

    for party in party_order:
        peer = Party.BOB if party is Party.ALICE else Party.ALICE
        channel.send(Message(Round.RECONCILE, party.value, peer.value, views[party].reconciliation_payload()))
    for party in party_order:
        for message in channel.deliver(Round.RECONCILE, party.value):
            views[party].receive_reconciliation(message.payload)

    logger.info(f"Session {session_id}: {len(announced)} announcement(s)")
    return views[Party.ALICE], views[Party.BOB], tallies


def _make_view(party: Party, session_id: str, parts: List[PartyChoices], policy: XPsiPlusPolicy) -> PartyView:
    return PartyView(
        party=party,
        session_id=session_id,
        intensity=np.concatenate([p.intensity for p in parts]),
        basis=np.concatenate([p.basis for p in parts]),
        bit=np.concatenate([p.bit for p in parts]),
        x_psi_plus_policy=policy,
    )


def _sift_one(view: PartyView, keep: np.ndarray) -> SiftedKey:
    slots = view.announced_slots[keep]
    own_intensity = view.intensity[slots]
    peer_intensity = view.peer_intensity[keep]
    if view.party is Party.ALICE:
        intensity_a, intensity_b = own_intensity, peer_intensity
    else:
        intensity_a, intensity_b = peer_intensity, own_intensity
    return SiftedKey(
        party=view.party, session_id=view.session_id, slots=slots, bits=view.bit[slots].copy(),
        basis=view.basis[slots], intensity_a=intensity_a, intensity_b=intensity_b,
        outcomes=view.announced_outcomes[keep],
    )


def sift(alice_view: PartyView, bob_view: PartyView) -> Tuple[SiftedKey, SiftedKey]:
    """Keep announced slots with equal bases; both keys cover identical slots"""
    if alice_view.session_id != bob_view.session_id:
        raise SessionMismatchError(f"Views from different sessions: {alice_view.session_id} vs {bob_view.session_id}")
    if not np.array_equal(alice_view.announced_slots, bob_view.announced_slots):
        raise SessionMismatchError("Parties received different announcements")
    for view in (alice_view, bob_view):
        if view.peer_basis is None:
            raise SessionMismatchError(f"{view.party.value} has not reconciled bases yet")

    slots = alice_view.announced_slots
    keep = alice_view.basis[slots] == alice_view.peer_basis
    if alice_view.x_psi_plus_policy is XPsiPlusPolicy.DISCARD:
        x_psi_plus = (alice_view.basis[slots] == Basis.X.index) & (alice_view.announced_outcomes == PSI_PLUS_CODE)
        keep &= ~x_psi_plus

    key_a = _sift_one(alice_view, keep)
    key_b = _sift_one(bob_view, keep)
    logger.debug(f"Sifted {len(key_a)} of {len(slots)} announced slot(s)")
    return key_a, key_b


def apply_bit_flip(key_b: SiftedKey, outcomes: Optional[np.ndarray] = None) -> SiftedKey:
    """
    Bob's post-processing: flip on Z-basis slots (psi+ and psi-) and on
    X-basis psi- slots. X-basis psi+ slots are correlated and stay as they are.
    """
    outcomes = key_b.outcomes if outcomes is None else np.asarray(outcomes)
    if len(outcomes) != len(key_b):
        raise SessionMismatchError(f"{len(outcomes)} outcome(s) for a key of length {len(key_b)}")
    if np.any((outcomes != PSI_PLUS_CODE) & (outcomes != PSI_MINUS_CODE)):
        raise DomainError("Every sifted slot needs a psi+ or psi- outcome")

    flip = (key_b.basis == Basis.Z.index) | (outcomes == PSI_MINUS_CODE)
    bits = np.where(flip, 1 - key_b.bits, key_b.bits).astype(key_b.bits.dtype)
    return SiftedKey(
        party=key_b.party, session_id=key_b.session_id, slots=key_b.slots, bits=bits, basis=key_b.basis,
        intensity_a=key_b.intensity_a, intensity_b=key_b.intensity_b, outcomes=outcomes,
    )


def measure_sifted_qber(key_a: SiftedKey, key_b: SiftedKey) -> np.ndarray:
    """
    Disagreement rate per (basis, I_A, I_B) as a (2, 3, 3) array; NaN where
    no slot was retained.
    """
    if len(key_a) != len(key_b) or not np.array_equal(key_a.slots, key_b.slots):
        raise SessionMismatchError(f"Keys are not aligned ({len(key_a)} vs {len(key_b)} slots)")
    cells = key_a.basis.astype(np.int64) * 9 + key_a.intensity_a.astype(np.int64) * 3 + key_a.intensity_b
    size = int(np.prod(TALLY_SHAPE))
    retained = np.bincount(cells, minlength=size).astype(float)
    disagreements = np.bincount(cells[key_a.bits != key_b.bits], minlength=size).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(retained > 0, disagreements / np.where(retained > 0, retained, 1.0), np.nan)
    return rates.reshape(TALLY_SHAPE)


def qber_by_cell(rates: np.ndarray) -> Dict[Tuple[Basis, Any, Any], float]:
    """Keyed view of measure_sifted_qber's array"""
    return {
        (basis, ia, ib): float(rates[basis.index, ia.index, ib.index])
        for basis in BASES for ia in INTENSITY_ORDER for ib in INTENSITY_ORDER
    }


def session_transcript(alice_view: PartyView, bob_view: PartyView) -> Iterator[Dict[str, Any]]:
    """One audit record per slot: both parties' choices and Charlie's announcement"""
    if alice_view.session_id != bob_view.session_id:
        raise SessionMismatchError("Views from different sessions")
    outcomes = dict(zip(alice_view.announced_slots.tolist(), alice_view.announced_outcomes.tolist()))
    for slot in range(alice_view.n_slots):
        code = outcomes.get(slot)
        yield {
            "slot": slot,
            "alice": _choice_record(alice_view, slot),
            "bob": _choice_record(bob_view, slot),
            "announcement": None if code is None else CoincidenceClass.from_code(code).value,
        }


def _choice_record(view: PartyView, slot: int) -> Dict[str, Any]:
    return {
        "intensity": INTENSITY_ORDER[int(view.intensity[slot])].value,
        "basis": BASES[int(view.basis[slot])].value,
        "bit": int(view.bit[slot]),
    }
