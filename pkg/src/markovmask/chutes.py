"""Chutes and Ladders as a Markov chain, for one player or two.

Positions run from 0 (off the board) to ``squares``; squares that start a
chute or ladder are never occupied, so the standard 100-square board has
82 states. Two players move in rounds: one round is one spin each, and the
pair is the Kronecker square of the single-player chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import errors
from .chain import (DistributionVector, StateClassification, StochasticChain,
                    classify_states, kron_compose, kron_distribution, point_mass,
                    validate_chain)
from .masks import Mask, mask_lead_changes_2p, mask_steps_to_absorption

OVERSHOOT_RULES = ("stay", "bounce")

# reference values for the standard board, 4-5 significant digits
REFERENCE_VALUES = {
    1: {"second_to_last": 1.2958, "large_ladder": 0.5896, "game_length": 39.598},
    2: {"second_to_last": 1.1166, "large_ladder": 0.8180, "game_length": 26.513,
        "lead_changes": 3.9679, "first_player_advantage": 0.0156,
        "first_player_wins": 0.5078},
}


@dataclass(frozen=True)
class BoardSpec:
    squares: int = 100
    jumps: Mapping[int, int] = field(default_factory=dict)
    spinner: int = 6
    overshoot: str = "stay"

    def __post_init__(self):
        object.__setattr__(self, "jumps",
                           {int(k): int(v) for k, v in dict(self.jumps).items()})
        self.validate()

    def validate(self) -> None:
        if self.squares < 1:
            raise errors.InvalidBoard("board needs at least one square")
        if self.spinner < 1:
            raise errors.InvalidBoard("spinner must have at least one value")
        if self.overshoot not in OVERSHOOT_RULES:
            raise errors.InvalidBoard(f"overshoot must be one of {OVERSHOOT_RULES}")
        for src, dst in self.jumps.items():
            if not 1 <= src < self.squares:
                raise errors.InvalidBoard(f"jump source {src} off the board")
            if not 0 <= dst <= self.squares:
                raise errors.InvalidBoard(f"jump target {dst} off the board")
            if src == dst:
                raise errors.InvalidBoard(f"jump {src} -> {dst} goes nowhere")
            if dst in self.jumps:
                raise errors.InvalidBoard(f"jump {src} -> {dst} lands on another jump")

    @property
    def positions(self) -> list[int]:
        return [s for s in range(self.squares + 1) if s not in self.jumps]

    @property
    def largest_ladder(self) -> tuple[int, int] | None:
        ladders = [(dst - src, src, dst) for src, dst in self.jumps.items() if dst > src]
        if not ladders:
            return None
        _, src, dst = max(ladders)
        return src, dst

    def to_dict(self) -> dict:
        return {"squares": self.squares, "spinner": self.spinner,
                "overshoot": self.overshoot,
                "jumps": {str(k): v for k, v in sorted(self.jumps.items())}}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "BoardSpec":
        try:
            return cls(squares=int(doc["squares"]), jumps=doc.get("jumps", {}),
                       spinner=int(doc.get("spinner", 6)),
                       overshoot=doc.get("overshoot", "stay"))
        except (KeyError, TypeError, ValueError) as exc:
            raise errors.InvalidBoard(f"bad board document: {exc}") from None


def standard_board() -> BoardSpec:
    """The commercial 100-square board with 9 ladders and 10 chutes."""
    text = resources.files("markovmask.data").joinpath("standard_board.json").read_text()
    return BoardSpec.from_dict(json.loads(text))


def load_board(path) -> BoardSpec:
    with open(path) as fh:
        return BoardSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class Spin:
    source: int
    value: int
    landing: int
    dest: int
    overshoot: bool


def spins(board: BoardSpec) -> list[Spin]:
    """Every (position, spinner value) outcome of a single move."""
    out = []
    for s in board.positions:
        if s == board.squares:
            continue
        for d in range(1, board.spinner + 1):
            land = s + d
            over = land > board.squares
            if over:
                land = s if board.overshoot == "stay" else max(0, 2 * board.squares - land)
            out.append(Spin(s, d, land, board.jumps.get(land, land), over))
    return out


SINGLE_EVENTS = ("game_length", "second_to_last", "large_ladder")
PAIR_EVENTS = SINGLE_EVENTS + ("lead_changes", "first_player_advantage",
                               "first_player_wins")


def _event_weight(board: BoardSpec, event: str, spin: Spin) -> float:
    if event == "game_length":
        return 1.0
    if event == "second_to_last":
        # spinning too much on the square before the last one
        return float(spin.source == board.squares - 1 and spin.overshoot)
    if event == "large_ladder":
        ladder = board.largest_ladder
        return float(ladder is not None and not spin.overshoot
                     and spin.landing == ladder[0])
    raise KeyError(event)


@dataclass(frozen=True, eq=False)
class ChutesModel:
    board: BoardSpec
    players: int
    chain: StochasticChain
    classification: StateClassification
    mu: DistributionVector
    masks: dict[str, Mask]
    single: "ChutesModel | None" = None

    @property
    def reference(self) -> dict[str, float]:
        return REFERENCE_VALUES.get(self.players, {})


def _single(board: BoardSpec) -> ChutesModel:
    pos = board.positions
    idx = {s: k for k, s in enumerate(pos)}
    n = len(pos)
    p = 1.0 / board.spinner
    T = np.zeros((n, n))
    T[idx[board.squares], idx[board.squares]] = 1.0
    outcomes = spins(board)
    for sp_ in outcomes:
        T[idx[sp_.dest], idx[sp_.source]] += p
    chain = validate_chain(T, [str(s) for s in pos])
    cl = classify_states(chain)
    masks = {"game_length": _relabel(mask_steps_to_absorption(cl), "game_length")}
    for event in ("second_to_last", "large_ladder"):
        W = np.zeros((n, n))
        for sp_ in outcomes:
            W[idx[sp_.dest], idx[sp_.source]] += p * _event_weight(board, event, sp_)
        with np.errstate(divide="ignore", invalid="ignore"):
            W = np.where(T > 0, W / np.where(T > 0, T, 1.0), 0.0)
        masks[event] = Mask(event, n, matrix=sp.csr_array(W),
                            chain_token=chain.token)
    return ChutesModel(board, 1, chain, cl, point_mass(chain, "0"), masks)


def _relabel(mask: Mask, kind: str) -> Mask:
    return Mask(kind, mask.n, matrix=mask.matrix, fn=mask.fn,
                time_average_only=mask.time_average_only,
                chain_token=mask.chain_token, meta=dict(mask.meta))


def _pair(single: ChutesModel) -> ChutesModel:
    n0 = single.chain.n
    chain = kron_compose(single.chain, single.chain)
    cl = classify_states(chain)
    final = n0 - 1  # the last square is the last position
    token = chain.token

    def live(cols):
        return (cols // n0 != final) & (cols % n0 != final)

    def per_player(W):
        def fn(rows, cols):
            i1, i2 = rows // n0, rows % n0
            j1, j2 = cols // n0, cols % n0
            return np.where(live(cols), W[i1, j1] + W[i2, j2], 0.0)
        return fn

    masks = {}
    masks["game_length"] = Mask(
        "game_length", chain.n, fn=lambda r, c: live(c).astype(float),
        chain_token=token)
    for event in ("second_to_last", "large_ladder"):
        W = single.masks[event].dense()
        W.setflags(write=False)
        masks[event] = Mask(event, chain.n, fn=per_player(W), chain_token=token)
    masks["lead_changes"] = _relabel(
        mask_lead_changes_2p(cl, n0, ordering=[float(s) for s in single.chain.labels]),
        "lead_changes")
    masks["first_player_advantage"] = Mask(
        "first_player_advantage", chain.n,
        fn=lambda r, c: (live(c) & (r // n0 == final) & (r % n0 == final)).astype(float),
        chain_token=token)
    masks["first_player_wins"] = Mask(
        "first_player_wins", chain.n,
        fn=lambda r, c: (live(c) & (r // n0 == final)).astype(float),
        chain_token=token)
    mu = kron_distribution(single.mu, single.mu)
    return ChutesModel(single.board, 2, chain, cl, mu, masks, single)


def build_chutes_chain(board: BoardSpec | None = None, players: int = 1) -> ChutesModel:
    """Chain, start distribution and event masks for the game.

    Events: ``game_length``, ``second_to_last`` (overshooting from the
    square before the last), ``large_ladder`` (climbing the longest ladder);
    for two players also ``lead_changes``, ``first_player_advantage``
    (both finish in the same round, so the first player wins by moving
    first) and ``first_player_wins``. Per-player events are summed over
    both players and stop counting once the game is decided.
    """
    board = board or standard_board()
    if players not in (1, 2):
        raise errors.InvalidBoard("players must be 1 or 2")
    single = _single(board)
    return single if players == 1 else _pair(single)
