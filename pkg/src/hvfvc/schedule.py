"""GoP frame-type scheduling and the multiplicative lambda controller."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

UP_FACTOR = 1.1
DOWN_FACTOR = 0.9
BAND = 0.10


def schedule_frame_types(sequence_length: int, gop: int) -> list[str]:
    """``I`` at 0, ``cI`` at every multiple of ``gop``, ``P`` elsewhere."""
    if sequence_length < 1 or gop < 1:
        raise ValueError(f"sequence_length and gop must be positive, got {sequence_length}, {gop}")
    kinds = []
    for t in range(sequence_length):
        if t == 0:
            kinds.append("I")
        elif t % gop == 0:
            kinds.append("cI")
        else:
            kinds.append("P")
    return kinds


@dataclass(frozen=True)
class RateControlState:
    lam: float
    target_bpp: float
    check_interval: int = 1000
    history: tuple = field(default_factory=tuple)  # (step, measured_bpp, lam after update)

    def __post_init__(self):
        if self.lam <= 0 or self.target_bpp <= 0:
            raise ValueError("lambda and target_bpp must be positive")


def rate_control_step(state: RateControlState, measured_bpp: float, step: int | None = None) -> RateControlState:
    """Scale lambda by 1.1 above 110% of target, by 0.9 below 90%, else keep it."""
    if not measured_bpp > 0:
        raise ValueError(f"measured bpp must be positive, got {measured_bpp}")
    lam = state.lam
    if measured_bpp > (1 + BAND) * state.target_bpp:
        lam = lam * UP_FACTOR
    elif measured_bpp < (1 - BAND) * state.target_bpp:
        lam = lam * DOWN_FACTOR
    if step is None:
        step = state.history[-1][0] + state.check_interval if state.history else state.check_interval
    elif state.history and step <= state.history[-1][0]:
        raise ValueError("rate-control steps must increase")
    return replace(state, lam=lam, history=state.history + ((step, float(measured_bpp), lam),))
