"""Deterministic simulator for the iterated authenticated Byzantine model and its no-equivocation restriction."""

from .model import (
    LAMBDA,
    ParticipationSchedule,
    ReceiveView,
    RoundParticipation,
    SignedMessage,
    Tagged,
    is_growing,
    plurality_unique,
    strict_majority,
    validate_schedule,
)

__all__ = [
    "LAMBDA",
    "ParticipationSchedule",
    "ReceiveView",
    "RoundParticipation",
    "SignedMessage",
    "Tagged",
    "is_growing",
    "plurality_unique",
    "strict_majority",
    "validate_schedule",
]
