"""Event signing and three-valued verification against a key registry.

The defaults are ECDSA over P-256 with SHA-256 digests, behind a small
signer/verifier interface so the formal behaviour (the TRUE/FALSE/UNKNOWN
verification state) stays algorithm-independent.  The registry is the
in-process stand-in for external key infrastructure: verification uses only
registered, non-revoked public keys, and an unknown or revoked key yields
UNKNOWN rather than FALSE.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec

from .canonical import canonical_serialize
from .errors import SigningError
from .model import AgentId, GovernanceTelemetryEvent, Verified


class EcdsaP256Sha256:
    """Default signature scheme."""

    name = "ecdsa-p256-sha256"

    @staticmethod
    def generate_private_key() -> ec.EllipticCurvePrivateKey:
        return ec.generate_private_key(ec.SECP256R1())

    @staticmethod
    def sign(private_key: ec.EllipticCurvePrivateKey, data: bytes) -> bytes:
        return private_key.sign(data, ec.ECDSA(hashes.SHA256()))

    @staticmethod
    def verify(public_key: ec.EllipticCurvePublicKey, signature: bytes, data: bytes) -> bool:
        try:
            public_key.verify(signature, data, ec.ECDSA(hashes.SHA256()))
            return True
        except InvalidSignature:
            return False
        except Exception:
            # Malformed signature encodings count as invalid, not unknown.
            return False


@dataclass
class KeyRegistry:
    """Public keys by agent with a revocation flag."""

    scheme: type[EcdsaP256Sha256] = EcdsaP256Sha256
    _entries: dict[AgentId, tuple[ec.EllipticCurvePublicKey, bool]] = field(
        default_factory=dict
    )

    def register(self, agent: AgentId, public_key: ec.EllipticCurvePublicKey) -> None:
        self._entries[agent] = (public_key, False)

    def revoke(self, agent: AgentId) -> None:
        if agent in self._entries:
            key, _ = self._entries[agent]
            self._entries[agent] = (key, True)

    def active_key(self, agent: AgentId) -> ec.EllipticCurvePublicKey | None:
        entry = self._entries.get(agent)
        if entry is None:
            return None
        key, revoked = entry
        return None if revoked else key


@dataclass
class AgentKeyStore:
    """Private keys for simulated agents; generates on demand."""

    scheme: type[EcdsaP256Sha256] = EcdsaP256Sha256
    _keys: dict[AgentId, ec.EllipticCurvePrivateKey] = field(default_factory=dict)

    def key_for(self, agent: AgentId) -> ec.EllipticCurvePrivateKey:
        if agent not in self._keys:
            self._keys[agent] = self.scheme.generate_private_key()
        return self._keys[agent]

    def provision(self, agents, registry: KeyRegistry) -> None:
        for agent in agents:
            registry.register(agent, self.key_for(agent).public_key())


def sign_event(
    event: GovernanceTelemetryEvent,
    private_key: ec.EllipticCurvePrivateKey | None,
    scheme: type[EcdsaP256Sha256] = EcdsaP256Sha256,
) -> GovernanceTelemetryEvent:
    """Return a copy of the event carrying a signature over its canonical form.

    The canonical form already includes the nonce; the verification state is
    left for the verifier to set.
    """
    if private_key is None:
        raise SigningError(f"no signing key for agent {event.source!r}")
    signature = scheme.sign(private_key, canonical_serialize(event))
    return dataclasses.replace(event, signature=signature)


def verify_event(
    event: GovernanceTelemetryEvent,
    registry: KeyRegistry,
    canonical: bytes | None = None,
) -> Verified:
    """Three-valued signature verification.

    TRUE when the signature is valid under the registered, non-revoked key
    for the event source; FALSE when the key is known but the signature is
    invalid; UNKNOWN when the key is unregistered or revoked, or the
    signature is absent.  ``canonical`` lets callers that already serialized
    the event skip recomputing it.
    """
    if event.signature is None:
        return Verified.UNKNOWN
    public_key = registry.active_key(event.source)
    if public_key is None:
        return Verified.UNKNOWN
    data = canonical if canonical is not None else canonical_serialize(event)
    if registry.scheme.verify(public_key, event.signature, data):
        return Verified.TRUE
    return Verified.FALSE


def with_verification(
    event: GovernanceTelemetryEvent, state: Verified
) -> GovernanceTelemetryEvent:
    return dataclasses.replace(
        event, governance=dataclasses.replace(event.governance, verified=state)
    )
