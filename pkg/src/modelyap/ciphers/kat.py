"""Known-answer test files: ``cipher_id,rounds,key_hex,plaintext_hex,ciphertext_hex``."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from modelyap.bits import BitBlock, Key
from modelyap.ciphers import CipherSpec, cipher_spec, decrypt_block, encrypt_block


class KatParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class KatVector:
    cipher_id: str
    rounds: int
    key_hex: str
    plaintext_hex: str
    ciphertext_hex: str
    line_no: int = 0

    @property
    def spec(self) -> CipherSpec:
        return cipher_spec(self.cipher_id, self.rounds)


@dataclass(frozen=True)
class KatFailure:
    vector: KatVector
    got_hex: str
    direction: str


def parse_kat(text: str) -> list[KatVector]:
    vectors = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 5:
            raise KatParseError(line_no, f"expected 5 fields, got {len(fields)}")
        cipher_id, rounds, key_hex, pt_hex, ct_hex = fields
        try:
            rounds_int = int(rounds)
            for h in (key_hex, pt_hex, ct_hex):
                int(h, 16)
        except ValueError as exc:
            raise KatParseError(line_no, str(exc)) from None
        vectors.append(
            KatVector(cipher_id.lower(), rounds_int, key_hex.lower(), pt_hex.lower(), ct_hex.lower(), line_no)
        )
    return vectors


def load_kat(path: str | Path) -> list[KatVector]:
    return parse_kat(Path(path).read_text())


def builtin_kat_text() -> str:
    return resources.files("modelyap.data").joinpath("kat.csv").read_text()


def verify(vectors: list[KatVector]) -> list[KatFailure]:
    """Check each vector in both directions; returns the failures."""
    failures = []
    for vec in vectors:
        spec = vec.spec
        key = Key(int(vec.key_hex, 16), spec.key_bits)
        pt = BitBlock(int(vec.plaintext_hex, 16), spec.block_bits)
        ct = BitBlock(int(vec.ciphertext_hex, 16), spec.block_bits)
        got = encrypt_block(spec, key, pt)
        if got != ct:
            failures.append(KatFailure(vec, got.hex(), "encrypt"))
            continue
        back = decrypt_block(spec, key, ct)
        if back != pt:
            failures.append(KatFailure(vec, back.hex(), "decrypt"))
    return failures
