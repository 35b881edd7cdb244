import io
import random
import string

from hri_bridge.codec import Int64

KEY_CHARS = string.ascii_letters + string.digits + "_-/."


def random_key(rng: random.Random) -> str:
    n = rng.randint(1, 12)
    return "".join(rng.choice(KEY_CHARS) for _ in range(n))


def random_value(rng: random.Random, depth: int, *, json_safe: bool = False, max_blob: int = 4096):
    choices = ["float", "str", "bool", "int64"]
    if not json_safe:
        choices += ["int32", "bytes"]
    if depth < 8:
        choices += ["doc", "array"]
    kind = rng.choice(choices)
    if kind == "float":
        # finite doubles only; NaN breaks equality comparison
        return rng.choice([0.0, -0.0, 1.0, -1.5, rng.uniform(-1e9, 1e9), rng.uniform(-1, 1) * 10 ** rng.randint(-300, 300)])
    if kind == "str":
        n = rng.randint(0, 24)
        alphabet = string.printable + "é世界\U0001f600"
        return "".join(rng.choice(alphabet) for _ in range(n))
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "int32":
        return rng.randint(-(2**31), 2**31 - 1)
    if kind == "int64":
        if json_safe:
            return Int64(rng.randint(-(2**53), 2**53))
        return Int64(rng.randint(-(2**63), 2**63 - 1))
    if kind == "bytes":
        n = rng.randint(0, max_blob)
        return rng.randbytes(n)
    if kind == "doc":
        return random_document(rng, depth + 1, json_safe=json_safe, max_blob=max_blob)
    return [random_value(rng, depth + 1, json_safe=json_safe, max_blob=max_blob) for _ in range(rng.randint(0, 4))]


def random_document(rng: random.Random, depth: int = 0, *, json_safe: bool = False, max_blob: int = 4096):
    doc = {}
    for _ in range(rng.randint(0, 6)):
        doc[random_key(rng)] = random_value(rng, depth, json_safe=json_safe, max_blob=max_blob)
    return doc


class ChoppyReader:
    """File-like wrapper returning at most `chunk` bytes per read call."""

    def __init__(self, data: bytes, chunk: int = 1):
        self._inner = io.BytesIO(data)
        self.chunk = chunk

    def read(self, n: int) -> bytes:
        return self._inner.read(min(n, self.chunk))
