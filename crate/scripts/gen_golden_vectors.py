#!/usr/bin/env python3
"""Independent reference implementation of the wire formats.

Writes crates/core/tests/data/golden_vectors.json. The Rust tests compare
against this file; regenerate only when a format intentionally changes.

Requires pycryptodome (keccak) and cryptography (ed25519).
"""

import json
import math
import struct
from pathlib import Path

from Crypto.Hash import keccak
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

DATA = Path(__file__).resolve().parent.parent / "crates/core/tests/data"
OUT = DATA / "golden_vectors.json"
PREDICATES = DATA / "predicates/checkout.compiled.json"

# Clauses of predicates/checkout.yaml as reviewed by hand:
# (id, sli, comparator, threshold, (num, den) reduced, window kind, window ms)
CHECKOUT_CLAUSES = [
    ("p95-under-300", "latency_ms", "lt", 300, (19, 20), "per_batch", 0),
    ("median-fast", "latency_ms", "le", 100, (1, 2), "per_batch", 0),
    ("availability", "success_status", "ge", 1, (999, 1000), "per_batch", 0),
    ("hourly-p99", "latency_ms", "lt", 1000, (99, 100), "time_window", 3_600_000),
]


def k256(data: bytes) -> bytes:
    h = keccak.new(digest_bits=256)
    h.update(data)
    return h.digest()


def field(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def u64(v: int) -> bytes:
    return field(struct.pack("<Q", v))


def s(text: str) -> bytes:
    return field(text.encode())


def key_id(pubkey: bytes) -> bytes:
    return k256(pubkey)[12:]


def encode_measurement(m: dict) -> bytes:
    return (
        s("0x" + m["monitor_id"])
        + field(struct.pack("<Q", m["sequence_no"]))
        + field(struct.pack("<Q", m["timestamp_ms"]))
        + field(struct.pack("<I", m["latency_ms"]))
        + field(struct.pack("<H", m["status_code"]))
        + field(bytes([0 if m["probe_kind"] == "active" else 1]))
        + s(m["schema_version"])
    )


def leaf(m: dict) -> bytes:
    return k256(b"\x00" + encode_measurement(m))


def node(left: bytes, right: bytes) -> bytes:
    return k256(b"\x01" + left + right)


def levels(leaves):
    out = [list(leaves)]
    while len(out[-1]) > 1:
        lvl = out[-1]
        nxt = []
        for i in range(0, len(lvl), 2):
            right = lvl[i + 1] if i + 1 < len(lvl) else lvl[i]
            nxt.append(node(lvl[i], right))
        out.append(nxt)
    return out


def proof(leaves, index):
    lv = levels(leaves)
    steps = []
    idx = index
    for lvl in lv[:-1]:
        if idx % 2 == 0:
            sib = lvl[idx + 1] if idx + 1 < len(lvl) else lvl[idx]
            steps.append({"hex": sib.hex(), "side": "right"})
        else:
            steps.append({"hex": lvl[idx - 1].hex(), "side": "left"})
        idx //= 2
    return {"leaf_index": index, "siblings": steps, "root_hex": lv[-1][0].hex()}


def clause_encoding(sli, op, threshold, num, den, window, window_ms) -> bytes:
    return (
        s("vsla.predicate.v1")
        + s(sli)
        + s(op)
        + u64(threshold)
        + u64(num)
        + u64(den)
        + s(window)
        + u64(window_ms)
    )


def compiled_predicates(engine_tag: str):
    out = []
    for cid, sli, op, threshold, (num, den), window, window_ms in CHECKOUT_CLAUSES:
        enc = clause_encoding(sli, op, threshold, num, den, window, window_ms)
        win = {"kind": window}
        if window == "time_window":
            win["duration_ms"] = window_ms
        out.append(
            {
                "program_id": k256(enc + engine_tag.encode()).hex(),
                "engine_tag": engine_tag,
                "clause": {
                    "id": cid,
                    "sli": sli,
                    "comparator": op,
                    "threshold": threshold,
                    "target": {"num": num, "den": den},
                    "window": win,
                },
            }
        )
    return out


def canonical_json(v) -> str:
    return json.dumps(v, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def main():
    seed = bytes(range(32))
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    mid = key_id(pk).hex()

    measurements = []
    for i, (lat, status) in enumerate([(12, 200), (480, 200), (2000, 0), (7, 503), (250, 302)]):
        measurements.append(
            {
                "monitor_id": mid,
                "sequence_no": i,
                "timestamp_ms": 1_700_000_000_000 + 1000 * i,
                "latency_ms": lat,
                "status_code": status,
                "probe_kind": "active" if i % 2 == 0 else "passive",
                "schema_version": "vsla-measurement/1",
            }
        )
    leaves = [leaf(m) for m in measurements]

    m0 = measurements[0]
    sig0 = sk.sign(encode_measurement(m0))

    root4 = levels(leaves[:4])[-1][0]
    root5 = levels(leaves)[-1][0]
    root3 = levels(leaves[:3])[-1][0]

    clause_enc = clause_encoding("latency_ms", "lt", 300, 19, 20, "per_batch", 0)
    program_id = k256(clause_enc + b"risc0")

    window = (1_700_000_000_000, 1_700_000_003_000)
    commitment = (
        s("vsla.batch.v1")
        + field(bytes.fromhex(mid))
        + u64(0)
        + field(root4)
        + u64(window[0])
        + u64(window[1])
        + u64(4)
    )
    root_sig = sk.sign(commitment)

    doc = {
        "spec": {"objectives": [{"id": "p95", "op": "lt", "sli": "latency_ms", "target": 0.95, "value": 300}]},
        "apiVersion": "openslo/v1",
        "verification": {"aggregation-engine": "risc0", "monitors": [{"type": "tee-active"}]},
        "signatures": {"provider": "ignored"},
    }
    unsigned = {k: v for k, v in doc.items() if k != "signatures"}

    vectors = {
        "key": {
            "seed_hex": seed.hex(),
            "pubkey_hex": pk.hex(),
            "key_id_hex": mid,
        },
        "measurements": [
            dict(m, canonical_hex=encode_measurement(m).hex(), leaf_hex=leaf(m).hex()) for m in measurements
        ],
        "measurement0_signature_hex": sig0.hex(),
        "roots": {
            "n1": leaves[0].hex(),
            "n3": root3.hex(),
            "n4": root4.hex(),
            "n5": root5.hex(),
        },
        "proof_n5_index4": proof(leaves, 4),
        "proof_n5_index2": proof(leaves, 2),
        "sibling_counts": {str(n): (math.ceil(math.log2(n)) if n > 1 else 0) for n in [1, 2, 3, 5, 512, 1024, 8192]},
        "predicate": {
            "clause": {"sli": "latency_ms", "op": "lt", "threshold": 300, "target": "0.95", "window": "per_batch"},
            "engine_tag": "risc0",
            "canonical_hex": clause_enc.hex(),
            "program_id_hex": program_id.hex(),
        },
        "batch_commitment": {
            "batch_seq": 0,
            "count": 4,
            "t_start_ms": window[0],
            "t_end_ms": window[1],
            "bytes_hex": commitment.hex(),
            "signature_hex": root_sig.hex(),
        },
        "spec_digest": {
            "document": doc,
            "canonical": canonical_json(unsigned),
            "digest_hex": k256(canonical_json(unsigned).encode()).hex(),
        },
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(vectors, indent=2) + "\n")
    print(f"wrote {OUT}")
    PREDICATES.write_text(json.dumps(compiled_predicates("risc0"), indent=2) + "\n")
    print(f"wrote {PREDICATES}")


if __name__ == "__main__":
    main()
