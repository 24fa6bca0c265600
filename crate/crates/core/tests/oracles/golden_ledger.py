#!/usr/bin/env python3
"""Independent canonical serializer + hashlib SHA-256 for the pinned two-block chain."""
import hashlib
import struct

SIG = bytes(64)


def text(s):
    b = s.encode("utf-8")
    return struct.pack(">H", len(b)) + b


def f64(x):
    return struct.pack(">d", x)


def capacity(pid, idx, pmin, pmax, profile):
    body = bytes([0x01]) + text(pid) + struct.pack(">I", idx) + f64(pmin) + f64(pmax)
    body += struct.pack(">H", len(profile)) + b"".join(f64(p) for p in profile)
    return body + SIG


def setpoint(pid, idx, pref):
    return bytes([0x02]) + text(pid) + struct.pack(">I", idx) + f64(pref) + SIG


def measurement(pid, idx, err, mean):
    return bytes([0x03]) + text(pid) + struct.pack(">I", idx) + f64(err) + f64(mean) + SIG


def block(index, prev, ts, txs):
    body = struct.pack(">Q", index) + prev + struct.pack(">Q", ts)
    body += struct.pack(">H", len(txs)) + b"".join(txs)
    return hashlib.sha256(body).digest()


genesis = block(0, bytes(32), 1_700_000_000_000_000, [])
second = block(
    1,
    genesis,
    1_700_000_900_000_000,
    [
        capacity("p1", 0, -2000.0, 2000.0, [100.0, -250.5]),
        setpoint("p1", 0, -1000.0),
        measurement("p1", 0, 0.25, -987.5),
    ],
)
print(genesis.hex())
print(second.hex())
