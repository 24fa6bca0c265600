#!/usr/bin/env python3
"""Hand-encodes the golden GOOSE frame byte by byte, following the wire layout table."""
import struct

go_id = b"inv1"
out = bytearray()
out += b"GSE1"                      # magic
out += bytes([0x01])                # version
out += struct.pack(">H", 1)         # appId
out += bytes([len(go_id)])          # goIdLen
out += go_id
out += struct.pack(">I", 1)         # stNum
out += struct.pack(">I", 0)         # sqNum
out += struct.pack(">Q", 0)         # timestampUs
out += struct.pack(">I", 8)         # ttlMs
out += struct.pack(">H", 1)         # numEntries
out += bytes([0x01, 0x01])          # Bool true
print(len(out))
print(out.hex())
