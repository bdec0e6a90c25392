"""Line-JSON tokenizer used by the integration tests.

Bytes map to ids 1..=256 and "<file_sep>" to id 0, so the ids differ from the
built-in byte tokenizer while staying lossless.
"""
import json
import sys

SEP = "<file_sep>"


def encode(text):
    ids = []
    for i, part in enumerate(text.split(SEP)):
        if i:
            ids.append(0)
        ids.extend(b + 1 for b in part.encode("utf-8"))
    return ids


def decode(ids):
    out = bytearray()
    for i in ids:
        out.extend(SEP.encode() if i == 0 else bytes([i - 1]))
    return out.decode("utf-8", errors="replace")


for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "info":
        reply = {"name": "shifted-bytes", "vocab_size": 257, "special_ids": [0], "file_sep_id": 0}
    elif req["op"] == "encode":
        reply = {"ids": encode(req["text"])}
    else:
        reply = {"text": decode(req["ids"])}
    sys.stdout.write(json.dumps(reply) + "\n")
    sys.stdout.flush()
