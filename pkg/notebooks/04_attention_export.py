"""
Training a small model and exporting its attention
==================================================

Uses the command line entry point, the same way a shell script would, then
reads one of the CSV matrices back with numpy.
"""

import csv
import json
import tempfile
from pathlib import Path

import numpy as np

from aggcn.cli import main

out = Path(tempfile.mkdtemp(prefix="aggcn-"))

# the default architecture (3 heads, 2 blocks, groups of 2 and 4 sub-layers) at width 24
main(["train", "--synthetic", "n=200,labels=5", "--epochs", "8", "--seed", "0",
      "--d", "24", "--d-word", "24", "--out", str(out)])

# pick the first held-out instance
inst_id = json.loads((out / "test.jsonl").read_text().splitlines()[0])["id"]
main(["attention", "--checkpoint", str(out / "checkpoint.aggcn"), "--test", str(out / "test.jsonl"),
      "--instance", inst_id, "--out", str(out / "attention")])

path = out / "attention" / "attention_block2_head1.csv"
rows = list(csv.reader(path.read_text().splitlines()))
tokens = rows[0][1:]
a = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
print(path.name, a.shape, "row sums", a.sum(axis=1).round(6))

# which token does each word attend to most?
for tok, row in zip(tokens, a):
    print(f"{tok:>8} -> {tokens[int(row.argmax())]}")
