#!/usr/bin/env python3
"""End-to-end CLI walkthrough in a temp directory: synthesize a corpus,
toy-encode it, train a UDA discriminator model on a custom split, and print
the evaluation table."""

import sys
import tempfile
from pathlib import Path

from lexadapt.cli import main


def run(*argv):
    code = main(list(argv))
    if code != 0:
        sys.exit(code)


def demo():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        data = root / "data"
        emb = root / "store.emb"
        ckpt = root / "model.ckpt"
        run("synth", "--docs", "240", "--articles", "8", "--vocab", "96",
            "--strength", "1.0", "--seed", "1", "--shift-regions",
            "--out", str(data))
        run("embed-toy", "--corpus", str(data), "--dim", "32", "--seed", "2",
            "--out", str(emb))
        cfg = root / "train.cfg"
        cfg.write_text("lr = 0.003\nplateau_patience = 24\n"
                       "d_att_token = 16\nh_gru = 12\nd_att_sent = 12\n"
                       "d_cls_hidden = 16\n")
        run("train", "--task", "B", "--regime", "uda", "--adapt", "disc",
            "--split", "custom", "--source-articles", "2,5,8,10",
            "--target-articles", "3,6,9,11", "--corpus", str(data),
            "--emb", str(emb), "--config", str(cfg), "--out", str(ckpt),
            "--epochs", "24", "--gamma", "2.0", "--seed", "0")
        run("eval", "--ckpt", str(ckpt), "--task", "B", "--split", "custom",
            "--source-articles", "2,5,8,10", "--target-articles", "3,6,9,11",
            "--corpus", str(data), "--emb", str(emb),
            "--report", str(root / "report.json"))


if __name__ == "__main__":
    demo()
