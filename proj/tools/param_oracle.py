#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Brute-force per-layer parameter summation for NADL blueprints.

Reads the knowledge base and a blueprint, walks the layers in order and
prints {"c_out": [...], "stride": [...], "params": [...], "total": N}.
Exact rational arithmetic; each layer is rounded half away from zero.
"""
import argparse
import json
import sys
from fractions import Fraction


def load_kb(path):
    kb = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = json.loads(line)
                kb[rec["id"]] = rec
    return kb


def round_half_away(x):
    n = int(abs(x) + Fraction(1, 2))
    return n if x >= 0 else -n


def layer_params(rec, c_in, c_out, repeats, kernel):
    total = Fraction(0)
    for t in rec["params"]["terms"]:
        v = Fraction(str(t["coef"]))
        v *= Fraction(c_in) ** t.get("c_in", 0)
        v *= Fraction(c_out) ** t.get("c_out", 0)
        v *= Fraction(repeats) ** t.get("repeats", 0)
        v *= Fraction(kernel * kernel) ** t.get("kernel2", 0)
        total += v
    return round_half_away(total)


def trace(doc, kb):
    c_outs, strides, params = [], [], []
    for i, layer in enumerate(doc["layers"]):
        rec = kb[layer["module_kind"]]
        ins = []
        for ref in layer["from"]:
            if ref == "input":
                ins.append((doc["input_spec"]["channels"], 1))
            else:
                j = i - 1 if ref == -1 else ref
                ins.append((c_outs[j], strides[j]))
        chans = [c for c, _ in ins]
        args = layer["args"]
        rule = rec["channel_rule"]
        kind = rule["kind"]
        if kind == "fixed_out":
            c_out = args[rule["arg_index"]]
        elif kind == "same_as_input":
            c_out = chans[0]
        elif kind == "sum_of_inputs":
            c_out = sum(chans)
        elif kind == "max_of_inputs":
            if len(set(chans)) != 1:
                raise SystemExit(f"layer {i}: unequal element-wise inputs {chans}")
            c_out = chans[0]
        else:
            raise SystemExit(f"unknown channel rule {kind}")

        s_in = max(s for _, s in ins)
        st = rec["stride"]
        if st["kind"] == "fixed":
            stride = s_in * st["value"]
        elif st["kind"] == "from_arg":
            idx = st["arg_index"]
            stride = s_in * (args[idx] if idx < len(args) else 1)
        else:
            idx = st["arg_index"]
            stride = s_in // (args[idx] if idx < len(args) else 1)

        k = 1
        if "kernel_arg" in rec and rec["kernel_arg"] < len(args):
            k = args[rec["kernel_arg"]]
        p = layer_params(rec, sum(chans), c_out, layer["repeats"], k)
        c_outs.append(c_out)
        strides.append(stride)
        params.append(p)
    return {"c_out": c_outs, "stride": strides, "params": params, "total": sum(params)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kb", required=True)
    ap.add_argument("blueprints", nargs="+")
    a = ap.parse_args()
    kb = load_kb(a.kb)
    out = {}
    for path in a.blueprints:
        with open(path, encoding="utf-8") as fh:
            out[path] = trace(json.load(fh), kb)
    json.dump(out, sys.stdout)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
