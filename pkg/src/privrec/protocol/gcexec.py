"""Drive one garble/evaluate exchange over a channel.

Message order per unit: tables, cloud-input labels, constant labels,
[OT round for client inputs], decode map, [select bits back for to-cloud
outputs]. Frame sizes are functions of the circuit shape only.
"""

from __future__ import annotations

import numpy as np

from ..mpc import garble as G
from ..mpc.circuit import Circuit
from ..mpc.ot import OtExtensionReceiver, OtExtensionSender
from ..rng import Rng
from .frames import (T_GC_CLOUD_LABELS, T_GC_CONST_LABELS, T_GC_DECODE,
                     T_GC_SELECTS, T_GC_TABLES, T_OT_EXT_LABELS, T_OT_EXT_U)


def run_garbler(chan, phase: int, circ: Circuit, cloud_bits: np.ndarray,
                rng: Rng, ot: OtExtensionSender | None) -> dict[str, np.ndarray]:
    """Garble, serve the evaluator, and decode any to-cloud outputs."""
    gc = G.garble(circ, rng)
    chan.send(T_GC_TABLES, phase, gc.tables.tobytes())
    labels = G.cloud_input_labels(gc, np.asarray(cloud_bits, np.uint8))
    chan.send(T_GC_CLOUD_LABELS, phase, labels.tobytes())
    chan.send(T_GC_CONST_LABELS, phase, gc.const_labels.tobytes())
    n_client = len(circ.inputs.get("client", ()))
    if n_client:
        _, _, u = chan.recv(T_OT_EXT_U)
        chan.send(T_OT_EXT_LABELS, phase, ot.process(u, gc.client_label_pairs))
    dec = b"".join(np.packbits(gc.decode_to_client[o.name]).tobytes()
                   for o in circ.outputs if o.to in ("client", "both"))
    chan.send(T_GC_DECODE, phase, dec)
    results: dict[str, np.ndarray] = {}
    cloud_outs = [o for o in circ.outputs if o.to in ("cloud", "both")]
    if cloud_outs:
        _, _, sel = chan.recv(T_GC_SELECTS)
        off = 0
        for o in cloud_outs:
            nb = (len(o.wires) + 7) // 8
            bits = np.unpackbits(np.frombuffer(sel, np.uint8, nb, off))[:len(o.wires)]
            results[o.name] = bits ^ gc.decode_to_cloud[o.name]
            off += nb
    return results


def run_evaluator(chan, phase: int, circ: Circuit, client_bits: np.ndarray,
                  ot: OtExtensionReceiver | None) -> dict[str, np.ndarray]:
    """Evaluate the garbled circuit; returns decoded to-client outputs."""
    _, _, tb = chan.recv(T_GC_TABLES)
    tables = np.frombuffer(tb, np.uint8).reshape(circ.n_and, 4, G.LABEL_BYTES) \
        if circ.n_and else np.zeros((0, 4, G.LABEL_BYTES), np.uint8)
    _, _, cl = chan.recv(T_GC_CLOUD_LABELS)
    n_cloud = len(circ.inputs.get("cloud", ()))
    cloud_labels = np.frombuffer(cl, np.uint8).reshape(n_cloud, G.LABEL_BYTES) \
        if n_cloud else np.zeros((0, G.LABEL_BYTES), np.uint8)
    _, _, cs = chan.recv(T_GC_CONST_LABELS)
    const_labels = np.frombuffer(cs, np.uint8).reshape(-1, G.LABEL_BYTES)
    client_bits = np.asarray(client_bits, np.uint8)
    n_client = len(circ.inputs.get("client", ()))
    if n_client:
        if len(client_bits) != n_client:
            raise ValueError(f"expected {n_client} client bits, got {len(client_bits)}")
        u, t = ot.round_u(client_bits)
        chan.send(T_OT_EXT_U, phase, u)
        _, _, payload = chan.recv(T_OT_EXT_LABELS)
        my_labels = ot.receive(payload, client_bits, t)
    else:
        my_labels = np.zeros((0, G.LABEL_BYTES), np.uint8)
    wire_labels = G.evaluate(circ, tables, my_labels, cloud_labels, const_labels)
    _, _, dec = chan.recv(T_GC_DECODE)
    results: dict[str, np.ndarray] = {}
    off = 0
    for o in circ.outputs:
        if o.to not in ("client", "both"):
            continue
        nb = (len(o.wires) + 7) // 8
        perm = np.unpackbits(np.frombuffer(dec, np.uint8, nb, off))[:len(o.wires)]
        results[o.name] = (wire_labels[o.wires][:, 0] & 1) ^ perm
        off += nb
    cloud_outs = [o for o in circ.outputs if o.to in ("cloud", "both")]
    if cloud_outs:
        sel = b"".join(np.packbits(wire_labels[o.wires][:, 0] & 1).tobytes()
                       for o in cloud_outs)
        chan.send(T_GC_SELECTS, phase, sel)
    return results
