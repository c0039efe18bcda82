"""Three-role protocol runtime: data owner, cloud, client.

Pipeline phases on the client-cloud session (strictly ordered):
  setup      HELLO + joint unmask of stash/centroid lanes into shares
  he         encrypted distance batches over stash and centroid candidates
  gc-stash   stash top-k (re-shared by default)
  gc-cluster centroid top-k (cluster ids disclosed to the client)
  pir        per-cluster keystream retrieval, member re-share, member
             distance batch and member top-k
  merge      final top-k over both stages' winners, ids to the client
  feedback   optional, on the owner channel, triggers redistribution

The cloud keeps no per-query data between sessions beyond the layout and
OT extension state; every mask it contributes is derived from its seeded
rng, so fixed seeds give byte-identical transcripts.
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import psutil

from ..he import bfv, kernel
from ..ingest import RatingDataset
from ..modeler import RecommendationModel, VulnerabilityPolicy, apply_feedback, build_rm
from ..mpc import kreyvium as kv
from ..mpc.circuits import iv_for
from ..mpc.ot import (BaseOtReceiver, BaseOtSender, OtExtensionReceiver,
                      OtExtensionSender)
from ..preprocess import PreparedSets, full_row_sets, prepare_rm
from ..rng import Rng
from . import gcexec, plan
from .frames import (PH_FEEDBACK, PH_GC_CLUSTER, PH_GC_STASH, PH_HE, PH_MERGE,
                     PH_PIR, PH_SETUP, PHASE_NAMES, ProtocolError, T_BYE, T_ERROR,
                     T_FEEDBACK, T_FEEDBACK_OK, T_HE_CT, T_HE_RESULT, T_HELLO,
                     T_HELLO_OK, T_OT_BASE_C, T_OT_BASE_ENC, T_OT_BASE_PK,
                     T_RESULT, T_SETUP_BUNDLE, T_SETUP_MASKED_KEY, T_SETUP_REQ,
                     T_SETUP_STREAMS, channel_pair)
from .layout import (MaskedBundle, QueryLayout, cluster_meta_ids, flat_lanes,
                     layout_for, stash_meta_ids)

U16 = 1 << 16


@dataclass
class QueryResult:
    item_ids: list[str]
    item_indices: list[int]
    rm_generation: int


@dataclass
class SessionInfo:
    phase_seconds: dict = field(default_factory=dict)
    rss_bytes: dict = field(default_factory=dict)
    client_transcript: object = None
    cloud_transcript: object = None


def _now() -> float:
    return time.monotonic()


def _rss() -> int:
    return psutil.Process().memory_info().rss


# -- data owner --------------------------------------------------------------


@dataclass
class OwnerConfig:
    k: int = 3
    w: float = 0.5
    k_cl: int = 4
    k_out: int = 10
    capacity: int = 64
    cluster_count: int | None = None
    min_size: int | None = None
    block_lanes: int = 128
    seg_blocks: int = 96
    he_d: int = 4096
    he_limbs: int = 4
    he_limb_below: int = 159_000_000
    paper_disclosure: bool = False
    prep_seed: int = 5
    all_stash: bool = False
    no_rm: bool = False    # baseline: full user rating rows, no model


class DataOwner:
    def __init__(self, ds: RatingDataset, config: OwnerConfig | None = None,
                 policy: VulnerabilityPolicy | None = None):
        self.ds = ds
        self.config = config or OwnerConfig()
        self.policy = policy
        self.rms: dict[int, RecommendationModel] = {}
        self.prepared: dict[int, PreparedSets] = {}
        self.layouts: dict[int, QueryLayout] = {}

    def prepare_client(self, client_id: int):
        cfg = self.config
        if cfg.no_rm:
            ps = full_row_sets(self.ds, min_stash=cfg.k_out)
            id_space = self.ds.num_users
        else:
            rm = self.rms.get(client_id)
            if rm is None:
                rm = build_rm(self.ds, client_id, cfg.k, cfg.w, self.policy)
                self.rms[client_id] = rm
            ps = prepare_rm(rm, self.ds.scale.quantized_max,
                            cluster_count=cfg.cluster_count, capacity=cfg.capacity,
                            min_size=cfg.min_size, min_stash=cfg.k_out,
                            seed=cfg.prep_seed, all_stash=cfg.all_stash)
            id_space = self.ds.num_items
        layout = layout_for(ps, k_cl=cfg.k_cl, k_out=cfg.k_out,
                            num_items=id_space,
                            block_lanes=cfg.block_lanes, seg_blocks=cfg.seg_blocks,
                            he_d=cfg.he_d, he_limbs=cfg.he_limbs,
                            he_limb_below=cfg.he_limb_below,
                            paper_disclosure=cfg.paper_disclosure)
        self.prepared[client_id] = ps
        self.layouts[client_id] = layout
        return ps, layout

    def send_setup_request(self, chan_cloud, client_id: int) -> None:
        ps, layout = self.prepare_client(client_id)
        payload = struct.pack("<I", client_id) + layout.to_bytes()
        chan_cloud.send(T_SETUP_REQ, PH_SETUP, payload)

    def build_and_send_bundle(self, chan_cloud, chan_client, client_id: int) -> None:
        ps = self.prepared[client_id]
        layout = self.layouts[client_id]
        _, _, blob = chan_cloud.recv(T_SETUP_STREAMS)
        lanes_n = layout.total_lanes
        lane_stream = np.frombuffer(blob, "<u2", lanes_n, 0)
        off = 2 * lanes_n
        meta_stream = np.frombuffer(blob, "<u2", layout.stash_size, off)
        off += 2 * layout.stash_size
        csl = layout.cluster_stream_lanes
        cl_stream = np.frombuffer(blob, "<u2", layout.num_clusters * csl, off)
        cl_stream = cl_stream.reshape(layout.num_clusters, csl)

        plain = flat_lanes(ps, layout)
        masked_lanes = ((plain.astype(np.int64) + lane_stream) % U16).astype(np.uint16)
        ids = stash_meta_ids(ps)
        masked_meta = ids ^ meta_stream
        masked_clusters = np.zeros((layout.num_clusters, csl), dtype=np.uint16)
        for c in range(layout.num_clusters):
            lanes = ps.cluster_coords[c].astype(np.int64).ravel()
            masked_clusters[c, :len(lanes)] = ((lanes + cl_stream[c, :len(lanes)])
                                               % U16).astype(np.uint16)
            cids = cluster_meta_ids(ps, c)
            masked_clusters[c, len(lanes):] = cids ^ cl_stream[c, len(lanes):]
        bundle = MaskedBundle(layout, masked_lanes, masked_meta, meta_stream,
                              masked_clusters, b"\x00" * 16)
        names = self.ds.user_ids if self.config.no_rm else self.ds.item_ids
        catalog = "\n".join(names).encode()
        payload = bundle.to_bytes()
        chan_client.send(T_SETUP_BUNDLE, PH_SETUP,
                         struct.pack("<I", len(payload)) + payload + catalog)

    def handle_feedback(self, chan_client, chan_cloud, cloud, client) -> None:
        """Apply one feedback frame, rebuild and redistribute."""
        _, _, payload = chan_client.recv(T_FEEDBACK)
        client_id, item, rating = struct.unpack("<III", payload)
        rm = self.rms[client_id]
        self.ds, new_rm = apply_feedback(self.ds, rm, client_id, item, rating,
                                         self.policy)
        self.rms[client_id] = new_rm
        run_setup(self, cloud, client, client_id)
        chan_client.send(T_FEEDBACK_OK, PH_FEEDBACK,
                         struct.pack("<I", new_rm.generation))

    def plain_lane_bytes(self, client_id: int) -> bytes:
        """Plaintext lane serialization for the threat-model audits."""
        ps = self.prepared[client_id]
        layout = self.layouts[client_id]
        return flat_lanes(ps, layout).tobytes()


# -- cloud -------------------------------------------------------------------


@dataclass
class CloudClientState:
    layout: QueryLayout
    query_count: int = 0


class Cloud:
    def __init__(self, rng: Rng):
        self.rng = rng
        self.k_p = rng.child("primary-key").bytes(16)
        self.clients: dict[int, CloudClientState] = {}
        self.ot_senders: dict[int, OtExtensionSender] = {}
        self._lock = threading.Lock()

    # -- setup ---------------------------------------------------------

    def handle_setup_request(self, chan_owner, chan_client) -> int:
        _, _, payload = chan_owner.recv(T_SETUP_REQ)
        (client_id,) = struct.unpack_from("<I", payload, 0)
        layout = QueryLayout.from_bytes(payload[4:])
        gen = layout.generation
        # the random client key lives only inside this call
        k_c = self.rng.child("client-key", client_id, gen).bytes(16)

        keys = np.repeat(np.frombuffer(k_c, np.uint8)[None, :], layout.num_blocks, 0)
        ivs = np.stack([np.frombuffer(iv_for("stash-block", gen, b), np.uint8)
                        for b in range(layout.num_blocks)])
        lane_stream = kv.stream_u16_batch(keys, ivs, layout.block_lanes).ravel()
        meta_stream = kv.stream_u16(k_c, iv_for("meta", gen, 0), layout.stash_size)
        parts = [lane_stream.astype("<u2").tobytes(),
                 meta_stream.astype("<u2").tobytes()]
        if layout.num_clusters:
            subkeys = self._subkeys(layout)
            civ = np.repeat(np.frombuffer(iv_for("cluster-block", gen, 0),
                                          np.uint8)[None, :], layout.num_clusters, 0)
            cl_stream = kv.stream_u16_batch(subkeys, civ, layout.cluster_stream_lanes)
            parts.append(cl_stream.astype("<u2").tobytes())
        chan_owner.send(T_SETUP_STREAMS, PH_SETUP, b"".join(parts))

        key_mask = kv.keystream(self.k_p, iv_for("setup-key", gen, 0), 128)
        masked_key = bytes(a ^ b for a, b in zip(k_c, key_mask))
        chan_client.send(T_SETUP_MASKED_KEY, PH_SETUP, masked_key)
        with self._lock:
            self.clients[client_id] = CloudClientState(layout)
        return client_id

    def base_ot_round1(self, chan_client, client_id: int) -> None:
        """First cloud step of the base-OT handshake (cloud = base receiver)."""
        rng = self.rng.child("baseot", client_id)
        s_bits = rng.child("s").bits(128)
        recv = BaseOtReceiver(b"privrec-ot" + client_id.to_bytes(4, "big"),
                              rng.child("base-r"))
        _, _, c_blob = chan_client.recv(T_OT_BASE_C)
        chan_client.send(T_OT_BASE_PK, PH_SETUP, recv.round1(c_blob, s_bits))
        self._pending_ot = (client_id, s_bits, recv)

    def base_ot_finish(self, chan_client, client_id: int) -> None:
        pend_id, s_bits, recv = self._pending_ot
        if pend_id != client_id:
            raise ProtocolError("base OT transcript desync")
        _, _, enc = chan_client.recv(T_OT_BASE_ENC)
        keys = recv.round3(enc)
        self.ot_senders[client_id] = OtExtensionSender(s_bits, keys)
        self._pending_ot = None

    def _subkeys(self, layout: QueryLayout) -> np.ndarray:
        gen = layout.generation
        kp = np.repeat(np.frombuffer(self.k_p, np.uint8)[None, :],
                       layout.num_clusters, 0)
        ivs = np.stack([np.frombuffer(iv_for("cluster-subkey", gen, j), np.uint8)
                        for j in range(layout.num_clusters)])
        return kv.keystream_batch(kp, ivs, 128)

    # -- query session ---------------------------------------------------

    def handle_session(self, chan) -> None:
        try:
            self._handle_session(chan)
        except ProtocolError:
            raise

    def _handle_session(self, chan) -> None:
        _, _, hello = chan.recv(T_HELLO)
        client_id, gen = struct.unpack_from("<II", hello, 0)
        lay_hash = hello[8:24]
        lib = hello[24:40]
        state = self.clients.get(client_id)
        if state is None or state.layout.generation != gen:
            chan.send(T_HELLO_OK, PH_SETUP, b"\x00")
            raise ProtocolError(f"cloud: no state for client {client_id} gen {gen}")
        layout = state.layout
        if lay_hash != layout.layout_hash() or lib != plan.lib_hash(layout):
            chan.send(T_HELLO_OK, PH_SETUP, b"\x00")
            raise ProtocolError("cloud: layout/circuit hash mismatch")
        chan.send(T_HELLO_OK, PH_SETUP, b"\x01" + layout.layout_hash())
        qidx = state.query_count
        state.query_count += 1
        rng = self.rng.child("query", client_id, gen, qidx)
        ot = self.ot_senders[client_id]
        he_params = bfv.HeParams(d=layout.he_d, limb_count=layout.he_limbs,
                                 limb_below=layout.he_limb_below)
        mode = plan.stage_out_mode(layout)

        # setup phase: unmask segments; the cloud's r lanes become -shares
        r_lanes = rng.child("unmask-r").u16(layout.total_lanes)
        kp_bits = kv.bytes_to_msb_bits(self.k_p)
        ivk_bits = kv.bytes_to_msb_bits(iv_for("setup-key", gen, 0))
        for first, nblocks in layout.segments():
            circ = plan.unmask_circuit(nblocks * layout.block_lanes, layout.block_lanes)
            iv_bits = np.concatenate(
                [kv.bytes_to_msb_bits(iv_for("stash-block", gen, b))
                 for b in range(first, first + nblocks)])
            lane_slice = r_lanes[first * layout.block_lanes:
                                 (first + nblocks) * layout.block_lanes]
            cloud_bits = np.concatenate([kp_bits, ivk_bits, iv_bits,
                                         plan.u16_bits(lane_slice)])
            gcexec.run_garbler(chan, PH_SETUP, circ, cloud_bits,
                               rng.child("gc-unmask", first), ot)

        # he phase: stash and centroid batches; operands are the r lanes
        data_lanes = r_lanes.astype(np.int64)
        stash_b = data_lanes[:layout.stash_size * layout.k].reshape(-1, layout.k)
        cent_b = data_lanes[layout.stash_size * layout.k:
                            (layout.stash_size + layout.num_clusters) * layout.k
                            ].reshape(-1, layout.k)
        stash_shares = self._he_respond(chan, he_params, stash_b, rng.child("he-stash"))
        cent_shares = (self._he_respond(chan, he_params, cent_b, rng.child("he-cent"))
                       if layout.num_clusters else np.zeros(0, np.uint16))

        # gc-stash: stash top-k
        stash_merge = self._topk_garbler(chan, PH_GC_STASH, layout, mode,
                                         layout.stash_size, stash_shares,
                                         rng.child("gc-stash"), ot)

        member_merge = None
        if layout.num_clusters:
            # gc-cluster: centroid top-k (ids disclosed to client only)
            circ = plan.topk_centroid_circuit(layout.num_clusters, layout.pir_batch)
            gcexec.run_garbler(chan, PH_GC_CLUSTER, circ,
                               plan.u16_bits(cent_shares), rng.child("gc-cent"), ot)

            # pir phase: keystream mux + member reshare + member HE + member topk
            circ = plan.pir_circuit(layout.num_clusters,
                                    layout.cluster_stream_lanes * 16, layout.pir_batch)
            subkey_bits = np.concatenate([kv.bytes_to_msb_bits(sk.tobytes())
                                          for sk in self._subkeys(layout)])
            cloud_bits = np.concatenate(
                [kv.bytes_to_msb_bits(iv_for("cluster-block", gen, 0))]
                + [subkey_bits] * layout.pir_batch)
            gcexec.run_garbler(chan, PH_PIR, circ, cloud_bits, rng.child("gc-pir"), ot)

            m_lanes = layout.member_count * layout.k
            r_members = rng.child("member-r").u16(m_lanes)
            circ = plan.reshare_circuit(m_lanes)
            gcexec.run_garbler(chan, PH_PIR, circ, plan.u16_bits(r_members),
                               rng.child("gc-reshare"), ot)
            member_b = r_members.astype(np.int64).reshape(-1, layout.k)
            member_shares = self._he_respond(chan, he_params, member_b,
                                             rng.child("he-member"), phase=PH_PIR)
            member_merge = self._topk_garbler(chan, PH_PIR, layout, mode,
                                              layout.member_count, member_shares,
                                              rng.child("gc-member"), ot)

            if mode == "reshare":
                # merge phase
                circ = plan.merge_circuit(2 * layout.k_out, layout.k_out,
                                          layout.idx_bits)
                dist_sh = np.concatenate([stash_merge[0], member_merge[0]])
                idx_sh = np.concatenate([stash_merge[1], member_merge[1]])
                cloud_bits = np.concatenate([
                    plan.u16_bits(dist_sh),
                    plan.uint_bits(idx_sh, layout.idx_bits)])
                gcexec.run_garbler(chan, PH_MERGE, circ, cloud_bits,
                                   rng.child("gc-merge"), ot)
        chan.recv(T_BYE)

    def _he_respond(self, chan, he_params, b_rows: np.ndarray, rng: Rng,
                    phase: int = PH_HE) -> np.ndarray:
        """One distance batch (chunked): receive Enc(A)/Enc(sum a^2), return
        masked results; the mask extraction values are the cloud's shares."""
        b = np.vstack([b_rows % U16, np.zeros((1, b_rows.shape[1]), np.int64)])
        sz = bfv.CipherText.byte_size(he_params)
        shares = []
        for lo, hi, last in he_chunks(he_params, b.shape[0], b.shape[1]):
            _, _, blob = chan.recv(T_HE_CT)
            (count,) = struct.unpack_from("<I", blob, 0)
            cts = [bfv.CipherText.from_bytes(blob[4 + i * sz:4 + (i + 1) * sz])
                   for i in range(2 * count)]
            res, sh = kernel.cloud_distance_batch(
                he_params, cts[:count], cts[count:], b[lo:hi],
                rng.child("chunk", lo), sanity_last=last)
            chan.send(T_HE_RESULT, phase, b"".join(ct.to_bytes() for ct in res))
            shares.append(sh)
        return np.concatenate(shares)[:-1]

    def _topk_garbler(self, chan, phase, layout, mode, n, dist_shares, rng, ot):
        circ = plan.topk_items_circuit(n, layout.k_out, layout.idx_bits, mode)
        if mode == "reshare":
            r_d = rng.child("rd").u16(layout.k_out)
            r_i = rng.child("ri").below(1 << layout.idx_bits,
                                        layout.k_out).astype(np.uint64)
            cloud_bits = np.concatenate([plan.u16_bits(dist_shares),
                                         plan.u16_bits(r_d),
                                         plan.uint_bits(r_i, layout.idx_bits)])
            gcexec.run_garbler(chan, phase, circ, cloud_bits, rng.child("g"), ot)
            return ((-r_d.astype(np.int64)) % U16).astype(np.uint16), r_i
        gcexec.run_garbler(chan, phase, circ, plan.u16_bits(dist_shares),
                           rng.child("g"), ot)
        return None

    # -- audits ----------------------------------------------------------

    def audit_state(self) -> dict[str, bytes]:
        """Everything the cloud retains between sessions, as raw bytes."""
        out = {"primary_key": self.k_p}
        for cid, st in self.clients.items():
            out[f"layout_{cid}"] = st.layout.to_bytes()
        for cid, ot in self.ot_senders.items():
            out[f"ot_s_{cid}"] = np.packbits(ot.s_bits).tobytes()
            out[f"ot_keys_{cid}"] = ot.keys.tobytes()
        return out


# -- client --------------------------------------------------------------


class Client:
    def __init__(self, client_id: int, rng: Rng):
        self.client_id = client_id
        self.rng = rng
        self.bundle: MaskedBundle | None = None
        self.catalog: list[str] = []
        self.ot_receiver: OtExtensionReceiver | None = None
        self._he: dict[bytes, tuple] = {}
        self.query_count = 0
        self.received_types: set[int] = set()

    # -- setup ---------------------------------------------------------

    def receive_masked_key(self, chan_cloud) -> bytes:
        t, _, masked_key = chan_cloud.recv(T_SETUP_MASKED_KEY)
        self.received_types.add(t)
        return masked_key

    def receive_bundle(self, chan_owner, masked_key: bytes) -> None:
        t, _, blob = chan_owner.recv(T_SETUP_BUNDLE)
        self.received_types.add(t)
        (blen,) = struct.unpack_from("<I", blob, 0)
        bundle = MaskedBundle.from_bytes(blob[4:4 + blen])
        bundle.masked_key = masked_key
        self.bundle = bundle
        self.catalog = blob[4 + blen:].decode().split("\n")

    def start_base_ot(self, chan_cloud) -> tuple:
        rng = self.rng.child("baseot")
        key_pairs = rng.child("keys").u8((128, 2, 16))
        snd = BaseOtSender(b"privrec-ot" + self.client_id.to_bytes(4, "big"),
                           rng.child("base-s"))
        chan_cloud.send(T_OT_BASE_C, PH_SETUP, snd.round0())
        return snd, key_pairs

    def finish_base_ot(self, chan_cloud, snd, key_pairs) -> None:
        t, _, pk_blob = chan_cloud.recv(T_OT_BASE_PK)
        self.received_types.add(t)
        chan_cloud.send(T_OT_BASE_ENC, PH_SETUP, snd.round2(pk_blob, key_pairs))
        self.ot_receiver = OtExtensionReceiver(key_pairs)

    # -- query ---------------------------------------------------------

    def he_keys(self, layout: QueryLayout):
        params = bfv.HeParams(d=layout.he_d, limb_count=layout.he_limbs,
                              limb_below=layout.he_limb_below)
        ph = params.params_hash()
        if ph not in self._he:
            sk, pk = bfv.keygen(params, self.rng.child("he-keys"))
            self._he[ph] = (params, sk, pk)
        return self._he[ph]

    def query(self, chan, query_vec: np.ndarray | None = None,
              info: SessionInfo | None = None) -> QueryResult:
        bundle = self.bundle
        if bundle is None:
            raise ProtocolError("client: no distributed sets")
        layout = bundle.layout
        qidx = self.query_count
        self.query_count += 1
        rng = self.rng.child("query", qidx)
        params, sk, pk = self.he_keys(layout)
        mode = plan.stage_out_mode(layout)
        if query_vec is None:
            query_vec = np.full(layout.k, layout.quantized_max, dtype=np.int64)
        q = np.asarray(query_vec, dtype=np.int64)
        if q.shape != (layout.k,):
            raise ProtocolError(f"query must have {layout.k} lanes")
        info = info if info is not None else SessionInfo()
        marks = [("start", _now(), _rss())]

        hello = struct.pack("<II", self.client_id, layout.generation) \
            + layout.layout_hash() + plan.lib_hash(layout)
        chan.send(T_HELLO, PH_SETUP, hello)
        t, _, ok = chan.recv(T_HELLO_OK)
        self.received_types.add(t)
        if ok[:1] != b"\x01":
            raise ProtocolError("client: cloud rejected session")

        # setup: unmask segments -> client lane shares (v - r)
        mk_bits = kv.bytes_to_msb_bits(bundle.masked_key)
        lane_shares = np.zeros(layout.total_lanes, dtype=np.uint16)
        for first, nblocks in layout.segments():
            circ = plan.unmask_circuit(nblocks * layout.block_lanes,
                                       layout.block_lanes)
            sl = slice(first * layout.block_lanes,
                       (first + nblocks) * layout.block_lanes)
            client_bits = np.concatenate([mk_bits,
                                          plan.u16_bits(bundle.masked_lanes[sl])])
            out = gcexec.run_evaluator(chan, PH_SETUP, circ, client_bits,
                                       self.ot_receiver)
            lane_shares[sl] = plan.bits_u16(out["client_shares"])
        marks.append(("setup", _now(), _rss()))

        # he phase: stash + centroid batches
        k = layout.k
        stash_sh = lane_shares[:layout.stash_size * k].reshape(-1, k)
        cent_sh = lane_shares[layout.stash_size * k:
                              (layout.stash_size + layout.num_clusters) * k
                              ].reshape(-1, k)
        stash_dist_sh = self._he_batch(chan, params, pk, sk, q, stash_sh,
                                       rng.child("he-stash"))
        cent_dist_sh = (self._he_batch(chan, params, pk, sk, q, cent_sh,
                                       rng.child("he-cent"))
                        if layout.num_clusters else np.zeros(0, np.uint16))
        marks.append(("he", _now(), _rss()))

        # gc-stash: stash top-k
        stash_ids = bundle.masked_meta ^ bundle.meta_stream
        stash_payload = plan.ids_to_payload(stash_ids, layout)
        stash_out = self._topk_eval(chan, PH_GC_STASH, layout, mode,
                                    stash_dist_sh, stash_payload)
        marks.append(("gc-stash", _now(), _rss()))

        final_indices: list[int] = []
        if layout.num_clusters:
            circ = plan.topk_centroid_circuit(layout.num_clusters, layout.pir_batch)
            out = gcexec.run_evaluator(chan, PH_GC_CLUSTER, circ,
                                       plan.u16_bits(cent_dist_sh),
                                       self.ot_receiver)
            cbits = plan.centroid_bits(layout.num_clusters)
            clusters = plan.bits_uint(out["winner_idx"], cbits).astype(np.int64)
            marks.append(("gc-cluster", _now(), _rss()))

            # pir: keystreams for the chosen clusters
            circ = plan.pir_circuit(layout.num_clusters,
                                    layout.cluster_stream_lanes * 16,
                                    layout.pir_batch)
            jbits = max(1, (layout.num_clusters - 1).bit_length())
            sel_bits = np.concatenate([
                (((np.uint64(j) >> np.arange(jbits, dtype=np.uint64)) & 1)
                 .astype(np.uint8)) for j in clusters])
            out = gcexec.run_evaluator(chan, PH_PIR, circ, sel_bits,
                                       self.ot_receiver)
            members_v = np.zeros((layout.pir_batch, layout.capacity * k), np.int64)
            member_ids = np.zeros((layout.pir_batch, layout.capacity), np.uint16)
            for i, j in enumerate(clusters):
                stream_bits = out[f"keystream{i}"]
                stream = np.frombuffer(kv.msb_bits_to_bytes(stream_bits),
                                       dtype="<u2").astype(np.int64)
                row = bundle.masked_clusters[j].astype(np.int64)
                nl = layout.capacity * k
                members_v[i] = (row[:nl] - stream[:nl]) % U16
                member_ids[i] = (row[nl:] ^ stream[nl:]).astype(np.uint16)

            # member reshare
            m_lanes = layout.member_count * k
            circ = plan.reshare_circuit(m_lanes)
            out = gcexec.run_evaluator(chan, PH_PIR, circ,
                                       plan.u16_bits(members_v.ravel()
                                                     .astype(np.uint16)),
                                       self.ot_receiver)
            member_sh = plan.bits_u16(out["client_shares"]).reshape(-1, k)
            member_dist_sh = self._he_batch(chan, params, pk, sk, q, member_sh,
                                            rng.child("he-member"), phase=PH_PIR)
            member_payload = plan.ids_to_payload(member_ids.ravel(), layout)
            member_out = self._topk_eval(chan, PH_PIR, layout, mode,
                                         member_dist_sh, member_payload)
            marks.append(("pir", _now(), _rss()))

            if mode == "reshare":
                circ = plan.merge_circuit(2 * layout.k_out, layout.k_out,
                                          layout.idx_bits)
                dist_sh = np.concatenate([stash_out[0], member_out[0]])
                idx_sh = np.concatenate([stash_out[1], member_out[1]])
                client_bits = np.concatenate([
                    plan.u16_bits(dist_sh),
                    plan.uint_bits(idx_sh, layout.idx_bits)])
                out = gcexec.run_evaluator(chan, PH_MERGE, circ, client_bits,
                                           self.ot_receiver)
                final_indices = list(plan.bits_uint(out["winner_idx"],
                                                    layout.idx_bits))
            else:  # paper disclosure: merge locally on plain stage winners
                from ..reference import topk_by_key
                dists = np.concatenate([stash_out[0], member_out[0]]).astype(np.int64)
                idxs = np.concatenate([stash_out[1], member_out[1]]).astype(np.int64)
                pos = topk_by_key(dists, idxs, layout.k_out)
                final_indices = list(idxs[pos])
        else:
            final_indices = list(stash_out[1])
            marks.append(("gc-cluster", _now(), _rss()))
            marks.append(("pir", _now(), _rss()))
        chan.send(T_BYE, PH_MERGE)
        marks.append(("merge", _now(), _rss()))

        pad = layout.pad_idx
        kept = [int(i) for i in final_indices if i != pad][:layout.k_out]
        ids = [self.catalog[i] if i < len(self.catalog) else str(i) for i in kept]
        for (name, t1, rss1), (_, t0, _r) in zip(marks[1:], marks[:-1]):
            info.phase_seconds[name] = info.phase_seconds.get(name, 0.0) + (t1 - t0)
            info.rss_bytes[name] = rss1
        info.client_transcript = chan.transcript
        return QueryResult(ids, kept, layout.generation)

    def _he_batch(self, chan, params, pk, sk, q, shares, rng, phase: int = PH_HE):
        a = (q[None, :] - shares.astype(np.int64)) % U16
        a = np.vstack([a, params_sanity(params, q.shape[0])])
        sz = bfv.CipherText.byte_size(params)
        sanity = int((params_sanity(params, q.shape[0]) ** 2).sum() % params.t)
        out = []
        for lo, hi, last in he_chunks(params, a.shape[0], a.shape[1]):
            batch = kernel.client_encrypt_batch(params, pk, a[lo:hi],
                                                rng.child("chunk", lo))
            blob = struct.pack("<I", len(batch.enc_q)) + b"".join(
                ct.to_bytes() for ct in batch.enc_q + batch.enc_sq)
            chan.send(T_HE_CT, phase, blob)
            t, _, rblob = chan.recv(T_HE_RESULT)
            self.received_types.add(t)
            results = [bfv.CipherText.from_bytes(rblob[i * sz:(i + 1) * sz])
                       for i in range(len(rblob) // sz)]
            out.append(kernel.client_decrypt_shares(
                params, sk, results, hi - lo, a.shape[1],
                sanity if last else None))
        return np.concatenate(out)[:-1]

    def _topk_eval(self, chan, phase, layout, mode, dist_shares, payload):
        n = len(dist_shares)
        circ = plan.topk_items_circuit(n, layout.k_out, layout.idx_bits, mode)
        client_bits = np.concatenate([plan.u16_bits(dist_shares),
                                      plan.uint_bits(payload, layout.idx_bits)])
        out = gcexec.run_evaluator(chan, phase, circ, client_bits,
                                   self.ot_receiver)
        if mode == "reshare":
            return (plan.bits_u16(out["winner_dist_share"]),
                    plan.bits_uint(out["winner_idx_share"], layout.idx_bits))
        if mode == "disclose_full":
            return (plan.bits_u16(out["winner_dist"]).astype(np.int64),
                    plan.bits_uint(out["winner_idx"], layout.idx_bits))
        return (None, plan.bits_uint(out["winner_idx"], layout.idx_bits))

    def send_feedback(self, chan_owner, item_index: int, rating_q: int) -> int:
        chan_owner.send(T_FEEDBACK, PH_FEEDBACK,
                        struct.pack("<III", self.client_id, item_index, rating_q))
        _, _, payload = chan_owner.recv(T_FEEDBACK_OK)
        (gen,) = struct.unpack("<I", payload)
        return gen

    def audit_received_types(self) -> set[int]:
        return set(self.received_types)


def params_sanity(params, k: int) -> np.ndarray:
    return np.full(k, 3, dtype=np.int64)


# -- orchestration -----------------------------------------------------------


def run_setup(owner: DataOwner, cloud: Cloud, client: Client,
              client_id: int):
    """Wire the three roles through in-process channels for one
    distribution round; returns the channels for byte accounting."""
    oc_o, oc_c = channel_pair("owner", "cloud")      # owner <-> cloud
    cc_c, cc_s = channel_pair("client", "cloud")     # client <-> cloud
    ocl_o, ocl_c = channel_pair("owner", "client")   # owner -> client
    owner.send_setup_request(oc_o, client_id)
    cloud.handle_setup_request(oc_c, cc_s)
    owner.build_and_send_bundle(oc_o, ocl_o, client_id)
    masked_key = client.receive_masked_key(cc_c)
    client.receive_bundle(ocl_c, masked_key)
    if client.ot_receiver is None or client_id not in cloud.ot_senders:
        snd, key_pairs = client.start_base_ot(cc_c)
        cloud.base_ot_round1(cc_s, client_id)
        client.finish_base_ot(cc_c, snd, key_pairs)
        cloud.base_ot_finish(cc_s, client_id)
    return {"owner_cloud": oc_o, "client_cloud": cc_c, "owner_client": ocl_o}


def run_query(client: Client, cloud: Cloud, query_vec=None):
    """One private query over an in-process loopback session."""
    cc_c, cc_s = channel_pair("client", "cloud")
    info = SessionInfo()
    err: list[BaseException] = []

    def cloud_side():
        try:
            cloud.handle_session(cc_s)
        except BaseException as e:   # surfaced to the caller below
            err.append(e)

    th = threading.Thread(target=cloud_side, daemon=True)
    th.start()
    try:
        result = client.query(cc_c, query_vec, info)
    except BaseException:
        cc_c.send(T_ERROR, PH_MERGE, b"client abort")
        th.join(timeout=30)
        raise
    th.join(timeout=600)
    if err:
        raise err[0]
    info.cloud_transcript = cc_s.transcript
    return result, info


def meter(info: SessionInfo) -> dict:
    """Per-phase traffic/time/memory report for a completed session."""
    tr = info.client_transcript
    report = {"phases": {}, "total_bytes": tr.total_bytes() if tr else 0}
    pb = tr.phase_bytes() if tr else {}
    for name in PHASE_NAMES:
        report["phases"][name] = {
            "sent": pb.get(name, {}).get("sent", 0),
            "recv": pb.get(name, {}).get("recv", 0),
            "seconds": info.phase_seconds.get(name, 0.0),
            "rss": info.rss_bytes.get(name, 0),
        }
    return report
