"""Command line entry point: ``vinn <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import time

import numpy as np

from . import evaluation as ev
from . import serve as srv
from . import sim
from .data import load_demoset, normalize_actions, save_demoset, subsample_demos, synth_demoset
from .encoder import (
    KINDS,
    AugmentConfig,
    EncoderSpec,
    embed_demoset,
    load_encoder,
    make_encoder,
    save_encoder,
    train_encoder,
)
from .policy import (
    BcRepPolicy,
    PolicyConfig,
    RandomPolicy,
    VinnPolicy,
    bc_rep_fit,
    build_index,
    load_embeddings,
    load_index,
    open_loop_fit,
    predict_detailed,
    save_embeddings,
    save_index,
    scale_action,
)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _read_obs(path: str) -> np.ndarray:
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict):
        data = data["obs"]
    return np.asarray(data, dtype=np.float64)


def _action_json(action, distance=None, gripper_float=None) -> dict:
    out = {"translation": [float(v) for v in action.translation], "gripper": action.gripper.name,
           "gripper_code": int(action.gripper)}
    if distance is not None:
        out["nn_distance"] = float(distance)
    if gripper_float is not None:
        out["gripper_float"] = float(gripper_float)
    return out


def _spec(args, obs_dim: int) -> EncoderSpec:
    hidden = tuple(_ints(args.hidden)) if args.hidden else ()
    if args.kind == "byol_patch":
        if obs_dim != sim.OBS_DIM:
            raise SystemExit(f"byol_patch uses the simulator's observation blocks; data has obs_dim {obs_dim}")
        return EncoderSpec("byol_patch", obs_dim, args.dim, hidden or sim.PATCH_HIDDEN, args.seed, sim.OBS_GROUPS)
    dim = obs_dim if args.kind == "identity" else args.dim
    if args.kind == "byol_mlp" and not hidden:
        hidden = (128,)
    return EncoderSpec(args.kind, obs_dim, dim, hidden, args.seed)


def _augment(obs_dim: int) -> AugmentConfig:
    return sim.SIM_AUGMENT if obs_dim == sim.OBS_DIM else AugmentConfig()


# --- commands ---------------------------------------------------------------

def cmd_collect(args):
    kw = {}
    if args.generator == "expert":
        kw["action_noise"] = args.action_noise
    ds = synth_demoset(args.generator, args.n, args.seed, **kw)
    save_demoset(ds, args.out)
    print(f"wrote {len(ds.demos)} demos, {ds.n_frames} frames, obs_dim {ds.obs_dim} to {args.out}")


def cmd_normalize(args):
    save_demoset(normalize_actions(load_demoset(args.inp)), args.out)


def cmd_subsample(args):
    ds = subsample_demos(load_demoset(args.inp), args.n, args.seed)
    save_demoset(ds, args.out)
    print(f"kept {len(ds.demos)} demos ({ds.n_frames} frames)")


def cmd_train_encoder(args):
    ds = load_demoset(args.inp)
    spec = _spec(args, ds.obs_dim)
    t0 = time.perf_counter()
    if spec.kind in ("byol_mlp", "byol_patch"):
        enc = train_encoder(ds, spec, args.epochs, _augment(ds.obs_dim), args.lr, seed=args.seed)
    else:
        enc = make_encoder(spec, ds)
    save_encoder(enc, args.out)
    print(f"{spec.kind} encoder {enc.obs_dim}->{enc.embed_dim} in {time.perf_counter() - t0:.1f}s, wrote {args.out}")


def cmd_embed(args):
    emb = embed_demoset(load_encoder(args.enc), load_demoset(args.inp))
    save_embeddings(emb, args.out)
    print(f"embedded {len(emb)} frames into {emb.dim} dims")


def cmd_build_index(args):
    index = build_index(load_embeddings(args.emb))
    save_index(index, args.out)
    print(f"index of {len(index)} rows, dim {index.dim}")


def cmd_predict(args):
    index, enc = load_index(args.idx), load_encoder(args.enc)
    cfg = PolicyConfig(k=args.k, renormalize_translation=args.renormalize)
    p = predict_detailed(index, enc, _read_obs(args.obs), cfg)
    out = _action_json(p.action, p.neighbors.distances[0], p.gripper_float)
    if args.scale:
        out["scaled_translation"] = [float(v) for v in scale_action(p.action, _floats(args.scale)).translation]
    print(json.dumps(out))


def _make_policy(args):
    if args.policy == "vinn":
        if not (args.idx and args.enc):
            raise SystemExit("--policy vinn needs --idx and --enc")
        return VinnPolicy(load_index(args.idx), load_encoder(args.enc),
                          PolicyConfig(k=args.k, renormalize_translation=True))
    if args.policy == "random":
        return RandomPolicy(args.seed)
    if args.policy == "expert":
        return sim.ExpertPolicy(sim.EnvConfig())
    if args.policy == "open_loop":
        if not args.train:
            raise SystemExit("--policy open_loop needs --train")
        return open_loop_fit(load_demoset(args.train), renormalize=True)
    raise SystemExit(f"unknown policy {args.policy}")


def cmd_rollout(args):
    pol = _make_policy(args)
    cfg = sim.EnvConfig(obs_noise_std=args.obs_noise).with_occlusion(args.occlusion)
    results = [sim.rollout(pol, cfg, s) for s in sim.trial_seeds(args.trials, args.seed)]
    if args.trace:
        with open(args.trace, "w") as f:
            for r in results:
                sim.write_trace(r, f)
    print(json.dumps({
        "policy": args.policy,
        "occlusion": sim.OCCLUSION_NAMES[args.occlusion],
        "trials": args.trials,
        "grasp_rate": sum(r.handle_grasped for r in results) / args.trials,
        "open_rate": sum(r.door_opened for r in results) / args.trials,
    }))


_EVAL_NEEDS = {"vinn": ("idx", "enc"), "bc_rep": ("enc", "train"), "open_loop": ("train",), "random": ()}


def cmd_eval(args):
    names = args.policies.split(",")
    for name in names:
        missing = [f"--{opt}" for opt in _EVAL_NEEDS.get(name, ()) if not getattr(args, opt)]
        if missing:
            raise SystemExit(f"policy {name} needs {' and '.join(missing)}")
    test = load_demoset(args.test)
    reports = []
    for name in names:
        if name == "vinn":
            pol = VinnPolicy(load_index(args.idx), load_encoder(args.enc), PolicyConfig(k=args.k))
        elif name == "bc_rep":
            enc = load_encoder(args.enc)
            emb = embed_demoset(enc, load_demoset(args.train))
            pol = BcRepPolicy(bc_rep_fit(emb, args.bc_epochs, seed=args.seed), enc)
        elif name == "open_loop":
            pol = open_loop_fit(load_demoset(args.train))
        elif name == "random":
            pol = RandomPolicy(args.seed)
        else:
            raise SystemExit(f"unknown policy {name}")
        reports.append(ev.eval_policy(pol, test, args.seed))
    ev.write_reports(reports, sys.stdout)


def cmd_sweep_k(args):
    index, enc, test = load_index(args.idx), load_encoder(args.enc), load_demoset(args.test)
    curve = ev.sweep_k(index, enc, test, _ints(args.ks))
    cells = [ev.Cell("vinn", p.x, 0, p.mse) for p in curve.points]
    ev.write_cells(cells, sys.stdout, "k")


def cmd_subsample_eval(args):
    train, test = load_demoset(args.train), load_demoset(args.test)
    spec = _spec(args, train.obs_dim)
    settings = ev.SweepSettings(spec, _augment(train.obs_dim), args.epochs, args.lr, args.k, args.bc_epochs)
    curves, cells = ev.dataset_size_sweep(train, test, _ints(args.sizes), list(range(args.seeds)),
                                          args.policies.split(","), settings)
    ev.write_cells(cells, sys.stdout, "size")
    print()
    ev.write_summary(curves, sys.stdout, "size")


def cmd_serve(args):
    index, enc = load_index(args.idx), load_encoder(args.enc)
    cfg = PolicyConfig(k=args.k, action_scale=_floats(args.scale), renormalize_translation=args.renormalize)
    server = srv.PolicyServer(srv.parse_address(args.bind), srv.PolicyService(index, enc, cfg))
    host, port = server.address
    print(f"serving on {host}:{port}", flush=True)

    def _interrupt(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _interrupt)
    try:
        server.serve_forever(poll_interval=0.1)
    except KeyboardInterrupt:
        pass
    finally:
        server.stopping.set()
        server.server_close()


def cmd_query(args):
    addr = srv.parse_address(args.addr)
    try:
        with srv.Client(addr, args.timeout) as c:
            r = c.query(_read_obs(args.obs), args.client_scaling)
    except (srv.QueryTimeout, srv.ProtocolError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if r.status != srv.STATUS_OK:
        print(json.dumps({"status": r.status, "error": r.error}))
        return 1
    print(json.dumps(_action_json(r.action(), r.distance)))


# --- parser -----------------------------------------------------------------

def _encoder_args(p):
    p.add_argument("--kind", choices=KINDS, default="byol_patch")
    p.add_argument("--dim", type=int, default=sim.PATCH_FEATURES * len(sim.OBS_GROUPS))
    p.add_argument("--hidden", default="", help="comma-separated hidden widths")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=3e-4)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vinn", description="Visual imitation through nearest neighbors, in vectors.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="generate a synthetic demo set")
    p.add_argument("--generator", default="expert", choices=["expert", "random-walk"])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--action-noise", type=float, default=sim.DEMO_NOISE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("normalize", help="unit-normalize translations")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("subsample", help="keep n demos chosen by seed")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("train-encoder", help="fit or train an encoder")
    p.add_argument("--in", dest="inp", required=True)
    _encoder_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("embed", help="embed every frame of a demo set")
    p.add_argument("--enc", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("build-index", help="build a k-NN index from embeddings")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("predict", help="predict one action")
    p.add_argument("--idx", required=True)
    p.add_argument("--enc", required=True)
    p.add_argument("--obs", required=True, help="JSON list of floats, or {\"obs\": [...]}")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--renormalize", action="store_true")
    p.add_argument("--scale", default="", help="also report c * translation, e.g. 0.5,0.5,0.5")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rollout", help="closed-loop trials in the simulator")
    p.add_argument("--policy", default="vinn", choices=["vinn", "random", "expert", "open_loop"])
    p.add_argument("--idx")
    p.add_argument("--enc")
    p.add_argument("--train", help="demo set for open_loop")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--occlusion", type=int, default=0, choices=range(4))
    p.add_argument("--obs-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write JSON-lines traces here")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="offline test MSE")
    p.add_argument("--test", required=True)
    p.add_argument("--policies", default="vinn")
    p.add_argument("--idx")
    p.add_argument("--enc")
    p.add_argument("--train", help="training demos for bc_rep and open_loop")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--bc-epochs", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-k", help="test MSE against k")
    p.add_argument("--idx", required=True)
    p.add_argument("--enc", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--ks", default="1,2,4,8,10,16,20,32")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("subsample-eval", help="test MSE against training-set size")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--sizes", default="5,10,20,40,71")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--policies", default="vinn,bc_rep,open_loop,random")
    _encoder_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--bc-epochs", type=int, default=8000)
    p.set_defaults(func=cmd_subsample_eval)

    p = sub.add_parser("serve", help="serve predictions over TCP")
    p.add_argument("--idx", required=True)
    p.add_argument("--enc", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--scale", default="0.5,0.5,0.5")
    p.add_argument("--renormalize", action="store_true")
    p.add_argument("--bind", default="127.0.0.1:7788")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("query", help="send one observation to a server")
    p.add_argument("--addr", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--timeout", type=float, default=1.0)
    p.add_argument("--client-scaling", action="store_true")
    p.set_defaults(func=cmd_query)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
