"""Command-line entry point wiring all modules into reproducible runs.

Commands: simulate, train, track, eval, gradcheck, bench-ablation.
Every command is a pure function of (config, seed): outputs are
byte-stable across repeat invocations.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .classifier import AppearanceMemory, MotionState, TrackScorer
from .config import RunConfig, ScenarioSpec, config_from_dict, load_config
from .data import load_scenario_dir
from .errors import MotPoolError
from .estimators import model_config_from_dict
from .metrics import EvalReport, evaluate
from .motio import parse_mot, write_mot
from .nn import Node, Tape, finite_diff_check, load_checkpoint, save_checkpoint
from .simulate import META_FILE, generate
from .tracker import GreedyTracker
from .training import Trainer, batch_loss_nodes

log = logging.getLogger("motpool")

GRADCHECK_TOLERANCE = 1e-4


def _load_run_config(args) -> RunConfig:
    if args.config:
        return load_config(args.config, profile=args.profile)
    return config_from_dict({}, profile=args.profile)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    if args.seed is not None:
        cfg.sim.seed = args.seed
    scenario = generate(cfg.sim)
    out = _out_dir(args)
    scenario.write(out)
    print(f"wrote scenario ({cfg.sim.num_targets} targets, "
          f"{cfg.sim.num_frames} frames) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.model.init_seed = args.seed
    sequences = [load_scenario_dir(d)[0] for d in args.data]
    scorer = TrackScorer(cfg.model)
    trainer = Trainer(scorer, cfg.train)
    trainer.fit(sequences)
    out = _out_dir(args)
    ckpt = out / cfg.train.checkpoint_name
    save_checkpoint(ckpt, scorer.param_values(), cfg.model.to_dict())
    (out / cfg.train.log_name).write_text(trainer.log_text())
    final = trainer.history_[-1].loss if trainer.history_ else float("nan")
    print(f"trained {len(trainer.history_)} iterations; final loss {final:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def _load_scorer(checkpoint_path) -> TrackScorer:
    tensors, config_doc, _ = load_checkpoint(checkpoint_path)
    return TrackScorer(model_config_from_dict(config_doc), params=tensors)


def _sim_oracle(data_dir):
    """Rebuild the scenario behind a data dir to embed synthesized boxes."""
    meta = Path(data_dir) / META_FILE
    if not meta.exists():
        return None
    spec = ScenarioSpec(**json.loads(meta.read_text()))
    return generate(spec).oracle_embedding


def _run_tracking(scorer: TrackScorer, cfg: RunConfig, data_dir) -> tuple[list, dict, list]:
    _, stream, gt = load_scenario_dir(data_dir)
    oracle = _sim_oracle(data_dir) if cfg.tracker.extension else None
    tracker = GreedyTracker(classifier=scorer, config=cfg.tracker,
                            embedding_oracle=oracle)
    rows = tracker.predict(stream)
    return rows, tracker.timing_, gt


def cmd_track(args) -> int:
    cfg = _load_run_config(args)
    scorer = _load_scorer(args.checkpoint)
    rows, timing, _ = _run_tracking(scorer, cfg, args.data[0])
    out = _out_dir(args)
    (out / "result.txt").write_text(write_mot(rows))
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    print(f"tracked {timing['frames']} frames at {timing['fps']:.1f} fps "
          f"(mean association {timing['mean_association_ms']:.3f} ms/frame)")
    print(f"result: {out / 'result.txt'}")
    return 0


def cmd_eval(args) -> int:
    gt = parse_mot(Path(args.gt).read_text())
    pred = parse_mot(Path(args.result).read_text())
    report = evaluate(gt, pred, name=args.name)
    out = _out_dir(args)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_text())
    print(report.to_text(), end="")
    return 0


def _gradcheck_batch(scorer: TrackScorer, seed: int):
    """Random 3-track x 2-detection joint batch; returns a loss closure."""
    rng = np.random.default_rng(seed)
    c = scorer.config
    mems_v = [(rng.normal(size=c.hidden) * 0.3, rng.normal(size=c.hidden) * 0.3)
              for _ in range(3)]
    ms_v = [(rng.normal(size=c.motion_hidden) * 0.3,
             rng.normal(size=c.motion_hidden) * 0.3) for _ in range(3)]
    embeds = [rng.normal(size=c.embed_dim) for _ in range(2)]
    boxes = [rng.uniform(0, 1, size=4) for _ in range(2)]
    labels = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])

    def forward(tape=None):
        mems = [AppearanceMemory(Node(h), Node(cc)) for h, cc in mems_v]
        if c.head == "joint":
            motions = [MotionState(Node(h), Node(cc)) for h, cc in ms_v]
            box_in = boxes
        else:
            motions, box_in = None, None
        xs = [scorer.embed_detection(e, tape) for e in embeds]
        grid = scorer.score_frame(mems, xs, motions, box_in, tape=tape)
        probs = [grid[i][j] for i in range(3) for j in range(2)]
        loss, _, _ = batch_loss_nodes(probs, labels.reshape(-1), 4.0, 1.0, tape)
        return loss

    return forward


def gradcheck_report(scorer: TrackScorer, seed: int = 0, eps: float = 1e-5,
                     coords_per_param: int = 6) -> tuple[float, dict[str, float]]:
    forward = _gradcheck_batch(scorer, seed)
    tape = Tape()
    loss = forward(tape)
    tape.backward(loss)
    params = scorer.named_params()
    analytic = {n: (p.grad if p.grad is not None else np.zeros_like(p.value))
                for n, p in params}
    for _, p in params:
        p.grad = None
    return finite_diff_check(lambda: float(forward().value), params, analytic,
                             eps=eps, max_coords_per_param=coords_per_param,
                             rng=np.random.default_rng(seed + 1))


def cmd_gradcheck(args) -> int:
    cfg = _load_run_config(args)
    cfg.model.head = "joint"  # exercise every branch
    if args.seed is not None:
        cfg.model.init_seed = args.seed
    scorer = TrackScorer(cfg.model)
    worst, per_param = gradcheck_report(scorer, seed=args.seed or 0)
    width = max(len(n) for n in per_param)
    for name, err in per_param.items():
        flag = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name.ljust(width)}  {err:.3e}  {flag}")
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def cmd_bench_ablation(args) -> int:
    cfg = _load_run_config(args)
    data_dir = args.data[0]
    gt = parse_mot((Path(data_dir) / "gt.txt").read_text())

    arms: list[tuple[str, EvalReport]] = []
    scorer = _load_scorer(args.checkpoint)
    rows, _, _ = _run_tracking(scorer, cfg, data_dir)
    arms.append(("pooled", evaluate(gt, rows, name="pooled")))

    scorer_ablated = _load_scorer(args.checkpoint)
    scorer_ablated.ablate_negative_pool = True
    rows, _, _ = _run_tracking(scorer_ablated, cfg, data_dir)
    arms.append(("pool-zeroed", evaluate(gt, rows, name="pool-zeroed")))

    if args.baseline_checkpoint:
        scorer_base = _load_scorer(args.baseline_checkpoint)
        rows, _, _ = _run_tracking(scorer_base, cfg, data_dir)
        arms.append(("baseline", evaluate(gt, rows, name="baseline")))

    out = _out_dir(args)
    header = ["Method", "MOTA", "IDF1", "IDS", "MT", "ML", "Frag"]
    lines = ["  ".join(h.rjust(11) for h in header)]
    for name, rep in arms:
        cells = [name, f"{rep.MOTA:.3f}", f"{rep.IDF1:.3f}", str(rep.IDSW),
                 str(rep.MT), str(rep.ML), str(rep.Frag)]
        lines.append("  ".join(c.rjust(11) for c in cells))
    table = "\n".join(lines) + "\n"
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motpool",
        description="Pooled-memory multi-object tracking: simulate, train, "
                    "track, evaluate.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, checkpoint=False):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--profile", default=None, choices=["desk", "paper"],
                       help="model dimension profile (default desk)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default="out", help="output directory")
        if data:
            p.add_argument("--data", nargs="+", required=True,
                           help="scenario directories (gt.txt, det.txt, embed.csv)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    common(sub.add_parser("simulate", help="generate a synthetic scenario"))
    common(sub.add_parser("train", help="train the track classifier"), data=True)
    common(sub.add_parser("track", help="run the online tracker"),
           data=True, checkpoint=True)

    p_eval = sub.add_parser("eval", help="score a result file against ground truth")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--result", required=True)
    p_eval.add_argument("--name", default="seq")
    p_eval.add_argument("--out", default="out")

    common(sub.add_parser("gradcheck", help="finite-difference gradient check"))

    p_bench = sub.add_parser(
        "bench-ablation",
        help="track+eval twice (negative pool on / zeroed) on one scenario")
    common(p_bench, data=True, checkpoint=True)
    p_bench.add_argument("--baseline-checkpoint", default=None,
                         help="optionally also evaluate a retrained no-pooling model")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench-ablation": cmd_bench_ablation,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level)
    try:
        return COMMANDS[args.command](args)
    except MotPoolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:  # console script entry
    sys.exit(run())
