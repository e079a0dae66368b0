"""Run the full desk-scale pipeline and summarise the end-to-end checks.

    python scripts/run_toy_experiment.py [--config path] [--work-dir runs/default]
"""
import argparse
import time

from lc4sv.config import ExperimentConfig, load_config
from lc4sv.evaluation import parse_report
from lc4sv.pipeline import STAGES, read_run_log, run_stage


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--work-dir", default=None)
    ap.add_argument("--from-stage", default="mix", choices=STAGES[:-1])
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.work_dir:
        cfg = cfg.replace(work_dir=args.work_dir)
    start = time.perf_counter()
    dirs = {}
    stages = STAGES[STAGES.index(args.from_stage):-1]
    for stage in STAGES[:-1]:
        if stage in stages:
            t0 = time.perf_counter()
            dirs[stage] = run_stage(stage, cfg)
            print(f"{stage:12s} {time.perf_counter() - t0:7.1f} s  -> {dirs[stage]}", flush=True)
        else:
            from lc4sv.pipeline import stage_dir
            dirs[stage] = stage_dir(cfg, stage)
    print(f"total {time.perf_counter() - start:.1f} s")

    logs = {s: read_run_log(d / "run.log") for s, d in dirs.items()}
    rows = parse_report((dirs["eval"] / "report.tsv").read_text())
    eer = {c: r["eer_percent"] for c, r in rows.items()}
    for c, v in eer.items():
        print(f"  {c:18s} EER {v:6.2f} %  minDCF {rows[c]['min_dcf']:.4f}")
    pre, fin, agent = logs["pretrain-se"], logs["finetune-se"], logs["train-agent"]
    best_const = min(v for c, v in eer.items() if c.startswith("CONST_ALPHA"))
    checks = {
        "a pretrain L_PTN reduction >= 50%": float(pre["monitor_reduction"]) >= 0.5,
        "b finetune AP loss falls": float(fin["ap_loss_last10"]) < float(fin["ap_loss_first10"]),
        "c held-out DQN loss drop >= 20%":
            float(agent["heldout_dqn_final"]) <= 0.8 * float(agent["heldout_dqn_initial"]),
        "d LC4SV <= NOISY and <= SE-PTN": eer["LC4SV"] <= eer["NOISY"] and eer["LC4SV"] <= eer["SE-PTN"],
        "e LC4SV <= best constant + 1pp": eer["LC4SV"] <= best_const + 1.0,
    }
    print("pretrain reduction", pre["monitor_reduction"], "| finetune", fin["ap_loss_first10"],
          "->", fin["ap_loss_last10"], "| agent", agent["heldout_dqn_initial"], "->",
          agent["heldout_dqn_final"])
    for name, ok in checks.items():
        print(("PASS " if ok else "FAIL ") + name)


if __name__ == "__main__":
    main()
