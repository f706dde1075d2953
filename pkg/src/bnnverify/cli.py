"""Command-line entry point.

Subcommands: infer, encode, solve, verify, oracle, report.  Every artifact
written embeds the config echo and seed; wall-clock timings go to a
separate ``.timing.json`` sidecar so the canonical outputs are
byte-reproducible for a fixed seed.

Exit codes: 2 usage error, 3 infeasible input files, 4 brute-force cap
refusal.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import encode as enc
from . import ir
from . import model as bnn
from . import solvers
from .verify import (VERDICT_NON_ROBUST, VERDICT_ROBUST_WITHIN_MODEL,
                     iter_masks, rle_indices, select_perturbable_pixels)
from .verify import verify as run_verify

EXIT_INPUT = 3
EXIT_CAP = 4


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_sample(args):
    m = bnn.load_model(args.model)
    ds = bnn.load_idx_dataset(args.images, args.labels,
                              threshold=m.binarization_threshold)
    if not 0 <= args.sample < len(ds):
        raise ValueError("sample index %d out of range (%d samples)"
                         % (args.sample, len(ds)))
    x, y = ds.sample(args.sample)
    return m, ds, x, y


def _build_spec(args, m, ds):
    if args.pixels:
        perturbable = tuple(int(t) for t in args.pixels.split(","))
    else:
        perturbable = select_perturbable_pixels(ds, m, args.pmax)
    return enc.PerturbationSpec(perturbable, args.eps, tie_mode=args.tie_mode)


def _sa_params(args):
    return solvers.SAParams(seed=args.seed, restarts=args.restarts,
                            sweeps=args.sweeps)


def _fem_params(args):
    p = solvers.FEMParams(seed=args.seed, restarts=args.restarts,
                          n_step=args.fem_steps)
    if args.heating_schedule:
        p.schedule = "heating"
    return p


def cmd_infer(args):
    m, _, x, y = _load_sample(args)
    label, _, scores = bnn.forward(m, x)
    doc = {"sample": args.sample, "dataset_label": y, "predicted_label": label,
           "scores": [int(s) for s in scores]}
    json.dump(doc, sys.stdout, sort_keys=True)
    print()
    return 0


def cmd_encode(args):
    m, ds, x, y = _load_sample(args)
    spec = _build_spec(args, m, ds)
    inst = enc.build_verification_qubo(m, x, bnn.forward(m, x)[0], spec)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(str(prefix) + ".qubo", "w") as fh:
        ir.write_qubo_coo(inst.qubo, fh)
    _write_json(str(prefix) + ".mapping.json", enc.mapping_to_json(inst))
    _write_json(str(prefix) + ".constraints.json",
                ir.constraints_to_json(inst.qubo.constraints))
    if args.export_ising:
        with open(str(prefix) + ".ising", "w") as fh:
            ir.write_ising_coo(ir.qubo_to_ising(inst.qubo), fh)
    print("encoded %d vars, %d constraints -> %s.qubo"
          % (inst.qubo.num_vars, len(inst.qubo.constraints), prefix))
    return 0


def cmd_solve(args):
    with open(args.qubo) as fh:
        q = ir.read_qubo_coo(fh)
    if args.constraints:
        with open(args.constraints) as fh:
            q.constraints = ir.constraints_from_json(json.load(fh))
    if args.solver == "brute":
        result = solvers.brute_force(q, cap=args.brute_cap)
    elif args.solver == "sa":
        result = solvers.simulated_annealing(q, _sa_params(args))
    elif args.solver == "fem":
        result = solvers.fem_solve(q, _fem_params(args))
    else:
        raise ValueError("unknown solver %r" % args.solver)
    doc = result.to_json_dict()
    if q.constraints:
        satisfied, violations = q.audit(result.best_assignment)
        doc["audit"] = {"satisfied": satisfied, "total": len(q.constraints),
                        "violated": [lbl for lbl, _ in violations[:50]]}
    _write_json(args.out, doc)
    _write_json(args.out + ".timing.json", {"wall_time_s": result.wall_time})
    print("energy %s -> %s" % (doc["energy"], args.out))
    return 0


def _verify_one(args, sample_index, out_path):
    m, ds, x, y = _load_sample_at(args, sample_index)
    spec = _build_spec(args, m, ds)
    report = run_verify(m, x, bnn.forward(m, x)[0], spec, solver=args.solver,
                        sa_params=_sa_params(args), fem_params=_fem_params(args),
                        brute_cap=args.brute_cap)
    with open(out_path, "w") as fh:
        fh.write(report.to_json())
    _write_json(out_path + ".timing.json", {"wall_time_s": report.wall_time})
    return report.verdict


def _load_sample_at(args, sample_index):
    m = bnn.load_model(args.model)
    ds = bnn.load_idx_dataset(args.images, args.labels,
                              threshold=m.binarization_threshold)
    x, y = ds.sample(sample_index)
    return m, ds, x, y


def cmd_verify(args):
    if args.batch:
        indices = [int(t) for t in args.batch.split(",")]
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(i, str(out_dir / ("report_%05d.json" % i))) for i in indices]
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                verdicts = list(pool.map(_verify_one, [args] * len(jobs),
                                         [i for i, _ in jobs],
                                         [p for _, p in jobs]))
        else:
            verdicts = [_verify_one(args, i, p) for i, p in jobs]
        for (i, _), v in zip(jobs, verdicts):
            print("sample %d: %s" % (i, v))
        return 0
    verdict = _verify_one(args, args.sample, args.out)
    print("verdict: %s -> %s" % (verdict, args.out))
    return 0


def cmd_oracle(args):
    """Ground truth by direct mask enumeration on the network."""
    m, ds, x, y = _load_sample(args)
    spec = _build_spec(args, m, ds)
    clean, _, _ = bnn.forward(m, x)
    witness = None
    examined = 0
    for combo in iter_masks(spec.perturbable, spec.budget):
        examined += 1
        mask = np.zeros(m.input_width, dtype=np.int8)
        mask[list(combo)] = 1
        label, _, _ = bnn.forward(m, bnn.apply_mask(x, mask))
        if label != clean:
            witness = (mask, label)
            break
    doc = {
        "sample": args.sample,
        "clean_label": clean,
        "budget": spec.budget,
        "perturbable": list(spec.perturbable),
        "masks_examined": examined,
        "verdict": (VERDICT_NON_ROBUST if witness
                    else VERDICT_ROBUST_WITHIN_MODEL),
        "witness_runs": rle_indices(witness[0]) if witness else [],
        "witness_size": int(witness[0].sum()) if witness else None,
        "new_label": witness[1] if witness else None,
    }
    _write_json(args.out, doc)
    print("oracle verdict: %s -> %s" % (doc["verdict"], args.out))
    return 0


def _render_grid(bits, rows, cols, flips=None):
    flips = set() if flips is None else set(flips)
    lines = []
    for r in range(rows):
        row = []
        for c in range(cols):
            j = r * cols + c
            ch = "#" if bits[j] else "."
            if j in flips:
                ch = "O" if bits[j] else "x"
            row.append(ch)
        lines.append("".join(row))
    return "\n".join(lines)


def _write_pgm(path, bits, rows, cols):
    with open(path, "w") as fh:
        fh.write("P2\n%d %d\n255\n" % (cols, rows))
        for r in range(rows):
            fh.write(" ".join("255" if bits[r * cols + c] else "0"
                              for c in range(cols)) + "\n")


def cmd_report(args):
    """Render original vs. perturbed inputs from a verification report."""
    with open(args.report) as fh:
        rep = json.load(fh)
    m, ds, x, y = _load_sample(args)
    rows, cols = m.geometry.rows, m.geometry.cols
    mask = np.zeros(m.input_width, dtype=np.int8)
    for start, length in rep.get("witness_runs", []):
        mask[start:start + length] = 1
    x_bits = bnn.spin_to_bool(x)
    x_pert = bnn.spin_to_bool(bnn.apply_mask(x, mask))
    flips = [int(j) for j in np.flatnonzero(mask)]
    text = ["verdict: %s" % rep["verdict"],
            "clean label: %s  new label: %s" % (rep["clean_label"], rep["new_label"]),
            "", "original:", _render_grid(x_bits, rows, cols),
            "", "perturbed (x: 1->0 flip, O: 0->1 flip):",
            _render_grid(x_pert, rows, cols, flips)]
    out = Path(args.out_prefix)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(str(out) + ".txt", "w") as fh:
        fh.write("\n".join(text) + "\n")
    _write_pgm(str(out) + "_original.pgm", x_bits, rows, cols)
    _write_pgm(str(out) + "_perturbed.pgm", x_pert, rows, cols)
    print("\n".join(text))
    return 0


def _add_sample_args(p):
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--sample", type=int, default=0)


def _add_spec_args(p):
    p.add_argument("--pmax", type=int, default=16)
    p.add_argument("--eps", type=int, required=True)
    p.add_argument("--pixels", help="explicit comma-separated pixel indices")
    p.add_argument("--tie-mode", choices=enc.TIE_MODES, default="argmax")


def _add_solver_args(p):
    p.add_argument("--solver", choices=["brute", "sa", "fem"], default="sa")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=16)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--fem-steps", type=int, default=1000)
    p.add_argument("--heating-schedule", action="store_true")
    p.add_argument("--brute-cap", type=int, default=solvers.BRUTE_FORCE_CAP)


def build_parser():
    ap = argparse.ArgumentParser(prog="bnnverify")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="clean-label prediction")
    _add_sample_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("encode", help="write QUBO COO + sidecars")
    _add_sample_args(p)
    _add_spec_args(p)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--export-ising", action="store_true")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("solve", help="minimize a QUBO COO file")
    p.add_argument("--qubo", required=True)
    p.add_argument("--constraints", help="constraint sidecar for auditing")
    p.add_argument("--out", required=True)
    _add_solver_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="full pipeline, writes a report")
    _add_sample_args(p)
    _add_spec_args(p)
    _add_solver_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", help="comma-separated sample indices")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="mask-enumeration ground truth")
    _add_sample_args(p)
    _add_spec_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="render original vs perturbed input")
    _add_sample_args(p)
    p.add_argument("--report", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_report)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except solvers.BruteForceCapError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CAP
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
