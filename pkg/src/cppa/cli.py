"""Command-line scenario runner: parse, build, price, compare, and emit
machine-readable reports and cut stores.

Exit codes: 0 Optimal, 2 Infeasible, 3 TimeLimit, 1 on I/O or schema
errors. All artifacts are deterministic given identical inputs; wall-time
fields in report.json are the only exception and are documented as such.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import algorithm, cuts, econ, netio

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_TIME_LIMIT = 3


@dataclass
class RunSpec:
    case_path: str
    network_model: str = "cp"
    pricing_rule: str = "ip"
    config: algorithm.CppaConfig = None
    contingency_path: str = None
    cuts_in: str = None
    cuts_out: str = None
    reference_prices: str = None
    phi_path: str = None
    voll: float = 1000.0
    out_dir: str = "out"
    dump_model: bool = False
    dump_basis: bool = False


def _clean(value):
    """No NaN ever serialized; missing values become explicit nulls."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_prices_csv(path, case, result):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bus_id", "price_p", "price_q"])
        for bus in case.buses:
            p = result.prices_p.get(bus.id) if result.prices_p else None
            q = result.prices_q.get(bus.id) if result.prices_q else None
            writer.writerow([
                bus.id,
                "" if p is None else f"{p:.9f}",
                "" if q is None else f"{q:.9f}",
            ])


def _read_reference_prices(path, case):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    ref = {int(r["bus_id"]): float(r["price_p"]) for r in rows if r["price_p"]}
    return [ref[b.id] for b in case.buses if b.id in ref]


def run_scenario(spec):
    """Run one scenario end to end; returns (exit_code, report dict)."""
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    case = netio.parse_case(spec.case_path, voll=spec.voll)
    if spec.contingency_path:
        with open(spec.contingency_path) as fh:
            outages = json.load(fh)
        case = netio.apply_contingency(case, outages)

    config = spec.config or algorithm.CppaConfig()
    config.network_model = spec.network_model
    config.pricing_rule = spec.pricing_rule

    warm = None
    warm_loaded = warm_dropped = None
    if spec.cuts_in:
        warm, warm_loaded, warm_dropped = cuts.load_cuts(spec.cuts_in, case)

    if spec.dump_model and not case.islanded:
        from . import model as modelmod
        builder = (modelmod.build_dc_welfare if spec.network_model == "dc"
                   else modelmod.build_cp_welfare)
        (out_dir / "model.lp").write_text(builder(case).to_lp_text())

    result = algorithm.run_cppa(case, config, warm_cuts=warm)

    report = {
        "scenario": case.scenario_name,
        "model": spec.network_model,
        "rule": spec.pricing_rule,
        "status": result.status,
        "termination": result.termination,
        "objective": result.objective,
        "rounds": result.rounds,
        "cuts_added": result.cuts_added,
        "cuts_dropped": result.cuts_dropped,
        "cut_pool_size": len(result.pool.cuts) if result.pool else 0,
        "warm_cuts_loaded": warm_loaded,
        "warm_cuts_dropped": warm_dropped,
        "objective_trace": result.objective_trace,
        "delta_vs_reference": None,
        "delta_per_round": None,
        "efficiency": None,
        "timings": {"time_lp_s": result.time_lp, "time_cut_s": result.time_cut},
    }

    if result.status == algorithm.STATUS_OPTIMAL:
        _write_prices_csv(out_dir / "prices.csv", case, result)
        alloc = econ.allocation_from_result(case, result)
        econ.save_allocation(alloc, out_dir / "allocation.json")

        if spec.reference_prices:
            ref = _read_reference_prices(spec.reference_prices, case)
            got = [result.prices_p[b.id] for b in case.buses]
            report["delta_vs_reference"] = econ.price_distance(got, ref)
            report["delta_per_round"] = [
                econ.price_distance([trace[b.id] for b in case.buses], ref)
                for trace in result.price_trace]

        if spec.phi_path:
            phi = econ.load_allocation(spec.phi_path)
            metrics = econ.efficiency_metrics(case, alloc, phi, result.prices_p)
        else:
            metrics = econ.efficiency_metrics(case, alloc, alloc, result.prices_p)
        report["efficiency"] = {
            "welfare": metrics.welfare, "mwp": metrics.mwp,
            "gloc": metrics.gloc, "lloc": metrics.lloc, "rdc": metrics.rdc,
        }

        if spec.cuts_out and result.pool is not None:
            cuts.save_cuts(result.pool, spec.cuts_out, case)

    _write_json(out_dir / "report.json", report)

    if result.status == algorithm.STATUS_OPTIMAL:
        code = EXIT_OK
    elif result.status == algorithm.STATUS_TIME_LIMIT:
        code = EXIT_TIME_LIMIT
    else:
        code = EXIT_INFEASIBLE
    return code, report


def build_parser():
    ap = argparse.ArgumentParser(
        prog="cppa",
        description="Cutting-plane pricing for wholesale electricity markets")
    ap.add_argument("--case", action="append", required=True,
                    help="case file (.json schema or MATPOWER .m); repeatable")
    ap.add_argument("--model", choices=["dc", "cp"], default="cp")
    ap.add_argument("--rule", choices=["ip", "ch"], default="ip")
    ap.add_argument("--time-limit", type=float, default=300.0)
    ap.add_argument("--ftol", type=float, default=1e-5)
    ap.add_argument("--ftol-rounds", type=int, default=3)
    ap.add_argument("--t-age", type=float, default=cuts.T_AGE)
    ap.add_argument("--eps-viol", type=float, default=cuts.EPS_VIOL)
    ap.add_argument("--eps-par", type=float, default=cuts.EPS_PAR)
    ap.add_argument("--rho", type=float, default=1.0)
    ap.add_argument("--max-rounds", type=int, default=None)
    ap.add_argument("--contingency", help="JSON list of branch ids to outage")
    ap.add_argument("--cuts-in", help="warm-start cut store")
    ap.add_argument("--cuts-out", help="write terminal cut store here")
    ap.add_argument("--reference-prices", help="prices.csv to compare against")
    ap.add_argument("--phi", help="AC-feasible adjusted allocation JSON")
    ap.add_argument("--voll", type=float, default=1000.0,
                    help="value of lost load for synthesized MATPOWER bids")
    ap.add_argument("--out-dir", default="out")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--dump-model", action="store_true")
    ap.add_argument("--dump-basis", action="store_true")
    ap.add_argument("--seed", type=int, default=None,
                    help="reserved; the pipeline is deterministic")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)

    def spec_for(case_path):
        out_dir = Path(args.out_dir)
        if len(args.case) > 1:
            out_dir = out_dir / Path(case_path).stem
        return RunSpec(
            case_path=case_path,
            network_model=args.model,
            pricing_rule=args.rule,
            config=algorithm.CppaConfig(
                time_limit_s=args.time_limit,
                ftol=args.ftol,
                ftol_rounds=args.ftol_rounds,
                t_age=args.t_age,
                eps_viol=args.eps_viol,
                eps_par=args.eps_par,
                rho=args.rho,
                max_rounds=args.max_rounds,
                pricing_rule=args.rule,
                network_model=args.model,
            ),
            contingency_path=args.contingency,
            cuts_in=args.cuts_in,
            cuts_out=args.cuts_out,
            reference_prices=args.reference_prices,
            phi_path=args.phi,
            voll=args.voll,
            out_dir=str(out_dir),
            dump_model=args.dump_model,
            dump_basis=args.dump_basis,
        )

    specs = [spec_for(c) for c in args.case]
    codes = []
    try:
        if args.jobs > 1 and len(specs) > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                for code, report in pool.map(lambda s: run_scenario(s), specs):
                    codes.append(code)
                    print(f"{report['scenario']}: {report['status']}")
        else:
            for spec in specs:
                code, report = run_scenario(spec)
                codes.append(code)
                print(f"{report['scenario']}: {report['status']}")
    except (netio.CaseError, cuts.CutError, econ.EconError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return max(codes) if codes else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
