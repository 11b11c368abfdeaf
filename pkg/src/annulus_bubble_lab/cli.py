"""Command-line entry point: ``annulus-bubble-lab <command> --config <path>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a verified property did not hold.
"""

import os

# BLAS threading can reorder reductions; pin it before numpy is imported so
# that results are bit-identical for any --threads value.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import csv  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from .config import COMMANDS, load_config  # noqa: E402
from .errors import ConfigError, NumericalError  # noqa: E402

log = logging.getLogger("annulus_bubble_lab")

SCHEMA = "1"
DEPENDS = {
    "radial": [],
    "spectrum": ["radial"],
    "sweep": [],
    "landscape": ["radial"],
    "construct": ["radial", "landscape"],
    "verify": ["radial", "landscape"],
}
ORDER = ["radial", "spectrum", "sweep", "landscape", "construct", "verify"]


def _rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")


def _plain(x):
    import numpy as np

    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)}")


class Pipeline:
    """Runs stages in dependency order and records their outputs."""

    def __init__(self, cfg, out: Path, threads: int = 1):
        self.cfg = cfg
        self.out = out
        self.threads = max(1, int(threads))
        self.state = {}
        self.stages = []
        self.files = []

    def path(self, name) -> Path:
        p = self.out / name
        self.files.append(name)
        return p

    # -- stages ---------------------------------------------------------------

    def radial(self):
        from .geometry import AnnulusGeometry
        from .radial import find_r0, radial_energy, solve_u0

        c = self.cfg
        geom = AnnulusGeometry(c.a, c.b, c.N)
        sol = solve_u0(geom, tol=c.radial_tol, grid_size=c.grid_size)
        r0 = find_r0(sol)
        self.state.update(geom=geom, u0=sol, r0=r0.r0)
        sol.write_csv(self.path("radial.csv"))
        scalars = {"r0": r0.r0, "m0": r0.m0, "slope": sol.slope, "max_u": sol.max_u,
                   "ode_residual": sol.ode_residual, "energy": radial_energy(sol)}
        _rows(self.path("radial_summary.csv"), ["key", "value"], sorted(scalars.items()))
        return scalars, {}

    def spectrum(self):
        from .spectrum import nondegeneracy_certificate

        c = self.cfg
        rep = nondegeneracy_certificate(self.state["u0"], self.state["geom"], k_max=c.k_max,
                                        n_eigs=c.n_eigs, margin_tol=c.margin_tol, M=c.M)
        rows = [(k, i + 1, float(v)) for k, vals in rep.table.items() for i, v in enumerate(vals)]
        _rows(self.path("spectrum.csv"), ["k", "i", "mu"], rows)
        _json(self.path("certificate.json"), rep.to_dict())
        checks = {"certified": rep.certified, "sign_pattern": rep.sign_pattern_ok,
                  "richardson": rep.richardson_ok}
        return {"certificate_margin": rep.margin, "cutoff_rule": rep.cutoff_rule}, checks

    def sweep(self):
        from .spectrum import degeneracy_sweep

        c = self.cfg
        res = degeneracy_sweep(c.sweep_R, N=c.N, k_range=c.sweep_k, M=c.sweep_M,
                               width=c.sweep_width)
        res.write_csv(self.path("sweep.csv"))
        with open(self.path("crossings.json"), "w") as fh:
            fh.write(res.crossings_json() + "\n")
        found = {k: any(x.k == k for x in res.crossings) for k in res.k_range}
        checks = {f"crossing_k{k}": v for k, v in found.items()}
        return {"n_crossings": len(res.crossings), "skipped": len(res.skipped)}, checks

    def landscape(self):
        from .energy import compute_constants, critical_point, landscape

        c = self.cfg
        consts = compute_constants(self.state["geom"], self.state["u0"], k_ref=c.k_ref)
        land = landscape(consts, self.state["u0"], c.eta, c.margin, c.n_ell, c.n_r)
        land.write(self.path("landscape.dat"))
        cp = critical_point(consts, self.state["u0"], c.eta, c.margin)
        self.state.update(consts=consts, crit=cp)
        _json(self.path("critical_point.json"), {"constants": consts.to_dict(), **cp.to_dict()})
        checks = {"hessian_negative": max(cp.hessian_eigs) < 0, "gradient_small": cp.grad_norm < 1e-6,
                  "r_matches_r0": cp.r_discrepancy < 1e-3}
        return {"ell0": cp.ell_star, "r_star": cp.r_star, "F_star": cp.F_star,
                "ell_printed": cp.ell_printed, "ell_form": cp.matches}, checks

    def _ell_r(self):
        c = self.cfg
        ell = c.ell if c.ell is not None else self.state["crit"].ell_star
        r = c.r if c.r is not None else self.state["crit"].r_star
        return ell, r

    def construct(self):
        from .ansatz import assemble_ansatz, field_slice, ordered_map, write_slice

        c = self.cfg
        ell, r = self._ell_r()

        def one(k):
            ans = assemble_ansatz(k, ell, r, self.state["geom"], self.state["u0"], L_max=c.L_max)
            return field_slice(ans, c.slice_n)

        for k, data in zip(c.k_list, ordered_map(one, c.k_list, self.threads)):
            write_slice(self.path(f"slice_k{k}.csv"), data)
        return {"ell": ell, "r": r}, {}

    def verify(self):
        import numpy as np

        from .ansatz import (assemble_ansatz, decay_fit, pde_residual_probe, probe_points,
                             random_probes, symmetry_residual)
        from .energy import QuadConfig, expansion_check

        c = self.cfg
        geom, u0 = self.state["geom"], self.state["u0"]
        ell, r = self._ell_r()
        fit = decay_fit(c.k_list, ell, r, geom, u0, density=c.density, L_max=c.L_max,
                        workers=self.threads)
        fit.write_csv(self.path("decay.csv"))
        quad = QuadConfig(order=c.quad_order, check_order=c.quad_check_order, tol=c.quad_tol)
        exp = expansion_check(c.expansion_k, ell, r, geom, u0, self.state["consts"], quad,
                              ablation_k=c.ablation_k, workers=self.threads)
        exp.write_csv(self.path("expansion.csv"))

        ans = assemble_ansatz(c.symmetry_k, ell, r, geom, u0, L_max=c.L_max)
        sym = symmetry_residual(ans, random_probes(ans, c.symmetry_probes))
        bad = assemble_ansatz(c.symmetry_k, ell, r, geom, u0, L_max=c.L_max,
                              perturb=(1e-3, 0.0, 0.0))
        sym_bad = symmetry_residual(bad, random_probes(bad, 10))
        rng = np.random.default_rng(0)
        d = rng.normal(size=(1000, 3))
        d /= np.linalg.norm(d, axis=1)[:, None]
        bdry = np.vstack([geom.a * d[:500], geom.b * d[500:]])
        bmax = float(np.max(np.abs(ans.value(bdry))))
        st_ans = assemble_ansatz(c.stencil_k, ell, r, geom, u0, L_max=c.L_max)
        st = pde_residual_probe(st_ans, probe_points(st_ans, c.stencil_points))

        inv = {"decay_slope": fit.slope, "decay_sigma": fit.sigma,
               "decay_stability": float(np.max(fit.stability)),
               "expansion_final_rel_error": exp.final_rel_error,
               "expansion_fitted_power": exp.fitted_power,
               "ablation_ratio": exp.ablation_ratio, "symmetry_deviation": sym.max_deviation,
               "perturbed_symmetry_deviation": sym_bad.max_deviation,
               "boundary_max": bmax, "stencil_ratio": st.ratio}
        _json(self.path("verify.json"), {**inv, "decay": {
            "k": fit.k, "lam": fit.lam, "norms": fit.norms, "stderr": fit.slope_stderr},
            "expansion": exp.to_dict()})
        checks = {
            "decay_slope": fit.passes,
            "decay_stability": bool(np.max(fit.stability) < 0.05),
            "expansion_decreasing": exp.decreasing,
            "expansion_final_error": exp.final_rel_error < 0.2,
            "symmetry": sym.max_deviation < 1e-8,
            "symmetry_ablation_detected": sym_bad.max_deviation > 1e-5,
            "boundary": bmax < 1e-6,
            "stencil_order": 3.6 <= st.ratio <= 4.4,
        }
        return inv, checks

    # -- driver ---------------------------------------------------------------

    def run(self, command):
        wanted = ORDER if command == "all" else _closure(command)
        failure = None
        for name in wanted:
            entry = {"name": name}
            try:
                log.info("stage %s", name)
                scalars, checks = getattr(self, name)()
            except NumericalError as exc:
                entry.update(status="failed", error=str(exc), failing_stage=exc.stage or name)
                self.stages.append(entry)
                # a numerical failure outranks earlier violations
                failure = ("numerical", name, exc)
                break
            entry["scalars"] = scalars
            entry["checks"] = {k: bool(v) for k, v in checks.items()}
            entry["status"] = "ok" if all(checks.values()) else "violations"
            self.stages.append(entry)
            if entry["status"] != "ok":
                bad = [f"{name}.{k}" for k, v in checks.items() if not v]
                failure = failure or ("invariant", name, [])
                failure[2].extend(bad)
        return failure


def _closure(command):
    need = []

    def visit(n):
        for d in DEPENDS[n]:
            visit(d)
        if n not in need:
            need.append(n)

    visit(command)
    return [n for n in ORDER if n in need]


def emit_manifest(pipe: Pipeline, command: str) -> Path:
    """Write ``manifest.json``: config echo, stage records, key scalars and a
    SHA-256 inventory of every emitted file."""
    out = pipe.out
    scal = {}
    for st in pipe.stages:
        s = st.get("scalars", {})
        for key, src in (("r0", "r0"), ("ell0", "ell0"), ("certificate_margin", "certificate_margin"),
                         ("decay_slope", "decay_slope")):
            if src in s:
                scal[key] = s[src]
    files = []
    for name in sorted(set(pipe.files)):
        data = (out / name).read_bytes()
        files.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {"schema": SCHEMA, "command": command, "config": pipe.cfg.echo(),
                "stages": pipe.stages, "scalars": scal, "files": files}
    path = out / "manifest.json"
    try:
        _json(path, manifest)
    except OSError as exc:
        raise NumericalError(f"cannot write manifest: {exc}", stage="manifest") from exc
    return path


def build_parser():
    p = argparse.ArgumentParser(prog="annulus-bubble-lab",
                                description="Numerical companion for sign-changing bubble "
                                            "solutions of the critical Lane-Emden equation "
                                            "on an annulus.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI file; omitted keys take built-in defaults")
    p.add_argument("--out", help="output directory (overrides config and environment)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-k tasks")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.out)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 2
    pipe = Pipeline(cfg, out, args.threads)
    try:
        failure = pipe.run(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        emit_manifest(pipe, args.command)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    if failure is None:
        return 0
    kind, stage, detail = failure
    if kind == "numerical":
        print(f"numerical failure in stage {getattr(detail, 'stage', None) or stage}: {detail}",
              file=sys.stderr)
        return 3
    print(f"invariant violations: {', '.join(detail)}", file=sys.stderr)
    return 4


if __name__ == "__main__":
    sys.exit(main())
