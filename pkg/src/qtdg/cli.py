"""Command-line driver: `qtdg <command> [options]`.

Commands
--------
convergence   mesh ladder, solve each level, error table + rate fit (CSV)
cond          mesh ladder, 2-norm condition number per level (CSV)
solve         one solve: summary, optional grid sample CSV / matrix dump
basis         space dimension table; with a config, per-element residual audit
mesh          generate/refine a mesh file and report quality metrics

Configuration is a JSON file (--config) with sections `problem` (see
BvpConfig), `mesh` (generator/n/path/refinements), `disc` (p/space/quad_bump),
`output` (csv/grid/matrix) and `seed`; any entry can be overridden with
repeatable `--set section.key=value` flags (values parsed as JSON when
possible).  Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .coeffjet import ExprError, SingularPointError
from .dgsolver import (
    BvpConfig,
    ConfigError,
    assemble,
    build_space,
    condition_number,
    dar_error,
    l2_error,
    solve_system,
)
from .mesh2d import (
    MeshFormatError,
    NonConvexElementError,
    lshape_tri,
    quality,
    read_mesh,
    refine,
    unit_square_tri,
    write_mesh,
)
from .multiindex import dim_full, dim_qt
from .qtrefftz import (
    DegenerateOperatorError,
    dar_to_alpha,
    qt_basis,
    qt_index_set,
    qt_residual,
)
from .sparsela import IterationError, SingularMatrixError, save_matrix_market

_CONFIG_ERRORS = (
    ConfigError,
    ExprError,
    MeshFormatError,
    NonConvexElementError,
    json.JSONDecodeError,
)
_SOLVER_ERRORS = (
    SingularMatrixError,
    IterationError,
    DegenerateOperatorError,
    SingularPointError,
)

_SECTION_KEYS = {
    "problem": None,  # validated by BvpConfig
    "mesh": {"generator", "n", "path", "refinements"},
    "disc": {"p", "space", "quad_bump"},
    "output": {"csv", "grid", "matrix"},
    "seed": None,
}


# ---------------------------------------------------------------------------
# configuration plumbing


def _parse_set(text):
    if "=" not in text:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    path, raw = text.split("=", 1)
    keys = path.split(".")
    if not all(keys):
        raise ConfigError(f"--set has an empty path component: {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def load_config(path, overrides=()):
    """Read the JSON config and apply --set overrides; validates sections."""
    cfg = {}
    if path is not None:
        with open(path) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ConfigError("the configuration root must be a JSON object")
    for text in overrides:
        keys, value = _parse_set(text)
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {'.'.join(keys)} crosses a non-object")
        node[keys[-1]] = value
    unknown = set(cfg) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for name, allowed in _SECTION_KEYS.items():
        if allowed is None or name not in cfg:
            continue
        extra = set(cfg[name]) - allowed
        if extra:
            raise ConfigError(f"unknown keys in '{name}': {sorted(extra)}")
    return cfg


def _bvp_from(cfg):
    if "problem" not in cfg:
        raise ConfigError("the configuration needs a 'problem' section")
    return BvpConfig.from_dict(cfg["problem"])


def _base_mesh(mcfg):
    path = mcfg.get("path")
    if path is not None:
        return read_mesh(path)
    gen = mcfg.get("generator", "unit_square")
    n = int(mcfg.get("n", 2))
    if gen == "unit_square":
        return unit_square_tri(n)
    if gen == "lshape":
        return lshape_tri(n)
    raise ConfigError(f"unknown mesh generator {gen!r} (unit_square or lshape)")


def _mesh_ladder(cfg):
    mcfg = cfg.get("mesh", {})
    levels = int(mcfg.get("refinements", 4))
    if levels < 1:
        raise ConfigError("mesh.refinements must be >= 1")
    meshes = [_base_mesh(mcfg)]
    for _ in range(levels - 1):
        meshes.append(refine(meshes[-1]))
    return meshes


def _disc_from(cfg):
    dcfg = cfg.get("disc", {})
    if "p" not in dcfg:
        raise ConfigError("the configuration needs disc.p")
    p = int(dcfg["p"])
    space = dcfg.get("space", "qt")
    if space not in ("qt", "full", "both"):
        raise ConfigError(f"disc.space must be qt, full or both, got {space!r}")
    kinds = ["qt", "full"] if space == "both" else [space]
    return p, kinds, int(dcfg.get("quad_bump", 0))


def _open_out(cfg, args):
    path = args.output or cfg.get("output", {}).get("csv")
    if path is None:
        return sys.stdout, None
    return open(path, "w"), path


def _config_header(out, cfg):
    out.write("# config: " + json.dumps(cfg, sort_keys=True) + "\n")


def _fmt(x):
    return "%.12e" % x


# ---------------------------------------------------------------------------
# commands


def cmd_convergence(args):
    cfg = load_config(args.config, args.set or [])
    bvp = _bvp_from(cfg)
    if bvp.exact is None:
        raise ConfigError("convergence studies need problem.exact")
    p, kinds, bump = _disc_from(cfg)
    meshes = _mesh_ladder(cfg)
    out, path = _open_out(cfg, args)
    _config_header(out, cfg)
    out.write("h,p,qt,ndof,l2error,dgerror,rate_l2,rate_dg\n")
    fits = []
    for kind in kinds:
        rows = []
        for mesh in meshes:
            space = build_space(mesh, bvp, p, kind=kind)
            field = solve_system(assemble(space, bvp, quad_bump=bump))
            h = float(mesh.diameters.max())
            rows.append(
                (h, space.ndof, l2_error(field, bvp, quad_bump=bump),
                 dar_error(field, bvp, quad_bump=bump))
            )
        for k, (h, ndof, el2, edg) in enumerate(rows):
            if k == 0:
                r2 = rdg = ""
            else:
                hprev, _, el2p, edgp = rows[k - 1]
                denom = np.log(hprev / h)
                r2 = _fmt(np.log(el2p / el2) / denom)
                rdg = _fmt(np.log(edgp / edg) / denom)
            out.write(
                f"{_fmt(h)},{p},{int(kind == 'qt')},{ndof},"
                f"{_fmt(el2)},{_fmt(edg)},{r2},{rdg}\n"
            )
        logh = np.log([r[0] for r in rows])
        s2 = np.polyfit(logh, np.log([r[2] for r in rows]), 1)[0]
        sdg = np.polyfit(logh, np.log([r[3] for r in rows]), 1)[0]
        fits.append(f"# fit {kind}: l2 slope = {s2:.3f}, dg slope = {sdg:.3f}")
    for line in fits:
        out.write(line + "\n")
    if path:
        out.close()
        print(f"wrote {path}")
    return 0


def cmd_cond(args):
    cfg = load_config(args.config, args.set or [])
    bvp = _bvp_from(cfg)
    p, kinds, bump = _disc_from(cfg)
    meshes = _mesh_ladder(cfg)
    seed = int(cfg.get("seed", 0))
    out, path = _open_out(cfg, args)
    _config_header(out, cfg)
    out.write("h,p,qt,cond,eoc_cond\n")
    for kind in kinds:
        rows = []
        for mesh in meshes:
            space = build_space(mesh, bvp, p, kind=kind)
            system = assemble(space, bvp, quad_bump=bump)
            cond = condition_number(system, seed=seed, maxiter=50000)
            rows.append((float(mesh.diameters.max()), cond))
        for k, (h, cond) in enumerate(rows):
            if k == 0:
                eoc = ""
            else:
                hprev, cprev = rows[k - 1]
                eoc = _fmt(np.log(cond / cprev) / np.log(hprev / h))
            out.write(f"{_fmt(h)},{p},{int(kind == 'qt')},{_fmt(cond)},{eoc}\n")
    if path:
        out.close()
        print(f"wrote {path}")
    return 0


def cmd_solve(args):
    cfg = load_config(args.config, args.set or [])
    bvp = _bvp_from(cfg)
    p, kinds, bump = _disc_from(cfg)
    if len(kinds) != 1:
        raise ConfigError("solve needs a single disc.space (qt or full)")
    mesh = _base_mesh(cfg.get("mesh", {}))
    space = build_space(mesh, bvp, p, kind=kinds[0])
    system = assemble(space, bvp, quad_bump=bump)
    field = solve_system(system)
    lo, hi = field.range(quad_bump=bump)
    print(
        f"space={kinds[0]} p={p} elements={mesh.n_elements} ndof={space.ndof} "
        f"h={mesh.diameters.max():.6g}"
    )
    print(f"solution range: [{lo:.12g}, {hi:.12g}]")
    if bvp.exact is not None:
        print(f"l2_error={_fmt(l2_error(field, bvp, quad_bump=bump))}")
        print(f"dg_error={_fmt(dar_error(field, bvp, quad_bump=bump))}")
    ocfg = cfg.get("output", {})
    path = args.output or ocfg.get("csv")
    if path:
        nx, ny = ocfg.get("grid", [51, 51])
        xs = np.linspace(mesh.vertices[:, 0].min(), mesh.vertices[:, 0].max(), int(nx))
        ys = np.linspace(mesh.vertices[:, 1].min(), mesh.vertices[:, 1].max(), int(ny))
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        vals = field.eval(pts)
        with open(path, "w") as fh:
            _config_header(fh, cfg)
            fh.write("x,y,u_h\n")
            for (x, y), v in zip(pts, vals):
                fh.write(f"{_fmt(x)},{_fmt(y)},{_fmt(v)}\n")
        print(f"wrote {path} ({int(nx)}x{int(ny)} grid sample)")
    mpath = args.dump_matrix or ocfg.get("matrix")
    if mpath:
        save_matrix_market(system.A, mpath, comment="qtdg system matrix")
        print(f"wrote {mpath}")
    return 0


def cmd_basis(args):
    print("d p m dim_qt dim_full ratio")
    for d in (1, 2, 3):
        for p in (2, 3, 4, 5, 6, 10, 20):
            nqt, nfull = dim_qt(d, p, 2), dim_full(d, p)
            print(f"{d} {p} 2 {nqt} {nfull} {nfull / nqt:.2f}")
    if args.config is None and not args.set:
        return 0
    cfg = load_config(args.config, args.set or [])
    bvp = _bvp_from(cfg)
    p, _, _ = _disc_from(cfg)
    mesh = _base_mesh(cfg.get("mesh", {}))
    space = build_space(mesh, bvp, p, kind="qt", audit=True)
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    sample = rng.choice(
        mesh.n_elements, size=min(20, mesh.n_elements), replace=False
    )
    worst = 0.0
    for e in sample:
        op = dar_to_alpha(
            bvp.K, bvp.beta, bvp.sigma, space.centers[e], p, scale=space.h[e]
        )
        for v in qt_basis(op, p):
            worst = max(worst, qt_residual(v, op, None, p))
    print(f"audit: {len(sample)} element(s), max residual = {worst:.3e}")
    if args.element is not None:
        e = int(args.element)
        if not 0 <= e < mesh.n_elements:
            raise ConfigError(f"--element {e} out of range (0..{mesh.n_elements - 1})")
        from .poly import ScaledMonomialPoly

        labels = qt_index_set(2, p, 2)
        for col, (r, s) in enumerate(labels):
            print(f"element {e} basis ({r},{s[0]}):")
            poly = ScaledMonomialPoly(
                2, p, space.centers[e], space.h[e], space.C[e, col]
            )
            print(poly.dump())
    return 0


def cmd_mesh(args):
    if args.path is not None:
        mesh = read_mesh(args.path)
    elif args.generator == "unit_square":
        mesh = unit_square_tri(args.n)
    elif args.generator == "lshape":
        mesh = lshape_tri(args.n)
    else:
        raise ConfigError(f"unknown generator {args.generator!r}")
    for _ in range(args.refine):
        mesh = refine(mesh)
    q = quality(mesh)
    print(
        f"elements={mesh.n_elements} vertices={mesh.vertices.shape[0]} "
        f"facets={len(mesh.facets)} boundary={len(mesh.boundary_facets())}"
    )
    print(
        f"h={mesh.diameters.max():.6g} r_star={q['r_star']:.6g} "
        f"C_g={q['C_g']:.6g} N_partial={q['N_partial']} "
        f"chunkiness_ok={q['chunkiness_ok']}"
    )
    if args.output:
        write_mesh(mesh, args.output)
        print(f"wrote {args.output}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="qtdg", description="quasi-Trefftz DG experiments"
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument(
            "config_file", nargs="?", help="JSON configuration file"
        )
        sp.add_argument("--config", "-c", help="JSON configuration file")
        sp.add_argument(
            "--set",
            action="append",
            metavar="PATH=VALUE",
            help="override a config entry (repeatable), e.g. disc.p=3",
        )
        sp.add_argument("--output", "-o", help="output file (default from config)")

    sp = sub.add_parser("convergence", help="error table over a mesh ladder")
    common(sp)
    sp.set_defaults(fn=cmd_convergence)

    sp = sub.add_parser("cond", help="condition numbers over a mesh ladder")
    common(sp)
    sp.set_defaults(fn=cmd_cond)

    sp = sub.add_parser("solve", help="solve once and sample the solution")
    common(sp)
    sp.add_argument("--dump-matrix", help="write the system matrix (MatrixMarket)")
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("basis", help="space dimensions and residual audit")
    common(sp)
    sp.add_argument("--element", type=int, help="dump basis coefficients of element")
    sp.set_defaults(fn=cmd_basis)

    sp = sub.add_parser("mesh", help="generate or inspect a mesh")
    sp.add_argument("generator_pos", nargs="?", metavar="generator")
    sp.add_argument("n_pos", nargs="?", type=int, metavar="n")
    sp.add_argument("--generator", default="unit_square")
    sp.add_argument("--n", type=int, default=2)
    sp.add_argument("--path", help="read an existing mesh file instead")
    sp.add_argument("--refine", type=int, default=0)
    sp.add_argument("--output", "--out", "-o", help="write the mesh file here")
    sp.set_defaults(fn=cmd_mesh)
    return ap


def _merge_positionals(args):
    if getattr(args, "config_file", None):
        if args.config:
            raise ConfigError("config file given both positionally and via --config")
        args.config = args.config_file
    if getattr(args, "generator_pos", None):
        args.generator = args.generator_pos
    if getattr(args, "n_pos", None) is not None:
        args.n = args.n_pos


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        _merge_positionals(args)
        return args.fn(args)
    except _SOLVER_ERRORS as err:
        print(f"solver error: {err}", file=sys.stderr)
        return 3
    except _CONFIG_ERRORS as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, NotImplementedError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
