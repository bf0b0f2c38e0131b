import os
import json
import random
import argparse
import datetime

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.collections import PolyCollection

from hho2d.mesh import edge_param

"""
Tools
"""

COMMANDS = ("run", "convergence", "flag-layer", "check")


def _flag(parser, name, **kwargs):
    # None marks a flag that was not given
    parser.add_argument(name, default=None, **kwargs)


def parse_args(argv=None):
    common = argparse.ArgumentParser(add_help=False)
    # input args
    _flag(common, '--config', type=str, help="JSON file with RunConfig fields; explicit flags override it")
    _flag(common, '--mesh', type=str, nargs='+', help="mesh files or generators such as gen:rect:4,8,16")
    _flag(common, '--case', type=str)
    # discretization args
    _flag(common, '--k', type=int)
    _flag(common, '--k-list', dest='k_list', type=int, nargs='+')
    _flag(common, '--eps', type=float)
    _flag(common, '--eps-list', dest='eps_list', type=float, nargs='+')
    _flag(common, '--hp', action='store_true')
    _flag(common, '--hp-symmetric', dest='hp_symmetric', action='store_true')
    _flag(common, '--subedges', type=int)
    _flag(common, '--orthonormal', action='store_true')
    _flag(common, '--l2-field', dest='l2_field', type=str, choices=["reconstruction", "cell"])
    # solver args
    _flag(common, '--solver', type=str, choices=["direct", "cg"])
    _flag(common, '--cond', action='store_true')
    _flag(common, '--cond-method', dest='cond_method', type=str, choices=["auto", "dense", "lanczos"])
    _flag(common, '--serial', action='store_true')
    _flag(common, '--workers', type=int)
    # experiment args
    _flag(common, '--theta', type=float)
    _flag(common, '--suite', type=str, choices=["quadrature", "local", "assembly", "norms", "all"])
    _flag(common, '--mutate-sign', dest='mutate_sign', action='store_true')
    _flag(common, '--seed', type=int)
    # output args
    _flag(common, '--out', type=str)
    _flag(common, '--plot', action='store_true')
    _flag(common, '--quiet', action='store_true')

    parser = argparse.ArgumentParser(prog="hho2d", description="HHO solver for eps Lap^2 u - Lap u = f in 2D")
    sub = parser.add_subparsers(dest='command', required=True)
    for command in COMMANDS:
        sub.add_parser(command, parents=[common])
    return parser.parse_args(argv)


def args_to_fields(args):
    """Explicitly given flags as RunConfig fields."""
    fields = {k: v for k, v in vars(args).items() if v is not None and k not in ('config', 'eps_list')}
    eps = []
    if args.eps is not None:
        eps.append(args.eps)
    if args.eps_list is not None:
        eps.extend(args.eps_list)
    if eps:
        fields['eps'] = eps
    return fields


def read_config_file(path):
    with open(path, "r") as f:
        data = json.load(f)
    if isinstance(data.get("eps"), (int, float)):
        data["eps"] = [data["eps"]]
    if isinstance(data.get("mesh"), str):
        data["mesh"] = [data["mesh"]]
    return data


def current_date_time(delta_hours=0):
    now = datetime.datetime.now() + datetime.timedelta(hours=delta_hours)
    formatted_date_time = now.strftime("%Y-%m-%d_%H:%M:%S")
    return formatted_date_time


def seed_everything(seed=42):
    random.seed(seed)
    np.random.seed(seed)


"""
Visualize convergence histories and flagged cells
"""

r"""
use example:

>>> from utils import Visualizer
>>> visualizer = Visualizer("./output")
>>> visualizer.show(save_path="./output/convergence.png", dpi=150)
"""


class Visualizer:
    def __init__(self, run_dir, state_file="run_state.json"):
        log_file = os.path.join(run_dir, state_file)
        with open(log_file, "r") as f:
            self.log = json.load(f)
        self.series = {}
        for record in self.log["log_history"]:
            key = (record["k"], record["eps"])
            self.series.setdefault(key, []).append(record)

    def show(self, save_path=None, dpi=200, linewidth=1.0, column="energy_err", **kwargs):
        fig = plt.figure(figsize=(8, 6), dpi=dpi)
        plt.xlabel("sqrt(DoFs)")
        plt.ylabel(column)
        for (k, eps), records in self.series.items():
            x = [np.sqrt(r["dofs"]) for r in records]
            y = [r[column] for r in records]
            plt.loglog(x, y, marker="o", linewidth=linewidth, label=f"k={k}, eps={eps:g}", **kwargs)
        plt.legend()
        plt.grid(True, which="both", linewidth=0.3)
        if save_path is not None:
            plt.savefig(save_path)
        plt.close(fig)


def plot_flagged_cells(mesh, report, save_path, dpi=200, samples=8):
    """Draw the mesh with the flagged cells filled."""
    polygons, colors = [], []
    flagged = set(report.flagged)
    arc_t = np.linspace(0.0, 1.0, samples, endpoint=False)
    for cell in mesh.cells:
        outline = []
        for face, aligned in mesh.cell_edges(cell.id):
            points, _ = edge_param(face, aligned, arc_t if face.is_arc else arc_t[:1])
            outline.extend(points)
        polygons.append(np.array(outline))
        colors.append("tab:red" if cell.id in flagged else "white")
    fig, ax = plt.subplots(figsize=(6, 6), dpi=dpi)
    ax.add_collection(PolyCollection(polygons, facecolors=colors, edgecolors="black", linewidths=0.2))
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_title(f"theta={report.theta:g}, {len(flagged)} flagged cells")
    fig.savefig(save_path)
    plt.close(fig)
