"""Model builders and the JSON model-file format.

A model is described by a plain dictionary (the parsed JSON file). Lengths in
the file are given in ``units`` ("m" or "mm") and are converted to SI when the
model is built; masses are in kg and densities in kg/m^3.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .limb_kin import AssembledPKM, LimbModel
from .loops import CutJointSpec, CycleModel, LimbLoops, cut_frames_from_world
from .modular import Mount, instantiate_all
from .se3 import (P_ROT_Z, P_TRANS, ROTATION_Z, TRANSLATION, TRANSLATION_ROTATION, Pose,
                  SpatialInertia, rot_z, screw_from_geometry)
from .topology import Edge, LimbSubgraph, MechanismGraph, analyze_limb
from .tree_kin import TreeModel

ALUMINIUM = 2700.0
DATA_DIR = Path(__file__).parent / "data"
UNIT_SCALE = {"m": 1.0, "mm": 1000.0}
AXES = {"x": 0, "y": 1, "z": 2}


@dataclass
class InertiaPrimitive:
    """Homogeneous solid with its COM at the body-frame origin (plus optional
    offset ``com``). ``axis`` is the symmetry axis of cylinders and rods."""

    kind: str
    length: float = 0.0
    diameter: float = 0.0
    dims: tuple = (0.0, 0.0, 0.0)
    axis: str = "z"
    density: float = ALUMINIUM
    mass: float | None = None
    com: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind in ("solid_cylinder", "rod"):
            if self.length <= 0.0 or self.diameter <= 0.0:
                raise ValidationError(f"{self.kind} needs positive length and diameter")
            if self.axis not in AXES:
                raise ValidationError(f"unknown axis {self.axis!r}")
        elif self.kind == "box":
            if min(self.dims) <= 0.0:
                raise ValidationError("box needs positive dimensions")
        else:
            raise ValidationError(f"unknown inertia primitive {self.kind!r}")
        if self.density <= 0.0:
            raise ValidationError("density must be positive")

    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(self.dims))
        return np.pi * (0.5 * self.diameter) ** 2 * self.length

    def spatial_inertia(self) -> SpatialInertia:
        m = self.mass if self.mass is not None else self.density * self.volume()
        if self.kind == "box":
            a, b, c = self.dims
            Th = m / 12.0 * np.diag([b * b + c * c, a * a + c * c, a * a + b * b])
        else:
            r = 0.5 * self.diameter
            L = self.length
            trans = m * (3.0 * r * r + L * L) / 12.0
            Th = np.eye(3) * trans
            k = AXES[self.axis]
            Th[k, k] = 0.5 * m * r * r
        return SpatialInertia.from_com(m, self.com, Th)


# --- dictionary helpers ------------------------------------------------------

def _pose_from(d, s: float) -> Pose:
    if d is None:
        return Pose.identity()
    if "rotz_deg" in d:
        R = rot_z(np.deg2rad(d["rotz_deg"]))
    else:
        R = np.asarray(d.get("R", np.eye(3)), dtype=float)
    return Pose(R, np.asarray(d.get("r", [0.0, 0.0, 0.0]), dtype=float) / s).validate(1e-9)


def _inertia_from(d, s: float) -> SpatialInertia:
    if d is None:
        return SpatialInertia()
    if "primitive" in d:
        kw = dict(kind=d["primitive"], axis=d.get("axis", "z"),
                  density=d.get("density", ALUMINIUM), mass=d.get("mass"),
                  com=tuple(np.asarray(d.get("com", [0.0, 0.0, 0.0]), dtype=float) / s))
        if "length" in d:
            kw["length"] = d["length"] / s
        if "diameter" in d:
            kw["diameter"] = d["diameter"] / s
        if "dims" in d:
            kw["dims"] = tuple(np.asarray(d["dims"], dtype=float) / s)
        return InertiaPrimitive(**kw).spatial_inertia()
    m = d.get("mass", 0.0)
    com = np.asarray(d.get("com", [0.0, 0.0, 0.0]), dtype=float) / s
    Th = np.asarray(d.get("inertia", np.zeros((3, 3))), dtype=float) / (s * s)
    return SpatialInertia.from_com(m, com, Th)


def normalize_units(spec: dict) -> dict:
    """Copy of ``spec`` with all lengths converted to metres."""
    units = spec.get("units", "m")
    if units not in UNIT_SCALE:
        raise ValidationError(f"unknown units {units!r}")
    s = UNIT_SCALE[units]
    out = copy.deepcopy(spec)
    out["units"] = "m"
    if s == 1.0:
        return out

    def vec(v):
        return [float(x) / s for x in v]

    out["gravity"] = vec(spec.get("gravity", [0.0, 0.0, -9.81]))
    for b in out.get("bodies", []):
        if "r" in b:
            b["r"] = vec(b["r"])
        _scale_inertia(b.get("inertia"), s)
    for j in out.get("joints", []):
        j["point"] = vec(j.get("point", [0.0, 0.0, 0.0]))
        if "pitch" in j:
            j["pitch"] = float(j["pitch"]) / s
    _scale_inertia(out.get("platform", {}).get("inertia"), s)
    for m in out.get("mounts", []):
        for key in ("S0", "Sp"):
            if key in m and "r" in m[key]:
                m[key]["r"] = vec(m[key]["r"])
    return out


def _scale_inertia(d, s):
    if not d:
        return
    for key in ("length", "diameter"):
        if key in d:
            d[key] = float(d[key]) / s
    for key in ("dims", "com"):
        if key in d:
            d[key] = [float(x) / s for x in d[key]]
    if "inertia" in d:
        d["inertia"] = (np.asarray(d["inertia"], dtype=float) / (s * s)).tolist()


def build_from_spec(spec: dict) -> AssembledPKM:
    """Assemble a PKM from a model dictionary (see README for the schema)."""
    _check_keys(spec)
    spec = normalize_units(spec)
    gravity = np.asarray(spec.get("gravity", [0.0, 0.0, -9.81]), dtype=float)
    bodies = {b["id"]: b for b in spec["bodies"]}
    joints = {j["id"]: j for j in spec["joints"]}
    plat = spec["platform"]
    p_id = plat["body"]
    if p_id not in bodies:
        raise ValidationError(f"platform body {p_id} is not defined")
    for j in joints.values():
        for end in (j["parent"], j["child"]):
            if end != 0 and end not in bodies:
                raise ValidationError(f"joint {j['id']} references unknown body {end}")
    A_ref = {bid: _pose_from(b, 1.0) for bid, b in bodies.items()}
    A_ref[0] = Pose.identity()
    reps = []
    for li, lspec in enumerate(spec["limbs"]):
        reps.append(_build_rep_limb(lspec, bodies, joints, A_ref, p_id, li))
    mounts = [Mount(_pose_from(m.get("S0"), 1.0), _pose_from(m.get("Sp"), 1.0))
              for m in spec.get("mounts", [])]
    limbs = []
    if len(reps) == 1 and mounts:
        limbs = instantiate_all(reps[0], mounts)
    else:
        if mounts and len(mounts) != len(reps):
            raise ValidationError("number of mounts must match the number of limbs")
        for i, rep in enumerate(reps):
            if mounts:
                from .modular import instantiate_limb
                limbs.append(instantiate_limb(rep, mounts[i].S0, mounts[i].Sp, f"limb{i + 1}"))
            else:
                limbs.append(rep)
    ts = spec.get("taskspace", {})
    chart = ts.get("chart", TRANSLATION)
    Pp = ts.get("Pp", chart)
    if isinstance(Pp, str):
        Pp = {TRANSLATION: P_TRANS, ROTATION_Z: P_ROT_Z,
              TRANSLATION_ROTATION: np.eye(6)}.get(Pp)
        if Pp is None:
            raise ValidationError(f"unknown Pp pattern {ts.get('Pp')!r}")
    Mp = _inertia_from(plat.get("inertia"), 1.0)
    origin = A_ref[p_id].r
    pkm = AssembledPKM(limbs, Mp, np.asarray(Pp, dtype=float), chart, gravity,
                       np.asarray(ts.get("origin", origin), dtype=float), spec.get("name", ""))
    pkm.spec = spec
    return pkm


def _check_keys(spec: dict):
    for key in ("bodies", "joints", "limbs", "platform"):
        if key not in spec:
            raise ValidationError(f"model file lacks required key {key!r}")


def _joint_screw(js: dict, kind: str):
    try:
        return screw_from_geometry(js["axis"], js.get("point", [0, 0, 0]), js.get("pitch", 0.0), kind)
    except KeyError as exc:
        raise ValidationError(f"joint {js.get('id')}: missing {exc.args[0]!r}") from exc
    except ValidationError as exc:
        raise ValidationError(f"joint {js.get('id')}: {exc}") from exc


def _build_rep_limb(lspec, bodies, joints, A_ref, p_id, li) -> LimbModel:
    jids = lspec["joints"]
    for j in jids:
        if j not in joints:
            raise ValidationError(f"limb {li + 1} references unknown joint {j}")
    verts = {0}
    edges = []
    for j in jids:
        js = joints[j]
        verts |= {js["parent"], js["child"]}
        edges.append(Edge(j, js["parent"], js["child"], js.get("kind", "revolute"),
                          int(js.get("dof", 1))))
    g = MechanismGraph(sorted(verts), edges, p_id)
    # the joints listed for a limb are taken as one limb even if the platform
    # lies inside one of its loops
    sub = LimbSubgraph(li + 1, set(g.vertices), sorted(edges, key=lambda e: e.id), 0, p_id)
    topo = analyze_limb(sub, lspec.get("cut_joints"))
    tr = topo.tree
    n = tr.n
    Y, A, kinds, names, fric = [], [], [], [], []
    for i, e in enumerate(tr.tree_edges, start=1):
        js = joints[e.id]
        kind = js.get("kind", "revolute")
        if kind not in ("revolute", "prismatic", "helical"):
            raise ValidationError(f"tree joint {e.id}: multi-DOF joints must be split into 1-DOF joints")
        S = _joint_screw(js, kind)
        y = S.vec
        if tr.flipped.get(e.id):
            y = -y
        body = e.child if not tr.flipped.get(e.id) else e.parent
        Y.append(y)
        A.append(A_ref[body])
        kinds.append(kind)
        names.append(bodies[body].get("name", str(body)))
        fric.append(float(js.get("friction", 0.0)))
    tree = TreeModel(list(tr.pred), np.array(Y), A, kinds, names)
    pins = lspec.get("independent", [])
    cycles = []
    for fc in topo.cycles:
        js = joints[fc.cut_edge]
        kind = js.get("kind", "revolute")
        k = tr.body_of[js["parent"]]
        r = tr.body_of[js["child"]]
        Yc = None
        if kind in ("revolute", "prismatic", "helical"):
            Yc = _joint_screw(js, kind).vec
            ckind = "revolute" if kind == "revolute" else "custom"
        else:
            ckind = kind
        Sk, Sr = cut_frames_from_world(A_ref[js["parent"]], A_ref[js["child"]],
                                       js.get("point", [0, 0, 0]), js["axis"], js.get("axis2"))
        rows = js.get("rows")
        cut = CutJointSpec(k, r, Sk, Sr, ckind if rows is None else "custom",
                           None if rows is None else tuple(rows.get("dist", ())),
                           None if rows is None else tuple(tuple(p) for p in rows.get("ori", ())),
                           Yc)
        kb = [tr.edge_number[e] for e in fc.k_branch]
        rb = [tr.edge_number[e] for e in fc.r_branch]
        vars_ = set(kb + rb)
        ind = [tr.edge_number[p] for p in pins if p in tr.edge_number and tr.edge_number[p] in vars_]
        cycles.append(CycleModel(fc.index, cut, kb, rb, ind))
    loops = LimbLoops(tree, cycles, lspec.get("formulation", "cut_joint"))
    inertias = []
    for i, e in enumerate(tr.tree_edges, start=1):
        body = e.child if not tr.flipped.get(e.id) else e.parent
        inertias.append(_inertia_from(bodies[body].get("inertia"), 1.0))
    actuated = [tr.edge_number[j] for j in jids if joints[j].get("actuated")]
    rows = [int(r) - 1 for r in lspec["taskspace_rows"]]
    return LimbModel(tree, loops, tr.body_of[p_id], inertias, actuated, rows,
                     friction=np.array(fric), joint_ids=[e.id for e in tr.tree_edges],
                     name=f"limb{li + 1}")


# --- file I/O ----------------------------------------------------------------

def resolve_model_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    cand = DATA_DIR / (p.name if p.suffix else p.name + ".json")
    if cand.exists():
        return cand
    raise ValidationError(f"model file {path} not found")


def load_model(path) -> AssembledPKM:
    p = resolve_model_path(path)
    try:
        spec = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from exc
    return build_from_spec(spec)


def model_to_json(pkm: AssembledPKM) -> str:
    """Serialize the (SI-normalized) model description; floats keep full
    precision so that reloading reproduces the model bit for bit."""
    return json.dumps(pkm.spec, indent=1)


def save_model(pkm: AssembledPKM, path) -> None:
    Path(path).write_text(model_to_json(pkm))


# --- concrete models ---------------------------------------------------------

DELTA_DEFAULTS = dict(R0=0.15, Rp=0.07, a=0.25, b=0.08, c=1.0, density=ALUMINIUM)


def delta_spec(params: dict | None = None, units: str = "m", formulation: str = "cut_joint") -> dict:
    """Model dictionary of the 3-limb Delta robot with parallelogram lower arms.

    ``params`` (R0, Rp, a, b, c) are given in ``units``.
    """
    p = dict(DELTA_DEFAULTS)
    if units == "mm":
        p.update({k: v * 1000.0 for k, v in DELTA_DEFAULTS.items() if k != "density"})
    if params:
        p.update(params)
    R0, Rp, a, b, c = p["R0"], p["Rp"], p["a"], p["b"], p["c"]
    d = a + R0 - Rp
    if not c * c > d * d:
        raise ValidationError("Delta geometry has no real solution (c <= a + R0 - Rp)")
    h = np.sqrt(c * c - d * d)
    rho = p["density"]
    Rr = (np.array([[h, 0.0, -d], [0.0, c, 0.0], [d, 0.0, h]]) / c).tolist()
    eye = np.eye(3).tolist()
    e_rod = [h / c, 0.0, d / c]
    ey = [0.0, -1.0, 0.0]
    s = UNIT_SCALE[units]
    arm_d, rod_d, con_d = 0.03 * s, 0.01 * s, 0.02 * s
    bodies = [
        dict(id=1, name="upper_arm", R=eye, r=[-a / 2 - R0, 0.0, 0.0],
             inertia=dict(primitive="solid_cylinder", length=a, diameter=arm_d, axis="x", density=rho)),
        dict(id=2, name="elbow_link", R=Rr, r=[-a - R0, 0.0, 0.0],
             inertia=dict(primitive="solid_cylinder", length=b, diameter=con_d, axis="y", density=rho)),
        dict(id=3, name="rod_a", R=Rr, r=[-d / 2 - Rp, -b / 2, -h / 2],
             inertia=dict(primitive="rod", length=c, diameter=rod_d, axis="z", density=rho)),
        dict(id=4, name="wrist_link", R=Rr, r=[-Rp, 0.0, -h],
             inertia=dict(primitive="solid_cylinder", length=b, diameter=con_d, axis="y", density=rho)),
        dict(id=5, name="rod_b", R=Rr, r=[-d / 2 - Rp, b / 2, -h / 2],
             inertia=dict(primitive="rod", length=c, diameter=rod_d, axis="z", density=rho)),
        dict(id=6, name="platform", R=eye, r=[0.0, 0.0, -h]),
    ]
    joints = [
        dict(id=1, kind="revolute", parent=0, child=1, axis=ey, point=[-R0, 0.0, 0.0], actuated=True),
        dict(id=2, kind="revolute", parent=1, child=2, axis=ey, point=[-R0 - a, 0.0, 0.0]),
        dict(id=3, kind="revolute", parent=2, child=3, axis=e_rod, point=[-R0 - a, -b / 2, 0.0]),
        dict(id=4, kind="revolute", parent=3, child=4, axis=e_rod, point=[-Rp, -b / 2, -h]),
        dict(id=5, kind="revolute", parent=2, child=5, axis=e_rod, point=[-R0 - a, b / 2, 0.0]),
        dict(id=6, kind="revolute", parent=4, child=6, axis=ey, point=[-Rp, 0.0, -h]),
        dict(id=7, kind="revolute", parent=4, child=5, axis=e_rod, point=[-Rp, b / 2, -h]),
    ]
    mounts = [dict(S0=dict(R=rot_z(t).tolist(), r=[0.0, 0.0, 0.0]),
                   Sp=dict(R=rot_z(t).tolist(), r=[0.0, 0.0, 0.0]))
              for t in (0.0, 2.0 * np.pi / 3.0, -2.0 * np.pi / 3.0)]
    return dict(
        name="delta_mpp3h",
        units=units,
        gravity=[0.0, 0.0, -9.81 * s],
        bodies=bodies,
        joints=joints,
        limbs=[dict(joints=[1, 2, 3, 4, 5, 6, 7], cut_joints=[7], independent=[4],
                    formulation=formulation, taskspace_rows=[2, 4, 5, 6])],
        platform=dict(body=6, inertia=dict(primitive="solid_cylinder", length=0.1 * s,
                                           diameter=0.09 * s, axis="z", density=rho)),
        mounts=mounts,
        taskspace=dict(chart=TRANSLATION, Pp=TRANSLATION),
    )


def build_delta(params: dict | None = None, formulation: str = "cut_joint") -> AssembledPKM:
    """Delta robot in SI units; ``params`` may override R0, Rp, a, b, c, density."""
    return build_from_spec(delta_spec(params, "m", formulation))


def delta_height(params: dict | None = None) -> float:
    p = dict(DELTA_DEFAULTS)
    if params:
        p.update(params)
    d = p["a"] + p["R0"] - p["Rp"]
    return float(np.sqrt(p["c"] ** 2 - d * d))


FOURBAR_DEFAULTS = dict(L1=0.4, L2=0.15, L3=0.35, L4=0.25, crank_angle=np.deg2rad(60.0))


def fourbar_spec(lengths=None, masses=(0.5, 1.0, 0.8), crank_angle=None, independent=(2,),
                 gravity=(0.0, -9.81, 0.0)) -> dict:
    """Planar four-bar in the x-y plane: ground pivots at the origin (crank)
    and at (L1, 0, 0) (rocker). The rocker serves as the platform whose
    rotation angle is the taskspace coordinate."""
    p = dict(FOURBAR_DEFAULTS)
    if lengths is not None:
        p.update(dict(zip(("L1", "L2", "L3", "L4"), lengths)))
    if crank_angle is not None:
        p["crank_angle"] = crank_angle
    L1, L2, L3, L4 = (p[k] for k in ("L1", "L2", "L3", "L4"))
    if min(L1, L2, L3, L4) <= 0.0:
        raise ValidationError("four-bar link lengths must be positive")
    al = p["crank_angle"]
    O1 = np.zeros(3)
    O3 = np.array([L1, 0.0, 0.0])
    P = L2 * np.array([np.cos(al), np.sin(al), 0.0])
    dv = O3 - P
    dist = np.linalg.norm(dv)
    if dist > L3 + L4 or dist < abs(L3 - L4) or dist == 0.0:
        raise ValidationError("four-bar does not close at the reference configuration")
    # circle intersection, upper branch
    aa = (L3 * L3 - L4 * L4 + dist * dist) / (2.0 * dist)
    hh = np.sqrt(max(L3 * L3 - aa * aa, 0.0))
    u = dv / dist
    nrm = np.array([-u[1], u[0], 0.0])
    Q = P + aa * u + hh * nrm
    ang = lambda v: float(np.arctan2(v[1], v[0]))
    ez = [0.0, 0.0, 1.0]
    m1, m2, m3 = masses
    rod = lambda L, m: dict(primitive="rod", length=L, diameter=0.01, axis="x", mass=m,
                            com=[L / 2, 0.0, 0.0])
    bodies = [
        dict(id=1, name="crank", R=rot_z(al).tolist(), r=O1.tolist(), inertia=rod(L2, m1)),
        dict(id=2, name="coupler", R=rot_z(ang(Q - P)).tolist(), r=P.tolist(), inertia=rod(L3, m2)),
        dict(id=3, name="rocker", R=rot_z(ang(Q - O3)).tolist(), r=O3.tolist()),
    ]
    joints = [
        dict(id=1, kind="revolute", parent=0, child=1, axis=ez, point=O1.tolist(), actuated=True),
        dict(id=2, kind="revolute", parent=1, child=2, axis=ez, point=P.tolist()),
        dict(id=3, kind="revolute", parent=0, child=3, axis=ez, point=O3.tolist()),
        dict(id=4, kind="revolute", parent=2, child=3, axis=ez, point=Q.tolist()),
    ]
    return dict(
        name="fourbar",
        units="m",
        gravity=list(gravity),
        bodies=bodies,
        joints=joints,
        limbs=[dict(joints=[1, 2, 3, 4], cut_joints=[4], independent=list(independent),
                    formulation="cut_joint", taskspace_rows=[3])],
        platform=dict(body=3, inertia=rod(L4, m3)),
        mounts=[],
        taskspace=dict(chart=ROTATION_Z, Pp=ROTATION_Z, origin=O3.tolist()),
    )


def build_fourbar(lengths=None, masses=(0.5, 1.0, 0.8), **kw) -> AssembledPKM:
    return build_from_spec(fourbar_spec(lengths, masses, **kw))


def irsbot2_graph() -> MechanismGraph:
    """Topology of a two-limb IRSBot-2-type mechanism (graph only).

    Per limb: joints 1, 2 lead from ground to a proximal link, joint 3 closes
    the proximal loop via cut-edge 7; joints 4, 6 lead to the platform and
    joint 5 closes the distal loop via cut-edge 8.
    """
    P = 99
    edges = []
    verts = [0, P]
    for l in range(2):
        o = 10 * (l + 1)
        b1, b2, b3, b4, b5 = o + 1, o + 2, o + 3, o + 4, o + 5
        verts += [b1, b2, b3, b4, b5]
        eid = 100 * (l + 1)
        edges += [
            Edge(eid + 1, 0, b1), Edge(eid + 2, b1, b2), Edge(eid + 3, 0, b3),
            Edge(eid + 4, b2, b4), Edge(eid + 5, b2, b5), Edge(eid + 6, b4, P),
            Edge(eid + 7, b2, b3), Edge(eid + 8, P, b5),
        ]
    return MechanismGraph(verts, edges, P)


def delta_graph() -> MechanismGraph:
    P = 99
    edges = []
    verts = [0, P]
    for l in range(3):
        o = 10 * (l + 1)
        b = [o + i for i in range(1, 6)]
        verts += b
        eid = 100 * (l + 1)
        edges += [
            Edge(eid + 1, 0, b[0]), Edge(eid + 2, b[0], b[1]), Edge(eid + 3, b[1], b[2]),
            Edge(eid + 4, b[2], b[3]), Edge(eid + 5, b[1], b[4]), Edge(eid + 6, b[3], P),
            Edge(eid + 7, b[3], b[4]),
        ]
    return MechanismGraph(verts, edges, P)
