"""BioVision Hierarchy (BVH) reader and writer.

Rotations are converted to and from unit quaternions using each joint's
declared channel order.  Written documents print every number with six
decimal places, so ``write(parse(write(x)))`` is byte-identical to
``write(x)``.
"""

import numpy as np

from . import quat
from .skeleton import MotionSequence, Skeleton, SkeletonError

__all__ = ["BVHError", "BVHSyntaxError", "parse_bvh", "write_bvh", "read_bvh_file", "write_bvh_file"]

_POS = ("Xposition", "Yposition", "Zposition")
_ROT = ("Xrotation", "Yrotation", "Zrotation")
DEFAULT_ROOT_CHANNELS = ("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")
DEFAULT_JOINT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")


class BVHError(ValueError):
    pass


class BVHSyntaxError(BVHError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class UnsupportedChannels(BVHError):
    pass


class FrameCountMismatch(BVHError):
    pass


def _rotation_order(channels):
    return "".join(c[0] for c in channels if c in _ROT)


def _check_channels(name, channels, is_root):
    rot = [c for c in channels if c in _ROT]
    pos = [c for c in channels if c in _POS]
    unknown = [c for c in channels if c not in _ROT and c not in _POS]
    if unknown:
        raise UnsupportedChannels(f"joint {name!r}: unknown channels {unknown}")
    if len(rot) != 3 or len(set(rot)) != 3:
        raise UnsupportedChannels(f"joint {name!r}: need exactly three distinct rotation channels")
    if pos and (not is_root or len(set(pos)) != 3):
        raise UnsupportedChannels(f"joint {name!r}: position channels are only supported as a full XYZ set on the root")


class _Lines:
    def __init__(self, text):
        self.items = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
        self.pos = 0

    def peek(self):
        if self.pos >= len(self.items):
            return None, None
        return self.items[self.pos]

    def next(self, what):
        if self.pos >= len(self.items):
            last = self.items[-1][0] if self.items else 0
            raise BVHSyntaxError(last, f"unexpected end of document, expected {what}")
        item = self.items[self.pos]
        self.pos += 1
        return item

    def expect(self, keyword):
        lineno, toks = self.next(keyword)
        if toks[0] != keyword:
            raise BVHSyntaxError(lineno, f"expected {keyword!r}, got {toks[0]!r}")
        return lineno, toks


def _floats(lineno, toks, n=None):
    try:
        vals = [float(t) for t in toks]
    except ValueError:
        raise BVHSyntaxError(lineno, "expected numbers") from None
    if n is not None and len(vals) != n:
        raise BVHSyntaxError(lineno, f"expected {n} numbers, got {len(vals)}")
    return vals


def _parse_joint(lines, name, parent, joints):
    index = len(joints)
    lines.expect("{")
    lineno, toks = lines.expect("OFFSET")
    offset = _floats(lineno, toks[1:], 3)
    lineno, toks = lines.expect("CHANNELS")
    try:
        n = int(toks[1])
    except (IndexError, ValueError):
        raise BVHSyntaxError(lineno, "malformed CHANNELS line") from None
    channels = tuple(toks[2:])
    if len(channels) != n:
        raise BVHSyntaxError(lineno, f"CHANNELS declares {n} entries, lists {len(channels)}")
    _check_channels(name, channels, parent is None)
    joints.append({"name": name, "parent": parent, "offset": offset, "channels": channels, "end": None})
    while True:
        lineno, toks = lines.next("JOINT, End Site or '}'")
        if toks[0] == "}":
            return
        if toks[0] == "JOINT":
            if len(toks) < 2:
                raise BVHSyntaxError(lineno, "JOINT without a name")
            _parse_joint(lines, " ".join(toks[1:]), index, joints)
        elif toks[0] == "End" and toks[1:2] == ["Site"]:
            lines.expect("{")
            ln, t = lines.expect("OFFSET")
            joints[index]["end"] = tuple(_floats(ln, t[1:], 3))
            lines.expect("}")
        else:
            raise BVHSyntaxError(lineno, f"unexpected token {toks[0]!r}")


def parse_bvh(text, label=None):
    """Parse a BVH document into ``(Skeleton, MotionSequence)``."""
    lines = _Lines(text)
    lines.expect("HIERARCHY")
    lineno, toks = lines.expect("ROOT")
    if len(toks) < 2:
        raise BVHSyntaxError(lineno, "ROOT without a name")
    joints = []
    _parse_joint(lines, " ".join(toks[1:]), None, joints)
    lines.expect("MOTION")
    lineno, toks = lines.next("Frames:")
    if toks[:1] != ["Frames:"] or len(toks) != 2:
        raise BVHSyntaxError(lineno, "expected 'Frames: <n>'")
    try:
        n_frames = int(toks[1])
    except ValueError:
        raise BVHSyntaxError(lineno, "frame count is not an integer") from None
    lineno, toks = lines.next("Frame Time:")
    if toks[:2] != ["Frame", "Time:"] or len(toks) != 3:
        raise BVHSyntaxError(lineno, "expected 'Frame Time: <seconds>'")
    frame_time = _floats(lineno, toks[2:], 1)[0]
    if not frame_time > 0:
        raise BVHSyntaxError(lineno, "frame time must be positive")

    width = sum(len(j["channels"]) for j in joints)
    rows = []
    while lines.peek()[0] is not None:
        lineno, toks = lines.next("motion data")
        rows.append(_floats(lineno, toks, width))
    if len(rows) != n_frames:
        raise FrameCountMismatch(f"Frames: declares {n_frames}, found {len(rows)} motion lines")
    if n_frames < 1:
        raise FrameCountMismatch("document has no frames")
    data = np.asarray(rows, dtype=np.float64).reshape(n_frames, width)

    try:
        skeleton = Skeleton(
            [j["name"] for j in joints],
            [j["parent"] for j in joints],
            [j["offset"] for j in joints],
            [j["channels"] for j in joints],
            {i: j["end"] for i, j in enumerate(joints) if j["end"] is not None},
        )
    except SkeletonError as exc:
        raise BVHError(str(exc)) from None

    rotations = np.empty((n_frames, len(joints), 4))
    root = np.zeros((n_frames, 3))
    col = 0
    for i, j in enumerate(joints):
        ch = j["channels"]
        block = data[:, col:col + len(ch)]
        col += len(ch)
        rot_cols = [k for k, c in enumerate(ch) if c in _ROT]
        rotations[:, i] = quat.from_euler(_rotation_order(ch), block[:, rot_cols])
        if i == 0:
            for k, c in enumerate(ch):
                if c in _POS:
                    root[:, _POS.index(c)] = block[:, k]

    fps = 1.0 / frame_time
    # undo the six-decimal rounding of frame times such as 0.033333
    if abs(fps - round(fps)) < 1e-3 * fps:
        fps = float(round(fps))
    motion = MotionSequence(skeleton, rotations, fps, root, label=label)
    return skeleton, motion


def _fmt(v):
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_bvh(skeleton, motion):
    """Serialise to BVH text; joints without known channels get ZXY rotations."""
    if not skeleton.same_hierarchy(motion.skeleton) or motion.rotations.shape[1] != skeleton.n_joints:
        raise BVHError("motion does not reference this skeleton")
    channels = skeleton.channels or tuple(
        DEFAULT_ROOT_CHANNELS if j == 0 else DEFAULT_JOINT_CHANNELS for j in range(skeleton.n_joints)
    )
    children = [[] for _ in range(skeleton.n_joints)]
    for j, p in enumerate(skeleton.parents):
        if p >= 0:
            children[p].append(j)

    out = ["HIERARCHY"]

    def emit(j, depth):
        ind = "\t" * depth
        kw = "ROOT" if j == 0 else "JOINT"
        out.append(f"{ind}{kw} {skeleton.names[j]}")
        out.append(f"{ind}{{")
        out.append(f"{ind}\tOFFSET " + " ".join(_fmt(v) for v in skeleton.offsets[j]))
        out.append(f"{ind}\tCHANNELS {len(channels[j])} " + " ".join(channels[j]))
        for c in children[j]:
            emit(c, depth + 1)
        if j in skeleton.end_sites:
            out.append(f"{ind}\tEnd Site")
            out.append(f"{ind}\t{{")
            out.append(f"{ind}\t\tOFFSET " + " ".join(_fmt(v) for v in skeleton.end_sites[j]))
            out.append(f"{ind}\t}}")
        out.append(f"{ind}}}")

    emit(0, 0)
    # DFS emission order must match the stored joint order for channel data
    order = []

    def walk(j):
        order.append(j)
        for c in children[j]:
            walk(c)

    walk(0)
    if order != list(range(skeleton.n_joints)):
        raise BVHError("skeleton joint order is not depth-first; cannot serialise")

    cols = []
    for j in range(skeleton.n_joints):
        ch = channels[j]
        euler = quat.to_euler(_rotation_order(ch), motion.rotations[:, j])
        r = 0
        for c in ch:
            if c in _POS:
                cols.append(motion.root_translation[:, _POS.index(c)])
            else:
                cols.append(euler[:, r])
                r += 1
    data = np.stack(cols, axis=1)

    out.append("MOTION")
    out.append(f"Frames: {motion.n_frames}")
    out.append(f"Frame Time: {_fmt(1.0 / motion.fps)}")
    for row in data:
        out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def read_bvh_file(path, label=None):
    with open(path, encoding="utf-8") as fh:
        return parse_bvh(fh.read(), label=label)


def write_bvh_file(path, skeleton, motion):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_bvh(skeleton, motion))
