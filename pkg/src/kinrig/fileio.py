"""OBJ and PLY reading/writing for triangle meshes and oriented point clouds."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        self.line = line
        self.offset = offset
        where = f" (line {line})" if line is not None else f" (byte {offset})" if offset is not None else ""
        super().__init__(message + where)


class UnsupportedPrimitive(ValueError):
    pass


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _fmt(x: float) -> str:
    return "%.17g" % x


# ------------------------------------------------------------------- OBJ

def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    xyz = [float(t) for t in parts[1:4]]
                except ValueError:
                    raise ParseError(f"bad vertex coordinates {line!r}", line=lineno) from None
                if len(xyz) != 3:
                    raise ParseError("vertex needs three coordinates", line=lineno)
                verts.append(xyz)
            elif tag == "f":
                if len(parts) != 4:
                    raise UnsupportedPrimitive(f"line {lineno}: face with {len(parts) - 1} vertices")
                idx = []
                for tok in parts[1:]:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise ParseError(f"bad face index {tok!r}", line=lineno) from None
                    if i == 0:
                        raise ParseError("OBJ indices are 1-based", line=lineno)
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                faces.append(idx)
            elif tag in ("l", "p"):
                raise UnsupportedPrimitive(f"line {lineno}: element {tag!r}")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return v, f


def write_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in np.asarray(vertices, dtype=np.float64)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=np.int64)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------- PLY

def _read_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise ParseError("missing 'ply' magic", line=1)
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("unterminated header", line=lineno)
        tok = raw.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", line=lineno)
            if tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise ParseError(f"unknown list type in {' '.join(tok)!r}", line=lineno)
                elements[-1]["props"].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown property type {tok[1]!r}", line=lineno)
                elements[-1]["props"].append((tok[2], "scalar", _PLY_TYPES[tok[1]], None))
        elif tok[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", line=lineno)
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}", line=2)
    return fmt, elements, lineno


def read_ply(path) -> dict[str, dict[str, np.ndarray]]:
    """Read a PLY file into ``{element: {property: array}}``.

    List properties become 2-D arrays and must have a uniform length.
    """
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _read_header(fh)
        body_start = fh.tell()
        data = fh.read()
    if fmt == "ascii":
        return _read_ply_ascii(data.decode("ascii", "replace"), elements, header_lines)
    return _read_ply_binary(data, elements, body_start)


def _read_ply_ascii(text, elements, header_lines):
    lines = text.splitlines()
    cursor = 0
    out = {}
    for el in elements:
        cols = {name: [] for name, *_ in el["props"]}
        for _ in range(el["count"]):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            lineno = header_lines + cursor + 1
            if cursor >= len(lines):
                raise ParseError(f"unexpected end of data in element {el['name']!r}", line=lineno)
            tok = lines[cursor].split()
            cursor += 1
            pos = 0
            try:
                for name, kind, t1, _t2 in el["props"]:
                    if kind == "scalar":
                        cols[name].append(float(tok[pos]) if t1.startswith("f") else int(tok[pos]))
                        pos += 1
                    else:
                        cnt = int(tok[pos])
                        cols[name].append([int(x) if not _t2.startswith("f") else float(x)
                                           for x in tok[pos + 1:pos + 1 + cnt]])
                        if len(cols[name][-1]) != cnt:
                            raise IndexError
                        pos += 1 + cnt
            except (IndexError, ValueError):
                raise ParseError(f"malformed {el['name']} record", line=lineno) from None
        out[el["name"]] = _columns(cols, el)
    return out


def _columns(cols, el):
    res = {}
    for name, kind, t1, t2 in el["props"]:
        if kind == "scalar":
            res[name] = np.array(cols[name], dtype=np.float64 if t1.startswith("f") else np.int64)
        else:
            lens = {len(r) for r in cols[name]}
            if len(lens) > 1:
                res[name] = cols[name]
            else:
                width = lens.pop() if lens else 0
                res[name] = np.array(cols[name], dtype=np.int64).reshape(-1, width)
    return res


def _read_ply_binary(data, elements, body_start):
    offset = 0
    out = {}
    for el in elements:
        props = el["props"]
        if all(kind == "scalar" for _, kind, *_ in props):
            dt = np.dtype([(name, "<" + t1) for name, _, t1, _ in props])
            need = dt.itemsize * el["count"]
            if offset + need > len(data):
                raise ParseError(f"truncated element {el['name']!r}", offset=body_start + offset)
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=offset)
            offset += need
            out[el["name"]] = {name: arr[name].astype(np.float64 if t1.startswith("f") else np.int64)
                               for name, _, t1, _ in props}
            continue
        # Fast path: one list property of constant length 3 (triangles).
        cols = {name: [] for name, *_ in props}
        if len(props) == 1 and props[0][1] == "list":
            name, _, tc, ti = props[0]
            dt = np.dtype([("n", "<" + tc), ("i", "<" + ti, (3,))])
            if offset + dt.itemsize * el["count"] <= len(data):
                arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=offset)
                if np.all(arr["n"] == 3):
                    out[el["name"]] = {name: arr["i"].astype(np.int64)}
                    offset += dt.itemsize * el["count"]
                    continue
        for _ in range(el["count"]):
            for name, kind, t1, t2 in props:
                s1 = np.dtype(t1).itemsize
                if offset + s1 > len(data):
                    raise ParseError(f"truncated element {el['name']!r}", offset=body_start + offset)
                v = np.frombuffer(data, dtype="<" + t1, count=1, offset=offset)[0]
                offset += s1
                if kind == "scalar":
                    cols[name].append(v)
                else:
                    s2 = np.dtype(t2).itemsize
                    if offset + s2 * int(v) > len(data):
                        raise ParseError(f"truncated list in {el['name']!r}", offset=body_start + offset)
                    cols[name].append(np.frombuffer(data, dtype="<" + t2, count=int(v), offset=offset).tolist())
                    offset += s2 * int(v)
        out[el["name"]] = _columns(cols, el)
    return out


def write_ply(path, vertex_props: dict[str, np.ndarray], faces: np.ndarray | None = None,
              binary: bool = False) -> None:
    """Write float64 vertex properties (in the given order) and optional triangles."""
    names = list(vertex_props)
    cols = [np.asarray(vertex_props[k], dtype=np.float64) for k in names]
    n = len(cols[0]) if cols else 0
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property double {k}" for k in names]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(head)
        if binary:
            table = np.stack(cols, 1) if cols else np.zeros((0, 0))
            fh.write(table.astype("<f8").tobytes())
            if faces is not None:
                rec = np.zeros(len(faces), dtype=[("n", "u1"), ("i", "<i4", (3,))])
                rec["n"] = 3
                rec["i"] = faces
                fh.write(rec.tobytes())
        else:
            rows = zip(*cols) if cols else []
            body = ["%s" % " ".join(_fmt(x) for x in row) for row in rows]
            if faces is not None:
                body += [f"3 {a} {b} {c}" for a, b, c in faces]
            fh.write(("\n".join(body) + ("\n" if body else "")).encode("ascii"))


def _faces_from(ply: dict, path) -> np.ndarray:
    face = ply.get("face")
    if not face:
        return np.zeros((0, 3), dtype=np.int64)
    key = "vertex_indices" if "vertex_indices" in face else "vertex_index" if "vertex_index" in face else None
    if key is None:
        raise ParseError(f"{path}: face element has no vertex_indices list")
    f = face[key]
    if isinstance(f, list) or f.ndim != 2 or (f.size and f.shape[1] != 3):
        raise UnsupportedPrimitive(f"{path}: non-triangle faces")
    return f.reshape(-1, 3)


def read_mesh_arrays(path) -> tuple[np.ndarray, np.ndarray]:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return read_obj(path)
    if ext == ".ply":
        ply = read_ply(path)
        vert = ply.get("vertex")
        if vert is None or not all(k in vert for k in "xyz"):
            raise ParseError(f"{path}: vertex element lacks x/y/z")
        v = np.stack([vert["x"], vert["y"], vert["z"]], 1).astype(np.float64)
        return v, _faces_from(ply, path)
    raise ValueError(f"unsupported mesh extension {ext!r}")


def write_mesh_arrays(path, vertices, faces, binary: bool = False) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    v = np.asarray(vertices, dtype=np.float64)
    if ext == ".obj":
        write_obj(path, v, faces)
    elif ext == ".ply":
        write_ply(path, {"x": v[:, 0], "y": v[:, 1], "z": v[:, 2]}, faces, binary=binary)
    else:
        raise ValueError(f"unsupported mesh extension {ext!r}")


def read_point_cloud(path) -> tuple[np.ndarray, np.ndarray]:
    ply = read_ply(path)
    vert = ply.get("vertex")
    need = ("x", "y", "z", "nx", "ny", "nz")
    if vert is None or not all(k in vert for k in need):
        raise ParseError(f"{path}: point cloud needs x,y,z,nx,ny,nz")
    p = np.stack([vert[k] for k in need[:3]], 1).astype(np.float64)
    n = np.stack([vert[k] for k in need[3:]], 1).astype(np.float64)
    return p, n


def write_point_cloud(path, points, normals, binary: bool = False) -> None:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    props = {"x": p[:, 0], "y": p[:, 1], "z": p[:, 2], "nx": n[:, 0], "ny": n[:, 1], "nz": n[:, 2]}
    write_ply(path, props, binary=binary)


def read_pixels(path) -> np.ndarray:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 2:
            raise ParseError("expected 'u v'", line=lineno)
        try:
            rows.append((float(tok[0]), float(tok[1])))
        except ValueError:
            raise ParseError(f"bad pixel {line!r}", line=lineno) from None
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def write_pixels(path, pixels) -> None:
    px = np.asarray(pixels).reshape(-1, 2)
    lines = [f"{int(u)} {int(v)}" if float(u).is_integer() and float(v).is_integer()
             else f"{_fmt(u)} {_fmt(v)}" for u, v in px]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
