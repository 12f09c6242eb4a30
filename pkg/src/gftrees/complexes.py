"""The Z2 cochain complex of Reeb chords, its product, and comparisons.

Generators are the positive-value critical points.  delta raises grading
by 1 (counting isolated flow lines); m2 pairs two generators into one of
grading equal to the sum (counting trees).  Cohomology is plain Z2
Gaussian elimination per grading; the induced product mu2 acts on classes
by evaluating m2 on representatives and reducing modulo coboundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from . import gf2


@dataclass
class Generator:
    id: str
    grading: int
    value: float


class ChordComplex:
    """delta: {id: set of target ids}; m2: {(id1, id2): set of target ids}."""

    def __init__(self, generators, delta, m2, label=""):
        self.generators = [Generator(g.id, g.grading, g.value) for g in generators]
        self.by_id = {g.id: g for g in self.generators}
        self.delta = {k: frozenset(v) for k, v in delta.items() if v}
        self.m2 = {k: frozenset(v) for k, v in m2.items() if v}
        self.label = label
        for src, targets in self.delta.items():
            for t in targets:
                if self.by_id[t].grading != self.by_id[src].grading + 1:
                    raise ValueError("delta entry %s -> %s does not raise grading by 1"
                                     % (src, t))
                if self.by_id[t].value <= self.by_id[src].value:
                    raise ValueError("delta entry %s -> %s does not increase value"
                                     % (src, t))
        for (a, b), targets in self.m2.items():
            for t in targets:
                if self.by_id[t].grading != self.by_id[a].grading + self.by_id[b].grading:
                    raise ValueError("m2 entry (%s,%s) -> %s violates the grading sum"
                                     % (a, b, t))

    def gradings(self):
        return sorted({g.grading for g in self.generators})

    def basis(self, grading):
        return [g for g in self.generators if g.grading == grading]

    def delta_matrix(self, grading):
        """Matrix of delta: C^grading -> C^{grading+1}; rows index targets."""
        src = self.basis(grading)
        dst = self.basis(grading + 1)
        M = np.zeros((len(dst), len(src)), dtype=np.uint8)
        pos = {g.id: i for i, g in enumerate(dst)}
        for j, g in enumerate(src):
            for t in self.delta.get(g.id, ()):
                M[pos[t], j] = 1
        return M

    def delta_of(self, vec, grading):
        """Image under delta of a Z2 vector in the grading basis."""
        return gf2.asmat(self.delta_matrix(grading) @ vec % 2)[0]

    def m2_of(self, vec_a, grade_a, vec_b, grade_b):
        """Bilinear extension of m2 to Z2 chains; result in grade_a+grade_b."""
        A = self.basis(grade_a)
        B = self.basis(grade_b)
        out_basis = self.basis(grade_a + grade_b)
        pos = {g.id: i for i, g in enumerate(out_basis)}
        out = np.zeros(len(out_basis), dtype=np.uint8)
        for i, ga in enumerate(A):
            if not vec_a[i]:
                continue
            for j, gb in enumerate(B):
                if not vec_b[j]:
                    continue
                for t in self.m2.get((ga.id, gb.id), ()):
                    out[pos[t]] ^= 1
        return out

    def as_dict(self):
        return {
            "label": self.label,
            "generators": [{"id": g.id, "grading": g.grading, "value": round(g.value, 12)}
                           for g in self.generators],
            "delta": {k: sorted(v) for k, v in sorted(self.delta.items())},
            "m2": {"%s,%s" % k: sorted(v) for k, v in sorted(self.m2.items())},
        }


def verify_algebra(C):
    """delta^2 = 0 and the Leibniz identity
    delta(m2(a,b)) + m2(delta a, b) + m2(a, delta b) = 0, over Z2.
    Violations are returned as data, not raised."""
    dd = []
    for g in C.generators:
        acc = {}
        for t in C.delta.get(g.id, ()):
            for tt in C.delta.get(t, ()):
                acc[tt] = acc.get(tt, 0) ^ 1
        for tt, bit in sorted(acc.items()):
            if bit:
                dd.append({"source": g.id, "target": tt})

    leib = []
    for a in C.generators:
        for b in C.generators:
            acc = {}
            for t in C.m2.get((a.id, b.id), ()):
                for tt in C.delta.get(t, ()):
                    acc[tt] = acc.get(tt, 0) ^ 1
            for da in C.delta.get(a.id, ()):
                for tt in C.m2.get((da, b.id), ()):
                    acc[tt] = acc.get(tt, 0) ^ 1
            for db in C.delta.get(b.id, ()):
                for tt in C.m2.get((a.id, db), ()):
                    acc[tt] = acc.get(tt, 0) ^ 1
            for tt, bit in sorted(acc.items()):
                if bit:
                    leib.append({"pair": [a.id, b.id], "target": tt})
    return {
        "delta_squared_defects": dd,
        "leibniz_defects": leib,
        "pass": not dd and not leib,
    }


@dataclass
class CohomologyClass:
    label: str
    grading: int
    vector: np.ndarray          # coefficients in the grading basis
    support: list               # generator ids with coefficient 1


class CohomologyRing:
    def __init__(self, ranks, classes, products, complex_):
        self.ranks = ranks                  # {grading: int}
        self.classes = classes              # {grading: [CohomologyClass]}
        self.products = products            # {(label_a, label_b): [labels]}
        self.complex = complex_

    def total_rank(self):
        return sum(self.ranks.values())

    def as_dict(self):
        return {
            "ranks": {str(k): v for k, v in sorted(self.ranks.items())},
            "classes": {str(g): [{"label": c.label, "support": c.support}
                                 for c in cs]
                        for g, cs in sorted(self.classes.items())},
            "products": {"%s,%s" % k: sorted(v) for k, v in sorted(self.products.items())},
        }


def cohomology(C):
    """Cohomology ring of the complex; requires delta^2 = 0."""
    report = verify_algebra(C)
    if report["delta_squared_defects"]:
        raise ValueError("delta^2 != 0; cohomology is undefined: %r"
                         % report["delta_squared_defects"][:3])
    grades = C.gradings()
    ranks = {}
    classes = {}
    im_data = {}
    for g in grades:
        basis = C.basis(g)
        ker = gf2.nullspace(C.delta_matrix(g))
        im_cols = C.delta_matrix(g - 1).T if (g - 1) in grades else \
            np.zeros((0, len(basis)), dtype=np.uint8)
        im_rref, im_piv = gf2.row_space(im_cols)
        im_data[g] = (im_rref, im_piv)
        picked = []
        span_rows = [r.copy() for r in im_rref]
        span_piv = list(im_piv)
        for k in range(ker.shape[1]):
            v = gf2.reduce_mod(ker[:, k], np.array(span_rows, dtype=np.uint8).reshape(-1, len(basis)), span_piv)
            if v.any():
                picked.append(ker[:, k])
                # extend the spanning set so later reps are independent mod im
                pc = int(np.nonzero(v)[0][0])
                for i, row in enumerate(span_rows):
                    if row[pc]:
                        span_rows[i] = row ^ v
                span_rows.append(v)
                span_piv.append(pc)
                order = np.argsort(span_piv, kind="stable")
                span_rows = [span_rows[i] for i in order]
                span_piv = [span_piv[i] for i in order]
        ranks[g] = len(picked)
        cs = []
        for i, vec in enumerate(picked):
            support = [basis[j].id for j in range(len(basis)) if vec[j]]
            cs.append(CohomologyClass("h%d#%d" % (g, i), g, vec.astype(np.uint8), support))
        classes[g] = cs

    products = {}
    for ga, cas in classes.items():
        for gb, cbs in classes.items():
            gt = ga + gb
            if gt not in classes or not classes[gt]:
                continue
            target_basis = C.basis(gt)
            for ca in cas:
                for cb in cbs:
                    prod = C.m2_of(ca.vector, ga, cb.vector, gb)
                    if C.delta_of(prod, gt).any():
                        raise RuntimeError(
                            "internal error: product of cocycle representatives "
                            "%s * %s is not a cocycle" % (ca.label, cb.label))
                    coords = _class_coordinates(prod, classes[gt], im_data[gt],
                                                len(target_basis))
                    if coords is None:
                        raise RuntimeError(
                            "internal error: cocycle %s * %s not expressible in "
                            "class basis + coboundaries" % (ca.label, cb.label))
                    labels = [classes[gt][i].label for i in range(len(coords)) if coords[i]]
                    if labels:
                        products[(ca.label, cb.label)] = labels
    return CohomologyRing(ranks, classes, products, C)


def _class_coordinates(vec, class_list, im_datum, dim):
    """Express vec = sum(coeff_i rep_i) + coboundary; return coeffs or None."""
    im_rref, im_piv = im_datum
    cols = [c.vector for c in class_list]
    cols += [im_rref[r] for r in range(len(im_piv))]
    if cols:
        A = np.column_stack(cols).astype(np.uint8)
    else:
        A = np.zeros((dim, 0), dtype=np.uint8)
    x = gf2.solve(A, vec)
    if x is None:
        return None
    return x[:len(class_list)]


def cross_product_classes(R1, R2, R3, m2_table, computed=None):
    """Class-level product H(C1) x H(C2) -> H(C3) induced by a chain table
    m2_table[(id1, id2)] = set of target ids in C3.

    `computed`, when given, lists the (id1, id2) pairs whose chain counts
    actually ran; a class product needing an uncomputed pair comes out as
    None instead of a wrong value."""
    C3 = R3.complex
    out = {}
    for ga, cas in R1.classes.items():
        for gb, cbs in R2.classes.items():
            gt = ga + gb
            basis3 = C3.basis(gt)
            if not basis3:
                continue
            pos = {g.id: i for i, g in enumerate(basis3)}
            im_datum = gf2.row_space(C3.delta_matrix(gt - 1).T)
            for ca in cas:
                for cb in cbs:
                    missing = False
                    vec = np.zeros(len(basis3), dtype=np.uint8)
                    for a in ca.support:
                        for b in cb.support:
                            if computed is not None and (a, b) not in computed:
                                missing = True
                            for t in m2_table.get((a, b), ()):
                                vec[pos[t]] ^= 1
                    if missing:
                        out[(ca.label, cb.label)] = None
                        continue
                    if C3.delta_of(vec, gt).any():
                        raise RuntimeError(
                            "internal error: chain product of %s and %s is "
                            "not a cocycle" % (ca.label, cb.label))
                    coords = _class_coordinates(vec, R3.classes.get(gt, []),
                                                im_datum, len(basis3))
                    if coords is None:
                        raise RuntimeError(
                            "internal error: product of %s and %s not "
                            "expressible in the class basis" % (ca.label, cb.label))
                    out[(ca.label, cb.label)] = [
                        R3.classes[gt][i].label
                        for i in range(len(coords)) if coords[i]]
    return out


# ---------------------------------------------------------------------------
# Ring comparisons

def _match_generators(C1, C2, tol_value):
    """Bijection generator-of-C1 -> generator-of-C2 by (grading, value)."""
    used = set()
    mapping = {}
    for g in C1.generators:
        hits = [h for h in C2.generators
                if h.grading == g.grading and abs(h.value - g.value) < tol_value
                and h.id not in used]
        if len(hits) != 1:
            raise ValueError(
                "no unambiguous value/grading matching for generator %s "
                "(grading %d, value %.9g): %d candidates; supply an explicit "
                "correspondence" % (g.id, g.grading, g.value, len(hits)))
        mapping[g.id] = hits[0].id
        used.add(hits[0].id)
    if len(C2.generators) != len(C1.generators):
        raise ValueError("generator counts differ: %d vs %d"
                         % (len(C1.generators), len(C2.generators)))
    return mapping


def _is_cochain_map(C1, C2, mapping):
    defects = []
    for g in C1.generators:
        img_of_delta = {mapping[t] for t in C1.delta.get(g.id, ())}
        delta_of_img = set(C2.delta.get(mapping[g.id], ()))
        if img_of_delta != delta_of_img:
            defects.append({"generator": g.id,
                            "phi(delta(g))": sorted(img_of_delta),
                            "delta(phi(g))": sorted(delta_of_img)})
    return defects


def _push_class(R1, R2, mapping, cls):
    """Image of a class of R1 in the class basis of R2; None if not a class."""
    C2 = R2.complex
    basis2 = C2.basis(cls.grading)
    pos = {g.id: i for i, g in enumerate(basis2)}
    vec = np.zeros(len(basis2), dtype=np.uint8)
    for gid in cls.support:
        vec[pos[mapping[gid]]] ^= 1
    if C2.delta_of(vec, cls.grading).any():
        return None
    im_cols = C2.delta_matrix(cls.grading - 1).T
    im_datum = gf2.row_space(im_cols)
    return _class_coordinates(vec, R2.classes.get(cls.grading, []), im_datum,
                              len(basis2))


def compare_rings(R1, R2, correspondence="by grading+value", tol_value=1e-6):
    """Verdict on R1 ~= R2 as graded rings.

    `correspondence` is either "by grading+value" (match generators by
    grading and critical value), or an explicit {id1: id2} generator map
    (e.g. a continuation matrix turned into a bijection).  The verdict
    checks graded-rank equality, that the map is a cochain map, and that
    the induced class map intertwines the products.
    """
    C1, C2 = R1.complex, R2.complex
    if correspondence == "by grading+value":
        mapping = _match_generators(C1, C2, tol_value)
    else:
        mapping = dict(correspondence)

    rank_ok = R1.ranks == R2.ranks
    chain_defects = _is_cochain_map(C1, C2, mapping)

    product_defects = []
    pushed = {}
    for g, cs in R1.classes.items():
        for c in cs:
            coords = _push_class(R1, R2, mapping, c)
            if coords is None:
                product_defects.append({"class": c.label,
                                        "problem": "image is not a cocycle class"})
            pushed[c.label] = coords
    label_index = {g: {c.label: i for i, c in enumerate(cs)}
                   for g, cs in R2.classes.items()}

    def push_labels(labels, grading):
        out = np.zeros(len(R2.classes.get(grading, [])), dtype=np.uint8)
        for lb in labels:
            coords = pushed.get(lb)
            if coords is None:
                return None
            out ^= coords
        return out

    for ga, cas in R1.classes.items():
        for gb, cbs in R1.classes.items():
            for ca in cas:
                for cb in cbs:
                    lhs = push_labels(R1.products.get((ca.label, cb.label), []), ga + gb)
                    a2, b2 = pushed.get(ca.label), pushed.get(cb.label)
                    if lhs is None or a2 is None or b2 is None:
                        continue
                    rhs = np.zeros_like(lhs)
                    cs2a = R2.classes.get(ga, [])
                    cs2b = R2.classes.get(gb, [])
                    for i, cia in enumerate(cs2a):
                        if not a2[i]:
                            continue
                        for j, cjb in enumerate(cs2b):
                            if not b2[j]:
                                continue
                            for lb in R2.products.get((cia.label, cjb.label), []):
                                rhs[label_index[ga + gb][lb]] ^= 1
                    if not np.array_equal(lhs, rhs):
                        product_defects.append({
                            "pair": [ca.label, cb.label],
                            "phi(mu2)": lhs.tolist(), "mu2(phi,phi)": rhs.tolist()})

    verdict = {
        "rank_equal": rank_ok,
        "ranks_1": {str(k): v for k, v in sorted(R1.ranks.items())},
        "ranks_2": {str(k): v for k, v in sorted(R2.ranks.items())},
        "cochain_map_defects": chain_defects,
        "product_defects": product_defects,
        "generator_map": mapping,
        "pass": rank_ok and not chain_defects and not product_defects,
    }
    return verdict
