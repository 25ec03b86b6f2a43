"""Mesh, element space, and quadrature checks."""

import numpy as np
import pytest

from thermoreg.mesh import (
    EDGE_NODES,
    FESpace,
    build_structured_mesh,
    edge_param_points,
    edge_trace_tables,
    quadrature,
    shape_eval,
)


def test_node_counts_2x1():
    # Fine grid (2*2+1) x (2*1+1) = 15 points minus the 2 cell centers.
    mesh = build_structured_mesh(2, 1, 2.0, 1.0)
    seren = FESpace(mesh, "serendipity8")
    q1 = FESpace(mesh, "q1")
    assert mesh.n_elems == 2
    assert seren.n_nodes == 13
    assert q1.n_nodes == 6


def test_node_counts_1x1():
    mesh = build_structured_mesh(1, 1, 1.0, 1.0)
    assert mesh.n_elems == 1
    assert FESpace(mesh, "serendipity8").n_nodes == 8
    assert FESpace(mesh, "q1").n_nodes == 4
    assert FESpace(mesh, "q2").n_nodes == 9
    assert FESpace(mesh, "q0").n_nodes == 1


def test_node_count_formula():
    # (2nx+1)(2ny+1) - nx*ny for the serendipity family
    for nx, ny in [(3, 2), (5, 4), (120, 20)]:
        mesh = build_structured_mesh(nx, ny, 1.0, 1.0)
        seren = FESpace(mesh, "serendipity8")
        assert seren.n_nodes == (2 * nx + 1) * (2 * ny + 1) - nx * ny


def test_gauss_lobatto_weights_from_moment_equations():
    # Independent derivation: weights for nodes {-1, 0, 1} solve the moment
    # system sum_k w_k t_k^m = int_-1^1 t^m dt for m = 0, 1, 2.
    t = np.array([-1.0, 0.0, 1.0])
    V = np.vander(t, 3, increasing=True).T
    moments = np.array([2.0, 0.0, 2.0 / 3.0])
    w = np.linalg.solve(V, moments)
    assert np.allclose(w, [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0], atol=1e-14)

    rule = quadrature("gauss-lobatto-3x3")
    assert rule.n_points == 9
    assert np.isclose(rule.weights.sum(), 4.0)
    # tensor-product weights match the 1D derivation
    got = sorted(np.round(rule.weights, 12))
    want = sorted(np.round(np.outer(w, w).ravel(), 12))
    assert np.allclose(got, want)


def test_gauss_lobatto_exactness():
    rule = quadrature("gauss-lobatto-3x3")
    x, y = rule.points[:, 0], rule.points[:, 1]
    # int over [-1,1]^2 of x^2 y^2 = (2/3)^2 = 4/9
    assert np.isclose(rule.weights @ (x**2 * y**2), 4.0 / 9.0, atol=1e-14)
    # exact through cubic per direction
    assert np.isclose(rule.weights @ (x**3 * y**3), 0.0, atol=1e-14)
    assert np.isclose(rule.weights @ (x**2 * y**3), 0.0, atol=1e-14)
    # degree 4 is not integrated exactly by Lobatto-3 (2/3 instead of 2/5)
    assert not np.isclose(rule.weights @ (x**4,)[0], 2.0 / 5.0, atol=1e-3)


def test_facet_gauss3():
    rule = quadrature("gauss-3")
    s = rule.points[:, 0]
    for deg, exact in [(0, 2.0), (2, 2.0 / 3.0), (4, 2.0 / 5.0)]:
        assert np.isclose(rule.weights @ s**deg, exact, atol=1e-14)
    assert np.isclose(rule.weights @ s**5, 0.0, atol=1e-14)


def test_unknown_variant_raises():
    with pytest.raises(ValueError):
        quadrature("gauss-7x7")


@pytest.mark.parametrize("kind,nb", [("serendipity8", 8), ("q2", 9), ("q1", 4)])
def test_partition_of_unity_and_nodal_property(kind, nb):
    mesh = build_structured_mesh(3, 2, 1.5, 1.0)
    space = FESpace(mesh, kind)
    rng = np.random.default_rng(42)
    pts = rng.uniform(-1, 1, size=(20, 2))
    N, dN, d2N = space.ref_tables(pts)
    assert N.shape == (20, nb)
    assert np.allclose(N.sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(dN.sum(axis=1), 0.0, atol=1e-13)
    assert np.allclose(d2N.sum(axis=1), 0.0, atol=1e-13)
    # Kronecker delta at the local nodes
    from thermoreg.mesh import _SEREN_NODES, _Q1_NODES, _Q2_NODES
    loc = {"serendipity8": _SEREN_NODES, "q2": _Q2_NODES, "q1": _Q1_NODES}[kind]
    Nn, _, _ = space.ref_tables(loc)
    assert np.allclose(Nn, np.eye(nb), atol=1e-13)


@pytest.mark.parametrize("kind", ["serendipity8", "q2", "q1"])
def test_reference_derivatives_match_finite_differences(kind):
    mesh = build_structured_mesh(1, 1, 1.0, 1.0)
    space = FESpace(mesh, kind)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.9, 0.9, size=(12, 2))
    h = 1e-6
    _, dN, d2N = space.ref_tables(pts)
    for axis in range(2):
        dp = np.zeros(2)
        dp[axis] = h
        Np, _, _ = space.ref_tables(pts + dp)
        Nm, _, _ = space.ref_tables(pts - dp)
        assert np.allclose((Np - Nm) / (2 * h), dN[:, :, axis], atol=1e-8)
        _, dNp, _ = space.ref_tables(pts + dp)
        _, dNm, _ = space.ref_tables(pts - dp)
        fd_h = (dNp - dNm) / (2 * h)
        assert np.allclose(fd_h[:, :, axis], d2N[:, :, axis], atol=1e-7)
    # mixed second derivative
    _, dNp, _ = space.ref_tables(pts + [0, h])
    _, dNm, _ = space.ref_tables(pts - [0, h])
    assert np.allclose((dNp - dNm)[:, :, 0] / (2 * h), d2N[:, :, 2], atol=1e-7)


def test_physical_reproduction_of_quadratics():
    # On a non-square cell, the quadratic space reproduces x^2 exactly:
    # values, gradient, and constant second derivative.
    mesh = build_structured_mesh(4, 3, 2.0, 0.6)
    space = FESpace(mesh, "serendipity8")
    f = space.nodes[:, 0] ** 2 + 0.5 * space.nodes[:, 1] ** 2
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, size=(6, 2))
    for elem in (0, 5, 11):
        conn = space.elems[elem]
        N, dNdx, d2Ndx2, detJ = shape_eval(space, elem, pts)
        assert np.allclose(detJ, mesh.hx * mesh.hy / 4.0)
        xq = N @ space.nodes[conn]
        assert np.allclose(N @ f[conn], xq[:, 0] ** 2 + 0.5 * xq[:, 1] ** 2, atol=1e-12)
        grad = np.einsum("pb,pbi->pi", np.broadcast_to(f[conn], N.shape), dNdx)
        assert np.allclose(grad[:, 0], 2 * xq[:, 0], atol=1e-10)
        assert np.allclose(grad[:, 1], xq[:, 1], atol=1e-10)
        hess = np.einsum("b,pbk->pk", f[conn], d2Ndx2)
        assert np.allclose(hess[:, 0], 2.0, atol=1e-9)   # xx
        assert np.allclose(hess[:, 1], 1.0, atol=1e-9)   # yy
        assert np.allclose(hess[:, 2], 0.0, atol=1e-9)   # xy


def test_facet_tagging():
    spec = [
        ("hot", lambda x, y: x > 1.0 - 1e-12),
        ("cold", lambda x, y: x < 1e-12 and y < 0.25),
    ]
    mesh = build_structured_mesh(4, 4, 1.0, 1.0, tag_spec=spec)
    assert len(mesh.facet_elem) == 2 * 4 + 2 * 4
    assert len(mesh.tags["hot"]) == 4
    assert len(mesh.tags["cold"]) == 1
    # every facet has exactly one tag or none
    tagged = sum(1 for t in mesh.facet_tags if t is not None)
    assert tagged == 5
    assert np.isclose(mesh.tag_length("hot"), 1.0)
    assert np.isclose(mesh.tag_length("cold"), 0.25)


def test_edge_traces_match_volume_basis():
    # The serendipity trace on an edge is the quadratic 1D basis of its
    # three edge nodes; all other basis functions vanish on the edge.
    mesh = build_structured_mesh(1, 1, 1.0, 1.0)
    space = FESpace(mesh, "serendipity8")
    s = np.linspace(-1, 1, 7)
    tr, _ = edge_trace_tables(s)
    for edge in range(4):
        pts = edge_param_points(edge, s)
        N, _, _ = space.ref_tables(pts)
        nodes = EDGE_NODES[edge]
        assert np.allclose(N[:, nodes], tr, atol=1e-13)
        others = [b for b in range(8) if b not in nodes]
        assert np.allclose(N[:, others], 0.0, atol=1e-13)


def test_elem_dofs_interleaving():
    mesh = build_structured_mesh(2, 1, 1.0, 1.0)
    space = FESpace(mesh, "serendipity8", n_comp=2)
    dofs = space.elem_dofs()
    assert dofs.shape == (2, 16)
    assert dofs[0, 0] == space.elems[0, 0] * 2
    assert dofs[0, 1] == space.elems[0, 0] * 2 + 1


def test_invalid_input_raises():
    with pytest.raises(ValueError):
        build_structured_mesh(0, 1, 1.0, 1.0)
    with pytest.raises(ValueError):
        build_structured_mesh(1, 1, -1.0, 1.0)
    mesh = build_structured_mesh(1, 1, 1.0, 1.0)
    with pytest.raises(ValueError):
        FESpace(mesh, "hermite")
