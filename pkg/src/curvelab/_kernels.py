"""Hot inner loops.

Every kernel here has two bodies: a numba-compiled loop and a pure numpy
fallback, selected once at import time by :mod:`curvelab._accel`.
"""
import numpy as np

from ._accel import USE_NUMBA, jit

__all__ = ["transport_simplex", "min_plus", "gamma_eval", "gamma2_eval",
           "path_distance", "graph_distance"]


# ---------------------------------------------------------------------------
# pricing step of the transportation simplex
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @jit
    def _price(C, u, v, bland, tol):
        p, q = C.shape
        best = -tol
        bi = -1
        bj = -1
        for i in range(p):
            ui = u[i]
            for j in range(q):
                r = C[i, j] - ui - v[j]
                if r < best:
                    bi = i
                    bj = j
                    if bland:
                        return bi, bj, r
                    best = r
        return bi, bj, best

else:

    def _price(C, u, v, bland, tol):
        r = C - u[:, None] - v[None, :]
        if bland:
            hits = np.flatnonzero(r.ravel() < -tol)
            if hits.size == 0:
                return -1, -1, 0.0
            k = hits[0]
        else:
            k = int(np.argmin(r))
            if r.flat[k] >= -tol:
                return -1, -1, 0.0
        i, j = divmod(int(k), C.shape[1])
        return i, j, r[i, j]


# ---------------------------------------------------------------------------
# transportation simplex on the complete bipartite graph
# ---------------------------------------------------------------------------

@jit
def _tree_bfs(p, q, bi, bj, C, deg, adj, u, v, parent_cell, depth, order):
    # potentials rooted at row 0 with u[0] = 0; parent_cell / depth describe
    # the spanning tree so cycles can be located by walking to the common
    # ancestor.
    nn = p + q
    for k in range(nn):
        depth[k] = -1
        parent_cell[k] = -1
    depth[0] = 0
    u[0] = 0.0
    order[0] = 0
    head = 0
    tail = 1
    while head < tail:
        node = order[head]
        head += 1
        for s in range(deg[node]):
            k = adj[node, s]
            if node < p:
                other = p + bj[k]
            else:
                other = bi[k]
            if depth[other] >= 0:
                continue
            depth[other] = depth[node] + 1
            parent_cell[other] = k
            if node < p:
                v[other - p] = C[node, bj[k]] - u[node]
            else:
                u[other] = C[bi[k], node - p] - v[node - p]
            order[tail] = other
            tail += 1
    return tail


@jit
def _other_end(node, k, p, bi, bj):
    if node < p:
        return p + bj[k]
    return bi[k]


@jit
def _adj_remove(adj, deg, node, k):
    for s in range(deg[node]):
        if adj[node, s] == k:
            adj[node, s] = adj[node, deg[node] - 1]
            deg[node] -= 1
            return


@jit
def _simplex_loop(a, b, C, max_iter, tol, degenerate_limit):
    p = a.size
    q = b.size
    nb = p + q - 1
    nn = p + q
    bi = np.empty(nb, np.int64)
    bj = np.empty(nb, np.int64)
    flow = np.empty(nb)

    # north-west corner start: exact for sorted one-dimensional convex costs
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    for k in range(nb):
        amt = min(ra[i], rb[j])
        if amt < 0.0:
            amt = 0.0
        bi[k] = i
        bj[k] = j
        flow[k] = amt
        ra[i] -= amt
        rb[j] -= amt
        if i == p - 1:
            j += 1
        elif j == q - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1

    deg = np.zeros(nn, np.int64)
    adj = np.empty((nn, nn), np.int64)
    for k in range(nb):
        r = bi[k]
        c = p + bj[k]
        adj[r, deg[r]] = k
        deg[r] += 1
        adj[c, deg[c]] = k
        deg[c] += 1

    u = np.zeros(p)
    v = np.zeros(q)
    parent_cell = np.empty(nn, np.int64)
    depth = np.empty(nn, np.int64)
    order = np.empty(nn, np.int64)
    cyc = np.empty(nn, np.int64)
    sign = np.empty(nn, np.int64)
    stack_a = np.empty(nn, np.int64)
    stack_b = np.empty(nn, np.int64)

    bland = False
    degenerate_run = 0
    it = 0
    status = 1  # 0 optimal, 1 iteration cap, 2 broken tree
    while it < max_iter:
        reached = _tree_bfs(p, q, bi, bj, C, deg, adj, u, v,
                            parent_cell, depth, order)
        if reached != nn:
            status = 2
            break
        ei, ej, red = _price(C, u, v, bland, tol)
        if ei < 0:
            status = 0
            break
        it += 1

        # cycle: entering cell, then col ej up to the common ancestor, then
        # down to row ei; signs alternate starting with minus after ej.
        na = ei
        nbn = p + ej
        la = 0
        lb = 0
        # walk the deeper end first, collecting cells in two stacks
        while depth[na] > depth[nbn]:
            k = parent_cell[na]
            stack_a[la] = k
            la += 1
            na = _other_end(na, k, p, bi, bj)
        while depth[nbn] > depth[na]:
            k = parent_cell[nbn]
            stack_b[lb] = k
            lb += 1
            nbn = _other_end(nbn, k, p, bi, bj)
        while na != nbn:
            k = parent_cell[na]
            stack_a[la] = k
            la += 1
            na = _other_end(na, k, p, bi, bj)
            k = parent_cell[nbn]
            stack_b[lb] = k
            lb += 1
            nbn = _other_end(nbn, k, p, bi, bj)
        ncyc = 0
        for s in range(lb):
            cyc[ncyc] = stack_b[s]
            ncyc += 1
        for s in range(la - 1, -1, -1):
            cyc[ncyc] = stack_a[s]
            ncyc += 1
        for s in range(ncyc):
            sign[s] = -1 if s % 2 == 0 else 1

        theta = np.inf
        leave = -1
        leave_key = 0
        for s in range(ncyc):
            if sign[s] < 0:
                k = cyc[s]
                f = flow[k]
                key = bi[k] * q + bj[k]
                if f < theta or (f == theta and key < leave_key):
                    theta = f
                    leave = k
                    leave_key = key
        if theta < 0.0:
            theta = 0.0
        for s in range(ncyc):
            k = cyc[s]
            if sign[s] < 0:
                flow[k] -= theta
            else:
                flow[k] += theta

        # swap the leaving cell for the entering one
        _adj_remove(adj, deg, bi[leave], leave)
        _adj_remove(adj, deg, p + bj[leave], leave)
        bi[leave] = ei
        bj[leave] = ej
        flow[leave] = theta
        adj[ei, deg[ei]] = leave
        deg[ei] += 1
        adj[p + ej, deg[p + ej]] = leave
        deg[p + ej] += 1

        if theta <= 0.0:
            degenerate_run += 1
            if degenerate_run > degenerate_limit:
                bland = True
        else:
            degenerate_run = 0

    if status != 0:
        _tree_bfs(p, q, bi, bj, C, deg, adj, u, v, parent_cell, depth, order)
    return bi, bj, flow, u, v, it, status, bland


def transport_simplex(a, b, C, max_iter=None, tol=None, degenerate_limit=None):
    """Solve ``min <P, C>`` over couplings of ``a`` and ``b`` exactly.

    Parameters
    ----------
    a : (p,) ndarray
        Source masses, positive.
    b : (q,) ndarray
        Target masses, positive, same total as ``a``.
    C : (p, q) ndarray
        Cost matrix.

    Returns
    -------
    plan : (p, q) ndarray
    u, v : ndarray
        Dual potentials with ``u[i] + v[j] <= C[i, j]`` at optimality.
    info : dict
        ``iterations``, ``status`` (0 optimal), ``bland`` (anti-cycling used).
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    p, q = C.shape
    if max_iter is None:
        max_iter = 50 * (p + q) * max(p, q) + 1000
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.abs(C).max(initial=0.0)))
    if degenerate_limit is None:
        degenerate_limit = 2 * (p + q)
    bi, bj, flow, u, v, it, status, bland = _simplex_loop(
        a, b, C, int(max_iter), float(tol), int(degenerate_limit))
    plan = np.zeros((p, q))
    np.add.at(plan, (bi, bj), np.maximum(flow, 0.0))
    return plan, u, v, {"iterations": int(it), "status": int(status),
                        "bland": bool(bland)}


# ---------------------------------------------------------------------------
# min-plus products (Hopf-Lax / c-transforms)
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @jit
    def _min_plus(f, D2, scale):
        n, k = D2.shape
        out = np.empty(n)
        arg = np.empty(n, np.int64)
        for x in range(n):
            best = np.inf
            bestj = 0
            for y in range(k):
                val = f[y] + D2[x, y] * scale
                if val < best:
                    best = val
                    bestj = y
            out[x] = best
            arg[x] = bestj
        return out, arg

else:

    def _min_plus(f, D2, scale):
        M = D2 * scale + f[None, :]
        arg = np.argmin(M, axis=1)
        return M[np.arange(M.shape[0]), arg], arg


def min_plus(f, D2, scale):
    """``out[x] = min_y f[y] + scale * D2[x, y]`` and the attaining ``y``."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    D2 = np.ascontiguousarray(D2, dtype=np.float64)
    return _min_plus(f, D2, float(scale))


# ---------------------------------------------------------------------------
# Gamma_2 on all states at once (sparse edge list form)
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @jit
    def _gamma_edges(indptr, indices, data, m, f, g):
        n = m.size
        out = np.zeros(n)
        for x in range(n):
            acc = 0.0
            for s in range(indptr[x], indptr[x + 1]):
                y = indices[s]
                acc += data[s] * (f[y] - f[x]) * (g[y] - g[x])
            out[x] = acc / (2.0 * m[x])
        return out

else:

    def _gamma_edges(indptr, indices, data, m, f, g):
        rows = np.repeat(np.arange(m.size), np.diff(indptr))
        contrib = data * (f[indices] - f[rows]) * (g[indices] - g[rows])
        return np.bincount(rows, weights=contrib, minlength=m.size) / (2.0 * m)


def gamma_eval(W, m, f, g):
    """Carre du champ on every state from a CSR weight matrix."""
    return _gamma_edges(W.indptr, W.indices, W.data, m,
                        np.ascontiguousarray(f, dtype=np.float64),
                        np.ascontiguousarray(g, dtype=np.float64))


def gamma2_eval(W, m, f):
    """``Gamma_2(f)`` on every state: ``(L Gamma(f) - 2 Gamma(f, Lf)) / 2``."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    Lf = (W @ f - np.asarray(W.sum(axis=1)).ravel() * f) / m
    gf = gamma_eval(W, m, f, f)
    Lgf = (W @ gf - np.asarray(W.sum(axis=1)).ravel() * gf) / m
    return 0.5 * Lgf - gamma_eval(W, m, f, Lf)


# ---------------------------------------------------------------------------
# intrinsic distance: log-barrier Newton for
#     max psi(y) - psi(x)  s.t.  Gamma(psi)(z) <= 1 for all z,  psi(x) = 0
# with the Lagrangian upper bound sqrt(sum(lam) * R_eff^lam(x, y)), where
# R_eff^lam is the effective resistance of the Laplacian sum_z lam_z G_z.
# ---------------------------------------------------------------------------

@jit
def _thomas(lo, di, up, rhs):
    # tridiagonal solve; lo[i] couples i to i-1, up[i] couples i to i+1
    k = di.size
    c = np.empty(k)
    d = np.empty(k)
    c[0] = up[0] / di[0]
    d[0] = rhs[0] / di[0]
    for i in range(1, k):
        den = di[i] - lo[i] * c[i - 1]
        c[i] = up[i] / den
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / den
    out = np.empty(k)
    out[k - 1] = d[k - 1]
    for i in range(k - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return out


@jit
def _path_constraints(a, w, mm):
    k = a.size
    g = np.empty(k + 1)
    for j in range(k + 1):
        s = 0.0
        if j >= 1:
            s += w[j - 1] * a[j - 1] * a[j - 1]
        if j <= k - 1:
            s += w[j] * a[j] * a[j]
        g[j] = s / (2.0 * mm[j])
    return g


@jit
def _path_barrier(a, w, mm, tau):
    g = _path_constraints(a, w, mm)
    val = 0.0
    for j in range(g.size):
        if g[j] >= 1.0:
            return np.inf
        val -= np.log1p(-g[j])
    return val - tau * a.sum()


@jit
def path_distance(w, mm, tol, max_newton):
    """Intrinsic distance between the ends of a weighted path.

    ``w[i]`` is the weight of edge ``(i, i+1)``, ``mm`` the node masses.
    Increments ``a_i >= 0`` are optimal (running-max of a clamped
    competitor never increases any increment), so the program lives on the
    path alone. Returns ``(lower, upper, newton_steps)``.
    """
    k = w.size
    a = np.zeros(k)
    tau = 1.0
    steps = 0
    lower = 0.0
    upper = np.inf
    while steps < max_newton:
        # centring
        for _ in range(100):
            g = _path_constraints(a, w, mm)
            s = 1.0 / (1.0 - g)
            grad = np.empty(k)
            di = np.empty(k)
            lo = np.zeros(k)
            up = np.zeros(k)
            for i in range(k):
                gi = -tau
                hi = 0.0
                for j in (i, i + 1):
                    dg = w[i] * a[i] / mm[j]
                    gi += dg * s[j]
                    hi += (w[i] / mm[j]) * s[j] + dg * dg * s[j] * s[j]
                grad[i] = gi
                di[i] = hi
            for i in range(k - 1):
                j = i + 1
                cpl = (w[i] * a[i] / mm[j]) * (w[i + 1] * a[i + 1] / mm[j]) * s[j] * s[j]
                up[i] = cpl
                lo[i + 1] = cpl
            step = _thomas(lo, di, up, -grad)
            dec2 = -np.dot(grad, step)
            steps += 1
            if dec2 < 1e-20:
                break
            f0 = _path_barrier(a, w, mm, tau)
            alpha = 1.0
            while alpha > 1e-16:
                trial = a + alpha * step
                if _path_barrier(trial, w, mm, tau) <= f0 - 0.25 * alpha * dec2:
                    break
                alpha *= 0.5
            if alpha <= 1e-16:
                break  # barrier differences below double precision
            a = a + alpha * step
            if dec2 < max(1e-12, 1e-13 * abs(f0)) or steps >= max_newton:
                break
        g = _path_constraints(a, w, mm)
        lam = 1.0 / (tau * (1.0 - g))
        R = 0.0
        for i in range(k):
            R += 1.0 / (w[i] * (lam[i] / (2.0 * mm[i]) + lam[i + 1] / (2.0 * mm[i + 1])))
        # rescaling onto the constraint boundary keeps feasibility
        lower = max(lower, a.sum() / np.sqrt(g.max()))
        upper = min(upper, np.sqrt(lam.sum() * R))
        if upper - lower <= tol * max(1.0, lower) or tau > 1e16:
            break
        tau *= 8.0
    return lower, upper, steps


@jit
def _graph_constraints(psi, eu, ev, ew, inc_ptr, inc_edge, m):
    n = m.size
    g = np.zeros(n)
    for z in range(n):
        s = 0.0
        for q in range(inc_ptr[z], inc_ptr[z + 1]):
            e = inc_edge[q]
            dlt = psi[eu[e]] - psi[ev[e]]
            s += ew[e] * dlt * dlt
        g[z] = s / (2.0 * m[z])
    return g


@jit
def _graph_barrier(psi, y, eu, ev, ew, inc_ptr, inc_edge, m, tau):
    g = _graph_constraints(psi, eu, ev, ew, inc_ptr, inc_edge, m)
    val = 0.0
    for z in range(g.size):
        if g[z] >= 1.0:
            return np.inf
        val -= np.log1p(-g[z])
    return val - tau * psi[y]


@jit
def _grounded_resistance(Lw, x, y):
    n = Lw.shape[0]
    keep = np.empty(n - 1, np.int64)
    c = 0
    for i in range(n):
        if i != x:
            keep[c] = i
            c += 1
    A = np.empty((n - 1, n - 1))
    for i in range(n - 1):
        for j in range(n - 1):
            A[i, j] = Lw[keep[i], keep[j]]
    rhs = np.zeros(n - 1)
    yy = y if y < x else y - 1
    rhs[yy] = 1.0
    sol = np.linalg.solve(A, rhs)
    return sol[yy]


@jit
def graph_distance(x, y, eu, ev, ew, inc_ptr, inc_edge, m, tol, max_newton):
    """Intrinsic distance between ``x`` and ``y`` on a general graph.

    Dense Newton on the barrier problem with ``psi(x) = 0``. Returns
    ``(lower, upper, newton_steps)``.
    """
    n = m.size
    psi = np.zeros(n)
    tau = 1.0
    steps = 0
    upper = np.inf
    lower = 0.0
    while steps < max_newton:
        for _ in range(100):
            g = _graph_constraints(psi, eu, ev, ew, inc_ptr, inc_edge, m)
            grad = np.zeros(n)
            H = np.zeros((n, n))
            grad[y] -= tau
            gz = np.zeros(n)
            for z in range(n):
                s = 1.0 / (1.0 - g[z])
                for q in range(inc_ptr[z], inc_ptr[z + 1]):
                    e = inc_edge[q]
                    u = eu[e]
                    v = ev[e]
                    coef = ew[e] / m[z]
                    dlt = psi[u] - psi[v]
                    grad[u] += coef * dlt * s
                    grad[v] -= coef * dlt * s
                    H[u, u] += coef * s
                    H[v, v] += coef * s
                    H[u, v] -= coef * s
                    H[v, u] -= coef * s
                # rank-one part: (grad g_z)(grad g_z)^T s^2
                for q in range(inc_ptr[z], inc_ptr[z + 1]):
                    e = inc_edge[q]
                    gz[eu[e]] = 0.0
                    gz[ev[e]] = 0.0
                for q in range(inc_ptr[z], inc_ptr[z + 1]):
                    e = inc_edge[q]
                    coef = ew[e] / m[z] * (psi[eu[e]] - psi[ev[e]])
                    gz[eu[e]] += coef
                    gz[ev[e]] -= coef
                s2 = s * s
                for q1 in range(inc_ptr[z], inc_ptr[z + 1] + 1):
                    i1 = z if q1 == inc_ptr[z + 1] else \
                        (ev[inc_edge[q1]] if eu[inc_edge[q1]] == z else eu[inc_edge[q1]])
                    for q2 in range(inc_ptr[z], inc_ptr[z + 1] + 1):
                        i2 = z if q2 == inc_ptr[z + 1] else \
                            (ev[inc_edge[q2]] if eu[inc_edge[q2]] == z else eu[inc_edge[q2]])
                        H[i1, i2] += gz[i1] * gz[i2] * s2
            for i in range(n):
                H[x, i] = 0.0
                H[i, x] = 0.0
            H[x, x] = 1.0
            grad[x] = 0.0
            step = np.linalg.solve(H, -grad)
            dec2 = -np.dot(grad, step)
            steps += 1
            if dec2 < 1e-20:
                break
            f0 = _graph_barrier(psi, y, eu, ev, ew, inc_ptr, inc_edge, m, tau)
            alpha = 1.0
            while alpha > 1e-16:
                trial = psi + alpha * step
                if _graph_barrier(trial, y, eu, ev, ew, inc_ptr, inc_edge, m, tau) \
                        <= f0 - 0.25 * alpha * dec2:
                    break
                alpha *= 0.5
            if alpha <= 1e-16:
                break  # barrier differences below double precision
            psi = psi + alpha * step
            if dec2 < max(1e-12, 1e-13 * abs(f0)) or steps >= max_newton:
                break
        g = _graph_constraints(psi, eu, ev, ew, inc_ptr, inc_edge, m)
        lam = 1.0 / (tau * (1.0 - g))
        Lw = np.zeros((n, n))
        for e in range(eu.size):
            u = eu[e]
            v = ev[e]
            c = ew[e] * (lam[u] / (2.0 * m[u]) + lam[v] / (2.0 * m[v]))
            Lw[u, u] += c
            Lw[v, v] += c
            Lw[u, v] -= c
            Lw[v, u] -= c
        R = _grounded_resistance(Lw, x, y)
        lower = max(lower, psi[y] / np.sqrt(g.max()))
        upper = min(upper, np.sqrt(lam.sum() * R))
        if upper - lower <= tol * max(1.0, lower) or tau > 1e16:
            break
        tau *= 8.0
    return lower, upper, steps
