"""Independent reference implementations used by several test modules."""

import numpy as np


def naive_conditional(block, n, s, x, z):
    """Explicit-loop posterior mean and covariance via matrix inversion."""
    V, J = n.shape
    kappa = lambda v, j: (n[v, j] - s.r[j]) / 2
    out_m, out_c = [], []
    if block in ("beta", "phi"):
        for v in range(V):
            if block == "beta":
                feats = [x[:, j] for j in range(J)]
                offs = [s.delta[:, j] @ z[:, v] + s.phi[:, v] @ s.theta[:, j] for j in range(J)]
                prior = np.diag(s.alpha)
            else:
                feats = [s.theta[:, j] for j in range(J)]
                offs = [s.beta[:, v] @ x[:, j] + s.delta[:, j] @ z[:, v] for j in range(J)]
                prior = np.eye(s.K)
            prec = prior + sum(s.omega[v, j] * np.outer(feats[j], feats[j]) for j in range(J))
            lin = sum((kappa(v, j) - s.omega[v, j] * offs[j]) * feats[j] for j in range(J))
            cov = np.linalg.inv(prec)
            out_m.append(cov @ lin)
            out_c.append(cov)
    else:
        for j in range(J):
            if block == "delta":
                feats = [z[:, v] for v in range(V)]
                offs = [s.beta[:, v] @ x[:, j] + s.phi[:, v] @ s.theta[:, j] for v in range(V)]
                prior = np.diag(s.eta)
            else:
                feats = [s.phi[:, v] for v in range(V)]
                offs = [s.beta[:, v] @ x[:, j] + s.delta[:, j] @ z[:, v] for v in range(V)]
                prior = np.diag(s.gamma)
            prec = prior + sum(s.omega[v, j] * np.outer(feats[v], feats[v]) for v in range(V))
            lin = sum((kappa(v, j) - s.omega[v, j] * offs[v]) * feats[v] for v in range(V))
            cov = np.linalg.inv(prec)
            out_m.append(cov @ lin)
            out_c.append(cov)
    return np.array(out_m), np.array(out_c)
