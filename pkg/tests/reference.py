"""Loop-level reference decoder, written independently of the package network.

Every quantity is built from scalar formulas one position and one head at a
time, so it shares no code path with the vectorized implementation.  It can
omit the retrieval sublayer entirely, which gives the "no retrieval" network
that the architecture identities are checked against.
"""

import math

import numpy as np

EPS = 1e-5


def layer_norm(v, g, b):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return np.array([(x - mu) / math.sqrt(var + EPS) * gi + bi for x, gi, bi in zip(v, g, b)])


def gelu(x):
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def affine(v, w, b):
    return np.array([sum(v[i] * w[i, j] for i in range(len(v))) + b[j] for j in range(w.shape[1])])


def attention(p, kind, queries, keys_values, n_heads, causal):
    """Multi-head attention of each query row over the key/value rows."""
    D = queries.shape[1]
    dh = D // n_heads
    q = [affine(x, p[f"{kind}.wq"], p[f"{kind}.bq"]) for x in queries]
    k = [affine(x, p[f"{kind}.wk"], p[f"{kind}.bk"]) for x in keys_values]
    v = [affine(x, p[f"{kind}.wv"], p[f"{kind}.bv"]) for x in keys_values]
    out = []
    for t in range(len(queries)):
        merged = np.zeros(D)
        visible = range(t + 1) if causal else range(len(keys_values))
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            s = [float(np.dot(q[t][sl], k[j][sl])) / math.sqrt(dh) for j in visible]
            top = max(s)
            w = [math.exp(x - top) for x in s]
            z = sum(w)
            for j, wj in zip(visible, w):
                merged[sl] += wj / z * v[j][sl]
        out.append(affine(merged, p[f"{kind}.wo"], p[f"{kind}.bo"]))
    return np.array(out)


def block(p, x, img_rows, retr_rows, n_heads, with_retrieval=True):
    def sub(name, kv, causal):
        a = np.array([layer_norm(r, p[f"ln_{name}.g"], p[f"ln_{name}.b"]) for r in x])
        return attention(p, name, a, a if kv is None else kv, n_heads, causal)

    x = x + sub("self", None, True)
    x = x + sub("img", img_rows, False)
    if with_retrieval:
        x = x + sub("retr", retr_rows, False)
    a = np.array([layer_norm(r, p["ln_ff.g"], p["ln_ff.b"]) for r in x])
    hidden = [np.array([gelu(u) for u in affine(r, p["ff.w1"], p["ff.b1"])]) for r in a]
    return x + np.array([affine(h, p["ff.w2"], p["ff.b2"]) for h in hidden])


def logits(params, n_layers, n_heads, ids, img_feats, retr_feats, with_retrieval=True):
    """(T, V) logits for one sequence."""
    x = np.array([params["wte"][i] + params["wpe"][t] for t, i in enumerate(ids)])
    img_rows = np.array([affine(f, params["img_proj.w"], params["img_proj.b"]) for f in img_feats])
    retr_rows = np.array([affine(f, params["retr_proj.w"], params["retr_proj.b"]) for f in retr_feats])
    for i in range(n_layers):
        p = {k[len(f"h{i}."):]: v for k, v in params.items() if k.startswith(f"h{i}.")}
        x = block(p, x, img_rows, retr_rows, n_heads, with_retrieval)
    final = [layer_norm(r, params["ln_f.g"], params["ln_f.b"]) for r in x]
    return np.array([[float(np.dot(h, e)) for e in params["wte"]] for h in final])
