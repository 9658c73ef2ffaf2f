"""Slow, independently written reference implementations used by the tests."""
import math

import numpy as np


def scalar_forward(network, x):
    """Plain-Python forward pass, one unit at a time."""
    h = [float(v) for v in x]
    last = len(network.weights) - 1
    for k, (W, b) in enumerate(zip(network.weights, network.biases)):
        out = []
        for j in range(W.shape[0]):
            z = b[j]
            for i in range(W.shape[1]):
                z += W[j, i] * h[i]
            if k < last:
                a = network.activation
                if a == "relu":
                    z = z if z > 0 else 0.0
                elif a == "elu":
                    z = z if z > 0 else math.exp(z) - 1.0
                elif a == "tanh":
                    z = math.tanh(z)
                else:
                    z = 1.0 / (1.0 + math.exp(-z))
            out.append(z)
        h = out
    return h[0]


def central_difference(f, array, h=1e-5):
    """d f / d array by perturbing each entry of ``array`` in place."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / scale)


def brute_ranking(scores, excluded):
    """Candidates sorted by (-score, index) with plain Python."""
    cands = [i for i in range(len(scores)) if i not in set(excluded)]
    return sorted(cands, key=lambda i: (-scores[i], i))


def brute_metrics(scores, train_pos, test_pos, k=10):
    """Per-user (rr_all, rr_first, ap, auc) dicts for users with test positives."""
    out = {}
    for u in range(scores.shape[0]):
        rel = set(test_pos[u])
        if not rel:
            continue
        ranked = brute_ranking(list(scores[u]), train_pos[u])
        positions = [r + 1 for r, i in enumerate(ranked) if i in rel]
        rr_all = sum(1.0 / r for r in positions) / len(rel)
        rr_first = 1.0 / positions[0]
        hits, precisions = 0, []
        for r, i in enumerate(ranked[:k]):
            if i in rel:
                hits += 1
                precisions.append(hits / (r + 1))
        ap = sum(precisions) / min(len(rel), k)
        negs = [i for i in ranked if i not in rel]
        if negs:
            wins = 0.0
            for i in rel:
                for j in negs:
                    if scores[u, i] > scores[u, j]:
                        wins += 1.0
                    elif scores[u, i] == scores[u, j]:
                        wins += 0.5
            auc = wins / (len(rel) * len(negs))
        else:
            auc = None
        out[u] = (rr_all, rr_first, ap, auc)
    return out


def adam_unrolled(theta, grad_fn, steps, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trail = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trail.append(theta)
    return trail


def pearson_two_pass(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def covariance_two_pass(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    return sum((a - mx) * (b - my) for a, b in zip(x, y)) / (n - 1)


def toy_split(rng, m, n, max_train=4, max_test=4, labels=None):
    """Random split dataset with per-user train/test positives drawn from n items."""
    from cflab.dataset import IndexMaps, InteractionDataset

    users, items, train = [], [], []
    for u in range(m):
        k_train = rng.integers(0, min(max_train, n - 1) + 1)
        k_test = rng.integers(0, min(max_test, n - k_train) + 1)
        chosen = rng.choice(n, size=k_train + k_test, replace=False)
        for j, i in enumerate(chosen):
            users.append(u)
            items.append(int(i))
            train.append(j < k_train)
    return InteractionDataset(
        scenario="implicit",
        maps=IndexMaps(np.arange(m), np.arange(n)),
        users=np.array(users, dtype=np.int64),
        items=np.array(items, dtype=np.int64),
        labels=np.ones(len(users)) if labels is None else labels,
        train_mask=np.array(train, dtype=bool),
        seed=0,
        fraction=0.8,
        n_ratings=len(users),
    )


def positives_by_user(ds):
    train = {u: [] for u in range(ds.m)}
    test = {u: [] for u in range(ds.m)}
    for u, i, t in zip(ds.users, ds.items, ds.train_mask):
        (train if t else test)[int(u)].append(int(i))
    return train, test


def batch_loss(model, loss, users, items, other):
    """Summed minibatch loss; ``other`` is negatives (bpr) or labels (bce)."""
    from cflab.training import bce_loss_and_grad, bpr_loss_and_grads

    if loss == "bpr":
        s, _ = model.forward(np.concatenate([users, users]), np.concatenate([items, other]))
        b = len(users)
        return float(bpr_loss_and_grads(s[:b], s[b:])[0].sum())
    s, _ = model.forward(users, items)
    return float(bce_loss_and_grad(s, other)[0].sum())


def batch_grads(model, loss, users, items, other):
    from cflab.training import bce_loss_and_grad, bpr_loss_and_grads

    if loss == "bpr":
        s, cache = model.forward(np.concatenate([users, users]), np.concatenate([items, other]))
        b = len(users)
        _, dp, dn = bpr_loss_and_grads(s[:b], s[b:])
        return model.backward(cache, np.concatenate([dp, dn]))
    s, cache = model.forward(users, items)
    return model.backward(cache, bce_loss_and_grad(s, other)[1])


def model_gradient_errors(model, loss, users, items, other, h=1e-5):
    """Relative error of backprop vs central differences, per parameter tensor.

    Embedding tensors are compared only on the rows the batch touches.
    """
    analytic = batch_grads(model, loss, users, items, other)
    errors = {}
    for name, param in model.parameters().items():
        if name == "user_factors":
            rows = np.unique(users)
        elif name == "item_factors":
            rows = np.unique(np.concatenate([items, other]) if loss == "bpr" else items)
        else:
            fd = central_difference(lambda: batch_loss(model, loss, users, items, other), param, h)
            errors[name] = relative_error(analytic[name], fd)
            continue
        for r in rows:
            fd = central_difference(lambda: batch_loss(model, loss, users, items, other), param[r], h)
            errors[f"{name}[{r}]"] = relative_error(analytic[name][r], fd)
    return errors


def gradient_case(modeling, arch, loss, seed=0, p=4, m=5, n=7, batch=6):
    """A randomized NCFN with nonzero biases plus a batch touching repeated rows."""
    from cflab.models import build_neural_model

    rng = np.random.default_rng(seed)
    model = build_neural_model(m, n, p, modeling, arch.hidden_layers, arch.activation, seed=seed)
    model.factors.user_factors[:] = rng.normal(size=(m, p))
    model.factors.item_factors[:] = rng.normal(size=(n, p))
    for b in model.network.biases:
        b[:] = rng.normal(size=b.shape) * 0.3
    users = rng.integers(0, m, size=batch)
    items = rng.integers(0, n, size=batch)
    other = rng.integers(0, n, size=batch) if loss == "bpr" else rng.choice([-1.0, 1.0], size=batch)
    return model, users, items, other
