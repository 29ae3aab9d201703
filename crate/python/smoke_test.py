"""Quick check of the installed `ulot` extension module."""

import ulot


def main():
    a = ulot.Graph.sbm([1, 2], nodes_min=12, nodes_max=16, seed=1)
    b = ulot.Graph.sbm([2, 3], nodes_min=12, nodes_max=16, seed=2)

    same = ulot.solve(a, a, 0.5, 0.1)
    assert same.loss < 1e-6, same.loss

    for solver in ("mm", "ibpp", "sinkhorn", "boxqn"):
        r = ulot.solve(a, b, 0.5, 0.1, solver)
        assert r.loss >= 0.0 and 0.0 <= r.mass <= 1.0 + 1e-9
        print(f"{solver:>8}: loss {r.loss:.6f} mass {r.mass:.4f} in {r.iterations} iterations")

    cfg = ulot.ModelConfig(layers=1, embed_dim=8, mlp_hidden=8, gcn_hidden=4, alpha_dim=2)
    graphs = [ulot.Graph.sbm(c, 8, 10, seed=s) for s, c in enumerate([[1, 2], [2, 3]] * 3)]
    weights, history = ulot.train_model(graphs, 30, model=cfg, epochs=3, batch_size=8)
    print(f"trained {weights.num_parameters} parameters, final val loss {history[-1]['val_loss']:.5f}")

    p = weights.predict(a, b, 0.5, 0.1)
    q = weights.predict(b, a, 0.5, 0.1)
    gap = max(abs(p[i][j] - q[j][i]) for i in range(a.n) for j in range(b.n))
    assert gap <= 1e-12, gap

    s = ulot.similarity_matrix(graphs, weights, 0.5, 0.01)
    x = ulot.mds(s, 2)
    assert len(x) == len(graphs)
    print("ok")


if __name__ == "__main__":
    main()
