"""Smoke test for the Python extension.

Imports `etmarl` if installed, otherwise loads the library built by
`cargo build -p etmarl-python --release --features extension-module`.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load():
    try:
        import etmarl

        return etmarl
    except ImportError:
        pass
    for profile in ("release", "debug"):
        for name in ("libetmarl.so", "libetmarl.dylib", "etmarl.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                loader = importlib.machinery.ExtensionFileLoader("etmarl", str(path))
                spec = importlib.util.spec_from_loader("etmarl", loader)
                module = importlib.util.module_from_spec(spec)
                loader.exec_module(module)
                return module
    sys.exit("etmarl extension not found; build it with cargo first")


def main():
    et = load()

    env = et.ParticleTag(3)
    assert env.n_states == 729
    x = [1, 1, 0, 0, 2, 2]
    assert env.state_at(env.state_index(x)) == x

    # predators either side of the prey close in: tag ends the game
    nxt, reward, done = env.step([0, 1, 2, 1, 1, 1], [3, 2], seed=1)
    assert (reward, done) == (1.0, True)
    total = sum(p for _, p, _ in env.transition_distribution(x, [0, 4]))
    assert abs(total - 1.0) < 1e-12

    q = et.value_iteration(env, gamma=0.97)
    assert q.bellman_residual(env) < 1e-8
    iota = q.suboptimality_gap()
    assert 0 < iota <= 2 / (1 - 0.97)

    table = et.gamma_alpha_table(env, q, 0.3)
    assert table[env.state_index(x)] == et.gamma_alpha(env, q, x, 0.3)
    assert all(0 <= g <= 2 for g in table)

    states, labels = et.sample_surrogates(env, q, 0.3, 200, seed=5)
    model = et.fit_svr(states, labels, nu=0.1, c=100.0)
    assert model.kappa >= 0 and model.n_support > 0
    s_star = model.count_outliers(states, labels)
    lo, hi = et.epsilon_bounds(len(states), s_star, 1e-3)
    assert 0 <= lo <= s_star / len(states) <= hi <= 1

    lo, hi = et.epsilon_bounds(10_000, 670, 1e-3)
    assert abs(hi - 0.079) < 0.005, hi

    assert et.corollary1_delta(0.0, 0.0, iota) == 0.0
    assert math.isclose(et.theorem1_bound(1.0, 0.1), 1.0 - 0.1 * 0.97 / 0.03)

    full = et.simulate(env, q, trigger="full-comm", n_games=300, seed=9)
    assert full["msg_rate"] == 2.0
    trig = et.simulate(env, q, trigger="exact", alpha=0.4, n_games=300, seed=9)
    assert trig["msg_rate"] < 2.0
    learned = et.simulate(env, q, trigger="svr", alpha=0.3, model=model, n_games=300, seed=9)
    assert len(learned["returns"]) == 300

    try:
        et.ParticleTag(3).state_index([5, 0, 0, 0, 0, 0])
    except et.EtmarlError as e:
        assert "out_of_bounds" in str(e)
    else:
        raise AssertionError("expected an error")

    print(
        "ok: iota={:.3f} full-comm rate {:.2f}, exact(0.4) rate {:.3f}, svr(0.3) rate {:.3f}".format(
            iota, full["msg_rate"], trig["msg_rate"], learned["msg_rate"]
        )
    )


if __name__ == "__main__":
    main()
