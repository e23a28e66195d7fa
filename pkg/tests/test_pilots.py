import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdcf.config import SystemConfig
from fdcf.pilots import (
    Heap,
    HeapError,
    assign_pilots_heap,
    assign_pilots_naive,
    assign_pilots_random,
    assignment_cost,
    brute_force_optimal,
    effective_weights,
    heap_extract,
    heap_fd_strategy,
    heap_generate,
    heap_hd_strategy,
    heap_peek,
    heap_replace_siftdown,
    rand_fd_strategy,
    write_assignment_csv,
)
from fdcf.scenario import LargeScale, large_scale, sample_topology


def test_heap_generate_min_peek():
    h = heap_generate([3, 1, 2], kind="min")
    assert heap_peek(h)[0] == 1


def test_heap_max_extraction_order():
    h = heap_generate([5, 3, 4], kind="max")
    assert [heap_extract(h)[0] for _ in range(3)] == [5, 4, 3]


def test_heap_replace_siftdown():
    h = heap_generate([1, 4, 6], kind="min")
    heap_replace_siftdown(h, 7)
    assert heap_peek(h)[0] == 4


def test_heap_empty_errors():
    h = heap_generate([], kind="min")
    with pytest.raises(HeapError):
        heap_peek(h)
    with pytest.raises(HeapError):
        heap_extract(h)


def test_heap_tie_break_lowest_index_first():
    h = heap_generate([2.0, 2.0, 2.0], payloads=["a", "b", "c"], kind="max")
    assert [heap_extract(h)[1] for _ in range(3)] == ["a", "b", "c"]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1e6), min_size=1, max_size=60),
       st.lists(st.floats(min_value=0.0, max_value=1e6), max_size=30))
def test_heap_order_invariant_after_mutations(keys, replacements):
    for kind in ("min", "max"):
        h = Heap(kind, keys=keys, payloads=range(len(keys)))
        assert h.is_ordered()
        for r in replacements:
            h.replace(r)
            assert h.is_ordered()
        prev = None
        while len(h):
            k, _ = h.extract()
            assert h.is_ordered()
            if prev is not None:
                assert k >= prev if kind == "min" else k <= prev
            prev = k


def _manual_ls(beta_dl, beta_ul):
    beta_dl = np.asarray(beta_dl, float)
    beta_ul = np.asarray(beta_ul, float)
    k, m = beta_dl.shape
    l = beta_ul.shape[1]
    return LargeScale(beta_dl=beta_dl, beta_ul=beta_ul,
                      beta_cci=np.ones((k, l)), beta_aa=np.ones((m, m)))


def test_effective_weights_direct_product():
    # M=1, N_m=2, tau=2, p_tr=1, beta=0.5 -> 2*2*1*0.5 = 2
    cfg = SystemConfig(num_aps=1, antennas_per_ap=2, num_dl=1, num_ul=1, pilot_len=2,
                       train_power_w=1.0)
    ls = _manual_ls(np.array([[0.5]]), np.array([[0.5]]))
    assert np.allclose(effective_weights(ls, cfg, "ul"), [2.0])
    assert np.allclose(effective_weights(ls, cfg, "dl"), [2.0])


def test_effective_weights_symmetry_and_linearity():
    cfg = SystemConfig(num_aps=2, antennas_per_ap=2, num_dl=3, num_ul=3, pilot_len=2,
                       train_power_w=0.2)
    ls = _manual_ls(np.full((3, 2), 0.3), np.full((2, 3), 0.3))
    w = effective_weights(ls, cfg, "both")
    assert np.allclose(w, w[0])
    w2 = effective_weights(ls, cfg.replace(train_power_w=0.4), "both")
    assert np.allclose(w2, 2.0 * w)


def test_effective_weights_empty_set_errors():
    cfg = SystemConfig(num_aps=2, num_dl=2, num_ul=0, pilot_len=1)
    ls = _manual_ls(np.full((2, 2), 0.3), np.zeros((2, 0)))
    with pytest.raises(ValueError):
        effective_weights(ls, cfg, "ul")


def test_assign_all_distinct_when_enough_pilots():
    w = np.array([5.0, 3.0, 4.0])
    a = assign_pilots_heap(w, 3, seed_permutation=[2, 0, 1])
    assert sorted(a.pilot_of.tolist()) == [0, 1, 2]
    assert np.allclose(sorted(a.loads), sorted(w))
    # degenerate: fewer UEs than pilots still assigns distinct pilots
    a2 = assign_pilots_heap(np.array([1.0, 2.0]), 4, seed_permutation=[3, 1, 0, 2])
    assert len(set(a2.pilot_of.tolist())) == 2


def test_assign_hand_trace():
    # weights [5,3,4], tau=2, identity seeding: the two largest (UE0, UE2)
    # take pilots 0 and 1; UE1 joins the lighter pilot 1 -> loads [5, 7]
    a = assign_pilots_heap(np.array([5.0, 3.0, 4.0]), 2, seed_permutation=[0, 1])
    assert a.pilot_of.tolist() == [0, 1, 1]
    assert np.allclose(a.loads, [5.0, 7.0])
    assert assignment_cost(a, [5.0, 3.0, 4.0]) == 7.0


def test_upsilon_one_hot_columns():
    a = assign_pilots_heap(np.array([5.0, 3.0, 4.0]), 2, seed_permutation=[1, 0])
    assert a.upsilon.shape == (2, 3)
    assert np.all(a.upsilon.sum(axis=0) == 1)


def test_oracle_equality_randomized():
    rng = np.random.default_rng(0)
    for _ in range(300):
        tau = int(rng.integers(1, 17))
        u = int(rng.integers(1, 80))
        w = rng.lognormal(0.0, 2.0, size=u)
        perm = rng.permutation(tau)
        a = assign_pilots_heap(w, tau, seed_permutation=perm)
        b = assign_pilots_naive(w, tau, seed_permutation=perm)
        assert np.array_equal(a.pilot_of, b.pilot_of)


def test_random_assignment_single_pilot_and_determinism():
    a = assign_pilots_random(5, 1, np.random.default_rng(0))
    assert np.all(a.pilot_of == 0)
    b1 = assign_pilots_random(20, 4, np.random.default_rng(123))
    b2 = assign_pilots_random(20, 4, np.random.default_rng(123))
    assert np.array_equal(b1.pilot_of, b2.pilot_of)


def test_random_assignment_uniform_frequencies():
    tau, n = 4, 10_000
    a = assign_pilots_random(n, tau, np.random.default_rng(7))
    counts = np.bincount(a.pilot_of, minlength=tau)
    p = 1.0 / tau
    bound = 3.0 * np.sqrt(p * (1 - p) * n)
    assert np.all(np.abs(counts - n * p) <= bound)


def test_assignment_cost_examples():
    w = np.array([5.0, 3.0, 4.0])
    distinct = assign_pilots_heap(w, 3, seed_permutation=[0, 1, 2])
    assert assignment_cost(distinct, w) == 5.0
    from fdcf.pilots import PilotAssignment

    all_one = PilotAssignment.from_pilot_of(np.zeros(3, dtype=int), 1, beta_tilde=w)
    assert assignment_cost(all_one, w) == 12.0
    grouped = PilotAssignment.from_pilot_of(np.array([0, 1, 1]), 2, beta_tilde=w)
    assert assignment_cost(grouped, w) == 7.0


def test_assignment_cost_incomplete_errors():
    from fdcf.pilots import PilotAssignment

    a = PilotAssignment(upsilon=np.zeros((2, 3), np.int8), pilot_of=np.array([0, -1, 1]),
                        loads=None)
    with pytest.raises(ValueError):
        assignment_cost(a, [1.0, 1.0, 1.0])


def test_brute_force_examples():
    cost, _ = brute_force_optimal([5.0, 3.0, 4.0], 2)
    assert cost == 7.0
    cost, _ = brute_force_optimal([5.0, 3.0, 4.0], 3)
    assert cost == 5.0
    cost, _ = brute_force_optimal(np.ones(6), 3)
    assert cost == 2.0
    with pytest.raises(ValueError):
        brute_force_optimal(np.ones(30), 4)


def test_lpt_bound_on_adversarial_and_random_instances():
    rng = np.random.default_rng(5)
    instances = [(np.array([4.0, 4.0, 6.0]), 2)]
    for _ in range(60):
        tau = int(rng.integers(2, 4))
        u = int(rng.integers(tau + 1, 11))
        instances.append((rng.uniform(0.1, 10.0, size=u), tau))
    for w, tau in instances:
        a = assign_pilots_heap(w, tau, seed_permutation=np.arange(tau))
        opt, _ = brute_force_optimal(w, tau)
        assert assignment_cost(a, w) <= (4.0 / 3.0 - 1.0 / (3.0 * tau)) * opt + 1e-12


def test_heap_beats_random_usually():
    rng = np.random.default_rng(11)
    wins = 0
    trials = 1000
    for _ in range(trials):
        tau = int(rng.integers(2, 17))
        w = rng.lognormal(0.0, 2.0, size=2 * tau)
        heap = assign_pilots_heap(w, tau, rng=rng)
        rand = assign_pilots_random(2 * tau, tau, rng)
        if assignment_cost(heap, w) <= assignment_cost(rand, w):
            wins += 1
    assert wins >= 0.95 * trials


def test_sift_count_scales_quasilinearly():
    rng = np.random.default_rng(3)
    for u in (128, 512, 2048):
        tau = u // 4
        stats = {}
        assign_pilots_heap(rng.uniform(0.5, 2.0, size=u), tau, rng=rng, stats=stats)
        assert stats["sift_ops"] <= 8.0 * u * np.log2(tau * u)


def _scenario(cfg, seed):
    rng = np.random.default_rng(seed)
    topo = sample_topology(cfg, rng)
    return large_scale(topo, cfg, rng), rng


def test_fd_collision_free_when_ue_counts_match_pilots():
    cfg = SystemConfig(num_aps=6, num_dl=4, num_ul=4, pilot_len=4, radius_m=500.0)
    ls, rng = _scenario(cfg, 0)
    a_ul, a_dl = heap_fd_strategy(ls, cfg, rng)
    assert len(set(a_ul.pilot_of.tolist())) == 4
    assert len(set(a_dl.pilot_of.tolist())) == 4
    joint = heap_hd_strategy(ls, cfg, np.random.default_rng(0))
    counts = np.bincount(joint.pilot_of, minlength=4)
    assert counts.max() >= 2  # K+L > tau forces sharing


def test_fd_cost_beats_hd_restriction_on_average():
    cfg = SystemConfig(num_aps=8, num_dl=6, num_ul=6, pilot_len=3, radius_m=500.0)
    fd_costs, hd_costs = [], []
    for seed in range(100):
        ls, rng = _scenario(cfg, seed)
        w_ul = effective_weights(ls, cfg, "ul")
        a_ul, _ = heap_fd_strategy(ls, cfg, rng)
        joint = heap_hd_strategy(ls, cfg, np.random.default_rng(seed))
        fd_costs.append(assignment_cost(a_ul, w_ul))
        # restrict the joint assignment to the UL UEs (first L indices)
        from fdcf.pilots import PilotAssignment

        restricted = PilotAssignment.from_pilot_of(joint.pilot_of[:cfg.num_ul], cfg.pilot_len)
        w_joint = effective_weights(ls, cfg, "both")
        loads = np.bincount(joint.pilot_of, weights=w_joint, minlength=cfg.pilot_len)
        hd_costs.append(loads[restricted.pilot_of].max())
    assert np.mean(fd_costs) <= np.mean(hd_costs)


def test_strategies_deterministic():
    cfg = SystemConfig(num_aps=6, num_dl=5, num_ul=5, pilot_len=2, radius_m=500.0)
    ls, _ = _scenario(cfg, 4)
    a1 = heap_fd_strategy(ls, cfg, np.random.default_rng(9))
    a2 = heap_fd_strategy(ls, cfg, np.random.default_rng(9))
    assert np.array_equal(a1[0].pilot_of, a2[0].pilot_of)
    assert np.array_equal(a1[1].pilot_of, a2[1].pilot_of)
    r1 = rand_fd_strategy(ls, cfg, np.random.default_rng(9))
    r2 = rand_fd_strategy(ls, cfg, np.random.default_rng(9))
    assert np.array_equal(r1[0].pilot_of, r2[0].pilot_of)


def test_assignment_csv(tmp_path):
    w = np.array([5.0, 3.0, 4.0])
    a = assign_pilots_heap(w, 2, seed_permutation=[0, 1])
    path = tmp_path / "assign.csv"
    write_assignment_csv(a, w, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "ue_index,pilot_index,beta_tilde,final_load"
    assert len(lines) == 4
