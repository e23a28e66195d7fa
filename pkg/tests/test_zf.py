import numpy as np
import pytest

from fdcf.config import SystemConfig
from fdcf.estimation import EstimateSet, estimate_fd, perfect_estimates
from fdcf.harness import _assignments, trial_rng
from fdcf.scenario import ChannelSet, large_scale, sample_channels, sample_topology
from fdcf.zf import (
    ZfConditioningError,
    block_norms,
    compute_sinr_coefficients,
    dl_sinr_general,
    dl_sinr_zf,
    mrt_mrc_beams,
    per_ap_power,
    per_ap_powers,
    ul_sinr_general,
    ul_sinr_zf,
    zf_operators,
)


def make_es(h_dl, h_ul, g_cci=None, eps_dl=None, eps_ul=None, eps_cci=None):
    k, n = h_dl.shape
    l = h_ul.shape[1]
    m = None
    return EstimateSet(
        h_dl_hat=np.asarray(h_dl, complex),
        h_ul_hat=np.asarray(h_ul, complex),
        g_cci_hat=np.zeros((k, l), complex) if g_cci is None else np.asarray(g_cci, complex),
        eps_dl=eps_dl, eps_ul=eps_ul, eps_cci=np.zeros((k, l)) if eps_cci is None else eps_cci,
    )


def cfg_for(m, n, k, l, **kw):
    base = dict(num_aps=m, antennas_per_ap=n, num_dl=k, num_ul=l, pilot_len=1,
                coherence_symbols=200)
    base.update(kw)
    return SystemConfig(**base)


def test_pinv_orthonormal_rows():
    cfg = cfg_for(2, 2, 2, 2)
    h_dl = np.hstack([np.eye(2), np.zeros((2, 2))])
    es = make_es(h_dl, h_dl.conj().T, eps_dl=np.zeros((2, 2)), eps_ul=np.zeros((2, 2)))
    zf = zf_operators(es, cfg)
    assert np.allclose(zf.h_zf, h_dl.conj().T)
    assert np.allclose(zf.a_zf @ es.h_ul_hat, np.eye(2), atol=1e-12)


def test_pinv_residual_well_conditioned():
    rng = np.random.default_rng(0)
    cfg = cfg_for(8, 2, 10, 10)
    h_dl = rng.standard_normal((10, 16)) + 1j * rng.standard_normal((10, 16))
    h_ul = rng.standard_normal((16, 10)) + 1j * rng.standard_normal((16, 10))
    es = make_es(h_dl, h_ul, eps_dl=np.zeros((10, 8)), eps_ul=np.zeros((8, 10)))
    zf = zf_operators(es, cfg)
    assert np.linalg.norm(h_dl @ zf.h_zf - np.eye(10)) < 1e-9
    assert np.linalg.norm(zf.a_zf @ h_ul - np.eye(10)) < 1e-9


def test_pinv_duplicated_row_raises_with_condition_number():
    rng = np.random.default_rng(1)
    cfg = cfg_for(3, 2, 3, 1)
    row = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    h_dl = np.stack([row, 2.0 * row, rng.standard_normal(6) + 0j])
    es = make_es(h_dl, np.ones((6, 1)), eps_dl=np.zeros((3, 3)), eps_ul=np.zeros((3, 1)))
    with pytest.raises(ZfConditioningError) as err:
        zf_operators(es, cfg)
    assert err.value.cond > 1e10


def test_pinv_survives_wide_row_norm_spread():
    # link-gain spreads put row norms orders of magnitude apart; equilibration
    # keeps this from looking like rank deficiency (residual grows as
    # eps * spread, so ~1e5 amplitude spread still meets the 1e-9 budget)
    rng = np.random.default_rng(2)
    cfg = cfg_for(8, 2, 4, 4)
    scales = np.array([1e-3, 1e-5, 1e-7, 1e-8])
    h_dl = (rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))) * scales[:, None]
    h_ul = (rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))) * scales[None, :]
    es = make_es(h_dl, h_ul, eps_dl=np.zeros((4, 8)), eps_ul=np.zeros((8, 4)))
    zf = zf_operators(es, cfg)
    assert np.linalg.norm(h_dl @ zf.h_zf - np.eye(4)) < 1e-9
    assert np.linalg.norm(zf.a_zf @ h_ul - np.eye(4)) < 1e-9


def test_per_ap_power_linearity_and_mask_completeness():
    rng = np.random.default_rng(3)
    cfg = cfg_for(4, 2, 3, 3)
    h_dl = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
    es = make_es(h_dl, h_dl.conj().T, eps_dl=np.zeros((3, 4)), eps_ul=np.zeros((4, 3)))
    zf = zf_operators(es, cfg)
    w1, w2 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    for m in range(4):
        lhs = per_ap_power(2.0 * w1 + 3.0 * w2, zf, m)
        rhs = 2.0 * per_ap_power(w1, zf, m) + 3.0 * per_ap_power(w2, zf, m)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
    assert per_ap_power(np.zeros(3), zf, 0) == 0.0
    # sum over APs equals the total trace because the masks partition antennas
    total = sum(per_ap_power(w1, zf, m) for m in range(4))
    trace = np.einsum("k,nk->", w1, np.abs(zf.h_zf) ** 2)
    assert abs(total - trace) < 1e-12 * trace
    # single AP: the mask is the identity
    cfg1 = cfg_for(1, 8, 3, 3)
    zf1 = zf_operators(make_es(h_dl, h_dl.conj().T, eps_dl=np.zeros((3, 1)),
                               eps_ul=np.zeros((1, 3))), cfg1)
    assert abs(per_ap_power(w1, zf1, 0)
               - np.einsum("k,nk->", w1, np.abs(zf1.h_zf) ** 2)) < 1e-15


def test_dl_sinr_zf_no_error_no_ul_reduces_to_snr():
    rng = np.random.default_rng(4)
    cfg = cfg_for(3, 2, 2, 2)
    h_dl = rng.standard_normal((2, 6)) + 1j * rng.standard_normal((2, 6))
    es = make_es(h_dl, h_dl.conj().T, eps_dl=np.zeros((2, 3)), eps_ul=np.zeros((3, 2)))
    zf = zf_operators(es, cfg)
    omega = np.array([0.5, 0.2])
    gamma = dl_sinr_zf(omega, np.zeros(2), es, zf, cfg)
    assert np.allclose(gamma, omega / cfg.noise_power_w, rtol=1e-9)
    assert np.allclose(dl_sinr_zf(np.zeros(2), np.zeros(2), es, zf, cfg), 0.0)


def test_hand_computed_two_ap_instance():
    # M=2 single-antenna APs, one DL and one UL UE: every quantity is scalar
    cfg = cfg_for(2, 1, 1, 1, noise_power_w=0.3)
    h_dl = np.array([[1.0 + 1j, 2.0 - 1j]])
    h_ul = np.array([[0.5 - 0.5j], [1.5 + 0.0j]])
    g_aa = np.array([[0.1 + 0.0j, 0.3 - 0.1j], [0.2 + 0.2j, 0.05 + 0.0j]])
    eps_dl = np.array([[0.04, 0.02]])
    eps_ul = np.array([[0.03], [0.05]])
    eps_cci = np.array([[0.01]])
    ghat = np.array([[0.6 + 0.3j]])
    es = make_es(h_dl, h_ul, g_cci=ghat, eps_dl=eps_dl, eps_ul=eps_ul, eps_cci=eps_cci)
    ch = ChannelSet(h_dl=h_dl, h_ul=h_ul, g_cci=ghat, g_aa=g_aa)
    zf = zf_operators(es, cfg)
    omega, p = np.array([0.7]), np.array([0.4])

    # independent scalar computation
    h_zf = h_dl.conj().T[:, 0] / np.linalg.norm(h_dl) ** 2
    err_d = omega[0] * (eps_dl[0, 0] * abs(h_zf[0]) ** 2 + eps_dl[0, 1] * abs(h_zf[1]) ** 2)
    cci = p[0] * (abs(ghat[0, 0]) ** 2 + eps_cci[0, 0])
    gamma_d_hand = omega[0] * abs(h_dl[0] @ h_zf) ** 2 / (err_d + cci + 0.3)
    assert np.allclose(dl_sinr_zf(omega, p, es, zf, cfg), gamma_d_hand, rtol=1e-12)

    a = h_ul.conj().T[0] / np.linalg.norm(h_ul) ** 2
    err_u = p[0] * (eps_ul[0, 0] * abs(a[0]) ** 2 + eps_ul[1, 0] * abs(a[1]) ** 2)
    leak = omega[0] * abs(a @ g_aa @ h_zf) ** 2
    noise = 0.3 * np.linalg.norm(a) ** 2
    gamma_u_hand = p[0] * abs(a @ h_ul[:, 0]) ** 2 / (err_u + leak + noise)
    assert np.allclose(ul_sinr_zf(omega, p, es, zf, ch, cfg), gamma_u_hand, rtol=1e-12)


def test_ul_leakage_linear_in_omega():
    cfg = cfg_for(1, 4, 2, 2, rsi=0.5)
    rng = np.random.default_rng(5)
    h_dl = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    h_ul = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    es = make_es(h_dl, h_ul, eps_dl=np.zeros((2, 1)), eps_ul=np.zeros((1, 2)))
    g_aa = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    ch = ChannelSet(h_dl=h_dl, h_ul=h_ul, g_cci=np.zeros((2, 2), complex), g_aa=g_aa)
    zf = zf_operators(es, cfg)
    co = compute_sinr_coefficients(zf, es, ch, cfg)
    p = np.array([0.1, 0.1])
    omega = np.array([0.3, 0.6])
    den1 = co.ul_gain * p / ul_sinr_zf(omega, p, es, zf, ch, cfg)
    den2 = co.ul_gain * p / ul_sinr_zf(2.0 * omega, p, es, zf, ch, cfg)
    base = co.ul_err @ p + cfg.noise_power_w * co.ul_norm2
    assert np.allclose(den2 - base, 2.0 * (den1 - base), rtol=1e-9)
    assert np.allclose(ul_sinr_zf(omega, np.zeros(2), es, zf, ch, cfg), 0.0)


def _random_system(seed, m=6, n=2, k=4, l=4):
    cfg = cfg_for(m, n, k, l, pilot_len=3, radius_m=500.0)
    rng = trial_rng(cfg, seed)
    topo = sample_topology(cfg, rng)
    ls = large_scale(topo, cfg, rng)
    ch = sample_channels(ls, cfg, rng)
    a_ul, a_dl = _assignments(ls, cfg, rng, "heap_fd")
    es = estimate_fd(ch, ls, a_ul, a_dl, cfg, rng)
    return cfg, ch, es


def test_general_matches_zf_reduced_under_full_association():
    for seed in range(5):
        cfg, ch, es = _random_system(seed)
        zf = zf_operators(es, cfg)
        rng = np.random.default_rng(seed)
        omega = rng.uniform(0.1, 1.0, cfg.num_dl) * 1e-10
        p = rng.uniform(0.1, 1.0, cfg.num_ul) * cfg.ul_power_max_w
        w = zf.h_zf * np.sqrt(omega)[None, :]
        alpha = np.ones((cfg.num_dl, cfg.num_aps), dtype=np.int8)
        gd_gen = dl_sinr_general(w, p, alpha, es, cfg)
        gd_zf = dl_sinr_zf(omega, p, es, zf, cfg)
        assert np.all(np.abs(gd_gen / gd_zf - 1.0) < 1e-6)
        gu_gen = ul_sinr_general(w, p, alpha, zf.a_zf, es, ch, cfg)
        gu_zf = ul_sinr_zf(omega, p, es, zf, ch, cfg)
        assert np.all(np.abs(gu_gen / gu_zf - 1.0) < 1e-6)
        # the multi-user term the reduced form drops is numerically nil
        cross = es.h_dl_hat @ w
        mui = (np.abs(cross) ** 2).sum(axis=1) - np.abs(np.diag(cross)) ** 2
        assert np.all(mui / np.abs(np.diag(cross)) ** 2 < 1e-18)


def test_general_zero_association_zeroes_dl():
    cfg, ch, es = _random_system(11)
    zf = zf_operators(es, cfg)
    w = zf.h_zf * 1e-6
    alpha = np.zeros((cfg.num_dl, cfg.num_aps), dtype=np.int8)
    assert np.allclose(dl_sinr_general(w, np.full(cfg.num_ul, 0.1), alpha, es, cfg), 0.0)


def test_sinrs_nonnegative_and_zero_iff_no_signal():
    cfg, ch, es = _random_system(12)
    zf = zf_operators(es, cfg)
    omega = np.array([0.0, 1e-11, 0.0, 2e-11])
    p = np.array([0.1, 0.0, 0.05, 0.0])
    gd = dl_sinr_zf(omega, p, es, zf, cfg)
    gu = ul_sinr_zf(omega, p, es, zf, ch, cfg)
    assert np.all(gd >= 0) and np.all(gu >= 0)
    assert np.all((gd == 0) == (omega == 0))
    assert np.all((gu == 0) == (p == 0))


def test_masked_operators_zero_pruned_blocks_and_keep_gain():
    cfg, ch, es = _random_system(13)
    rng = np.random.default_rng(13)
    alpha = (rng.random((cfg.num_dl, cfg.num_aps)) < 0.6).astype(np.int8)
    alpha[:, 0] = 1  # everyone keeps at least one AP
    alpha[2] = 1
    zf_m = zf_operators(es, cfg, alpha=alpha)
    n = cfg.antennas_per_ap
    for k in range(cfg.num_dl):
        for m in range(cfg.num_aps):
            blk = zf_m.h_zf[m * n:(m + 1) * n, k]
            if alpha[k, m] == 0:
                assert np.all(blk == 0.0)
    assert np.allclose(zf_m.dl_gain, 1.0, atol=1e-9)
    # all-ones mask reduces to the plain operators
    zf_ones = zf_operators(es, cfg, alpha=np.ones_like(alpha))
    zf_plain = zf_operators(es, cfg)
    assert np.allclose(zf_ones.h_zf, zf_plain.h_zf)


def test_mrt_mrc_power_and_rank1_direction():
    cfg, ch, es = _random_system(14)
    beams = mrt_mrc_beams(es, cfg)
    powers = block_norms(beams.w, cfg).sum(axis=1)
    assert np.allclose(powers, cfg.ap_power_max_w, rtol=1e-9)
    assert np.allclose(beams.p, cfg.ul_power_max_w)
    # one AP, one UE: matched filter is proportional to the ZF direction
    cfg1 = cfg_for(1, 4, 1, 1)
    rng = np.random.default_rng(15)
    h = rng.standard_normal((1, 4)) + 1j * rng.standard_normal((1, 4))
    es1 = make_es(h, h.conj().T, eps_dl=np.zeros((1, 1)), eps_ul=np.zeros((1, 1)))
    zf1 = zf_operators(es1, cfg1)
    b1 = mrt_mrc_beams(es1, cfg1)
    cosine = abs(np.vdot(b1.w[:, 0], zf1.h_zf[:, 0])) / (
        np.linalg.norm(b1.w[:, 0]) * np.linalg.norm(zf1.h_zf[:, 0]))
    assert abs(cosine - 1.0) < 1e-12


def test_perfect_csi_true_channel_evaluation_matches_robust():
    # with genie estimates the robust and true-channel evaluations coincide
    from fdcf.scenario import LargeScale

    cfg, ch, _ = _random_system(16)
    ls_dummy = LargeScale(beta_dl=np.ones((cfg.num_dl, cfg.num_aps)),
                          beta_ul=np.ones((cfg.num_aps, cfg.num_ul)),
                          beta_cci=np.ones((cfg.num_dl, cfg.num_ul)),
                          beta_aa=np.ones((cfg.num_aps, cfg.num_aps)))
    genie = perfect_estimates(ch, ls_dummy)
    zf = zf_operators(genie, cfg)
    omega = np.full(cfg.num_dl, 1e-11)
    p = np.full(cfg.num_ul, 0.05)
    w = zf.h_zf * np.sqrt(omega)[None, :]
    alpha = np.ones((cfg.num_dl, cfg.num_aps), dtype=np.int8)
    gd_rob = dl_sinr_general(w, p, alpha, genie, cfg)
    gd_true = dl_sinr_general(w, p, alpha, genie, cfg, ch=ch, use_true_channels=True)
    assert np.allclose(gd_rob, gd_true, rtol=1e-9)
