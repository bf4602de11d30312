"""Smoke test for the normcrit_py extension."""

import math

import normcrit_py as nc


def main():
    assert abs(nc.sobolev_sq() - 32 * math.pi**2 / 3) < 1e-12

    w_mass, c3_pow = nc.profile_constants(3.0)
    assert abs(1 / c3_pow - 2 * math.sqrt(w_mass) / 3) < 1e-3 * (1 / c3_pow)

    ground = nc.solve("ground", 2.5, 0.5, 0.5)
    assert ground["converged"], ground["residual_relative"]
    assert ground["energy"] < 0 < ground["lambda1"]
    assert len(ground["r"]) == len(ground["u"]) == len(ground["v"])

    mp = nc.solve("mp", 2.5, 0.5, 0.5)
    assert mp["converged"] and mp["energy"] > 0

    try:
        nc.solve("ground", 2.5, 0.5, 0.5, beta=1.0)
    except ValueError as e:
        assert "beta" in str(e)
    else:
        raise AssertionError("excluded coupling accepted")

    print(f"ok: m+ = {ground['energy']:.6e}, m- = {mp['energy']:.6e}")


if __name__ == "__main__":
    main()
