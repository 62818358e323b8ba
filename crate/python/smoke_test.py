"""Quick end-to-end check of the pytmx bindings on a small channel."""

import pytmx


def main():
    t, samples = pytmx.generate(w=3, s=0.3, m=3000, sigma=0.02, seed=7)
    shifted = samples.shift()
    print(t, shifted)

    traj = pytmx.decimate(shifted)
    step = traj.selected_step("BIC")
    model = traj.selected_model("BIC")
    q = pytmx.q_error(t.t, model.transmission())
    theta = model.theta()
    print(f"BIC step {step} of {len(traj)}, T-active {model.t_active} (true {t.nnz})")
    print(f"Q = {q:.4f}, theta = {theta:.2e} (theory {2 * 0.02**2:.2e})")
    assert traj.l_max >= traj.l_min
    assert q < 0.3
    assert abs(theta / (2 * 0.02**2) - 1) < 0.2

    inverse = pytmx.decimate(shifted, inverse=True).selected_model("BIC")
    diag, off = pytmx.pseudo_unity(inverse.transmission(), model.transmission())
    print(f"pseudo-unity diagonal {diag:.3f}, off-diagonal {off:.3f}")
    assert diag > 5 * off

    grad = model.gradient(shifted)
    assert len(grad) > 0

    try:
        pytmx.decimate(shifted, variant="nonsense")
    except ValueError as e:
        print(f"rejected bad variant: {e}")
    else:
        raise AssertionError("bad variant accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
