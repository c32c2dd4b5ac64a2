"""Shape contracts, inference determinism, and differentiability of the nets."""

import numpy as np
import pytest
import torch

from csissl.models import (
    Branch,
    ContextModel,
    LinearClassifier,
    ModelDims,
    PredictionHeads,
    Projector,
    WindowEncoder,
    build_pretrain_model,
    init_parameters,
    trainable_parameters,
)

DIMS = ModelDims(links=3, subcarriers=30, frames_per_window=10, embed_dim=32, context_dim=32, n_future=4)
PAPER_DIMS = ModelDims(links=3, subcarriers=30, frames_per_window=10)


def fresh(module_cls, dims, seed=0):
    m = module_cls(dims)
    init_parameters(m, torch.Generator().manual_seed(seed))
    return m


class TestEncoder:
    def test_output_shape_at_reference_dims(self):
        enc = fresh(WindowEncoder, PAPER_DIMS)
        x = torch.randn(128, 3, 30, 10)
        assert enc(x).shape == (128, 128)

    def test_batch_of_one_matches_batch_row_in_eval(self):
        enc = fresh(WindowEncoder, DIMS).eval()
        x = torch.randn(16, 3, 30, 10, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            full = enc(x)
            single = enc(x[5:6])
        assert torch.allclose(single[0], full[5], atol=1e-5)

    def test_zero_input_finite(self):
        enc = fresh(WindowEncoder, DIMS).eval()
        with torch.no_grad():
            out = enc(torch.zeros(4, 3, 30, 10))
        assert torch.isfinite(out).all()

    def test_shape_mismatch_rejected(self):
        enc = fresh(WindowEncoder, DIMS)
        with pytest.raises(ValueError, match="expected"):
            enc(torch.randn(4, 3, 30, 12))

    def test_inference_deterministic(self):
        enc = fresh(WindowEncoder, DIMS).eval()
        x = torch.randn(8, 3, 30, 10, generator=torch.Generator().manual_seed(2))
        with torch.no_grad():
            a, b = enc(x), enc(x)
        assert torch.equal(a, b)

    def test_dims_reject_tiny_windows(self):
        with pytest.raises(ValueError, match="pooling"):
            ModelDims(links=3, subcarriers=30, frames_per_window=3)


class TestContext:
    def test_single_step_matches_hand_computed_gru(self):
        # One step from the zero state, gate arithmetic done in numpy:
        # r = sig(Wir x + bir + bhr), u = sig(Wiz x + biz + bhz),
        # n = tanh(Win x + bin + r * bhn), h' = (1 - u) * n.
        ctx = fresh(ContextModel, DIMS, seed=3).double().eval()
        d = DIMS.embed_dim
        x = torch.randn(5, 1, d, generator=torch.Generator().manual_seed(4)).double()
        with torch.no_grad():
            got = ctx(x).numpy()
        w_ih = ctx.gru.weight_ih_l0.detach().numpy()
        w_hh = ctx.gru.weight_hh_l0.detach().numpy()
        b_ih = ctx.gru.bias_ih_l0.detach().numpy()
        b_hh = ctx.gru.bias_hh_l0.detach().numpy()
        h = DIMS.context_dim
        xv = x[:, 0, :].numpy()

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        pre_i = xv @ w_ih.T + b_ih
        r = sig(pre_i[:, :h] + b_hh[:h])
        u = sig(pre_i[:, h : 2 * h] + b_hh[h : 2 * h])
        n = np.tanh(pre_i[:, 2 * h :] + r * b_hh[2 * h :])
        expected = (1.0 - u) * n
        assert w_hh.shape == (3 * h, h)
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_order_sensitivity(self):
        ctx = fresh(ContextModel, DIMS, seed=5).eval()
        z = torch.randn(3, 6, DIMS.embed_dim, generator=torch.Generator().manual_seed(6))
        with torch.no_grad():
            c = ctx(z)
            c_perm = ctx(z[:, torch.tensor([5, 2, 0, 1, 4, 3])])
        assert not torch.allclose(c, c_perm, atol=1e-4)

    def test_empty_sequence_rejected(self):
        ctx = fresh(ContextModel, DIMS)
        with pytest.raises(ValueError):
            ctx(torch.zeros(2, 0, DIMS.embed_dim))

    def test_output_width(self):
        ctx = fresh(ContextModel, PAPER_DIMS)
        z = torch.randn(4, 3, 128)
        assert ctx(z).shape == (4, 128)


class TestPredictionHeads:
    def test_distinct_heads_give_distinct_outputs(self):
        heads = fresh(PredictionHeads, DIMS, seed=7)
        c = torch.randn(6, DIMS.context_dim, generator=torch.Generator().manual_seed(8))
        outs = [heads(c, k) for k in range(1, DIMS.n_future + 1)]
        for i in range(len(outs)):
            for j in range(i + 1, len(outs)):
                assert not torch.allclose(outs[i], outs[j], atol=1e-4)

    def test_output_dim_matches_embedding(self):
        heads = fresh(PredictionHeads, DIMS)
        assert heads(torch.randn(3, DIMS.context_dim), 2).shape == (3, DIMS.embed_dim)

    def test_zero_context_zero_bias_gives_zero(self):
        heads = fresh(PredictionHeads, DIMS)
        for lin in heads.heads:
            lin.bias.data.zero_()
        out = heads(torch.zeros(2, DIMS.context_dim), 1)
        assert torch.equal(out, torch.zeros(2, DIMS.embed_dim))

    def test_offset_out_of_range(self):
        heads = fresh(PredictionHeads, DIMS)
        c = torch.zeros(1, DIMS.context_dim)
        for bad in (0, DIMS.n_future + 1, -1):
            with pytest.raises(ValueError, match="offset"):
                heads(c, bad)


class TestProjector:
    def test_zero_input_zero_biases_gives_zero(self):
        proj = fresh(Projector, DIMS)
        for m in proj.layers:
            if isinstance(m, torch.nn.Linear):
                m.bias.data.zero_()
        out = proj(torch.zeros(3, DIMS.embed_dim))
        assert torch.equal(out, torch.zeros(3, DIMS.projector_dim))

    def test_finite_and_shaped(self):
        proj = fresh(Projector, PAPER_DIMS)
        out = proj(torch.randn(5, 128))
        assert out.shape == (5, 128) and torch.isfinite(out).all()


class TestClassifier:
    def test_reference_widths(self):
        clf = LinearClassifier(input_dim=2560, n_classes=276)
        lin1, _, lin2 = clf.net
        assert lin1.in_features == 2560 and lin1.out_features == 1280
        assert lin2.out_features == 276

    def test_seven_class_head(self):
        clf = LinearClassifier(input_dim=640, n_classes=7)
        assert clf(torch.randn(3, 640)).shape == (3, 7)

    def test_width_mismatch_rejected(self):
        clf = LinearClassifier(input_dim=64, n_classes=4)
        with pytest.raises(ValueError, match="expected"):
            clf(torch.randn(2, 65))


class TestBranchesAndInit:
    def test_equal_param_counts_distinct_storage(self):
        model = build_pretrain_model(DIMS, seed=0)
        count = lambda m: sum(p.numel() for p in m.parameters())
        assert count(model.branch_a) == count(model.branch_b)
        before = model.branch_b.encoder.head.weight.detach().clone()
        with torch.no_grad():
            model.branch_a.encoder.head.weight.add_(1.0)
        assert torch.equal(model.branch_b.encoder.head.weight, before)

    def test_seed_reproducible_init(self):
        a = build_pretrain_model(DIMS, seed=42).state_dict()
        b = build_pretrain_model(DIMS, seed=42).state_dict()
        c = build_pretrain_model(DIMS, seed=43).state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)
        assert any(not torch.equal(a[k], c[k]) for k in a)

    def test_trainable_parameter_selection(self):
        model = build_pretrain_model(DIMS, seed=0)
        capc = trainable_parameters(model, "capc")
        bt = trainable_parameters(model, "bt-only")
        cpc = trainable_parameters(model, "cpc-only")
        head_ids = {id(p) for p in model.heads.parameters()}
        proj_ids = {id(p) for p in model.branch_a.projector.parameters()}
        b_ids = {id(p) for p in model.branch_b.parameters()}
        assert head_ids <= {id(p) for p in capc}
        assert not proj_ids & {id(p) for p in capc}
        assert proj_ids <= {id(p) for p in bt}
        assert not head_ids & {id(p) for p in bt}
        assert not b_ids & {id(p) for p in cpc}
        with pytest.raises(ValueError, match="method"):
            trainable_parameters(model, "simclr")


class TestComposedGradient:
    def test_finite_difference_through_encode_context_predict(self):
        # Scalar objective through the full forward path, float64.
        dims = ModelDims(
            links=2, subcarriers=8, frames_per_window=8, embed_dim=8, context_dim=8, n_future=2
        )
        branch = Branch(dims).double()
        heads = PredictionHeads(dims).double()
        init_parameters(branch, torch.Generator().manual_seed(9))
        init_parameters(heads, torch.Generator().manual_seed(10))
        branch.eval()  # freeze BN batch statistics out of the picture
        x = torch.randn(3, 5, 2, 8, 8, generator=torch.Generator().manual_seed(11)).double()
        target = torch.randn(3, 8, generator=torch.Generator().manual_seed(12)).double()

        def objective():
            z = branch.encoder(x.reshape(-1, 2, 8, 8)).reshape(3, 5, 8)
            c = branch.context(z[:, :4])
            pred = heads(c, 1)
            return ((pred - target) ** 2).sum()

        loss = objective()
        params = [p for p in list(branch.parameters()) + list(heads.parameters())]
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        checked = 0
        for p, g in zip(params, grads):
            if g is None:
                continue
            flat = p.data.view(-1)
            for idx in (0, flat.numel() // 2):
                eps = 1e-6
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = objective().item()
                flat[idx] = orig - eps
                down = objective().item()
                flat[idx] = orig
                fd = (up - down) / (2 * eps)
                an = g.view(-1)[idx].item()
                denom = max(abs(fd), abs(an), 1e-8)
                assert abs(fd - an) / denom < 1e-3, (fd, an)
                checked += 1
        assert checked >= 10
