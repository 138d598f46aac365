import pytest
import torch

from preftune import lora
from preftune.data import collate, encode_example
from preftune.model import BOS_ID, build_model, decode, encode, sequence_logprob


def fresh_adapted_model(rank=4, dropout=0.0, seed=0):
    model = build_model("tiny-byte-lm", init_seed=seed)
    lora.attach_adapters(model, rank=rank, alpha=32.0, dropout=dropout)
    return model


class TestModel:
    def test_same_seed_same_weights(self):
        a = build_model("tiny-byte-lm", init_seed=3)
        b = build_model("tiny-byte-lm", init_seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_unknown_identifier(self):
        with pytest.raises(ValueError):
            build_model("llama-405b")

    def test_byte_round_trip(self):
        text = "def f():\n    return 1\n"
        assert decode(encode(text)) == text

    def test_context_limit_enforced(self):
        model = build_model("tiny-byte-lm")
        too_long = torch.zeros(1, model.preset.max_len + 1, dtype=torch.long)
        with pytest.raises(ValueError):
            model(too_long)


class TestAdapters:
    def test_fresh_adapter_is_exact_noop(self):
        model = fresh_adapted_model()
        model.eval()
        tokens = torch.randint(0, 257, (2, 20))
        lora.set_adapters_enabled(model, True)
        with_adapter = model(tokens)
        lora.set_adapters_enabled(model, False)
        without = model(tokens)
        assert torch.equal(with_adapter, without)

    def test_only_adapter_parameters_trainable(self):
        model = fresh_adapted_model()
        trainable = [n for n, p in model.named_parameters() if p.requires_grad]
        assert trainable
        assert all("lora_a" in n or "lora_b" in n for n in trainable)

    def test_nonzero_b_changes_outputs(self):
        model = fresh_adapted_model()
        model.eval()
        with torch.no_grad():
            for module in lora.adapter_modules(model):
                module.lora_b.fill_(0.05)
        tokens = torch.randint(0, 257, (1, 10))
        lora.set_adapters_enabled(model, True)
        on = model(tokens)
        lora.set_adapters_enabled(model, False)
        off = model(tokens)
        assert not torch.equal(on, off)

    def test_save_load_round_trip(self, tmp_path):
        model = fresh_adapted_model()
        with torch.no_grad():
            for module in lora.adapter_modules(model):
                module.lora_b.normal_(std=0.1)
        lora.save_adapter(model, tmp_path / "adapter", {"note": "test"})

        clone = fresh_adapted_model()
        lora.load_adapter(clone, tmp_path / "adapter")
        model.eval()
        clone.eval()
        tokens = torch.randint(0, 257, (2, 15))
        assert torch.equal(model(tokens), clone(tokens))


class TestData:
    def test_encode_example_layout(self):
        ids, mask = encode_example("ab", "cd", max_seq_len=64)
        assert ids[0] == BOS_ID
        assert len(ids) == len(mask) == 5
        assert mask == [0, 0, 0, 1, 1]

    def test_prompt_truncated_from_left(self):
        ids, mask = encode_example("x" * 100, "yy", max_seq_len=16)
        assert len(ids) == 16
        assert sum(mask) == 2
        assert ids[-2:] == encode("yy")

    def test_completion_kept_whole_when_possible(self):
        ids, mask = encode_example("p" * 300, "c" * 10, max_seq_len=32)
        assert sum(mask) == 10

    def test_collate_pads_right(self):
        tokens, mask = collate([([BOS_ID, 1, 2], [0, 1, 1]), ([BOS_ID, 5], [0, 1])])
        assert tokens.shape == (2, 3)
        assert tokens[1, 2] == 0
        assert mask[1].tolist() == [0, 1, 0]


class TestSequenceLogprob:
    def test_masked_sum_matches_manual(self):
        model = fresh_adapted_model()
        model.eval()
        ids, mask = encode_example("hi", "yo", max_seq_len=32)
        tokens, mask_t = collate([(ids, mask)])
        with torch.no_grad():
            lp = sequence_logprob(model, tokens, mask_t)
            logits = model(tokens[:, :-1])
            logprobs = torch.log_softmax(logits.float(), dim=-1)
            manual = 0.0
            for pos in range(1, tokens.shape[1]):
                if mask_t[0, pos]:
                    manual += float(logprobs[0, pos - 1, tokens[0, pos]])
        assert float(lp) == pytest.approx(manual, rel=1e-6)

    def test_logprob_nonpositive(self):
        model = fresh_adapted_model()
        model.eval()
        ids, mask = encode_example("abc", "defg", max_seq_len=32)
        tokens, mask_t = collate([(ids, mask)])
        with torch.no_grad():
            lp = sequence_logprob(model, tokens, mask_t)
        assert float(lp) <= 0.0
