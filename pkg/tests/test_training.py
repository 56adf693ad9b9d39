import json

import numpy as np
import pytest

from strengthnet.audio import MelSpectrogram
from strengthnet.corpus import CorpusManifest, ManifestRecord
from strengthnet.errors import ConfigError, MissingFeature, MissingRanker, NonFiniteLoss
from strengthnet.model import StrengthNetConfig, init_params
from strengthnet.ranking import RankingModel
from strengthnet.training import (
    EarlyStopping,
    TrainingConfig,
    collate,
    derive_ground_truth,
    fit,
    fuse_and_split,
    load_config,
    load_features,
    make_batches,
    model_records,
)

EMOS = ("neutral", "happy", "sad", "angry", "surprise")
TINY = StrengthNetConfig(conv_block_filters=(2, 2, 2, 4), bilstm_hidden=4, fc_hidden=4, dropout=0.3)


def _corpus(n=40, dataset="d", seed=0, strength=True):
    rng = np.random.default_rng(seed)
    recs = [ManifestRecord(f"{dataset}{i:03d}", f"{i}.wav", dataset, EMOS[i % 5],
                           float(rng.uniform()) if strength else None) for i in range(n)]
    frames = {r.utterance_id: rng.normal(size=(int(rng.integers(3, 9)), 80)).astype(np.float32) for r in recs}
    return CorpusManifest(recs), frames


class TestEarlyStopping:
    def test_fifty_improving_then_flat(self):
        stopper = EarlyStopping(30)
        stopped_at = None
        for epoch in range(1, 301):
            value = 1.0 / epoch if epoch <= 50 else 1.0
            stopper.update(epoch, value)
            if stopper.should_stop:
                stopped_at = epoch
                break
        assert stopped_at == 80
        assert stopper.best_epoch == 50

    def test_ties_do_not_count_as_improvement(self):
        stopper = EarlyStopping(2)
        assert stopper.update(1, 0.5)
        assert not stopper.update(2, 0.5)
        stopper.update(3, 0.5)
        assert stopper.should_stop and stopper.best_epoch == 1


class TestSplit:
    def test_ratio_per_group(self):
        man, _ = _corpus(100)
        train, val, test = fuse_and_split(man, (8, 1, 1), seed=0)
        assert (len(train), len(val), len(test)) == (80, 10, 10)
        for part, k in ((train, 16), (val, 2), (test, 2)):
            for e in EMOS:
                assert sum(r.emotion == e for r in part) == k

    def test_disjoint_and_complete(self):
        man, _ = _corpus(57)
        parts = fuse_and_split(man, (8, 1, 1), seed=3)
        ids = [r.utterance_id for p in parts for r in p]
        assert sorted(ids) == sorted(r.utterance_id for r in man)

    def test_fusion_does_not_change_membership(self):
        a, _ = _corpus(50, "a", seed=1)
        b, _ = _corpus(50, "b", seed=2)
        alone = fuse_and_split([a], (8, 1, 1), seed=5)
        fused = fuse_and_split([a, b], (8, 1, 1), seed=5)
        for p_alone, p_fused in zip(alone, fused):
            assert [r.utterance_id for r in p_alone] == [r.utterance_id for r in p_fused if r.dataset_id == "a"]

    def test_seed_matters(self):
        man, _ = _corpus(100)
        a = fuse_and_split(man, seed=0)[1]
        b = fuse_and_split(man, seed=1)[1]
        assert [r.utterance_id for r in a] != [r.utterance_id for r in b]


class TestBatching:
    def test_collate_pads_and_masks(self):
        man, frames = _corpus(10)
        recs = model_records(man)[:3]
        batch = collate(recs, frames)
        lengths = [len(frames[r.utterance_id]) for r in recs]
        assert batch.mel.shape == (3, max(lengths), 80)
        np.testing.assert_array_equal(batch.mask.sum(axis=1), lengths)
        for i, n in enumerate(lengths):
            assert np.all(batch.mel[i, n:] == 0)
        assert batch.gt_emotion.sum() == 3

    def test_batches_cover_emotional_records_once(self):
        man, frames = _corpus(97)
        batches = make_batches(man, frames, batch_size=16, seed=0, epoch=1)
        ids = [u for b in batches for u in b.utterance_ids]
        assert sorted(ids) == sorted(r.utterance_id for r in model_records(man))
        assert all(len(b.utterance_ids) == 16 for b in batches[:-1])

    def test_epoch_reshuffles_deterministically(self):
        man, frames = _corpus(60)
        first = [b.utterance_ids for b in make_batches(man, frames, 8, seed=0, epoch=1)]
        again = [b.utterance_ids for b in make_batches(man, frames, 8, seed=0, epoch=1)]
        other = [b.utterance_ids for b in make_batches(man, frames, 8, seed=0, epoch=2)]
        assert first == again and first != other

    def test_missing_features(self):
        man, frames = _corpus(10)
        frames.pop(model_records(man)[0].utterance_id)
        with pytest.raises(MissingFeature):
            make_batches(man, frames)

    def test_load_features_missing(self, tmp_path):
        man, _ = _corpus(5)
        with pytest.raises(MissingFeature):
            load_features(man, tmp_path)


class TestGroundTruth:
    def test_uses_own_ranker_and_neutral_mean(self):
        recs = CorpusManifest([
            ManifestRecord("n", "n.wav", "d", "neutral"),
            ManifestRecord("h", "h.wav", "d", "happy"),
            ManifestRecord("s", "s.wav", "d", "sad"),
        ])
        feats = {"n": np.array([1.0, 1.0]), "h": np.array([1.0, 0.0]), "s": np.array([0.0, 1.0])}
        rankers = {("d", "happy"): RankingModel(np.array([1.0, 0.0]), 0.0, 2.0),
                   ("d", "sad"): RankingModel(np.array([0.0, 1.0]), 0.0, 4.0)}
        out = derive_ground_truth(recs, feats, rankers).by_id()
        assert out["h"].strength == 0.5
        assert out["s"].strength == 0.25
        assert out["n"].strength == pytest.approx(0.375)

    def test_missing_ranker(self):
        recs = [ManifestRecord("a", "a.wav", "d", "angry")]
        with pytest.raises(MissingRanker):
            derive_ground_truth(recs, {"a": np.zeros(2)}, {("d", "happy"): RankingModel(np.ones(2), 0, 1)})


class TestConfigFile:
    def test_every_field_addressable(self, tmp_path):
        (tmp_path / "c.cfg").write_text(
            "# comment\nbatch_size = 8\nlr=0.001\nsplit_ratio=6,2,2\npatience=5\nmax_epochs=3\n"
            "conv_block_filters=4,8,8,16\nblock_strides=1x1;1x1;1x3\nbilstm_hidden=16\ndropout=0.1\n"
        )
        model_cfg, train_cfg = load_config(tmp_path / "c.cfg")
        assert train_cfg.batch_size == 8 and train_cfg.lr == 0.001 and train_cfg.split_ratio == (6, 2, 2)
        assert model_cfg.conv_block_filters == (4, 8, 8, 16) and model_cfg.block_strides == ((1, 1), (1, 1), (1, 3))
        assert model_cfg.dropout == 0.1

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.cfg").write_text("learning_rate=0.1\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.cfg")

    def test_bad_value(self, tmp_path):
        (tmp_path / "c.cfg").write_text("batch_size=many\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.cfg")

    def test_defaults(self):
        cfg = TrainingConfig()
        assert (cfg.batch_size, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon) == (64, 1e-4, 0.9, 0.98, 1e-8)
        assert (cfg.split_ratio, cfg.patience) == ((8, 1, 1), 30)


class TestFit:
    def test_log_records_and_determinism(self, tmp_path):
        man, frames = _corpus(40)
        train, val, _ = fuse_and_split(man, (6, 2, 2), seed=0)
        cfg = TrainingConfig(batch_size=8, lr=1e-3, max_epochs=3, seed=1)
        a = fit(train, val, frames, TINY, cfg, log_path=tmp_path / "a.jsonl")
        b = fit(train, val, frames, TINY, cfg, log_path=tmp_path / "b.jsonl")
        lines = [json.loads(x) for x in (tmp_path / "a.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in lines] == [1, 2, 3]
        assert set(lines[0]) == {"epoch", "l_f_str", "l_u_str", "l_cat", "l_total", "val_mae", "val_acc", "seconds"}
        for ra, rb in zip(a.log, b.log):
            ra, rb = dict(ra), dict(rb)
            ra.pop("seconds"), rb.pop("seconds")
            assert ra == rb
        for k in a.params:
            assert a.params[k].data.tobytes() == b.params[k].data.tobytes()

    def test_returns_best_epoch_parameters(self):
        man, frames = _corpus(40)
        train, val, _ = fuse_and_split(man, (6, 2, 2), seed=0)
        cfg = TrainingConfig(batch_size=8, lr=3e-3, max_epochs=4, seed=0)
        seen = []
        res = fit(train, val, frames, TINY, cfg, on_epoch=seen.append)
        assert res.best_val_mae == min(r["val_mae"] for r in seen)
        assert res.log[res.best_epoch - 1]["val_mae"] == res.best_val_mae

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_reports_batch(self, tmp_path):
        man, frames = _corpus(20)
        train, val, _ = fuse_and_split(man, (6, 2, 2), seed=0)
        params = init_params(TINY, 0)
        params["str.fc2.w"].data[:] = np.float32(3e38)
        params["str.fc1.b"].data[:] = np.float32(3e38)
        with pytest.raises(NonFiniteLoss) as info:
            fit(train, val, frames, TINY, TrainingConfig(batch_size=4, max_epochs=1), params=params,
                dump_dir=tmp_path)
        assert info.value.utterance_ids
        assert info.value.dump_path is not None and info.value.dump_path.exists()

    def test_needs_strengths(self):
        man, frames = _corpus(20, strength=False)
        train, val, _ = fuse_and_split(man, (6, 2, 2), seed=0)
        with pytest.raises(MissingRanker):
            fit(train, val, frames, TINY, TrainingConfig(max_epochs=1))


def test_frames_accept_mel_objects():
    man, frames = _corpus(6)
    specs = {k: MelSpectrogram(v) for k, v in frames.items()}
    batch = collate(model_records(man), specs)
    assert batch.mel.dtype == np.float32
