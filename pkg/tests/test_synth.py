import numpy as np
import pytest

from pianist_id.alignment import align_pair, build_table
from pianist_id.evaluation import ExperimentConfig
from pianist_id.features import compute_norm, deviations, performer_stream
from pianist_id.synth import (
    PerformerProfile,
    VelocityShift,
    benchmark,
    default_profiles,
    generate_score,
    render_performer,
)

IDENTITY = PerformerProfile()


class TestGenerateScore:
    def test_same_seed_reproduces_identical_score(self):
        assert generate_score(200, seed=4) == generate_score(200, seed=4)

    def test_different_seeds_differ(self):
        assert generate_score(200, seed=4) != generate_score(200, seed=5)

    def test_exact_note_count(self):
        for n in (2, 37, 16980):
            assert len(generate_score(n, seed=1).notes) == n

    def test_invariants_hold_over_many_seeds(self):
        for seed in range(1000):
            score = generate_score(40, seed=seed)  # Performance validates on build
            pitches = [n.pitch for n in score.notes]
            dynamics = [n.dynamic for n in score.notes]
            assert min(pitches) >= 36 and max(pitches) <= 96
            assert min(dynamics) >= 40 and max(dynamics) <= 100

    def test_contains_chords_and_plausible_iois(self):
        score = generate_score(3000, seed=2)
        onsets = np.asarray([n.onset for n in score.notes])
        distinct = np.unique(onsets)
        assert len(distinct) < len(onsets)  # some shared onsets (chords)
        iois = np.diff(distinct)
        assert iois.min() >= 0.1 - 1e-9 and iois.max() <= 1.0 + 1e-9


class TestRenderPerformer:
    def test_identity_profile_returns_the_score(self):
        score = generate_score(300, seed=6)
        rendered = render_performer(score, IDENTITY, "p")
        assert rendered.notes == score.notes

    def test_tempo_scale_stretches_every_ioi(self):
        score = generate_score(200, seed=7)
        profile = PerformerProfile(tempo_scale=1.1)
        rendered = render_performer(score, profile, "p")
        score_onsets = np.unique([n.onset for n in score.notes])
        rendered_onsets = np.unique([n.onset for n in rendered.notes])
        np.testing.assert_allclose(
            np.diff(rendered_onsets), 1.1 * np.diff(score_onsets), rtol=1e-12
        )

    def test_note_order_and_pitches_preserved(self):
        score = generate_score(400, seed=8)
        profile = PerformerProfile(
            tempo_scale=0.9,
            onset_jitter=(0.01, 0.02),
            velocity_shift=VelocityShift(5.0, 3.0),
            articulation_bias=0.01,
            duration_scale=0.8,
            seed=99,
        )
        rendered = render_performer(score, profile, "p")
        assert [n.pitch for n in rendered.notes] == [n.pitch for n in score.notes]
        assert len(rendered.notes) == len(score.notes)

    def test_rendered_performance_aligns_to_score_as_identity(self):
        score = generate_score(500, seed=9)
        profile = default_profiles(3, base_seed=9)[0]
        rendered = render_performer(score, profile, "p")
        al = align_pair(score, rendered)
        assert al.pairs == tuple((i, i) for i in range(len(score.notes)))
        assert al.total_cost == 0.0

    def test_chord_notes_share_one_jitter_draw(self):
        score = generate_score(600, seed=10)
        profile = PerformerProfile(onset_jitter=(0.0, 0.05), seed=3)
        rendered = render_performer(score, profile, "p")
        score_onsets = np.asarray([n.onset for n in score.notes])
        rendered_onsets = np.asarray([n.onset for n in rendered.notes])
        # same-onset groups in the score stay same-onset after rendering
        for onset in np.unique(score_onsets):
            group = rendered_onsets[score_onsets == onset]
            assert np.all(group == group[0])

    def test_dynamics_stay_in_midi_range(self):
        score = generate_score(300, seed=11)
        profile = PerformerProfile(velocity_shift=VelocityShift(80.0, 30.0), seed=1)
        rendered = render_performer(score, profile, "p")
        dynamics = [n.dynamic for n in rendered.notes]
        assert min(dynamics) >= 1 and max(dynamics) <= 127

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            PerformerProfile(tempo_scale=2.5)
        with pytest.raises(ValueError):
            PerformerProfile(onset_jitter=(0.0, -0.1))
        with pytest.raises(ValueError):
            VelocityShift(stddev=-1.0)


class TestDeviationGroundTruth:
    def test_opposite_jitter_means_separate_ot_deviations(self):
        score = generate_score(2000, seed=12)
        early = PerformerProfile(onset_jitter=(-0.02, 0.004), seed=21)
        late = PerformerProfile(onset_jitter=(0.02, 0.004), seed=22)
        perfs = [
            render_performer(score, early, "early"),
            render_performer(score, late, "late"),
        ]
        table, _ = build_table(perfs, reference=score)
        norm = compute_norm(table).stream()
        dev_early = deviations(performer_stream(table, "early"), norm, "OT").values
        dev_late = deviations(performer_stream(table, "late"), norm, "OT").values
        gap = abs(dev_early.mean() - dev_late.mean())
        assert gap > 6 * max(dev_early.std(), dev_late.std())

    def test_empirical_deviation_means_match_profiles(self):
        # tempo and duration neutral so OT/DL deviations isolate jitter/velocity
        score = generate_score(4000, seed=13)
        jitter_means = (-0.02, 0.01)
        velocity_means = (-6.0, 4.0)
        profiles = [
            PerformerProfile(
                onset_jitter=(jitter_means[i], 0.005),
                velocity_shift=VelocityShift(velocity_means[i], 2.0),
                seed=31 + i,
            )
            for i in range(2)
        ]
        perfs = [render_performer(score, p, f"p{i}") for i, p in enumerate(profiles)]
        table, _ = build_table(perfs, reference=score)
        norm = compute_norm(table).stream()
        n_onset_groups = len({n.onset for n in score.notes})
        for i, pid in enumerate(("p0", "p1")):
            stream = performer_stream(table, pid)
            ot = deviations(stream, norm, "OT").values
            expected_ot = np.mean(jitter_means) - jitter_means[i]
            se = ot.std() / np.sqrt(n_onset_groups)  # chord notes share jitter draws
            assert abs(ot.mean() - expected_ot) < 3 * se
            dl = deviations(stream, norm, "DL").values
            expected_dl = np.mean(velocity_means) - velocity_means[i]
            se_dl = dl.std() / np.sqrt(len(dl))
            assert abs(dl.mean() - expected_dl) < 3 * se_dl + 0.5  # velocity rounding


class TestBenchmark:
    def test_identical_profiles_and_seeds_hit_chance_level(self):
        profile = PerformerProfile(onset_jitter=(0.0, 0.01), seed=5)
        result = benchmark(
            2,
            400,
            profiles=[profile, profile],
            config=ExperimentConfig(model_family="histogram", feature_set=("OT",), n_groups=4),
            seed=14,
        )
        diagonal = np.diag(result.report.normalized_confusion())
        assert diagonal.mean() == pytest.approx(0.5)

    def test_benchmark_is_deterministic(self):
        a = benchmark(3, 400, seed=15)
        b = benchmark(3, 400, seed=15)
        assert a.report.to_json() == b.report.to_json()

    def test_shrinking_separation_never_helps(self):
        precisions = []
        for separation in (1.0, 0.75, 0.5, 0.25, 0.1):
            profiles = default_profiles(4, base_seed=16, separation=separation)
            result = benchmark(4, 1200, profiles=profiles, seed=16)
            precisions.append(result.report.scores.macro_precision)
        for earlier, later in zip(precisions, precisions[1:]):
            assert later <= earlier + 0.05

    def test_separability_stats_present(self):
        result = benchmark(3, 500, seed=17)
        assert "pearson_otd_nd" in result.separability
        assert set(result.separability["per_performer"]) == set(result.report.performer_ids)
