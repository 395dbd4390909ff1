import numpy as np
import pytest

from src.dtw_core import WarpingPath
from src.errors import InputError, SchemaError
from src.fiducial import Template, annotate_stream, dedupe_events, load_template, map_fiducials, resolve_index, save_template
from src.schemas import FiducialClass, FiducialEvent
from src.segmenter import Segment, align_segment
from src.signal_io import SignalBatch, derive_views
from src.template_manager import resample

SYS, MS, ONSET = FiducialClass.SYS, FiducialClass.MS, FiducialClass.ONSET


def segment_over(samples, template, t_s, t_e, segment_id=0):
    view = derive_views(SignalBatch(samples, template.fs)).dtw_view
    path = align_segment(view, template, t_s, t_e)
    return Segment(t_s, t_e, template.id, path, 1.0, segment_id)


def tiled(template, cycles):
    body = np.concatenate([template.samples[:-1]] * cycles + [template.samples[-1:]])
    step = template.m - 1
    segments = [segment_over(body, template, k * step, (k + 1) * step, k) for k in range(cycles)]
    return body, segments


def by_class(events, cls):
    return [e.stream_idx for e in events if e.fiducial_class == cls]


class TestTemplate:
    """Tests for template construction"""

    def test_from_cycle(self, prime_template):
        """Test that annotations are stored by class"""
        assert prime_template.ann[ONSET] == 0
        assert 0 < prime_template.ann[MS] < prime_template.ann[SYS] < prime_template.m
        assert prime_template.view.size == prime_template.m - 1
        assert abs(prime_template.view.mean()) < 1e-12

    def test_missing_annotation(self):
        """Test that Sys, MS and Onset are all required"""
        with pytest.raises(InputError):
            Template("t", np.arange(10.0), 100.0, {ONSET: 0, MS: 3})

    def test_annotation_out_of_range(self):
        """Test that annotations must index into the template"""
        with pytest.raises(InputError):
            Template.from_cycle(np.arange(10.0), 100.0, sys_idx=10, ms_idx=3)

    def test_too_short(self):
        """Test that a template needs at least three samples"""
        with pytest.raises(InputError):
            Template.from_cycle(np.arange(2.0), 100.0, sys_idx=1, ms_idx=0)

    def test_string_classes_accepted(self):
        """Test that annotation keys may be class values"""
        template = Template("t", np.arange(10.0), 100.0, {"Onset": 0, "MS": 2, "Sys": 5})
        assert template.ann[SYS] == 5

    def test_save_and_load(self, temp_dir, prime_template):
        """Test that a template reloads with samples and annotations"""
        path = save_template(prime_template, temp_dir / "prime.csv")
        assert (temp_dir / "prime.ann.csv").exists()
        loaded = load_template(path)
        np.testing.assert_array_equal(loaded.samples, prime_template.samples)
        assert loaded.ann == prime_template.ann
        assert loaded.fs == prime_template.fs

    def test_load_without_sidecar(self, temp_dir):
        """Test that the annotation sidecar is required"""
        (temp_dir / "t.csv").write_text("fs=100\n1\n2\n3\n")
        with pytest.raises(InputError):
            load_template(temp_dir / "t.csv")

    def test_sidecar_missing_column(self, temp_dir):
        """Test that a sidecar without an index column is a schema error"""
        (temp_dir / "t.csv").write_text("fs=100\n1\n2\n3\n")
        (temp_dir / "t.ann.csv").write_text("class,position\nSys,1\n")
        with pytest.raises(SchemaError) as exc_info:
            load_template(temp_dir / "t.csv")
        assert exc_info.value.column == "index"


class TestResolveIndex:
    """Tests for many-to-one warp resolution"""

    def test_minimum_cost_then_earliest(self):
        """Test that the cheapest pairing wins and ties go to the earliest"""
        path = WarpingPath(
            pairs=np.array([[4, 1], [5, 2], [6, 2], [7, 2], [8, 3]]),
            cost=0.0,
            local_costs=np.array([0.0, 0.3, 0.1, 0.1, 0.0]),
        )
        assert resolve_index(path, 2) == 6

    def test_absent_index(self):
        """Test that an index missing from the path resolves to None"""
        path = WarpingPath(np.array([[0, 0], [1, 1]]), 0.0, np.zeros(2))
        assert resolve_index(path, 5) is None


class TestMapFiducials:
    """Tests for per-segment fiducial mapping"""

    def test_self_annotation(self, prime_template):
        """Test that mapping a template onto itself reproduces its annotations"""
        segment = segment_over(prime_template.samples, prime_template, 0, prime_template.m - 1)
        mapping = map_fiducials(segment, prime_template)

        assert mapping.failures == []
        assert by_class(mapping.events, SYS) == [prime_template.ann[SYS]]
        assert by_class(mapping.events, MS) == [prime_template.ann[MS]]
        assert by_class(mapping.events, ONSET) == [0, prime_template.m - 1]

    @pytest.mark.parametrize("delay", [1, 17, 60])
    def test_delay_shifts_fiducials(self, prime_template, delay):
        """Test that delaying the cycle shifts every fiducial by the delay"""
        samples = np.concatenate([np.full(delay, prime_template.samples[0]), prime_template.samples])
        segment = segment_over(samples, prime_template, delay, delay + prime_template.m - 1)
        mapping = map_fiducials(segment, prime_template)

        assert by_class(mapping.events, SYS) == [prime_template.ann[SYS] + delay]
        assert by_class(mapping.events, MS) == [prime_template.ann[MS] + delay]

    def test_resampled_cycle(self, prime_template):
        """Test that a cycle stretched to twice the length maps Sys near twice its index"""
        m = prime_template.m
        # amplitude doubled so per-sample slopes match the template's
        stretched = 2.0 * resample(prime_template.samples, 2 * m - 1)
        segment = segment_over(stretched, prime_template, 0, 2 * m - 2)
        mapping = map_fiducials(segment, prime_template)

        assert abs(by_class(mapping.events, SYS)[0] - 2 * prime_template.ann[SYS]) <= 2
        assert abs(by_class(mapping.events, MS)[0] - 2 * prime_template.ann[MS]) <= 2

    def test_time_stamps(self, prime_template):
        """Test that event times follow t0 + index / fs"""
        segment = segment_over(prime_template.samples, prime_template, 0, prime_template.m - 1)
        mapping = map_fiducials(segment, prime_template, t0=10.0)
        for event in mapping.events:
            assert event.time_s == pytest.approx(10.0 + event.stream_idx / prime_template.fs)
            assert event.segment_id == 0

    def test_path_without_annotated_index(self, prime_template):
        """Test that an unmappable class is reported while the others are emitted"""
        segment = segment_over(prime_template.samples, prime_template, 0, prime_template.m - 1)
        keep = segment.path.pairs[:, 1] != prime_template.ann[MS]
        broken = WarpingPath(segment.path.pairs[keep], segment.path.cost, segment.path.local_costs[keep])
        mapping = map_fiducials(segment, prime_template, path=broken)

        assert len(mapping.failures) == 1
        assert mapping.failures[0].fiducial_class == "MS"
        assert by_class(mapping.events, SYS) == [prime_template.ann[SYS]]


class TestAnnotateStream:
    """Tests for stream-level annotation"""

    def test_shared_boundaries(self, prime_template):
        """Test that ten tiled cycles give 10 Sys, 10 MS and 11 Onset events"""
        _, segments = tiled(prime_template, 10)
        mapping = annotate_stream(segments, {prime_template.id: prime_template})

        assert len(by_class(mapping.events, SYS)) == 10
        assert len(by_class(mapping.events, MS)) == 10
        assert len(by_class(mapping.events, ONSET)) == 11
        assert mapping.failures == []

    def test_ordering_within_cycles(self, prime_template):
        """Test onset < MS < Sys in every cycle and sorted output"""
        _, segments = tiled(prime_template, 6)
        events = annotate_stream(segments, {prime_template.id: prime_template}).events
        onsets, ms, sys = by_class(events, ONSET), by_class(events, MS), by_class(events, SYS)
        for k in range(6):
            assert onsets[k] < ms[k] < sys[k] < onsets[k + 1]
        assert [e.stream_idx for e in events] == sorted(e.stream_idx for e in events)

    def test_empty(self, prime_template):
        """Test that no segments give no events"""
        mapping = annotate_stream([], {prime_template.id: prime_template})
        assert mapping.events == []

    def test_failures_are_warnings(self, prime_template):
        """Test that one unmappable MS leaves the rest of the stream annotated"""
        _, segments = tiled(prime_template, 10)
        paths = [s.path for s in segments]
        keep = paths[3].pairs[:, 1] != prime_template.ann[MS]
        paths[3] = WarpingPath(paths[3].pairs[keep], paths[3].cost, paths[3].local_costs[keep])
        mapping = annotate_stream(segments, {prime_template.id: prime_template}, paths=paths)

        assert len(by_class(mapping.events, SYS)) == 10
        assert len(by_class(mapping.events, MS)) == 9
        assert len(mapping.failures) == 1

    def test_path_count_mismatch(self, prime_template):
        """Test that a wrong number of paths is rejected"""
        _, segments = tiled(prime_template, 3)
        with pytest.raises(ValueError):
            annotate_stream(segments, {prime_template.id: prime_template}, paths=[segments[0].path])


class TestDedupeEvents:
    """Tests for event deduplication"""

    def test_keeps_one_per_class_and_index(self):
        """Test that duplicates collapse and the result is time-sorted"""
        events = [
            FiducialEvent(fiducial_class=SYS, stream_idx=50, time_s=0.5),
            FiducialEvent(fiducial_class=ONSET, stream_idx=10, time_s=0.1, segment_id=1),
            FiducialEvent(fiducial_class=ONSET, stream_idx=10, time_s=0.1, segment_id=0),
            FiducialEvent(fiducial_class=MS, stream_idx=50, time_s=0.5),
        ]
        unique = dedupe_events(events)
        assert [(e.fiducial_class, e.stream_idx) for e in unique] == [(ONSET, 10), (MS, 50), (SYS, 50)]
