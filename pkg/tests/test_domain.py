import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from digmn import domain
from digmn.domain import (
    DeliveryMessage,
    EmptySession,
    EngagementLabel,
    EventType,
    InvalidWindow,
    MacroFeatures,
    Session,
    SessionContext,
    UserEvent,
    UserRecord,
    average_active_days,
    average_session_numbers,
    compute_label,
    event_frequency,
    featurize,
)

DAY = domain.SECONDS_PER_DAY


def make_session(user_id, start, event_types, gap=10, client="app", duration=None):
    events = tuple(
        UserEvent(user_id=user_id, event_type=et, timestamp=start + i * gap)
        for i, et in enumerate(event_types)
    )
    if duration is None:
        duration = float(gap * max(len(event_types) - 1, 0))
    ctx = SessionContext(start_time=start, duration=duration, client=client)
    return Session(user_id=user_id, context=ctx, events=events)


def make_record(sessions, label=EngagementLabel(0, 1), delivery=None):
    macro = MacroFeatures(
        connection_count=120.0,
        avg_sessions_per_day_past=1.5,
        avg_active_day_rate_past=0.6,
        account_age_days=400.0,
    )
    return UserRecord(
        user_id=sessions[0].user_id,
        macro=macro,
        sessions=tuple(sessions),
        latest_delivery=delivery,
        label=label,
    )


class TestEventFrequency:
    def test_feed_share_of_hundred(self):
        # 100 events, 10 of them Feed
        types = [EventType.FEED] * 10 + [EventType.SEARCH] * 90
        s = make_session("u", 0, types)
        freq = event_frequency(s)
        assert freq[EventType.FEED - 1] == pytest.approx(0.1)

    def test_single_type_degenerate(self):
        s = make_session("u", 0, [EventType.JOBS] * 7)
        freq = event_frequency(s)
        assert freq[EventType.JOBS - 1] == 1.0
        assert freq.sum() == 1.0

    def test_hand_counted_mixture(self):
        s = make_session(
            "u", 0, [EventType.FEED, EventType.FEED, EventType.JOBS, EventType.SEARCH]
        )
        expected = np.zeros(10)
        expected[0] = 0.5   # Feed
        expected[1] = 0.25  # Search
        expected[3] = 0.25  # Jobs
        np.testing.assert_allclose(event_frequency(s), expected)

    def test_empty_session_raises(self):
        s = Session(
            user_id="u",
            context=SessionContext(start_time=0, duration=0.0, client="app"),
            events=(),
        )
        with pytest.raises(EmptySession):
            event_frequency(s)

    @given(
        st.lists(st.sampled_from(list(EventType)), min_size=1, max_size=60),
    )
    def test_sums_to_one(self, types):
        s = make_session("u", 0, types)
        assert event_frequency(s).sum() == pytest.approx(1.0, abs=1e-12)


class TestAverages:
    def test_half_active(self):
        sessions = [
            make_session("u", d * DAY + 100, [EventType.FEED]) for d in range(7)
        ]
        assert average_active_days(sessions, 14) == pytest.approx(0.5)

    def test_no_sessions(self):
        assert average_active_days([], 14) == 0.0
        assert average_session_numbers([], 14) == 0.0

    def test_one_distinct_day(self):
        day2 = 2 * DAY
        sessions = [
            make_session("u", day2 + h * 3600, [EventType.FEED]) for h in range(3)
        ]
        assert average_active_days(sessions, 14) == pytest.approx(1 / 14)

    def test_session_rate(self):
        sessions = [
            make_session("u", (i % 14) * DAY + i, [EventType.FEED]) for i in range(28)
        ]
        assert average_session_numbers(sessions, 14) == pytest.approx(2.0)

    def test_empty_sessions_excluded(self):
        valid = [make_session("u", i * DAY, [EventType.FEED]) for i in range(2)]
        empty = Session(
            user_id="u",
            context=SessionContext(start_time=3 * DAY, duration=0.0, client="app"),
            events=(),
        )
        assert average_session_numbers(valid + [empty], 14) == pytest.approx(2 / 14)

    def test_zero_window_raises(self):
        with pytest.raises(InvalidWindow):
            average_active_days([], 0)
        with pytest.raises(InvalidWindow):
            average_session_numbers([], 0)

    @given(shift_days=st.integers(min_value=0, max_value=10000))
    def test_translation_invariance(self, shift_days):
        base = [
            make_session("u", d * DAY + 500, [EventType.FEED, EventType.JOBS])
            for d in (0, 0, 3, 9)
        ]
        shifted = [
            make_session(
                "u", s.context.start_time + shift_days * DAY, [EventType.FEED, EventType.JOBS]
            )
            for s in base
        ]
        assert average_active_days(base, 14) == average_active_days(shifted, 14)
        assert average_session_numbers(base, 14) == average_session_numbers(shifted, 14)


class TestComputeLabel:
    def test_day_decrease(self):
        hist = [make_session("u", d * DAY, [EventType.FEED]) for d in range(7)]
        fut = [make_session("u", (14 + d) * DAY, [EventType.FEED]) for d in range(4)]
        # d_h = 7/14 > d_f = 4/14
        assert compute_label(hist, fut, 14).day_level == -1

    def test_session_equal_maps_to_one(self):
        hist = [make_session("u", i * 3600, [EventType.FEED]) for i in range(28)]
        fut = [make_session("u", 14 * DAY + i * 3600, [EventType.FEED]) for i in range(28)]
        assert compute_label(hist, fut, 14).session_level == 1

    def test_identical_windows(self):
        hist = [make_session("u", d * DAY, [EventType.FEED]) for d in (0, 2, 5)]
        fut = [make_session("u", (14 + d) * DAY, [EventType.FEED]) for d in (0, 2, 5)]
        label = compute_label(hist, fut, 14)
        assert label.day_level == 0
        assert label.session_level == 1

    @given(
        h_days=st.lists(st.integers(0, 13), max_size=20),
        f_days=st.lists(st.integers(0, 13), max_size=20),
    )
    def test_trichotomy(self, h_days, f_days):
        hist = [make_session("u", d * DAY, [EventType.FEED]) for d in h_days]
        fut = [make_session("u", (14 + d) * DAY, [EventType.FEED]) for d in f_days]
        label = compute_label(hist, fut, 14)
        assert label.day_level in (-1, 0, 1)
        assert label.session_level in (0, 1)


class TestFeaturize:
    def test_shapes(self):
        sessions = [make_session("u", i * DAY, [EventType.FEED]) for i in range(7)]
        record = make_record(sessions)
        macro_vec, delivery_vec, session_inputs = featurize(record)
        assert macro_vec.shape == (domain.MACRO_DIM,)
        assert delivery_vec.shape == (domain.DELIVERY_DIM,)
        assert len(session_inputs) == 7
        assert all(x.shape == (domain.SESSION_INPUT_DIM,) for x in session_inputs)

    def test_absent_delivery_is_zeros(self):
        record = make_record([make_session("u", 0, [EventType.FEED])], delivery=None)
        _, delivery_vec, _ = featurize(record)
        assert np.all(delivery_vec == 0.0)

    def test_present_delivery_sets_presence_and_onehots(self):
        d = DeliveryMessage(user_id="u", channel="sms", content="jobs", timestamp=50)
        record = make_record([make_session("u", 0, [EventType.FEED])], delivery=d)
        _, vec, _ = featurize(record)
        assert vec[0] == 1.0
        assert vec[1:4].sum() == 1.0 and vec[2] == 1.0   # sms
        assert vec[4:9].sum() == 1.0 and vec[5] == 1.0   # jobs

    def test_context_encoding_reproduced(self):
        # Thursday 1970-01-01, start at noon, 300 s duration, client=app
        start = 12 * 3600
        s = make_session("u", start, [EventType.FEED], duration=300.0)
        record = make_record([s])
        _, _, inputs = featurize(record)
        vec = inputs[0]
        expected_freq = np.zeros(10)
        expected_freq[0] = 1.0
        np.testing.assert_allclose(vec[:10], expected_freq)
        assert vec[10] == pytest.approx(12 / 24)
        assert vec[11] == pytest.approx(3 / 7)  # Thursday, Monday = 0
        assert vec[12] == pytest.approx(np.log1p(300.0) / np.log1p(86400))
        np.testing.assert_allclose(vec[13:16], [0.0, 0.0, 1.0])  # app one-hot

    def test_deterministic(self):
        sessions = [
            make_session("u", i * 3971 + 11, [EventType.FEED, EventType.PYMK])
            for i in range(5)
        ]
        record = make_record(sessions)
        a = featurize(record)
        b = featurize(record)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        for x, y in zip(a[2], b[2]):
            np.testing.assert_array_equal(x, y)


class TestWireFormat:
    def test_roundtrip(self, tmp_path):
        d = DeliveryMessage(user_id="u", channel="email", content="feed", timestamp=7)
        sessions = [
            make_session("u", i * DAY + 3, [EventType.FEED, EventType.FOLLOW])
            for i in range(3)
        ]
        record = make_record(sessions, label=EngagementLabel(-1, 0), delivery=d)
        path = tmp_path / "corpus.jsonl"
        domain.write_corpus([record], path)
        (back,) = domain.read_corpus(path)
        assert back == record

    def test_sessionize_splits_on_gap(self):
        events = [
            UserEvent("u", EventType.FEED, 0),
            UserEvent("u", EventType.FEED, 100),
            UserEvent("u", EventType.JOBS, 100 + domain.DEFAULT_SESSION_GAP_S + 1),
        ]
        sessions = domain.sessionize(events)
        assert [len(s.events) for s in sessions] == [2, 1]
