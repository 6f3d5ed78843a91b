"""Field-by-field comparison of an extracted case against its ground truth."""

from datetime import timedelta

from alivecor_forensics.evidence import UNIX_EPOCH, CaseFile, Category
from alivecor_forensics.fixtures import CaseGroundTruth


def _ms(dt):
    return None if dt is None else (dt - UNIX_EPOCH) // timedelta(milliseconds=1)


def _ts_ms(ts):
    return None if ts is None or ts.utc is None else ts.epoch_ms


class Diff:
    def __init__(self):
        self.problems = []
        self.checked = 0

    def eq(self, where, got, want):
        self.checked += 1
        if got != want:
            self.problems.append(f"{where}: got {got!r}, want {want!r}")


def compare(truth: CaseGroundTruth, case: CaseFile, platform: str) -> Diff:
    d = Diff()
    android = platform == "android"
    p = truth.profile
    d.eq("ecg count", len(case.ecgs), len(truth.ecg_events))
    by_uuid = {e.uuid: e for e in case.ecgs}
    angina = "angina" in {c.lower() for c in p.medical_conditions}
    for t in truth.ecg_events:
        e = by_uuid.get(t.uuid)
        if e is None:
            d.problems.append(f"ECG {t.uuid} missing")
            continue
        w = f"ECG {t.uuid}"
        d.eq(f"{w} recorded_at", _ts_ms(e.recorded_at), _ms(t.recorded_at))
        d.eq(f"{w} offset", e.recorded_at.offset_seconds, truth.zone_offset_seconds)
        d.eq(f"{w} duration", e.duration_ms, t.duration_ms)
        d.eq(f"{w} heart_rate", e.heart_rate_bpm, t.heart_rate_bpm)
        d.eq(f"{w} inverted", int(e.inverted), t.inverted)
        d.eq(f"{w} has_audio", e.has_audio, t.has_audio)
        d.eq(f"{w} audio linked", e.audio_item is not None, t.has_audio)
        if e.audio_item is not None:
            d.eq(f"{w} audio category", e.audio_item.category, Category.AUDIO_NOTE)
        d.eq(f"{w} atc files", len(e.atc_items), 2 if android else 1)
        s = e.patient_snapshot
        d.eq(f"{w} snapshot first_name", s.first_name, p.first_name)
        d.eq(f"{w} snapshot last_name", s.last_name, p.last_name)
        d.eq(f"{w} snapshot dob", _ts_ms(s.dob), _ms(p.dob))
        d.eq(f"{w} snapshot height", s.height_cm, p.height_cm)
        d.eq(f"{w} snapshot gender", int(s.gender), p.gender)
        if android:
            d.eq(f"{w} server_id", e.server_id, t.server_id)
            d.eq(f"{w} snapshot weight", s.weight_kg, p.weight_kg)
            d.eq(f"{w} snapshot smoker", int(s.smoker), p.smoker)
        else:
            d.eq(f"{w} comment", e.comment, t.comment)
            d.eq(f"{w} synced_at", _ts_ms(e.synced_at), _ms(t.synced_at))
            d.eq(f"{w} is_resting", e.is_resting, t.is_resting)
            d.eq(f"{w} mc_angina", e.mc_angina, angina)
            d.eq(f"{w} atc_filename", e.atc_filename, f"{t.uuid}.atc")

    referred = [t for t in truth.ecg_events if t.referred]
    d.eq("order count", len(case.orders), len(referred))
    keys = {e.db_key: e.uuid for e in case.ecgs}
    orders = {(o.ecg_ref if android else keys.get(o.ecg_ref)): o for o in case.orders}
    for t in referred:
        o = orders.get(t.uuid)
        if o is None:
            d.problems.append(f"order for {t.uuid} missing")
            continue
        d.eq(f"order {t.uuid} requested", _ts_ms(o.requested_at), _ms(t.referred.requested_at))
        d.eq(f"order {t.uuid} completed", _ts_ms(o.completed_at), _ms(t.referred.completed_at))
        d.eq(f"order {t.uuid} result", o.result, t.referred.result)

    d.eq("bp count", len(case.bps), len(truth.bp_events))
    for i, (b, t) in enumerate(zip(case.bps, truth.bp_events)):
        d.eq(f"bp[{i}] time", _ts_ms(b.recorded_at), _ms(t.recorded_at))
        d.eq(f"bp[{i}] systolic", b.systolic, t.systolic)
        d.eq(f"bp[{i}] diastolic", b.diastolic, t.diastolic)
        d.eq(f"bp[{i}] heart_rate", b.heart_rate_bpm, t.heart_rate_bpm)
        if android:
            d.eq(f"bp[{i}] offset", b.recorded_at.offset_seconds, truth.zone_offset_seconds)
            d.eq(f"bp[{i}] deleted", b.deleted, t.deleted)
            d.eq(f"bp[{i}] source", b.source, t.source)
        else:
            d.eq(f"bp[{i}] notes", b.notes, t.notes)

    d.eq("weight count", len(case.weights), len(truth.weight_events))
    for i, (w, t) in enumerate(zip(case.weights, truth.weight_events)):
        d.eq(f"weight[{i}] time", _ts_ms(w.recorded_at), _ms(t.recorded_at))
        d.eq(f"weight[{i}] kg", w.weight_kg, t.weight_kg)
        d.eq(f"weight[{i}] cm", w.height_cm, t.height_cm)
        d.eq(f"weight[{i}] source", w.source, t.source)
        if android:
            d.eq(f"weight[{i}] offset", w.recorded_at.offset_seconds, truth.zone_offset_seconds)

    prof = case.profile
    d.eq("profile first_name", prof.first_name, p.first_name)
    d.eq("profile last_name", prof.last_name, p.last_name)
    d.eq("profile dob", _ts_ms(prof.dob), _ms(p.dob))
    d.eq("profile email", prof.email, p.email)
    if android:
        d.eq("profile weight", prof.weight_kg, p.weight_kg)
        d.eq("profile country", prof.country, p.country)
        d.eq("profile smoker", int(prof.smoker), p.smoker)
        # height and gender live only on ECG rows
        if truth.ecg_events:
            d.eq("profile height", prof.height_cm, p.height_cm)
            d.eq("profile gender", int(prof.gender), p.gender)
    else:
        d.eq("profile height", prof.height_cm, p.height_cm)
        d.eq("profile gender", int(prof.gender), p.gender)
        d.eq("profile conditions", list(prof.medical_conditions), list(p.medical_conditions))
        d.eq("app_version", case.app_metadata.get("app_version"), truth.app_version)

    first_key = "first_open_time" if android else "firstLaunchDate"
    stamps = {a.key: a for a in case.app_timestamps}
    got = stamps.get(first_key)
    d.eq("app first used", _ts_ms(got.timestamp) if got else None, _ms(truth.app_first_used))
    if android:
        for key, events in (("last_bp_recording", truth.bp_events), ("last_weight_recording", truth.weight_events),
                            ("last_heart_rate_recording", truth.ecg_events)):
            want = _ms(max(e.recorded_at for e in events)) if events else None
            got = stamps.get(key)
            d.eq(key, _ts_ms(got.timestamp) if got else None, want)
    return d
