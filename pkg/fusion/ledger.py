"""
Database rows for sessions, alignment reports and evaluations.
"""

import logging
import math
import uuid

from asgiref.sync import sync_to_async

from .models import AgentRecord, AlignmentRecord, EvaluationRecord

logger = logging.getLogger(__name__)


def _finite(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _transform(transform):
    return [float(v) for v in transform.to_array()] if transform is not None else None


def record_session(session):
    """Create or refresh the AgentRecord of a live AgentSession."""
    intr = session.profile.intrinsics
    record, _ = AgentRecord.objects.update_or_create(
        agent_id=session.agent_id,
        defaults={
            'payload': session.profile.payload,
            'metric': session.profile.metric,
            'is_origin': session.is_origin,
            'width': intr.width,
            'height': intr.height,
            'fx': intr.fx,
            'fy': intr.fy,
            'cx': intr.cx,
            'cy': intr.cy,
            'semantic_dim': session.profile.semantic_dim,
            'state': session.state.value,
            'transform': _transform(session.local_to_global),
            'frames_received': session.frames_received,
            'cache_dropped': session.cache_dropped,
        },
    )
    return record


def record_report(report):
    """Store an AlignmentReport; the agent must already have a record."""
    agent = AgentRecord.objects.get(agent_id=report.agent_id)
    (t1, t2), (r1, r2) = report.stage_translation, report.stage_rotation
    row = AlignmentRecord(
        agent=agent,
        anchor_id=report.anchor_id,
        frame_i=report.frame_i[1] if report.frame_i else None,
        frame_j=report.frame_j[1] if report.frame_j else None,
        stage1_translation=_finite(t1),
        stage1_rotation=_finite(r1),
        stage2_translation=_finite(t2),
        stage2_rotation=_finite(r2),
        gate_translation_m=report.gate_translation_m,
        gate_rotation_deg=report.gate_rotation_deg,
        accepted=report.accepted,
        reason=report.reason,
        transform=_transform(report.transform),
        created_at=report.created,
    )
    row.full_clean()
    row.save()
    return row


def record_evaluation(table, mode='snapshot', run=None):
    """One EvaluationRecord per table row, all sharing one run id."""
    run = run or uuid.uuid4()
    rows = [
        EvaluationRecord(
            run=run, mode=mode, agent_id=r.agent_id, views=r.views, psnr=_finite(r.psnr),
            depth_l1=_finite(r.depth_l1), translation_err=_finite(r.translation_err),
            rotation_err=_finite(r.rotation_err), scale_err=_finite(r.scale_err),
        )
        for r in table.rows
    ]
    EvaluationRecord.objects.bulk_create(rows)
    logger.info('stored evaluation %s (%s) with %d rows', run, mode, len(rows))
    return run


class Ledger:
    """Async callbacks for the server; each write runs in Django's sync thread."""

    async def on_session(self, session):
        try:
            await sync_to_async(record_session)(session)
        except Exception:
            logger.exception('could not store session of agent %s', session.agent_id)

    async def on_report(self, report):
        try:
            await sync_to_async(record_report)(report)
        except Exception:
            logger.exception('could not store alignment report of agent %s', report.agent_id)
