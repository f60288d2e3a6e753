from django.core.exceptions import ValidationError
from django.core.validators import MinValueValidator
from django.db import models
import uuid


class AgentRecord(models.Model):
    """
    Model representing one agent session seen by the fusion server
    """
    STATES = [
        ('unaligned', 'Unaligned'),
        ('aligning', 'Aligning'),
        ('aligned', 'Aligned'),
    ]
    PAYLOADS = [
        ('depth', 'Depth image'),
        ('points', 'Point cloud'),
    ]

    record_id = models.UUIDField(
        primary_key=True,
        default=uuid.uuid4,
        editable=False
    )
    agent_id = models.PositiveIntegerField(unique=True)
    payload = models.CharField(max_length=10, choices=PAYLOADS, default='depth')
    metric = models.BooleanField(default=False)
    is_origin = models.BooleanField(default=False)
    width = models.PositiveIntegerField()
    height = models.PositiveIntegerField()
    fx = models.FloatField(validators=[MinValueValidator(0)])
    fy = models.FloatField(validators=[MinValueValidator(0)])
    cx = models.FloatField()
    cy = models.FloatField()
    semantic_dim = models.PositiveIntegerField(default=0)
    state = models.CharField(max_length=10, choices=STATES, default='unaligned')
    transform = models.JSONField(
        null=True,
        blank=True,
        help_text="Local-to-global Sim3 as [s, qw, qx, qy, qz, tx, ty, tz]"
    )
    frames_received = models.PositiveIntegerField(default=0)
    cache_dropped = models.PositiveIntegerField(default=0)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['agent_id']

    def __str__(self):
        return f"Agent {self.agent_id} ({self.state})"

    def clean(self):
        if (self.state == 'aligned') != (self.transform is not None):
            raise ValidationError("Only an aligned agent carries a transform, and it must carry one")
        if self.transform is not None and len(self.transform) != 8:
            raise ValidationError("A transform has 8 values")


class AlignmentRecord(models.Model):
    """
    One alignment report: the candidate it started from, the residuals of
    both registration stages and the verdict of the gates
    """
    record_id = models.UUIDField(
        primary_key=True,
        default=uuid.uuid4,
        editable=False
    )
    agent = models.ForeignKey(
        AgentRecord,
        on_delete=models.CASCADE,
        related_name='alignments'
    )
    anchor_id = models.PositiveIntegerField()
    frame_i = models.PositiveBigIntegerField(null=True, blank=True, help_text="Anchor frame seq")
    frame_j = models.PositiveBigIntegerField(null=True, blank=True, help_text="Agent frame seq")
    stage1_translation = models.FloatField(null=True, blank=True)
    stage1_rotation = models.FloatField(null=True, blank=True)
    stage2_translation = models.FloatField(null=True, blank=True)
    stage2_rotation = models.FloatField(null=True, blank=True)
    gate_translation_m = models.FloatField(default=0.1)
    gate_rotation_deg = models.FloatField(default=10.0)
    accepted = models.BooleanField(default=False)
    reason = models.CharField(max_length=40, blank=True)
    transform = models.JSONField(null=True, blank=True)
    created_at = models.DateTimeField()

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        verdict = 'accepted' if self.accepted else f'rejected ({self.reason})'
        return f"Alignment of agent {self.agent.agent_id} to {self.anchor_id}: {verdict}"

    @property
    def worst_translation(self):
        values = [v for v in (self.stage1_translation, self.stage2_translation) if v is not None]
        return max(values) if values else None

    @property
    def worst_rotation(self):
        values = [v for v in (self.stage1_rotation, self.stage2_rotation) if v is not None]
        return max(values) if values else None

    def clean(self):
        if not self.accepted:
            if not self.reason:
                raise ValidationError("A rejected alignment needs a reason")
            return
        if self.transform is None:
            raise ValidationError("An accepted alignment needs its transform")
        t, r = self.worst_translation, self.worst_rotation
        if t is None or r is None or t > self.gate_translation_m or r > self.gate_rotation_deg:
            raise ValidationError("An accepted alignment must lie within both gates")


class EvaluationRecord(models.Model):
    """
    Per-agent held-out metrics of one evaluation run
    """
    MODES = [
        ('fusion', 'Fusion'),
        ('oracle', 'Oracle'),
        ('individuals', 'Individuals'),
        ('snapshot', 'Snapshot'),
    ]

    record_id = models.UUIDField(
        primary_key=True,
        default=uuid.uuid4,
        editable=False
    )
    run = models.UUIDField(db_index=True, help_text="Shared by all rows of one evaluation")
    mode = models.CharField(max_length=12, choices=MODES, default='snapshot')
    agent_id = models.PositiveIntegerField()
    views = models.PositiveIntegerField(default=0)
    psnr = models.FloatField(null=True, blank=True)
    depth_l1 = models.FloatField(null=True, blank=True)
    translation_err = models.FloatField(null=True, blank=True)
    rotation_err = models.FloatField(null=True, blank=True)
    scale_err = models.FloatField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at', 'agent_id']
        unique_together = ['run', 'agent_id']

    def __str__(self):
        return f"Evaluation {self.run} agent {self.agent_id}: {self.psnr} dB"
